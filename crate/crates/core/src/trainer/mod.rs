//! Training: configuration, the step-decay schedule, Adam, the training loop,
//! CSV telemetry and resumable checkpoints.

pub mod checkpoint;
mod data;

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{backprop::GradStore, DType, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{Bank, BankDomain};
use crate::distortion::UnitKind;
use crate::error::{Error, Result};
use crate::network::{images_to_tensor, DualHeadUNet, NetConfig, ParamStore};
use crate::objective::{total_loss, LossBreakdown, LossConfig, Views};
use crate::pixelcore::save_png8;
use checkpoint::SlotKind;

pub use checkpoint::{load_model, Checkpoint};
pub use data::{build_quadruple, Dataset, Manifest, ManifestEntry, Quadruple, SCREEN_RETRIES};

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Quadruples per step (each contributes four patches).
    pub batch_size: usize,
    pub steps: u64,
    pub lr0: f64,
    /// Multiplier applied every 1000 steps.
    pub decay: f64,
    pub lambda_f: f64,
    pub beta: f64,
    pub tau: f64,
    pub eps: f64,
    pub patch_size: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub net: NetConfig,
    /// Restricts the SDR bank; empty means all kinds. Ignored for HDR data.
    pub bank: Vec<UnitKind>,
    /// Threads building quadruples. Forced to 1 in deterministic mode.
    pub workers: usize,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::paper()
    }
}

impl TrainConfig {
    /// Full-scale schedule: 36 quadruples, 400k steps, 128 px patches.
    pub fn paper() -> Self {
        let loss = LossConfig::default();
        TrainConfig {
            batch_size: 36,
            steps: 400_000,
            lr0: 2e-4,
            decay: 0.99,
            lambda_f: loss.lambda_f,
            beta: loss.beta,
            tau: loss.tau,
            eps: loss.eps,
            patch_size: 128,
            seed: 0,
            checkpoint_every: 10_000,
            net: NetConfig::paper(),
            bank: Vec::new(),
            workers: 4,
            deterministic: false,
        }
    }

    /// Toy network, batch 8, 5000 steps on 64 px patches.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 8,
            steps: 5000,
            patch_size: 64,
            checkpoint_every: 1000,
            net: NetConfig::toy(),
            workers: 1,
            ..TrainConfig::paper()
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda_f: self.lambda_f,
            beta: self.beta,
            tau: self.tau,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss().validate()?;
        self.net.validate()?;
        if self.batch_size == 0 || self.steps == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("batch_size, steps and checkpoint_every must be positive".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) || !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("lr0 must be positive and decay in (0, 1]".into()));
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(32) {
            return Err(Error::Config(format!("patch_size {} is not a positive multiple of 32", self.patch_size)));
        }
        if self.patch_size != self.net.patch_size {
            return Err(Error::Config(format!(
                "patch_size {} disagrees with net.patch_size {}",
                self.patch_size, self.net.patch_size
            )));
        }
        Ok(())
    }

    pub fn learning_rate(&self, step: u64) -> f64 {
        learning_rate(self.lr0, self.decay, step)
    }

    pub fn effective_workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.workers.max(1)
        }
    }

    pub fn bank_for(&self, domain: BankDomain) -> Bank {
        match domain {
            BankDomain::Hdr => Bank::hdr(),
            BankDomain::Sdr if self.bank.is_empty() => Bank::sdr(),
            BankDomain::Sdr => Bank::restricted(&self.bank),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// `lr0 · decay^⌊step / 1000⌋`.
pub fn learning_rate(lr0: f64, decay: f64, step: u64) -> f64 {
    lr0 * decay.powi((step / 1000) as i32)
}

/// Mixes `(seed, step, index)` into an independent per-sample seed.
pub fn sample_seed(seed: u64, step: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(step ^ mix(index)))
}

/// Adam with bias correction. Moments live in the model dtype.
#[derive(Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Result<Self> {
        let zeros = |p: &ParamStore| -> Result<Vec<Tensor>> {
            p.iter().map(|(_, v)| Ok(v.as_tensor().zeros_like()?)).collect()
        };
        Ok(Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(params)?,
            v: zeros(params)?,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, index: usize) -> &Tensor {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor {
        &self.v[index]
    }

    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, var)) in params.iter().enumerate() {
            let p = var.as_tensor().detach();
            let g = match grads.get(var.as_tensor()) {
                Some(g) => g.detach(),
                None => p.zeros_like()?,
            };
            self.m[i] = ((&self.m[i] * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            self.v[i] = ((&self.v[i] * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let denom = ((&self.v[i] / c2)?.sqrt()? + self.eps)?;
            let update = ((&self.m[i] / c1)? / denom)?;
            var.set(&(p - (update * lr)?)?)?;
        }
        Ok(())
    }
}

/// Files written by a run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub log_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub last: Option<LossBreakdown>,
    pub step: u64,
}

pub const LOG_FILE: &str = "train_log.csv";

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step-{step:08}.ckpt"))
}

/// One optimizer, one model, one step counter.
#[derive(Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: DualHeadUNet,
    adam: Adam,
    step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        Trainer::with_dtype(config, DType::F32)
    }

    pub fn with_dtype(config: TrainConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let model = DualHeadUNet::with_dtype(config.net.clone(), config.seed, dtype)?;
        let adam = Adam::new(model.params())?;
        Ok(Trainer {
            config,
            model,
            adam,
            step: 0,
        })
    }

    /// Restores model, optimizer moments and step count.
    pub fn resume(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt = checkpoint::read(path.as_ref())?;
        let model = ckpt.model()?;
        let mut adam = Adam::new(model.params())?;
        for (i, name) in model.params().names().enumerate() {
            let (Some(m), Some(v)) = (ckpt.slot(SlotKind::AdamM, name), ckpt.slot(SlotKind::AdamV, name)) else {
                return Err(Error::Checkpoint(format!("missing optimizer moments for `{name}`")));
            };
            if m.shape() != adam.m[i].shape() || v.shape() != adam.v[i].shape() {
                return Err(Error::Checkpoint(format!("optimizer moment shape mismatch for `{name}`")));
            }
            adam.m[i] = m.clone();
            adam.v[i] = v.clone();
        }
        adam.t = ckpt.header.adam_t;
        let mut config = ckpt.header.train.clone();
        config.net = ckpt.header.net.clone();
        config.validate()?;
        Ok(Trainer {
            config,
            model,
            adam,
            step: ckpt.header.step,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Overrides settings that do not change the model, e.g. `steps`.
    pub fn config_mut(&mut self) -> &mut TrainConfig {
        &mut self.config
    }

    pub fn model(&self) -> &DualHeadUNet {
        &self.model
    }

    pub fn into_model(self) -> DualHeadUNet {
        self.model
    }

    pub fn optimizer(&self) -> &Adam {
        &self.adam
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let params = self.model.params();
        let mut slots = Vec::with_capacity(params.len() * 3);
        for (i, (name, var)) in params.iter().enumerate() {
            slots.push((SlotKind::Param, name, var.as_tensor()));
            slots.push((SlotKind::AdamM, name, &self.adam.m[i]));
            slots.push((SlotKind::AdamV, name, &self.adam.v[i]));
        }
        checkpoint::write(
            path.as_ref(),
            &self.config,
            &self.config.net,
            self.step,
            self.adam.t,
            self.model.dtype(),
            &slots,
        )
    }

    /// The quadruples for the current step.
    pub fn batch(&self, data: &Dataset) -> Result<Vec<Quadruple>> {
        let bank = self.config.bank_for(data.domain());
        let (seed, step, patch) = (self.config.seed, self.step, self.config.patch_size);
        let build = |i: usize| build_quadruple(data, &bank, patch, sample_seed(seed, step, i as u64));
        let workers = self.config.effective_workers();
        if workers == 1 {
            return (0..self.config.batch_size).map(build).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| (0..self.config.batch_size).into_par_iter().map(build).collect())
    }

    fn views(&self, batch: &[Quadruple]) -> Result<Views> {
        let dtype = self.model.dtype();
        let stack = |v: usize| images_to_tensor(&batch.iter().map(|q| &q.views[v]).collect::<Vec<_>>(), dtype);
        Views::new(stack(0)?, stack(1)?, stack(2)?, stack(3)?)
    }

    /// Runs one optimization step. A non-finite loss leaves the parameters
    /// untouched and, given `snapshot_dir`, writes the offending inputs there.
    pub fn train_step(&mut self, data: &Dataset, snapshot_dir: Option<&Path>) -> Result<LossBreakdown> {
        let batch = self.batch(data)?;
        self.train_on(&batch, snapshot_dir)
    }

    /// Runs one optimization step on the given quadruples.
    pub fn train_on(&mut self, batch: &[Quadruple], snapshot_dir: Option<&Path>) -> Result<LossBreakdown> {
        let views = self.views(batch)?;
        let (loss, breakdown) = total_loss(&self.model, &views, &self.config.loss())?;
        if !breakdown.is_finite() {
            if let Some(dir) = snapshot_dir {
                self.write_snapshot(dir, batch, &breakdown)?;
            }
            return Err(Error::Numerical(format!(
                "non-finite loss at step {}: {}",
                self.step,
                breakdown.csv_row(self.step, self.lr())
            )));
        }
        let grads = loss.backward()?;
        drop(loss);
        self.adam.step(self.model.params(), &grads, self.lr())?;
        self.step += 1;
        Ok(breakdown)
    }

    pub fn lr(&self) -> f64 {
        self.config.learning_rate(self.step)
    }

    fn write_snapshot(&self, dir: &Path, batch: &[Quadruple], b: &LossBreakdown) -> Result<()> {
        let dir = dir.join(format!("nonfinite-step{:08}", self.step));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let samples: Vec<serde_json::Value> = batch
            .iter()
            .enumerate()
            .map(|(i, q)| {
                serde_json::json!({
                    "index": i,
                    "seed": sample_seed(self.config.seed, self.step, i as u64),
                    "sources": q.sources,
                    "offsets": q.offsets,
                    "transform": q.transform.to_string(),
                })
            })
            .collect();
        let report = serde_json::json!({
            "step": self.step,
            "lr": self.lr(),
            "loss": { "l_self": b.l_self, "l_cross": b.l_cross, "l_c_nce": b.l_c_nce, "l_a_nce": b.l_a_nce, "total": b.total },
            "samples": samples,
        });
        let path = dir.join("snapshot.json");
        fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
        for (i, q) in batch.iter().enumerate() {
            for (v, name) in ["x11", "x12", "x21", "x22"].iter().enumerate() {
                save_png8(dir.join(format!("sample{i:03}_{name}.png")), &q.views[v])?;
            }
        }
        self.save_checkpoint(dir.join("state.ckpt"))
    }

    /// Trains until `config.steps`, appending one CSV row per step to
    /// `out_dir/train_log.csv` and checkpointing every `checkpoint_every`
    /// steps and at the end.
    pub fn run(&mut self, data: &Dataset, out_dir: &Path) -> Result<TrainSummary> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let log_path = out_dir.join(LOG_FILE);
        let fresh = !log_path.exists() || self.step == 0;
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let mut log = BufWriter::new(file);
        let io = |e| Error::io(&log_path, e);
        if fresh {
            writeln!(log, "{}", LossBreakdown::CSV_HEADER).map_err(io)?;
        }
        let mut checkpoints = Vec::new();
        let mut last = None;
        while self.step < self.config.steps {
            let (step, lr) = (self.step, self.lr());
            let b = match self.train_step(data, Some(out_dir)) {
                Ok(b) => b,
                Err(e) => {
                    log.flush().map_err(io)?;
                    return Err(e);
                }
            };
            writeln!(log, "{}", b.csv_row(step, lr)).map_err(io)?;
            if step % 50 == 0 {
                log::info!("step {step}: total {:.5} (self {:.5}, cross {:.5})", b.total, b.l_self, b.l_cross);
            }
            last = Some(b);
            if self.step.is_multiple_of(self.config.checkpoint_every) || self.step == self.config.steps {
                log.flush().map_err(io)?;
                let path = checkpoint_path(out_dir, self.step);
                self.save_checkpoint(&path)?;
                checkpoints.push(path);
            }
        }
        log.flush().map_err(io)?;
        Ok(TrainSummary {
            log_path,
            checkpoints,
            last,
            step: self.step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::colorful_corpus;

    fn tiny_config() -> TrainConfig {
        let mut net = NetConfig::toy();
        net.patch_size = 32;
        TrainConfig {
            batch_size: 2,
            steps: 6,
            patch_size: 32,
            checkpoint_every: 3,
            seed: 11,
            deterministic: true,
            net,
            bank: vec![UnitKind::MeanShift, UnitKind::GaussianBlur, UnitKind::HSVSaturate],
            ..TrainConfig::desk()
        }
    }

    fn tiny_data() -> Dataset {
        Dataset::from_images(colorful_corpus(8, 48, 48, 2).unwrap()).unwrap()
    }

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::paper();
        assert_eq!(cfg.learning_rate(0), 0.0002);
        assert_eq!(cfg.learning_rate(999), 0.0002);
        assert!((cfg.learning_rate(2500) - 0.00019602).abs() < 1e-15);
        for k in 1..20u64 {
            let ratio = cfg.learning_rate(k * 1000) / cfg.learning_rate(k * 1000 - 1);
            assert!((ratio - 0.99).abs() < 1e-12);
            assert_eq!(cfg.learning_rate(k * 1000), cfg.learning_rate(k * 1000 + 999));
        }
    }

    #[test]
    fn presets_validate_and_round_trip_through_toml() {
        for cfg in [TrainConfig::paper(), TrainConfig::desk(), tiny_config()] {
            cfg.validate().unwrap();
            assert_eq!(TrainConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        }
        let partial = TrainConfig::from_toml("batch_size = 12\nseed = 3\n").unwrap();
        assert_eq!(partial.batch_size, 12);
        assert_eq!(partial.lr0, TrainConfig::paper().lr0);
        assert!(TrainConfig::from_toml("batch_sise = 12").is_err());
        assert!(TrainConfig::from_toml("lr0 = -1.0").is_err());
        assert!(TrainConfig::from_toml("patch_size = 64").is_err());
    }

    #[test]
    fn sample_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for step in 0..50 {
            for i in 0..50 {
                assert!(seen.insert(sample_seed(1, step, i)));
            }
        }
        assert_ne!(sample_seed(1, 0, 0), sample_seed(2, 0, 0));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the first update is lr · g/|g| (up to eps).
        let model = DualHeadUNet::new(tiny_config().net, 0).unwrap();
        let params = model.params();
        let (_, var) = params.iter().next().unwrap();
        let before: Vec<f32> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let loss = (var.as_tensor().sum_all().unwrap() * 3.0).unwrap();
        let grads = loss.backward().unwrap();
        let mut adam = Adam::new(params).unwrap();
        adam.step(params, &grads, 0.01).unwrap();
        let after: Vec<f32> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        for (b, a) in before.iter().zip(&after) {
            assert!((b - a - 0.01).abs() < 1e-6);
        }
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let mut straight = Trainer::new(tiny_config()).unwrap();
        let s = straight.run(&data, &dir.path().join("a")).unwrap();
        assert_eq!(s.checkpoints.len(), 2);

        let mut resumed = Trainer::resume(&s.checkpoints[0]).unwrap();
        assert_eq!(resumed.step(), 3);
        let b = dir.path().join("b");
        fs::create_dir_all(&b).unwrap();
        let log_a = fs::read_to_string(&s.log_path).unwrap();
        let head: String = log_a.lines().take(4).map(|l| format!("{l}\n")).collect();
        fs::write(b.join(LOG_FILE), head).unwrap();
        resumed.run(&data, &b).unwrap();
        assert_eq!(fs::read_to_string(b.join(LOG_FILE)).unwrap(), log_a);

        for (i, (name, var)) in straight.model().params().iter().enumerate() {
            let other = resumed.model().params().get(name).unwrap().as_tensor();
            let d = (var.as_tensor() - other).unwrap().abs().unwrap().max_all().unwrap();
            assert_eq!(d.to_scalar::<f32>().unwrap(), 0.0, "{name}");
            let dm = (straight.optimizer().first_moment(i) - resumed.optimizer().first_moment(i)).unwrap();
            assert_eq!(dm.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap(), 0.0);
        }
    }

    #[test]
    fn moments_survive_a_round_trip() {
        let data = tiny_data();
        let mut t = Trainer::new(tiny_config()).unwrap();
        t.train_step(&data, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        t.save_checkpoint(&path).unwrap();
        let r = Trainer::resume(&path).unwrap();
        for i in [0, 7, t.model().params().len() - 1] {
            let a: Vec<f32> = t.optimizer().second_moment(i).flatten_all().unwrap().to_vec1().unwrap();
            let b: Vec<f32> = r.optimizer().second_moment(i).flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(a, b);
            assert!(a.iter().any(|&v| v > 0.0));
        }
        assert_eq!(r.optimizer().steps_taken(), 1);
        assert_eq!(r.config(), t.config());
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let t = Trainer::new(tiny_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        t.save_checkpoint(&path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut flipped = good.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        fs::write(&path, &flipped).unwrap();
        assert!(matches!(Trainer::resume(&path), Err(Error::Checkpoint(_))));

        fs::write(&path, &good[..good.len() - 100]).unwrap();
        assert!(matches!(Trainer::resume(&path), Err(Error::Checkpoint(_))));

        let mut versioned = good.clone();
        versioned[8] = 9;
        fs::write(&path, &versioned).unwrap();
        let err = Trainer::resume(&path).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");

        fs::write(&path, b"hello").unwrap();
        assert!(matches!(load_model(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn non_finite_loss_aborts_with_snapshot() {
        let data = tiny_data();
        let mut t = Trainer::new(tiny_config()).unwrap();
        // ReLU and the output clamp swallow NaN, so poison the deepest
        // content map, which feeds the contrastive term directly.
        let name = t.model().params().names().filter(|n| n.starts_with("content.stage3")).last().unwrap().to_string();
        let var = t.model().params().get(&name).unwrap();
        var.set(&(var.as_tensor().ones_like().unwrap() * f64::NAN).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = t.run(&data, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        let snap = dir.path().join("nonfinite-step00000000");
        assert!(snap.join("snapshot.json").exists());
        assert!(snap.join("sample000_x12.png").exists());
        assert!(snap.join("state.ckpt").exists());
        assert_eq!(t.step(), 0);
    }

    #[test]
    fn training_does_not_touch_sources() {
        let data = tiny_data();
        let before = data.images().to_vec();
        let mut t = Trainer::new(tiny_config()).unwrap();
        t.train_step(&data, None).unwrap();
        assert_eq!(data.images(), before.as_slice());
    }
}
