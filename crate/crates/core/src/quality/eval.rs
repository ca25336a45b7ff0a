//! Records files, repeated random-split evaluation and the feature ablation.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{fr_feature, QualityFeatures, Variant};
use super::metrics::{metrics, Metrics};
use super::regress::{fit_regressor_grouped, Grids, Hyper, Method};
use crate::error::{Error, Result};

/// One row of a records CSV: `ref_path,dis_path,mos[,content_id]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub ref_path: PathBuf,
    pub dis_path: PathBuf,
    pub mos: f64,
    #[serde(default, deserialize_with = "csv::invalid_option")]
    pub content_id: Option<String>,
}

/// Reads a records CSV. Relative paths resolve against the file's directory.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RecordRow>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<RecordRow>().enumerate() {
        let mut row = row.map_err(|e| Error::Parse {
            position: i + 2,
            token: path.display().to_string(),
            message: e.to_string(),
        })?;
        if !row.mos.is_finite() {
            return Err(Error::Data(format!("row {}: non-finite mos", i + 2)));
        }
        for p in [&mut row.ref_path, &mut row.dis_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// A full-reference feature with its subjective score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRecord {
    pub ref_id: String,
    pub dis_id: String,
    pub content_id: Option<String>,
    pub z: Vec<f64>,
    pub mos: f64,
}

impl QualityRecord {
    pub fn from_features(
        ref_id: &str,
        dis_id: &str,
        content_id: Option<String>,
        reference: &[f32],
        distorted: &[f32],
        mos: f64,
    ) -> Result<Self> {
        Ok(QualityRecord {
            ref_id: ref_id.to_string(),
            dis_id: dis_id.to_string(),
            content_id,
            z: fr_feature(reference, distorted)?.into_iter().map(f64::from).collect(),
            mos,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub inner_folds: usize,
    pub methods: Vec<Method>,
    pub grids: Grids,
    /// Split by content id when every record has one.
    pub content_disjoint: bool,
    /// Runs folds one after another instead of in parallel.
    pub deterministic: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            train_fraction: 0.8,
            seed: 0,
            inner_folds: 5,
            methods: Method::ALL.to_vec(),
            grids: Grids::default(),
            content_disjoint: true,
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub hyper: Hyper,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub content_disjoint: bool,
    pub folds: Vec<FoldReport>,
    pub median: Metrics,
    pub mean: Metrics,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn aggregate(folds: &[FoldReport], f: fn(Vec<f64>) -> f64) -> Metrics {
    let col = |g: fn(&Metrics) -> f64| f(folds.iter().map(|r| g(&r.metrics)).collect());
    Metrics {
        pcc: col(|m| m.pcc),
        srocc: col(|m| m.srocc),
        rmse: col(|m| m.rmse),
    }
}

fn mean(v: Vec<f64>) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Train/test indices of one fold. Random mode puts `⌈fraction·n⌉` records
/// in training; content mode does the same over distinct content ids.
pub fn split_indices(records: &[QualityRecord], fraction: f64, seed: u64, by_content: bool) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if by_content {
        let mut ids: Vec<&str> = records.iter().filter_map(|r| r.content_id.as_deref()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.shuffle(&mut rng);
        let k = ((fraction * ids.len() as f64).ceil() as usize).min(ids.len());
        let train_ids = &ids[..k];
        let (train, test): (Vec<usize>, Vec<usize>) = (0..records.len())
            .partition(|&i| train_ids.contains(&records[i].content_id.as_deref().unwrap_or_default()));
        (train, test)
    } else {
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut rng);
        let k = ((fraction * records.len() as f64).ceil() as usize).min(records.len());
        let (train, test) = order.split_at(k);
        (train.to_vec(), test.to_vec())
    }
}

/// Repeated random train/test evaluation with per-fold model selection.
/// Aggregates are the median (and mean) of per-fold metrics.
pub fn cross_validate(records: &[QualityRecord], cfg: &CvConfig) -> Result<EvalReport> {
    if records.len() < 10 {
        return Err(Error::Data(format!("{} records; at least 10 required", records.len())));
    }
    if cfg.folds == 0 || !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::Config("folds must be positive and train_fraction in (0, 1)".into()));
    }
    let by_content = cfg.content_disjoint && records.iter().all(|r| r.content_id.is_some());
    let run_fold = |fold: usize| -> Result<FoldReport> {
        let fold_seed = cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(fold as u64);
        let (train, test) = split_indices(records, cfg.train_fraction, fold_seed, by_content);
        if test.len() < 3 {
            return Err(Error::Data(format!("fold {fold} has only {} test records", test.len())));
        }
        let zs: Vec<Vec<f64>> = train.iter().map(|&i| records[i].z.clone()).collect();
        let ys: Vec<f64> = train.iter().map(|&i| records[i].mos).collect();
        let groups: Option<Vec<&str>> = if by_content {
            train.iter().map(|&i| records[i].content_id.as_deref()).collect()
        } else {
            None
        };
        let model = fit_regressor_grouped(&zs, &ys, groups.as_deref(), &cfg.methods, &cfg.grids, cfg.inner_folds, fold_seed)?;
        let pred: Vec<f64> = test.iter().map(|&i| model.predict(&records[i].z)).collect::<Result<_>>()?;
        let truth: Vec<f64> = test.iter().map(|&i| records[i].mos).collect();
        Ok(FoldReport {
            fold,
            train_size: train.len(),
            test_size: test.len(),
            hyper: model.hyper,
            metrics: metrics(&pred, &truth)?,
        })
    };
    let folds: Vec<FoldReport> = if cfg.deterministic {
        (0..cfg.folds).map(run_fold).collect::<Result<_>>()?
    } else {
        (0..cfg.folds).into_par_iter().map(run_fold).collect::<Result<_>>()?
    };
    Ok(EvalReport {
        records: records.len(),
        content_disjoint: by_content,
        median: aggregate(&folds, median),
        mean: aggregate(&folds, mean),
        folds,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} records, {} splits ({})",
            self.records,
            self.folds.len(),
            if self.content_disjoint { "content-disjoint" } else { "random" }
        )?;
        writeln!(f, "{:>4}  {:>5}/{:<4}  {:<9} {:<24} {:>7} {:>7} {:>8}", "fold", "train", "test", "method", "hyperparameters", "PCC", "SROCC", "RMSE")?;
        for r in &self.folds {
            writeln!(
                f,
                "{:>4}  {:>5}/{:<4}  {:<9} {:<24} {:>7.4} {:>7.4} {:>8.4}",
                r.fold,
                r.train_size,
                r.test_size,
                r.hyper.method().to_string(),
                r.hyper.to_string(),
                r.metrics.pcc,
                r.metrics.srocc,
                r.metrics.rmse
            )?;
        }
        writeln!(f, "median{:>47} {:>7.4} {:>7.4} {:>8.4}", "", self.median.pcc, self.median.srocc, self.median.rmse)?;
        write!(f, "mean  {:>47} {:>7.4} {:>7.4} {:>8.4}", "", self.mean.pcc, self.mean.srocc, self.mean.rmse)
    }
}

/// Reference and distorted features for one rated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub ref_id: String,
    pub dis_id: String,
    pub content_id: Option<String>,
    pub reference: QualityFeatures,
    pub distorted: QualityFeatures,
    pub mos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Evaluates the four scale × pooling variants from one set of cached
/// features. Every variant sees the same splits.
pub fn ablate(pairs: &[FeaturePair], cfg: &CvConfig) -> Result<AblationTable> {
    let rows = Variant::ALL
        .iter()
        .map(|&variant| {
            let records: Vec<QualityRecord> = pairs
                .iter()
                .map(|p| {
                    QualityRecord::from_features(
                        &p.ref_id,
                        &p.dis_id,
                        p.content_id.clone(),
                        &p.reference.select(variant),
                        &p.distorted.select(variant),
                        p.mos,
                    )
                })
                .collect::<Result<_>>()?;
            Ok(AblationRow {
                variant,
                report: cross_validate(&records, cfg)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationTable { rows })
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<13} {:<9} {:>7} {:>7} {:>8}", "Scale", "Pooling", "PCC", "SROCC", "RMSE")?;
        for r in &self.rows {
            let m = &r.report.median;
            writeln!(
                f,
                "{:<13} {:<9} {:>7.4} {:>7.4} {:>8.4}",
                r.variant.scale_label(),
                r.variant.pool_label(),
                m.pcc,
                m.srocc,
                m.rmse
            )?;
        }
        Ok(())
    }
}
