//! Command-line front end. Every command reads one TOML settings file;
//! flags override it, and the effective settings go into a run-metadata file
//! next to the command's output.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bank::{Bank, Transform};
use crate::egip::{egip_apply, egtm, EgipOptions, EgipRequest, Mode};
use crate::error::{Error, Result};
use crate::network::DualHeadUNet;
use crate::pixelcore::{load_image, save_png16, save_png8, screen_image, Colorspace, Image, ScreeningReport, ScreeningThresholds};
use crate::quality::{
    ablate, cross_validate, extract_batch, model_checksum, read_records, CvConfig, FeatureCache, FeaturePair,
    QualityFeatures, QualityRecord, RecordRow, Variant,
};
use crate::trainer::{load_model, Dataset, Manifest, ManifestEntry, TrainConfig, Trainer};

pub const CODE_VERSION: &str = concat!("disque ", env!("CARGO_PKG_VERSION"));
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

/// Everything a command can be configured with. Flags map onto these keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Selects the training defaults the other keys override.
    pub preset: Preset,
    /// Single worker everywhere and sequential evaluation folds.
    pub deterministic: bool,
    /// Threads for feature extraction and tiled processing.
    pub workers: usize,
    pub train: TrainConfig,
    pub eval: CvConfig,
    pub screening: ScreeningThresholds,
}

impl Default for Settings {
    fn default() -> Self {
        Settings::for_preset(Preset::Desk)
    }
}

impl Settings {
    pub fn for_preset(preset: Preset) -> Self {
        Settings {
            preset,
            deterministic: false,
            workers: 1,
            train: match preset {
                Preset::Desk => TrainConfig::desk(),
                Preset::Paper => TrainConfig::paper(),
            },
            eval: CvConfig::default(),
            screening: ScreeningThresholds::default(),
        }
    }

    pub fn workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.workers.max(1)
        }
    }

    fn finish(mut self) -> Result<Self> {
        if self.deterministic {
            self.train.deterministic = true;
            self.eval.deterministic = true;
        }
        self.train.validate()?;
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "disque", version, about = "Content/appearance features for quality prediction and example-guided processing")]
pub struct Cli {
    /// TOML settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any settings key, e.g. `--set train.steps=200`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Single-threaded, bit-reproducible execution (settings key `deterministic`).
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Settings key `workers`.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Settings key `preset`.
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Screen a directory of images into a JSON-lines training manifest.
    MakeManifest(MakeManifestArgs),
    /// Apply one transform from the distortion or tone-mapping bank.
    Distort(DistortArgs),
    /// Train the two-encoder autoencoder.
    Train(TrainArgs),
    /// Extract quality features for every image in a records file.
    Extract(ExtractArgs),
    /// Cross-validate a quality regressor on a records file.
    Evaluate(EvalArgs),
    /// Compare the four scale/pooling feature variants.
    Ablate(EvalArgs),
    /// Apply the edit shown by an example pair to an input image.
    Egip(EgipArgs),
    /// Tone map a PQ frame after an (HDR, SDR) example pair.
    Egtm(EgtmArgs),
    /// Repeat a previous run from its run-metadata file.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct MakeManifestArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// SRGB or PQ_BT2100.
    #[arg(long, default_value = "SRGB")]
    pub colorspace: String,
    /// Accept every decodable file.
    #[arg(long)]
    pub no_screening: bool,
    /// Rejection report path; defaults to `<out>.rejected.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Settings key `screening.saturation`.
    #[arg(long)]
    pub min_saturation: Option<f64>,
    /// Settings key `screening.over`.
    #[arg(long)]
    pub max_over: Option<f64>,
    /// Settings key `screening.under`.
    #[arg(long)]
    pub max_under: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DistortArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Transform string such as `GaussianBlur:3:0` or `HABLE:0.5:2`.
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    pub spec: Option<String>,
    /// Draw a transform from the bank with this seed.
    #[arg(long)]
    pub random: Option<u64>,
    /// Colorspace of the input: SRGB or PQ_BT2100.
    #[arg(long, default_value = "SRGB")]
    pub colorspace: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest split to train on.
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Settings key `train.steps`.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Settings key `train.batch_size`.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Settings key `train.lr0`.
    #[arg(long)]
    pub lr0: Option<f64>,
    /// Settings key `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "SRGB")]
    pub colorspace: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    SingleMean,
    SingleMeanStd,
    MultiMean,
    MultiMeanStd,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::SingleMean => Variant::SingleScaleMean,
            VariantArg::SingleMeanStd => Variant::SingleScaleMeanStd,
            VariantArg::MultiMean => Variant::MultiScaleMean,
            VariantArg::MultiMeanStd => Variant::MultiScaleMeanStd,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    /// Report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Feature cache from `extract`; missing entries are computed.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, default_value = "SRGB")]
    pub colorspace: String,
    /// Feature subset for `evaluate`.
    #[arg(long, value_enum, default_value = "multi-mean-std")]
    pub variant: VariantArg,
    /// Settings key `eval.folds`.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Settings key `eval.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EgipArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub example_src: PathBuf,
    #[arg(long)]
    pub example_tgt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// MIXING or REPLACEMENT.
    #[arg(long, default_value = "MIXING")]
    pub mode: String,
}

#[derive(Debug, Args)]
pub struct EgtmArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// PQ-coded 16-bit PNG.
    #[arg(long)]
    pub input: PathBuf,
    /// PQ-coded 16-bit PNG.
    #[arg(long)]
    pub example_hdr: PathBuf,
    /// sRGB rendition of the example.
    #[arg(long)]
    pub example_sdr: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub metadata: PathBuf,
}

/// Written next to every command's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    /// Arguments after the program name, without `--config`.
    pub argv: Vec<String>,
    /// Effective settings as TOML.
    pub settings: String,
    /// SHA-256 of `settings`.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub code_version: String,
}

impl RunMetadata {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn leaf_keys(t: &toml::Table, prefix: &str, out: &mut BTreeSet<String>) {
    for (k, v) in t {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(inner) => leaf_keys(inner, &key, out),
            _ => {
                out.insert(key);
            }
        }
    }
}

/// Parses `a.b.c=value` into a nested table. Values are TOML literals;
/// anything that does not parse as one is taken as a string.
fn override_table(assignment: &str) -> Result<toml::Table> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("`{assignment}` is not KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad settings key `{key}`")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut leaf = toml::Table::new();
    let parts: Vec<&str> = key.split('.').collect();
    leaf.insert(parts[parts.len() - 1].to_string(), value);
    for part in parts[..parts.len() - 1].iter().rev() {
        let mut outer = toml::Table::new();
        outer.insert(part.to_string(), toml::Value::Table(leaf));
        leaf = outer;
    }
    Ok(leaf)
}

/// Where each explicitly set key came from, for the startup report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub config_path: Option<PathBuf>,
    pub from_config: BTreeSet<String>,
    pub from_cli: BTreeSet<String>,
}

/// Layers defaults (per preset), the config table and CLI overrides.
pub fn resolve_settings(file: Option<&toml::Table>, overrides: &[String]) -> Result<(Settings, Provenance)> {
    let mut cli = toml::Table::new();
    for o in overrides {
        merge(&mut cli, &override_table(o)?);
    }
    let mut prov = Provenance::default();
    if let Some(f) = file {
        leaf_keys(f, "", &mut prov.from_config);
    }
    leaf_keys(&cli, "", &mut prov.from_cli);

    let mut layered = toml::Table::new();
    if let Some(f) = file {
        merge(&mut layered, f);
    }
    merge(&mut layered, &cli);
    let preset: Preset = match layered.get("preset") {
        Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(format!("preset: {e}")))?,
        None => Preset::default(),
    };
    let mut base = toml::Table::try_from(Settings::for_preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut base, &layered);
    let settings: Settings = toml::Value::Table(base)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    Ok((settings.finish()?, prov))
}

fn precedence_report(prov: &Provenance, settings: &Settings) -> String {
    let source = match &prov.config_path {
        Some(p) => format!("config ({})", p.display()),
        None => "config (none)".into(),
    };
    let mut out = format!(
        "settings precedence: cli > {source} > defaults (preset {:?})",
        settings.preset
    );
    for k in &prov.from_cli {
        out.push_str(&format!("\n  {k} [cli]"));
    }
    for k in prov.from_config.difference(&prov.from_cli) {
        out.push_str(&format!("\n  {k} [config]"));
    }
    out
}

/// Flags that stand in for settings keys, as `--set` assignments.
fn flag_overrides(cli: &Cli) -> Vec<String> {
    let mut v = Vec::new();
    if cli.deterministic {
        v.push("deterministic=true".into());
    }
    if let Some(w) = cli.workers {
        v.push(format!("workers={w}"));
    }
    if let Some(p) = cli.preset {
        v.push(format!("preset=\"{}\"", if p == Preset::Desk { "desk" } else { "paper" }));
    }
    let mut put = |key: &str, val: Option<String>| {
        if let Some(val) = val {
            v.push(format!("{key}={val}"));
        }
    };
    match &cli.command {
        Command::MakeManifest(a) => {
            put("screening.saturation", a.min_saturation.map(|x| format!("{x:?}")));
            put("screening.over", a.max_over.map(|x| format!("{x:?}")));
            put("screening.under", a.max_under.map(|x| format!("{x:?}")));
        }
        Command::Train(a) => {
            put("train.steps", a.steps.map(|x| x.to_string()));
            put("train.batch_size", a.batch_size.map(|x| x.to_string()));
            put("train.lr0", a.lr0.map(|x| format!("{x:?}")));
            put("train.seed", a.seed.map(|x| x.to_string()));
        }
        Command::Evaluate(a) | Command::Ablate(a) => {
            put("eval.folds", a.folds.map(|x| x.to_string()));
            put("eval.seed", a.seed.map(|x| x.to_string()));
        }
        _ => {}
    }
    v.extend(cli.set.iter().cloned());
    v
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::MakeManifest(_) => "make-manifest",
        Command::Distort(_) => "distort",
        Command::Train(_) => "train",
        Command::Extract(_) => "extract",
        Command::Evaluate(_) => "evaluate",
        Command::Ablate(_) => "ablate",
        Command::Egip(_) => "egip",
        Command::Egtm(_) => "egtm",
        Command::Rerun(_) => "rerun",
    }
}

fn read_config(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Drops `--config <path>` / `--config=<path>` from an argument list.
fn strip_config(argv: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
            continue;
        }
        if a == "--config" {
            skip = true;
        } else if !a.starts_with("--config=") {
            out.push(a.clone());
        }
    }
    out
}

/// Parses arguments (including the program name) without exiting.
pub fn parse<I, T>(args: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(args)
}

/// Parses and runs. Usage errors become [`Error::Config`].
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = parse(argv.clone()).map_err(|e| Error::Config(first_line(&e.to_string())))?;
    let strings: Vec<String> = argv.iter().skip(1).map(|s| s.to_string_lossy().into_owned()).collect();
    execute(cli, strings, None)
}

pub fn first_line(s: &str) -> String {
    s.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .trim_start_matches("error: ")
        .to_string()
}

/// Runs a parsed command. `argv` excludes the program name; `replay`
/// replaces the config file with stored settings.
pub fn execute(cli: Cli, argv: Vec<String>, replay: Option<toml::Table>) -> Result<()> {
    if let Command::Rerun(a) = &cli.command {
        let meta = RunMetadata::load(&a.metadata)?;
        let table: toml::Table =
            toml::from_str(&meta.settings).map_err(|e| Error::Config(format!("stored settings: {e}")))?;
        let mut full = vec!["disque".to_string()];
        full.extend(meta.argv.iter().cloned());
        let inner = parse(&full).map_err(|e| Error::Config(first_line(&e.to_string())))?;
        if matches!(inner.command, Command::Rerun(_)) {
            return Err(Error::Config("a rerun cannot replay another rerun".into()));
        }
        return execute(inner, meta.argv, Some(table));
    }
    let (file, config_path) = match (&replay, &cli.config) {
        (Some(t), _) => (Some(t.clone()), None),
        (None, Some(p)) => (Some(read_config(p)?), Some(p.clone())),
        (None, None) => (None, None),
    };
    let (settings, mut prov) = resolve_settings(file.as_ref(), &flag_overrides(&cli))?;
    prov.config_path = config_path;
    eprintln!("{}", precedence_report(&prov, &settings));

    let settings_toml = settings.to_toml()?;
    let meta = RunMetadata {
        command: command_name(&cli.command).into(),
        argv: strip_config(&argv),
        config_hash: sha256_hex(settings_toml.as_bytes()),
        settings: settings_toml,
        seed: None,
        code_version: CODE_VERSION.into(),
    };
    match &cli.command {
        Command::MakeManifest(a) => make_manifest(a, &settings, meta),
        Command::Distort(a) => distort(a, meta),
        Command::Train(a) => train(a, &settings, meta),
        Command::Extract(a) => extract(a, &settings, meta),
        Command::Evaluate(a) => evaluate(a, &settings, meta),
        Command::Ablate(a) => run_ablation(a, &settings, meta),
        Command::Egip(a) => run_egip(a, &settings, meta),
        Command::Egtm(a) => run_egtm(a, &settings, meta),
        Command::Rerun(_) => unreachable!("handled above"),
    }
}

fn metadata_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

fn write_metadata(path: &Path, meta: &RunMetadata) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(meta)? + "\n").map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn save_image(path: &Path, img: &Image) -> Result<()> {
    match img.colorspace() {
        Colorspace::PqBt2100 => save_png16(path, img),
        _ => save_png8(path, img),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub path: PathBuf,
    pub reason: String,
    pub screening: Option<ScreeningReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Screens every image in `dir`. Screening thresholds are defined on sRGB
/// code values, so PQ frames are only checked for decodability.
pub fn build_manifest(
    dir: &Path,
    colorspace: Colorspace,
    screening: Option<&ScreeningThresholds>,
) -> Result<(Vec<ManifestEntry>, RejectionReport)> {
    let files = image_files(dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("{} holds no png or jpeg files", dir.display())));
    }
    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    for path in files {
        let abs = fs::canonicalize(&path).map_err(|e| Error::io(&path, e))?;
        let img = match load_image(&abs, colorspace) {
            Ok(img) => img,
            Err(e) => {
                rejected.push(Rejection {
                    path: abs,
                    reason: format!("undecodable: {e}"),
                    screening: None,
                });
                continue;
            }
        };
        if let (Some(t), Colorspace::Srgb) = (screening, colorspace) {
            let report = screen_image(&img, t)?;
            if !report.accepted {
                let reason = if report.is_grayscale { "grayscale" } else { "exposure" };
                rejected.push(Rejection {
                    path: abs,
                    reason: reason.into(),
                    screening: Some(report),
                });
                continue;
            }
        }
        entries.push(ManifestEntry {
            path: abs,
            colorspace,
            split: "train".into(),
        });
    }
    let report = RejectionReport {
        accepted: entries.len(),
        rejected,
    };
    Ok((entries, report))
}

fn make_manifest(a: &MakeManifestArgs, s: &Settings, meta: RunMetadata) -> Result<()> {
    let cs = Colorspace::parse(&a.colorspace)?;
    let screening = (!a.no_screening).then_some(&s.screening);
    let (entries, report) = build_manifest(&a.dir, cs, screening)?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".rejected.json");
        PathBuf::from(p)
    });
    write_json(&report_path, &report)?;
    Manifest::new(entries)?.save(&a.out)?;
    write_metadata(&metadata_path(&a.out), &meta)?;
    println!("accepted {} rejected {}", report.accepted, report.rejected.len());
    Ok(())
}

fn distort(a: &DistortArgs, mut meta: RunMetadata) -> Result<()> {
    let cs = Colorspace::parse(&a.colorspace)?;
    let img = load_image(&a.input, cs)?;
    let transform: Transform = match (&a.spec, a.random) {
        (Some(s), _) => s.parse()?,
        (None, Some(seed)) => {
            meta.seed = Some(seed);
            let bank = if cs == Colorspace::PqBt2100 { Bank::hdr() } else { Bank::sdr() };
            bank.sample(seed)
        }
        (None, None) => return Err(Error::Config("give --spec or --random".into())),
    };
    let out = transform.apply(&img)?;
    save_image(&a.output, &out)?;
    write_metadata(&metadata_path(&a.output), &meta)?;
    println!("{transform}");
    Ok(())
}

fn train(a: &TrainArgs, s: &Settings, mut meta: RunMetadata) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let data = Dataset::from_manifest(&manifest, Some(&a.split))?;
    let mut trainer = match &a.resume {
        Some(ckpt) => {
            let mut t = Trainer::resume(ckpt)?;
            t.config_mut().steps = s.train.steps;
            t
        }
        None => Trainer::new(s.train.clone())?,
    };
    meta.seed = Some(trainer.config().seed);
    write_metadata(&a.out.join("run.json"), &meta)?;
    let summary = trainer.run(&data, &a.out)?;
    if let Some(last) = summary.last {
        println!(
            "step {} total {:.5} self {:.5} cross {:.5}",
            summary.step, last.total, last.l_self, last.l_cross
        );
    }
    if let Some(ckpt) = summary.checkpoints.last() {
        println!("checkpoint {}", ckpt.display());
    }
    Ok(())
}

fn image_id(path: &Path) -> String {
    path.display().to_string()
}

/// Features for every distinct image in `rows`, reusing `cache` entries
/// computed by the same model.
fn features_for(
    model: &DualHeadUNet,
    rows: &[RecordRow],
    colorspace: Colorspace,
    cache: &mut FeatureCache,
    workers: usize,
) -> Result<std::collections::BTreeMap<String, QualityFeatures>> {
    let checksum = model_checksum(model)?;
    let ids: BTreeSet<String> = rows
        .iter()
        .flat_map(|r| [image_id(&r.ref_path), image_id(&r.dis_path)])
        .collect();
    let mut out = std::collections::BTreeMap::new();
    let mut missing = Vec::new();
    for id in ids {
        match cache.get(&id, &checksum) {
            Some(f) => {
                out.insert(id, f);
            }
            None => missing.push(id),
        }
    }
    let images = missing
        .iter()
        .map(|id| load_image(id, colorspace))
        .collect::<Result<Vec<_>>>()?;
    for (id, f) in missing.into_iter().zip(extract_batch(model, &images, workers)?) {
        cache.insert(&id, &checksum, &f);
        out.insert(id, f);
    }
    Ok(out)
}

fn extract(a: &ExtractArgs, s: &Settings, meta: RunMetadata) -> Result<()> {
    let model = load_model(&a.model)?;
    let rows = read_records(&a.records)?;
    let mut cache = if a.out.exists() { FeatureCache::load(&a.out)? } else { FeatureCache::default() };
    let feats = features_for(&model, &rows, Colorspace::parse(&a.colorspace)?, &mut cache, s.workers())?;
    cache.save(&a.out)?;
    write_metadata(&metadata_path(&a.out), &meta)?;
    println!("{} images, {} cache entries", feats.len(), cache.len());
    Ok(())
}

fn feature_pairs(a: &EvalArgs, s: &Settings) -> Result<Vec<FeaturePair>> {
    let model = load_model(&a.model)?;
    let rows = read_records(&a.records)?;
    let mut cache = match &a.cache {
        Some(p) if p.exists() => FeatureCache::load(p)?,
        _ => FeatureCache::default(),
    };
    let feats = features_for(&model, &rows, Colorspace::parse(&a.colorspace)?, &mut cache, s.workers())?;
    if let Some(p) = &a.cache {
        cache.save(p)?;
    }
    Ok(rows
        .iter()
        .map(|r| {
            let (rid, did) = (image_id(&r.ref_path), image_id(&r.dis_path));
            FeaturePair {
                reference: feats[&rid].clone(),
                distorted: feats[&did].clone(),
                ref_id: rid,
                dis_id: did,
                content_id: r.content_id.clone(),
                mos: r.mos,
            }
        })
        .collect())
}

fn evaluate(a: &EvalArgs, s: &Settings, mut meta: RunMetadata) -> Result<()> {
    let variant = Variant::from(a.variant);
    let records = feature_pairs(a, s)?
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
        .collect::<Result<Vec<_>>>()?;
    let report = cross_validate(&records, &s.eval)?;
    meta.seed = Some(s.eval.seed);
    write_json(&a.out, &report)?;
    write_metadata(&metadata_path(&a.out), &meta)?;
    println!("{report}");
    Ok(())
}

fn run_ablation(a: &EvalArgs, s: &Settings, mut meta: RunMetadata) -> Result<()> {
    let table = ablate(&feature_pairs(a, s)?, &s.eval)?;
    meta.seed = Some(s.eval.seed);
    write_json(&a.out, &table)?;
    write_metadata(&metadata_path(&a.out), &meta)?;
    print!("{table}");
    Ok(())
}

fn run_egip(a: &EgipArgs, s: &Settings, meta: RunMetadata) -> Result<()> {
    let mode: Mode = a.mode.parse()?;
    let model = load_model(&a.model)?;
    let req = EgipRequest {
        example_src: load_image(&a.example_src, Colorspace::Srgb)?,
        example_tgt: load_image(&a.example_tgt, Colorspace::Srgb)?,
        input_src: load_image(&a.input, Colorspace::Srgb)?,
        mode,
    };
    let out = egip_apply(&req, &model, &EgipOptions { workers: s.workers() })?;
    save_png8(&a.output, &out)?;
    write_metadata(&metadata_path(&a.output), &meta)
}

fn run_egtm(a: &EgtmArgs, s: &Settings, meta: RunMetadata) -> Result<()> {
    let model = load_model(&a.model)?;
    let out = egtm(
        &load_image(&a.input, Colorspace::PqBt2100)?,
        &load_image(&a.example_hdr, Colorspace::PqBt2100)?,
        &load_image(&a.example_sdr, Colorspace::Srgb)?,
        &model,
        &EgipOptions { workers: s.workers() },
    )?;
    save_png8(&a.output, &out)?;
    write_metadata(&metadata_path(&a.output), &meta)
}
