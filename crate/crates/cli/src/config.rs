//! Run configuration with three-level precedence: explicit flags override
//! entries from a key=value `--config` file, which override built-in
//! defaults. Each command persists its fully resolved configuration next to
//! its outputs, so any run can be reproduced from that file alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use uadseg::data::SplitCounts;
use uadseg::pipeline::TrainConfig;
use uadseg::{Architecture, Preset};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub arch: Architecture,
    pub preset: Preset,
    pub percentile: f32,
    pub sweep: usize,
    pub per_sample_sweep: bool,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub val_every: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test_healthy: usize,
    pub n_test_anomalous: usize,
}

/// Flag values as the parser saw them; `None` means "not given".
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub arch: Option<String>,
    pub preset: Option<String>,
    pub percentile: Option<f32>,
    pub sweep: Option<usize>,
    pub per_sample_sweep: bool,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f32>,
    pub val_every: Option<usize>,
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub n_test_healthy: Option<usize>,
    pub n_test_anomalous: Option<usize>,
}

const KNOWN_KEYS: [&str; 19] = [
    "command",
    "seed",
    "out",
    "arch",
    "preset",
    "percentile",
    "sweep",
    "per_sample_sweep",
    "dataset",
    "checkpoint",
    "input",
    "epochs",
    "batch_size",
    "lr",
    "val_every",
    "n_train",
    "n_val",
    "n_test_healthy",
    "n_test_anomalous",
];

struct FileValues(BTreeMap<String, String>);

impl FileValues {
    fn load(path: Option<&Path>) -> Result<FileValues, CliError> {
        let mut map = BTreeMap::new();
        let Some(path) = path else {
            return Ok(FileValues(map));
        };
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::Usage(format!(
                    "{}:{}: unknown config key {key:?}",
                    path.display(),
                    lineno + 1
                )));
            }
            map.insert(key.to_string(), value.trim().to_string());
        }
        Ok(FileValues(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Usage(format!("config key {key}={raw:?} does not parse"))
            }),
        }
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn resolve(config_file: Option<&Path>, flags: &Overrides) -> Result<RunConfig, CliError> {
    let file = FileValues::load(config_file)?;

    let preset_name: String = pick(flags.preset.clone(), file.get("preset")?, "desk".into());
    let preset = match preset_name.as_str() {
        "desk" => Preset::Desk,
        "full" => Preset::Full,
        other => return Err(CliError::Usage(format!("unknown preset {other:?} (desk|full)"))),
    };
    let arch_name: String = pick(flags.arch.clone(), file.get("arch")?, "dc_tae".into());
    let arch = Architecture::from_name(&arch_name)
        .ok_or_else(|| CliError::Usage(format!("unknown architecture {arch_name:?}")))?;

    let schedule = match preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Full => TrainConfig::full(),
    };
    let counts = match preset {
        Preset::Desk => SplitCounts::desk(),
        Preset::Full => SplitCounts::full(),
    };

    let cfg = RunConfig {
        seed: pick(flags.seed, file.get("seed")?, 0),
        out: pick(flags.out.clone(), file.get("out")?, PathBuf::from("uadseg_out")),
        arch,
        preset,
        percentile: pick(flags.percentile, file.get("percentile")?, 1.0),
        sweep: pick(flags.sweep, file.get("sweep")?, 100),
        per_sample_sweep: flags.per_sample_sweep
            || file.get("per_sample_sweep")?.unwrap_or(false),
        dataset: pick(flags.dataset.clone(), file.get("dataset")?, PathBuf::from("data")),
        checkpoint: pick(
            flags.checkpoint.clone(),
            file.get("checkpoint")?,
            PathBuf::from("checkpoint.uadc"),
        ),
        input: pick(flags.input.clone(), file.get("input")?, PathBuf::from("sample")),
        epochs: pick(flags.epochs, file.get("epochs")?, schedule.epochs),
        batch_size: pick(flags.batch_size, file.get("batch_size")?, schedule.batch_size),
        lr: pick(flags.lr, file.get("lr")?, schedule.lr),
        val_every: pick(flags.val_every, file.get("val_every")?, schedule.val_every),
        n_train: pick(flags.n_train, file.get("n_train")?, counts.train),
        n_val: pick(flags.n_val, file.get("n_val")?, counts.val),
        n_test_healthy: pick(flags.n_test_healthy, file.get("n_test_healthy")?, counts.test_healthy),
        n_test_anomalous: pick(
            flags.n_test_anomalous,
            file.get("n_test_anomalous")?,
            counts.test_anomalous,
        ),
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let positive: [(&str, usize); 7] = [
        ("epochs", cfg.epochs),
        ("batch_size", cfg.batch_size),
        ("val_every", cfg.val_every),
        ("n_train", cfg.n_train),
        ("n_val", cfg.n_val),
        ("n_test_healthy", cfg.n_test_healthy),
        ("n_test_anomalous", cfg.n_test_anomalous),
    ];
    for (name, v) in positive {
        if v == 0 {
            return Err(CliError::Usage(format!("{name} must be ≥ 1, got 0")));
        }
    }
    if !(0.0 < cfg.percentile && cfg.percentile < 100.0) {
        return Err(CliError::Usage(format!(
            "percentile must lie strictly between 0 and 100, got {}",
            cfg.percentile
        )));
    }
    if cfg.sweep < 2 {
        return Err(CliError::Usage(format!("sweep must be ≥ 2, got {}", cfg.sweep)));
    }
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(CliError::Usage(format!("lr must be a positive number, got {}", cfg.lr)));
    }
    Ok(())
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            beta1: 0.9,
            beta2: 0.999,
            seed: self.seed,
            val_every: self.val_every,
        }
    }

    fn preset_name(&self) -> &'static str {
        match self.preset {
            Preset::Desk => "desk",
            Preset::Full => "full",
        }
    }

    /// Serialize every resolved field in a fixed order. Feeding the result
    /// back through `--config` with the same command reproduces the run.
    pub fn to_text(&self, command: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command={command}");
        let _ = writeln!(s, "arch={}", self.arch.name());
        let _ = writeln!(s, "preset={}", self.preset_name());
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "out={}", self.out.display());
        let _ = writeln!(s, "dataset={}", self.dataset.display());
        let _ = writeln!(s, "checkpoint={}", self.checkpoint.display());
        let _ = writeln!(s, "input={}", self.input.display());
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "val_every={}", self.val_every);
        let _ = writeln!(s, "percentile={}", self.percentile);
        let _ = writeln!(s, "sweep={}", self.sweep);
        let _ = writeln!(s, "per_sample_sweep={}", self.per_sample_sweep);
        let _ = writeln!(s, "n_train={}", self.n_train);
        let _ = writeln!(s, "n_val={}", self.n_val);
        let _ = writeln!(s, "n_test_healthy={}", self.n_test_healthy);
        let _ = writeln!(s, "n_test_anomalous={}", self.n_test_anomalous);
        s
    }

    pub fn persist(&self, dir: &Path, command: &str) -> Result<(), CliError> {
        fs::write(dir.join("run_config.txt"), self.to_text(command))
            .map_err(|e| CliError::Runtime(format!("writing run_config.txt: {e}")))
    }
}
