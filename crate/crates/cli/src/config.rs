//! Run configuration. Precedence, lowest first: built-in defaults, the
//! `--config` file, `--set key=value` overrides, dedicated flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use szn_core::data::ColumnSpec;
use szn_core::nn::train::TrainConfig;
use szn_core::nn::SznArch;
use szn_core::planner::{MpcConfig, PlannerMode};
use szn_core::sim::corpus::CorpusConfig;
use szn_core::sim::ScenarioConfig;
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Directory of `*.txt` trajectory files, one scene per file.
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// CSV of model-error samples; when set, the planner fits a GP to it.
    pub gp_data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub columns: ColumnSpec,
    /// Scene left out of training and used for evaluation.
    pub held_out: String,
    pub max_windows: usize,
    pub test_windows: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { columns: ColumnSpec::default(), held_out: "univ".into(), max_windows: 2000, test_windows: 600 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchPreset {
    /// Layer widths of the published network.
    Full,
    /// A small network with the same interfaces.
    Tiny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub preset: ArchPreset,
    /// Latent size and hidden width of the tiny preset.
    pub latent: usize,
    pub hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { preset: ArchPreset::Full, latent: 2, hidden: 16 }
    }
}

impl ArchConfig {
    pub fn build(&self) -> SznArch {
        match self.preset {
            ArchPreset::Full => SznArch::default(),
            ArchPreset::Tiny => SznArch::tiny(self.latent, self.hidden),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    /// Episodes per mode; seeds run from `seed` upward.
    pub episodes: usize,
    pub modes: Vec<PlannerMode>,
    /// A converged solve whose exact residual defect exceeds this fails the run.
    pub residual_tolerance: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { episodes: 20, modes: vec![PlannerMode::Coupled, PlannerMode::Decoupled, PlannerMode::Dcbf], residual_tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub paths: Paths,
    pub data: DataConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub planner: MpcConfig,
    pub scenario: ScenarioConfig,
    pub benchmark: BenchmarkConfig,
    pub corpus: CorpusConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            paths: Paths::default(),
            data: DataConfig::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            planner: MpcConfig::default(),
            scenario: ScenarioConfig::default(),
            benchmark: BenchmarkConfig::default(),
            corpus: CorpusConfig::default(),
        }
    }
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn literal(value: &str) -> Value {
    match format!("v = {value}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(value.into())),
        Err(_) => Value::String(value.into()),
    }
}

/// Applies one `a.b.c=value` override to a TOML tree.
pub fn apply_override(root: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key {key:?}")));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry.as_table_mut().ok_or_else(|| CliError::Usage(format!("{key:?}: {p:?} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), literal(value.trim()));
    Ok(())
}

/// Keys present in `given` but absent from the fully populated `known`.
fn unknown_keys(given: &Table, known: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (_, None) => out.push(path),
            (Value::Table(g), Some(Value::Table(n))) => unknown_keys(g, n, &path, out),
            _ => {}
        }
    }
}

impl RunConfig {
    /// Builds the effective configuration from an optional file and overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut tree = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<Table>().map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = Value::Table(tree.clone()).try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
        let mut known = toml::Table::try_from(&cfg).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        // unset optional paths are absent from the serialized form
        if let Some(Value::Table(p)) = known.get_mut("paths") {
            for k in ["dataset", "checkpoint", "gp_data"] {
                p.entry(k).or_insert_with(|| Value::String(String::new()));
            }
        }
        let mut unknown = Vec::new();
        unknown_keys(&tree, &known, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(CliError::Usage(format!("unknown config keys: {}", unknown.join(", "))));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.planner.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.arch.build().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.train.batch_size == 0 {
            return Err(CliError::Usage("train.batch_size must be positive".into()));
        }
        if !(self.train.learning_rate.is_finite() && self.train.learning_rate >= 0.0) {
            return Err(CliError::Usage("train.learning_rate must be finite and non-negative".into()));
        }
        if self.scenario.max_steps == 0 {
            return Err(CliError::Usage("scenario.max_steps must be positive".into()));
        }
        if self.benchmark.modes.is_empty() {
            return Err(CliError::Usage("benchmark.modes is empty".into()));
        }
        Ok(())
    }

    /// Writes the effective configuration, tagged with the subcommand.
    pub fn echo(&self, command: &str) -> Result<(), CliError> {
        let mut t = toml::Table::try_from(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        t.insert("command".into(), Value::String(command.into()));
        let path = self.out_dir.join("config.toml");
        std::fs::write(&path, toml::to_string_pretty(&t).map_err(|e| CliError::Runtime(e.to_string()))?)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::load(None, &["planner.w1=2.5".into(), "planner.mode=\"coupled\"".into(), "data.held_out=eth".into()]).unwrap();
        assert_eq!(cfg.planner.w1, 2.5);
        assert_eq!(cfg.planner.mode, PlannerMode::Coupled);
        assert_eq!(cfg.data.held_out, "eth");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::load(None, &["planner.w9=1".into()]), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::load(None, &["nonsense".into()]), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::load(None, &["paths.datset=x".into()]), Err(CliError::Usage(_))));
        assert!(RunConfig::load(None, &["paths.dataset=x".into()]).is_ok());
    }
}
