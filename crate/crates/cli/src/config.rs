//! TOML config files for each command.

use std::fs;
use std::path::{Path, PathBuf};

use gnn_lab::analysis::ScaleVariable;
use gnn_lab::arch::{ArchKind, NetworkSpec};
use gnn_lab::molgraph::GeneratorSettings;
use gnn_lab::train::{default_base_lr, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))
}

/// Parses a config file; unknown keys are rejected with the list of valid
/// keys.
pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    parse_toml(&text).map_err(|e| e.context(path.display()))
}

pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::usage(e.to_string().trim_end().to_owned()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    /// The five-table pretraining mix.
    #[default]
    Pretrain,
    /// A small graph-level mix for probing and finetuning.
    Downstream,
}

/// `datagen` config: every [`GeneratorSettings`] key plus `kind`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatagenConfig {
    pub kind: DataKind,
    pub settings: GeneratorSettings,
}

impl DatagenConfig {
    pub fn keys() -> Vec<&'static str> {
        let mut k = vec!["kind"];
        k.extend(GeneratorSettings::KEYS);
        k
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut table: toml::Table = parse_toml(text)?;
        let valid = Self::keys();
        if let Some(bad) = table.keys().find(|k| !valid.contains(&k.as_str())) {
            return Err(CliError::usage(format!("unknown key `{bad}`; valid keys: {}", valid.join(", "))));
        }
        let kind = match table.remove("kind") {
            None => DataKind::default(),
            Some(v) => {
                v.try_into().map_err(|_| CliError::usage("`kind` must be \"pretrain\" or \"downstream\"".to_owned()))?
            }
        };
        if !table.contains_key("seed") {
            return Err(CliError::usage("missing required key `seed`"));
        }
        let settings: GeneratorSettings = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::usage(e.to_string().trim_end().to_owned()))?;
        settings.validate()?;
        Ok(Self { kind, settings })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(&read_text(path)?).map_err(|e| e.context(path.display()))
    }
}

fn d_epochs() -> usize {
    30
}

/// Training keys a config may override; the learning rate defaults to the
/// architecture's base rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub warmup_epochs: Option<usize>,
    /// Accepted so configs can state it; validation rejects anything but 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    /// Accepted so configs can state it; validation rejects any value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
}

impl Default for TrainOverrides {
    fn default() -> Self {
        Self {
            epochs: d_epochs(),
            batch_size: None,
            base_lr: None,
            warmup_epochs: None,
            weight_decay: None,
            grad_clip: None,
        }
    }
}

impl TrainOverrides {
    pub fn resolve(&self, kind: ArchKind, seed: u64) -> TrainConfig {
        let base = TrainConfig::for_arch(kind, self.epochs, seed);
        TrainConfig {
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            base_lr: self.base_lr.unwrap_or(default_base_lr(kind)),
            warmup_epochs: self.warmup_epochs.unwrap_or(base.warmup_epochs),
            weight_decay: self.weight_decay.unwrap_or(0.0),
            grad_clip: self.grad_clip,
            ..base
        }
    }
}

/// Network keys shared by `pretrain` and `sweep`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkOverrides {
    pub n_heads: Option<usize>,
    pub dropout_p: Option<f64>,
    /// Widths are expressed relative to this one through the µP width
    /// multiplier; absent means multiplier 1 for every width.
    pub base_width: Option<usize>,
}

impl NetworkOverrides {
    pub fn spec(&self, kind: ArchKind, width: usize, depth: usize) -> Result<NetworkSpec, CliError> {
        let mut spec = NetworkSpec::new(kind, width, depth);
        if let Some(h) = self.n_heads {
            spec.n_heads = h;
        }
        if let Some(p) = self.dropout_p {
            spec.dropout_p = p;
        }
        if let Some(b) = self.base_width {
            if b == 0 {
                return Err(CliError::usage("base_width must be positive"));
            }
            spec.width_multiplier = width as f64 / b as f64;
        }
        Ok(spec)
    }
}

fn d_fraction() -> f64 {
    1.0
}

/// `pretrain` config. The seed comes from `--seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub arch: ArchKind,
    pub width: usize,
    pub depth: usize,
    #[serde(default)]
    pub network: NetworkOverrides,
    /// Task ablation, see [`crate::sweep::ablate`].
    #[serde(default = "none")]
    pub ablation: String,
    #[serde(default = "d_fraction")]
    pub molecule_fraction: f64,
    #[serde(default = "d_fraction")]
    pub label_fraction: f64,
    #[serde(default)]
    pub train: TrainOverrides,
}

fn none() -> String {
    "none".into()
}
fn d_fractions() -> Vec<f64> {
    vec![1.0]
}
fn d_ablations() -> Vec<String> {
    vec![none()]
}

/// A sweep: the full grid over every axis, once per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    /// Dataset directory, relative to the manifest.
    pub data: Option<PathBuf>,
    /// Generate the dataset instead of reading one.
    pub generator: Option<GeneratorSettings>,
    pub arch_kinds: Vec<ArchKind>,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    #[serde(default = "d_fractions")]
    pub molecule_fractions: Vec<f64>,
    #[serde(default = "d_fractions")]
    pub label_fractions: Vec<f64>,
    #[serde(default = "d_ablations")]
    pub dataset_ablations: Vec<String>,
    pub seeds: Vec<u64>,
    /// Axis reported in `scaling.csv`; defaults to the one axis with more
    /// than one value, or `params`.
    pub scale_variable: Option<ScaleVariable>,
    #[serde(default)]
    pub network: NetworkOverrides,
    #[serde(default)]
    pub train: TrainOverrides,
    /// Output directory, relative to `--out`.
    pub output: Option<PathBuf>,
}

impl ExperimentManifest {
    pub fn validate(&self) -> Result<(), CliError> {
        let axes = [
            ("arch_kinds", self.arch_kinds.len()),
            ("widths", self.widths.len()),
            ("depths", self.depths.len()),
            ("molecule_fractions", self.molecule_fractions.len()),
            ("label_fractions", self.label_fractions.len()),
            ("dataset_ablations", self.dataset_ablations.len()),
            ("seeds", self.seeds.len()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, n)| *n == 0) {
            return Err(CliError::usage(format!("manifest axis `{name}` is empty")));
        }
        match (&self.data, &self.generator) {
            (Some(_), Some(_)) => return Err(CliError::usage("manifest sets both `data` and `[generator]`")),
            (None, None) => return Err(CliError::usage("manifest needs `data` or a `[generator]` table")),
            _ => {}
        }
        if let Some(g) = &self.generator {
            g.validate()?;
        }
        for f in self.molecule_fractions.iter().chain(&self.label_fractions) {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(CliError::usage(format!("fraction {f} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// The default scale variable: the single varying axis, else `params`.
    pub fn resolved_scale_variable(&self) -> ScaleVariable {
        if let Some(v) = self.scale_variable {
            return v;
        }
        let varying: Vec<ScaleVariable> = [
            (ScaleVariable::Width, self.widths.len()),
            (ScaleVariable::Depth, self.depths.len()),
            (ScaleVariable::Molecules, self.molecule_fractions.len()),
            (ScaleVariable::Labels, self.label_fractions.len()),
        ]
        .into_iter()
        .filter(|(_, n)| *n > 1)
        .map(|(v, _)| v)
        .collect();
        match varying.as_slice() {
            [one] => *one,
            _ => ScaleVariable::Params,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let m: Self = load_toml(path)?;
        m.validate().map_err(|e| e.context(path.display()))?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datagen_keys_and_seed() {
        let c = DatagenConfig::parse("seed = 3\nkind = \"downstream\"\nn_molecules = 50").unwrap();
        assert_eq!(c.kind, DataKind::Downstream);
        assert_eq!(c.settings.n_molecules, 50);
        let e = DatagenConfig::parse("seed = 1\nmolecules = 5").unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("n_molecules") && e.to_string().contains("molecules"));
        assert!(DatagenConfig::parse("n_molecules = 50").unwrap_err().to_string().contains("seed"));
    }

    #[test]
    fn manifest_axes_and_scale_variable() {
        let text = "generator = { seed = 0 }\narch_kinds = [\"mpnn\"]\nwidths = [16, 32]\ndepths = [4]\nseeds = [0]\n";
        let m: ExperimentManifest = parse_toml(text).unwrap();
        m.validate().unwrap();
        assert_eq!(m.resolved_scale_variable(), ScaleVariable::Width);
        assert_eq!(m.dataset_ablations, ["none"]);
        let empty: ExperimentManifest = parse_toml(&text.replace("[16, 32]", "[]")).unwrap();
        assert!(empty.validate().unwrap_err().to_string().contains("widths"));
        let bad = parse_toml::<ExperimentManifest>(&format!("{text}width = 3\n")).unwrap_err();
        assert!(bad.to_string().contains("widths"), "{bad}");
    }

    #[test]
    fn overrides_fill_defaults() {
        let t = TrainOverrides { epochs: 12, ..TrainOverrides::default() }.resolve(ArchKind::Gps, 4);
        assert_eq!(t, TrainConfig::for_arch(ArchKind::Gps, 12, 4));
        let s = NetworkOverrides { base_width: Some(32), ..Default::default() }.spec(ArchKind::Mpnn, 128, 4).unwrap();
        assert_eq!(s.width_multiplier, 4.0);
    }
}
