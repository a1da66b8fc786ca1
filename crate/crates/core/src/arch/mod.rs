//! Network assembly: encoders, a stack of MPNN, GPS or Transformer blocks,
//! sum readout, output networks and per-task heads, with named activation
//! taps for fingerprinting.

mod batch;
mod blocks;

pub use batch::{spd_buckets, Batch, PreparedMolecule, Topology, SPD_BUCKETS, SPD_MAX};
pub use blocks::{
    biased_attention, dropout, gps_block, layernorm, linear, mlp2, mpnn_block, transformer_block, BlockContext,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molgraph::{DatasetMix, TaskLevel, EDGE_FEATURES, NODE_FEATURES};
use crate::nn::rng::{stream, DropoutKey};
use crate::nn::{
    param_scale, Init, Mode, MupRules, NnError, Param, ParamRole, ParamSpec, ParamStore, Tape, Tensor, Var,
};
use crate::pse::{PseConfig, PseError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Mpnn,
    Transformer,
    Gps,
}

impl ArchKind {
    pub const ALL: [ArchKind; 3] = [ArchKind::Mpnn, ArchKind::Transformer, ArchKind::Gps];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Mpnn => "mpnn",
            ArchKind::Transformer => "transformer",
            ArchKind::Gps => "gps",
        }
    }

    pub fn uses_edges(self) -> bool {
        self != ArchKind::Transformer
    }

    pub fn uses_attention(self) -> bool {
        self != ArchKind::Mpnn
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ArchKind::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown architecture `{s}` (expected mpnn, transformer or gps)"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskHeadSpec {
    pub name: String,
    pub out_dim: usize,
    pub level: TaskLevel,
}

fn default_depth() -> usize {
    16
}
fn default_heads() -> usize {
    4
}
fn default_dropout() -> f64 {
    0.1
}
fn default_multiplier() -> f64 {
    1.0
}

/// A fresh two-layer head cut in after `module` when finetuning. Its output
/// is reported under `task`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FinetuneHeadSpec {
    pub module: String,
    pub hidden_dim: usize,
    pub task: String,
    pub out_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub arch_kind: ArchKind,
    pub width: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    #[serde(default)]
    pub pse: PseConfig,
    #[serde(default = "default_multiplier")]
    pub width_multiplier: f64,
    #[serde(default)]
    pub task_heads: Vec<TaskHeadSpec>,
    /// When set, the network is trimmed: no node-level outputs, heads keep
    /// only the layer named by `module`, and `finetune_head` produces the
    /// single output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune: Option<FinetuneHeadSpec>,
}

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("task head `{task}`: {reason}")]
    IncompatibleHead { task: String, reason: String },
    #[error("unknown tap `{tap}`; valid taps: {valid}")]
    UnknownTap { tap: String, valid: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Pse(#[from] PseError),
}

impl NetworkSpec {
    pub fn new(arch_kind: ArchKind, width: usize, depth: usize) -> Self {
        Self {
            arch_kind,
            width,
            depth,
            n_heads: default_heads(),
            dropout_p: default_dropout(),
            pse: PseConfig::default(),
            width_multiplier: default_multiplier(),
            task_heads: Vec::new(),
            finetune: None,
        }
    }

    /// One head per task table of `mix`, output dim = column count.
    pub fn with_heads_for(mut self, mix: &DatasetMix) -> Self {
        self.task_heads = mix
            .tasks
            .iter()
            .map(|t| TaskHeadSpec { name: t.name.clone(), out_dim: t.columns, level: t.level })
            .collect();
        self
    }

    pub fn input_dim(&self) -> usize {
        NODE_FEATURES + self.pse.width()
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let bad = |m: String| Err(ArchError::InvalidSpec(m));
        if self.width == 0 || self.n_heads == 0 || !self.width.is_multiple_of(self.n_heads) {
            return bad(format!("width {} must be a positive multiple of n_heads {}", self.width, self.n_heads));
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return bad(format!("width_multiplier {} must be positive", self.width_multiplier));
        }
        self.pse.validate()?;
        let mut names = BTreeSet::new();
        for h in &self.task_heads {
            let err = |reason: &str| ArchError::IncompatibleHead { task: h.name.clone(), reason: reason.into() };
            if h.out_dim == 0 {
                return Err(err("output dim must be positive"));
            }
            if h.name.is_empty() || h.name.contains('.') {
                return Err(err("name must be non-empty and contain no `.`"));
            }
            if !names.insert(&h.name) {
                return Err(err("duplicate head name"));
            }
        }
        if let Some(ft) = &self.finetune {
            let valid = ft.module == "graph_output_nn"
                || ft
                    .module
                    .strip_prefix("task_heads.")
                    .and_then(|r| r.strip_suffix(".layer1"))
                    .is_some_and(|n| self.task_heads.iter().any(|h| h.name == n && h.level == TaskLevel::Graph));
            if !valid {
                return bad(format!("finetune module `{}` is not a graph-level site", ft.module));
            }
            if ft.hidden_dim == 0 || ft.out_dim == 0 {
                return bad("finetune head dims must be positive".into());
            }
        }
        Ok(())
    }

    /// Checks that every task of `mix` has a head of matching level and width.
    pub fn check_mix(&self, mix: &DatasetMix) -> Result<(), ArchError> {
        for t in &mix.tasks {
            let head = self.task_heads.iter().find(|h| h.name == t.name).ok_or_else(|| {
                ArchError::IncompatibleHead { task: t.name.clone(), reason: "no head for this task".into() }
            })?;
            if head.level != t.level || head.out_dim != t.columns {
                return Err(ArchError::IncompatibleHead {
                    task: t.name.clone(),
                    reason: format!(
                        "head is {:?}/{} but the table is {:?}/{}",
                        head.level, head.out_dim, t.level, t.columns
                    ),
                });
            }
        }
        Ok(())
    }

    fn has_level(&self, level: TaskLevel) -> bool {
        self.task_heads.iter().any(|h| h.level == level)
    }

    /// Every parameter path with its shape and scaling role, in assembly order.
    pub fn param_table(&self) -> Vec<ParamSpec> {
        let w = self.width;
        let mut out = Vec::new();
        let mut push = |path: String, shape: Vec<usize>, role: ParamRole| out.push(ParamSpec { path, shape, role });
        let lin = |push: &mut dyn FnMut(String, Vec<usize>, ParamRole), p: &str, i: usize, o: usize, role| {
            push(format!("{p}.weight"), vec![i, o], role);
            push(format!("{p}.bias"), vec![o], ParamRole::Bias);
        };
        let norm = |push: &mut dyn FnMut(String, Vec<usize>, ParamRole), p: &str| {
            push(format!("{p}.gain"), vec![w], ParamRole::NormGain);
            push(format!("{p}.bias"), vec![w], ParamRole::Bias);
        };
        lin(&mut push, "node_encoder.layer1", self.input_dim(), w, ParamRole::InputWeight);
        lin(&mut push, "node_encoder.layer2", w, w, ParamRole::HiddenWeight);
        if self.arch_kind.uses_edges() {
            lin(&mut push, "edge_encoder.layer1", EDGE_FEATURES, w, ParamRole::InputWeight);
            lin(&mut push, "edge_encoder.layer2", w, w, ParamRole::HiddenWeight);
        }
        for i in 0..self.depth {
            let c = format!("core.{i}");
            if self.arch_kind.uses_edges() {
                lin(&mut push, &format!("{c}.message.layer1"), 3 * w, w, ParamRole::HiddenWeight);
                lin(&mut push, &format!("{c}.message.node_out"), w, w, ParamRole::HiddenWeight);
                lin(&mut push, &format!("{c}.message.edge_out"), w, w, ParamRole::HiddenWeight);
                norm(&mut push, &format!("{c}.norm"));
            }
            if self.arch_kind.uses_attention() {
                lin(&mut push, &format!("{c}.attention.query"), w, w, ParamRole::HiddenWeight);
                push(format!("{c}.attention.key.weight"), vec![w, w], ParamRole::HiddenWeight);
                lin(&mut push, &format!("{c}.attention.value"), w, w, ParamRole::HiddenWeight);
                lin(&mut push, &format!("{c}.ffn.layer1"), w, w, ParamRole::HiddenWeight);
                lin(&mut push, &format!("{c}.ffn.layer2"), w, w, ParamRole::HiddenWeight);
                norm(&mut push, &format!("{c}.ffn_norm"));
            }
        }
        if self.arch_kind.uses_attention() {
            push("bias_table".into(), vec![self.n_heads, SPD_BUCKETS], ParamRole::AttentionBias);
        }
        if self.has_level(TaskLevel::Graph) || self.finetune.is_some() {
            lin(&mut push, "graph_output_nn.layer1", w, w, ParamRole::HiddenWeight);
            lin(&mut push, "graph_output_nn.layer2", w, w, ParamRole::HiddenWeight);
        }
        match &self.finetune {
            None => {
                if self.has_level(TaskLevel::Node) {
                    lin(&mut push, "node_output_nn.layer1", w, w, ParamRole::HiddenWeight);
                    lin(&mut push, "node_output_nn.layer2", w, w, ParamRole::HiddenWeight);
                }
                for h in &self.task_heads {
                    lin(&mut push, &format!("task_heads.{}.layer1", h.name), w, w, ParamRole::HiddenWeight);
                    lin(&mut push, &format!("task_heads.{}.layer2", h.name), w, h.out_dim, ParamRole::OutputWeight);
                }
            }
            Some(ft) => {
                if ft.module != "graph_output_nn" {
                    lin(&mut push, &ft.module, w, w, ParamRole::HiddenWeight);
                }
                lin(&mut push, "finetune_head.layer1", w, ft.hidden_dim, ParamRole::HiddenWeight);
                lin(&mut push, "finetune_head.layer2", ft.hidden_dim, ft.out_dim, ParamRole::OutputWeight);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.param_table().iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }

    /// Parameters under `core.*` only.
    pub fn core_parameter_count(&self) -> usize {
        self.param_table()
            .iter()
            .filter(|p| p.path.starts_with("core."))
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }
}

/// An assembled network: its spec plus the path-keyed parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub spec: NetworkSpec,
    pub params: ParamStore,
}

/// Draws every parameter from its own seeded stream, scaled per the width
/// rules for `spec.width_multiplier`.
pub fn assemble_network(spec: &NetworkSpec, seed: u64) -> Result<ModelState, ArchError> {
    spec.validate()?;
    let rules = MupRules::new(spec.width_multiplier);
    let mut params = ParamStore::new();
    for p in spec.param_table() {
        let scale = param_scale(&p, &rules);
        let n: usize = p.shape.iter().product();
        let data = match scale.init {
            Init::Constant(c) => vec![c; n],
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).expect("finite std");
                let mut rng = stream(seed, &format!("init.{}", p.path), &[]);
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        let value = Tensor::new(p.shape.clone(), data)?;
        params.insert(Param::new(p.path.clone(), value, scale.lr_multiplier));
    }
    Ok(ModelState { spec: spec.clone(), params })
}

/// Tape handles of one forward pass.
pub struct TapedForward {
    /// Task name → output (`graphs × out` or `nodes × out`).
    pub outputs: BTreeMap<String, Var>,
    pub taps: BTreeMap<String, Var>,
}

/// Materialized forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub outputs: BTreeMap<String, Tensor>,
    pub taps: BTreeMap<String, Tensor>,
}

impl ModelState {
    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    /// Level of the activation at `tap`, or `None` for an unknown site.
    pub fn tap_level(&self, tap: &str) -> Option<TaskLevel> {
        if tap == "graph_output_nn" {
            return self.params.contains("graph_output_nn.layer1.weight").then_some(TaskLevel::Graph);
        }
        if let Some(rest) = tap.strip_prefix("core.") {
            return rest.parse::<usize>().ok().filter(|&i| i < self.spec.depth).map(|_| TaskLevel::Node);
        }
        let name = tap.strip_prefix("task_heads.")?.strip_suffix(".layer1")?;
        if !self.params.contains(&format!("{tap}.weight")) {
            return None;
        }
        self.spec.task_heads.iter().find(|h| h.name == name).map(|h| h.level)
    }

    pub fn valid_taps(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.tap_level("graph_output_nn").is_some() {
            v.push("graph_output_nn".to_owned());
        }
        for h in &self.spec.task_heads {
            let t = format!("task_heads.{}.layer1", h.name);
            if self.tap_level(&t).is_some() {
                v.push(t);
            }
        }
        v.extend((0..self.spec.depth).map(|i| format!("core.{i}")));
        v
    }

    fn check_taps(&self, taps: &[&str]) -> Result<(), ArchError> {
        for &t in taps {
            if self.tap_level(t).is_none() {
                return Err(ArchError::UnknownTap { tap: t.to_owned(), valid: self.valid_taps().join(", ") });
            }
        }
        Ok(())
    }

    /// Records the full forward pass on `t`. Task outputs are produced for
    /// every head whose parameters are present.
    pub fn forward_on_tape(
        &self,
        t: &mut Tape,
        batch: &Batch,
        mode: Mode,
        key: DropoutKey,
        taps: &[&str],
    ) -> Result<TapedForward, ArchError> {
        self.check_taps(taps)?;
        let spec = &self.spec;
        let ctx = BlockContext { store: &self.params, mode, key, dropout_p: spec.dropout_p };
        let module = spec.finetune.as_ref().map(|f| f.module.as_str());
        let wanted = |name: &str| taps.contains(&name) || module == Some(name);
        let mut tapped = BTreeMap::new();

        let x0 = t.constant(batch.node_input.clone());
        let mut x = mlp2(t, &ctx, "node_encoder", x0)?;
        let mut e = if spec.arch_kind.uses_edges() {
            let e0 = t.constant(batch.edge_input.clone());
            Some(mlp2(t, &ctx, "edge_encoder", e0)?)
        } else {
            None
        };
        for i in 0..spec.depth {
            let prefix = format!("core.{i}");
            match (spec.arch_kind, e) {
                (ArchKind::Mpnn, Some(ev)) => {
                    let (nx, ne) = mpnn_block(t, &ctx, &prefix, x, ev, &batch.topology)?;
                    x = nx;
                    e = Some(ne);
                }
                (ArchKind::Gps, Some(ev)) => {
                    let (nx, ne) = gps_block(t, &ctx, &prefix, x, ev, &batch.topology, &batch.layout)?;
                    x = nx;
                    e = Some(ne);
                }
                _ => x = transformer_block(t, &ctx, &prefix, x, &batch.layout)?,
            }
            if wanted(&prefix) {
                tapped.insert(prefix, x);
            }
        }

        let live_head = |h: &TaskHeadSpec| self.params.contains(&format!("task_heads.{}.layer2.weight", h.name));
        let tap_head = |h: &TaskHeadSpec| wanted(&format!("task_heads.{}.layer1", h.name));
        let need = |level: TaskLevel| spec.task_heads.iter().any(|h| h.level == level && (live_head(h) || tap_head(h)));

        let mut outputs = BTreeMap::new();
        let mut level_input = BTreeMap::new();
        if need(TaskLevel::Graph) || wanted("graph_output_nn") {
            let pooled = t.scatter_sum(x, batch.node_graph.clone(), batch.graphs());
            let g = mlp2(t, &ctx, "graph_output_nn", pooled)?;
            if wanted("graph_output_nn") {
                tapped.insert("graph_output_nn".to_owned(), g);
            }
            level_input.insert(TaskLevel::Graph as u8, g);
        }
        if need(TaskLevel::Node) && self.params.contains("node_output_nn.layer1.weight") {
            level_input.insert(TaskLevel::Node as u8, mlp2(t, &ctx, "node_output_nn", x)?);
        }
        for h in &spec.task_heads {
            if !(live_head(h) || tap_head(h)) {
                continue;
            }
            let Some(&input) = level_input.get(&(h.level as u8)) else { continue };
            let path = format!("task_heads.{}", h.name);
            let l1 = linear(t, &ctx, &format!("{path}.layer1"), input)?;
            let l1 = t.relu(l1);
            if tap_head(h) {
                tapped.insert(format!("{path}.layer1"), l1);
            }
            if live_head(h) {
                outputs.insert(h.name.clone(), linear(t, &ctx, &format!("{path}.layer2"), l1)?);
            }
        }
        if let Some(ft) = &spec.finetune {
            let input = tapped[&ft.module];
            outputs.insert(ft.task.clone(), mlp2(t, &ctx, "finetune_head", input)?);
            if !taps.contains(&ft.module.as_str()) {
                tapped.remove(&ft.module);
            }
        }
        Ok(TapedForward { outputs, taps: tapped })
    }

    pub fn forward(
        &self,
        batch: &Batch,
        mode: Mode,
        key: DropoutKey,
        taps: &[&str],
    ) -> Result<ForwardOutput, ArchError> {
        let mut t = Tape::new();
        let f = self.forward_on_tape(&mut t, batch, mode, key, taps)?;
        Ok(ForwardOutput {
            outputs: f.outputs.into_iter().map(|(k, v)| (k, t.value(v).clone())).collect(),
            taps: f.taps.into_iter().map(|(k, v)| (k, t.value(v).clone())).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{parse_smiles, Molecule};

    fn spec(kind: ArchKind, w: usize, d: usize) -> NetworkSpec {
        let mut s = NetworkSpec::new(kind, w, d);
        s.task_heads = vec![
            TaskHeadSpec { name: "g".into(), out_dim: 3, level: TaskLevel::Graph },
            TaskHeadSpec { name: "n".into(), out_dim: 2, level: TaskLevel::Node },
        ];
        s
    }

    fn batch(s: &NetworkSpec) -> Batch {
        let mols: Vec<PreparedMolecule> = ["CC(=O)O", "C1CC1N", "CCCCO"]
            .iter()
            .map(|m| PreparedMolecule::new(&Molecule::new(parse_smiles(m).unwrap()), &s.pse).unwrap())
            .collect();
        Batch::new(&mols.iter().collect::<Vec<_>>(), s.n_heads)
    }

    #[test]
    fn core_count_quadruples_with_width() {
        for kind in ArchKind::ALL {
            let a = spec(kind, 32, 4).core_parameter_count() as f64;
            let b = spec(kind, 64, 4).core_parameter_count() as f64;
            assert!((3.5..=4.5).contains(&(b / a)), "{kind}: {}", b / a);
        }
    }

    #[test]
    fn depth_groups_and_count_audit() {
        for kind in ArchKind::ALL {
            let s = spec(kind, 16, 3);
            let m = assemble_network(&s, 1).unwrap();
            let groups: BTreeSet<&str> = m
                .params
                .names()
                .filter_map(|n| n.strip_prefix("core."))
                .map(|r| r.split('.').next().unwrap())
                .collect();
            assert_eq!(groups, ["0", "1", "2"].into_iter().collect());
            assert_eq!(m.parameter_count(), s.parameter_count());
            assert_eq!(kind.uses_edges(), m.params.contains("edge_encoder.layer1.weight"));
        }
    }

    #[test]
    fn same_seed_same_init() {
        let s = spec(ArchKind::Gps, 16, 2);
        assert_eq!(assemble_network(&s, 4).unwrap(), assemble_network(&s, 4).unwrap());
        assert_ne!(assemble_network(&s, 4).unwrap(), assemble_network(&s, 5).unwrap());
    }

    #[test]
    fn output_shapes_and_taps() {
        for kind in ArchKind::ALL {
            let s = spec(kind, 16, 2);
            let m = assemble_network(&s, 0).unwrap();
            let b = batch(&s);
            let out = m
                .forward(
                    &b,
                    Mode::Eval,
                    DropoutKey::new(0, 0, 0),
                    &["graph_output_nn", "core.1", "task_heads.g.layer1"],
                )
                .unwrap();
            assert_eq!(out.outputs["g"].shape(), &[3, 3]);
            assert_eq!(out.outputs["n"].shape(), &[b.nodes(), 2]);
            assert_eq!(out.taps["graph_output_nn"].shape(), &[3, 16]);
            assert_eq!(out.taps["core.1"].shape(), &[b.nodes(), 16]);
            assert!(out.outputs.values().all(Tensor::is_finite));
        }
    }

    #[test]
    fn unknown_tap_lists_valid_ones() {
        let s = spec(ArchKind::Mpnn, 16, 2);
        let m = assemble_network(&s, 0).unwrap();
        let err = m.forward(&batch(&s), Mode::Eval, DropoutKey::new(0, 0, 0), &["core.9"]).unwrap_err();
        match err {
            ArchError::UnknownTap { valid, .. } => assert!(valid.contains("graph_output_nn")),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(ArchKind::Gps, 18, 2);
        assert!(matches!(s.validate(), Err(ArchError::InvalidSpec(_))));
        s.width = 16;
        s.task_heads.push(TaskHeadSpec { name: "g".into(), out_dim: 1, level: TaskLevel::Graph });
        assert!(matches!(assemble_network(&s, 0), Err(ArchError::IncompatibleHead { .. })));
    }

    #[test]
    fn train_mode_dropout_is_keyed() {
        let s = spec(ArchKind::Mpnn, 16, 2);
        let m = assemble_network(&s, 0).unwrap();
        let b = batch(&s);
        let f = |k| m.forward(&b, Mode::Train, k, &[]).unwrap();
        assert_eq!(f(DropoutKey::new(1, 2, 3)), f(DropoutKey::new(1, 2, 3)));
        assert_ne!(f(DropoutKey::new(1, 2, 3)), f(DropoutKey::new(1, 2, 4)));
    }
}
