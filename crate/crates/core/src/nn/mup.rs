//! Width-aware initialization and learning-rate multipliers.
//!
//! A simplified per-tensor table in the spirit of µP:
//!
//! | role            | init                         | lr multiplier |
//! |-----------------|------------------------------|---------------|
//! | input weight    | N(0, base/√fan_in)           | 1             |
//! | hidden weight   | N(0, base/√fan_in)           | 1/m           |
//! | output weight   | N(0, base/√fan_in · 1/√m)    | 1/m           |
//! | bias            | 0                            | 1             |
//! | norm gain       | 1                            | 1             |
//! | attention bias  | 0                            | 1             |
//!
//! where `m` is the width multiplier relative to the base model. With a depth
//! multiplier `d`, residual branches are scaled by `1/√d`.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamRole {
    InputWeight,
    HiddenWeight,
    OutputWeight,
    Bias,
    NormGain,
    AttentionBias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
}

impl ParamSpec {
    pub fn fan_in(&self) -> usize {
        self.shape.first().copied().unwrap_or(1).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal { std: f64 },
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamScale {
    pub init: Init,
    pub lr_multiplier: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MupRules {
    pub width_multiplier: f64,
    pub base_std: f64,
    pub depth_multiplier: Option<f64>,
}

impl MupRules {
    pub fn new(width_multiplier: f64) -> Self {
        assert!(width_multiplier > 0.0, "width multiplier must be positive");
        Self { width_multiplier, base_std: 1.0, depth_multiplier: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MupTable {
    pub entries: Vec<(String, ParamScale)>,
    pub residual_scale: f64,
}

pub fn param_scale(spec: &ParamSpec, rules: &MupRules) -> ParamScale {
    let m = rules.width_multiplier;
    let he = rules.base_std / (spec.fan_in() as f64).sqrt();
    match spec.role {
        ParamRole::InputWeight => ParamScale { init: Init::Normal { std: he }, lr_multiplier: 1.0 },
        ParamRole::HiddenWeight => ParamScale { init: Init::Normal { std: he }, lr_multiplier: 1.0 / m },
        ParamRole::OutputWeight => ParamScale { init: Init::Normal { std: he / m.sqrt() }, lr_multiplier: 1.0 / m },
        ParamRole::Bias | ParamRole::AttentionBias => ParamScale { init: Init::Constant(0.0), lr_multiplier: 1.0 },
        ParamRole::NormGain => ParamScale { init: Init::Constant(1.0), lr_multiplier: 1.0 },
    }
}

pub fn mup_scale(params: &[ParamSpec], rules: &MupRules) -> MupTable {
    MupTable {
        entries: params.iter().map(|p| (p.path.clone(), param_scale(p, rules))).collect(),
        residual_scale: rules.depth_multiplier.map_or(1.0, |d| 1.0 / d.sqrt()),
    }
}
