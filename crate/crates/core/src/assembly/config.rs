use serde::{Deserialize, Serialize};

use super::AssemblyError;

/// Inclusive bounds on the number of mixed-key blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRange {
    pub min: usize,
    pub max: usize,
}

impl KeyRange {
    pub fn contains(&self, n: usize) -> bool {
        (self.min..=self.max).contains(&n)
    }
}

/// Each keying sign must make up at least `numerator / denominator` of a
/// domain's selected items: `(d - n) * N_sign >= n * N_other` for both signs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignFloor {
    pub numerator: u32,
    pub denominator: u32,
}

impl SignFloor {
    pub const THIRTY_PERCENT: SignFloor = SignFloor { numerator: 3, denominator: 10 };

    pub fn satisfied(&self, this_sign: usize, other_sign: usize) -> bool {
        let (n, d) = (self.numerator as u64, self.denominator as u64);
        (d - n) * this_sign as u64 >= n * other_sign as u64
    }

    pub fn holds(&self, positive: usize, negative: usize) -> bool {
        self.satisfied(positive, negative) && self.satisfied(negative, positive)
    }

    /// Smallest count of either sign compatible with `total` items in a domain.
    pub fn min_per_sign(&self, total: usize) -> usize {
        let (n, d) = (self.numerator as usize, self.denominator as usize);
        (n * total).div_ceil(d)
    }
}

/// Constraint set for block assembly. `None` disables a constraint family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyConfig {
    pub blocks: usize,
    pub per_trait: Option<usize>,
    pub per_trait_pair: Option<usize>,
    pub mixed_key: Option<KeyRange>,
    pub sign_floor: Option<SignFloor>,
    /// Slack on the stage-one optimum carried into stage two.
    pub epsilon: f64,
    /// Search nodes per solve before giving up with the best selection found.
    pub node_budget: u64,
}

pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const DEFAULT_NODE_BUDGET: u64 = 50_000_000;

impl AssemblyConfig {
    /// Fully balanced design: `2P/5` items per trait, `P/10` blocks per trait pair,
    /// mixed-key blocks in `[0.4P, 0.6P]`, and the 30% sign floor.
    pub fn balanced(blocks: usize) -> Result<Self, AssemblyError> {
        if blocks == 0 || blocks % 10 != 0 {
            return Err(AssemblyError::Config(format!(
                "balanced design needs a block count divisible by 10, got {blocks}"
            )));
        }
        Ok(AssemblyConfig {
            blocks,
            per_trait: Some(2 * blocks / 5),
            per_trait_pair: Some(blocks / 10),
            mixed_key: Some(mixed_key_range(blocks)),
            sign_floor: Some(SignFloor::THIRTY_PERCENT),
            epsilon: DEFAULT_EPSILON,
            node_budget: DEFAULT_NODE_BUDGET,
        })
    }

    /// Only the block count and item uniqueness are enforced.
    pub fn unconstrained(blocks: usize) -> Self {
        AssemblyConfig {
            blocks,
            per_trait: None,
            per_trait_pair: None,
            mixed_key: None,
            sign_floor: None,
            epsilon: DEFAULT_EPSILON,
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, AssemblyError> {
        let settings: AssemblySettings =
            toml::from_str(text).map_err(|e| AssemblyError::Config(e.to_string()))?;
        settings.resolve()
    }

    pub fn validate(&self) -> Result<(), AssemblyError> {
        if self.blocks == 0 {
            return Err(AssemblyError::Config("block count must be positive".into()));
        }
        if let Some(r) = self.mixed_key {
            if r.min > r.max {
                return Err(AssemblyError::Config(format!("mixed-key range {}..{} is empty", r.min, r.max)));
            }
        }
        if let Some(f) = self.sign_floor {
            if f.denominator == 0 || f.numerator > f.denominator {
                return Err(AssemblyError::Config("sign floor must be a fraction in [0, 1]".into()));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(AssemblyError::Config("epsilon must be finite and non-negative".into()));
        }
        Ok(())
    }
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self::balanced(30).expect("30 is divisible by 10")
    }
}

/// `[ceil(0.4 P), floor(0.6 P)]`.
pub fn mixed_key_range(blocks: usize) -> KeyRange {
    KeyRange {
        min: (4 * blocks).div_ceil(10),
        max: 6 * blocks / 10,
    }
}

/// File form of [`AssemblyConfig`]. With `balanced = true` (the default) the
/// balanced-design values fill any field not given explicitly.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblySettings {
    pub blocks: Option<usize>,
    pub balanced: Option<bool>,
    pub per_trait: Option<usize>,
    pub per_trait_pair: Option<usize>,
    pub mixed_key_min: Option<usize>,
    pub mixed_key_max: Option<usize>,
    pub sign_floor_percent: Option<u32>,
    pub epsilon: Option<f64>,
    pub node_budget: Option<u64>,
    /// Item ids dropped from the pool before assembly.
    pub exclude: Vec<String>,
}

impl AssemblySettings {
    pub fn resolve(&self) -> Result<AssemblyConfig, AssemblyError> {
        let blocks = self.blocks.unwrap_or(30);
        let mut cfg = if self.balanced.unwrap_or(true) {
            AssemblyConfig::balanced(blocks)?
        } else {
            AssemblyConfig::unconstrained(blocks)
        };
        if self.per_trait.is_some() {
            cfg.per_trait = self.per_trait;
        }
        if self.per_trait_pair.is_some() {
            cfg.per_trait_pair = self.per_trait_pair;
        }
        match (self.mixed_key_min, self.mixed_key_max) {
            (None, None) => {}
            (lo, hi) => {
                cfg.mixed_key = Some(KeyRange {
                    min: lo.unwrap_or(0),
                    max: hi.unwrap_or(blocks),
                })
            }
        }
        if let Some(p) = self.sign_floor_percent {
            cfg.sign_floor = Some(SignFloor { numerator: p, denominator: 100 });
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(n) = self.node_budget {
            cfg.node_budget = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
