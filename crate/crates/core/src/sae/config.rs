use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Batch-level feature scoring rule used to build the candidate pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringRule {
    /// Column L2 norm, a cheap proxy for leverage scores.
    L2Norm,
    /// Column energy plus a ridge term.
    SquaredL2,
    /// Negated column entropy: selective (concentrated) columns score higher.
    Entropy,
    /// Fresh iid uniform scores every batch, i.e. random feature sampling.
    Uniform,
}

impl ScoringRule {
    pub const ALL: [ScoringRule; 4] = [
        ScoringRule::L2Norm,
        ScoringRule::SquaredL2,
        ScoringRule::Entropy,
        ScoringRule::Uniform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoringRule::L2Norm => "l2_norm",
            ScoringRule::SquaredL2 => "squared_l2",
            ScoringRule::Entropy => "entropy",
            ScoringRule::Uniform => "uniform",
        }
    }

    /// Deterministic rules produce identical pools for identical inputs.
    pub fn is_deterministic(self) -> bool {
        !matches!(self, ScoringRule::Uniform)
    }
}

impl fmt::Display for ScoringRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoringRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "l2_norm" | "l2norm" | "l2" | "leverage" => Ok(ScoringRule::L2Norm),
            "squared_l2" | "squaredl2" | "sq_l2" => Ok(ScoringRule::SquaredL2),
            "entropy" => Ok(ScoringRule::Entropy),
            "uniform" | "random" => Ok(ScoringRule::Uniform),
            other => Err(Error::Config(format!("unknown scoring rule `{other}`"))),
        }
    }
}

/// Hyperparameters of the gated encoder and the training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    /// Input dimension.
    pub d: usize,
    /// Dictionary size.
    pub m: usize,
    /// Target mean L0 per token.
    pub k: usize,
    /// Candidate pool expansion factor; the pool holds `⌊ell·k⌋` features.
    pub ell: f64,
    pub rule: ScoringRule,
    /// Ridge term added to squared-L2 scores.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Weight of the auxiliary dead-feature loss.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Upper bound on the number of dead features used per token by the
    /// auxiliary loss. `None` means `2·k`.
    #[serde(default)]
    pub k_aux: Option<usize>,
    /// Floor inside the entropy logarithm.
    #[serde(default = "default_eps_entropy")]
    pub eps_entropy: f64,
}

fn default_lambda() -> f64 {
    0.01
}

fn default_alpha() -> f64 {
    1.0 / 32.0
}

fn default_eps_entropy() -> f64 {
    1e-10
}

impl GateConfig {
    pub fn new(d: usize, m: usize, k: usize, ell: f64, rule: ScoringRule) -> Self {
        GateConfig {
            d,
            m,
            k,
            ell,
            rule,
            lambda: default_lambda(),
            alpha: default_alpha(),
            k_aux: None,
            eps_entropy: default_eps_entropy(),
        }
    }

    /// The `ell` at which every feature enters the pool.
    pub fn batch_topk_ell(&self) -> f64 {
        self.m as f64 / self.k as f64
    }

    pub fn with_ell(mut self, ell: f64) -> Self {
        self.ell = ell;
        self
    }

    pub fn with_rule(mut self, rule: ScoringRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d == 0 || self.m == 0 {
            return bad(format!(
                "d and m must be positive (d={}, m={})",
                self.d, self.m
            ));
        }
        if self.k == 0 || self.k > self.m {
            return bad(format!(
                "K must satisfy 1 <= K <= m (K={}, m={})",
                self.k, self.m
            ));
        }
        if !self.ell.is_finite() || self.ell < 1.0 {
            return bad(format!(
                "ell must be a finite value >= 1 (ell={})",
                self.ell
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0 (lambda={})", self.lambda));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be >= 0 (alpha={})", self.alpha));
        }
        if !(self.eps_entropy > 0.0 && self.eps_entropy.is_finite()) {
            return bad(format!(
                "eps_entropy must be > 0 (eps={})",
                self.eps_entropy
            ));
        }
        Ok(())
    }

    /// Pool size `min(⌊ell·k⌋, m)`.
    ///
    /// A relative slack of a few ulps is allowed before flooring so that
    /// `ell = m / k` always yields the full dictionary.
    pub fn pool_size(&self) -> usize {
        pool_size(self.k, self.ell, self.m)
    }

    pub fn is_full_pool(&self) -> bool {
        self.pool_size() >= self.m
    }

    pub fn k_aux(&self) -> usize {
        self.k_aux.unwrap_or(2 * self.k)
    }
}

pub(crate) fn pool_size(k: usize, ell: f64, m: usize) -> usize {
    let raw = ell * k as f64;
    let p = (raw * (1.0 + 4.0 * f64::EPSILON)).floor();
    if p >= m as f64 {
        m
    } else {
        p as usize
    }
}
