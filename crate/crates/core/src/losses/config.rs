use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which objective trains the student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Cross-entropy on labels only.
    Bp,
    /// Labels plus softened teacher outputs.
    Kd,
    /// Hint pre-training through an adapter, then `Kd`.
    Fitnet,
    /// Labels, softened teacher outputs and the locality preserving term.
    Lp,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Bp, Strategy::Kd, Strategy::Fitnet, Strategy::Lp];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Bp => "bp",
            Strategy::Kd => "kd",
            Strategy::Fitnet => "fitnet",
            Strategy::Lp => "lp",
        }
    }

    pub fn uses_teacher(self) -> bool {
        self != Strategy::Bp
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bp" => Ok(Strategy::Bp),
            "kd" => Ok(Strategy::Kd),
            "fitnet" => Ok(Strategy::Fitnet),
            "lp" => Ok(Strategy::Lp),
            _ => Err(format!("unknown strategy {s:?} (expected bp|kd|fitnet|lp)")),
        }
    }
}

/// Bandwidth of the Gaussian affinity kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaPolicy {
    Fixed(f64),
    /// σ² = mean squared distance over all selected neighbor pairs.
    BatchMean,
}

impl fmt::Display for SigmaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaPolicy::Fixed(s) => write!(f, "{s}"),
            SigmaPolicy::BatchMean => f.write_str("batch_mean"),
        }
    }
}

impl FromStr for SigmaPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "batch_mean" {
            return Ok(SigmaPolicy::BatchMean);
        }
        s.parse::<f64>()
            .map(SigmaPolicy::Fixed)
            .map_err(|_| format!("expected `batch_mean` or a positive number, got {s:?}"))
    }
}

/// How the kNN affinity is turned into a graph and differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    /// `α ← max(α, αᵀ)`; the pair gradient is then the exact gradient.
    Symmetric,
    /// Raw directed kNN weights; the pair gradient is applied as written
    /// even though it is not the exact gradient of the loss.
    Literal,
}

impl fmt::Display for GraphMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphMode::Symmetric => "symmetric",
            GraphMode::Literal => "literal",
        })
    }
}

impl FromStr for GraphMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "symmetric" => Ok(GraphMode::Symmetric),
            "literal" => Ok(GraphMode::Literal),
            _ => Err(format!("expected `symmetric` or `literal`, got {s:?}")),
        }
    }
}

/// Scalar knobs of every distillation objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub tau: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub k: usize,
    pub sigma: SigmaPolicy,
    pub graph: GraphMode,
    pub strategy: Strategy,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            tau: 0.5,
            lambda: 2.0,
            gamma: 1.0,
            k: 5,
            sigma: SigmaPolicy::BatchMean,
            graph: GraphMode::Symmetric,
            strategy: Strategy::Lp,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::arg("tau", format!("must be > 0, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::arg("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::arg("gamma", format!("must be finite and >= 0, got {}", self.gamma)));
        }
        if self.k == 0 {
            return Err(Error::arg("k", "must be >= 1"));
        }
        if let SigmaPolicy::Fixed(s) = self.sigma {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::arg("sigma", format!("fixed sigma must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}
