//! CRRA utility over gross wealth `1 + r` and its first two derivatives.

use crate::error::{Error, Result};

/// Gross wealth below which the optimizer sees a linear extension of the
/// utility instead of the (undefined or exploding) CRRA branch.
pub const WEALTH_FLOOR: f64 = 1e-6;

/// Utility of a net return together with its derivatives.
pub trait Utility {
    fn value(&self, r: f64) -> f64;
    fn marginal(&self, r: f64) -> f64;
    /// `-U''(r)`, non-negative for concave utilities.
    fn curvature(&self, r: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crra {
    pub gamma: f64,
}

impl Crra {
    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::InvalidParameter(format!("risk aversion must be finite and >= 0, got {gamma}")));
        }
        Ok(Self { gamma })
    }

    fn raw_value(&self, gross: f64) -> f64 {
        if self.gamma == 1.0 {
            gross.ln()
        } else {
            let e = 1.0 - self.gamma;
            gross.powf(e) / e
        }
    }

    /// Value with a C1 linear extension below [`WEALTH_FLOOR`]; never fails.
    pub fn value_or_penalty(&self, r: f64) -> f64 {
        let gross = 1.0 + r;
        if gross >= WEALTH_FLOOR {
            self.raw_value(gross)
        } else {
            self.raw_value(WEALTH_FLOOR) - gross_marginal(WEALTH_FLOOR, self.gamma) * (WEALTH_FLOOR - gross)
        }
    }

    pub fn marginal_or_penalty(&self, r: f64) -> f64 {
        gross_marginal((1.0 + r).max(WEALTH_FLOOR), self.gamma)
    }

    pub fn curvature_or_penalty(&self, r: f64) -> f64 {
        let gross = 1.0 + r;
        if gross >= WEALTH_FLOOR {
            self.gamma * gross.powf(-(self.gamma + 1.0))
        } else {
            0.0
        }
    }
}

fn gross_marginal(gross: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        gross.powf(-gamma)
    }
}

impl Utility for Crra {
    fn value(&self, r: f64) -> f64 {
        self.value_or_penalty(r)
    }

    fn marginal(&self, r: f64) -> f64 {
        self.marginal_or_penalty(r)
    }

    fn curvature(&self, r: f64) -> f64 {
        self.curvature_or_penalty(r)
    }
}

/// Mean-variance style utility `r - (gamma/2) r^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub gamma: f64,
}

impl Utility for Quadratic {
    fn value(&self, r: f64) -> f64 {
        r - 0.5 * self.gamma * r * r
    }

    fn marginal(&self, r: f64) -> f64 {
        1.0 - self.gamma * r
    }

    fn curvature(&self, _r: f64) -> f64 {
        self.gamma
    }
}

fn check_domain(r: f64) -> Result<f64> {
    let gross = 1.0 + r;
    if gross > 0.0 && gross.is_finite() {
        Ok(gross)
    } else {
        Err(Error::Domain { gross })
    }
}

/// `(1+r)^(1-gamma)/(1-gamma)`, or `ln(1+r)` at `gamma = 1`.
pub fn crra(r: f64, gamma: f64) -> Result<f64> {
    let gross = check_domain(r)?;
    Ok(Crra::new(gamma)?.raw_value(gross))
}

/// `U'(r) = (1+r)^(-gamma)`.
pub fn crra_marginal(r: f64, gamma: f64) -> Result<f64> {
    let gross = check_domain(r)?;
    Crra::new(gamma)?;
    Ok(gross_marginal(gross, gamma))
}

/// `-U''(r) = gamma (1+r)^(-(gamma+1))`.
pub fn crra_curvature(r: f64, gamma: f64) -> Result<f64> {
    let gross = check_domain(r)?;
    Crra::new(gamma)?;
    Ok(gamma * gross.powf(-(gamma + 1.0)))
}
