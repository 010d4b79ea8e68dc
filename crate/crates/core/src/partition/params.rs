use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// User-facing knobs of the bisection mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Total privacy budget.
    pub epsilon_b: f64,
    /// Fraction of the budget spent on the recursive bisection.
    pub ratio: f64,
    /// `exp(δ/λ)`; trades the converge noise scale against the depth bias.
    pub alpha: f64,
    /// Scales the budgeted cut depth `κ = β log2(total domain)`.
    pub beta: f64,
    /// Fraction of the bisection budget spent on converge tests.
    pub gamma: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            epsilon_b: 1.0,
            ratio: 0.9,
            alpha: 1.6,
            beta: 1.2,
            gamma: 0.9,
        }
    }
}

impl Hyperparams {
    pub fn with_epsilon(epsilon_b: f64) -> Self {
        Self {
            epsilon_b,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if !(self.epsilon_b > 0.0) || !self.epsilon_b.is_finite() {
            return bad(format!("epsilon must be positive, got {}", self.epsilon_b));
        }
        if !(0.0..=1.0).contains(&self.ratio) {
            return bad(format!("ratio must lie in [0, 1], got {}", self.ratio));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.alpha > 1.0) || !self.alpha.is_finite() {
            return bad(format!(
                "alpha must exceed 1 (the converge noise scale diverges at 1), got {}",
                self.alpha
            ));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.ratio >= 1.0 {
            return bad("ratio 1 leaves no budget for perturbation".into());
        }
        if self.gamma * self.ratio == 0.0 {
            return bad("gamma * ratio is 0: converge tests would need infinite noise".into());
        }
        Ok(())
    }
}

/// Quantities derived from [`Hyperparams`] and the domain size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub epsilon_r: f64,
    pub epsilon_p: f64,
    /// Converge threshold `1/ε_p`.
    pub theta: f64,
    /// Maximum depth of budgeted cuts (real-valued).
    pub kappa: f64,
    /// Budget per exponential-mechanism cut.
    pub epsilon_cut: f64,
    /// Laplace scale of converge tests.
    pub lambda: f64,
    /// Per-depth bias of the biased AE.
    pub delta: f64,
}

impl MechanismParams {
    /// Parameters of a view that only perturbs cell counts (no bisection).
    pub fn perturbation_only(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            epsilon_r: 0.0,
            epsilon_p: epsilon,
            theta: 0.0,
            kappa: 0.0,
            epsilon_cut: 0.0,
            lambda: 0.0,
            delta: 0.0,
        })
    }

    pub fn epsilon_total(&self) -> f64 {
        self.epsilon_r + self.epsilon_p
    }
}

pub fn derive_params(hp: &Hyperparams, total_domain_log2: f64) -> Result<MechanismParams> {
    hp.validate()?;
    if !(total_domain_log2 > 0.0) || !total_domain_log2.is_finite() {
        return Err(Error::Parameter(format!(
            "total domain must have more than one cell (log2 size {total_domain_log2})"
        )));
    }
    let (epsilon_r, epsilon_p) = exact_split(hp.epsilon_b, hp.epsilon_b * hp.ratio);
    let kappa = hp.beta * total_domain_log2;
    let theta = 1.0 / epsilon_p;
    let epsilon_cut = (1.0 - hp.gamma) * epsilon_r / kappa;
    let lambda = ((2.0 * hp.alpha - 1.0) / (hp.alpha - 1.0) + 1.0) * (2.0 / (hp.gamma * epsilon_r));
    let delta = lambda * hp.alpha.ln();
    Ok(MechanismParams {
        epsilon_r,
        epsilon_p,
        theta,
        kappa,
        epsilon_cut,
        lambda,
        delta,
    })
}

/// Splits `total` into `(a, b)` with `a ≈ part` and `a + b` evaluating to
/// exactly `total`. Both parts move by at most a few ulps.
pub(crate) fn exact_split(total: f64, part: f64) -> (f64, f64) {
    let mut a = part;
    for _ in 0..16 {
        let mut b = total - a;
        for _ in 0..4 {
            let sum = a + b;
            if sum == total {
                return (a, b);
            }
            b = if sum > total { b.next_down() } else { b.next_up() };
        }
        a = a.next_down();
    }
    (part, total - part)
}

/// Where the budget goes. Sums to `epsilon_b` exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetBreakdown {
    pub epsilon_b: f64,
    pub epsilon_r: f64,
    pub converge: f64,
    pub cut: f64,
    pub epsilon_p: f64,
}

impl BudgetBreakdown {
    pub fn new(hp: &Hyperparams, params: &MechanismParams) -> Self {
        let (converge, cut) = exact_split(params.epsilon_r, hp.gamma * params.epsilon_r);
        Self {
            epsilon_b: hp.epsilon_b,
            epsilon_r: params.epsilon_r,
            converge,
            cut,
            epsilon_p: params.epsilon_p,
        }
    }

    pub fn total(&self) -> f64 {
        (self.converge + self.cut) + self.epsilon_p
    }
}

impl std::fmt::Display for BudgetBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epsilon_b={} : epsilon_r={} (converge {}, cut {}), epsilon_p={}",
            fmt_eps(self.epsilon_b),
            fmt_eps(self.epsilon_r),
            fmt_eps(self.converge),
            fmt_eps(self.cut),
            fmt_eps(self.epsilon_p)
        )
    }
}

/// Rounds away float noise (0.8100000000000001 prints as 0.81).
fn fmt_eps(x: f64) -> String {
    let s = format!("{x:.12}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_owned()
}
