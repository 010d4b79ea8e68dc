//! Probabilistic error bounds for range answers, and the scatter factor ξ
//! they depend on.
//!
//! For a query touching blocks with weights `w_i = |B_i ∩ q| / |B_i|`, the
//! answer error is the weighted sum of each block's perturbation noise
//! (`Lap(1/ε_p)`) and aggregation error (whose upper bound is distributed as
//! `Lap(λ) + kδ + θ`). Chernoff bounds on these sums give, with probability
//! at least `1 - μ` each,
//!
//! ```text
//! error ≥ Θ_min(μ) = (1/t) (ln μ + Σ ln(1 - (w_i/ε_p)² t²))
//! error ≤ Θ_max(μ) = Σ ξ_i w_i (k_i δ + θ)
//!                    - (1/t) (ln μ + Σ ln(1 - (w_i/ε_p)² t²) + ln(1 - (ξ_i w_i λ)² t²))
//! ```
//!
//! for any admissible `t > 0`; `t` is tuned numerically for the tightest
//! bound. Any admissible `t` gives a valid bound, so an imperfect optimizer
//! only loosens it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::RandomStream;
use crate::partition::ae::aggregation_error;
use crate::partition::params::MechanismParams;
use crate::range::{IndexRange, RangeQuery};
use crate::tensor::Block;
use crate::view::PView;

/// Keeps `t` strictly inside the region where every logarithm is finite.
const T_MARGIN: f64 = 0.999;
const GOLDEN_ITERS: usize = 120;

/// Scatter factors for the blocks of a view.
#[derive(Clone, Debug, PartialEq)]
pub enum Xi {
    /// Same ξ for every block.
    Uniform(f64),
    /// One ξ per view block, in view order.
    PerBlock(Vec<f64>),
}

impl Default for Xi {
    fn default() -> Self {
        Xi::Uniform(1.0)
    }
}

/// One touched block's contribution to the bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundTerm {
    pub weight: f64,
    pub xi: f64,
    /// Bisection level `k` at which the block converged (root = 1).
    pub level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    /// Lower bound clamped at 0.
    pub theta_min: f64,
    /// Lower bound before clamping; usually negative, i.e. vacuous.
    pub theta_min_raw: f64,
    pub theta_max: f64,
    pub mu: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// ξ of each touched block.
    pub xi: Vec<f64>,
}

pub fn error_bounds(view: &PView, q: &RangeQuery, mu: f64, xi: &Xi) -> Result<ErrorBound> {
    q.validate(&view.schema)?;
    if let Xi::PerBlock(v) = xi {
        if v.len() != view.blocks.len() {
            return Err(Error::Parameter(format!(
                "{} xi values for {} blocks",
                v.len(),
                view.blocks.len()
            )));
        }
    }
    let terms: Vec<BoundTerm> = view
        .blocks
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            let weight = b.weight(q);
            (weight > 0.0).then(|| BoundTerm {
                weight,
                xi: match xi {
                    Xi::Uniform(x) => *x,
                    Xi::PerBlock(v) => v[i],
                },
                level: f64::from(b.depth) + 1.0,
            })
        })
        .collect();
    bounds_from_terms(&terms, &view.params, mu)
}

fn check_inputs(terms: &[BoundTerm], mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Parameter(format!("mu must lie in (0, 1), got {mu}")));
    }
    if let Some(t) = terms.iter().find(|t| !(t.xi > 0.0) || !t.xi.is_finite()) {
        return Err(Error::Parameter(format!("xi must be positive, got {}", t.xi)));
    }
    Ok(())
}

/// `ln μ + Σ ln(1 - (w/ε_p)² t²) [+ Σ ln(1 - (ξ w λ)² t²)]`, divided by `t`.
fn log_mgf_term(terms: &[BoundTerm], params: &MechanismParams, mu: f64, t: f64, upper: bool) -> f64 {
    let mut acc = mu.ln();
    for term in terms {
        let a = term.weight / params.epsilon_p * t;
        acc += (1.0 - a * a).ln();
        if upper {
            let b = term.xi * term.weight * params.lambda * t;
            acc += (1.0 - b * b).ln();
        }
    }
    acc / t
}

fn lower_t_limit(params: &MechanismParams) -> f64 {
    T_MARGIN * params.epsilon_p
}

fn upper_t_limit(terms: &[BoundTerm], params: &MechanismParams) -> f64 {
    let b_max = terms
        .iter()
        .map(|t| t.xi * t.weight * params.lambda)
        .fold(0.0, f64::max);
    let limit = if b_max > 0.0 {
        params.epsilon_p.min(1.0 / b_max)
    } else {
        params.epsilon_p
    };
    T_MARGIN * limit
}

fn mean_ae_term(terms: &[BoundTerm], params: &MechanismParams) -> f64 {
    terms
        .iter()
        .map(|t| t.xi * t.weight * (t.level * params.delta + params.theta))
        .sum()
}

/// Raw lower bound at a fixed `t`.
pub fn theta_min_at(terms: &[BoundTerm], params: &MechanismParams, mu: f64, t: f64) -> f64 {
    log_mgf_term(terms, params, mu, t, false)
}

/// Upper bound at a fixed `t`.
pub fn theta_max_at(terms: &[BoundTerm], params: &MechanismParams, mu: f64, t: f64) -> f64 {
    mean_ae_term(terms, params) - log_mgf_term(terms, params, mu, t, true)
}

/// Bounds with `t` tuned separately for each side.
pub fn bounds_from_terms(terms: &[BoundTerm], params: &MechanismParams, mu: f64) -> Result<ErrorBound> {
    check_inputs(terms, mu)?;
    if !(params.epsilon_p > 0.0) {
        return Err(Error::Parameter("view has no perturbation budget".into()));
    }
    let (t_min, g_min) = maximize(|t| log_mgf_term(terms, params, mu, t, false), lower_t_limit(params));
    let (t_max, g_max) = maximize(|t| log_mgf_term(terms, params, mu, t, true), upper_t_limit(terms, params));
    Ok(ErrorBound {
        theta_min: g_min.max(0.0),
        theta_min_raw: g_min,
        theta_max: mean_ae_term(terms, params) - g_max,
        mu,
        t_min,
        t_max,
        xi: terms.iter().map(|t| t.xi).collect(),
    })
}

/// Golden-section search for the maximum of `f` over `(0, hi]`, carried out
/// on `ln t`.
fn maximize(f: impl Fn(f64) -> f64, hi: f64) -> (f64, f64) {
    let (mut a, mut b) = ((hi * 1e-9).ln(), hi.ln());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let eval = |s: f64| f(s.exp());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    for _ in 0..GOLDEN_ITERS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d);
        }
    }
    let mut best = if fc >= fd { (c.exp(), fc) } else { (d.exp(), fd) };
    let end = f(hi);
    if end > best.1 {
        best = (hi, end);
    }
    best
}

/// Number of contiguous sub-blocks of `block`.
pub fn sub_block_count(block: &Block) -> f64 {
    block
        .ranges()
        .iter()
        .map(|r| {
            let e = r.extent() as f64;
            e * (e + 1.0) / 2.0
        })
        .product()
}

/// Blocks with at most this many sub-blocks get the exhaustive treatment in
/// [`estimate_xi`].
pub const EXHAUSTIVE_XI_LIMIT: f64 = 1e4;

/// Smallest ξ for which `block` is ξ-uniformly scattered, i.e. the largest
/// ratio of a sub-block's AE density to the block's. Needs raw counts, so
/// it is an evaluation helper only. Returns 1 for blocks with zero AE.
pub fn estimate_xi(block: &Block, samples: usize, rng: &mut RandomStream) -> f64 {
    if sub_block_count(block) <= EXHAUSTIVE_XI_LIMIT {
        estimate_xi_exhaustive(block)
    } else {
        estimate_xi_sampled(block, samples, rng)
    }
}

pub fn estimate_xi_exhaustive(block: &Block) -> f64 {
    let Some(density) = ae_density(block) else {
        return 1.0;
    };
    let per_axis: Vec<Vec<IndexRange>> = block
        .ranges()
        .iter()
        .map(|r| {
            (r.start..=r.end)
                .flat_map(|s| (s..=r.end).map(move |e| IndexRange { start: s, end: e }))
                .collect()
        })
        .collect();
    let mut best: f64 = 1.0;
    let mut idx = vec![0usize; per_axis.len()];
    let mut ranges: Vec<IndexRange> = per_axis.iter().map(|v| v[0]).collect();
    loop {
        best = best.max(sub_density(block, &ranges) / density);
        // odometer over the per-axis sub-range lists
        let mut axis = per_axis.len();
        loop {
            if axis == 0 {
                return best;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < per_axis[axis].len() {
                ranges[axis] = per_axis[axis][idx[axis]];
                break;
            }
            idx[axis] = 0;
            ranges[axis] = per_axis[axis][0];
        }
    }
}

/// Lower estimate of ξ from `samples` random sub-blocks (plus the block
/// itself).
pub fn estimate_xi_sampled(block: &Block, samples: usize, rng: &mut RandomStream) -> f64 {
    let Some(density) = ae_density(block) else {
        return 1.0;
    };
    let mut best: f64 = 1.0;
    for _ in 0..samples {
        let ranges: Vec<IndexRange> = block
            .ranges()
            .iter()
            .map(|r| {
                let n = r.extent() as usize;
                let (a, b) = (rng.below(n) as u32, rng.below(n) as u32);
                IndexRange {
                    start: r.start + a.min(b),
                    end: r.start + a.max(b),
                }
            })
            .collect();
        best = best.max(sub_density(block, &ranges) / density);
    }
    best
}

fn ae_density(block: &Block) -> Option<f64> {
    let ae = aggregation_error(block);
    (ae > 0.0).then(|| ae / block.size())
}

fn sub_density(block: &Block, ranges: &[IndexRange]) -> f64 {
    let sub = block.restrict(ranges).expect("sub-ranges lie inside the block");
    aggregation_error(&sub) / sub.size()
}
