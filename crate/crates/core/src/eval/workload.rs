//! Query workload generators and the RMSE metric.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::RandomStream;
use crate::range::{IndexRange, RangeQuery};
use crate::schema::Schema;
use crate::tensor::CountTensor;
use crate::view::PView;

#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub name: String,
    pub queries: Vec<RangeQuery>,
}

/// Shape of the range placed on each selected attribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    /// `[i, i]`
    Point,
    /// `[0, i]`
    Prefix,
    /// any `[s, e]`
    Interval,
}

impl Shape {
    fn count(self, n: u32) -> u128 {
        let n = u128::from(n);
        match self {
            Shape::Point | Shape::Prefix => n,
            Shape::Interval => n * (n + 1) / 2,
        }
    }

    fn decode(self, n: u32, mut ordinal: u128) -> IndexRange {
        match self {
            Shape::Point => IndexRange {
                start: ordinal as u32,
                end: ordinal as u32,
            },
            Shape::Prefix => IndexRange {
                start: 0,
                end: ordinal as u32,
            },
            Shape::Interval => {
                for s in 0..n {
                    let len = u128::from(n - s);
                    if ordinal < len {
                        return IndexRange {
                            start: s,
                            end: s + ordinal as u32,
                        };
                    }
                    ordinal -= len;
                }
                unreachable!("ordinal below the interval count")
            }
        }
    }
}

fn check_k(schema: &Schema, k: usize) -> Result<()> {
    if k == 0 || k > schema.dims() {
        return Err(Error::Parameter(format!(
            "k must lie in [1, {}], got {k}",
            schema.dims()
        )));
    }
    Ok(())
}

/// All `k`-subsets of `0..d` in lexicographic order.
fn combinations(d: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + d - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Every query of a family: one subset of attributes, one shaped range on
/// each selected attribute, full ranges elsewhere. Enumerated in full when
/// the family has at most `cap` members, otherwise `cap` members are drawn
/// uniformly without replacement.
fn family(
    schema: &Schema,
    k: usize,
    shape: Shape,
    cap: Option<usize>,
    rng: Option<&mut RandomStream>,
) -> Result<Vec<RangeQuery>> {
    check_k(schema, k)?;
    let domains = schema.domain_sizes();
    let subsets = combinations(schema.dims(), k);
    let sizes: Vec<u128> = subsets
        .iter()
        .map(|s| {
            s.iter()
                .fold(1u128, |acc, &a| acc.saturating_mul(shape.count(domains[a])))
        })
        .collect();
    let total = sizes.iter().fold(0u128, |a, &b| a.saturating_add(b));

    let decode = |mut ordinal: u128| -> RangeQuery {
        let mut si = 0;
        while ordinal >= sizes[si] {
            ordinal -= sizes[si];
            si += 1;
        }
        let mut ranges: Vec<IndexRange> = domains.iter().map(|&n| IndexRange::full(n)).collect();
        for &a in subsets[si].iter().rev() {
            let c = shape.count(domains[a]);
            ranges[a] = shape.decode(domains[a], ordinal % c);
            ordinal /= c;
        }
        RangeQuery::new(schema, ranges).expect("generated ranges are valid")
    };

    match cap {
        Some(cap) if total > cap as u128 => {
            let rng = rng.ok_or_else(|| {
                Error::Parameter("subsampling a capped workload needs a random stream".into())
            })?;
            let mut picked = BTreeSet::new();
            while picked.len() < cap {
                let ordinal = (rng.uniform() * total as f64) as u128;
                picked.insert(ordinal.min(total - 1));
            }
            Ok(picked.into_iter().map(decode).collect())
        }
        _ => Ok((0..total).map(decode).collect()),
    }
}

/// All k-way marginals: one point per selected attribute.
pub fn kway_marginal(
    schema: &Schema,
    k: usize,
    cap: Option<usize>,
    rng: Option<&mut RandomStream>,
) -> Result<Workload> {
    Ok(Workload {
        name: format!("{k}-way marginal"),
        queries: family(schema, k, Shape::Point, cap, rng)?,
    })
}

/// k-way ranges: any contiguous interval per selected attribute, at most
/// `limit` queries.
pub fn kway_range(schema: &Schema, k: usize, limit: usize, rng: &mut RandomStream) -> Result<Workload> {
    if limit == 0 {
        return Err(Error::Parameter("k-way range workload needs a positive limit".into()));
    }
    Ok(Workload {
        name: format!("{k}-way all range"),
        queries: family(schema, k, Shape::Interval, Some(limit), Some(rng))?,
    })
}

/// Prefix-kD: `[0, e]` on each selected attribute.
pub fn prefix(
    schema: &Schema,
    k: usize,
    cap: Option<usize>,
    rng: Option<&mut RandomStream>,
) -> Result<Workload> {
    Ok(Workload {
        name: format!("prefix-{k}D"),
        queries: family(schema, k, Shape::Prefix, cap, rng)?,
    })
}

/// Random-kD: per query, a uniform `k`-subset of attributes and a uniform
/// interval on each of them.
pub fn random_range(schema: &Schema, k: usize, count: usize, rng: &mut RandomStream) -> Result<Workload> {
    check_k(schema, k)?;
    if count == 0 {
        return Err(Error::Parameter("random workload needs a positive count".into()));
    }
    let domains = schema.domain_sizes();
    let d = schema.dims();
    let queries = (0..count)
        .map(|_| {
            let mut attrs: Vec<usize> = (0..d).collect();
            for i in 0..k {
                let j = i + rng.below(d - i);
                attrs.swap(i, j);
            }
            let mut ranges: Vec<IndexRange> = domains.iter().map(|&n| IndexRange::full(n)).collect();
            for &a in &attrs[..k] {
                let c = Shape::Interval.count(domains[a]);
                let ordinal = ((rng.uniform() * c as f64) as u128).min(c - 1);
                ranges[a] = Shape::Interval.decode(domains[a], ordinal);
            }
            RangeQuery::new(schema, ranges).expect("generated ranges are valid")
        })
        .collect();
    Ok(Workload {
        name: format!("random-{k}D"),
        queries,
    })
}

/// Serializable description of a workload family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSpec {
    Marginal {
        k: usize,
        #[serde(default)]
        cap: Option<usize>,
    },
    KwayRange {
        k: usize,
        limit: usize,
    },
    Prefix {
        k: usize,
        #[serde(default)]
        cap: Option<usize>,
    },
    RandomRange {
        k: usize,
        count: usize,
    },
}

impl WorkloadSpec {
    pub fn generate(&self, schema: &Schema, rng: &mut RandomStream) -> Result<Workload> {
        match *self {
            WorkloadSpec::Marginal { k, cap } => kway_marginal(schema, k, cap, Some(rng)),
            WorkloadSpec::KwayRange { k, limit } => kway_range(schema, k, limit, rng),
            WorkloadSpec::Prefix { k, cap } => prefix(schema, k, cap, Some(rng)),
            WorkloadSpec::RandomRange { k, count } => random_range(schema, k, count, rng),
        }
    }
}

/// Exact answers of every query, computed once per workload.
pub fn exact_answers(workload: &Workload, tensor: &CountTensor) -> Result<Vec<f64>> {
    workload
        .queries
        .par_iter()
        .map(|q| tensor.answer_exact(q).map(|n| n as f64))
        .collect()
}

/// `sqrt(mean((exact - noisy)^2))` against precomputed exact answers.
pub fn rmse_against(workload: &Workload, exact: &[f64], view: &PView) -> Result<f64> {
    if workload.queries.is_empty() {
        return Err(Error::Parameter("empty workload".into()));
    }
    let sq: f64 = workload
        .queries
        .par_iter()
        .zip(exact.par_iter())
        .map(|(q, &truth)| view.answer(q).map(|a| (truth - a).powi(2)))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok((sq / workload.queries.len() as f64).sqrt())
}

pub fn rmse(workload: &Workload, tensor: &CountTensor, view: &PView) -> Result<f64> {
    rmse_against(workload, &exact_answers(workload, tensor)?, view)
}
