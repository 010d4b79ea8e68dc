//! The released view: disjoint blocks covering the domain, each carrying a
//! noisy record count. Range counts are answered by spreading every noisy
//! block sum uniformly over the block's cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::params::MechanismParams;
use crate::range::{IndexRange, RangeQuery};
use crate::schema::Schema;

/// How a view was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    /// Recursive bisection followed by per-block perturbation.
    Bisection,
    /// One block per cell, every cell perturbed.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewBlock {
    pub ranges: Vec<IndexRange>,
    pub noisy_sum: f64,
    /// Number of cuts between the root and the block.
    pub depth: u32,
}

impl ViewBlock {
    pub fn size(&self) -> f64 {
        self.ranges.iter().map(|r| r.extent() as f64).product()
    }

    /// Fraction of the block's cells inside the query: `|B ∩ c_q| / |B|`.
    pub fn weight(&self, q: &RangeQuery) -> f64 {
        let mut w = 1.0;
        for (r, qr) in self.ranges.iter().zip(q.ranges()) {
            let o = r.overlap(qr);
            if o == 0 {
                return 0.0;
            }
            w *= o as f64 / r.extent() as f64;
        }
        w
    }

    pub fn density(&self) -> f64 {
        self.noisy_sum / self.size()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub seed: Option<u64>,
    /// Unix seconds; left empty unless the builder supplies one so that
    /// rebuilding with the same seed is byte-identical.
    pub built_at: Option<u64>,
    pub engine_version: String,
}

impl BuildMeta {
    pub fn new(seed: Option<u64>) -> Self {
        Self {
            seed,
            built_at: None,
            engine_version: env!("CARGO_PKG_VERSION").to_owned(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PView {
    pub kind: ViewKind,
    pub schema: Schema,
    pub params: MechanismParams,
    pub meta: BuildMeta,
    pub blocks: Vec<ViewBlock>,
}

impl PView {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Noisy answer `Σ_i w_i S̃_i` in `O(m·d)`.
    pub fn answer(&self, q: &RangeQuery) -> Result<f64> {
        q.validate(&self.schema)?;
        Ok(self
            .blocks
            .iter()
            .map(|b| b.weight(q) * b.noisy_sum)
            .sum())
    }

    /// Number of blocks intersecting the query.
    pub fn blocks_touched(&self, q: &RangeQuery) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.ranges.iter().zip(q.ranges()).all(|(r, qr)| r.overlap(qr) > 0))
            .count()
    }

    pub fn total_noisy_count(&self) -> f64 {
        self.blocks.iter().map(|b| b.noisy_sum).sum()
    }

    /// Cheap structural checks: ranges fit the schema and block sizes add
    /// up to the domain size.
    pub fn validate(&self) -> Result<()> {
        let domains = self.schema.domain_sizes();
        if self.blocks.is_empty() {
            return Err(Error::Malformed("view has no blocks".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.ranges.len() != domains.len() {
                return Err(Error::Malformed(format!("block {i} has wrong dimensionality")));
            }
            if b.ranges.iter().zip(&domains).any(|(r, &n)| r.start > r.end || r.end >= n) {
                return Err(Error::Malformed(format!("block {i} lies outside the domain")));
            }
            if !b.noisy_sum.is_finite() {
                return Err(Error::Malformed(format!("block {i} has a non-finite sum")));
            }
        }
        let covered: f64 = self.blocks.iter().map(ViewBlock::size).sum();
        let domain: f64 = domains.iter().map(|&n| f64::from(n)).product();
        if (covered - domain).abs() > domain * 1e-12 {
            return Err(Error::Malformed(format!(
                "blocks cover {covered} cells, domain has {domain}"
            )));
        }
        Ok(())
    }

    /// Pairwise disjointness. Together with [`PView::validate`] this implies
    /// the blocks exactly cover the domain. Worst case quadratic in `m`.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut order: Vec<usize> = (0..self.blocks.len()).collect();
        order.sort_by_key(|&i| self.blocks[i].ranges[0].start);
        let mut active: Vec<usize> = Vec::new();
        for &i in &order {
            let bi = &self.blocks[i];
            active.retain(|&j| self.blocks[j].ranges[0].end >= bi.ranges[0].start);
            for &j in &active {
                let bj = &self.blocks[j];
                if bi.ranges.iter().zip(&bj.ranges).all(|(a, b)| a.overlap(b) > 0) {
                    return Err(Error::Malformed(format!("blocks {j} and {i} overlap")));
                }
            }
            active.push(i);
        }
        Ok(())
    }
}
