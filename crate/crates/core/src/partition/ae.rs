//! Aggregation error of blocks and the cut quality built on it.
//!
//! `AE(B) = Σ_{x ∈ B} |x - S/|B||` is evaluated sparsely: every implicit
//! zero cell contributes exactly the mean.

use crate::error::{Error, Result};
use crate::partition::params::MechanismParams;
use crate::tensor::Block;

pub fn aggregation_error(block: &Block) -> f64 {
    sparse_ae(block.counts().iter().copied(), block.sum(), block.size())
}

fn sparse_ae(counts: impl ExactSizeIterator<Item = u64>, sum: u64, size: f64) -> f64 {
    let nonzero = counts.len() as f64;
    let mean = sum as f64 / size;
    let spread: f64 = counts.map(|x| (x as f64 - mean).abs()).sum();
    spread + (size - nonzero) * mean
}

/// `max(θ + 2 - δ, AE - kδ)` for a block visited at level `k`.
pub fn biased_ae(ae: f64, k: u32, params: &MechanismParams) -> f64 {
    let floor = params.theta + 2.0 - params.delta;
    floor.max(ae - f64::from(k) * params.delta)
}

/// L1 sensitivity of AE for a block of `size` cells: `2(1 - 1/size)`.
pub fn ae_sensitivity(size: f64) -> Result<f64> {
    if !(size >= 1.0) {
        return Err(Error::Parameter(format!("block size must be at least 1, got {size}")));
    }
    Ok(2.0 * (1.0 - 1.0 / size))
}

/// Size-independent supremum of [`ae_sensitivity`].
pub const AE_SENSITIVITY_SUP: f64 = 2.0;

/// `Q(B, p) = -(AE(B_L) + AE(B_R))` for the cut after `position` on `axis`.
pub fn quality(block: &Block, axis: usize, position: u32) -> Result<f64> {
    let (l, r) = block.split(axis, position)?;
    Ok(-(aggregation_error(&l) + aggregation_error(&r)))
}

/// A cut `[start, position] | [position + 1, end]` on `axis`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutCandidate {
    pub axis: usize,
    pub position: u32,
    pub quality: f64,
}

/// Number of valid cuts: `Σ_i (extent_i - 1)`.
pub fn candidate_count(block: &Block) -> usize {
    block.ranges().iter().map(|r| (r.extent() - 1) as usize).sum()
}

/// The `index`-th valid cut in axis-major, position-ascending order.
pub fn nth_candidate(block: &Block, mut index: usize) -> Option<(usize, u32)> {
    for (axis, r) in block.ranges().iter().enumerate() {
        let n = (r.extent() - 1) as usize;
        if index < n {
            return Some((axis, r.start + index as u32));
        }
        index -= n;
    }
    None
}

/// Qualities of every valid cut, axis-major then by position.
///
/// One sweep per axis: cells are visited in cut-coordinate order and moved
/// from the right child into the left one, and both children keep Fenwick
/// trees over the (rank-compressed) cell values so the `|x - mean|` sum is
/// answered per candidate in logarithmic time.
pub fn cut_qualities(block: &Block) -> Vec<CutCandidate> {
    let mut out = Vec::with_capacity(candidate_count(block));
    if block.is_atomic() {
        return out;
    }

    let mut values: Vec<u64> = block.counts().to_vec();
    values.sort_unstable();
    values.dedup();
    let ranks: Vec<usize> = block
        .counts()
        .iter()
        .map(|c| values.binary_search(c).expect("value present"))
        .collect();
    let coords: Vec<&[u32]> = block.cells().map(|(c, _)| c).collect();

    let mut total = ValueTree::new(values.len());
    for (i, &r) in ranks.iter().enumerate() {
        total.add(r, block.counts()[i]);
    }

    let size = block.size();
    for (axis, range) in block.ranges().iter().enumerate() {
        if range.start == range.end {
            continue;
        }
        let slab = size / range.extent() as f64;
        let mut order: Vec<usize> = (0..ranks.len()).collect();
        order.sort_by_key(|&i| coords[i][axis]);

        let mut left = ValueTree::new(values.len());
        let mut right = total.clone();
        let mut next = 0;
        for position in range.start..range.end {
            while next < order.len() && coords[order[next]][axis] <= position {
                let i = order[next];
                left.add(ranks[i], block.counts()[i]);
                right.remove(ranks[i], block.counts()[i]);
                next += 1;
            }
            let left_size = slab * f64::from(position - range.start + 1);
            let right_size = size - left_size;
            let ae = left.ae(&values, left_size) + right.ae(&values, right_size);
            out.push(CutCandidate {
                axis,
                position,
                quality: -ae,
            });
        }
    }
    out
}

/// Fenwick trees of cell counts and value sums indexed by value rank.
#[derive(Clone)]
struct ValueTree {
    cells: Vec<i64>,
    sums: Vec<i128>,
    n_cells: i64,
    total: i128,
}

impl ValueTree {
    fn new(n: usize) -> Self {
        Self {
            cells: vec![0; n + 1],
            sums: vec![0; n + 1],
            n_cells: 0,
            total: 0,
        }
    }

    fn update(&mut self, rank: usize, dc: i64, ds: i128) {
        let mut i = rank + 1;
        while i < self.cells.len() {
            self.cells[i] += dc;
            self.sums[i] += ds;
            i += i & i.wrapping_neg();
        }
        self.n_cells += dc;
        self.total += ds;
    }

    fn add(&mut self, rank: usize, value: u64) {
        self.update(rank, 1, i128::from(value));
    }

    fn remove(&mut self, rank: usize, value: u64) {
        self.update(rank, -1, -i128::from(value));
    }

    /// Cells and value sum over ranks `< upto`.
    fn prefix(&self, upto: usize) -> (i64, i128) {
        let (mut c, mut s) = (0, 0);
        let mut i = upto;
        while i > 0 {
            c += self.cells[i];
            s += self.sums[i];
            i &= i - 1;
        }
        (c, s)
    }

    fn ae(&self, values: &[u64], size: f64) -> f64 {
        let mean = self.total as f64 / size;
        let below = values.partition_point(|&v| (v as f64) <= mean);
        let (c_le, s_le) = self.prefix(below);
        let (c_gt, s_gt) = (self.n_cells - c_le, self.total - s_le);
        let zeros = size - self.n_cells as f64;
        (mean * c_le as f64 - s_le as f64) + (s_gt as f64 - mean * c_gt as f64) + zeros * mean
    }
}
