//! Recursive bisection: noisy converge tests decide when a block stops,
//! exponential-mechanism cuts decide where it splits.
//!
//! Randomness layout for a build seeded with `s` (see
//! [`crate::mechanisms`] for how streams are keyed):
//!
//! * the tree node reached by the child-index path `p` (0 = left,
//!   1 = right) owns stream `(s, [0] ++ p)`; its converge draw and then its
//!   cut draw come from the sub-stream `(s, [0] ++ p ++ [2])`;
//! * block `i` of the canonically sorted partition is perturbed with stream
//!   `(s, [1, i])`.
//!
//! Subtrees never share a stream, so processing them in parallel yields the
//! same view as a sequential run.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mechanisms::{exponential_choice, sample_laplace, RandomStream};
use crate::partition::ae::{
    ae_sensitivity, aggregation_error, biased_ae, candidate_count, cut_qualities, nth_candidate,
    AE_SENSITIVITY_SUP,
};
use crate::partition::params::{derive_params, BudgetBreakdown, Hyperparams, MechanismParams};
use crate::range::IndexRange;
use crate::schema::Schema;
use crate::tensor::{Block, CountTensor};
use crate::view::{BuildMeta, PView, ViewBlock, ViewKind};

const NODE_DRAWS: u64 = 2;
const STREAM_BISECTION: u64 = 0;
const STREAM_PERTURBATION: u64 = 1;

/// Blocks with fewer stored cells than this are never split off to another
/// thread.
const PARALLEL_MIN_CELLS: usize = 512;

/// Sensitivity used to scale cut qualities in the exponential mechanism.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMode {
    /// `Δ_AE = 2`, valid for every block size.
    #[default]
    Supremum,
    /// `Δ_AE = 2(1 - 1/|B|)` of the block being cut.
    PerBlock,
}

#[derive(Clone, Debug, Default)]
pub struct BisectionOptions {
    /// Test hook: Laplace draws return 0 and budgeted cuts take the best
    /// quality. The output is not private.
    pub noise_free: bool,
    pub sensitivity: SensitivityMode,
    /// Keep a log of every cut and converged leaf.
    pub record_cuts: bool,
    /// Process subtrees on the rayon pool.
    pub parallel: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Exponential,
    /// Noise-free stand-in for the exponential mechanism.
    Argmax,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutRecord {
    /// Child-index path of the block that was cut.
    pub path: Vec<u8>,
    pub depth: u32,
    pub axis: usize,
    pub position: u32,
    pub selection: Selection,
    /// Budget consumed by this cut.
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafRecord {
    pub path: Vec<u8>,
    pub ranges: Vec<IndexRange>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CutLog {
    pub cuts: Vec<CutRecord>,
    pub leaves: Vec<LeafRecord>,
}

/// Converged blocks, pairwise disjoint and covering the root, sorted by
/// their ranges.
#[derive(Clone, Debug)]
pub struct Partition {
    pub blocks: Vec<Block>,
    pub cut_log: Option<CutLog>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutChoice {
    pub axis: usize,
    pub position: u32,
    pub selection: Selection,
    pub epsilon: f64,
}

/// The bisection level `k` of a block: the root is visited at level 1.
pub fn level(block: &Block) -> u32 {
    block.depth() + 1
}

pub struct Bisector<'a> {
    params: &'a MechanismParams,
    options: &'a BisectionOptions,
}

#[derive(Default)]
struct Collected {
    blocks: Vec<Block>,
    log: CutLog,
}

impl Collected {
    fn merge(mut self, other: Collected) -> Collected {
        self.blocks.extend(other.blocks);
        self.log.cuts.extend(other.log.cuts);
        self.log.leaves.extend(other.log.leaves);
        self
    }
}

impl<'a> Bisector<'a> {
    pub fn new(params: &'a MechanismParams, options: &'a BisectionOptions) -> Self {
        Self { params, options }
    }

    /// `BAE(B) + Lap(λ) ≤ θ`, with one Laplace draw from `rng`.
    pub fn converge_test(&self, block: &Block, rng: &mut RandomStream) -> Result<bool> {
        let bae = biased_ae(aggregation_error(block), level(block), self.params);
        let noise = if self.options.noise_free {
            0.0
        } else {
            sample_laplace(self.params.lambda, rng)?
        };
        Ok(bae + noise <= self.params.theta)
    }

    /// Picks a cut, or `None` when the block is atomic.
    pub fn random_cut(&self, block: &Block, rng: &mut RandomStream) -> Result<Option<CutChoice>> {
        let n = candidate_count(block);
        if n == 0 {
            return Ok(None);
        }
        let budgeted = f64::from(level(block)) <= self.params.kappa && self.params.epsilon_cut > 0.0;
        if !budgeted {
            let (axis, position) = nth_candidate(block, rng.below(n)).expect("index below count");
            return Ok(Some(CutChoice {
                axis,
                position,
                selection: Selection::Uniform,
                epsilon: 0.0,
            }));
        }

        let candidates = cut_qualities(block);
        let qualities: Vec<f64> = candidates.iter().map(|c| c.quality).collect();
        let (index, selection) = if self.options.noise_free {
            let best = qualities
                .iter()
                .enumerate()
                .fold(0, |best, (i, &q)| if q > qualities[best] { i } else { best });
            (best, Selection::Argmax)
        } else {
            let delta_ae = match self.options.sensitivity {
                SensitivityMode::Supremum => AE_SENSITIVITY_SUP,
                SensitivityMode::PerBlock => ae_sensitivity(block.size())?,
            };
            let delta_q = 2.0 * delta_ae;
            let i = exponential_choice(&qualities, self.params.epsilon_cut, delta_q, rng)?;
            (i, Selection::Exponential)
        };
        let c = candidates[index];
        Ok(Some(CutChoice {
            axis: c.axis,
            position: c.position,
            selection,
            epsilon: self.params.epsilon_cut,
        }))
    }

    /// Runs the bisection from `root`, drawing from `stream` and its
    /// descendants.
    pub fn run(&self, root: Block, stream: &RandomStream) -> Result<Partition> {
        let mut out = self.visit(root, stream.clone(), Vec::new())?;
        out.blocks.sort_by(|a, b| a.ranges().cmp(b.ranges()));
        let cut_log = self.options.record_cuts.then(|| {
            let mut log = out.log;
            log.leaves.sort_by(|a, b| a.ranges.cmp(&b.ranges));
            log.cuts.sort_by(|a, b| a.path.cmp(&b.path));
            log
        });
        Ok(Partition {
            blocks: out.blocks,
            cut_log,
        })
    }

    fn visit(&self, block: Block, node: RandomStream, path: Vec<u8>) -> Result<Collected> {
        // atomic blocks converge without a draw; an uncuttable block could
        // otherwise fail converge tests forever
        let mut draws = node.child(NODE_DRAWS);
        if block.is_atomic() || self.converge_test(&block, &mut draws)? {
            return Ok(self.leaf(block, path));
        }
        let cut = self
            .random_cut(&block, &mut draws)?
            .expect("non-atomic block has a cut");
        let (left, right) = block.split(cut.axis, cut.position)?;
        let mut collected = Collected::default();
        if self.options.record_cuts {
            collected.log.cuts.push(CutRecord {
                path: path.clone(),
                depth: block.depth(),
                axis: cut.axis,
                position: cut.position,
                selection: cut.selection,
                epsilon: cut.epsilon,
            });
        }
        let big = block.nonzero_cells() >= PARALLEL_MIN_CELLS;
        drop(block);

        let mut left_path = path.clone();
        left_path.push(0);
        let mut right_path = path;
        right_path.push(1);
        let (l, r) = if self.options.parallel && big {
            rayon::join(
                || self.visit(left, node.child(0), left_path),
                || self.visit(right, node.child(1), right_path),
            )
        } else {
            (
                self.visit(left, node.child(0), left_path),
                self.visit(right, node.child(1), right_path),
            )
        };
        Ok(collected.merge(l?).merge(r?))
    }

    fn leaf(&self, block: Block, path: Vec<u8>) -> Collected {
        let mut c = Collected::default();
        if self.options.record_cuts {
            c.log.leaves.push(LeafRecord {
                path,
                ranges: block.ranges().to_vec(),
            });
        }
        c.blocks.push(block);
        c
    }
}

/// Adds independent `Lap(1/ε_p)` noise to every block sum. Block `i` draws
/// from `stream.child(i)`.
pub fn perturb(
    partition: &Partition,
    schema: &Schema,
    params: &MechanismParams,
    stream: &RandomStream,
    noise_free: bool,
) -> Result<PView> {
    let scale = 1.0 / params.epsilon_p;
    let blocks = partition
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let noise = if noise_free {
                0.0
            } else {
                sample_laplace(scale, &mut stream.child(i as u64))?
            };
            Ok(ViewBlock {
                ranges: b.ranges().to_vec(),
                noisy_sum: b.sum() as f64 + noise,
                depth: b.depth(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PView {
        kind: ViewKind::Bisection,
        schema: schema.clone(),
        params: *params,
        meta: BuildMeta::new(None),
        blocks,
    })
}

/// Everything a build produces.
#[derive(Clone, Debug)]
pub struct Build {
    pub view: PView,
    pub partition: Partition,
    pub budget: BudgetBreakdown,
}

/// Full pipeline: derive parameters, bisect, perturb.
pub fn build_view(
    tensor: &CountTensor,
    hp: &Hyperparams,
    seed: u64,
    options: &BisectionOptions,
) -> Result<Build> {
    let schema = tensor.schema();
    let params = derive_params(hp, schema.total_domain_log2())?;
    let root_stream = RandomStream::new(seed);
    let partition = Bisector::new(&params, options)
        .run(Block::root(tensor), &root_stream.child(STREAM_BISECTION))?;
    let mut view = perturb(
        &partition,
        schema,
        &params,
        &root_stream.child(STREAM_PERTURBATION),
        options.noise_free,
    )?;
    view.meta = BuildMeta::new(Some(seed));
    Ok(Build {
        view,
        partition,
        budget: BudgetBreakdown::new(hp, &params),
    })
}
