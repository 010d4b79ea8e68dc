//! Identity baseline: every cell is its own block and gets `Lap(1/ε)` noise.

use crate::error::{Error, Result};
use crate::mechanisms::{sample_laplace, RandomStream};
use crate::partition::params::MechanismParams;
use crate::range::IndexRange;
use crate::tensor::{advance, CountTensor};
use crate::view::{BuildMeta, PView, ViewBlock, ViewKind};

/// Largest domain the baseline materializes by default.
pub const DEFAULT_DENSE_LIMIT: u64 = 10_000_000;

/// Cells are emitted in row-major order and perturbed sequentially from
/// `stream`.
pub fn identity_view(
    tensor: &CountTensor,
    epsilon: f64,
    stream: &RandomStream,
    noise_free: bool,
    dense_limit: u64,
) -> Result<PView> {
    let schema = tensor.schema();
    let cells = schema.total_domain().filter(|&n| n <= dense_limit).ok_or_else(|| {
        Error::DomainTooLarge {
            cells: format!("2^{:.1}", schema.total_domain_log2()),
            limit: dense_limit,
        }
    })?;
    let params = MechanismParams::perturbation_only(epsilon)?;
    let domains = schema.domain_sizes();
    let mut rng = stream.clone();
    let mut coords = vec![0u32; domains.len()];
    let mut blocks = Vec::with_capacity(cells as usize);
    for _ in 0..cells {
        let noise = if noise_free {
            0.0
        } else {
            sample_laplace(1.0 / epsilon, &mut rng)?
        };
        blocks.push(ViewBlock {
            ranges: coords.iter().map(|&c| IndexRange { start: c, end: c }).collect(),
            noisy_sum: tensor.get(&coords) as f64 + noise,
            depth: 0,
        });
        advance(&mut coords, &domains);
    }
    Ok(PView {
        kind: ViewKind::Identity,
        schema: schema.clone(),
        params,
        meta: BuildMeta::new(Some(stream.seed())),
        blocks,
    })
}
