//! Synthetic datasets over index domains.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::RandomStream;
use crate::schema::Schema;
use crate::tensor::CountTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticSpec {
    /// Records spread uniformly over the domain.
    Uniform { domains: Vec<u32>, records: u64 },
    /// Isotropic Gaussian clusters with uniformly placed centers. `spread`
    /// is the standard deviation as a fraction of each domain size.
    Clustered {
        domains: Vec<u32>,
        records: u64,
        clusters: usize,
        spread: f64,
    },
    /// A single tight cluster.
    Concentrated {
        domains: Vec<u32>,
        records: u64,
        spread: f64,
    },
}

impl SyntheticSpec {
    pub fn generate(&self, rng: &mut RandomStream) -> Result<CountTensor> {
        match self {
            SyntheticSpec::Uniform { domains, records } => uniform(domains, *records, rng),
            SyntheticSpec::Clustered {
                domains,
                records,
                clusters,
                spread,
            } => clustered(domains, *records, *clusters, *spread, rng),
            SyntheticSpec::Concentrated {
                domains,
                records,
                spread,
            } => clustered(domains, *records, 1, *spread, rng),
        }
    }
}

pub fn uniform(domains: &[u32], records: u64, rng: &mut RandomStream) -> Result<CountTensor> {
    let schema = Schema::from_domains(domains)?;
    let mut cells: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
    for _ in 0..records {
        let coords = domains.iter().map(|&n| rng.below(n as usize) as u32).collect();
        *cells.entry(coords).or_default() += 1;
    }
    CountTensor::from_cells(schema, cells)
}

pub fn clustered(
    domains: &[u32],
    records: u64,
    clusters: usize,
    spread: f64,
    rng: &mut RandomStream,
) -> Result<CountTensor> {
    if clusters == 0 {
        return Err(Error::Parameter("need at least one cluster".into()));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::Parameter(format!("spread must be non-negative, got {spread}")));
    }
    let schema = Schema::from_domains(domains)?;
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| domains.iter().map(|&n| rng.uniform() * f64::from(n)).collect())
        .collect();
    let normals: Vec<Normal<f64>> = domains
        .iter()
        .map(|&n| Normal::new(0.0, spread * f64::from(n)).expect("finite non-negative deviation"))
        .collect();
    let mut cells: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
    for _ in 0..records {
        let c = &centers[rng.below(clusters)];
        let coords = domains
            .iter()
            .zip(c)
            .zip(&normals)
            .map(|((&n, &mid), normal)| {
                let x = mid + normal.sample(rng);
                x.floor().clamp(0.0, f64::from(n - 1)) as u32
            })
            .collect();
        *cells.entry(coords).or_default() += 1;
    }
    CountTensor::from_cells(schema, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_counts_and_determinism() {
        let spec = SyntheticSpec::Clustered {
            domains: vec![32, 32, 32],
            records: 5000,
            clusters: 3,
            spread: 0.03,
        };
        let a = spec.generate(&mut RandomStream::new(4)).unwrap();
        let b = spec.generate(&mut RandomStream::new(4)).unwrap();
        assert_eq!(a.total_count(), 5000);
        assert_eq!(a, b);
        let u = uniform(&[8, 8], 1000, &mut RandomStream::new(1)).unwrap();
        assert_eq!(u.total_count(), 1000);
        assert!(u.nonzero_cells() > 60);
    }

    #[test]
    fn concentrated_data_is_sparse() {
        let spec = SyntheticSpec::Concentrated {
            domains: vec![100, 100, 100],
            records: 20_000,
            spread: 0.01,
        };
        let t = spec.generate(&mut RandomStream::new(9)).unwrap();
        assert!(t.nonzero_cells() < 2_000, "{}", t.nonzero_cells());
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut rng = RandomStream::new(0);
        assert!(clustered(&[4], 10, 0, 0.1, &mut rng).is_err());
        assert!(clustered(&[4], 10, 1, -1.0, &mut rng).is_err());
        assert!(serde_json::from_str::<SyntheticSpec>(r#"{"kind":"uniform","domains":[2],"records":1,"seed":3}"#).is_err());
    }
}
