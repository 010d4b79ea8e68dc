use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Schema;

/// Inclusive index range `[start, end]` along one tensor mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct IndexRange {
    pub start: u32,
    pub end: u32,
}

impl From<[u32; 2]> for IndexRange {
    fn from([start, end]: [u32; 2]) -> Self {
        Self { start, end }
    }
}

impl From<IndexRange> for [u32; 2] {
    fn from(r: IndexRange) -> Self {
        [r.start, r.end]
    }
}

impl IndexRange {
    /// `None` when `start > end`.
    pub fn new(start: u32, end: u32) -> Option<Self> {
        (start <= end).then_some(Self { start, end })
    }

    pub fn full(domain: u32) -> Self {
        Self {
            start: 0,
            end: domain - 1,
        }
    }

    pub fn extent(&self) -> u64 {
        u64::from(self.end - self.start) + 1
    }

    pub fn contains(&self, i: u32) -> bool {
        self.start <= i && i <= self.end
    }

    /// Number of indices shared with `other`.
    pub fn overlap(&self, other: &IndexRange) -> u64 {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if lo > hi {
            0
        } else {
            u64::from(hi - lo) + 1
        }
    }

    pub fn intersect(&self, other: &IndexRange) -> Option<IndexRange> {
        IndexRange::new(self.start.max(other.start), self.end.min(other.end))
    }
}

impl std::fmt::Display for IndexRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

/// Range counting query: one inclusive range per attribute, together
/// forming the condition of the query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RangeQuery {
    ranges: Vec<IndexRange>,
}

impl RangeQuery {
    pub fn full(schema: &Schema) -> Self {
        Self {
            ranges: schema
                .domain_sizes()
                .into_iter()
                .map(IndexRange::full)
                .collect(),
        }
    }

    /// Builds a query checked against `schema`.
    pub fn new(schema: &Schema, ranges: Vec<IndexRange>) -> Result<Self> {
        let q = Self { ranges };
        q.validate(schema)?;
        Ok(q)
    }

    /// Full-domain query with selected attributes restricted.
    pub fn with_ranges(
        schema: &Schema,
        restricted: impl IntoIterator<Item = (usize, IndexRange)>,
    ) -> Result<Self> {
        let mut q = Self::full(schema);
        for (axis, r) in restricted {
            if axis >= q.ranges.len() {
                return Err(Error::InvalidRange {
                    attribute: format!("#{axis}"),
                    reason: "attribute index out of bounds".into(),
                });
            }
            q.ranges[axis] = r;
        }
        q.validate(schema)?;
        Ok(q)
    }

    pub fn ranges(&self) -> &[IndexRange] {
        &self.ranges
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.ranges.len() != schema.dims() {
            return Err(Error::InvalidRange {
                attribute: "*".into(),
                reason: format!(
                    "query has {} ranges but the schema has {} attributes",
                    self.ranges.len(),
                    schema.dims()
                ),
            });
        }
        for (r, a) in self.ranges.iter().zip(&schema.attributes) {
            if r.start > r.end {
                return Err(Error::InvalidRange {
                    attribute: a.name.clone(),
                    reason: format!("lower bound {} exceeds upper bound {}", r.start, r.end),
                });
            }
            if r.end >= a.domain_size() {
                return Err(Error::InvalidRange {
                    attribute: a.name.clone(),
                    reason: format!("{r} exceeds the domain [0, {}]", a.domain_size() - 1),
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, coords: &[u32]) -> bool {
        self.ranges.iter().zip(coords).all(|(r, &c)| r.contains(c))
    }

    /// Parses a comma-separated list of terms. `attr=lo:hi` takes raw
    /// values (numbers mapped through the bin edges, or category names);
    /// `attr@lo:hi` takes bin indices. Omitted attributes keep their full
    /// range; an empty expression is the full domain.
    pub fn parse(schema: &Schema, expr: &str) -> Result<Self> {
        let mut q = Self::full(schema);
        let mut seen = vec![false; schema.dims()];
        for term in expr.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let bad = |reason: &str| Error::InvalidRange {
                attribute: term.to_owned(),
                reason: reason.to_owned(),
            };
            let (name, bounds, raw) = match (term.find('='), term.find('@')) {
                (Some(i), None) => (&term[..i], &term[i + 1..], true),
                (None, Some(i)) => (&term[..i], &term[i + 1..], false),
                _ => return Err(bad("expected attr=lo:hi or attr@lo:hi")),
            };
            let (lo, hi) = bounds.split_once(':').ok_or_else(|| bad("expected lo:hi"))?;
            let name = name.trim();
            let axis = schema.attribute_index(name).ok_or_else(|| Error::InvalidRange {
                attribute: name.to_owned(),
                reason: "unknown attribute".into(),
            })?;
            if std::mem::replace(&mut seen[axis], true) {
                return Err(Error::InvalidRange {
                    attribute: name.to_owned(),
                    reason: "attribute restricted twice".into(),
                });
            }
            let attr = &schema.attributes[axis];
            q.ranges[axis] = if raw {
                attr.raw_range(lo, hi)?
            } else {
                attr.index_range(lo, hi)?
            };
        }
        Ok(q)
    }
}
