//! Attribute domains and the binning/encoding rules that map raw values onto
//! tensor coordinates.
//!
//! Numeric attributes are split into half-open bins `[edge_j, edge_{j+1})`
//! with the final bin closed on the right. Categorical attributes are
//! ordinal-encoded by their position in the category list. A categorical
//! attribute declared without categories learns them from the data in order
//! of first appearance.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::range::IndexRange;

#[derive(Clone, Debug, PartialEq)]
pub enum AttributeKind {
    Numeric { bin_edges: Vec<f64> },
    Categorical { categories: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AttributeFile", into = "AttributeFile")]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
}

/// On-disk form of an attribute. Numeric attributes give either explicit
/// `bin_edges` or an equal-width `bins`/`min`/`max` triple.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeFile {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bin_edges: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bins: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
}

impl TryFrom<AttributeFile> for AttributeSpec {
    type Error = Error;

    fn try_from(file: AttributeFile) -> Result<Self> {
        let spec = match file.kind.as_str() {
            "numeric" => {
                if file.categories.is_some() {
                    return Err(Error::Schema(format!(
                        "numeric attribute {:?} cannot list categories",
                        file.name
                    )));
                }
                let edges = match (file.bin_edges, file.bins, file.min, file.max) {
                    (Some(edges), None, None, None) => edges,
                    (None, Some(bins), Some(min), Some(max)) => {
                        AttributeSpec::equal_width_edges(bins, min, max)?
                    }
                    _ => {
                        return Err(Error::Schema(format!(
                            "numeric attribute {:?} needs either bin_edges or bins/min/max",
                            file.name
                        )))
                    }
                };
                AttributeSpec::numeric(file.name, edges)?
            }
            "categorical" => {
                if file.bin_edges.is_some() || file.bins.is_some() {
                    return Err(Error::Schema(format!(
                        "categorical attribute {:?} cannot have bins",
                        file.name
                    )));
                }
                AttributeSpec::categorical(file.name, file.categories.unwrap_or_default())?
            }
            other => {
                return Err(Error::Schema(format!(
                    "attribute {:?} has unknown kind {other:?}",
                    file.name
                )))
            }
        };
        Ok(spec)
    }
}

impl From<AttributeSpec> for AttributeFile {
    fn from(spec: AttributeSpec) -> Self {
        let mut file = AttributeFile {
            name: spec.name,
            kind: String::new(),
            bin_edges: None,
            bins: None,
            min: None,
            max: None,
            categories: None,
        };
        match spec.kind {
            AttributeKind::Numeric { bin_edges } => {
                file.kind = "numeric".into();
                file.bin_edges = Some(bin_edges);
            }
            AttributeKind::Categorical { categories } => {
                file.kind = "categorical".into();
                file.categories = Some(categories);
            }
        }
        file
    }
}

impl AttributeSpec {
    pub fn numeric(name: impl Into<String>, bin_edges: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if bin_edges.len() < 2 {
            return Err(Error::Schema(format!(
                "numeric attribute {name:?} needs at least two bin edges"
            )));
        }
        if bin_edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Schema(format!(
                "numeric attribute {name:?} has a non-finite bin edge"
            )));
        }
        if bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema(format!(
                "bin edges of {name:?} must be strictly increasing"
            )));
        }
        Ok(Self {
            name,
            kind: AttributeKind::Numeric { bin_edges },
        })
    }

    pub fn equal_width(name: impl Into<String>, bins: u32, min: f64, max: f64) -> Result<Self> {
        Self::numeric(name, Self::equal_width_edges(bins, min, max)?)
    }

    fn equal_width_edges(bins: u32, min: f64, max: f64) -> Result<Vec<f64>> {
        if bins == 0 || !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(Error::Schema(format!(
                "equal-width binning needs bins >= 1 and finite min < max (got {bins}, {min}, {max})"
            )));
        }
        let width = max - min;
        let mut edges: Vec<f64> = (0..bins)
            .map(|j| min + width * f64::from(j) / f64::from(bins))
            .collect();
        edges.push(max);
        Ok(edges)
    }

    /// An empty category list means "learn the categories from the data".
    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Result<Self> {
        let name = name.into();
        let mut seen = std::collections::HashSet::new();
        for c in &categories {
            if !seen.insert(c.as_str()) {
                return Err(Error::Schema(format!(
                    "categorical attribute {name:?} lists {c:?} twice"
                )));
            }
        }
        Ok(Self {
            name,
            kind: AttributeKind::Categorical { categories },
        })
    }

    /// Index attribute over `0..size` with unit-width bins. Used for
    /// synthetic data whose values already are bin indices.
    pub fn index(name: impl Into<String>, size: u32) -> Result<Self> {
        Self::numeric(name, (0..=size).map(f64::from).collect())
    }

    pub fn domain_size(&self) -> u32 {
        match &self.kind {
            AttributeKind::Numeric { bin_edges } => (bin_edges.len() - 1) as u32,
            AttributeKind::Categorical { categories } => categories.len() as u32,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, AttributeKind::Numeric { .. })
    }

    /// Bin index of a numeric value, or `None` when it falls outside the
    /// edges (or is NaN).
    pub fn bin_of(&self, value: f64) -> Option<u32> {
        let AttributeKind::Numeric { bin_edges } = &self.kind else {
            return None;
        };
        let (first, last) = (bin_edges[0], bin_edges[bin_edges.len() - 1]);
        if !(value >= first && value <= last) {
            return None;
        }
        let bins = bin_edges.len() - 1;
        let idx = bin_edges.partition_point(|&e| e <= value) - 1;
        Some(idx.min(bins - 1) as u32)
    }

    pub fn category_index(&self, value: &str) -> Option<u32> {
        match &self.kind {
            AttributeKind::Categorical { categories } => {
                categories.iter().position(|c| c == value).map(|i| i as u32)
            }
            AttributeKind::Numeric { .. } => None,
        }
    }

    /// Maps a raw-value interval onto the bin-index range covering it.
    ///
    /// For numeric attributes `hi` is treated as an exclusive bound when it
    /// lands exactly on an interior edge, so `20:30` over edges `.., 20, 30, ..`
    /// selects only the `[20, 30)` bin.
    pub fn raw_range(&self, lo: &str, hi: &str) -> Result<IndexRange> {
        let invalid = |reason: String| Error::InvalidRange {
            attribute: self.name.clone(),
            reason,
        };
        match &self.kind {
            AttributeKind::Numeric { bin_edges } => {
                let parse = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| invalid(format!("{s:?} is not a number")))
                };
                let (lo_v, hi_v) = (parse(lo)?, parse(hi)?);
                if lo_v > hi_v {
                    return Err(Error::ReversedRange {
                        attribute: self.name.clone(),
                        lo: lo.trim().to_owned(),
                        hi: hi.trim().to_owned(),
                    });
                }
                let lo_bin = self
                    .bin_of(lo_v)
                    .ok_or_else(|| invalid(format!("{lo_v} lies outside the binned domain")))?;
                let mut hi_bin = self
                    .bin_of(hi_v)
                    .ok_or_else(|| invalid(format!("{hi_v} lies outside the binned domain")))?;
                if hi_v > lo_v && hi_bin > lo_bin && bin_edges[hi_bin as usize] == hi_v {
                    hi_bin -= 1;
                }
                IndexRange::new(lo_bin, hi_bin).ok_or_else(|| invalid("empty range".into()))
            }
            AttributeKind::Categorical { .. } => {
                let find = |s: &str| {
                    self.category_index(s)
                        .ok_or_else(|| invalid(format!("unknown category {s:?}")))
                };
                let (a, b) = (find(lo)?, find(hi)?);
                IndexRange::new(a, b).ok_or_else(|| Error::ReversedRange {
                    attribute: self.name.clone(),
                    lo: lo.to_owned(),
                    hi: hi.to_owned(),
                })
            }
        }
    }

    /// Bin-index range `lo:hi`, checked against the domain.
    pub fn index_range(&self, lo: &str, hi: &str) -> Result<IndexRange> {
        let parse = |s: &str| {
            s.trim().parse::<u32>().map_err(|_| Error::InvalidRange {
                attribute: self.name.clone(),
                reason: format!("{s:?} is not a bin index"),
            })
        };
        let (a, b) = (parse(lo)?, parse(hi)?);
        if a > b {
            return Err(Error::ReversedRange {
                attribute: self.name.clone(),
                lo: a.to_string(),
                hi: b.to_string(),
            });
        }
        if b >= self.domain_size() {
            return Err(Error::InvalidRange {
                attribute: self.name.clone(),
                reason: format!("bin {b} exceeds the domain [0, {}]", self.domain_size() - 1),
            });
        }
        Ok(IndexRange { start: a, end: b })
    }

    /// Human-readable label of a bin: `[lo, hi)` for numeric bins, the
    /// category name otherwise.
    pub fn bin_label(&self, index: u32) -> Option<String> {
        let i = index as usize;
        match &self.kind {
            AttributeKind::Numeric { bin_edges } => {
                if i + 1 >= bin_edges.len() {
                    return None;
                }
                let close = if i + 2 == bin_edges.len() { ']' } else { ')' };
                Some(format!("[{}, {}{close}", bin_edges[i], bin_edges[i + 1]))
            }
            AttributeKind::Categorical { categories } => categories.get(i).cloned(),
        }
    }
}

/// Ordered list of attributes; the tensor has one mode per attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<AttributeSpec>,
}

impl Schema {
    pub fn new(attributes: Vec<AttributeSpec>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Schema("schema has no attributes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for a in &attributes {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::Schema(format!("attribute {:?} appears twice", a.name)));
            }
        }
        Ok(Self { attributes })
    }

    /// Schema of index attributes `a0, a1, ...` with the given domain sizes.
    pub fn from_domains(domains: &[u32]) -> Result<Self> {
        let attrs = domains
            .iter()
            .enumerate()
            .map(|(i, &n)| AttributeSpec::index(format!("a{i}"), n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(attrs)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(text)?;
        Schema::new(schema.attributes)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schema serialization is infallible")
    }

    pub fn dims(&self) -> usize {
        self.attributes.len()
    }

    pub fn domain_sizes(&self) -> Vec<u32> {
        self.attributes.iter().map(AttributeSpec::domain_size).collect()
    }

    /// Every attribute has a nonempty domain.
    pub fn is_resolved(&self) -> bool {
        self.attributes.iter().all(|a| a.domain_size() >= 1)
    }

    /// log2 of the total domain size (product of attribute domains).
    pub fn total_domain_log2(&self) -> f64 {
        self.attributes
            .iter()
            .map(|a| f64::from(a.domain_size()).log2())
            .sum()
    }

    /// Exact total domain size when it fits in 64 bits.
    pub fn total_domain(&self) -> Option<u64> {
        self.attributes
            .iter()
            .try_fold(1u64, |acc, a| acc.checked_mul(u64::from(a.domain_size())))
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Stable 64-bit fingerprint of the canonical JSON form.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.to_json().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_open_bins_with_closed_last_bin() {
        let a = AttributeSpec::numeric("x", vec![0.0, 10.0, 20.0]).unwrap();
        assert_eq!(a.bin_of(0.0), Some(0));
        assert_eq!(a.bin_of(5.0), Some(0));
        assert_eq!(a.bin_of(10.0), Some(1));
        assert_eq!(a.bin_of(20.0), Some(1));
        assert_eq!(a.bin_of(20.5), None);
        assert_eq!(a.bin_of(-0.1), None);
        assert_eq!(a.bin_of(f64::NAN), None);
    }

    #[test]
    fn rejects_bad_edges_and_duplicate_categories() {
        assert!(AttributeSpec::numeric("x", vec![0.0, 0.0, 1.0]).is_err());
        assert!(AttributeSpec::numeric("x", vec![1.0]).is_err());
        assert!(AttributeSpec::categorical("c", vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn parses_all_three_attribute_forms() {
        let s = Schema::from_json(
            r#"{"attributes":[
                {"name":"age","kind":"numeric","bins":10,"min":0,"max":100},
                {"name":"gain","kind":"numeric","bin_edges":[0,5,50]},
                {"name":"race","kind":"categorical","categories":["w","b","o"]}
            ]}"#,
        )
        .unwrap();
        assert_eq!(s.domain_sizes(), vec![10, 2, 3]);
        assert_eq!(s.total_domain(), Some(60));
        assert!((s.total_domain_log2() - 60f64.log2()).abs() < 1e-12);
        let again = Schema::from_json(&s.to_json()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_mixed_numeric_forms() {
        let err = Schema::from_json(
            r#"{"attributes":[{"name":"a","kind":"numeric","bins":3,"bin_edges":[0,1]}]}"#,
        );
        assert!(err.is_err());
        let err = Schema::from_json(r#"{"attributes":[{"name":"a","kind":"weird"}]}"#);
        assert!(err.is_err());
    }

    #[test]
    fn huge_domains_keep_log2_only() {
        let s = Schema::from_domains(&[100; 22]).unwrap();
        assert_eq!(s.total_domain(), None);
        assert!((s.total_domain_log2() - 22.0 * 100f64.log2()).abs() < 1e-9);
    }

    #[test]
    fn raw_range_maps_to_covering_bins() {
        let a = AttributeSpec::equal_width("age", 10, 0.0, 100.0).unwrap();
        assert_eq!(a.raw_range("20", "30").unwrap(), IndexRange::new(2, 2).unwrap());
        assert_eq!(a.raw_range("20", "35").unwrap(), IndexRange::new(2, 3).unwrap());
        assert_eq!(a.raw_range("25", "25").unwrap(), IndexRange::new(2, 2).unwrap());
        assert_eq!(a.raw_range("0", "100").unwrap(), IndexRange::new(0, 9).unwrap());
        assert!(a.raw_range("30", "20").is_err());
        assert!(a.raw_range("x", "20").is_err());

        let c = AttributeSpec::categorical("c", vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(c.raw_range("b", "c").unwrap(), IndexRange::new(1, 2).unwrap());
        assert!(c.raw_range("c", "a").is_err());
        assert!(c.raw_range("z", "a").is_err());
    }
}
