//! Sparse count tensor and the blocks carved out of it.

use std::collections::BTreeMap;
use std::io::Read;

use crate::error::{Error, Result};
use crate::range::{IndexRange, RangeQuery};
use crate::schema::{AttributeKind, Schema};

/// Record counts over the binned/encoded domain. Only nonzero cells are
/// stored; everything else is an implicit zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTensor {
    schema: Schema,
    cells: BTreeMap<Vec<u32>, u64>,
    total: u64,
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub delimiter: u8,
    /// Clamp out-of-range numeric values into the first/last bin instead of
    /// failing.
    pub clamp: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            clamp: false,
        }
    }
}

impl CountTensor {
    pub fn empty(schema: Schema) -> Self {
        Self {
            schema,
            cells: BTreeMap::new(),
            total: 0,
        }
    }

    /// Builds a tensor from `(coordinates, count)` pairs. Duplicate
    /// coordinates accumulate and zero counts are dropped.
    pub fn from_cells(
        schema: Schema,
        cells: impl IntoIterator<Item = (Vec<u32>, u64)>,
    ) -> Result<Self> {
        let mut t = Self::empty(schema);
        for (coords, count) in cells {
            t.add(coords, count)?;
        }
        Ok(t)
    }

    /// Builds a tensor from a dense row-major count vector (last axis
    /// varies fastest).
    pub fn from_dense(schema: Schema, counts: &[u64]) -> Result<Self> {
        let domains = schema.domain_sizes();
        let expected = schema.total_domain().unwrap_or(u64::MAX);
        if counts.len() as u64 != expected {
            return Err(Error::Parameter(format!(
                "dense vector has {} entries, domain has {expected}",
                counts.len()
            )));
        }
        let mut t = Self::empty(schema);
        let mut coords = vec![0u32; domains.len()];
        for &c in counts {
            if c > 0 {
                t.add(coords.clone(), c)?;
            }
            advance(&mut coords, &domains);
        }
        Ok(t)
    }

    pub fn add(&mut self, coords: Vec<u32>, count: u64) -> Result<()> {
        if coords.len() != self.schema.dims() {
            return Err(Error::Parameter(format!(
                "cell has {} coordinates, schema has {} attributes",
                coords.len(),
                self.schema.dims()
            )));
        }
        for (i, (&c, a)) in coords.iter().zip(&self.schema.attributes).enumerate() {
            if c >= a.domain_size() {
                return Err(Error::Parameter(format!(
                    "coordinate {c} on axis {i} ({}) exceeds domain size {}",
                    a.name,
                    a.domain_size()
                )));
            }
        }
        if count > 0 {
            *self.cells.entry(coords).or_insert(0) += count;
            self.total += count;
        }
        Ok(())
    }

    /// Ingests CSV text whose header names the schema attributes (extra
    /// columns are ignored).
    pub fn load_csv<R: Read>(reader: R, schema: Schema, opts: &LoadOptions) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(opts.delimiter)
            .has_headers(true)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_owned()).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_owned).collect::<Vec<_>>()));
        Self::load_rows(schema, &header, rows.map(|r| r.map_err(Error::from)), opts)
    }

    pub fn load_csv_path(
        path: impl AsRef<std::path::Path>,
        schema: Schema,
        opts: &LoadOptions,
    ) -> Result<Self> {
        Self::load_csv(std::fs::File::open(path)?, schema, opts)
    }

    /// Bins/encodes string rows laid out according to `header`. Row indices
    /// in errors are zero-based over data rows.
    pub fn load_rows(
        mut schema: Schema,
        header: &[String],
        rows: impl IntoIterator<Item = Result<Vec<String>>>,
        opts: &LoadOptions,
    ) -> Result<Self> {
        let columns = schema
            .attributes
            .iter()
            .map(|a| {
                header
                    .iter()
                    .position(|h| *h == a.name)
                    .ok_or_else(|| Error::MissingColumn(a.name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let learn: Vec<bool> = schema
            .attributes
            .iter()
            .map(|a| matches!(&a.kind, AttributeKind::Categorical { categories } if categories.is_empty()))
            .collect();

        let mut cells: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
        for (row_idx, row) in rows.into_iter().enumerate() {
            let row = row?;
            let mut coords = Vec::with_capacity(columns.len());
            for (axis, &col) in columns.iter().enumerate() {
                let raw = row.get(col).map(|s| s.trim()).ok_or_else(|| {
                    Error::Parameter(format!("row {row_idx} has no value in column {col}"))
                })?;
                let attr = &mut schema.attributes[axis];
                let idx = match &mut attr.kind {
                    AttributeKind::Numeric { bin_edges } => {
                        let v: f64 = raw.parse().map_err(|_| Error::NotNumeric {
                            row: row_idx,
                            attribute: attr.name.clone(),
                            value: raw.to_owned(),
                        })?;
                        let (min, max) = (bin_edges[0], bin_edges[bin_edges.len() - 1]);
                        let bins = (bin_edges.len() - 1) as u32;
                        match attr.bin_of(v) {
                            Some(b) => b,
                            None if opts.clamp && !v.is_nan() => {
                                if v < min {
                                    0
                                } else {
                                    bins - 1
                                }
                            }
                            None => {
                                return Err(Error::OutOfRange {
                                    row: row_idx,
                                    attribute: attr.name.clone(),
                                    value: v,
                                    min,
                                    max,
                                })
                            }
                        }
                    }
                    AttributeKind::Categorical { categories } => {
                        match categories.iter().position(|c| c == raw) {
                            Some(i) => i as u32,
                            None if learn[axis] => {
                                categories.push(raw.to_owned());
                                (categories.len() - 1) as u32
                            }
                            None => {
                                return Err(Error::UnknownCategory {
                                    row: row_idx,
                                    attribute: attr.name.clone(),
                                    value: raw.to_owned(),
                                })
                            }
                        }
                    }
                };
                coords.push(idx);
            }
            *cells.entry(coords).or_insert(0) += 1;
        }

        if let Some(a) = schema.attributes.iter().find(|a| a.domain_size() == 0) {
            return Err(Error::Schema(format!(
                "categorical attribute {:?} has no categories",
                a.name
            )));
        }
        let total = cells.values().sum();
        Ok(Self {
            schema,
            cells,
            total,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn total_count(&self) -> u64 {
        self.total
    }

    pub fn nonzero_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn get(&self, coords: &[u32]) -> u64 {
        self.cells.get(coords).copied().unwrap_or(0)
    }

    /// Nonzero cells in lexicographic coordinate order.
    pub fn cells(&self) -> impl Iterator<Item = (&[u32], u64)> {
        self.cells.iter().map(|(k, &v)| (k.as_slice(), v))
    }

    /// Exact number of records matching `q`.
    pub fn answer_exact(&self, q: &RangeQuery) -> Result<u64> {
        q.validate(&self.schema)?;
        Ok(self
            .cells()
            .filter(|(c, _)| q.contains(c))
            .map(|(_, n)| n)
            .sum())
    }
}

/// Row-major odometer step over `domains`.
pub(crate) fn advance(coords: &mut [u32], domains: &[u32]) {
    for i in (0..coords.len()).rev() {
        coords[i] += 1;
        if coords[i] < domains[i] {
            return;
        }
        coords[i] = 0;
    }
}

/// Contiguous sub-tensor: one inclusive range per mode. A block owns the
/// nonzero cells that fall inside it, so per-block statistics never need a
/// global scan.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    ranges: Vec<IndexRange>,
    depth: u32,
    sum: u64,
    coords: Vec<u32>,
    counts: Vec<u64>,
}

impl Block {
    /// Block covering the whole domain at depth 0.
    pub fn root(tensor: &CountTensor) -> Self {
        let ranges = tensor
            .schema
            .domain_sizes()
            .into_iter()
            .map(IndexRange::full)
            .collect();
        let mut coords = Vec::with_capacity(tensor.cells.len() * tensor.schema.dims());
        let mut counts = Vec::with_capacity(tensor.cells.len());
        for (c, &n) in &tensor.cells {
            coords.extend_from_slice(c);
            counts.push(n);
        }
        Self {
            ranges,
            depth: 0,
            sum: tensor.total,
            coords,
            counts,
        }
    }

    pub fn dims(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[IndexRange] {
        &self.ranges
    }

    /// Number of cuts between the root and this block.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn sum(&self) -> u64 {
        self.sum
    }

    pub fn nonzero_cells(&self) -> usize {
        self.counts.len()
    }

    /// Cell count `|B|` as a float; exact below 2^53.
    pub fn size(&self) -> f64 {
        self.ranges.iter().map(|r| r.extent() as f64).product()
    }

    pub fn size_exact(&self) -> Option<u128> {
        self.ranges
            .iter()
            .try_fold(1u128, |acc, r| acc.checked_mul(u128::from(r.extent())))
    }

    pub fn extent(&self, axis: usize) -> u64 {
        self.ranges[axis].extent()
    }

    /// No axis can be cut.
    pub fn is_atomic(&self) -> bool {
        self.ranges.iter().all(|r| r.start == r.end)
    }

    /// Stored cells as `(coordinates, count)`.
    pub fn cells(&self) -> impl ExactSizeIterator<Item = (&[u32], u64)> + '_ {
        let d = self.dims().max(1);
        self.coords.chunks_exact(d).zip(self.counts.iter().copied())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Splits into `[start, position]` and `[position + 1, end]` along `axis`.
    pub fn split(&self, axis: usize, position: u32) -> Result<(Block, Block)> {
        let r = *self.ranges.get(axis).ok_or(Error::InvalidSplit {
            axis,
            position,
            start: 0,
            end: 0,
        })?;
        if position < r.start || position >= r.end {
            return Err(Error::InvalidSplit {
                axis,
                position,
                start: r.start,
                end: r.end,
            });
        }
        let d = self.dims();
        let mut left = self.child(axis, IndexRange::new(r.start, position).unwrap());
        let mut right = self.child(axis, IndexRange::new(position + 1, r.end).unwrap());
        for (c, n) in self.cells() {
            let dst = if c[axis] <= position {
                &mut left
            } else {
                &mut right
            };
            dst.coords.extend_from_slice(c);
            dst.counts.push(n);
            dst.sum += n;
        }
        debug_assert_eq!(left.coords.len() + right.coords.len(), self.coords.len());
        debug_assert!(d > 0);
        Ok((left, right))
    }

    fn child(&self, axis: usize, range: IndexRange) -> Block {
        let mut ranges = self.ranges.clone();
        ranges[axis] = range;
        Block {
            ranges,
            depth: self.depth + 1,
            sum: 0,
            coords: Vec::new(),
            counts: Vec::new(),
        }
    }

    /// Sub-block over `ranges` (each must lie inside this block's ranges),
    /// keeping this block's depth.
    pub fn restrict(&self, ranges: &[IndexRange]) -> Result<Block> {
        if ranges.len() != self.dims() {
            return Err(Error::Parameter("sub-block has wrong dimensionality".into()));
        }
        for (inner, outer) in ranges.iter().zip(&self.ranges) {
            if inner.start < outer.start || inner.end > outer.end || inner.start > inner.end {
                return Err(Error::Parameter(format!(
                    "sub-block range {inner} is not inside {outer}"
                )));
            }
        }
        let mut b = Block {
            ranges: ranges.to_vec(),
            depth: self.depth,
            sum: 0,
            coords: Vec::new(),
            counts: Vec::new(),
        };
        for (c, n) in self.cells() {
            if ranges.iter().zip(c).all(|(r, &x)| r.contains(x)) {
                b.coords.extend_from_slice(c);
                b.counts.push(n);
                b.sum += n;
            }
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::AttributeSpec;

    fn rows(values: &[&str]) -> Vec<Result<Vec<String>>> {
        values.iter().map(|v| Ok(vec![v.to_string()])).collect()
    }

    fn one_attr() -> Schema {
        Schema::new(vec![AttributeSpec::numeric("x", vec![0.0, 10.0, 20.0]).unwrap()]).unwrap()
    }

    #[test]
    fn empty_input_gives_empty_tensor() {
        let t = CountTensor::load_rows(one_attr(), &["x".into()], rows(&[]), &LoadOptions::default())
            .unwrap();
        assert_eq!(t.total_count(), 0);
        assert_eq!(t.nonzero_cells(), 0);
    }

    #[test]
    fn bins_half_open_rows() {
        let t = CountTensor::load_rows(
            one_attr(),
            &["x".into()],
            rows(&["5", "15", "15"]),
            &LoadOptions::default(),
        )
        .unwrap();
        assert_eq!(t.get(&[0]), 1);
        assert_eq!(t.get(&[1]), 2);
        assert_eq!(t.total_count(), 3);

        let t = CountTensor::load_rows(one_attr(), &["x".into()], rows(&["20"]), &LoadOptions::default())
            .unwrap();
        assert_eq!(t.get(&[1]), 1);
    }

    #[test]
    fn out_of_range_is_an_error_unless_clamped() {
        let err = CountTensor::load_rows(one_attr(), &["x".into()], rows(&["5", "21"]), &LoadOptions::default());
        assert!(matches!(err, Err(Error::OutOfRange { row: 1, .. })));
        let opts = LoadOptions {
            clamp: true,
            ..Default::default()
        };
        let t = CountTensor::load_rows(one_attr(), &["x".into()], rows(&["-3", "21"]), &opts).unwrap();
        assert_eq!(t.get(&[0]), 1);
        assert_eq!(t.get(&[1]), 1);
    }

    #[test]
    fn reports_bad_numbers_and_categories() {
        let err = CountTensor::load_rows(one_attr(), &["x".into()], rows(&["1", "abc"]), &LoadOptions::default());
        match err {
            Err(Error::NotNumeric { row, value, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected {other:?}"),
        }
        let schema = Schema::new(vec![
            AttributeSpec::categorical("c", vec!["a".into(), "b".into()]).unwrap(),
        ])
        .unwrap();
        let err = CountTensor::load_rows(schema, &["c".into()], rows(&["a", "zzz"]), &LoadOptions::default());
        match err {
            Err(e @ Error::UnknownCategory { .. }) => assert!(e.to_string().contains("zzz")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn learns_categories_in_first_appearance_order() {
        let schema = Schema::new(vec![AttributeSpec::categorical("c", vec![]).unwrap()]).unwrap();
        let t = CountTensor::load_rows(schema, &["c".into()], rows(&["b", "a", "b"]), &LoadOptions::default())
            .unwrap();
        assert_eq!(t.schema().attributes[0].category_index("b"), Some(0));
        assert_eq!(t.schema().attributes[0].category_index("a"), Some(1));
        assert_eq!(t.get(&[0]), 2);
    }

    #[test]
    fn csv_with_extra_columns_and_custom_delimiter() {
        let schema = Schema::from_json(
            r#"{"attributes":[{"name":"age","kind":"numeric","bins":2,"min":0,"max":100},
                              {"name":"sex","kind":"categorical","categories":["f","m"]}]}"#,
        )
        .unwrap();
        let data = "id;sex;age\n1;m;10\n2;f;99\n3;m;60\n";
        let opts = LoadOptions {
            delimiter: b';',
            ..Default::default()
        };
        let t = CountTensor::load_csv(data.as_bytes(), schema, &opts).unwrap();
        assert_eq!(t.total_count(), 3);
        assert_eq!(t.get(&[0, 1]), 1);
        assert_eq!(t.get(&[1, 0]), 1);
        assert_eq!(t.get(&[1, 1]), 1);

        let missing = CountTensor::load_csv(
            "foo\n1\n".as_bytes(),
            Schema::from_domains(&[2]).unwrap(),
            &LoadOptions::default(),
        );
        assert!(matches!(missing, Err(Error::MissingColumn(_))));
    }

    #[test]
    fn root_covers_everything() {
        let schema = Schema::from_domains(&[4, 4]).unwrap();
        let root = Block::root(&CountTensor::empty(schema.clone()));
        assert_eq!(root.size(), 16.0);
        assert_eq!(root.sum(), 0);
        assert_eq!(root.depth(), 0);

        let t = CountTensor::from_cells(schema, [(vec![0, 3], 2), (vec![3, 0], 5)]).unwrap();
        let root = Block::root(&t);
        assert_eq!(root.nonzero_cells(), 2);
        assert_eq!(root.sum(), 7);
    }

    #[test]
    fn root_size_of_scaled_six_attribute_schema() {
        let schema = Schema::from_domains(&[10, 10, 10, 10, 10, 2]).unwrap();
        let root = Block::root(&CountTensor::empty(schema));
        assert_eq!(root.size_exact(), Some(200_000));
    }

    #[test]
    fn split_one_dimensional() {
        let t = CountTensor::from_dense(Schema::from_domains(&[4]).unwrap(), &[1, 2, 3, 4]).unwrap();
        let root = Block::root(&t);
        let (l, r) = root.split(0, 1).unwrap();
        assert_eq!((l.sum(), r.sum()), (3, 7));
        assert_eq!((l.size(), r.size()), (2.0, 2.0));
        assert_eq!((l.depth(), r.depth()), (1, 1));

        let (l, r) = root.split(0, 0).unwrap();
        assert_eq!(l.size(), 1.0);
        assert_eq!(r.size(), 3.0);

        assert!(matches!(root.split(0, 3), Err(Error::InvalidSplit { .. })));
        assert!(root.split(1, 0).is_err());
    }

    #[test]
    fn split_two_dimensional_shapes() {
        let t = CountTensor::empty(Schema::from_domains(&[2, 2]).unwrap());
        let (l, r) = Block::root(&t).split(0, 0).unwrap();
        assert_eq!(l.ranges(), &[IndexRange::new(0, 0).unwrap(), IndexRange::new(0, 1).unwrap()]);
        assert_eq!(r.ranges(), &[IndexRange::new(1, 1).unwrap(), IndexRange::new(0, 1).unwrap()]);
    }

    #[test]
    fn exact_answers() {
        let t = CountTensor::from_cells(
            Schema::from_domains(&[4]).unwrap(),
            [(vec![0], 1), (vec![1], 2), (vec![3], 5)],
        )
        .unwrap();
        let q = RangeQuery::new(t.schema(), vec![IndexRange::new(1, 3).unwrap()]).unwrap();
        assert_eq!(t.answer_exact(&q).unwrap(), 7);
        assert_eq!(t.answer_exact(&RangeQuery::full(t.schema())).unwrap(), 8);
        let empty = CountTensor::empty(Schema::from_domains(&[4]).unwrap());
        assert_eq!(empty.answer_exact(&q).unwrap(), 0);
    }
}
