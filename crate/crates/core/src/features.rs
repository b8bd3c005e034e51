//! Raw-record to sparse-feature encoding.
//!
//! A schema assigns every field a contiguous index range inside the sparse
//! space `[0, D)`; index 0 of each range is reserved for out-of-vocabulary
//! and missing values. Encoding is pure and deterministic: the same record
//! under the same schema always yields the same `EncodedSample`.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

/// Bucket count for numeric fields; see [`bucketize`].
pub const NUMERIC_BUCKETS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Categorical,
    NumericBucketed,
    MultiCategorical,
}

impl FieldKind {
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Categorical => "categorical",
            FieldKind::NumericBucketed => "numeric-bucketed",
            FieldKind::MultiCategorical => "multi-categorical",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "categorical" => Ok(FieldKind::Categorical),
            "numeric-bucketed" => Ok(FieldKind::NumericBucketed),
            "multi-categorical" => Ok(FieldKind::MultiCategorical),
            other => Err(Error::Config(format!("unknown field kind {other:?}"))),
        }
    }
}

/// Name and kind of a field, before vocabularies are known.
#[derive(Debug, Clone)]
pub struct FieldDescriptor {
    pub name: String,
    pub kind: FieldKind,
}

impl FieldDescriptor {
    pub fn new(name: impl Into<String>, kind: FieldKind) -> Self {
        FieldDescriptor {
            name: name.into(),
            kind,
        }
    }
}

/// One field's slice of the sparse space.
///
/// `vocab[i]` maps to local index `i + 1`; local index 0 is the OOV slot.
/// Numeric fields have an empty vocab and a fixed cardinality of
/// [`NUMERIC_BUCKETS`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub offset: usize,
    pub cardinality: usize,
    pub vocab: Vec<String>,
}

impl FieldSpec {
    /// The original string for a local index, `None` for OOV / out of range.
    pub fn value_of(&self, local: usize) -> Option<&str> {
        if local == 0 {
            None
        } else {
            self.vocab.get(local - 1).map(|s| s.as_str())
        }
    }
}

/// One raw cell of a record, aligned with a schema field.
#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Missing,
    Numeric(f64),
    Categorical(String),
    Multi(Vec<String>),
}

/// Immutable field layout plus value lookup tables.
#[derive(Debug, Clone)]
pub struct FeatureSchema {
    fields: Vec<FieldSpec>,
    total_dim: usize,
    lookups: Vec<HashMap<String, usize>>,
}

impl FeatureSchema {
    /// Validates the field layout (ranges partition `[0, D)`, cardinalities
    /// are consistent) and builds the lookup tables.
    pub fn from_fields(fields: Vec<FieldSpec>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::Config("schema has no fields".into()));
        }
        let mut seen = HashMap::new();
        let mut running = 0usize;
        for (i, f) in fields.iter().enumerate() {
            if let Some(prev) = seen.insert(f.name.clone(), i) {
                return Err(Error::Config(format!(
                    "duplicate field name {:?} (positions {prev} and {i})",
                    f.name
                )));
            }
            if f.offset != running {
                return Err(Error::Config(format!(
                    "field {:?} offset {} leaves a gap or overlap (expected {})",
                    f.name, f.offset, running
                )));
            }
            if f.cardinality < 2 {
                return Err(Error::Config(format!(
                    "field {:?} cardinality {} < 2 (OOV plus at least one real value)",
                    f.name, f.cardinality
                )));
            }
            match f.kind {
                FieldKind::NumericBucketed => {
                    if f.cardinality != NUMERIC_BUCKETS || !f.vocab.is_empty() {
                        return Err(Error::Config(format!(
                            "numeric field {:?} must have cardinality {} and no vocab",
                            f.name, NUMERIC_BUCKETS
                        )));
                    }
                }
                FieldKind::Categorical | FieldKind::MultiCategorical => {
                    if f.vocab.len() + 1 != f.cardinality {
                        return Err(Error::Config(format!(
                            "field {:?}: vocab size {} inconsistent with cardinality {}",
                            f.name,
                            f.vocab.len(),
                            f.cardinality
                        )));
                    }
                }
            }
            running += f.cardinality;
        }
        let lookups = fields
            .iter()
            .map(|f| {
                f.vocab
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v.clone(), i + 1))
                    .collect()
            })
            .collect();
        Ok(FeatureSchema {
            fields,
            total_dim: running,
            lookups,
        })
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn field(&self, i: usize) -> &FieldSpec {
        &self.fields[i]
    }

    /// F, the number of feature fields.
    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    /// D, the dimension of the sparse feature space.
    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    /// Local index of a value within a field; 0 (OOV) when unseen.
    pub fn local_index(&self, field: usize, value: &str) -> usize {
        self.lookups[field].get(value).copied().unwrap_or(0)
    }
}

/// Total bucketing rule for numeric features.
///
/// missing -> 0, x < 0 -> 1, 0 <= x <= 1 -> 2 + floor(x),
/// x > 1 -> 3 + min(floor(log2 x), 28). NaN counts as missing. The result
/// always fits in [`NUMERIC_BUCKETS`].
pub fn bucketize(x: Option<f64>) -> usize {
    match x {
        None => 0,
        Some(v) if v.is_nan() => 0,
        Some(v) if v < 0.0 => 1,
        Some(v) if v <= 1.0 => 2 + v.floor() as usize,
        Some(v) => 3 + (v.log2().floor() as usize).min(28),
    }
}

/// Per-field sparse entries plus the label.
///
/// Entries within a field are sorted by index, weights are positive and
/// finite, and duplicate values are merged at encode time so each index
/// appears at most once per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    fields: Vec<Vec<(u32, f64)>>,
    pub label: f64,
}

impl EncodedSample {
    pub fn new(fields: Vec<Vec<(u32, f64)>>, label: f64) -> Self {
        EncodedSample { fields, label }
    }

    pub fn field_entries(&self, field: usize) -> &[(u32, f64)] {
        &self.fields[field]
    }

    /// Iterates every active (index, weight) pair across all fields.
    pub fn all_entries(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.fields.iter().flat_map(|f| f.iter().copied())
    }
}

/// Read access to one sample's per-field sparse entries. Implemented both by
/// [`EncodedSample`] and by batch rows, so forward passes run identically on
/// either.
pub trait SparseFields {
    fn num_fields(&self) -> usize;
    fn entries(&self, field: usize) -> FieldEntries<'_>;
}

/// Iterator over one field's (index, weight) pairs.
pub enum FieldEntries<'a> {
    Pairs(std::slice::Iter<'a, (u32, f64)>),
    Split {
        idx: std::slice::Iter<'a, u32>,
        w: std::slice::Iter<'a, f64>,
    },
}

impl Iterator for FieldEntries<'_> {
    type Item = (u32, f64);

    fn next(&mut self) -> Option<(u32, f64)> {
        match self {
            FieldEntries::Pairs(it) => it.next().copied(),
            FieldEntries::Split { idx, w } => match (idx.next(), w.next()) {
                (Some(&i), Some(&x)) => Some((i, x)),
                _ => None,
            },
        }
    }
}

impl SparseFields for EncodedSample {
    fn num_fields(&self) -> usize {
        self.fields.len()
    }

    fn entries(&self, field: usize) -> FieldEntries<'_> {
        FieldEntries::Pairs(self.fields[field].iter())
    }
}

/// Builds a schema from field descriptors and a streaming pass over raw
/// records. Values seen at least `min_count` times enter the vocabulary in
/// first-seen order; rarer values encode to OOV. Records whose arity does not
/// match the descriptors are ignored here (loaders count them).
pub fn build_schema<I>(
    descriptors: &[FieldDescriptor],
    records: I,
    min_count: usize,
) -> Result<FeatureSchema>
where
    I: IntoIterator<Item = Vec<RawValue>>,
{
    if descriptors.is_empty() {
        return Err(Error::Config("build_schema: no field descriptors".into()));
    }
    if min_count < 1 {
        return Err(Error::Config("build_schema: min_count must be >= 1".into()));
    }
    {
        let mut seen = HashMap::new();
        for (i, d) in descriptors.iter().enumerate() {
            if let Some(prev) = seen.insert(d.name.as_str(), i) {
                return Err(Error::Config(format!(
                    "duplicate field name {:?} (positions {prev} and {i})",
                    d.name
                )));
            }
        }
    }

    // first-seen order plus counts, per field
    let mut orders: Vec<Vec<String>> = vec![Vec::new(); descriptors.len()];
    let mut counts: Vec<HashMap<String, usize>> = vec![HashMap::new(); descriptors.len()];
    let mut n_records = 0usize;

    for record in records {
        if record.len() != descriptors.len() {
            continue;
        }
        n_records += 1;
        for (f, value) in record.iter().enumerate() {
            if descriptors[f].kind == FieldKind::NumericBucketed {
                continue;
            }
            let mut tally = |v: &str| {
                let e = counts[f].entry(v.to_string()).or_insert(0);
                if *e == 0 {
                    orders[f].push(v.to_string());
                }
                *e += 1;
            };
            match value {
                RawValue::Categorical(v) => tally(v),
                RawValue::Multi(vs) => vs.iter().for_each(|v| tally(v)),
                RawValue::Missing | RawValue::Numeric(_) => {}
            }
        }
    }
    if n_records == 0 {
        return Err(Error::Data("build_schema: no records".into()));
    }

    let mut fields = Vec::with_capacity(descriptors.len());
    let mut offset = 0usize;
    for (f, d) in descriptors.iter().enumerate() {
        let (vocab, cardinality) = match d.kind {
            FieldKind::NumericBucketed => (Vec::new(), NUMERIC_BUCKETS),
            FieldKind::Categorical | FieldKind::MultiCategorical => {
                let vocab: Vec<String> = orders[f]
                    .iter()
                    .filter(|v| counts[f][*v] >= min_count)
                    .cloned()
                    .collect();
                if vocab.is_empty() {
                    return Err(Error::Config(format!(
                        "field {:?}: no value reaches min_count {min_count}",
                        d.name
                    )));
                }
                let card = vocab.len() + 1;
                (vocab, card)
            }
        };
        fields.push(FieldSpec {
            name: d.name.clone(),
            kind: d.kind,
            offset,
            cardinality,
            vocab,
        });
        offset += fields.last().unwrap().cardinality;
    }
    FeatureSchema::from_fields(fields)
}

/// Encodes one raw record under a schema.
///
/// Categorical values map to their vocab index (OOV when unseen), numeric
/// values go through [`bucketize`], and a multi-categorical list of n values
/// yields entries weighted 1/n each, duplicates merged. A record whose arity
/// does not match the schema is a per-record error; callers skip and count it.
pub fn encode(values: &[RawValue], label: f64, schema: &FeatureSchema) -> Result<EncodedSample> {
    if values.len() != schema.num_fields() {
        return Err(Error::Data(format!(
            "record has {} fields, schema expects {}",
            values.len(),
            schema.num_fields()
        )));
    }
    let mut fields = Vec::with_capacity(values.len());
    for (f, value) in values.iter().enumerate() {
        let spec = schema.field(f);
        let offset = spec.offset as u32;
        let entries: Vec<(u32, f64)> = match (spec.kind, value) {
            (FieldKind::NumericBucketed, RawValue::Missing) => vec![(offset, 1.0)],
            (FieldKind::NumericBucketed, RawValue::Numeric(x)) => {
                vec![(offset + bucketize(Some(*x)) as u32, 1.0)]
            }
            (FieldKind::Categorical, RawValue::Missing) => vec![(offset, 1.0)],
            (FieldKind::Categorical, RawValue::Categorical(v)) => {
                vec![(offset + schema.local_index(f, v) as u32, 1.0)]
            }
            (FieldKind::MultiCategorical, RawValue::Missing) => vec![(offset, 1.0)],
            // a lone value in a multi-valued field is a one-element list
            (FieldKind::MultiCategorical, RawValue::Categorical(v)) => {
                vec![(offset + schema.local_index(f, v) as u32, 1.0)]
            }
            (FieldKind::MultiCategorical, RawValue::Multi(vs)) if vs.is_empty() => {
                vec![(offset, 1.0)]
            }
            (FieldKind::MultiCategorical, RawValue::Multi(vs)) => {
                let share = 1.0 / vs.len() as f64;
                let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
                for v in vs {
                    *merged
                        .entry(offset + schema.local_index(f, v) as u32)
                        .or_insert(0.0) += share;
                }
                merged.into_iter().collect()
            }
            (kind, other) => {
                return Err(Error::Data(format!(
                    "field {:?} ({}) cannot encode {other:?}",
                    spec.name,
                    kind.name()
                )))
            }
        };
        fields.push(entries);
    }
    Ok(EncodedSample::new(fields, label))
}
