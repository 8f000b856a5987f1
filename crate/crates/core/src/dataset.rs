//! Tabular binary-classification data with a binary protected attribute.
//!
//! Rows are `(features, protected, label)` triples with `protected ∈ {0, 1}`
//! and `label ∈ {-1, +1}`. Categorical source columns are one-hot encoded;
//! numeric columns pass through unscaled since stumps only compare values.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One encoded row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    features: Vec<f64>,
    protected: u8,
    label: i8,
}

impl Example {
    pub fn new(features: Vec<f64>, protected: u8, label: i8) -> Result<Self> {
        if protected > 1 {
            return Err(Error::Argument(format!(
                "protected group must be 0 or 1, got {protected}"
            )));
        }
        if label != 1 && label != -1 {
            return Err(Error::Argument(format!(
                "label must be -1 or +1, got {label}"
            )));
        }
        Ok(Self {
            features,
            protected,
            label,
        })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn protected(&self) -> u8 {
        self.protected
    }

    pub fn label(&self) -> i8 {
        self.label
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// How one source column maps onto encoded feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Numeric { name: String },
    /// One indicator column per level, in the listed order.
    Categorical { name: String, levels: Vec<String> },
}

impl ColumnEncoding {
    pub fn name(&self) -> &str {
        match self {
            ColumnEncoding::Numeric { name } | ColumnEncoding::Categorical { name, .. } => name,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            ColumnEncoding::Numeric { .. } => 1,
            ColumnEncoding::Categorical { levels, .. } => levels.len(),
        }
    }
}

/// Encoded feature layout: source columns in order, each expanding to
/// [`ColumnEncoding::width`] encoded columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schema {
    columns: Vec<ColumnEncoding>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnEncoding>) -> Self {
        Self { columns }
    }

    /// All-numeric schema with the given column names.
    pub fn numeric<S: AsRef<str>>(names: &[S]) -> Self {
        Self::new(
            names
                .iter()
                .map(|n| ColumnEncoding::Numeric {
                    name: n.as_ref().to_string(),
                })
                .collect(),
        )
    }

    pub fn columns(&self) -> &[ColumnEncoding] {
        &self.columns
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(ColumnEncoding::width).sum()
    }

    /// Encoded column names; one-hot columns are named `column=level`.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        for col in &self.columns {
            match col {
                ColumnEncoding::Numeric { name } => names.push(name.clone()),
                ColumnEncoding::Categorical { name, levels } => {
                    names.extend(levels.iter().map(|l| format!("{name}={l}")))
                }
            }
        }
        names
    }

    fn offset_of(&self, column: &str) -> Option<(usize, &ColumnEncoding)> {
        let mut offset = 0;
        for col in &self.columns {
            if col.name() == column {
                return Some((offset, col));
            }
            offset += col.width();
        }
        None
    }

    /// Encode raw cell values, one per source column in schema order.
    /// Unknown categorical levels encode as an all-zero block.
    pub fn encode(&self, raw: &[&str], row: usize) -> Result<Vec<f64>> {
        if raw.len() != self.columns.len() {
            return Err(Error::Argument(format!(
                "expected {} raw values, got {}",
                self.columns.len(),
                raw.len()
            )));
        }
        let mut out = Vec::with_capacity(self.width());
        for (col, cell) in self.columns.iter().zip(raw) {
            match col {
                ColumnEncoding::Numeric { name } => {
                    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                        row,
                        column: name.clone(),
                        value: cell.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row,
                            column: name.clone(),
                            value: cell.to_string(),
                        });
                    }
                    out.push(v);
                }
                ColumnEncoding::Categorical { levels, .. } => {
                    let cell = cell.trim();
                    out.extend(levels.iter().map(|l| if l == cell { 1.0 } else { 0.0 }));
                }
            }
        }
        Ok(out)
    }

    /// Recover the level of a categorical column from an encoded row.
    ///
    /// Returns `Ok(None)` for the all-zeros block (a level unseen when the
    /// schema was built).
    pub fn decode_categorical(&self, features: &[f64], column: &str) -> Result<Option<String>> {
        let (offset, col) = self
            .offset_of(column)
            .ok_or_else(|| Error::Schema(format!("no column `{column}` in schema")))?;
        let ColumnEncoding::Categorical { levels, .. } = col else {
            return Err(Error::Schema(format!("column `{column}` is not categorical")));
        };
        if features.len() != self.width() {
            return Err(Error::Argument(format!(
                "encoded row has width {}, schema has {}",
                features.len(),
                self.width()
            )));
        }
        Ok(levels
            .iter()
            .enumerate()
            .find(|(j, _)| features[offset + j] == 1.0)
            .map(|(_, l)| l.clone()))
    }
}

/// Per-group example counts: `n_a`, `n_a^+`, `n_a^-` for `a ∈ {0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupCounts {
    pub total: [usize; 2],
    pub positive: [usize; 2],
    pub negative: [usize; 2],
}

impl GroupCounts {
    pub fn tally(examples: &[Example]) -> Self {
        let mut c = Self::default();
        for e in examples {
            let a = e.protected as usize;
            c.total[a] += 1;
            if e.is_positive() {
                c.positive[a] += 1;
            } else {
                c.negative[a] += 1;
            }
        }
        c
    }

    pub fn n(&self) -> usize {
        self.total[0] + self.total[1]
    }

    pub fn positives(&self) -> usize {
        self.positive[0] + self.positive[1]
    }

    pub fn negatives(&self) -> usize {
        self.negative[0] + self.negative[1]
    }

    /// Count for the `(group, label)` cell.
    pub fn cell(&self, group: u8, label: i8) -> usize {
        if label == 1 {
            self.positive[group as usize]
        } else {
            self.negative[group as usize]
        }
    }
}

/// An immutable, validated collection of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    schema: Schema,
    counts: GroupCounts,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, schema: Schema) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let width = schema.width();
        if let Some((i, e)) = examples
            .iter()
            .enumerate()
            .find(|(_, e)| e.features.len() != width)
        {
            return Err(Error::Schema(format!(
                "example {i} has {} features, schema width is {width}",
                e.features.len()
            )));
        }
        let counts = GroupCounts::tally(&examples);
        debug_assert_eq!(counts.n(), examples.len());
        Ok(Self {
            examples,
            schema,
            counts,
        })
    }

    /// Build from parallel arrays; convenient for tests and small fixtures.
    pub fn from_parts(features: Vec<Vec<f64>>, protected: Vec<u8>, labels: Vec<i8>) -> Result<Self> {
        if features.len() != protected.len() || features.len() != labels.len() {
            return Err(Error::Argument(
                "features, protected and labels must have equal length".into(),
            ));
        }
        let width = features.first().map_or(0, Vec::len);
        let names: Vec<String> = (0..width).map(|j| format!("x{j}")).collect();
        let examples = features
            .into_iter()
            .zip(protected)
            .zip(labels)
            .map(|((x, a), y)| Example::new(x, a, y))
            .collect::<Result<Vec<_>>>()?;
        Self::new(examples, Schema::numeric(&names))
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn width(&self) -> usize {
        self.schema.width()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn example(&self, i: usize) -> &Example {
        &self.examples[i]
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn group_counts(&self) -> &GroupCounts {
        &self.counts
    }

    pub fn labels(&self) -> impl Iterator<Item = i8> + '_ {
        self.examples.iter().map(|e| e.label)
    }

    /// Rows at the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let examples = indices
            .iter()
            .map(|&i| {
                self.examples.get(i).cloned().ok_or_else(|| {
                    Error::Argument(format!("index {i} out of range for {} rows", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(examples, self.schema.clone())
    }
}

/// Column roles for reading a CSV file.
///
/// ```toml
/// label_column = "income"
/// positive_value = ">50K"
/// protected_column = "sex"
/// group1_value = "Male"
/// categorical = ["workclass", "education"]
/// drop = ["fnlwgt"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub label_column: String,
    pub positive_value: String,
    pub protected_column: String,
    pub group1_value: String,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub drop: Vec<String>,
}

impl SchemaConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(RawTable { headers, rows })
}

struct ColumnPlan {
    label: usize,
    protected: usize,
    features: Vec<usize>,
}

fn plan_columns(headers: &[String], cfg: &SchemaConfig) -> Result<ColumnPlan> {
    let index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    let find = |name: &str, role: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("{role} column `{name}` not found in header")))
    };
    let label = find(&cfg.label_column, "label")?;
    let protected = find(&cfg.protected_column, "protected")?;
    for c in &cfg.categorical {
        find(c, "categorical")?;
    }
    for c in &cfg.drop {
        find(c, "dropped")?;
    }
    let features = (0..headers.len())
        .filter(|&i| i != label && i != protected && !cfg.drop.contains(&headers[i]))
        .collect();
    Ok(ColumnPlan {
        label,
        protected,
        features,
    })
}

fn encode_rows(table: &RawTable, plan: &ColumnPlan, cfg: &SchemaConfig, schema: Schema) -> Result<Dataset> {
    let mut examples = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        let raw: Vec<&str> = plan.features.iter().map(|&j| row[j].as_str()).collect();
        let features = schema.encode(&raw, r + 1)?;
        let label = if row[plan.label] == cfg.positive_value { 1 } else { -1 };
        let protected = u8::from(row[plan.protected] == cfg.group1_value);
        examples.push(Example::new(features, protected, label)?);
    }
    Dataset::new(examples, schema)
}

/// Read a headered CSV, one-hot encoding the declared categorical columns.
///
/// Categorical levels are taken from this file, sorted lexicographically.
/// Every non-label, non-protected, non-dropped column is a feature.
pub fn load_csv(path: impl AsRef<Path>, cfg: &SchemaConfig) -> Result<Dataset> {
    let table = read_table(path.as_ref())?;
    let plan = plan_columns(&table.headers, cfg)?;
    if table.rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !table.rows.iter().any(|r| r[plan.label] == cfg.positive_value) {
        return Err(Error::Schema(format!(
            "positive value `{}` never occurs in label column `{}`",
            cfg.positive_value, cfg.label_column
        )));
    }
    let columns = plan
        .features
        .iter()
        .map(|&j| {
            let name = table.headers[j].clone();
            if cfg.categorical.contains(&name) {
                let levels: BTreeSet<&str> = table.rows.iter().map(|r| r[j].as_str()).collect();
                ColumnEncoding::Categorical {
                    name,
                    levels: levels.into_iter().map(str::to_string).collect(),
                }
            } else {
                ColumnEncoding::Numeric { name }
            }
        })
        .collect();
    encode_rows(&table, &plan, cfg, Schema::new(columns))
}

/// Read a CSV using an existing encoding (e.g. a held-out file encoded with
/// the training schema). Unknown categorical levels map to all zeros.
pub fn load_csv_with_schema(path: impl AsRef<Path>, cfg: &SchemaConfig, schema: &Schema) -> Result<Dataset> {
    let table = read_table(path.as_ref())?;
    let plan = plan_columns(&table.headers, cfg)?;
    if table.rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let names: Vec<&str> = plan.features.iter().map(|&j| table.headers[j].as_str()).collect();
    let expected: Vec<&str> = schema.columns().iter().map(ColumnEncoding::name).collect();
    if names != expected {
        return Err(Error::Schema(format!(
            "file feature columns {names:?} do not match schema {expected:?}"
        )));
    }
    encode_rows(&table, &plan, cfg, schema.clone())
}

fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Train/test index sets: a ChaCha8-seeded shuffle, test = prefix of
/// `round(n * test_fraction)` indices. Both sets are returned sorted.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Argument(format!(
            "split of {n} rows at fraction {test_fraction} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Deterministic split into `(train, test)`; row order within each side
/// follows the source.
pub fn train_test_split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(d.len(), test_fraction, seed)?;
    Ok((d.subset(&train)?, d.subset(&test)?))
}

/// Parameters for [`make_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    /// `P(A = 1)`.
    pub group_imbalance: f64,
    /// Difference of positive rates between group 1 and group 0.
    pub base_rate_gap: f64,
    /// Standard deviation of the Gaussian noise on the informative features.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            group_imbalance: 0.5,
            base_rate_gap: 0.6,
            noise: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        make_synthetic(self.n, self.group_imbalance, self.base_rate_gap, self.noise, seed)
    }
}

/// Two-group synthetic data with a controllable base-rate gap.
///
/// Group 1 has positive rate `0.5 + gap/2`, group 0 `0.5 - gap/2` (clamped
/// to `[0, 1]`). Features:
/// - `signal = y + noise * z`, informative about the label in both groups;
/// - `proxy = (2a - 1) + noise * z'`, informative about the label only
///   through the base-rate gap;
/// - `nuisance = z''`, pure noise.
pub fn make_synthetic(n: usize, group_imbalance: f64, base_rate_gap: f64, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::Argument(format!("synthetic data needs n >= 4, got {n}")));
    }
    for (name, v) in [("group_imbalance", group_imbalance), ("base_rate_gap", base_rate_gap)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Argument(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Argument(format!("noise must be finite and >= 0, got {noise}")));
    }
    let mut rng = seeded_rng(seed);
    let rate = |a: u8| {
        let half = base_rate_gap / 2.0;
        (if a == 1 { 0.5 + half } else { 0.5 - half }).clamp(0.0, 1.0)
    };
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let a = u8::from(rng.random::<f64>() < group_imbalance);
        let y: i8 = if rng.random::<f64>() < rate(a) { 1 } else { -1 };
        let z: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let signal = f64::from(y) + noise * z[0];
        let proxy = (2.0 * f64::from(a) - 1.0) + noise * z[1];
        examples.push(Example::new(vec![signal, proxy, z[2]], a, y)?);
    }
    Dataset::new(examples, Schema::numeric(&["signal", "proxy", "nuisance"]))
}
