//! Observation data and bootstrap subsampling.
//!
//! A [`SubsampleSet`] stores parent row indices rather than copies of the
//! points, so every subsample point is bit-identical to a parent point.
//! The last subsample is the validation set; the others train the experts.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};
use crate::rng;

/// Ordered set of `(x, y)` observations with a fixed x-dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x_names: Vec<String>,
    y_name: String,
    x_dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Dataset {
    pub fn new(points: Vec<(Vec<f64>, f64)>) -> Result<Self, DataError> {
        let x_dim = points.first().ok_or(DataError::NoPoints)?.0.len();
        let names = (0..x_dim).map(|j| format!("x{j}")).collect();
        Self::with_names(points, names, "y".to_string())
    }

    pub fn with_names(
        points: Vec<(Vec<f64>, f64)>,
        x_names: Vec<String>,
        y_name: String,
    ) -> Result<Self, DataError> {
        let x_dim = points.first().ok_or(DataError::NoPoints)?.0.len();
        if x_names.len() != x_dim {
            return Err(DataError::Dimension {
                index: 0,
                expected: x_names.len(),
                found: x_dim,
            });
        }
        let mut xs = Vec::with_capacity(points.len() * x_dim);
        let mut ys = Vec::with_capacity(points.len());
        for (i, (x, y)) in points.into_iter().enumerate() {
            if x.len() != x_dim {
                return Err(DataError::Dimension {
                    index: i,
                    expected: x_dim,
                    found: x.len(),
                });
            }
            xs.extend(x);
            ys.push(y);
        }
        Ok(Self {
            x_names,
            y_name,
            x_dim,
            xs,
            ys,
        })
    }

    /// Dataset with a scalar input per point.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, DataError> {
        Self::new(pairs.iter().map(|&(x, y)| (vec![x], y)).collect())
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.x_dim..(i + 1) * self.x_dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn y_name(&self) -> &str {
        &self.y_name
    }

    /// View over every point in order.
    pub fn view(&self) -> SampleView<'_> {
        SampleView {
            parent: self,
            indices: None,
        }
    }

    /// View over the given parent indices.
    pub fn select<'a>(&'a self, indices: &'a [usize]) -> SampleView<'a> {
        SampleView {
            parent: self,
            indices: Some(indices),
        }
    }
}

/// Column selector: a header name or a zero-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Name(String),
    Index(usize),
}

impl Column {
    fn resolve(&self, header: &[String]) -> Result<usize, DataError> {
        match self {
            Column::Index(i) if *i < header.len() => Ok(*i),
            Column::Index(i) => Err(DataError::UnknownColumn(i.to_string())),
            Column::Name(name) => header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| DataError::UnknownColumn(name.clone())),
        }
    }
}

impl FromStr for Column {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s.parse::<usize>() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.to_string()),
        })
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::Name(n) => f.write_str(n),
            Column::Index(i) => write!(f, "{i}"),
        }
    }
}

/// Parses a comma-separated list of columns such as `t` or `0,2`.
pub fn parse_columns(spec: &str) -> Vec<Column> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse().unwrap())
        .collect()
}

/// Loads a comma-separated file with a header row.
///
/// Row numbers in errors are 1-based file lines (the header is line 1);
/// column numbers are 1-based.
pub fn load_csv(path: &Path, x_columns: &[Column], y_column: &Column) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(DataError::Empty {
            path: path.to_path_buf(),
        }
        .into());
    }
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes.as_slice());
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let x_idx = x_columns
        .iter()
        .map(|c| c.resolve(&header))
        .collect::<Result<Vec<_>, _>>()?;
    let y_idx = y_column.resolve(&header)?;

    let mut points = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = r + 2;
        if record.len() != header.len() {
            return Err(DataError::ColumnCount {
                path: path.to_path_buf(),
                row,
                expected: header.len(),
                found: record.len(),
            }
            .into());
        }
        let cell = |c: usize| -> Result<f64, DataError> {
            let raw = record[c].trim();
            let v: f64 = raw.parse().map_err(|_| DataError::NonNumeric {
                path: path.to_path_buf(),
                row,
                column: c + 1,
                name: header[c].clone(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    path: path.to_path_buf(),
                    row,
                    column: c + 1,
                    name: header[c].clone(),
                });
            }
            Ok(v)
        };
        let x = x_idx.iter().map(|&c| cell(c)).collect::<Result<Vec<_>, _>>()?;
        points.push((x, cell(y_idx)?));
    }
    if points.is_empty() {
        return Err(DataError::NoRows {
            path: path.to_path_buf(),
        }
        .into());
    }
    let x_names = x_idx.iter().map(|&c| header[c].clone()).collect();
    Ok(Dataset::with_names(points, x_names, header[y_idx].clone())?)
}

/// Borrowed view over a dataset, optionally restricted to a list of indices.
#[derive(Debug, Clone, Copy)]
pub struct SampleView<'a> {
    parent: &'a Dataset,
    indices: Option<&'a [usize]>,
}

impl<'a> SampleView<'a> {
    pub fn len(&self) -> usize {
        self.indices.map_or(self.parent.len(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a [f64], f64)> + 'a {
        let parent = self.parent;
        let n = self.len();
        let indices = self.indices;
        (0..n).map(move |i| {
            let j = indices.map_or(i, |ix| ix[i]);
            (parent.x(j), parent.y(j))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Replacement {
    #[default]
    With,
    Without,
}

impl FromStr for Replacement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "with" => Ok(Replacement::With),
            "without" => Ok(Replacement::Without),
            other => Err(format!("replacement must be `with` or `without`, got {other:?}")),
        }
    }
}

impl fmt::Display for Replacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Replacement::With => "with",
            Replacement::Without => "without",
        })
    }
}

/// `K + 1` bootstrap subsamples of size `m`, stored as parent indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleSet {
    indices: Vec<Vec<usize>>,
    size: usize,
    mode: Replacement,
    seed: u64,
}

impl SubsampleSet {
    /// Number of subsamples, `K + 1`.
    pub fn count(&self) -> usize {
        self.indices.len()
    }

    /// Number of training subsamples, `K`.
    pub fn experts(&self) -> usize {
        self.indices.len() - 1
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mode(&self) -> Replacement {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn indices(&self, k: usize) -> &[usize] {
        &self.indices[k]
    }

    /// Training subsample of expert `k` (zero-based).
    pub fn training<'a>(&'a self, parent: &'a Dataset, k: usize) -> SampleView<'a> {
        assert!(k < self.experts(), "expert index {k} out of range");
        parent.select(&self.indices[k])
    }

    /// The validation subsample, always the last one drawn.
    pub fn validation<'a>(&'a self, parent: &'a Dataset) -> SampleView<'a> {
        parent.select(self.indices.last().expect("at least one subsample"))
    }
}

/// Draws `count` subsamples of size `m` from `parent`.
///
/// Uses the bootstrap stream of the run seed, so the result depends only on
/// the arguments.
pub fn bootstrap(
    parent: &Dataset,
    count: usize,
    m: usize,
    mode: Replacement,
    seed: u64,
) -> Result<SubsampleSet> {
    let d = parent.len();
    if m == 0 {
        return Err(Error::InvalidArgument("subsample size must be at least 1".into()));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one subsample".into()));
    }
    if mode == Replacement::Without && m > d {
        return Err(Error::InvalidArgument(format!(
            "subsample size {m} exceeds dataset size {d} without replacement"
        )));
    }
    let mut rng = rng::bootstrap_stream(seed);
    let indices = (0..count)
        .map(|_| match mode {
            Replacement::With => (0..m).map(|_| rng.random_range(0..d)).collect(),
            Replacement::Without => index::sample(&mut rng, d, m).into_vec(),
        })
        .collect();
    Ok(SubsampleSet {
        indices,
        size: m,
        mode,
        seed,
    })
}

/// Observations `y = N(t) + noise` from the logistic law at the given times.
pub fn synthetic_logistic(
    params: &crate::model::LogisticParams,
    times: &[f64],
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    let noise = Normal::new(0.0, noise_sd)
        .map_err(|e| Error::InvalidArgument(format!("noise sd {noise_sd}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = times
        .iter()
        .map(|&t| {
            let clean = crate::model::logistic_predict(params, t)?;
            Ok((vec![t], clean + noise.sample(&mut rng)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::with_names(points, vec!["t".into()], "N".into())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn cols(s: &str) -> Vec<Column> {
        parse_columns(s)
    }

    #[test]
    fn load_single_row() {
        let f = write_tmp("t,N\n0,2.0\n");
        let ds = load_csv(f.path(), &cols("t"), &"N".parse().unwrap()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.x(0), &[0.0]);
        assert_eq!(ds.y(0), 2.0);
        assert_eq!(ds.x_names(), &["t".to_string()]);
    }

    #[test]
    fn load_23_rows_preserves_order() {
        let mut s = String::from("t,N\n");
        for i in 0..23 {
            s.push_str(&format!("{i},{}\n", 2.0 * i as f64 + 1.0));
        }
        let f = write_tmp(&s);
        let ds = load_csv(f.path(), &cols("0"), &Column::Index(1)).unwrap();
        assert_eq!(ds.len(), 23);
        for i in 0..23 {
            assert_eq!(ds.x(i)[0], i as f64);
            assert_eq!(ds.y(i), 2.0 * i as f64 + 1.0);
        }
    }

    #[test]
    fn text_cell_names_position() {
        let f = write_tmp("t,N\n0,2.0\n1,abc\n");
        let err = load_csv(f.path(), &cols("t"), &"N".parse().unwrap()).unwrap_err();
        match err {
            Error::Data(DataError::NonNumeric {
                row, column, value, name, ..
            }) => {
                assert_eq!((row, column), (3, 2));
                assert_eq!(value, "abc");
                assert_eq!(name, "N");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn load_errors() {
        let missing = Path::new("/nonexistent/definitely/missing.csv");
        assert!(matches!(
            load_csv(missing, &cols("t"), &"N".parse().unwrap()),
            Err(Error::Data(DataError::Read { .. }))
        ));
        let empty = write_tmp("");
        assert!(matches!(
            load_csv(empty.path(), &cols("t"), &"N".parse().unwrap()),
            Err(Error::Data(DataError::Empty { .. }))
        ));
        let header_only = write_tmp("t,N\n");
        assert!(matches!(
            load_csv(header_only.path(), &cols("t"), &"N".parse().unwrap()),
            Err(Error::Data(DataError::NoRows { .. }))
        ));
        let ragged = write_tmp("t,N\n0,1\n1,2,3\n");
        assert!(matches!(
            load_csv(ragged.path(), &cols("t"), &"N".parse().unwrap()),
            Err(Error::Data(DataError::ColumnCount { row: 3, expected: 2, found: 3, .. }))
        ));
        let f = write_tmp("t,N\n0,1\n");
        assert!(matches!(
            load_csv(f.path(), &cols("time"), &"N".parse().unwrap()),
            Err(Error::Data(DataError::UnknownColumn(_)))
        ));
    }

    #[test]
    fn dataset_rejects_mixed_dimensions() {
        let err = Dataset::new(vec![(vec![0.0], 1.0), (vec![0.0, 1.0], 2.0)]).unwrap_err();
        assert!(matches!(err, DataError::Dimension { index: 1, .. }));
        assert!(matches!(Dataset::new(vec![]), Err(DataError::NoPoints)));
    }

    fn ramp(d: usize) -> Dataset {
        Dataset::from_pairs(&(0..d).map(|i| (i as f64, (i * i) as f64)).collect::<Vec<_>>())
            .unwrap()
    }

    #[test]
    fn bootstrap_shape_and_membership() {
        let parent = ramp(23);
        let set = bootstrap(&parent, 26, 23, Replacement::With, 7).unwrap();
        assert_eq!(set.count(), 26);
        assert_eq!(set.experts(), 25);
        for k in 0..26 {
            assert_eq!(set.indices(k).len(), 23);
            assert!(set.indices(k).iter().all(|&i| i < 23));
        }
        for (x, y) in set.validation(&parent).iter() {
            assert!(parent
                .view()
                .iter()
                .any(|(px, py)| px == x && py.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn without_replacement_full_size_is_permutation() {
        let parent = ramp(5);
        let set = bootstrap(&parent, 1, 5, Replacement::Without, 3).unwrap();
        let mut idx = set.indices(0).to_vec();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let parent = ramp(23);
        let a = bootstrap(&parent, 26, 23, Replacement::With, 11).unwrap();
        let b = bootstrap(&parent, 26, 23, Replacement::With, 11).unwrap();
        assert_eq!(a, b);
        let c = bootstrap(&parent, 26, 23, Replacement::With, 12).unwrap();
        assert_ne!(a.indices, c.indices);
    }

    #[test]
    fn bootstrap_argument_errors() {
        let parent = ramp(5);
        assert!(bootstrap(&parent, 2, 0, Replacement::With, 0).is_err());
        assert!(bootstrap(&parent, 2, 6, Replacement::Without, 0).is_err());
        // oversized draws are fine with replacement
        assert!(bootstrap(&parent, 2, 6, Replacement::With, 0).is_ok());
    }

    #[test]
    fn with_replacement_index_frequencies_are_uniform() {
        let parent = ramp(4);
        let set = bootstrap(&parent, 10_000, 1, Replacement::With, 2024).unwrap();
        let mut counts = [0usize; 4];
        for k in 0..set.count() {
            counts[set.indices(k)[0]] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.25).abs() <= 0.05, "frequency {freq}");
        }
    }

    #[test]
    fn column_parsing() {
        assert_eq!(parse_columns("t, 2"), vec![Column::Name("t".into()), Column::Index(2)]);
        assert_eq!(Column::Name("t".into()).to_string(), "t");
    }
}
