//! Datasets: CSV ingestion, min-max normalization, seeded 80/20 split and the
//! synthetic stand-ins (two Gaussian blobs, noisy linear regression).

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kv::KvDoc;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
    /// `max |x_i|` over every sample and feature.
    pub input_bound: f64,
}

impl DatasetStats {
    fn compute(inputs: &[Vec<f64>], n: usize) -> Self {
        let mut feature_min = vec![f64::INFINITY; n];
        let mut feature_max = vec![f64::NEG_INFINITY; n];
        let mut input_bound = 0.0f64;
        for x in inputs {
            for (i, &v) in x.iter().enumerate() {
                feature_min[i] = feature_min[i].min(v);
                feature_max[i] = feature_max[i].max(v);
                input_bound = input_bound.max(v.abs());
            }
        }
        Self {
            feature_min,
            feature_max,
            input_bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    stats: DatasetStats,
    warnings: Vec<String>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Shape {
                context: "dataset targets",
                expected: inputs.len(),
                actual: targets.len(),
            });
        }
        let n = inputs.first().map_or(0, Vec::len);
        let m = targets.first().map_or(0, Vec::len);
        for (x, y) in inputs.iter().zip(&targets) {
            if x.len() != n {
                return Err(Error::Shape {
                    context: "dataset input width",
                    expected: n,
                    actual: x.len(),
                });
            }
            if y.len() != m {
                return Err(Error::Shape {
                    context: "dataset target width",
                    expected: m,
                    actual: y.len(),
                });
            }
            if x.iter().chain(y).any(|v| !v.is_finite()) {
                return Err(Error::invalid("dataset", "all values must be finite"));
            }
        }
        let stats = DatasetStats::compute(&inputs, n);
        Ok(Self {
            name: name.into(),
            inputs,
            targets,
            stats,
            warnings: Vec::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn target_dim(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    pub fn sample(&self, idx: usize) -> (&[f64], &[f64]) {
        (&self.inputs[idx], &self.targets[idx])
    }

    pub fn stats(&self) -> &DatasetStats {
        &self.stats
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Sidecar describing the dataset, in the shared key-value format.
    pub fn stats_kv(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        doc.push("name", &self.name);
        doc.push("samples", self.len());
        doc.push("features", self.input_dim());
        doc.push("targets", self.target_dim());
        doc.push("input_bound", self.stats.input_bound);
        for i in 0..self.input_dim() {
            doc.push(format!("feature.{i}.min"), self.stats.feature_min[i]);
            doc.push(format!("feature.{i}.max"), self.stats.feature_max[i]);
        }
        for (i, w) in self.warnings.iter().enumerate() {
            doc.push(format!("warning.{i}"), w);
        }
        doc
    }

    /// Writes the dataset as CSV with columns `x0..x{n-1}, y0..y{m-1}`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| io(csv_io(e)))?;
        let header: Vec<String> = (0..self.input_dim())
            .map(|i| format!("x{i}"))
            .chain((0..self.target_dim()).map(|i| format!("y{i}")))
            .collect();
        w.write_record(&header).map_err(|e| io(csv_io(e)))?;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let row: Vec<String> = x.iter().chain(y).map(f64::to_string).collect();
            w.write_record(&row).map_err(|e| io(csv_io(e)))?;
        }
        w.flush().map_err(io)
    }

    /// Schema matching [`Dataset::save_csv`].
    pub fn default_schema(n: usize, m: usize) -> CsvSchema {
        CsvSchema::new(
            (0..n).map(|i| format!("x{i}")).collect(),
            (0..m).map(|i| format!("y{i}")).collect(),
        )
    }
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

/// Maps a label column onto a numeric target, dropping rows with other labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    pub column: String,
    pub labels: Vec<(String, f64)>,
}

/// Which CSV columns are features and which are targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub features: Vec<String>,
    pub targets: Vec<String>,
    pub class_map: Option<ClassMap>,
}

impl CsvSchema {
    pub fn new(features: Vec<String>, targets: Vec<String>) -> Self {
        Self {
            features,
            targets,
            class_map: None,
        }
    }

    pub fn with_class_map(mut self, map: ClassMap) -> Self {
        self.class_map = Some(map);
        self
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    parse_csv(file, schema, &name)
}

/// Parses CSV from any reader. Header row required; rows are reported by
/// their line number in the source.
pub fn parse_csv<R: Read>(reader: R, schema: &CsvSchema, source_name: &str) -> Result<Dataset> {
    if schema.features.is_empty() {
        return Err(Error::invalid("schema", "no feature columns"));
    }
    if schema.targets.is_empty() && schema.class_map.is_none() {
        return Err(Error::invalid("schema", "no target columns"));
    }
    let malformed = |row: usize, e: csv::Error| Error::Malformed {
        source_name: source_name.to_string(),
        row,
        message: e.to_string(),
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| malformed(1, e))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyFile {
            source_name: source_name.to_string(),
        });
    }
    let find = |col: &str| {
        headers.iter().position(|h| h == col).ok_or_else(|| Error::MissingColumn {
            source_name: source_name.to_string(),
            column: col.to_string(),
        })
    };
    let feat_idx = schema.features.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let targ_idx = schema.targets.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let class_idx = schema.class_map.as_ref().map(|m| find(&m.column)).transpose()?;

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            malformed(row, e)
        })?;
        if !more {
            break;
        }
        let row = record.position().map_or(0, |p| p.line() as usize);
        let cell = |idx: usize, col: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            if raw.is_empty() {
                return Err(Error::BlankCell {
                    source_name: source_name.to_string(),
                    row,
                    column: col.to_string(),
                });
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::ParseCell {
                    source_name: source_name.to_string(),
                    row,
                    column: col.to_string(),
                    value: raw.to_string(),
                }),
            }
        };
        let class_target = match (&schema.class_map, class_idx) {
            (Some(map), Some(idx)) => {
                let label = record.get(idx).unwrap_or("");
                match map.labels.iter().find(|(l, _)| l == label) {
                    Some((_, v)) => Some(*v),
                    None => continue,
                }
            }
            _ => None,
        };
        let x = feat_idx
            .iter()
            .zip(&schema.features)
            .map(|(&i, c)| cell(i, c))
            .collect::<Result<Vec<_>>>()?;
        let mut y = targ_idx
            .iter()
            .zip(&schema.targets)
            .map(|(&i, c)| cell(i, c))
            .collect::<Result<Vec<_>>>()?;
        y.extend(class_target);
        inputs.push(x);
        targets.push(y);
    }
    if inputs.is_empty() {
        return Err(Error::EmptyFile {
            source_name: source_name.to_string(),
        });
    }
    Dataset::new(source_name, inputs, targets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Affine map of every feature onto `[0, 1]`; constant features become 0.
    MinMaxUnit,
    None,
}

pub fn normalize(ds: &Dataset, mode: Normalization) -> Dataset {
    match mode {
        Normalization::None => ds.clone(),
        Normalization::MinMaxUnit => {
            let st = &ds.stats;
            let mut warnings = ds.warnings.clone();
            for i in 0..ds.input_dim() {
                if st.feature_max[i] == st.feature_min[i] {
                    let w = format!("feature {i} is constant; mapped to 0");
                    if !warnings.contains(&w) {
                        warnings.push(w);
                    }
                }
            }
            let inputs = ds
                .inputs
                .iter()
                .map(|x| {
                    x.iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let (lo, hi) = (st.feature_min[i], st.feature_max[i]);
                            if hi == lo {
                                0.0
                            } else {
                                ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                            }
                        })
                        .collect()
                })
                .collect::<Vec<Vec<f64>>>();
            let stats = DatasetStats::compute(&inputs, ds.input_dim());
            Dataset {
                name: ds.name.clone(),
                inputs,
                targets: ds.targets.clone(),
                stats,
                warnings,
            }
        }
    }
}

/// Seeded shuffle then an 80/20 partition with `⌈0.8 N⌉` training samples.
pub fn split(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    if n < 5 {
        return Err(Error::invalid("dataset", format!("need at least 5 samples to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (4 * n).div_ceil(5);
    let take = |ids: &[usize], suffix: &str| {
        Dataset::new(
            format!("{}-{suffix}", ds.name),
            ids.iter().map(|&i| ds.inputs[i].clone()).collect(),
            ids.iter().map(|&i| ds.targets[i].clone()).collect(),
        )
    };
    Ok((take(&idx[..n_train], "train")?, take(&idx[n_train..], "test")?))
}

pub const BLOB_DIMS: usize = 4;

/// Two unit-variance Gaussian clusters in 4 dimensions, centred at
/// `±(separation/2) u` with `u = (1,1,1,1)/2`, so the centre distance is
/// `separation`. Class 0 comes first, then class 1.
pub fn gen_blobs(seed: u64, per_class: usize, separation: f64) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::invalid("per_class", "must be positive"));
    }
    if !separation.is_finite() {
        return Err(Error::invalid("separation", "must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let offset = separation / 2.0 / (BLOB_DIMS as f64).sqrt();
    let mut inputs = Vec::with_capacity(2 * per_class);
    let mut targets = Vec::with_capacity(2 * per_class);
    for (class, sign) in [(0.0, -1.0), (1.0, 1.0)] {
        for _ in 0..per_class {
            inputs.push((0..BLOB_DIMS).map(|_| sign * offset + normal.sample(&mut rng)).collect());
            targets.push(vec![class]);
        }
    }
    Dataset::new("blobs", inputs, targets)
}

/// `y = coeffs · x + N(0, noise_sd²)` with `x` uniform on `[0, 1]^n`.
pub fn gen_linreg(seed: u64, count: usize, noise_sd: f64, coeffs: &[f64]) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::invalid("count", "must be positive"));
    }
    if coeffs.is_empty() {
        return Err(Error::invalid("coeffs", "need at least one coefficient"));
    }
    let normal = Normal::new(0.0, noise_sd).map_err(|e| Error::invalid("noise_sd", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let x: Vec<f64> = (0..coeffs.len()).map(|_| rng.random::<f64>()).collect();
        let clean: f64 = x.iter().zip(coeffs).map(|(a, b)| a * b).sum();
        let y = if noise_sd == 0.0 { clean } else { clean + normal.sample(&mut rng) };
        inputs.push(x);
        targets.push(vec![y]);
    }
    Dataset::new("linreg", inputs, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> CsvSchema {
        CsvSchema::new(vec!["a".into(), "b".into()], vec!["y".into()])
    }

    #[test]
    fn parses_small_csv_exactly() {
        let text = "a,b,y\n1.5,-2,0\n0.125,3e-4,1\n7,8,0.5\n";
        let ds = parse_csv(text.as_bytes(), &schema(), "t").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.inputs()[1], vec![0.125, 3e-4]);
        assert_eq!(ds.targets()[2], vec![0.5]);
        assert_eq!(ds.stats().input_bound, 8.0);
    }

    #[test]
    fn blank_target_names_row() {
        let text = "a,b,y\n1,2,0\n3,4,\n";
        match parse_csv(text.as_bytes(), &schema(), "t") {
            Err(Error::BlankCell { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(parse_csv("".as_bytes(), &schema(), "t"), Err(Error::EmptyFile { .. })));
        assert!(matches!(parse_csv("a,b,y\n".as_bytes(), &schema(), "t"), Err(Error::EmptyFile { .. })));
        assert!(matches!(
            parse_csv("a,y\n1,2\n".as_bytes(), &schema(), "t"),
            Err(Error::MissingColumn { column, .. }) if column == "b"
        ));
        assert!(matches!(
            parse_csv("a,b,y\n1,x,2\n".as_bytes(), &schema(), "t"),
            Err(Error::ParseCell { row: 2, .. })
        ));
        assert!(matches!(
            parse_csv("a,b,y\n1,2\n".as_bytes(), &schema(), "t"),
            Err(Error::Malformed { .. })
        ));
        assert!(matches!(
            load_csv(Path::new("/definitely/not/here.csv"), &schema()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn normalize_cases() {
        let ds = Dataset::new("n", vec![vec![0.0, 2.0], vec![5.0, 2.0], vec![10.0, 2.0]], vec![vec![0.0]; 3]).unwrap();
        let n = normalize(&ds, Normalization::MinMaxUnit);
        let col0: Vec<f64> = n.inputs().iter().map(|x| x[0]).collect();
        assert_eq!(col0, vec![0.0, 0.5, 1.0]);
        assert!(n.inputs().iter().all(|x| x[1] == 0.0));
        assert_eq!(n.warnings().len(), 1);
        assert_eq!(n.stats().input_bound, 1.0);

        let unit = Dataset::new("u", vec![vec![0.0], vec![0.3], vec![1.0]], vec![vec![1.0]; 3]).unwrap();
        assert_eq!(normalize(&unit, Normalization::MinMaxUnit).inputs(), unit.inputs());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = gen_linreg(1, 100, 0.1, &[1.0, 2.0]).unwrap();
        let (tr, te) = split(&ds, 9).unwrap();
        assert_eq!((tr.len(), te.len()), (80, 20));
        let (tr2, te2) = split(&ds, 9).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);

        let five = gen_linreg(1, 5, 0.0, &[1.0]).unwrap();
        let (a, b) = split(&five, 0).unwrap();
        assert_eq!((a.len(), b.len()), (4, 1));
        assert!(split(&gen_linreg(1, 4, 0.0, &[1.0]).unwrap(), 0).is_err());
    }

    #[test]
    fn generators() {
        let b = gen_blobs(3, 1000, 0.0).unwrap();
        let mean = |class: f64| {
            let rows: Vec<_> = b.inputs().iter().zip(b.targets()).filter(|(_, y)| y[0] == class).collect();
            rows.iter().map(|(x, _)| x.iter().sum::<f64>()).sum::<f64>() / rows.len() as f64
        };
        assert!((mean(0.0) - mean(1.0)).abs() < 0.5);

        let coeffs = [0.5, -1.0, 2.0];
        let lr = gen_linreg(4, 50, 0.0, &coeffs).unwrap();
        for (x, y) in lr.inputs().iter().zip(lr.targets()) {
            let exact: f64 = x.iter().zip(&coeffs).map(|(a, c)| a * c).sum();
            assert_eq!(y[0], exact);
            assert!(x.iter().all(|v| (0.0..1.0).contains(v)));
        }
    }

    #[test]
    fn class_map_filters_rows() {
        let text = "f,species\n1,a\n2,b\n3,c\n4,a\n";
        let schema = CsvSchema::new(vec!["f".into()], vec![]).with_class_map(ClassMap {
            column: "species".into(),
            labels: vec![("a".into(), 0.0), ("b".into(), 1.0)],
        });
        let ds = parse_csv(text.as_bytes(), &schema, "iris").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.targets(), &[vec![0.0], vec![1.0], vec![0.0]]);
    }

    proptest! {
        #[test]
        fn save_load_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, 3), 1..20)) {
            let ds = Dataset::new("rt", rows.iter().map(|r| r[..2].to_vec()).collect(), rows.iter().map(|r| vec![r[2]]).collect()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("rt.csv");
            ds.save_csv(&p).unwrap();
            let back = load_csv(&p, &Dataset::default_schema(2, 1)).unwrap();
            prop_assert_eq!(back.inputs(), ds.inputs());
            prop_assert_eq!(back.targets(), ds.targets());
        }

        #[test]
        fn split_is_partition(n in 5usize..60, seed in any::<u64>()) {
            let ds = Dataset::new("p", (0..n).map(|i| vec![i as f64]).collect(), vec![vec![0.0]; n]).unwrap();
            let (a, b) = split(&ds, seed).unwrap();
            let mut all: Vec<f64> = a.inputs().iter().chain(b.inputs()).map(|x| x[0]).collect();
            all.sort_by(f64::total_cmp);
            prop_assert_eq!(all, (0..n).map(|i| i as f64).collect::<Vec<_>>());
        }

        #[test]
        fn normalize_idempotent(rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 2), 2..30)) {
            let ds = Dataset::new("i", rows.clone(), vec![vec![0.0]; rows.len()]).unwrap();
            let once = normalize(&ds, Normalization::MinMaxUnit);
            let twice = normalize(&once, Normalization::MinMaxUnit);
            prop_assert_eq!(once.inputs(), twice.inputs());
        }
    }
}
