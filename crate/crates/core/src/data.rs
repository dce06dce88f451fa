//! Synthetic benchmarks with controllable leakage, and CSV ingestion.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::defense::pia::sample_bags;
use crate::domain::{Dataset, DatasetBag};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Rng};

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn unit_vector(d: usize, rng: &mut Rng) -> Array1<f64> {
    let v = Array1::from_shape_simple_fn(d, || normal(rng));
    let n = v.dot(&v).sqrt();
    v / n
}

/// Membership benchmark. Members and non-members are i.i.d. draws, so
/// membership is only visible through overfitting of a small member set.
/// The default is a long tail of small labelled clusters, where fitting rare
/// clusters helps utility and also leaks membership; `subclusters = 0` gives
/// a plain Gaussian class mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiaSynthSpec {
    pub n_members: usize,
    pub n_nonmembers: usize,
    pub n_test: usize,
    pub d: usize,
    pub n_classes: usize,
    /// Distance of each class mean from the origin.
    pub separation: f64,
    /// Probability that a label is replaced by a uniformly drawn class.
    pub label_noise: f64,
    /// Long-tail mode when positive: this many small clusters with random
    /// labels and Zipf-distributed frequencies replace the class mixture.
    #[serde(default)]
    pub subclusters: usize,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    /// Within-cluster standard deviation in long-tail mode.
    #[serde(default = "default_spread")]
    pub cluster_spread: f64,
    pub seed: u64,
}

fn default_zipf() -> f64 {
    1.0
}

fn default_spread() -> f64 {
    0.5
}

impl Default for MiaSynthSpec {
    fn default() -> Self {
        Self {
            n_members: 500,
            n_nonmembers: 500,
            n_test: 2000,
            d: 20,
            n_classes: 2,
            separation: 1.0,
            label_noise: 0.1,
            subclusters: 200,
            zipf_exponent: default_zipf(),
            cluster_spread: default_spread(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiaTask {
    pub members: Dataset,
    pub nonmembers: Dataset,
    pub utility_test: Dataset,
}

fn draw_mixture(
    n: usize,
    means: &[Array1<f64>],
    label_noise: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    let k = means.len();
    let d = means[0].len();
    let mut x = Array2::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = rng.random_range(0..k);
        for j in 0..d {
            x[[i, j]] = means[c][j] + normal(rng);
        }
        let label = if rng.random::<f64>() < label_noise {
            rng.random_range(0..k)
        } else {
            c
        };
        y.push(label);
    }
    Dataset::new(x, y, None, k)
}

pub fn synth_mia_task(spec: &MiaSynthSpec) -> Result<MiaTask> {
    if spec.n_classes < 2 || spec.d == 0 || spec.n_members == 0 || spec.n_nonmembers == 0 {
        return Err(invalid("mia benchmark needs >= 2 classes, d > 0 and both groups non-empty"));
    }
    let mut rng = rng::substream(spec.seed, rng::streams::DATA);
    if spec.subclusters > 0 {
        return long_tail_task(spec, &mut rng);
    }
    let first = unit_vector(spec.d, &mut rng);
    let means: Vec<Array1<f64>> = (0..spec.n_classes)
        .map(|c| {
            let dir = if spec.n_classes == 2 {
                if c == 0 { -&first } else { first.clone() }
            } else {
                unit_vector(spec.d, &mut rng)
            };
            dir * spec.separation
        })
        .collect();
    Ok(MiaTask {
        members: draw_mixture(spec.n_members, &means, spec.label_noise, &mut rng)?,
        nonmembers: draw_mixture(spec.n_nonmembers, &means, spec.label_noise, &mut rng)?,
        utility_test: draw_mixture(spec.n_test.max(1), &means, spec.label_noise, &mut rng)?,
    })
}

fn long_tail_task(spec: &MiaSynthSpec, rng: &mut Rng) -> Result<MiaTask> {
    if !(spec.zipf_exponent >= 0.0 && spec.cluster_spread >= 0.0) {
        return Err(invalid("zipf exponent and cluster spread must be >= 0"));
    }
    let k = spec.subclusters;
    let centers = Array2::from_shape_simple_fn((k, spec.d), || normal(rng) * spec.separation);
    let labels: Vec<usize> = (0..k).map(|_| rng.random_range(0..spec.n_classes)).collect();
    let weights: Vec<f64> = (0..k).map(|j| ((j + 1) as f64).powf(-spec.zipf_exponent)).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| invalid(e.to_string()))?;
    let mut draw = |n: usize| -> Result<Dataset> {
        let mut x = Array2::zeros((n, spec.d));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = pick.sample(rng);
            for j in 0..spec.d {
                x[[i, j]] = centers[[c, j]] + spec.cluster_spread * normal(rng);
            }
            y.push(if rng.random::<f64>() < spec.label_noise {
                rng.random_range(0..spec.n_classes)
            } else {
                labels[c]
            });
        }
        Dataset::new(x, y, None, spec.n_classes)
    };
    Ok(MiaTask {
        members: draw(spec.n_members)?,
        nonmembers: draw(spec.n_nonmembers)?,
        utility_test: draw(spec.n_test.max(1))?,
    })
}

/// Property benchmark: a binary attribute shifts a block of features
/// independently of the task label, and bags realize attribute ratios from a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiaSynthSpec {
    pub pool_size: usize,
    pub n_test: usize,
    pub d_task: usize,
    pub d_attribute: usize,
    pub d_noise: usize,
    pub n_classes: usize,
    pub separation: f64,
    /// Mean shift of the attribute block between attribute 0 and 1.
    pub attribute_effect: f64,
    pub ratio_grid: Vec<f64>,
    pub bag_size: (usize, usize),
    pub n_train_bags: usize,
    pub n_test_bags: usize,
    pub seed: u64,
}

impl Default for PiaSynthSpec {
    fn default() -> Self {
        Self {
            pool_size: 4000,
            n_test: 2000,
            d_task: 4,
            d_attribute: 4,
            d_noise: 4,
            n_classes: 2,
            separation: 1.0,
            attribute_effect: 3.0,
            ratio_grid: vec![0.2, 0.3, 0.4, 0.5],
            bag_size: (30, 60),
            n_train_bags: 400,
            n_test_bags: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiaTask {
    pub train_pool: Dataset,
    pub test_pool: Dataset,
    pub train_bags: Vec<DatasetBag>,
    pub test_bags: Vec<DatasetBag>,
    pub utility_test: Dataset,
    pub ratio_grid: Vec<f64>,
}

impl PiaSynthSpec {
    pub fn dim(&self) -> usize {
        self.d_task + self.d_attribute + self.d_noise
    }

    fn draw(&self, n: usize, task_dir: &Array1<f64>, attr_dir: &Array1<f64>, rng: &mut Rng) -> Result<Dataset> {
        let d = self.dim();
        let mut x = Array2::zeros((n, d));
        let mut y = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        for i in 0..n {
            let label = rng.random_range(0..self.n_classes);
            let attr = rng.random_range(0..2usize);
            let sign = |v: usize| if v == 1 { 1.0 } else { -1.0 };
            for j in 0..d {
                x[[i, j]] = normal(rng);
            }
            for j in 0..self.d_task {
                let shift = if self.n_classes == 2 {
                    sign(label)
                } else {
                    ((label as f64) / (self.n_classes - 1) as f64) * 2.0 - 1.0
                };
                x[[i, j]] += self.separation * shift * task_dir[j];
            }
            for j in 0..self.d_attribute {
                x[[i, self.d_task + j]] += 0.5 * self.attribute_effect * sign(attr) * attr_dir[j];
            }
            y.push(label);
            a.push(attr);
        }
        Dataset::new(x, y, Some(a), self.n_classes)
    }
}

pub fn synth_pia_bags(spec: &PiaSynthSpec) -> Result<PiaTask> {
    if spec.d_task == 0 || spec.d_attribute == 0 || spec.n_classes < 2 {
        return Err(invalid("pia benchmark needs task and attribute blocks and >= 2 classes"));
    }
    let mut rng = rng::substream(spec.seed, rng::streams::DATA);
    let task_dir = unit_vector(spec.d_task, &mut rng);
    let attr_dir = unit_vector(spec.d_attribute, &mut rng);
    let train_pool = spec.draw(spec.pool_size, &task_dir, &attr_dir, &mut rng)?;
    let test_pool = spec.draw(spec.pool_size, &task_dir, &attr_dir, &mut rng)?;
    let utility_test = spec.draw(spec.n_test.max(1), &task_dir, &attr_dir, &mut rng)?;
    let bag_seed = rng::substream_seed(spec.seed, "bags");
    let train_bags = sample_bags(&train_pool, &spec.ratio_grid, spec.bag_size, spec.n_train_bags, bag_seed)?;
    let test_bags = sample_bags(&test_pool, &spec.ratio_grid, spec.bag_size, spec.n_test_bags, bag_seed ^ 1)?;
    Ok(PiaTask {
        train_pool,
        test_pool,
        train_bags,
        test_bags,
        utility_test,
        ratio_grid: spec.ratio_grid.clone(),
    })
}

/// Reconstruction benchmark: features driven by a low-dimensional latent, with
/// the task label determined by the first latent coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DraSynthSpec {
    pub n_train: usize,
    pub n_test: usize,
    /// Feature dimension for tabular data; ignored when `grid` is set.
    pub d: usize,
    pub latent_dim: usize,
    /// Optional `(height, width)`: features become a flattened image in `[0, 1]`.
    pub grid: Option<(usize, usize)>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DraSynthSpec {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 500,
            d: 12,
            latent_dim: 6,
            grid: None,
            noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DraTask {
    pub train: Dataset,
    pub test: Dataset,
    pub shape: Option<(usize, usize)>,
}

pub fn synth_dra_task(spec: &DraSynthSpec) -> Result<DraTask> {
    if spec.latent_dim == 0 {
        return Err(invalid("latent_dim must be positive"));
    }
    let mut rng = rng::substream(spec.seed, rng::streams::DATA);
    let k = spec.latent_dim;
    let d = match spec.grid {
        Some((h, w)) => h * w,
        None => spec.d,
    };
    if d == 0 {
        return Err(invalid("feature dimension must be positive"));
    }
    // loading matrix: random for tabular, low-frequency cosines for grids
    let loadings: Array2<f64> = match spec.grid {
        None => Array2::from_shape_simple_fn((d, k), || normal(&mut rng) / (k as f64).sqrt()),
        Some((h, w)) => {
            let mut a = Array2::zeros((d, k));
            for j in 0..k {
                let fr = rng.random_range(0.0..2.0);
                let fc = rng.random_range(0.0..2.0);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                for r in 0..h {
                    for c in 0..w {
                        let t = std::f64::consts::TAU * (fr * r as f64 / h as f64 + fc * c as f64 / w as f64) + phase;
                        a[[r * w + c, j]] = 0.12 * t.cos();
                    }
                }
            }
            a
        }
    };
    let mut draw = |n: usize| -> Result<Dataset> {
        let mut x = Array2::zeros((n, d));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let z = Array1::from_shape_simple_fn(k, || normal(&mut rng));
            let mut row = loadings.dot(&z);
            for v in row.iter_mut() {
                *v += spec.noise * normal(&mut rng);
                if spec.grid.is_some() {
                    *v = (0.5 + *v).clamp(0.0, 1.0);
                }
            }
            x.row_mut(i).assign(&row);
            y.push((z[0] > 0.0) as usize);
        }
        Dataset::new(x, y, None, 2)
    };
    let train = draw(spec.n_train.max(2))?;
    let test = draw(spec.n_test.max(2))?;
    Ok(DraTask {
        train,
        test,
        shape: spec.grid,
    })
}

/// Which CSV columns carry the label and the private attribute; every other
/// column is a feature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    pub attribute_column: Option<String>,
}

impl CsvSchema {
    pub fn new(label_column: impl Into<String>) -> Self {
        Self {
            label_column: label_column.into(),
            attribute_column: None,
        }
    }

    pub fn with_attribute(mut self, column: impl Into<String>) -> Self {
        self.attribute_column = Some(column.into());
        self
    }
}

fn parse_index(cell: &str, row: usize, column: &str) -> Result<usize> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        row,
        detail: format!("column `{column}`: `{cell}` is not numeric"),
    })?;
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::Parse {
            row,
            detail: format!("column `{column}`: `{cell}` is not a non-negative integer"),
        });
    }
    Ok(v as usize)
}

/// Read a rectangular numeric CSV with a header row. Row order is preserved.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let label_col = find(&schema.label_column)?;
    let attr_col = schema.attribute_column.as_deref().map(find).transpose()?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_col && Some(c) != attr_col)
        .collect();

    let mut flat = Vec::new();
    let mut labels = Vec::new();
    let mut attrs = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let row = row + 1;
        if record.len() != headers.len() {
            return Err(Error::RaggedRow {
                row,
                expected: headers.len(),
                got: record.len(),
            });
        }
        for &c in &feature_cols {
            let cell = &record[c];
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                detail: format!("column `{}`: `{cell}` is not numeric", headers[c]),
            })?;
            flat.push(v);
        }
        labels.push(parse_index(&record[label_col], row, &schema.label_column)?);
        if let Some(c) = attr_col {
            attrs.push(parse_index(&record[c], row, &headers[c])?);
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, feature_cols.len()), flat).map_err(|e| invalid(e.to_string()))?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, attr_col.map(|_| attrs), n_classes)
}

/// Write a store with columns `x0..x{d-1}`, the label column and, when present,
/// the attribute column. Floats use the shortest round-tripping representation.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset, schema: &CsvSchema) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push(schema.label_column.clone());
    let attr = match (&schema.attribute_column, &data.attributes) {
        (Some(name), Some(a)) => {
            header.push(name.clone());
            Some(a)
        }
        _ => None,
    };
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.labels[i].to_string());
        if let Some(a) = attr {
            rec.push(a[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Shuffle rows of a store in place (used to decorrelate CSV row order).
pub fn shuffle_rows(data: &Dataset, seed: u64) -> Result<Dataset> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng::from_seed(seed));
    data.subset(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn mia_task_is_reproducible() {
        let spec = MiaSynthSpec {
            n_members: 50,
            n_nonmembers: 40,
            n_test: 30,
            ..Default::default()
        };
        let a = synth_mia_task(&spec).unwrap();
        let b = synth_mia_task(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.members.len(), 50);
        assert_eq!(a.nonmembers.len(), 40);
        assert_eq!(a.members.dim(), 20);
        let c = synth_mia_task(&MiaSynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.members, c.members);
    }

    #[test]
    fn pia_bags_follow_grid() {
        let spec = PiaSynthSpec {
            pool_size: 600,
            n_train_bags: 40,
            n_test_bags: 20,
            ..Default::default()
        };
        let t = synth_pia_bags(&spec).unwrap();
        assert_eq!(t.train_bags.len(), 40);
        for bag in &t.train_bags {
            let ones = bag.data.attributes.as_ref().unwrap().iter().sum::<usize>();
            let size = bag.data.len();
            let ratio = spec.ratio_grid[bag.property];
            assert_eq!(ones, (ratio * size as f64).round_ties_even() as usize);
        }
    }

    #[test]
    fn dra_grid_in_unit_range() {
        let t = synth_dra_task(&DraSynthSpec {
            n_train: 20,
            n_test: 5,
            grid: Some((8, 8)),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(t.train.dim(), 64);
        assert!(t.train.features.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn csv_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let mut f = std::fs::File::create(&p).unwrap();
        writeln!(f, "a,b,y\n1.0,2.0,0\n3.5,-1,1\n0,0,1").unwrap();
        let d = load_csv(&p, &CsvSchema::new("y")).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.labels, vec![0, 1, 1]);
        assert_eq!(d.features[[1, 0]], 3.5);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "a,b,y\n1,2,0\n").unwrap();
        assert!(matches!(load_csv(&p, &CsvSchema::new("label")), Err(Error::MissingColumn(_))));

        std::fs::write(&p, "a,b,y\n1,2,0\n1,2\n").unwrap();
        assert!(matches!(load_csv(&p, &CsvSchema::new("y")), Err(Error::RaggedRow { row: 2, .. })));

        std::fs::write(&p, "a,b,y\n1,abc,0\n").unwrap();
        assert!(matches!(load_csv(&p, &CsvSchema::new("y")), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let spec = PiaSynthSpec {
            pool_size: 100,
            n_train_bags: 4,
            n_test_bags: 4,
            bag_size: (5, 10),
            ..Default::default()
        };
        let t = synth_pia_bags(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        let schema = CsvSchema::new("y").with_attribute("attr");
        write_csv(&p, &t.train_pool, &schema).unwrap();
        let back = load_csv(&p, &schema).unwrap();
        assert_eq!(back.labels, t.train_pool.labels);
        assert_eq!(back.attributes, t.train_pool.attributes);
        let max_err = (&back.features - &t.train_pool.features)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_err <= 1e-12);
    }
}
