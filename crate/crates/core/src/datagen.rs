//! Synthetic benchmark data: mixture-of-Gaussians and two-moons sources,
//! ground-truth maps, paired subsets, and a CSV round-trip format.

use std::f64::consts::{FRAC_PI_4, PI};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffengine::{format_f64, stream_rng, SessionRng, Tensor};
use crate::latent::random_orthonormal;
use crate::{Error, Result};

pub const MOG_TRAIN: usize = 1000;
pub const MOG_TEST: usize = 100;
pub const MOONS_TRAIN: usize = 2000;
pub const MOONS_TEST: usize = 500;
pub const MOONS_NOISE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mog,
    Moons,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Linear,
    Nonlinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrueMap {
    /// Rotate by π/4, scale by (1.0, 0.7), shift by (2.0, -0.5).
    MogLinear,
    /// Rotate by π/4.
    MoonsLinear,
    /// `(x, y) -> (sin(2πx) + exp(y), x)`.
    Nonlinear,
}

pub const MOG_LINEAR_SCALE: [f64; 2] = [1.0, 0.7];
pub const MOG_LINEAR_SHIFT: [f64; 2] = [2.0, -0.5];

impl TrueMap {
    pub fn for_benchmark(dataset: DatasetKind, map: MapKind) -> Self {
        match (dataset, map) {
            (DatasetKind::Mog, MapKind::Linear) => TrueMap::MogLinear,
            (DatasetKind::Moons, MapKind::Linear) => TrueMap::MoonsLinear,
            (_, MapKind::Nonlinear) => TrueMap::Nonlinear,
        }
    }

    pub fn apply_point(self, p: [f64; 2]) -> [f64; 2] {
        let rotate = |[x, y]: [f64; 2]| {
            let (s, c) = FRAC_PI_4.sin_cos();
            [c * x - s * y, s * x + c * y]
        };
        match self {
            TrueMap::MogLinear => {
                let [u, v] = rotate(p);
                [
                    u * MOG_LINEAR_SCALE[0] + MOG_LINEAR_SHIFT[0],
                    v * MOG_LINEAR_SCALE[1] + MOG_LINEAR_SHIFT[1],
                ]
            }
            TrueMap::MoonsLinear => rotate(p),
            TrueMap::Nonlinear => [(2.0 * PI * p[0]).sin() + p[1].exp(), p[0]],
        }
    }
}

/// Applies a ground-truth map row by row. Inputs must be 2-D.
pub fn apply_true_map(map: TrueMap, x: &Tensor) -> Result<Tensor> {
    if x.ndim() != 2 || x.last_dim() != 2 {
        return Err(Error::DimensionMismatch(format!("true maps act on [n, 2], got {:?}", x.shape())));
    }
    let mut out = Vec::with_capacity(x.numel());
    for r in 0..x.rows() {
        let row = x.row(r);
        out.extend_from_slice(&map.apply_point([row[0], row[1]]));
    }
    Ok(Tensor::new(x.shape().to_vec(), out)?)
}

/// A batch of points with optional integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-component Cholesky factors of the two mixture covariances.
fn mog_components() -> [([f64; 2], [[f64; 2]; 2]); 2] {
    let chol = |v: f64, c: f64| {
        let l11 = v.sqrt();
        let l21 = c / l11;
        [[l11, 0.0], [l21, (v - l21 * l21).sqrt()]]
    };
    [([-2.0, 0.0], chol(1.0, 0.7)), ([2.0, 0.0], chol(0.9, -0.216))]
}

/// Mixture component covariances: `[[1, 0.7], [0.7, 1]]` and `[[0.9, -0.216], [-0.216, 0.9]]`.
pub fn mog_covariances() -> [[[f64; 2]; 2]; 2] {
    [[[1.0, 0.7], [0.7, 1.0]], [[0.9, -0.216], [-0.216, 0.9]]]
}

pub const MOG_MEANS: [[f64; 2]; 2] = [[-2.0, 0.0], [2.0, 0.0]];

/// Equal-weight two-component Gaussian mixture; labels are component indices.
pub fn sample_mog(n: usize, rng: &mut SessionRng) -> Split {
    let comps = mog_components();
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = usize::from(rng.random_bool(0.5));
        let (m, l) = comps[k];
        let e0: f64 = StandardNormal.sample(rng);
        let e1: f64 = StandardNormal.sample(rng);
        data.push(m[0] + l[0][0] * e0);
        data.push(m[1] + l[1][0] * e0 + l[1][1] * e1);
        labels.push(k);
    }
    Split {
        x: Tensor::new(vec![n, 2], data).expect("shape"),
        labels: Some(labels),
    }
}

/// Density of the source mixture at `p`.
pub fn mog_density(p: [f64; 2]) -> f64 {
    MOG_MEANS
        .iter()
        .zip(mog_covariances())
        .map(|(m, c)| 0.5 * gaussian_pdf_2d(p, *m, c))
        .sum()
}

fn gaussian_pdf_2d(p: [f64; 2], m: [f64; 2], c: [[f64; 2]; 2]) -> f64 {
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let (dx, dy) = (p[0] - m[0], p[1] - m[1]);
    let q = (c[1][1] * dx * dx - 2.0 * c[0][1] * dx * dy + c[0][0] * dy * dy) / det;
    (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
}

/// Two interleaved half circles. Point `i` belongs to moon `i % 2`, so the
/// classes differ in size by at most one.
pub fn sample_moons(n: usize, noise_sigma: f64, rng: &mut SessionRng) -> Split {
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.random_range(0.0..=PI);
        let label = i % 2;
        let (x, y) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let nx: f64 = StandardNormal.sample(rng);
        let ny: f64 = StandardNormal.sample(rng);
        data.push(x + noise_sigma * nx);
        data.push(y + noise_sigma * ny);
        labels.push(label);
    }
    Split {
        x: Tensor::new(vec![n, 2], data).expect("shape"),
        labels: Some(labels),
    }
}

/// Dataset descriptor as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub dataset: DatasetKind,
    pub true_map: MapKind,
    pub paired_prop: f64,
    pub seed: u64,
    /// Overrides the benchmark's training size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    /// Embeds both domains isometrically into this many dimensions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
}

impl DatasetSpec {
    pub fn new(dataset: DatasetKind, true_map: MapKind, paired_prop: f64, seed: u64) -> Self {
        DatasetSpec {
            dataset,
            true_map,
            paired_prop,
            seed,
            n_train: None,
            n_test: None,
            embed_dim: None,
        }
    }
}

/// Source, target and paired data with train/test bookkeeping. Test points
/// are all paired: `target_test = F(source_test)` row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleDataset {
    pub source_train: Split,
    pub source_test: Split,
    pub target_train: Split,
    pub target_test: Split,
    /// Indices into `source_train` of the paired training items.
    pub paired_idx: Vec<usize>,
    pub paired_source: Tensor,
    pub paired_target: Tensor,
    pub true_map: Option<TrueMap>,
}

impl TripleDataset {
    pub fn source_dim(&self) -> usize {
        self.source_train.x.last_dim()
    }

    pub fn target_dim(&self) -> usize {
        self.target_train.x.last_dim()
    }
}

const STREAM_SOURCE_TRAIN: u64 = 0;
const STREAM_SOURCE_TEST: u64 = 1;
const STREAM_TARGET_TRAIN: u64 = 2;
const STREAM_PAIRED: u64 = 3;
const STREAM_EMBED: u64 = 4;

fn draw(kind: DatasetKind, n: usize, rng: &mut SessionRng) -> Split {
    match kind {
        DatasetKind::Mog => sample_mog(n, rng),
        DatasetKind::Moons => sample_moons(n, MOONS_NOISE, rng),
    }
}

fn mapped(map: TrueMap, s: &Split) -> Result<Split> {
    Ok(Split {
        x: apply_true_map(map, &s.x)?,
        labels: s.labels.clone(),
    })
}

/// Builds a benchmark dataset. The target training set is the image of an
/// independent source draw; only the paired subset shares pre-images.
pub fn build_benchmark(spec: &DatasetSpec) -> Result<TripleDataset> {
    if !(0.0..=1.0).contains(&spec.paired_prop) {
        return Err(Error::InvalidArgument(format!(
            "paired_prop must lie in [0, 1], got {}",
            spec.paired_prop
        )));
    }
    let (default_train, default_test) = match spec.dataset {
        DatasetKind::Mog => (MOG_TRAIN, MOG_TEST),
        DatasetKind::Moons => (MOONS_TRAIN, MOONS_TEST),
    };
    let n_train = spec.n_train.unwrap_or(default_train);
    let n_test = spec.n_test.unwrap_or(default_test);
    if n_train < 2 || n_test < 1 {
        return Err(Error::InvalidArgument("need at least 2 training and 1 test point".into()));
    }
    let map = TrueMap::for_benchmark(spec.dataset, spec.true_map);
    let source_train = draw(spec.dataset, n_train, &mut stream_rng(spec.seed, STREAM_SOURCE_TRAIN));
    let source_test = draw(spec.dataset, n_test, &mut stream_rng(spec.seed, STREAM_SOURCE_TEST));
    let target_pre = draw(spec.dataset, n_train, &mut stream_rng(spec.seed, STREAM_TARGET_TRAIN));
    let target_train = mapped(map, &target_pre)?;
    let target_test = mapped(map, &source_test)?;

    let n_paired = (spec.paired_prop * n_train as f64).round() as usize;
    let mut paired_idx = index::sample(&mut stream_rng(spec.seed, STREAM_PAIRED), n_train, n_paired).into_vec();
    paired_idx.sort_unstable();
    let paired_source = source_train.x.select_rows(&paired_idx);
    let paired_target = apply_true_map(map, &paired_source)?;

    let ds = TripleDataset {
        source_train,
        source_test,
        target_train,
        target_test,
        paired_idx,
        paired_source,
        paired_target,
        true_map: Some(map),
    };
    match spec.embed_dim {
        Some(d) => embed_dataset(&ds, d, d, &mut stream_rng(spec.seed, STREAM_EMBED)),
        None => Ok(ds),
    }
}

fn embed_rows(x: &Tensor, q: &Tensor) -> Result<Tensor> {
    let (d, k) = (q.shape()[0], q.shape()[1]);
    let n = x.rows();
    let mut out = vec![0.0; n * d];
    for r in 0..n {
        let row = x.row(r);
        for i in 0..d {
            out[r * d + i] = (0..k).map(|j| row[j] * q.data()[i * k + j]).sum();
        }
    }
    Ok(Tensor::new(vec![n, d], out)?)
}

/// Maps source points through a random isometry into `R^{d_s}` and target
/// points through an independent one into `R^{d_t}`. Squared distances,
/// and hence map errors, are preserved.
pub fn embed_dataset(ds: &TripleDataset, d_s: usize, d_t: usize, rng: &mut SessionRng) -> Result<TripleDataset> {
    let k = ds.source_dim();
    let qs = random_orthonormal(d_s, k, rng)?;
    let qt = random_orthonormal(d_t, ds.target_dim(), rng)?;
    let emb = |s: &Split, q: &Tensor| -> Result<Split> {
        Ok(Split {
            x: embed_rows(&s.x, q)?,
            labels: s.labels.clone(),
        })
    };
    Ok(TripleDataset {
        source_train: emb(&ds.source_train, &qs)?,
        source_test: emb(&ds.source_test, &qs)?,
        target_train: emb(&ds.target_train, &qt)?,
        target_test: emb(&ds.target_test, &qt)?,
        paired_idx: ds.paired_idx.clone(),
        paired_source: embed_rows(&ds.paired_source, &qs)?,
        paired_target: embed_rows(&ds.paired_target, &qt)?,
        true_map: None,
    })
}

const ROLE_SOURCE: &str = "source";
const ROLE_TARGET: &str = "target";
const ROLE_PAIR_SOURCE: &str = "pair_source";
const ROLE_PAIR_TARGET: &str = "pair_target";

/// Writes every split with header `role,split,label,x0,...`. Labels are
/// left empty when absent; floats carry 17 significant digits.
pub fn export_csv(ds: &TripleDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    write_csv(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn export_csv_string(ds: &TripleDataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write_csv(ds, &mut w)?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Malformed(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Malformed(e.to_string())
}

fn write_csv<W: std::io::Write>(ds: &TripleDataset, w: &mut csv::Writer<W>) -> Result<()> {
    let (ds_dim, dt_dim) = (ds.source_dim(), ds.target_dim());
    let width = ds_dim.max(dt_dim);
    let mut header = vec!["role".to_string(), "split".to_string(), "label".to_string()];
    header.extend((0..width).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(csv_err)?;
    let mut emit = |role: &str, split: &str, x: &Tensor, labels: Option<&Vec<usize>>| -> Result<()> {
        for r in 0..x.rows() {
            let mut rec = vec![
                role.to_string(),
                split.to_string(),
                labels.map(|l| l[r].to_string()).unwrap_or_default(),
            ];
            rec.extend(x.row(r).iter().map(|v| format_f64(*v)));
            rec.resize(3 + width, String::new());
            w.write_record(&rec).map_err(csv_err)?;
        }
        Ok(())
    };
    emit(ROLE_SOURCE, "train", &ds.source_train.x, ds.source_train.labels.as_ref())?;
    emit(ROLE_SOURCE, "test", &ds.source_test.x, ds.source_test.labels.as_ref())?;
    emit(ROLE_TARGET, "train", &ds.target_train.x, ds.target_train.labels.as_ref())?;
    emit(ROLE_TARGET, "test", &ds.target_test.x, ds.target_test.labels.as_ref())?;
    emit(ROLE_PAIR_SOURCE, "train", &ds.paired_source, None)?;
    emit(ROLE_PAIR_TARGET, "train", &ds.paired_target, None)?;
    Ok(())
}

#[derive(Default)]
struct Acc {
    data: Vec<f64>,
    labels: Vec<Option<usize>>,
    dim: Option<usize>,
}

impl Acc {
    fn push(&mut self, row: Vec<f64>, label: Option<usize>, line: u64) -> Result<()> {
        match self.dim {
            Some(d) if d != row.len() => {
                return Err(Error::Malformed(format!(
                    "line {line}: {} coordinates where earlier rows of this role have {d}",
                    row.len()
                )))
            }
            _ => self.dim = Some(row.len()),
        }
        self.data.extend(row);
        self.labels.push(label);
        Ok(())
    }

    fn tensor(&self, fallback_dim: usize) -> Result<Tensor> {
        let d = self.dim.unwrap_or(fallback_dim);
        Ok(Tensor::new(vec![self.labels.len(), d], self.data.clone())?)
    }

    fn split(&self, fallback_dim: usize) -> Result<Split> {
        let labels = if !self.labels.is_empty() && self.labels.iter().all(Option::is_some) {
            Some(self.labels.iter().map(|l| l.expect("checked")).collect())
        } else {
            None
        };
        Ok(Split {
            x: self.tensor(fallback_dim)?,
            labels,
        })
    }
}

pub fn import_csv(path: &Path) -> Result<TripleDataset> {
    let text = std::fs::read_to_string(path)?;
    import_csv_str(&text)
}

/// Parses the CSV layout written by [`export_csv`]. Paired indices are
/// recovered by exact match of paired sources against training sources.
pub fn import_csv_str(text: &str) -> Result<TripleDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < 4 || &header[0] != "role" || &header[1] != "split" || &header[2] != "label" {
        return Err(Error::Malformed("header must start with role,split,label,x0".into()));
    }
    let mut accs: [Acc; 6] = Default::default();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let slot = match (&rec[0], &rec[1]) {
            (ROLE_SOURCE, "train") => 0,
            (ROLE_SOURCE, "test") => 1,
            (ROLE_TARGET, "train") => 2,
            (ROLE_TARGET, "test") => 3,
            (ROLE_PAIR_SOURCE, "train") => 4,
            (ROLE_PAIR_TARGET, "train") => 5,
            (role, split) => {
                return Err(Error::Malformed(format!("line {line}: unknown role/split `{role}`/`{split}`")));
            }
        };
        let label = match &rec[2] {
            "" => None,
            s => Some(
                s.parse::<usize>()
                    .map_err(|_| Error::Malformed(format!("line {line}: bad label `{s}`")))?,
            ),
        };
        let mut coords = Vec::new();
        let mut ended = false;
        for field in rec.iter().skip(3) {
            if field.is_empty() {
                ended = true;
                continue;
            }
            if ended {
                return Err(Error::Malformed(format!("line {line}: gap in coordinates")));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Malformed(format!("line {line}: bad number `{field}`")))?;
            if !v.is_finite() {
                return Err(Error::Malformed(format!("line {line}: non-finite coordinate")));
            }
            coords.push(v);
        }
        if coords.is_empty() {
            return Err(Error::Malformed(format!("line {line}: no coordinates")));
        }
        accs[slot].push(coords, label, line)?;
    }
    let d_s = accs[0].dim.ok_or_else(|| Error::Malformed("no source training rows".into()))?;
    let d_t = accs[2].dim.ok_or_else(|| Error::Malformed("no target training rows".into()))?;
    for (slot, expect, what) in [(1, d_s, "source test"), (4, d_s, "paired source"), (3, d_t, "target test"), (5, d_t, "paired target")] {
        if let Some(d) = accs[slot].dim {
            if d != expect {
                return Err(Error::Malformed(format!("{what} rows have {d} coordinates, expected {expect}")));
            }
        }
    }
    let source_train = accs[0].split(d_s)?;
    let paired_source = accs[4].tensor(d_s)?;
    let paired_target = accs[5].tensor(d_t)?;
    if paired_source.rows() != paired_target.rows() {
        return Err(Error::Malformed(format!(
            "{} paired sources but {} paired targets",
            paired_source.rows(),
            paired_target.rows()
        )));
    }
    let mut paired_idx = Vec::with_capacity(paired_source.rows());
    for r in 0..paired_source.rows() {
        let row = paired_source.row(r);
        let i = (0..source_train.len())
            .find(|&i| source_train.x.row(i) == row)
            .ok_or_else(|| Error::Malformed(format!("paired source row {r} is not a source training point")))?;
        paired_idx.push(i);
    }
    Ok(TripleDataset {
        source_test: accs[1].split(d_s)?,
        target_train: accs[2].split(d_t)?,
        target_test: accs[3].split(d_t)?,
        source_train,
        paired_idx,
        paired_source,
        paired_target,
        true_map: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffengine::session_rng;

    #[test]
    fn true_map_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let p = TrueMap::MoonsLinear.apply_point([1.0, 0.0]);
        assert!((p[0] - h).abs() < 1e-15 && (p[1] - h).abs() < 1e-15);
        assert_eq!(TrueMap::Nonlinear.apply_point([0.0, 0.0]), [1.0, 0.0]);
        assert_eq!(TrueMap::MogLinear.apply_point([0.0, 0.0]), [2.0, -0.5]);
    }

    #[test]
    fn mog_factors_reproduce_covariances() {
        for ((_, l), c) in mog_components().iter().zip(mog_covariances()) {
            for i in 0..2 {
                for j in 0..2 {
                    let v: f64 = (0..2).map(|k| l[i][k] * l[j][k]).sum();
                    assert!((v - c[i][j]).abs() < 1e-15);
                }
            }
        }
        assert_eq!(mog_covariances()[0], [[1.0, 0.7], [0.7, 1.0]]);
        // correlation of the second component: -0.216 / 0.9 = -0.24
        assert!((mog_covariances()[1][0][1] / 0.9 + 0.24).abs() < 1e-15);
    }

    #[test]
    fn mog_sample_statistics() {
        let s = sample_mog(100_000, &mut session_rng(1));
        let n = s.len() as f64;
        let labels = s.labels.as_ref().unwrap();
        for j in 0..2 {
            let mean: f64 = (0..s.len()).map(|r| s.x.row(r)[j]).sum::<f64>() / n;
            assert!(mean.abs() < 0.02, "{mean}");
        }
        // per-component empirical covariance
        for (k, c) in mog_covariances().iter().enumerate() {
            let rows: Vec<&[f64]> = (0..s.len()).filter(|&r| labels[r] == k).map(|r| s.x.row(r)).collect();
            let m = rows.len() as f64;
            let mu = [0, 1].map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m);
            assert!((mu[0] - MOG_MEANS[k][0]).abs() < 0.02);
            let cov01 = rows.iter().map(|r| (r[0] - mu[0]) * (r[1] - mu[1])).sum::<f64>() / m;
            assert!((cov01 - c[0][1]).abs() < 0.03);
        }
        assert_eq!(sample_mog(50, &mut session_rng(3)), sample_mog(50, &mut session_rng(3)));
    }

    #[test]
    fn moons_geometry() {
        let s = sample_moons(1001, 0.0, &mut session_rng(2));
        let labels = s.labels.as_ref().unwrap();
        let n0 = labels.iter().filter(|&&l| l == 0).count();
        assert!((n0 as i64 - (1001 - n0) as i64).abs() <= 1);
        for r in 0..s.len() {
            if labels[r] == 0 {
                let p = s.x.row(r);
                assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn moons_noise_distance_matches_monte_carlo() {
        let sigma = 0.1;
        let s = sample_moons(20_000, sigma, &mut session_rng(4));
        let labels = s.labels.as_ref().unwrap();
        let dists: Vec<f64> = (0..s.len())
            .filter(|&r| labels[r] == 0)
            .map(|r| {
                let p = s.x.row(r);
                ((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs()
            })
            .collect();
        let observed = dists.iter().sum::<f64>() / dists.len() as f64;
        // Independent oracle: perturb exact unit-circle points with fresh noise.
        let mut rng = session_rng(99);
        let m = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..m {
            let t: f64 = rng.random_range(0.0..=PI);
            let nx: f64 = StandardNormal.sample(&mut rng);
            let ny: f64 = StandardNormal.sample(&mut rng);
            let (x, y) = (t.cos() + sigma * nx, t.sin() + sigma * ny);
            acc += ((x * x + y * y).sqrt() - 1.0).abs();
        }
        let oracle = acc / m as f64;
        assert!((observed - oracle).abs() / oracle < 0.02, "{observed} vs {oracle}");
    }

    #[test]
    fn benchmark_sizes_and_pairs() {
        let ds = build_benchmark(&DatasetSpec::new(DatasetKind::Mog, MapKind::Linear, 0.2, 7)).unwrap();
        assert_eq!(ds.source_train.len(), 1000);
        assert_eq!(ds.source_test.len(), 100);
        assert_eq!(ds.target_train.len(), 1000);
        assert_eq!(ds.target_test.len(), 100);
        assert_eq!(ds.paired_idx.len(), 200);
        let map = ds.true_map.unwrap();
        for (k, &i) in ds.paired_idx.iter().enumerate() {
            assert_eq!(ds.paired_source.row(k), ds.source_train.x.row(i));
            let y = map.apply_point([ds.paired_source.row(k)[0], ds.paired_source.row(k)[1]]);
            assert_eq!(ds.paired_target.row(k), &y);
        }
        for r in 0..100 {
            let p = ds.source_test.x.row(r);
            assert_eq!(ds.target_test.x.row(r), &map.apply_point([p[0], p[1]]));
        }
        assert_eq!(ds.target_test.labels, ds.source_test.labels);

        let moons = build_benchmark(&DatasetSpec::new(DatasetKind::Moons, MapKind::Nonlinear, 0.0, 7)).unwrap();
        assert_eq!((moons.source_train.len(), moons.source_test.len()), (2000, 500));
        assert!(moons.paired_idx.is_empty());
        assert!(build_benchmark(&DatasetSpec::new(DatasetKind::Mog, MapKind::Linear, 1.5, 7)).is_err());
    }

    #[test]
    fn benchmark_is_seeded() {
        let spec = DatasetSpec::new(DatasetKind::Moons, MapKind::Linear, 0.3, 11);
        let a = export_csv_string(&build_benchmark(&spec).unwrap()).unwrap();
        let b = export_csv_string(&build_benchmark(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn target_train_is_not_source_image() {
        let ds = build_benchmark(&DatasetSpec::new(DatasetKind::Mog, MapKind::Linear, 0.0, 3)).unwrap();
        let img = apply_true_map(ds.true_map.unwrap(), &ds.source_train.x).unwrap();
        assert!(img.max_abs_diff(&ds.target_train.x) > 0.1);
    }

    #[test]
    fn csv_round_trip() {
        for prop in [0.0, 0.25] {
            let ds = build_benchmark(&DatasetSpec::new(DatasetKind::Mog, MapKind::Nonlinear, prop, 5)).unwrap();
            let text = export_csv_string(&ds).unwrap();
            assert!(text.starts_with("role,split,label,x0,x1\n"));
            let back = import_csv_str(&text).unwrap();
            assert_eq!(back.source_train, ds.source_train);
            assert_eq!(back.target_test, ds.target_test);
            assert_eq!(back.paired_idx, ds.paired_idx);
            assert_eq!(back.paired_target, ds.paired_target);
            assert_eq!(export_csv_string(&back).unwrap(), text);
        }
    }

    #[test]
    fn csv_rejects_mismatched_dimensions() {
        let text = "role,split,label,x0,x1\nsource,train,0,1.0,2.0\nsource,train,1,1.0,\ntarget,train,,1.0,2.0\n";
        assert!(matches!(import_csv_str(text), Err(Error::Malformed(_))));
        let text = "role,split,label,x0,x1\nsource,train,0,1.0,2.0\ntarget,train,,1.0,2.0\ntarget,test,,1.0,\n";
        assert!(matches!(import_csv_str(text), Err(Error::Malformed(_))));
        let text = "role,split,label,x0\nsource,train,0,abc\n";
        assert!(import_csv_str(text).is_err());
    }

    #[test]
    fn embedding_preserves_map_errors() {
        let mut spec = DatasetSpec::new(DatasetKind::Mog, MapKind::Linear, 0.2, 5);
        let flat = build_benchmark(&spec).unwrap();
        spec.embed_dim = Some(10);
        let emb = build_benchmark(&spec).unwrap();
        assert_eq!(emb.source_dim(), 10);
        let sq = |a: &Tensor, b: &Tensor| -> f64 { a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum() };
        let d_flat = sq(&flat.source_test.x.select_rows(&[0]), &flat.source_test.x.select_rows(&[1]));
        let d_emb = sq(&emb.source_test.x.select_rows(&[0]), &emb.source_test.x.select_rows(&[1]));
        assert!((d_flat - d_emb).abs() < 1e-12);
    }
}
