//! Labelled datasets: MNIST IDX files, the synthetic and fraud generators,
//! delimited-text ingestion, skewed splits and shared subsets.

use std::fs;
use std::path::Path;

use ndarray::{Axis, concatenate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{LearnError, Result};
use crate::nn::{one_hot, Tensor};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn new(x: Tensor, y: Vec<usize>, classes: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(LearnError::Input(format!("{} rows but {} labels", x.nrows(), y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
            return Err(LearnError::Input(format!("label {bad} outside {classes} classes")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::Input("non-finite feature".into()));
        }
        Ok(LabeledDataset { x, y, classes })
    }

    pub fn empty(features: usize, classes: usize) -> Self {
        LabeledDataset {
            x: Tensor::zeros((0, features)),
            y: Vec::new(),
            classes,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            x: self.x.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes,
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn append(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.features() != other.features() || self.classes != other.classes {
            return Err(LearnError::Input("appending datasets of different shape".into()));
        }
        let x = concatenate(Axis(0), &[self.x.view(), other.x.view()]).expect("same width");
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Ok(LabeledDataset {
            x,
            y,
            classes: self.classes,
        })
    }

    pub fn with_features(&self, x: Tensor) -> Result<LabeledDataset> {
        LabeledDataset::new(x, self.y.clone(), self.classes)
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.y {
            c[l] += 1;
        }
        c
    }

    pub fn targets(&self) -> Tensor {
        one_hot(&self.y, self.classes)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| LearnError::Format("IDX header truncated".into()))
}

/// Images as `n x (rows·cols)` features scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES {
        return Err(LearnError::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let pixels = be_u32(bytes, 8)? as usize * be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != n * pixels {
        return Err(LearnError::Format(format!(
            "IDX images: {} payload bytes for {n} images of {pixels} pixels",
            body.len()
        )));
    }
    let vals = body.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::from_shape_vec((n, pixels), vals).map_err(|e| LearnError::Format(e.to_string()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS {
        return Err(LearnError::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(LearnError::Format(format!("IDX labels: {} bytes for {n} labels", body.len())));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let x = parse_idx_images(&fs::read(images)?)?;
    let y = parse_idx_labels(&fs::read(labels)?)?;
    if x.nrows() != y.len() {
        return Err(LearnError::Format(format!("{} images but {} labels", x.nrows(), y.len())));
    }
    LabeledDataset::new(x, y, 10).map_err(|e| LearnError::Format(e.to_string()))
}

/// The standard MNIST training and test files under `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_mnist_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
    let test = load_mnist_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticParams {
    /// Dimension of the subspace holding the class structure.
    pub informative: usize,
    /// Centroids sit at `±class_sep` in every informative coordinate.
    pub class_sep: f64,
    /// Standard deviation of isotropic noise added in the ambient space.
    pub ambient_noise: f64,
    /// Probability that a label is replaced by a uniformly random one.
    pub label_noise: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            informative: 20,
            class_sep: 1.0,
            ambient_noise: 1.5,
            label_noise: 0.0,
        }
    }
}

pub fn gen_synthetic(n: usize, q: usize, k: usize, seed: u64) -> Result<LabeledDataset> {
    gen_synthetic_with(&SyntheticParams::default(), n, q, k, seed)
}

/// `k` classes with centroids at distinct random hypercube vertices in an
/// `informative`-dimensional space, unit Gaussian noise around them, and a
/// seeded `q x informative` Gaussian map into `R^q`. Labels are balanced.
pub fn gen_synthetic_with(p: &SyntheticParams, n: usize, q: usize, k: usize, seed: u64) -> Result<LabeledDataset> {
    let d = p.informative;
    if d == 0 || q == 0 || k < 2 || d < 64 && (1u64 << d) < k as u64 {
        return Err(LearnError::Config(format!("cannot place {k} classes in {d} informative dims")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    while centroids.len() < k {
        let v: Vec<f64> = (0..d)
            .map(|_| if rng.random::<bool>() { p.class_sep } else { -p.class_sep })
            .collect();
        if !centroids.contains(&v) {
            centroids.push(v);
        }
    }
    let mix_dist = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("positive std");
    let mix = Tensor::from_shape_simple_fn((d, q), || mix_dist.sample(&mut rng));
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);
    let mut z = Tensor::zeros((n, d));
    for (i, &l) in labels.iter().enumerate() {
        for j in 0..d {
            let e: f64 = StandardNormal.sample(&mut rng);
            z[[i, j]] = centroids[l][j] + e;
        }
    }
    let mut x = z.dot(&mix);
    if p.ambient_noise > 0.0 {
        x.mapv_inplace(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + p.ambient_noise * e
        });
    }
    for l in labels.iter_mut() {
        if rng.random::<f64>() < p.label_noise {
            *l = rng.random_range(0..k);
        }
    }
    LabeledDataset::new(x, labels, k)
}

/// Size and per-label weights of one partition.
#[derive(Clone, Debug, PartialEq)]
pub struct PartSpec {
    pub size: usize,
    pub weights: Vec<f64>,
}

impl PartSpec {
    pub fn uniform(size: usize, classes: usize) -> Self {
        PartSpec {
            size,
            weights: vec![1.0; classes],
        }
    }

    /// Weight `ratio` on `favored` labels and 1 elsewhere.
    pub fn skewed(size: usize, classes: usize, favored: &[usize], ratio: f64) -> Self {
        let weights = (0..classes)
            .map(|l| if favored.contains(&l) { ratio } else { 1.0 })
            .collect();
        PartSpec { size, weights }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub global: PartSpec,
    pub party1: PartSpec,
    pub party2: PartSpec,
    pub test: PartSpec,
}

pub const SKEW_RATIO: f64 = 3.0;
pub const PARTY1_FAVORED: [usize; 3] = [0, 1, 2];
pub const PARTY2_FAVORED: [usize; 3] = [7, 8, 9];
pub const GLOBAL_FAVORED: [usize; 3] = [3, 4, 5];

impl SplitSpec {
    /// Ten-class split: global favours 3–5, party 1 favours 0–2, party 2
    /// favours 7–9, the test part is uniform.
    pub fn skewed(sizes: [usize; 4], ratio: f64) -> Self {
        SplitSpec {
            global: PartSpec::skewed(sizes[0], 10, &GLOBAL_FAVORED, ratio),
            party1: PartSpec::skewed(sizes[1], 10, &PARTY1_FAVORED, ratio),
            party2: PartSpec::skewed(sizes[2], 10, &PARTY2_FAVORED, ratio),
            test: PartSpec::uniform(sizes[3], 10),
        }
    }

    /// MNIST training-file split; the test part comes from the test file.
    pub fn mnist() -> Self {
        SplitSpec::skewed([12_600, 23_700, 23_700, 0], SKEW_RATIO)
    }

    pub fn synthetic() -> Self {
        SplitSpec::skewed([20_000; 4], SKEW_RATIO)
    }

    /// Every partition size multiplied by `factor` (rounded).
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |p: &PartSpec| PartSpec {
            size: (p.size as f64 * factor).round() as usize,
            weights: p.weights.clone(),
        };
        SplitSpec {
            global: s(&self.global),
            party1: s(&self.party1),
            party2: s(&self.party2),
            test: s(&self.test),
        }
    }

    pub fn parts(&self) -> [&PartSpec; 4] {
        [&self.global, &self.party1, &self.party2, &self.test]
    }

    pub fn total(&self) -> usize {
        self.parts().iter().map(|p| p.size).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub global: LabeledDataset,
    pub party1: LabeledDataset,
    pub party2: LabeledDataset,
    pub test: LabeledDataset,
}

impl Splits {
    /// Party `i` (0-based) of the two.
    pub fn party(&self, i: usize) -> &LabeledDataset {
        if i == 0 {
            &self.party1
        } else {
            &self.party2
        }
    }

    pub fn classes(&self) -> usize {
        self.test.classes
    }

    pub fn features(&self) -> usize {
        self.test.features()
    }
}

/// Splits `total` proportionally to `weights`, handing leftover units to the
/// largest fractional parts (lowest index on ties).
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || total == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
    });
    let given: usize = counts.iter().sum();
    for &i in order.iter().take(total.saturating_sub(given)) {
        counts[i] += 1;
    }
    counts
}

/// Per-label counts for a partition: proportional to the weights where the
/// pool allows, with any shortfall spread over labels that still have
/// samples, in proportion to their weights.
fn allocate_counts(part: &PartSpec, avail: &[usize]) -> Result<Vec<usize>> {
    if part.weights.len() != avail.len() {
        return Err(LearnError::Allocation(format!(
            "{} weights for {} classes",
            part.weights.len(),
            avail.len()
        )));
    }
    let mut counts = vec![0usize; avail.len()];
    let mut remaining = part.size;
    while remaining > 0 {
        let open: Vec<f64> = (0..avail.len())
            .map(|l| if counts[l] < avail[l] { part.weights[l] } else { 0.0 })
            .collect();
        if open.iter().all(|&w| w <= 0.0) {
            return Err(LearnError::Allocation(format!(
                "partition of {} needs {remaining} more samples than the pool holds",
                part.size
            )));
        }
        let share = largest_remainder(remaining, &open);
        remaining = 0;
        for l in 0..avail.len() {
            let take = share[l].min(avail[l] - counts[l]);
            counts[l] += take;
            remaining += share[l] - take;
        }
    }
    Ok(counts)
}

/// Disjoint partitions of `ds`, allocated in order. Each partition's rows
/// are shuffled.
pub fn split_parts(ds: &LabeledDataset, parts: &[&PartSpec], seed: u64) -> Result<Vec<LabeledDataset>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &l) in ds.y.iter().enumerate() {
        pools[l].push(i);
    }
    for p in &mut pools {
        p.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(parts.len());
    for part in parts {
        let avail: Vec<usize> = pools.iter().map(Vec::len).collect();
        let counts = allocate_counts(part, &avail)?;
        let mut idx = Vec::with_capacity(part.size);
        for (pool, &c) in pools.iter_mut().zip(&counts) {
            let rest = pool.split_off(c);
            idx.extend(std::mem::replace(pool, rest));
        }
        idx.shuffle(&mut rng);
        out.push(ds.subset(&idx));
    }
    Ok(out)
}

/// Test part first so it stays unbiased, then global, party 1 and party 2.
pub fn split(ds: &LabeledDataset, spec: &SplitSpec, seed: u64) -> Result<Splits> {
    let mut parts = split_parts(ds, &[&spec.test, &spec.global, &spec.party1, &spec.party2], seed)?;
    let party2 = parts.pop().expect("four parts");
    let party1 = parts.pop().expect("four parts");
    let global = parts.pop().expect("four parts");
    let test = parts.pop().expect("four parts");
    Ok(Splits {
        global,
        party1,
        party2,
        test,
    })
}

/// Synthetic pool twice the requested total, split per `spec`.
pub fn synthetic_splits(spec: &SplitSpec, params: &SyntheticParams, seed: u64) -> Result<Splits> {
    let pool = gen_synthetic_with(params, 2 * spec.total(), 784, 10, seed)?;
    split(&pool, spec, seed ^ 0x5EED)
}

/// Like [`synthetic_splits`], plus a holdout drawn with party 2's label
/// weights that no split contains: fresh non-members for membership tests.
pub fn synthetic_splits_with_holdout(
    spec: &SplitSpec,
    params: &SyntheticParams,
    seed: u64,
) -> Result<(Splits, LabeledDataset)> {
    let total = spec.total() + spec.party2.size;
    let pool = gen_synthetic_with(params, 2 * total, 784, 10, seed)?;
    let mut parts = split_parts(
        &pool,
        &[&spec.test, &spec.global, &spec.party1, &spec.party2, &spec.party2],
        seed ^ 0x5EED,
    )?;
    let holdout = parts.pop().expect("five parts");
    let party2 = parts.pop().expect("five parts");
    let party1 = parts.pop().expect("five parts");
    let global = parts.pop().expect("five parts");
    let test = parts.pop().expect("five parts");
    Ok((
        Splits {
            global,
            party1,
            party2,
            test,
        },
        holdout,
    ))
}

/// MNIST training file split per `spec` (its test size is ignored); the
/// test part is the whole test file.
pub fn mnist_splits(train: &LabeledDataset, test: LabeledDataset, spec: &SplitSpec, seed: u64) -> Result<Splits> {
    let mut parts = split_parts(train, &[&spec.global, &spec.party1, &spec.party2], seed)?;
    let party2 = parts.pop().expect("three parts");
    let party1 = parts.pop().expect("three parts");
    let global = parts.pop().expect("three parts");
    Ok(Splits {
        global,
        party1,
        party2,
        test,
    })
}

/// Normal and fraud counts of each fraud-detection partition.
pub const FRAUD_COUNTS: [(usize, usize); 4] = [(1000, 100), (1000, 50), (1000, 242), (1000, 100)];

/// A fraud-like two-class problem with 29 PCA-style features. Normal
/// transactions are a two-component Gaussian mixture; frauds are a broader
/// mixture overlapping it. Partition counts follow [`FRAUD_COUNTS`].
pub fn gen_fraud(seed: u64) -> Result<Splits> {
    const Q: usize = 29;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal_a = vec![0.0; Q];
    let normal_b: Vec<f64> = (0..Q).map(|j| if j < 6 { 0.8 } else { 0.0 }).collect();
    let fraud_a: Vec<f64> = (0..Q)
        .map(|j| match j {
            0..4 => -1.0,
            10..19 => 1.4,
            _ => 0.0,
        })
        .collect();
    let fraud_b: Vec<f64> = (0..Q).map(|j| if j >= 20 { 1.2 } else { 0.0 }).collect();
    let sample = |fraud: bool, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let (mean, std) = if fraud {
            (if rng.random::<f64>() < 0.6 { &fraud_a } else { &fraud_b }, 1.5)
        } else {
            (if rng.random::<f64>() < 0.3 { &normal_b } else { &normal_a }, 1.0)
        };
        mean.iter()
            .map(|m| {
                let e: f64 = StandardNormal.sample(rng);
                m + std * e
            })
            .collect()
    };
    let mut parts = Vec::with_capacity(4);
    for (normal, fraud) in FRAUD_COUNTS {
        let mut labels: Vec<usize> = std::iter::repeat_n(0, normal).chain(std::iter::repeat_n(1, fraud)).collect();
        labels.shuffle(&mut rng);
        let mut vals = Vec::with_capacity(labels.len() * Q);
        for &l in &labels {
            vals.extend(sample(l == 1, &mut rng));
        }
        let x = Tensor::from_shape_vec((labels.len(), Q), vals).expect("sized");
        parts.push(LabeledDataset::new(x, labels, 2)?);
    }
    let test = parts.pop().expect("four parts");
    let party2 = parts.pop().expect("four parts");
    let party1 = parts.pop().expect("four parts");
    let global = parts.pop().expect("four parts");
    Ok(Splits {
        global,
        party1,
        party2,
        test,
    })
}

/// Comma-separated rows, last column the integer label. A first row whose
/// first field is not numeric is taken as a header.
pub fn load_delimited(path: &Path) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| LearnError::Format(e.to_string()))?;
    let mut vals = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| LearnError::Format(e.to_string()))?;
        let fields: Vec<&str> = rec.iter().map(str::trim).collect();
        if i == 0 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() < 2 {
            return Err(LearnError::Format(format!("row {}: need features and a label", i + 1)));
        }
        let w = fields.len() - 1;
        if *width.get_or_insert(w) != w {
            return Err(LearnError::Format(format!("row {}: {w} features, expected {width:?}", i + 1)));
        }
        for f in &fields[..w] {
            vals.push(f.parse::<f64>().map_err(|e| LearnError::Format(format!("row {}: {e}", i + 1)))?);
        }
        let label = fields[w]
            .parse::<f64>()
            .ok()
            .filter(|v| *v >= 0.0 && v.fract() == 0.0)
            .ok_or_else(|| LearnError::Format(format!("row {}: bad label {}", i + 1, fields[w])))?;
        labels.push(label as usize);
    }
    let width = width.unwrap_or(0);
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    let x = Tensor::from_shape_vec((labels.len(), width), vals).map_err(|e| LearnError::Format(e.to_string()))?;
    LabeledDataset::new(x, labels, classes)
}

/// Indices of a label-stratified uniform subset of `round(fraction·n)` rows.
pub fn share_subset_indices(d: &LabeledDataset, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(LearnError::Config(format!("share fraction {fraction} outside [0, 1]")));
    }
    let n = d.len();
    let target = (fraction * n as f64).round() as usize;
    let counts = d.label_counts();
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let take = largest_remainder(target, &weights);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = Vec::with_capacity(target);
    for (label, &t) in take.iter().enumerate() {
        let mut pool: Vec<usize> = (0..n).filter(|&i| d.y[i] == label).collect();
        pool.shuffle(&mut rng);
        idx.extend_from_slice(&pool[..t.min(pool.len())]);
    }
    idx.sort_unstable();
    Ok(idx)
}

pub fn select_share_subset(d: &LabeledDataset, fraction: f64, seed: u64) -> Result<LabeledDataset> {
    Ok(d.subset(&share_subset_indices(d, fraction, seed)?))
}
