//! Desk-scale learning workload: Gaussian-mixture classification data,
//! IID / Dirichlet partitioning across clients, multinomial logistic
//! regression trained with minibatch SGD, and evaluation.
//!
//! The model is one `classes × (dims + 1)` layer; the last column is the bias,
//! applied to an implicit constant-1 feature.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::weights::{LayerShape, WeightVector};

pub const SYNTHETIC_RADIUS: f64 = 2.5;
const DIRICHLET_RETRIES: usize = 100;
const DATASET_MAGIC: &[u8; 4] = b"UFD1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid sizes: {0}")]
    InvalidSizes(String),
    #[error("cannot split {n} samples into {parts} non-empty parts")]
    TooManyParts { n: usize, parts: usize },
    #[error("model shape {found} does not match dataset (expected {expected})")]
    ShapeMismatch { expected: String, found: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("malformed dataset bytes: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    features: Vec<T>,
    labels: Vec<usize>,
    classes: usize,
    dims: usize,
}

impl<T: Scalar> Dataset<T> {
    /// `features` is row-major, `labels.len()` rows of `dims` columns.
    pub fn new(features: Vec<T>, labels: Vec<usize>, classes: usize, dims: usize) -> Result<Self, LearnerError> {
        if dims == 0 || classes == 0 {
            return Err(LearnerError::InvalidDataset("dims and classes must be positive".into()));
        }
        if features.len() != labels.len() * dims {
            return Err(LearnerError::InvalidDataset(format!(
                "{} features for {} samples of dimension {dims}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(LearnerError::InvalidDataset(format!("label {l} >= {classes} classes")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::InvalidDataset("non-finite feature".into()));
        }
        Ok(Self { features, labels, classes, dims })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dims..(i + 1) * self.dims]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dims);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self { features, labels, classes: self.classes, dims: self.dims }
    }

    pub fn concat(parts: &[&Self]) -> Result<Self, LearnerError> {
        let first = parts.first().ok_or_else(|| LearnerError::InvalidDataset("nothing to concatenate".into()))?;
        let mut out = Self { features: Vec::new(), labels: Vec::new(), classes: first.classes, dims: first.dims };
        for p in parts {
            if p.dims != out.dims || p.classes != out.classes {
                return Err(LearnerError::InvalidDataset("concatenating incompatible datasets".into()));
            }
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Seeded shuffle split into `(train, test)` with `floor(n·test_fraction)`
    /// test samples, always leaving at least one training sample.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Self, Self) {
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = ((n as f64 * test_fraction).floor() as usize).min(n.saturating_sub(1));
        let (test, train) = idx.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        (self.subset(&train), self.subset(&test))
    }

    /// Columnar binary: `b"UFD1"`, n (`u64`), dims (`u32`), classes (`u32`),
    /// features as row-major f64, labels as `u32`; all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.features.len() * 8 + self.labels.len() * 4);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        out.extend_from_slice(&(self.classes as u32).to_le_bytes());
        for v in &self.features {
            out.extend_from_slice(&v.to_wire().to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LearnerError> {
        if bytes.len() < 20 {
            return Err(LearnerError::Malformed("header truncated".into()));
        }
        if &bytes[..4] != DATASET_MAGIC {
            return Err(LearnerError::Malformed("bad magic".into()));
        }
        let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let dims = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let classes = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let feat_bytes = n.checked_mul(dims).and_then(|x| x.checked_mul(8));
        let expected = feat_bytes.and_then(|f| f.checked_add(n * 4)).and_then(|b| b.checked_add(20));
        if expected != Some(bytes.len()) {
            return Err(LearnerError::Malformed(format!("expected {expected:?} bytes, found {}", bytes.len())));
        }
        let feat_end = 20 + n * dims * 8;
        let features = bytes[20..feat_end]
            .chunks_exact(8)
            .map(|c| T::from_wire(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let labels = bytes[feat_end..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        Self::new(features, labels, classes, dims)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PartitionSpec {
    Iid,
    Dirichlet { alpha: f64 },
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<(), LearnerError> {
        match *self {
            PartitionSpec::Dirichlet { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(LearnerError::InvalidConfig(format!("dirichlet alpha must be positive, got {alpha}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 2, lr: 0.01, batch_size: 5, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(LearnerError::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        // lr == 0 is accepted: it is the identity update.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(LearnerError::InvalidConfig(format!("lr must be a non-negative finite number, got {}", self.lr)));
        }
        Ok(())
    }
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gaussian mixture: one unit-variance blob per class, means on a sphere of
/// radius [`SYNTHETIC_RADIUS`], labels balanced to within one sample.
pub fn make_synthetic<T: Scalar>(classes: usize, dims: usize, n: usize, seed: u64) -> Result<Dataset<T>, LearnerError> {
    if classes < 2 || dims < 1 || n < classes {
        return Err(LearnerError::InvalidSizes(format!(
            "need classes >= 2, dims >= 1, n >= classes; got classes={classes} dims={dims} n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| loop {
            let z: Vec<f64> = (0..dims).map(|_| standard_normal(&mut rng)).collect();
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break z.iter().map(|v| v * SYNTHETIC_RADIUS / norm).collect();
            }
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * dims);
    for &l in &labels {
        for &m in &means[l] {
            features.push(T::from_wire(m + standard_normal(&mut rng)));
        }
    }
    Dataset::new(features, labels, classes, dims)
}

/// Index-level partition; each part is sorted ascending.
pub fn partition_indices<T: Scalar>(
    ds: &Dataset<T>,
    parts: usize,
    spec: PartitionSpec,
    seed: u64,
) -> Result<Vec<Vec<usize>>, LearnerError> {
    spec.validate()?;
    let n = ds.len();
    if parts == 0 || parts > n {
        return Err(LearnerError::TooManyParts { n, parts });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = match spec {
        PartitionSpec::Iid => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            (0..parts).map(|p| idx[p * n / parts..(p + 1) * n / parts].to_vec()).collect()
        }
        PartitionSpec::Dirichlet { alpha } => dirichlet_split(ds, parts, alpha, &mut rng),
    };
    for p in &mut out {
        p.sort_unstable();
    }
    Ok(out)
}

fn dirichlet_split<T: Scalar>(ds: &Dataset<T>, parts: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut assignment = Vec::new();
    for _ in 0..DIRICHLET_RETRIES {
        assignment = vec![Vec::new(); parts];
        for members in &by_class {
            let mut members = members.clone();
            members.shuffle(rng);
            let props = draw_proportions(&gamma, parts, rng);
            let m = members.len();
            let mut cum = 0.0;
            let mut start = 0;
            for (p, &prop) in props.iter().enumerate() {
                cum += prop;
                let end = if p + 1 == parts { m } else { ((cum * m as f64).floor() as usize).clamp(start, m) };
                assignment[p].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if assignment.iter().all(|p| !p.is_empty()) {
            return assignment;
        }
    }
    // Round-robin repair: each empty part takes one sample from the largest part.
    for p in 0..parts {
        if assignment[p].is_empty() {
            let donor = (0..parts)
                .max_by(|&a, &b| assignment[a].len().cmp(&assignment[b].len()).then(b.cmp(&a)))
                .expect("parts > 0");
            let moved = assignment[donor].pop().expect("n >= parts leaves a donor with 2+ samples");
            assignment[p].push(moved);
        }
    }
    assignment
}

fn draw_proportions(gamma: &Gamma<f64>, parts: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    for _ in 0..DIRICHLET_RETRIES {
        let g: Vec<f64> = (0..parts).map(|_| gamma.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 && total.is_finite() {
            return g.into_iter().map(|x| x / total).collect();
        }
    }
    vec![1.0 / parts as f64; parts]
}

pub fn partition<T: Scalar>(
    ds: &Dataset<T>,
    parts: usize,
    spec: PartitionSpec,
    seed: u64,
) -> Result<Vec<Dataset<T>>, LearnerError> {
    Ok(partition_indices(ds, parts, spec, seed)?.iter().map(|idx| ds.subset(idx)).collect())
}

pub fn model_shape(dims: usize, classes: usize) -> Vec<LayerShape> {
    vec![LayerShape::new(classes as u32, dims as u32 + 1)]
}

pub fn init_model<T: Scalar>(dims: usize, classes: usize) -> WeightVector<T> {
    WeightVector::zeros(model_shape(dims, classes))
}

fn check_model<T: Scalar>(w: &WeightVector<T>, ds: &Dataset<T>) -> Result<(), LearnerError> {
    let expected = model_shape(ds.dims(), ds.classes());
    if w.shape() != expected.as_slice() {
        let show = |s: &[LayerShape]| s.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
        return Err(LearnerError::ShapeMismatch { expected: show(&expected), found: show(w.shape()) });
    }
    Ok(())
}

/// Writes the logits of `x` into `out`.
fn logits<T: Scalar>(w: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len() + 1;
    for (c, z) in out.iter_mut().enumerate() {
        let row = &w[c * cols..(c + 1) * cols];
        let mut acc = row[cols - 1];
        for (&wj, &xj) in row.iter().zip(x) {
            acc += wj * xj;
        }
        *z = acc;
    }
}

/// In-place softmax; returns log-sum-exp of the input.
fn softmax_in_place<T: Scalar>(z: &mut [T]) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
    max + total.ln()
}

/// Mean softmax cross-entropy over `rows` and its gradient.
fn batch_gradient<T: Scalar>(w: &[T], ds: &Dataset<T>, rows: &[usize], grad: &mut [T]) -> T {
    let classes = ds.classes();
    let cols = ds.dims() + 1;
    grad.iter_mut().for_each(|g| *g = T::zero());
    let mut probs = vec![T::zero(); classes];
    let mut loss = T::zero();
    for &i in rows {
        let x = ds.row(i);
        let y = ds.labels()[i];
        logits(w, x, &mut probs);
        let z_y = probs[y];
        loss += softmax_in_place(&mut probs) - z_y;
        for (c, &p) in probs.iter().enumerate() {
            let delta = if c == y { p - T::one() } else { p };
            let g = &mut grad[c * cols..(c + 1) * cols];
            for (gj, &xj) in g.iter_mut().zip(x) {
                *gj += delta * xj;
            }
            g[cols - 1] += delta;
        }
    }
    let inv = T::one() / T::from_usize(rows.len()).expect("row count fits");
    grad.iter_mut().for_each(|g| *g *= inv);
    loss * inv
}

/// Mean cross-entropy over the whole dataset and its analytic gradient.
pub fn loss_and_gradient<T: Scalar>(w: &WeightVector<T>, ds: &Dataset<T>) -> Result<(T, WeightVector<T>), LearnerError> {
    check_model(w, ds)?;
    if ds.is_empty() {
        return Err(LearnerError::InvalidDataset("empty dataset".into()));
    }
    let rows: Vec<usize> = (0..ds.len()).collect();
    let mut grad = vec![T::zero(); w.len()];
    let loss = batch_gradient(w.values(), ds, &rows, &mut grad);
    Ok((loss, w.with_values(grad).expect("gradient has the model's shape")))
}

/// `cfg.epochs` passes of minibatch SGD on softmax cross-entropy, with a
/// fresh seeded shuffle per epoch.
pub fn local_train<T: Scalar>(w: &WeightVector<T>, ds: &Dataset<T>, cfg: &TrainConfig) -> Result<WeightVector<T>, LearnerError> {
    check_model(w, ds)?;
    cfg.validate()?;
    if ds.is_empty() {
        return Err(LearnerError::InvalidDataset("empty dataset".into()));
    }
    let lr = T::from_wire(cfg.lr);
    let mut params = w.values().to_vec();
    let mut grad = vec![T::zero(); params.len()];
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            batch_gradient(&params, ds, batch, &mut grad);
            for (p, &g) in params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
        }
    }
    Ok(w.with_values(params).expect("same shape"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Argmax accuracy (ties go to the lowest class index) and mean cross-entropy.
pub fn evaluate<T: Scalar>(w: &WeightVector<T>, ds: &Dataset<T>) -> Result<Evaluation, LearnerError> {
    check_model(w, ds)?;
    if ds.is_empty() {
        return Err(LearnerError::InvalidDataset("empty dataset".into()));
    }
    let mut z = vec![T::zero(); ds.classes()];
    let mut correct = 0usize;
    // Running mean: exact when every per-sample loss is equal.
    let mut mean_loss = 0.0f64;
    for i in 0..ds.len() {
        let y = ds.labels()[i];
        logits(w.values(), ds.row(i), &mut z);
        let mut best = 0;
        for c in 1..z.len() {
            if z[c] > z[best] {
                best = c;
            }
        }
        if best == y {
            correct += 1;
        }
        let z_y = z[y];
        let sample_loss = (softmax_in_place(&mut z) - z_y).to_wire();
        mean_loss += (sample_loss - mean_loss) / (i + 1) as f64;
    }
    Ok(Evaluation { accuracy: correct as f64 / ds.len() as f64, loss: mean_loss.max(0.0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset<f64> {
        make_synthetic(3, 4, 60, 11).unwrap()
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a: Dataset<f64> = make_synthetic(2, 2, 100, 5).unwrap();
        let b: Dataset<f64> = make_synthetic(2, 2, 100, 5).unwrap();
        assert_eq!(a, b);
        let c: Dataset<f64> = make_synthetic(10, 3, 100, 1).unwrap();
        for count in c.label_counts() {
            assert!((9..=11).contains(&count), "{count}");
        }
    }

    #[test]
    fn synthetic_rejects_bad_sizes() {
        assert!(make_synthetic::<f64>(1, 2, 10, 0).is_err());
        assert!(make_synthetic::<f64>(2, 0, 10, 0).is_err());
        assert!(make_synthetic::<f64>(5, 2, 4, 0).is_err());
    }

    #[test]
    fn iid_split_sizes() {
        let ds: Dataset<f64> = make_synthetic(4, 2, 100, 3).unwrap();
        let parts = partition(&ds, 4, PartitionSpec::Iid, 9).unwrap();
        assert_eq!(parts.iter().map(Dataset::len).collect::<Vec<_>>(), vec![25; 4]);
        assert!(matches!(
            partition(&ds, 101, PartitionSpec::Iid, 9),
            Err(LearnerError::TooManyParts { .. })
        ));
        assert!(partition(&ds, 2, PartitionSpec::Dirichlet { alpha: 0.0 }, 9).is_err());
    }

    #[test]
    fn tiny_alpha_still_fills_every_part() {
        let ds: Dataset<f64> = make_synthetic(2, 2, 12, 3).unwrap();
        for seed in 0..20 {
            let parts = partition_indices(&ds, 10, PartitionSpec::Dirichlet { alpha: 0.01 }, seed).unwrap();
            assert!(parts.iter().all(|p| !p.is_empty()));
            assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), 12);
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let ds = toy();
        let w = WeightVector::new(model_shape(4, 3), (0..15).map(|i| i as f64 * 0.1).collect()).unwrap();
        let cfg = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        assert_eq!(local_train(&w, &ds, &cfg).unwrap(), w);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = toy();
        let w = init_model(4, 3);
        let cfg = TrainConfig { seed: 3, ..TrainConfig::default() };
        assert_eq!(local_train(&w, &ds, &cfg).unwrap(), local_train(&w, &ds, &cfg).unwrap());
    }

    #[test]
    fn single_sample_single_step_matches_hand_update() {
        // x = [1, 2], y = 0, C = 2, w = 0: p = [0.5, 0.5].
        // grad row0 = (0.5 - 1)·[1, 2, 1], row1 = 0.5·[1, 2, 1].
        let ds = Dataset::new(vec![1.0, 2.0], vec![0], 2, 2).unwrap();
        let w = init_model::<f64>(2, 2);
        let cfg = TrainConfig { epochs: 1, lr: 0.1, batch_size: 1, seed: 0 };
        let out = local_train(&w, &ds, &cfg).unwrap();
        assert_eq!(out.values(), &[0.05, 0.1, 0.05, -0.05, -0.1, -0.05]);
    }

    #[test]
    fn zero_model_loss_is_ln_classes() {
        let ds: Dataset<f64> = make_synthetic(10, 5, 100, 2).unwrap();
        let e = evaluate(&init_model(5, 10), &ds).unwrap();
        assert_eq!(e.loss, 10f64.ln());
        // All-equal logits predict class 0; the set is balanced.
        assert_eq!(e.accuracy, 0.1);
    }

    #[test]
    fn large_margin_model_is_perfect() {
        let ds = Dataset::new(vec![-5.0, -4.0, 4.0, 5.0], vec![0, 0, 1, 1], 2, 1).unwrap();
        let w = WeightVector::new(model_shape(1, 2), vec![-10.0, 0.0, 10.0, 0.0]).unwrap();
        let e = evaluate(&w, &ds).unwrap();
        assert_eq!(e.accuracy, 1.0);
        assert!(e.loss < 1e-10);
        assert_eq!(evaluate(&w, &ds).unwrap(), e);
    }

    #[test]
    fn shape_mismatch_errors() {
        let ds = toy();
        let wrong = init_model::<f64>(5, 3);
        assert!(matches!(evaluate(&wrong, &ds), Err(LearnerError::ShapeMismatch { .. })));
        assert!(matches!(local_train(&wrong, &ds, &TrainConfig::default()), Err(LearnerError::ShapeMismatch { .. })));
    }

    #[test]
    fn dataset_bytes_round_trip() {
        let ds = toy();
        let back = Dataset::<f64>::from_bytes(&ds.to_bytes()).unwrap();
        assert_eq!(back, ds);
        let mut bad = ds.to_bytes();
        bad.pop();
        assert!(Dataset::<f64>::from_bytes(&bad).is_err());
    }

    #[test]
    fn split_keeps_a_training_sample() {
        let ds = Dataset::new(vec![1.0], vec![0], 2, 1).unwrap();
        let (train, test) = ds.split(0.2, 1);
        assert_eq!((train.len(), test.len()), (1, 0));
        let (train, test) = toy().split(0.2, 1);
        assert_eq!((train.len(), test.len()), (48, 12));
    }

    #[test]
    fn f32_training_runs() {
        let ds: Dataset<f32> = make_synthetic(3, 4, 60, 11).unwrap();
        let w = local_train(&init_model::<f32>(4, 3), &ds, &TrainConfig::default()).unwrap();
        assert!(evaluate(&w, &ds).unwrap().accuracy > 0.5);
    }
}
