//! Small tanh MLP with softmax cross-entropy and hand-written backprop.
//!
//! Parameters are stored as `[W1, b1, W2, b2, ...]` with `W_l` of shape
//! `out x in` and `b_l` of shape `1 x out`. Inputs are row-major batches.

use lotus_core::linalg::RngState;
use lotus_core::{DenseMatrix, LotusError};

use crate::error::{HarnessError, Result};
use crate::problem::{Evaluation, Objective};

/// Mean softmax cross-entropy over the rows of `logits` and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix)> {
    let (b, k) = logits.shape();
    if labels.len() != b {
        return Err(LotusError::DimensionMismatch {
            op: "softmax_cross_entropy",
            left: logits.shape(),
            right: (labels.len(), 1),
        }
        .into());
    }
    let mut grad = DenseMatrix::zeros(b, k);
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(HarnessError::Config(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_total = total.ln();
        loss += log_total + max - row[label];
        for (j, z) in row.iter().enumerate() {
            let p = ((z - max) - log_total).exp();
            let y = if j == label { 1.0 } else { 0.0 };
            grad.set(i, j, (p - y) / b as f64);
        }
    }
    Ok((loss / b as f64, grad))
}

/// Index of the largest entry in each row.
pub fn argmax_rows(m: &DenseMatrix) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Inverse-CDF draw from `softmax(logits)` with `u` uniform in `[0, 1)`.
fn sample_softmax(logits: &[f64], u: f64) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let mut target = u * weights.iter().sum::<f64>();
    for (k, w) in weights.iter().enumerate() {
        if target < *w {
            return k;
        }
        target -= w;
    }
    logits.len() - 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    widths: Vec<usize>,
}

impl Mlp {
    pub fn new(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(HarnessError::Config(format!(
                "mlp widths must list at least two positive sizes, got {widths:?}"
            )));
        }
        Ok(Self {
            widths: widths.to_vec(),
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Scaled Gaussian weights, zero biases.
    pub fn init_params(&self, rng: RngState) -> Vec<DenseMatrix> {
        let mut params = Vec::with_capacity(2 * self.layers());
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let w = rng.fork(l as u64).gaussian_matrix(fan_out, fan_in);
            params.push(w.scale(1.0 / (fan_in as f64).sqrt()));
            params.push(DenseMatrix::zeros(1, fan_out));
        }
        params
    }

    fn check_params(&self, params: &[DenseMatrix]) -> Result<()> {
        if params.len() != 2 * self.layers() {
            return Err(HarnessError::Config(format!(
                "expected {} parameter blocks, got {}",
                2 * self.layers(),
                params.len()
            )));
        }
        for l in 0..self.layers() {
            let want_w = (self.widths[l + 1], self.widths[l]);
            let want_b = (1, self.widths[l + 1]);
            for (p, want) in [(&params[2 * l], want_w), (&params[2 * l + 1], want_b)] {
                if p.shape() != want {
                    return Err(LotusError::DimensionMismatch {
                        op: "mlp parameter",
                        left: want,
                        right: p.shape(),
                    }
                    .into());
                }
            }
        }
        Ok(())
    }

    /// Activations of every layer; the last entry holds the logits.
    fn activations(&self, params: &[DenseMatrix], x: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
        self.check_params(params)?;
        let mut acts = vec![x.clone()];
        for l in 0..self.layers() {
            let prev = &acts[l];
            let mut z = prev.matmul_t(&params[2 * l])?;
            let bias = params[2 * l + 1].as_slice();
            let cols = z.cols();
            for (k, v) in z.as_mut_slice().iter_mut().enumerate() {
                *v += bias[k % cols];
            }
            if l + 1 < self.layers() {
                z = z.map(f64::tanh);
            }
            acts.push(z);
        }
        Ok(acts)
    }

    pub fn forward(&self, params: &[DenseMatrix], x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.activations(params, x)?.pop().expect("at least one layer"))
    }

    pub fn loss(&self, params: &[DenseMatrix], x: &DenseMatrix, labels: &[usize]) -> Result<f64> {
        Ok(softmax_cross_entropy(&self.forward(params, x)?, labels)?.0)
    }

    /// Mean cross-entropy and its gradient for every parameter block.
    pub fn loss_and_grads(
        &self,
        params: &[DenseMatrix],
        x: &DenseMatrix,
        labels: &[usize],
    ) -> Result<(f64, Vec<DenseMatrix>)> {
        let acts = self.activations(params, x)?;
        let (loss, mut delta) = softmax_cross_entropy(&acts[self.layers()], labels)?;
        let mut grads = vec![DenseMatrix::zeros(1, 1); params.len()];
        for l in (0..self.layers()).rev() {
            let prev = &acts[l];
            grads[2 * l] = delta.t_matmul(prev)?;
            let mut db = vec![0.0; delta.cols()];
            for i in 0..delta.rows() {
                for (acc, v) in db.iter_mut().zip(delta.row(i)) {
                    *acc += v;
                }
            }
            grads[2 * l + 1] = DenseMatrix::new(1, db.len(), db)?;
            if l > 0 {
                let back = delta.matmul(&params[2 * l])?;
                // tanh' = 1 - a²
                delta = DenseMatrix::from_fn(back.rows(), back.cols(), |i, j| {
                    let a = prev.get(i, j);
                    back.get(i, j) * (1.0 - a * a)
                });
            }
        }
        Ok((loss, grads))
    }

    pub fn accuracy(&self, params: &[DenseMatrix], x: &DenseMatrix, labels: &[usize]) -> Result<f64> {
        let pred = argmax_rows(&self.forward(params, x)?);
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

/// Worst relative error per parameter block between backprop and central
/// finite differences with step `h`.
pub fn gradient_check(
    mlp: &Mlp,
    params: &[DenseMatrix],
    x: &DenseMatrix,
    labels: &[usize],
    h: f64,
) -> Result<Vec<f64>> {
    let (_, grads) = mlp.loss_and_grads(params, x, labels)?;
    let mut probe = params.to_vec();
    let mut errors = Vec::with_capacity(params.len());
    for (b, g) in grads.iter().enumerate() {
        let mut numeric = vec![0.0; g.len()];
        for (k, out) in numeric.iter_mut().enumerate() {
            let orig = probe[b].as_slice()[k];
            probe[b].as_mut_slice()[k] = orig + h;
            let up = mlp.loss(&probe, x, labels)?;
            probe[b].as_mut_slice()[k] = orig - h;
            let down = mlp.loss(&probe, x, labels)?;
            probe[b].as_mut_slice()[k] = orig;
            *out = (up - down) / (2.0 * h);
        }
        let numeric = DenseMatrix::new(g.rows(), g.cols(), numeric)?;
        let diff = numeric.sub(g)?.frobenius_norm();
        let denom = numeric.frobenius_norm().max(g.frobenius_norm()).max(f64::MIN_POSITIVE);
        errors.push(diff / denom);
    }
    Ok(errors)
}

/// Classification data labelled by a random teacher network. Labels are
/// drawn from the teacher's softmax, so the achievable loss is the
/// teacher's conditional entropy rather than zero.
#[derive(Debug, Clone)]
pub struct TeacherStudent {
    mlp: Mlp,
    train_x: DenseMatrix,
    train_y: Vec<usize>,
    test_x: DenseMatrix,
    test_y: Vec<usize>,
    batch_size: usize,
    init_rng: RngState,
    order_rng: RngState,
}

impl TeacherStudent {
    pub fn new(
        widths: &[usize],
        teacher_hidden: usize,
        train_samples: usize,
        test_samples: usize,
        batch_size: usize,
        rng: RngState,
    ) -> Result<Self> {
        let mlp = Mlp::new(widths)?;
        if train_samples == 0 || test_samples == 0 || batch_size == 0 {
            return Err(HarnessError::Config(
                "sample counts and batch size must be positive".into(),
            ));
        }
        let input = widths[0];
        let classes = *widths.last().expect("validated");
        let teacher = Mlp::new(&[input, teacher_hidden.max(1), classes])?;
        // sharper teacher logits give less ambiguous labels
        let teacher_params: Vec<DenseMatrix> = teacher
            .init_params(rng.fork(10))
            .into_iter()
            .map(|p| p.scale(2.0))
            .collect();
        let label = |x: &DenseMatrix, stream: RngState| -> Result<Vec<usize>> {
            let logits = teacher.forward(&teacher_params, x)?;
            let mut sampler = stream.sampler();
            Ok((0..logits.rows())
                .map(|i| sample_softmax(logits.row(i), sampler.uniform()))
                .collect())
        };
        let train_x = rng.fork(11).gaussian_matrix(train_samples, input);
        let test_x = rng.fork(12).gaussian_matrix(test_samples, input);
        let train_y = label(&train_x, rng.fork(15))?;
        let test_y = label(&test_x, rng.fork(16))?;
        Ok(Self {
            mlp,
            train_x,
            train_y,
            test_x,
            test_y,
            batch_size: batch_size.min(train_samples),
            init_rng: rng.fork(13),
            order_rng: rng.fork(14),
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn steps_per_epoch(&self) -> u64 {
        (self.train_y.len() / self.batch_size) as u64
    }

    /// Training-set indices of the minibatch used at `step` (1-based).
    /// Each epoch draws a fresh permutation seeded by the epoch number.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let per_epoch = self.steps_per_epoch().max(1);
        let epoch = (step.max(1) - 1) / per_epoch;
        let slot = ((step.max(1) - 1) % per_epoch) as usize;
        let mut order: Vec<usize> = (0..self.train_y.len()).collect();
        self.order_rng.fork(epoch).sampler().shuffle(&mut order);
        order[slot * self.batch_size..(slot + 1) * self.batch_size].to_vec()
    }

    pub fn test_accuracy(&self, params: &[DenseMatrix]) -> Result<f64> {
        self.mlp.accuracy(params, &self.test_x, &self.test_y)
    }

    pub fn test_loss(&self, params: &[DenseMatrix]) -> Result<f64> {
        self.mlp.loss(params, &self.test_x, &self.test_y)
    }

    pub fn train_loss(&self, params: &[DenseMatrix]) -> Result<f64> {
        self.mlp.loss(params, &self.train_x, &self.train_y)
    }
}

impl Objective for TeacherStudent {
    fn initial_params(&self) -> Vec<DenseMatrix> {
        self.mlp.init_params(self.init_rng)
    }

    fn evaluate(&self, params: &[DenseMatrix], step: u64) -> Result<Evaluation> {
        let idx = self.batch_indices(step);
        let cols = self.train_x.cols();
        let x = DenseMatrix::from_fn(idx.len(), cols, |i, j| self.train_x.get(idx[i], j));
        let y: Vec<usize> = idx.iter().map(|&i| self.train_y[i]).collect();
        let (loss, grads) = self.mlp.loss_and_grads(params, &x, &y)?;
        let grad_norm_sq = grads.iter().map(DenseMatrix::frobenius_norm_sq).sum();
        Ok(Evaluation {
            loss,
            grads,
            grad_norm_sq,
        })
    }
}
