//! Synthetic objectives driven by the experiment loop.

use serde::{Deserialize, Serialize};

use lotus_core::linalg::{qr_orthonormalize, RngState};
use lotus_core::DenseMatrix;

use crate::error::{HarnessError, Result};
use crate::mlp::{argmax_rows, softmax_cross_entropy, TeacherStudent};

/// Loss and gradients at one step.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    /// Gradients handed to the optimizer, one per parameter block.
    pub grads: Vec<DenseMatrix>,
    /// `G_t`, the squared norm used by the tolerance rule. Noise-free where
    /// the objective injects noise.
    pub grad_norm_sq: f64,
}

/// A training objective. `evaluate` must be a pure function of the
/// parameters and the step so that runs are reproducible and every policy
/// sees the same noise.
pub trait Objective: Sync {
    fn initial_params(&self) -> Vec<DenseMatrix>;
    fn evaluate(&self, params: &[DenseMatrix], step: u64) -> Result<Evaluation>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[serde(alias = "stream")]
    DriftingStream,
    Quadratic,
    Logistic,
    Mlp,
}

impl ProblemKind {
    /// Learning rate used when none is configured.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            ProblemKind::Mlp => 0.01,
            _ => 0.05,
        }
    }
}

/// Problem sizes. Which fields matter depends on the kind:
/// `rows x cols` is the weight shape for the stream and the quadratic,
/// `classes x features` for logistic regression; the MLP uses `widths`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub rows: usize,
    pub cols: usize,
    /// Dimension of the drifting gradient subspace.
    pub subspace_rank: usize,
    /// Condition number of the quadratic's Hessian.
    pub condition: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub widths: Vec<usize>,
    pub teacher_hidden: usize,
    pub batch_size: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            subspace_rank: 8,
            condition: 10.0,
            train_samples: 8192,
            test_samples: 2048,
            widths: vec![16, 64, 64, 4],
            teacher_hidden: 16,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub dims: Dims,
    /// Rotation angle per step in radians (stream only).
    pub drift_rate: f64,
    pub noise_std: f64,
    pub seed: RngState,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, seed: u64) -> Self {
        Self {
            kind,
            dims: Dims::default(),
            drift_rate: 0.01,
            noise_std: 0.0,
            seed: RngState::new(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(HarnessError::Config(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if !self.drift_rate.is_finite() {
            return Err(HarnessError::Config("drift_rate must be finite".into()));
        }
        match self.kind {
            ProblemKind::DriftingStream => {
                if d.cols < 2 || !d.cols.is_multiple_of(2) || d.rows == 0 {
                    return Err(HarnessError::Config(format!(
                        "drifting stream needs an even column count >= 2, got {}x{}",
                        d.rows, d.cols
                    )));
                }
                if d.subspace_rank == 0 || d.subspace_rank > d.cols {
                    return Err(HarnessError::Config(format!(
                        "subspace_rank {} outside 1..={}",
                        d.subspace_rank, d.cols
                    )));
                }
            }
            ProblemKind::Quadratic | ProblemKind::Logistic => {
                if d.rows == 0 || d.cols == 0 {
                    return Err(HarnessError::Config("rows and cols must be positive".into()));
                }
                if self.kind == ProblemKind::Quadratic && !(d.condition >= 1.0 && d.condition.is_finite()) {
                    return Err(HarnessError::Config(format!(
                        "condition must be >= 1, got {}",
                        d.condition
                    )));
                }
                if self.kind == ProblemKind::Logistic && (d.rows < 2 || d.train_samples == 0) {
                    return Err(HarnessError::Config(
                        "logistic regression needs >= 2 classes and samples".into(),
                    ));
                }
            }
            ProblemKind::Mlp => {}
        }
        Ok(())
    }

    /// Instantiates the objective. All random draws derive from `seed`.
    pub fn build(&self) -> Result<Box<dyn Objective + Send>> {
        self.validate()?;
        let d = &self.dims;
        Ok(match self.kind {
            ProblemKind::DriftingStream => Box::new(DriftingStream::new(
                d.rows,
                d.cols,
                d.subspace_rank,
                self.drift_rate,
                self.noise_std,
                self.seed,
            )?),
            ProblemKind::Quadratic => Box::new(Quadratic::new(d.rows, d.cols, d.condition, self.noise_std, self.seed)?),
            ProblemKind::Logistic => Box::new(Logistic::new(d.rows, d.cols, d.train_samples, self.seed)?),
            ProblemKind::Mlp => Box::new(TeacherStudent::new(
                &d.widths,
                d.teacher_hidden,
                d.train_samples,
                d.test_samples,
                d.batch_size,
                self.seed,
            )?),
        })
    }
}

fn step_noise(seed: RngState, step: u64, rows: usize, cols: usize, std: f64) -> Option<DenseMatrix> {
    (std > 0.0).then(|| seed.fork(step).gaussian_matrix(rows, cols).scale(std))
}

/// Least squares against a target seen through a rotating window.
///
/// At step `t` the loss is `½|(W - W*) U_t|²` with `U_t = R(t·θ) B`, where
/// `B` is a fixed orthonormal `n x r` basis over the columns of `W` and
/// `R(φ)` rotates every coordinate pair `(i, i + n/2)` by `φ`. The gradient
/// `(W - W*) U_t U_tᵀ` has its row space in an `r`-dimensional subspace that
/// turns by `θ` per step, and its column space follows. The coefficients
/// depend on the iterate, so the stream has a tolerance to reach.
///
/// With `rows <= cols` the projector acts on the column side, opposite to
/// the drift, so a projected descent step never increases `|W - W*|`
/// however stale the projector is.
#[derive(Debug, Clone)]
pub struct DriftingStream {
    basis: DenseMatrix,
    target: DenseMatrix,
    drift_rate: f64,
    noise_std: f64,
    noise_rng: RngState,
}

impl DriftingStream {
    pub fn new(rows: usize, cols: usize, rank: usize, drift_rate: f64, noise_std: f64, seed: RngState) -> Result<Self> {
        if cols < 2 || !cols.is_multiple_of(2) || rank == 0 || rank > cols || rows == 0 {
            return Err(HarnessError::Config(format!(
                "invalid drifting stream {rows}x{cols} with rank {rank}"
            )));
        }
        let basis = qr_orthonormalize(&seed.fork(1).gaussian_matrix(cols, rank))?;
        let target = seed.fork(2).gaussian_matrix(rows, cols);
        Ok(Self {
            basis,
            target,
            drift_rate,
            noise_std,
            noise_rng: seed.fork(3),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.target.shape()
    }

    pub fn target(&self) -> &DenseMatrix {
        &self.target
    }

    /// `R(φ)` as a dense matrix.
    pub fn rotation(&self, angle: f64) -> DenseMatrix {
        let d = self.basis.rows();
        let h = d / 2;
        let (s, c) = angle.sin_cos();
        DenseMatrix::from_fn(d, d, |i, j| {
            let (pi, pj) = (i % h, j % h);
            if pi != pj {
                0.0
            } else if i == j {
                c
            } else if i < j {
                -s
            } else {
                s
            }
        })
    }

    /// `U_t = R(t·θ) B`, applied pairwise without forming `R`.
    pub fn subspace_at(&self, step: u64) -> DenseMatrix {
        let (d, r) = self.basis.shape();
        let h = d / 2;
        let (s, c) = (step as f64 * self.drift_rate).sin_cos();
        let mut u = DenseMatrix::zeros(d, r);
        for i in 0..h {
            for j in 0..r {
                let (a, b) = (self.basis.get(i, j), self.basis.get(i + h, j));
                u.set(i, j, c * a - s * b);
                u.set(i + h, j, s * a + c * b);
            }
        }
        u
    }
}

impl Objective for DriftingStream {
    fn initial_params(&self) -> Vec<DenseMatrix> {
        vec![DenseMatrix::zeros(self.target.rows(), self.target.cols())]
    }

    fn evaluate(&self, params: &[DenseMatrix], step: u64) -> Result<Evaluation> {
        let residual = single(params)?.sub(&self.target)?;
        let u = self.subspace_at(step);
        let coeff = residual.matmul(&u)?;
        let loss = 0.5 * coeff.frobenius_norm_sq();
        let mut grad = coeff.matmul_t(&u)?;
        let grad_norm_sq = grad.frobenius_norm_sq();
        if let Some(noise) = step_noise(self.noise_rng, step, grad.rows(), grad.cols(), self.noise_std) {
            grad = grad.add(&noise)?;
        }
        Ok(Evaluation {
            loss,
            grads: vec![grad],
            grad_norm_sq,
        })
    }
}

fn single(params: &[DenseMatrix]) -> Result<&DenseMatrix> {
    match params {
        [w] => Ok(w),
        _ => Err(HarnessError::Config(format!(
            "expected one parameter block, got {}",
            params.len()
        ))),
    }
}

/// `L(W) = ½ tr((W - W*)ᵀ A (W - W*))` with `A = Q diag(λ) Qᵀ` and
/// eigenvalues spaced geometrically from 1 down to `1/condition`, so the
/// smoothness constant is exactly `λ_max = 1`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    hessian: DenseMatrix,
    eigenvalues: Vec<f64>,
    target: DenseMatrix,
    start: DenseMatrix,
    noise_std: f64,
    noise_rng: RngState,
}

impl Quadratic {
    pub fn new(rows: usize, cols: usize, condition: f64, noise_std: f64, seed: RngState) -> Result<Self> {
        let eigenvalues: Vec<f64> = (0..rows)
            .map(|i| {
                if rows == 1 {
                    1.0
                } else {
                    condition.powf(-(i as f64) / (rows - 1) as f64)
                }
            })
            .collect();
        let hessian = if condition == 1.0 {
            DenseMatrix::identity(rows)
        } else {
            let q = qr_orthonormalize(&seed.fork(1).gaussian_matrix(rows, rows))?;
            let ql = DenseMatrix::from_fn(rows, rows, |i, j| q.get(i, j) * eigenvalues[j]);
            let a = ql.matmul_t(&q)?;
            // symmetrize away rounding
            DenseMatrix::from_fn(rows, rows, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)))
        };
        Ok(Self {
            hessian,
            eigenvalues,
            target: DenseMatrix::zeros(rows, cols),
            start: seed.fork(2).gaussian_matrix(rows, cols),
            noise_std,
            noise_rng: seed.fork(3),
        })
    }

    pub fn smoothness(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn hessian(&self) -> &DenseMatrix {
        &self.hessian
    }

    pub fn loss(&self, w: &DenseMatrix) -> Result<f64> {
        let e = w.sub(&self.target)?;
        Ok(0.5 * e.inner(&self.hessian.matmul(&e)?)?)
    }

    pub fn gradient(&self, w: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.hessian.matmul(&w.sub(&self.target)?)?)
    }
}

impl Objective for Quadratic {
    fn initial_params(&self) -> Vec<DenseMatrix> {
        vec![self.start.clone()]
    }

    fn evaluate(&self, params: &[DenseMatrix], step: u64) -> Result<Evaluation> {
        let w = single(params)?;
        let e = w.sub(&self.target)?;
        let mut grad = self.hessian.matmul(&e)?;
        let loss = 0.5 * e.inner(&grad)?;
        let grad_norm_sq = grad.frobenius_norm_sq();
        if let Some(noise) = step_noise(self.noise_rng, step, grad.rows(), grad.cols(), self.noise_std) {
            grad = grad.add(&noise)?;
        }
        Ok(Evaluation {
            loss,
            grads: vec![grad],
            grad_norm_sq,
        })
    }
}

/// Full-batch multinomial logistic regression with a small ridge term.
/// Labels come from a random linear teacher.
#[derive(Debug, Clone)]
pub struct Logistic {
    features: DenseMatrix,
    labels: Vec<usize>,
    classes: usize,
    ridge: f64,
}

impl Logistic {
    pub const RIDGE: f64 = 1e-3;

    pub fn new(classes: usize, features: usize, samples: usize, seed: RngState) -> Result<Self> {
        let x = seed.fork(1).gaussian_matrix(samples, features);
        let teacher = seed.fork(2).gaussian_matrix(classes, features);
        let labels = argmax_rows(&x.matmul_t(&teacher)?);
        Ok(Self {
            features: x,
            labels,
            classes,
            ridge: Self::RIDGE,
        })
    }
}

impl Objective for Logistic {
    fn initial_params(&self) -> Vec<DenseMatrix> {
        vec![DenseMatrix::zeros(self.classes, self.features.cols())]
    }

    fn evaluate(&self, params: &[DenseMatrix], _step: u64) -> Result<Evaluation> {
        let w = single(params)?;
        let logits = self.features.matmul_t(w)?;
        let (ce, dlogits) = softmax_cross_entropy(&logits, &self.labels)?;
        let mut grad = dlogits.t_matmul(&self.features)?;
        grad.add_scaled(self.ridge, w)?;
        let loss = ce + 0.5 * self.ridge * w.frobenius_norm_sq();
        let grad_norm_sq = grad.frobenius_norm_sq();
        Ok(Evaluation {
            loss,
            grads: vec![grad],
            grad_norm_sq,
        })
    }
}
