//! Differentiable substitute models.
//!
//! The deployed forest exposes no gradients, so attacks train local
//! substitutes on the same feature space and transfer perturbations:
//! a two-hidden-layer softmax MLP with analytic input gradients, and a
//! one-vs-rest linear SVM trained by stochastic subgradient descent.

use crate::error::Error;
use crate::features::{LabeledDataset, FEATURE_DIM};
use crate::forest::argmax;
use crate::types::TrafficClass;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// MLP training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Width of both hidden layers.
    pub hidden: usize,
    /// SGD learning rate.
    pub lr: f64,
    /// Training epochs.
    pub epochs: usize,
    /// Minibatch size.
    pub batch: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: 32,
            lr: 0.05,
            epochs: 200,
            batch: 32,
        }
    }
}

/// A trained `9 -> hidden -> hidden -> classes` ReLU network with a
/// softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSubstitute {
    /// First-layer weights, `hidden x 9`.
    pub w1: Vec<Vec<f64>>,
    /// First-layer biases.
    pub b1: Vec<f64>,
    /// Second-layer weights, `hidden x hidden`.
    pub w2: Vec<Vec<f64>>,
    /// Second-layer biases.
    pub b2: Vec<f64>,
    /// Output weights, `classes x hidden`.
    pub w3: Vec<Vec<f64>>,
    /// Output biases.
    pub b3: Vec<f64>,
    /// Classes in dataset order; output unit `i` scores `classes[i]`.
    pub classes: Vec<TrafficClass>,
    /// Hidden width.
    pub hidden: usize,
    /// Mean cross-entropy per epoch, recorded during training.
    pub epoch_loss: Vec<f64>,
}

struct Forward {
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    p: Vec<f64>,
}

fn matvec(w: &[Vec<f64>], x: &[f64], b: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(row, bias)| row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + bias)
        .collect()
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Numerically stable softmax.
fn softmax(z: &[f64]) -> Vec<f64> {
    let peak = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - peak).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

impl MlpSubstitute {
    fn forward(&self, x: &[f64; FEATURE_DIM]) -> Forward {
        let z1 = matvec(&self.w1, x, &self.b1);
        let h1 = relu(&z1);
        let z2 = matvec(&self.w2, &h1, &self.b2);
        let h2 = relu(&z2);
        let z3 = matvec(&self.w3, &h2, &self.b3);
        let p = softmax(&z3);
        Forward { z1, h1, z2, h2, p }
    }

    /// Class probabilities.
    pub fn predict_proba(&self, x: &[f64; FEATURE_DIM]) -> Vec<f64> {
        self.forward(x).p
    }

    /// Most probable class index (ties to the earlier class).
    pub fn predict_index(&self, x: &[f64; FEATURE_DIM]) -> usize {
        argmax(&self.predict_proba(x))
    }

    /// Most probable class.
    pub fn predict(&self, x: &[f64; FEATURE_DIM]) -> TrafficClass {
        self.classes[self.predict_index(x)]
    }

    /// Cross-entropy of the true class, `-ln p[label]`.
    pub fn cross_entropy(&self, x: &[f64; FEATURE_DIM], label: usize) -> f64 {
        -self.forward(x).p[label].max(f64::MIN_POSITIVE).ln()
    }

    /// Analytic gradient of the cross-entropy with respect to the
    /// input: backpropagation through both hidden layers, with
    /// `relu'(0) = 0`.
    pub fn input_gradient(&self, x: &[f64; FEATURE_DIM], label: usize) -> [f64; FEATURE_DIM] {
        assert!(label < self.classes.len(), "label index out of range");
        let f = self.forward(x);
        let mut d3 = f.p.clone();
        d3[label] -= 1.0;
        let d2 = back_layer(&self.w3, &d3, &f.z2);
        let d1 = back_layer(&self.w2, &d2, &f.z1);
        let mut grad = [0.0; FEATURE_DIM];
        for (i, row) in self.w1.iter().enumerate() {
            for (g, w) in grad.iter_mut().zip(row) {
                *g += w * d1[i];
            }
        }
        grad
    }

    /// Jacobian of the class probabilities with respect to the input;
    /// row `c` is the gradient of `p[c]`.
    ///
    /// Computed as `(diag(p) - p p^T) . W3 D2 W2 D1 W1` where the `D`
    /// are ReLU activation masks.
    pub fn probability_jacobian(&self, x: &[f64; FEATURE_DIM]) -> Vec<[f64; FEATURE_DIM]> {
        let f = self.forward(x);
        // m1 = D1 W1, rows masked by the first activation pattern.
        let m1: Vec<[f64; FEATURE_DIM]> = self
            .w1
            .iter()
            .zip(&f.z1)
            .map(|(row, &z)| {
                let mut out = [0.0; FEATURE_DIM];
                if z > 0.0 {
                    out.copy_from_slice(row);
                }
                out
            })
            .collect();
        // m2 = D2 W2 m1.
        let m2: Vec<[f64; FEATURE_DIM]> = self
            .w2
            .iter()
            .zip(&f.z2)
            .map(|(row, &z)| {
                let mut out = [0.0; FEATURE_DIM];
                if z > 0.0 {
                    for (w, m) in row.iter().zip(&m1) {
                        for (o, v) in out.iter_mut().zip(m) {
                            *o += w * v;
                        }
                    }
                }
                out
            })
            .collect();
        // m3 = W3 m2 = dz3/dx.
        let m3: Vec<[f64; FEATURE_DIM]> = self
            .w3
            .iter()
            .map(|row| {
                let mut out = [0.0; FEATURE_DIM];
                for (w, m) in row.iter().zip(&m2) {
                    for (o, v) in out.iter_mut().zip(m) {
                        *o += w * v;
                    }
                }
                out
            })
            .collect();
        // dp/dx = (diag(p) - p p^T) m3.
        let mut weighted = [0.0; FEATURE_DIM];
        for (pk, mk) in f.p.iter().zip(&m3) {
            for (w, v) in weighted.iter_mut().zip(mk) {
                *w += pk * v;
            }
        }
        f.p
            .iter()
            .zip(&m3)
            .map(|(&pc, mc)| {
                let mut row = [0.0; FEATURE_DIM];
                for ((r, &m), &w) in row.iter_mut().zip(mc).zip(&weighted) {
                    *r = pc * (m - w);
                }
                row
            })
            .collect()
    }
}

/// Backpropagates `delta` through a layer: `(W^T delta) . relu'(z)`.
fn back_layer(w: &[Vec<f64>], delta: &[f64], z: &[f64]) -> Vec<f64> {
    z.iter()
        .enumerate()
        .map(|(j, &zj)| {
            if zj > 0.0 {
                w.iter().zip(delta).map(|(row, d)| row[j] * d).sum()
            } else {
                0.0
            }
        })
        .collect()
}

fn glorot_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-limit..limit)).collect())
        .collect()
}

fn validate_training_data(train: &LabeledDataset) -> Result<(), Error> {
    if train.is_empty() {
        return Err(Error::EmptyInput("substitute training data is empty"));
    }
    let distinct = train
        .class_names
        .iter()
        .filter(|&&c| train.rows.iter().any(|r| r.label == c))
        .count();
    if distinct < 2 {
        return Err(Error::InvalidInput(
            "substitute training needs at least two distinct classes".into(),
        ));
    }
    Ok(())
}

/// Trains the MLP substitute with minibatch SGD.
pub fn train_mlp(
    train: &LabeledDataset,
    params: &MlpParams,
    seed: u64,
) -> Result<MlpSubstitute, Error> {
    validate_training_data(train)?;
    if params.hidden == 0 || params.epochs == 0 || params.batch == 0 {
        return Err(Error::InvalidInput(
            "hidden width, epochs, and batch size must be positive".into(),
        ));
    }
    if !(params.lr.is_finite() && params.lr > 0.0) {
        return Err(Error::InvalidInput("learning rate must be positive".into()));
    }
    let n_classes = train.class_names.len();
    let h = params.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlpSubstitute {
        w1: glorot_matrix(&mut rng, h, FEATURE_DIM),
        b1: vec![0.0; h],
        w2: glorot_matrix(&mut rng, h, h),
        b2: vec![0.0; h],
        w3: glorot_matrix(&mut rng, n_classes, h),
        b3: vec![0.0; n_classes],
        classes: train.class_names.clone(),
        hidden: h,
        epoch_loss: Vec::with_capacity(params.epochs),
    };
    let labels: Vec<usize> = train
        .rows
        .iter()
        .map(|r| train.class_index(r.label).expect("label in class list"))
        .collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(params.batch) {
            let scale = params.lr / chunk.len() as f64;
            let mut gw1 = vec![vec![0.0; FEATURE_DIM]; h];
            let mut gb1 = vec![0.0; h];
            let mut gw2 = vec![vec![0.0; h]; h];
            let mut gb2 = vec![0.0; h];
            let mut gw3 = vec![vec![0.0; h]; n_classes];
            let mut gb3 = vec![0.0; n_classes];
            for &i in chunk {
                let x = &train.rows[i].values;
                let f = model.forward(x);
                epoch_loss += -f.p[labels[i]].max(f64::MIN_POSITIVE).ln();
                let mut d3 = f.p;
                d3[labels[i]] -= 1.0;
                for (row, (&d, g)) in gw3.iter_mut().zip(d3.iter().zip(&mut gb3)) {
                    *g += d;
                    for (cell, &a) in row.iter_mut().zip(&f.h2) {
                        *cell += d * a;
                    }
                }
                let d2 = back_layer(&model.w3, &d3, &f.z2);
                for (row, (&d, g)) in gw2.iter_mut().zip(d2.iter().zip(&mut gb2)) {
                    *g += d;
                    for (cell, &a) in row.iter_mut().zip(&f.h1) {
                        *cell += d * a;
                    }
                }
                let d1 = back_layer(&model.w2, &d2, &f.z1);
                for (row, (&d, g)) in gw1.iter_mut().zip(d1.iter().zip(&mut gb1)) {
                    *g += d;
                    for (cell, &a) in row.iter_mut().zip(x.iter()) {
                        *cell += d * a;
                    }
                }
            }
            apply_update(&mut model.w1, &mut model.b1, &gw1, &gb1, scale);
            apply_update(&mut model.w2, &mut model.b2, &gw2, &gb2, scale);
            apply_update(&mut model.w3, &mut model.b3, &gw3, &gb3, scale);
        }
        model.epoch_loss.push(epoch_loss / train.len() as f64);
    }
    Ok(model)
}

fn apply_update(w: &mut [Vec<f64>], b: &mut [f64], gw: &[Vec<f64>], gb: &[f64], scale: f64) {
    for (row, grow) in w.iter_mut().zip(gw) {
        for (cell, g) in row.iter_mut().zip(grow) {
            *cell -= scale * g;
        }
    }
    for (cell, g) in b.iter_mut().zip(gb) {
        *cell -= scale * g;
    }
}

/// SVM training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams {
    /// L2 regularization strength.
    pub reg: f64,
    /// Training epochs.
    pub epochs: usize,
    /// Base step size, decayed as `lr / (1 + epoch)`.
    pub lr: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            reg: 1e-3,
            epochs: 60,
            lr: 0.5,
        }
    }
}

/// A one-vs-rest linear SVM: one weight vector and bias per class.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmSubstitute {
    /// Per-class weight vectors.
    pub weights: Vec<[f64; FEATURE_DIM]>,
    /// Per-class biases.
    pub biases: Vec<f64>,
    /// Classes in dataset order.
    pub classes: Vec<TrafficClass>,
    /// Mean regularized hinge objective per epoch.
    pub epoch_objective: Vec<f64>,
}

impl SvmSubstitute {
    /// Per-class decision values `w_c . x + b_c`.
    pub fn decision(&self, x: &[f64; FEATURE_DIM]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b)
            .collect()
    }

    /// Class with the largest decision value (ties to the earlier).
    pub fn predict_index(&self, x: &[f64; FEATURE_DIM]) -> usize {
        argmax(&self.decision(x))
    }

    /// Predicted class.
    pub fn predict(&self, x: &[f64; FEATURE_DIM]) -> TrafficClass {
        self.classes[self.predict_index(x)]
    }
}

/// Trains the one-vs-rest SVM with per-sample subgradient steps and a
/// per-epoch decaying step size.
pub fn train_svm(
    train: &LabeledDataset,
    params: &SvmParams,
    seed: u64,
) -> Result<SvmSubstitute, Error> {
    validate_training_data(train)?;
    if params.epochs == 0 {
        return Err(Error::InvalidInput("epochs must be positive".into()));
    }
    if !(params.lr.is_finite() && params.lr > 0.0) {
        return Err(Error::InvalidInput("step size must be positive".into()));
    }
    if !(params.reg.is_finite() && params.reg >= 0.0) {
        return Err(Error::InvalidInput(
            "regularization must be non-negative".into(),
        ));
    }
    let n_classes = train.class_names.len();
    let labels: Vec<usize> = train
        .rows
        .iter()
        .map(|r| train.class_index(r.label).expect("label in class list"))
        .collect();
    let mut model = SvmSubstitute {
        weights: vec![[0.0; FEATURE_DIM]; n_classes],
        biases: vec![0.0; n_classes],
        classes: train.class_names.clone(),
        epoch_objective: Vec::with_capacity(params.epochs),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..params.epochs {
        let step = params.lr / (1.0 + epoch as f64);
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &train.rows[i].values;
            for (c, (w, b)) in model.weights.iter_mut().zip(&mut model.biases).enumerate() {
                let y = if labels[i] == c { 1.0 } else { -1.0 };
                let margin = y * (w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + *b);
                for wc in w.iter_mut() {
                    *wc *= 1.0 - step * params.reg;
                }
                if margin < 1.0 {
                    for (wc, &xc) in w.iter_mut().zip(x.iter()) {
                        *wc += step * y * xc;
                    }
                    *b += step * y;
                }
            }
        }
        model.epoch_objective.push(svm_objective(&model, train, &labels, params.reg));
    }
    Ok(model)
}

/// Mean over classes of the regularized hinge objective.
fn svm_objective(
    model: &SvmSubstitute,
    train: &LabeledDataset,
    labels: &[usize],
    reg: f64,
) -> f64 {
    let mut total = 0.0;
    for (c, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        let sq_norm: f64 = w.iter().map(|v| v * v).sum();
        let hinge: f64 = train
            .rows
            .iter()
            .zip(labels)
            .map(|(r, &l)| {
                let y = if l == c { 1.0 } else { -1.0 };
                let margin =
                    y * (w.iter().zip(&r.values).map(|(wi, xi)| wi * xi).sum::<f64>() + b);
                (1.0 - margin).max(0.0)
            })
            .sum::<f64>()
            / train.len() as f64;
        total += reg / 2.0 * sq_norm + hinge;
    }
    total / model.weights.len() as f64
}
