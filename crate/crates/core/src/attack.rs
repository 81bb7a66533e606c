//! Evasion attacks crafted against local substitutes.
//!
//! All attacks perturb normalized feature rows inside the unit box
//! and keep the original ground-truth label, so downstream code can
//! measure both evasion (substitute success) and transfer (does the
//! deployed forest change its mind).

use crate::error::Error;
use crate::features::{FeatureVector, LabeledDataset, FEATURE_DIM, FEATURE_CSV_HEADER};
use crate::forest::{DecisionTree, FederatedForest, TreeNode};
use crate::substitute::{MlpSubstitute, SvmSubstitute};
use crate::textfmt::sig6;
use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

/// An attack recipe with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackMethod {
    /// One signed-gradient step of size `epsilon`.
    Fgsm {
        /// Step size.
        epsilon: f64,
    },
    /// Saliency-guided single-feature steps of `theta`, touching at
    /// most `ceil(gamma * 9)` distinct features.
    Jsma {
        /// Per-feature step size.
        theta: f64,
        /// Fraction of features that may be modified.
        gamma: f64,
    },
    /// One step of length `lambda` against the predicted class's
    /// separating hyperplane.
    Svm {
        /// Step length.
        lambda: f64,
    },
    /// Walk one split feature across the decision boundary toward the
    /// nearest other-class leaf, in increments of `step`.
    Dt {
        /// Per-iteration increment.
        step: f64,
    },
}

impl AttackMethod {
    /// Compact label used in CSV artifacts and CLI arguments.
    pub fn label(&self) -> String {
        match self {
            AttackMethod::Fgsm { epsilon } => format!("fgsm{}", sig6(*epsilon)),
            AttackMethod::Jsma { .. } => "jsma".to_string(),
            AttackMethod::Svm { .. } => "svm".to_string(),
            AttackMethod::Dt { .. } => "dt".to_string(),
        }
    }

    /// Parses a label: `fgsm<epsilon>`, `jsma`, `svm`, or `dt`, each
    /// optionally followed by a parameter value (defaults: epsilon
    /// 0.36, theta 0.1 with gamma 0.5, lambda 1, step 0.05).
    pub fn parse(text: &str) -> Result<AttackMethod, Error> {
        let bad = || Error::InvalidInput(format!("unknown attack method {text:?}"));
        let tail = |prefix: &str, default: f64| -> Result<f64, Error> {
            let rest = &text[prefix.len()..];
            if rest.is_empty() {
                Ok(default)
            } else {
                rest.parse().map_err(|_| bad())
            }
        };
        if text.starts_with("fgsm") {
            Ok(AttackMethod::Fgsm {
                epsilon: tail("fgsm", 0.36)?,
            })
        } else if text.starts_with("jsma") {
            Ok(AttackMethod::Jsma {
                theta: tail("jsma", 0.1)?,
                gamma: 0.5,
            })
        } else if text.starts_with("svm") {
            Ok(AttackMethod::Svm {
                lambda: tail("svm", 1.0)?,
            })
        } else if text.starts_with("dt") {
            Ok(AttackMethod::Dt {
                step: tail("dt", 0.05)?,
            })
        } else {
            Err(bad())
        }
    }
}

/// The substitute a batch was crafted against.
#[derive(Debug, Clone, Copy)]
pub enum SubstituteModel<'a> {
    /// Gradient attacks (FGSM, JSMA).
    Mlp(&'a MlpSubstitute),
    /// The hyperplane-step attack.
    Svm(&'a SvmSubstitute),
    /// The split-crossing attack.
    Tree(&'a DecisionTree),
}

impl SubstituteModel<'_> {
    fn tag(&self) -> &'static str {
        match self {
            SubstituteModel::Mlp(_) => "mlp",
            SubstituteModel::Svm(_) => "svm",
            SubstituteModel::Tree(_) => "dt",
        }
    }

    fn class_index(&self, label: crate::types::TrafficClass) -> Option<usize> {
        let classes = match self {
            SubstituteModel::Mlp(m) => &m.classes,
            SubstituteModel::Svm(m) => &m.classes,
            SubstituteModel::Tree(t) => &t.classes,
        };
        classes.iter().position(|&c| c == label)
    }
}

/// Originals and their perturbed counterparts, row-aligned.
///
/// Perturbed rows keep their original ground-truth labels; `success`
/// records whether the substitute's prediction left the true class.
#[derive(Debug, Clone)]
pub struct AdversarialBatch {
    /// The attack that produced the batch.
    pub method: AttackMethod,
    /// Which substitute family crafted it.
    pub substitute_tag: String,
    /// Clean input rows.
    pub originals: Vec<FeatureVector>,
    /// Perturbed rows, same order and labels as `originals`.
    pub perturbed: Vec<FeatureVector>,
    /// Per-row substitute evasion flag.
    pub success: Vec<bool>,
}

impl AdversarialBatch {
    /// Rows in the batch.
    pub fn len(&self) -> usize {
        self.originals.len()
    }

    /// Whether the batch has no rows.
    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    /// Fraction of rows that evade the substitute.
    pub fn success_rate(&self) -> f64 {
        if self.success.is_empty() {
            return 0.0;
        }
        self.success.iter().filter(|&&s| s).count() as f64 / self.success.len() as f64
    }
}

fn clamp_unit(x: &mut [f64; FEATURE_DIM]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Sign with a hard zero: perturbations skip coordinates the loss is
/// locally flat in, rather than following IEEE signum(+0.0) = 1.
fn sign_strict(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One signed-gradient step: `x' = clip(x + epsilon * sign(grad J))`.
pub fn fgsm(
    mlp: &MlpSubstitute,
    x: &[f64; FEATURE_DIM],
    label: usize,
    epsilon: f64,
) -> Result<[f64; FEATURE_DIM], Error> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "epsilon must be finite and non-negative, got {epsilon}"
        )));
    }
    if label >= mlp.classes.len() {
        return Err(Error::InvalidInput("label index out of range".into()));
    }
    let grad = mlp.input_gradient(x, label);
    let mut out = *x;
    for (o, g) in out.iter_mut().zip(&grad) {
        *o += epsilon * sign_strict(*g);
    }
    clamp_unit(&mut out);
    Ok(out)
}

/// Saliency-guided attack touching at most `ceil(gamma * 9)` distinct
/// features, each moved once by `theta` against the true class.
///
/// Returns the perturbed row and whether the substitute was evaded.
pub fn jsma(
    mlp: &MlpSubstitute,
    x: &[f64; FEATURE_DIM],
    label: usize,
    theta: f64,
    gamma: f64,
) -> Result<([f64; FEATURE_DIM], bool), Error> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "theta must be finite and positive, got {theta}"
        )));
    }
    if !(gamma.is_finite() && gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "gamma must lie in (0, 1], got {gamma}"
        )));
    }
    if label >= mlp.classes.len() {
        return Err(Error::InvalidInput("label index out of range".into()));
    }
    let budget = (gamma * FEATURE_DIM as f64).ceil() as usize;
    let mut out = *x;
    let mut modified = [false; FEATURE_DIM];
    let mut touched = 0;
    while mlp.predict_index(&out) == label {
        if touched == budget {
            return Ok((out, false));
        }
        // Most salient untouched feature whose step direction is
        // feasible; saliency is the true-class probability gradient.
        let row = mlp.probability_jacobian(&out)[label];
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..FEATURE_DIM {
            if modified[i] {
                continue;
            }
            let direction = -sign_strict(row[i]);
            if direction == 0.0 {
                continue;
            }
            let at_bound =
                (direction > 0.0 && out[i] >= 1.0) || (direction < 0.0 && out[i] <= 0.0);
            if at_bound {
                continue;
            }
            let salience = row[i].abs();
            if pick.map_or(true, |(_, best)| salience > best) {
                pick = Some((i, salience));
            }
        }
        let Some((i, _)) = pick else {
            return Ok((out, false));
        };
        out[i] = (out[i] - sign_strict(row[i]) * theta).clamp(0.0, 1.0);
        modified[i] = true;
        touched += 1;
    }
    Ok((out, true))
}

/// One step against the predicted class's hyperplane:
/// `x' = clip(x - lambda * w / ||w||)`.
pub fn svm_attack(
    svm: &SvmSubstitute,
    x: &[f64; FEATURE_DIM],
    lambda: f64,
) -> Result<[f64; FEATURE_DIM], Error> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidInput(format!(
            "lambda must be finite and positive, got {lambda}"
        )));
    }
    let k = svm.predict_index(x);
    let w = &svm.weights[k];
    let norm: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidInput(
            "predicted class has a zero weight vector".into(),
        ));
    }
    let mut out = *x;
    for (o, wi) in out.iter_mut().zip(w.iter()) {
        *o -= lambda * wi / norm;
    }
    clamp_unit(&mut out);
    Ok(out)
}

/// Parent index per node (root has none).
fn parents_of(tree: &DecisionTree) -> Vec<Option<usize>> {
    let mut parents = vec![None; tree.nodes.len()];
    for (i, node) in tree.nodes.iter().enumerate() {
        if let TreeNode::Split { left, right, .. } = node {
            parents[*left] = Some(i);
            parents[*right] = Some(i);
        }
    }
    parents
}

fn root_path(parents: &[Option<usize>], node: usize) -> Vec<usize> {
    let mut path = vec![node];
    let mut at = node;
    while let Some(p) = parents[at] {
        path.push(p);
        at = p;
    }
    path.reverse();
    path
}

/// Split-crossing attack: route the input to its leaf, find the
/// nearest leaf (by tree-edge distance) whose majority class differs,
/// and walk the feature tested at their deepest common ancestor
/// across that threshold in `step` increments until the prediction
/// flips or the unit box blocks further movement.
pub fn dt_attack(
    tree: &DecisionTree,
    x: &[f64; FEATURE_DIM],
    step: f64,
) -> Result<([f64; FEATURE_DIM], bool), Error> {
    if !(step.is_finite() && step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "step must lie in (0, 1], got {step}"
        )));
    }
    let leaves_majorities: Vec<usize> = tree
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| matches!(n, TreeNode::Leaf { .. }))
        .map(|(i, _)| tree.leaf_majority(i))
        .collect();
    let first = leaves_majorities.first().copied();
    if leaves_majorities.iter().all(|&m| Some(m) == first) {
        return Err(Error::InvalidInput(
            "tree predicts a single class; nothing to cross".into(),
        ));
    }

    let start = tree.leaf_index_for(x);
    let start_class = tree.leaf_majority(start);
    let parents = parents_of(tree);

    // Breadth-first over tree edges from the input's leaf; first
    // other-class leaf found is the nearest target. Neighbor order
    // (parent, left, right) keeps the search deterministic.
    let mut queue = VecDeque::from([start]);
    let mut seen = vec![false; tree.nodes.len()];
    seen[start] = true;
    let mut target = None;
    while let Some(at) = queue.pop_front() {
        if at != start {
            if let TreeNode::Leaf { .. } = &tree.nodes[at] {
                if tree.leaf_majority(at) != start_class {
                    target = Some(at);
                    break;
                }
            }
        }
        let push = |n: usize, queue: &mut VecDeque<usize>, seen: &mut Vec<bool>| {
            if !seen[n] {
                seen[n] = true;
                queue.push_back(n);
            }
        };
        if let Some(p) = parents[at] {
            push(p, &mut queue, &mut seen);
        }
        if let TreeNode::Split { left, right, .. } = &tree.nodes[at] {
            push(*left, &mut queue, &mut seen);
            push(*right, &mut queue, &mut seen);
        }
    }
    let target = target.expect("mixed-majority tree has a reachable other-class leaf");

    // Deepest common ancestor of the two leaves.
    let path_a = root_path(&parents, start);
    let path_b = root_path(&parents, target);
    let mut ancestor = path_a[0];
    let mut target_next = path_b.get(1).copied();
    for i in 1..path_a.len().min(path_b.len()) {
        if path_a[i] != path_b[i] {
            break;
        }
        ancestor = path_a[i];
        target_next = path_b.get(i + 1).copied();
    }
    let TreeNode::Split { feature, left, .. } = tree.nodes[ancestor] else {
        unreachable!("common ancestor of distinct leaves is a split");
    };
    let target_goes_left = target_next == Some(left);
    let direction = if target_goes_left { -1.0 } else { 1.0 };

    let mut out = *x;
    // Enough iterations to sweep the whole unit interval.
    let max_steps = (1.0 / step).ceil() as usize + 2;
    for _ in 0..max_steps {
        let before = out[feature];
        out[feature] = (out[feature] + direction * step).clamp(0.0, 1.0);
        if tree.predict_index(&out) != start_class {
            return Ok((out, true));
        }
        if out[feature] == before {
            return Ok((out, false));
        }
    }
    Ok((out, false))
}

/// Runs one attack over a whole dataset.
///
/// Per row, `success` records whether the substitute's final
/// prediction differs from the true label; rows the substitute
/// already misclassifies count as successes without perturbation for
/// tree attacks (the split-crossing walk is defined relative to the
/// tree's own prediction).
pub fn craft_batch(
    method: &AttackMethod,
    substitute: SubstituteModel<'_>,
    data: &LabeledDataset,
) -> Result<AdversarialBatch, Error> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no rows to attack"));
    }
    let mut perturbed = Vec::with_capacity(data.len());
    let mut success = Vec::with_capacity(data.len());
    for row in &data.rows {
        let label = substitute.class_index(row.label).ok_or_else(|| {
            Error::ClassMismatch(format!("label {} unknown to the substitute", row.label))
        })?;
        let (values, hit) = match (method, substitute) {
            (AttackMethod::Fgsm { epsilon }, SubstituteModel::Mlp(m)) => {
                let out = fgsm(m, &row.values, label, *epsilon)?;
                let hit = m.predict_index(&out) != label;
                (out, hit)
            }
            (AttackMethod::Jsma { theta, gamma }, SubstituteModel::Mlp(m)) => {
                jsma(m, &row.values, label, *theta, *gamma)?
            }
            (AttackMethod::Svm { lambda }, SubstituteModel::Svm(s)) => {
                let out = svm_attack(s, &row.values, *lambda)?;
                let hit = s.predict_index(&out) != label;
                (out, hit)
            }
            (AttackMethod::Dt { step }, SubstituteModel::Tree(t)) => {
                if t.predict_index(&row.values) != label {
                    (row.values, true)
                } else {
                    dt_attack(t, &row.values, *step)?
                }
            }
            _ => {
                return Err(Error::InvalidInput(format!(
                    "attack {} cannot run against a {} substitute",
                    method.label(),
                    substitute.tag()
                )))
            }
        };
        perturbed.push(FeatureVector {
            values,
            label: row.label,
        });
        success.push(hit);
    }
    Ok(AdversarialBatch {
        method: method.clone(),
        substitute_tag: substitute.tag().to_string(),
        originals: data.rows.clone(),
        perturbed,
        success,
    })
}

/// Fraction of rows where the target model's prediction changes
/// between the original and perturbed row.
pub fn transferability_rate(
    target: &FederatedForest,
    batch: &AdversarialBatch,
) -> Result<f64, Error> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch has no transfer rate"));
    }
    let flipped = batch
        .originals
        .iter()
        .zip(&batch.perturbed)
        .filter(|(orig, pert)| target.predict(&orig.values) != target.predict(&pert.values))
        .count();
    Ok(flipped as f64 / batch.len() as f64)
}

/// Serializes the perturbed rows as feature CSV with `method` and
/// `success` columns appended.
pub fn write_batch_csv(batch: &AdversarialBatch) -> String {
    let mut out = String::with_capacity(batch.len() * 96);
    writeln!(out, "{FEATURE_CSV_HEADER},method,success").unwrap();
    let label = batch.method.label();
    for (row, &hit) in batch.perturbed.iter().zip(&batch.success) {
        for v in &row.values {
            let _ = write!(out, "{},", sig6(*v));
        }
        writeln!(out, "{},{},{}", row.label.name(), label, u8::from(hit)).unwrap();
    }
    out
}

/// Writes a batch CSV to disk.
pub fn save_batch_csv(batch: &AdversarialBatch, path: impl AsRef<Path>) -> Result<(), Error> {
    std::fs::write(path, write_batch_csv(batch))?;
    Ok(())
}
