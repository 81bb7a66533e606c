//! Adversarial capture sandbox and augmentation retraining.
//!
//! Batches the detector flagged as drifted are quarantined in a
//! sandbox. Retraining appends their perturbed rows to the original
//! training data under a dedicated `Adversarial` label and runs the
//! full federated round again through the registry, so the hardened
//! model can name attack traffic instead of mistaking it for a known
//! class.

use crate::attack::{save_batch_csv, AdversarialBatch, AttackMethod};
use crate::detector::DetectionVerdict;
use crate::error::Error;
use crate::features::LabeledDataset;
use crate::forest::{FederatedForest, ForestParams};
use crate::registry::{train_with_registry, Chain, ContentStore};
use crate::types::TrafficClass;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// A quarantined batch together with the verdict that admitted it.
#[derive(Debug, Clone)]
pub struct CapturedBatch {
    /// Capture order, starting at 0.
    pub sequence: u64,
    /// The adversarial batch.
    pub batch: AdversarialBatch,
    /// The detection verdict that admitted it.
    pub verdict: DetectionVerdict,
}

/// Quarantine for detector-flagged batches.
///
/// Only batches whose verdict rejected the null are admitted; benign
/// looking traffic must never be recycled into training data.
#[derive(Debug, Clone, Default)]
pub struct Sandbox {
    captured: Vec<CapturedBatch>,
}

impl Sandbox {
    /// An empty sandbox.
    pub fn new() -> Sandbox {
        Sandbox::default()
    }

    /// Admits a flagged batch, returning its capture sequence number.
    pub fn capture(
        &mut self,
        batch: AdversarialBatch,
        verdict: DetectionVerdict,
    ) -> Result<u64, Error> {
        if !verdict.reject_h0 {
            return Err(Error::CaptureRefused);
        }
        if batch.is_empty() {
            return Err(Error::EmptyInput("cannot capture an empty batch"));
        }
        let sequence = self.captured.len() as u64;
        self.captured.push(CapturedBatch {
            sequence,
            batch,
            verdict,
        });
        Ok(sequence)
    }

    /// Captured batches in capture order.
    pub fn captured(&self) -> &[CapturedBatch] {
        &self.captured
    }

    /// Number of captured batches.
    pub fn len(&self) -> usize {
        self.captured.len()
    }

    /// Whether nothing has been captured.
    pub fn is_empty(&self) -> bool {
        self.captured.is_empty()
    }

    /// Writes each captured batch as a CSV plus a metadata sidecar.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), Error> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for captured in &self.captured {
            let stem = format!(
                "batch_{:03}_{}",
                captured.sequence,
                captured.batch.method.label()
            );
            save_batch_csv(&captured.batch, dir.join(format!("{stem}.csv")))?;
            fs::write(dir.join(format!("{stem}.meta")), meta_text(captured))?;
        }
        Ok(())
    }
}

fn meta_text(captured: &CapturedBatch) -> String {
    let v = &captured.verdict;
    let mut out = String::new();
    writeln!(out, "sequence {}", captured.sequence).unwrap();
    writeln!(out, "method {}", captured.batch.method.label()).unwrap();
    writeln!(out, "substitute {}", captured.batch.substitute_tag).unwrap();
    writeln!(out, "rows {}", captured.batch.len()).unwrap();
    writeln!(out, "statistic {}", v.kind.name()).unwrap();
    writeln!(out, "value {}", v.statistic).unwrap();
    writeln!(out, "p_value {}", v.p_value).unwrap();
    writeln!(out, "alpha {}", v.alpha).unwrap();
    writeln!(out, "reject 1").unwrap();
    writeln!(out, "n {} m {} permutations {}", v.n, v.m, v.n_permutations).unwrap();
    match v.bandwidth {
        Some(b) => writeln!(out, "bandwidth {b}").unwrap(),
        None => writeln!(out, "bandwidth -").unwrap(),
    }
    out
}

/// Training data extended with relabeled adversarial rows.
#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    /// Original rows followed by adversarial rows.
    pub dataset: LabeledDataset,
    /// One description per contributing captured batch.
    pub sources: Vec<String>,
}

/// Builds an augmented dataset from the sandbox.
///
/// Captured batches whose method (parameters included) appears in
/// `methods` contribute their perturbed rows, relabeled as
/// [`TrafficClass::Adversarial`]; the original rows keep their labels
/// and order. Selecting nothing is an error so a retraining run can
/// never silently fall back to the unaugmented data.
pub fn build_augmented(
    original: &LabeledDataset,
    sandbox: &Sandbox,
    methods: &[AttackMethod],
) -> Result<AugmentedDataset, Error> {
    if original.is_empty() {
        return Err(Error::EmptyInput("original training data is empty"));
    }
    if methods.is_empty() {
        return Err(Error::EmptyAugmentation(
            "no attack methods selected".into(),
        ));
    }
    let mut rows = original.rows.clone();
    let mut sources = Vec::new();
    for captured in sandbox.captured() {
        if !methods.contains(&captured.batch.method) {
            continue;
        }
        for row in &captured.batch.perturbed {
            let mut row = row.clone();
            row.label = TrafficClass::Adversarial;
            rows.push(row);
        }
        sources.push(format!(
            "seq {} method {} rows {}",
            captured.sequence,
            captured.batch.method.label(),
            captured.batch.len()
        ));
    }
    if sources.is_empty() {
        let labels: Vec<String> = methods.iter().map(AttackMethod::label).collect();
        return Err(Error::EmptyAugmentation(format!(
            "no captured batch matches [{}]",
            labels.join(", ")
        )));
    }
    let mut class_names = original.class_names.clone();
    if !class_names.contains(&TrafficClass::Adversarial) {
        class_names.push(TrafficClass::Adversarial);
    }
    Ok(AugmentedDataset {
        dataset: LabeledDataset {
            rows,
            class_names,
            norm: original.norm.clone(),
        },
        sources,
    })
}

/// Retrains the federated model on augmented data, publishing every
/// partial through the store and chain exactly like the initial
/// round.
pub fn retrain_augmented(
    augmented: &AugmentedDataset,
    k: usize,
    params: &ForestParams,
    seed: u64,
    store: &ContentStore,
    chain: &mut Chain,
) -> Result<FederatedForest, Error> {
    train_with_registry(&augmented.dataset, k, params, seed, store, chain)
}

/// Fraction of a batch's perturbed rows the model handles correctly.
///
/// A model trained with the adversarial label must name perturbed
/// rows `Adversarial`; a model without that class defends by holding
/// on to the true class instead.
pub fn detection_rate(model: &FederatedForest, batch: &AdversarialBatch) -> Result<f64, Error> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch has no detection rate"));
    }
    let knows_adversarial = model.classes.contains(&TrafficClass::Adversarial);
    let hits = batch
        .perturbed
        .iter()
        .filter(|row| {
            let predicted = model.predict(&row.values);
            if knows_adversarial {
                predicted == TrafficClass::Adversarial
            } else {
                predicted == row.label
            }
        })
        .count();
    Ok(hits as f64 / batch.len() as f64)
}

/// Improvement in detection rate, in percentage points.
pub fn recovered_rate(old_rate: f64, new_rate: f64) -> f64 {
    (new_rate - old_rate) * 100.0
}
