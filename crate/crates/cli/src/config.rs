//! Experiment configuration: one TOML file fully determines a run.

use canids_core::attack::AttackMethod;
use canids_core::detector::{DetectorConfig, StatKind};
use canids_core::substitute::{MlpParams, SvmParams};
use canids_core::{Digest, Error, FeatureParams, ForestParams, TrafficClass, TreeParams};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// A parsed config together with the exact text it came from.
///
/// The text is kept so reports can echo it and so the config hash is
/// a digest of what the user actually wrote, not of a re-rendering.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    /// Parsed and flag-adjusted configuration.
    pub cfg: ExperimentConfig,
    /// Raw file contents.
    pub text: String,
    /// SHA-256 of the raw file contents.
    pub hash: Digest,
}

/// Everything a run needs, grouped by pipeline stage.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Directory all artifacts are written under.
    pub output: PathBuf,
    /// Traffic source.
    #[serde(default)]
    pub data: DataConfig,
    /// Windowing over the frame stream.
    #[serde(default)]
    pub window: WindowConfig,
    /// Entropy estimator knobs.
    #[serde(default)]
    pub features: FeatureConfig,
    /// Train/test split.
    #[serde(default)]
    pub split: SplitConfig,
    /// Federated forest shape.
    #[serde(default)]
    pub forest: ForestConfig,
    /// Substitute model training.
    #[serde(default)]
    pub substitute: SubstituteConfig,
    /// Attack methods to craft.
    #[serde(default)]
    pub attack: AttackConfig,
    /// Two-sample detector and its experiments.
    #[serde(default)]
    pub detector: DetectorSection,
    /// Which captured batches feed retraining.
    #[serde(default)]
    pub augment: AugmentConfig,
    /// Per-user evaluation splits.
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

/// Where frames come from: a synthetic profile per class or log files.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// "synthetic" or "files".
    #[serde(default = "default_source")]
    pub source: String,
    /// Frames generated per traffic class when synthetic.
    #[serde(default = "default_frames")]
    pub frames_per_class: usize,
    /// Log files when source = "files"; one entry per capture.
    #[serde(default)]
    pub files: Vec<FileEntry>,
}

/// One labeled capture file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    /// Path to the log.
    pub path: PathBuf,
    /// Class name stamped on every frame of the file.
    pub class: String,
}

fn default_source() -> String {
    "synthetic".into()
}

fn default_frames() -> usize {
    30_000
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: default_source(),
            frames_per_class: default_frames(),
            files: Vec::new(),
        }
    }
}

/// Frame windowing.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    /// Frames per window.
    #[serde(default = "default_window")]
    pub frames: usize,
    /// Frames the window advances between extractions.
    #[serde(default = "default_window")]
    pub stride: usize,
}

fn default_window() -> usize {
    200
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            frames: 200,
            stride: 200,
        }
    }
}

/// Entropy estimator parameters; defaults match the library's.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Histogram bins for Shannon entropy.
    pub shannon_bins: usize,
    /// Template length for sample entropy.
    pub sampen_m: usize,
    /// Tolerance factor for sample entropy.
    pub sampen_r: f64,
    /// Ordinal pattern length for permutation entropy.
    pub perm_order: usize,
    /// Pattern lag for permutation entropy.
    pub perm_delay: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let p = FeatureParams::default();
        FeatureConfig {
            shannon_bins: p.shannon_bins,
            sampen_m: p.sampen_m,
            sampen_r: p.sampen_r,
            perm_order: p.perm_order,
            perm_delay: p.perm_delay,
        }
    }
}

/// Held-out fraction for testing.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of rows held out per class.
    #[serde(default = "default_fraction")]
    pub test_fraction: f64,
}

fn default_fraction() -> f64 {
    0.3
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { test_fraction: 0.3 }
    }
}

/// Federated forest shape.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    /// Miner (shard) count k.
    pub miners: usize,
    /// Trees per miner.
    pub trees: usize,
    /// Depth cap per tree.
    pub max_depth: usize,
    /// Minimum rows per leaf.
    pub min_leaf: usize,
    /// Features drawn per split.
    pub feature_subsample: usize,
    /// Bootstrap-resample each tree's rows.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        let p = ForestParams::default();
        ForestConfig {
            miners: 5,
            trees: p.n_trees,
            max_depth: p.tree.max_depth,
            min_leaf: p.tree.min_leaf,
            feature_subsample: p.tree.feature_subsample,
            bootstrap: p.bootstrap,
        }
    }
}

/// Substitute model training knobs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubstituteConfig {
    /// Hidden width of the perceptron substitute.
    pub mlp_hidden: usize,
    /// Perceptron learning rate.
    pub mlp_lr: f64,
    /// Perceptron epochs.
    pub mlp_epochs: usize,
    /// Perceptron minibatch size.
    pub mlp_batch: usize,
    /// SVM regularization strength.
    pub svm_reg: f64,
    /// SVM epochs.
    pub svm_epochs: usize,
    /// SVM base step size.
    pub svm_lr: f64,
}

impl Default for SubstituteConfig {
    fn default() -> Self {
        let mlp = MlpParams::default();
        let svm = SvmParams::default();
        SubstituteConfig {
            mlp_hidden: mlp.hidden,
            mlp_lr: mlp.lr,
            mlp_epochs: mlp.epochs,
            mlp_batch: mlp.batch,
            svm_reg: svm.reg,
            svm_epochs: svm.epochs,
            svm_lr: svm.lr,
        }
    }
}

/// Attack methods, written compactly: "fgsm0.36", "jsma", "svm", "dt0.05".
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Methods crafted against the test rows, in order.
    pub methods: Vec<String>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            methods: vec![
                "fgsm0.36".into(),
                "svm".into(),
                "jsma".into(),
                "dt".into(),
            ],
        }
    }
}

/// Detector statistic plus its two scan experiments.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    /// "mmd" or "energy".
    pub statistic: String,
    /// Permutations for the null distribution.
    pub permutations: usize,
    /// Significance level.
    pub alpha: f64,
    /// Test all perturbed rows as one pool instead of per method.
    pub pool_batches: bool,
    /// Candidate sizes for the minimal-sample-size scan.
    pub sizes: Vec<usize>,
    /// Trials per probed size.
    pub size_trials: usize,
    /// Rejection fraction a size must reach to count as detected.
    pub size_threshold: f64,
    /// Benign proportions for the mixture scan.
    pub proportions: Vec<f64>,
    /// Candidate size per mixture trial.
    pub mixture_size: usize,
    /// Trials per mixture proportion.
    pub mixture_trials: usize,
    /// Attack supplying the adversarial pool of the mixture scan.
    pub mixture_method: String,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            statistic: "mmd".into(),
            permutations: 1000,
            alpha: 0.05,
            pool_batches: false,
            sizes: vec![10, 20, 30, 50, 75, 100],
            size_trials: 10,
            size_threshold: 0.9,
            proportions: (0..=10).map(|i| i as f64 / 10.0).collect(),
            mixture_size: 50,
            mixture_trials: 10,
            mixture_method: "fgsm0.5".into(),
        }
    }
}

/// Augmentation selection and retraining shape.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Captured methods folded into retraining.
    pub methods: Vec<String>,
    /// Miner count for retraining; defaults to the forest's.
    pub miners: Option<usize>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            methods: vec!["fgsm0.36".into(), "svm".into()],
            miners: None,
        }
    }
}

/// Per-user evaluation splits.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// User counts to split the evaluation pools across.
    pub users: Vec<usize>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig { users: vec![5] }
    }
}

/// Accumulates violation messages so validation reports everything
/// wrong in one pass.
struct Violations(Vec<String>);

impl Violations {
    fn check(&mut self, ok: bool, msg: String) {
        if !ok {
            self.0.push(msg);
        }
    }

    fn push(&mut self, msg: String) {
        self.0.push(msg);
    }
}

impl ExperimentConfig {
    /// Checks every invariant and returns all violations at once.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut bad = Violations(Vec::new());

        bad.check(
            !self.output.as_os_str().is_empty(),
            "output: directory must be named".into(),
        );

        match self.data.source.as_str() {
            "synthetic" => bad.check(
                self.data.frames_per_class >= self.window.frames,
                format!(
                    "data: {} frames per class cannot fill a {}-frame window",
                    self.data.frames_per_class, self.window.frames
                ),
            ),
            "files" => {
                bad.check(
                    !self.data.files.is_empty(),
                    "data: source \"files\" lists no files".into(),
                );
                for (i, entry) in self.data.files.iter().enumerate() {
                    bad.check(
                        entry.path.exists(),
                        format!("data.files[{i}]: {} does not exist", entry.path.display()),
                    );
                    match TrafficClass::parse(&entry.class) {
                        Ok(TrafficClass::Adversarial) => bad.push(format!(
                            "data.files[{i}]: Adversarial is not a capture class"
                        )),
                        Ok(_) => {}
                        Err(_) => bad.push(format!(
                            "data.files[{i}]: unknown class {:?}",
                            entry.class
                        )),
                    }
                }
            }
            other => bad.push(format!("data: unknown source {other:?}")),
        }

        bad.check(self.window.frames >= 2, "window: needs at least 2 frames".into());
        bad.check(self.window.stride >= 1, "window: stride must be positive".into());
        if let Err(e) = self.feature_params().validate() {
            bad.push(format!("features: {e}"));
        }
        bad.check(
            self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0,
            format!(
                "split: test_fraction {} outside (0, 1)",
                self.split.test_fraction
            ),
        );
        bad.check(self.forest.miners >= 1, "forest: needs at least one miner".into());
        if let Err(e) = self.forest_params().validate() {
            bad.push(format!("forest: {e}"));
        }
        bad.check(self.substitute.mlp_hidden >= 1, "substitute: zero-width perceptron".into());
        bad.check(
            self.substitute.mlp_lr > 0.0 && self.substitute.mlp_lr.is_finite(),
            "substitute: mlp_lr must be positive".into(),
        );
        bad.check(self.substitute.mlp_epochs >= 1, "substitute: mlp_epochs must be positive".into());
        bad.check(self.substitute.mlp_batch >= 1, "substitute: mlp_batch must be positive".into());
        bad.check(
            self.substitute.svm_reg >= 0.0 && self.substitute.svm_reg.is_finite(),
            "substitute: svm_reg must be non-negative".into(),
        );
        bad.check(self.substitute.svm_epochs >= 1, "substitute: svm_epochs must be positive".into());
        bad.check(
            self.substitute.svm_lr > 0.0 && self.substitute.svm_lr.is_finite(),
            "substitute: svm_lr must be positive".into(),
        );

        bad.check(!self.attack.methods.is_empty(), "attack: no methods listed".into());
        for text in &self.attack.methods {
            if let Err(msg) = validate_method(text) {
                bad.push(format!("attack: {msg}"));
            }
        }

        if StatKind::parse(&self.detector.statistic).is_none() {
            bad.push(format!(
                "detector: unknown statistic {:?}",
                self.detector.statistic
            ));
        }
        bad.check(self.detector.permutations >= 1, "detector: needs permutations".into());
        bad.check(
            self.detector.alpha > 0.0 && self.detector.alpha < 1.0,
            format!("detector: alpha {} outside (0, 1)", self.detector.alpha),
        );
        bad.check(!self.detector.sizes.is_empty(), "detector: no sizes to scan".into());
        bad.check(
            self.detector.sizes.iter().all(|&s| s >= 1),
            "detector: sizes must be positive".into(),
        );
        bad.check(self.detector.size_trials >= 1, "detector: size_trials must be positive".into());
        bad.check(
            self.detector.size_threshold > 0.0 && self.detector.size_threshold <= 1.0,
            format!(
                "detector: size_threshold {} outside (0, 1]",
                self.detector.size_threshold
            ),
        );
        bad.check(!self.detector.proportions.is_empty(), "detector: no mixture proportions".into());
        bad.check(
            self.detector
                .proportions
                .iter()
                .all(|&p| (0.0..=1.0).contains(&p)),
            "detector: proportions must lie in [0, 1]".into(),
        );
        bad.check(self.detector.mixture_size >= 1, "detector: mixture_size must be positive".into());
        bad.check(
            self.detector.mixture_trials >= 1,
            "detector: mixture_trials must be positive".into(),
        );
        if let Err(msg) = validate_method(&self.detector.mixture_method) {
            bad.push(format!("detector: mixture_method: {msg}"));
        }

        bad.check(!self.augment.methods.is_empty(), "augment: no methods selected".into());
        for text in &self.augment.methods {
            match validate_method(text) {
                Err(msg) => bad.push(format!("augment: {msg}")),
                Ok(method) => {
                    let attacked = self
                        .attack
                        .methods
                        .iter()
                        .any(|t| AttackMethod::parse(t).ok().as_ref() == Some(&method));
                    bad.check(
                        attacked,
                        format!("augment: {text:?} is not among the attack methods"),
                    );
                }
            }
        }
        if let Some(k) = self.augment.miners {
            bad.check(k >= 1, "augment: miners must be positive".into());
        }

        bad.check(!self.evaluate.users.is_empty(), "evaluate: no user counts".into());
        bad.check(
            self.evaluate.users.iter().all(|&u| u >= 1),
            "evaluate: user counts must be positive".into(),
        );

        if bad.0.is_empty() {
            Ok(())
        } else {
            Err(bad.0)
        }
    }

    /// Entropy estimator parameters.
    pub fn feature_params(&self) -> FeatureParams {
        FeatureParams {
            shannon_bins: self.features.shannon_bins,
            sampen_m: self.features.sampen_m,
            sampen_r: self.features.sampen_r,
            perm_order: self.features.perm_order,
            perm_delay: self.features.perm_delay,
        }
    }

    /// Forest training parameters.
    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.forest.trees,
            bootstrap: self.forest.bootstrap,
            tree: TreeParams {
                max_depth: self.forest.max_depth,
                min_leaf: self.forest.min_leaf,
                feature_subsample: self.forest.feature_subsample,
            },
        }
    }

    /// Perceptron training parameters.
    pub fn mlp_params(&self) -> MlpParams {
        MlpParams {
            hidden: self.substitute.mlp_hidden,
            lr: self.substitute.mlp_lr,
            epochs: self.substitute.mlp_epochs,
            batch: self.substitute.mlp_batch,
        }
    }

    /// SVM training parameters.
    pub fn svm_params(&self) -> SvmParams {
        SvmParams {
            reg: self.substitute.svm_reg,
            epochs: self.substitute.svm_epochs,
            lr: self.substitute.svm_lr,
        }
    }

    /// Parsed attack methods, in config order.
    pub fn attack_methods(&self) -> Result<Vec<AttackMethod>, Error> {
        self.attack
            .methods
            .iter()
            .map(|t| AttackMethod::parse(t))
            .collect()
    }

    /// Parsed augmentation selection.
    pub fn augment_methods(&self) -> Result<Vec<AttackMethod>, Error> {
        self.augment
            .methods
            .iter()
            .map(|t| AttackMethod::parse(t))
            .collect()
    }

    /// Miner count used for retraining.
    pub fn augment_miners(&self) -> usize {
        self.augment.miners.unwrap_or(self.forest.miners)
    }

    /// Detector configuration.
    pub fn detector_config(&self) -> Result<DetectorConfig, Error> {
        let kind = StatKind::parse(&self.detector.statistic).ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown statistic {:?}",
                self.detector.statistic
            ))
        })?;
        Ok(DetectorConfig {
            kind,
            n_permutations: self.detector.permutations,
            alpha: self.detector.alpha,
            ..DetectorConfig::default()
        })
    }
}

/// Parses a method string and checks its parameter range, mirroring
/// the constraints the crafting routines enforce at run time.
fn validate_method(text: &str) -> Result<AttackMethod, String> {
    let method =
        AttackMethod::parse(text).map_err(|_| format!("unknown attack method {text:?}"))?;
    let ok = match method {
        AttackMethod::Fgsm { epsilon } => epsilon.is_finite() && epsilon >= 0.0,
        AttackMethod::Jsma { theta, .. } => theta.is_finite() && theta > 0.0,
        AttackMethod::Svm { lambda } => lambda.is_finite() && lambda > 0.0,
        AttackMethod::Dt { step } => step.is_finite() && step > 0.0 && step <= 1.0,
    };
    if ok {
        Ok(method)
    } else {
        Err(format!("parameter out of range in {text:?}"))
    }
}

/// Reads, parses, and flag-adjusts a config file.
///
/// Violations are returned as a list so the user sees every problem in
/// one pass, not one per invocation.
pub fn load_config(
    path: &Path,
    output_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<LoadedConfig, Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
    let hash = Digest::of(text.as_bytes());
    let mut cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| vec![format!("config does not parse: {e}")])?;
    if let Some(out) = output_override {
        cfg.output = out.to_path_buf();
    }
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(LoadedConfig { cfg, text, hash })
}
