//! Stage runners. Every stage is a pure function of the config: it
//! recomputes what it needs from the master seed and writes only its
//! own artifacts, so subcommands compose through the config file
//! rather than by parsing each other's outputs.

use crate::config::LoadedConfig;
use crate::manifest;
use canids_core::attack::{
    craft_batch, save_batch_csv, transferability_rate, AttackMethod, SubstituteModel,
};
use canids_core::augment::{build_augmented, detection_rate, recovered_rate, Sandbox};
use canids_core::detector::{min_sample_size, two_sample_test, DetectionVerdict};
use canids_core::features::{apply_norm, build_dataset, normalize, save_feature_csv};
use canids_core::forest::{train_federated, train_tree, Metric};
use canids_core::ingest::{generate_synthetic, load_can_log, save_can_log, TrafficProfile};
use canids_core::registry::{train_with_registry, Chain, ContentStore};
use canids_core::report::{confusion, metrics, per_user_eval, render_report};
use canids_core::seeding::derive_seed;
use canids_core::sig6;
use canids_core::substitute::{train_mlp, train_svm, MlpSubstitute, SvmSubstitute};
use canids_core::{
    AdversarialBatch, CanLog, DecisionTree, Error, FederatedForest, LabeledDataset,
    TrafficClass, TreeParams, FEATURE_DIM,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One pipeline stage, named like its subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Generate synthetic logs.
    Synth,
    /// Load and summarize the traffic source.
    Ingest,
    /// Extract and persist feature datasets.
    Features,
    /// Train the federated model through the registry.
    Train,
    /// Craft adversarial batches and measure transfer.
    Attack,
    /// Run the two-sample detector and its scans.
    Detect,
    /// Capture, augment, retrain.
    Augment,
    /// Reports and per-user splits.
    Evaluate,
    /// Everything above, in order.
    Pipeline,
}

impl Stage {
    const PIPELINE_ORDER: [Stage; 8] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Features,
        Stage::Train,
        Stage::Attack,
        Stage::Detect,
        Stage::Augment,
        Stage::Evaluate,
    ];
}

/// Executes stages against one config, caching intermediate products
/// so a `pipeline` run computes each only once.
pub struct Runner {
    loaded: LoadedConfig,
    logs: Option<Vec<CanLog>>,
    data: Option<(LabeledDataset, LabeledDataset)>,
    store: Option<ContentStore>,
    chain: Option<Chain>,
    baseline: Option<FederatedForest>,
    mlp: Option<MlpSubstitute>,
    svm: Option<SvmSubstitute>,
    tree: Option<DecisionTree>,
    batches: Option<Vec<(AttackMethod, AdversarialBatch)>>,
    verdicts: Option<Vec<DetectionVerdict>>,
    hardened: Option<FederatedForest>,
}

impl Runner {
    /// Wraps a validated config.
    pub fn new(loaded: LoadedConfig) -> Runner {
        Runner {
            loaded,
            logs: None,
            data: None,
            store: None,
            chain: None,
            baseline: None,
            mlp: None,
            svm: None,
            tree: None,
            batches: None,
            verdicts: None,
            hardened: None,
        }
    }

    fn out(&self) -> &Path {
        &self.loaded.cfg.output
    }

    fn seed(&self) -> u64 {
        self.loaded.cfg.seed
    }

    fn write_artifact(&self, rel: &str, text: &str) -> Result<(), Error> {
        let path = self.out().join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, text)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    /// Runs one stage and refreshes the manifest.
    pub fn run(&mut self, stage: Stage) -> Result<(), Error> {
        std::fs::create_dir_all(self.out())?;
        match stage {
            Stage::Synth => self.stage_synth()?,
            Stage::Ingest => self.stage_ingest()?,
            Stage::Features => self.stage_features()?,
            Stage::Train => self.stage_train()?,
            Stage::Attack => self.stage_attack()?,
            Stage::Detect => self.stage_detect()?,
            Stage::Augment => self.stage_augment()?,
            Stage::Evaluate => self.stage_evaluate()?,
            Stage::Pipeline => {
                for s in Stage::PIPELINE_ORDER {
                    if s == Stage::Synth && self.loaded.cfg.data.source != "synthetic" {
                        continue;
                    }
                    self.run(s)?;
                }
                return Ok(());
            }
        }
        let path = manifest::write(self.out(), &self.loaded.hash, self.seed())?;
        println!("wrote {}", path.display());
        Ok(())
    }

    /// Verifies chain structure and store contents; read-only.
    pub fn registry_verify(&self) -> Result<(), Error> {
        let store = ContentStore::open(self.out().join("registry/store"))?;
        let chain = Chain::load(self.out().join("registry/chain.txt"))?;
        chain.verify_with_store(&store)?;
        println!("registry ok: {} blocks", chain.len());
        Ok(())
    }

    /// Prints the chain; read-only.
    pub fn registry_show(&self) -> Result<(), Error> {
        let chain = Chain::load(self.out().join("registry/chain.txt"))?;
        print!("{}", chain.encode());
        Ok(())
    }

    // Cached intermediates. Each ensure_* is idempotent; stages call
    // the deepest one they need.

    fn ensure_logs(&mut self) -> Result<(), Error> {
        if self.logs.is_some() {
            return Ok(());
        }
        let cfg = &self.loaded.cfg;
        let logs = if cfg.data.source == "synthetic" {
            TrafficClass::TRAFFIC
                .iter()
                .map(|&class| {
                    let profile = TrafficProfile::for_class(class)?;
                    generate_synthetic(
                        &profile,
                        cfg.data.frames_per_class,
                        derive_seed(cfg.seed, &format!("synth/{}", class.name())),
                    )
                })
                .collect::<Result<Vec<_>, Error>>()?
        } else {
            cfg.data
                .files
                .iter()
                .map(|entry| {
                    let class = TrafficClass::parse(&entry.class)?;
                    load_can_log(&entry.path, class)
                })
                .collect::<Result<Vec<_>, Error>>()?
        };
        self.logs = Some(logs);
        Ok(())
    }

    fn ensure_data(&mut self) -> Result<(), Error> {
        if self.data.is_some() {
            return Ok(());
        }
        self.ensure_logs()?;
        let cfg = &self.loaded.cfg;
        let raw = build_dataset(
            self.logs.as_ref().unwrap(),
            cfg.window.frames,
            cfg.window.stride,
            &cfg.feature_params(),
        )?;
        let (train_raw, test_raw) =
            raw.stratified_split(cfg.split.test_fraction, derive_seed(cfg.seed, "split"))?;
        let train = normalize(&train_raw)?;
        let norm = train.norm.clone().expect("normalize sets the state");
        let test = apply_norm(&test_raw, &norm);
        self.data = Some((train, test));
        Ok(())
    }

    fn ensure_baseline(&mut self) -> Result<(), Error> {
        if self.baseline.is_some() {
            return Ok(());
        }
        self.ensure_data()?;
        let cfg = &self.loaded.cfg;
        let store = ContentStore::open(self.out().join("registry/store"))?;
        let mut chain = Chain::new();
        let train = &self.data.as_ref().unwrap().0;
        let model = train_with_registry(
            train,
            cfg.forest.miners,
            &cfg.forest_params(),
            derive_seed(cfg.seed, "train"),
            &store,
            &mut chain,
        )?;
        chain.save(self.out().join("registry/chain.txt"))?;
        self.store = Some(store);
        self.chain = Some(chain);
        self.baseline = Some(model);
        Ok(())
    }

    fn ensure_mlp(&mut self) -> Result<(), Error> {
        if self.mlp.is_some() {
            return Ok(());
        }
        self.ensure_data()?;
        let cfg = &self.loaded.cfg;
        let train = &self.data.as_ref().unwrap().0;
        let mlp = train_mlp(train, &cfg.mlp_params(), derive_seed(cfg.seed, "substitute/mlp"))?;
        self.mlp = Some(mlp);
        Ok(())
    }

    fn ensure_svm(&mut self) -> Result<(), Error> {
        if self.svm.is_some() {
            return Ok(());
        }
        self.ensure_data()?;
        let cfg = &self.loaded.cfg;
        let train = &self.data.as_ref().unwrap().0;
        let svm = train_svm(train, &cfg.svm_params(), derive_seed(cfg.seed, "substitute/svm"))?;
        self.svm = Some(svm);
        Ok(())
    }

    fn ensure_tree(&mut self) -> Result<(), Error> {
        if self.tree.is_some() {
            return Ok(());
        }
        self.ensure_data()?;
        let cfg = &self.loaded.cfg;
        let train = &self.data.as_ref().unwrap().0;
        // The attacker's surrogate is a plain CART: every feature is
        // in play at every split, unlike the forest's subsampled trees.
        let params = TreeParams {
            max_depth: cfg.forest.max_depth,
            min_leaf: cfg.forest.min_leaf,
            feature_subsample: FEATURE_DIM,
        };
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "substitute/tree"));
        let tree = train_tree(&train.rows, &train.class_names, &params, &mut rng)?;
        self.tree = Some(tree);
        Ok(())
    }

    fn ensure_substitutes_for(&mut self, methods: &[AttackMethod]) -> Result<(), Error> {
        for method in methods {
            match method {
                AttackMethod::Fgsm { .. } | AttackMethod::Jsma { .. } => self.ensure_mlp()?,
                AttackMethod::Svm { .. } => self.ensure_svm()?,
                AttackMethod::Dt { .. } => self.ensure_tree()?,
            }
        }
        Ok(())
    }

    fn substitute_for(&self, method: &AttackMethod) -> SubstituteModel<'_> {
        match method {
            AttackMethod::Fgsm { .. } | AttackMethod::Jsma { .. } => {
                SubstituteModel::Mlp(self.mlp.as_ref().expect("ensured"))
            }
            AttackMethod::Svm { .. } => SubstituteModel::Svm(self.svm.as_ref().expect("ensured")),
            AttackMethod::Dt { .. } => SubstituteModel::Tree(self.tree.as_ref().expect("ensured")),
        }
    }

    fn ensure_batches(&mut self) -> Result<(), Error> {
        if self.batches.is_some() {
            return Ok(());
        }
        self.ensure_data()?;
        let methods = self.loaded.cfg.attack_methods()?;
        self.ensure_substitutes_for(&methods)?;
        let test = &self.data.as_ref().unwrap().1;
        let batches = methods
            .into_iter()
            .map(|method| {
                let batch = craft_batch(&method, self.substitute_for(&method), test)?;
                Ok((method, batch))
            })
            .collect::<Result<Vec<_>, Error>>()?;
        self.batches = Some(batches);
        Ok(())
    }

    fn ensure_verdicts(&mut self) -> Result<(), Error> {
        if self.verdicts.is_some() {
            return Ok(());
        }
        self.ensure_batches()?;
        let cfg = &self.loaded.cfg;
        let detector = cfg.detector_config()?;
        let reference = self.data.as_ref().unwrap().0.to_matrix();
        let verdicts = self
            .batches
            .as_ref()
            .unwrap()
            .iter()
            .map(|(method, batch)| {
                two_sample_test(
                    &reference,
                    &batch_matrix(batch),
                    &detector,
                    derive_seed(cfg.seed, &format!("detect/{}", method.label())),
                )
            })
            .collect::<Result<Vec<_>, Error>>()?;
        self.verdicts = Some(verdicts);
        Ok(())
    }

    fn ensure_hardened(&mut self) -> Result<(), Error> {
        if self.hardened.is_some() {
            return Ok(());
        }
        self.ensure_baseline()?;
        self.ensure_verdicts()?;
        let cfg = &self.loaded.cfg;
        let mut sandbox = Sandbox::new();
        let batches = self.batches.as_ref().unwrap();
        let verdicts = self.verdicts.as_ref().unwrap();
        for ((_, batch), verdict) in batches.iter().zip(verdicts) {
            if verdict.reject_h0 {
                sandbox.capture(batch.clone(), verdict.clone())?;
            }
        }
        let train = &self.data.as_ref().unwrap().0;
        let augmented = build_augmented(train, &sandbox, &cfg.augment_methods()?)?;
        let chain_path = self.out().join("registry/chain.txt");
        let chain = self.chain.as_mut().expect("baseline ensured");
        let model = canids_core::augment::retrain_augmented(
            &augmented,
            cfg.augment_miners(),
            &cfg.forest_params(),
            derive_seed(cfg.seed, "augment"),
            self.store.as_ref().expect("baseline ensured"),
            chain,
        )?;
        chain.save(chain_path)?;
        sandbox.write_dir(self.out().join("sandbox"))?;
        println!("wrote {}", self.out().join("sandbox").display());
        self.hardened = Some(model);
        Ok(())
    }

    // Stages.

    fn stage_synth(&mut self) -> Result<(), Error> {
        if self.loaded.cfg.data.source != "synthetic" {
            return Err(Error::InvalidInput(
                "synth requires data.source = \"synthetic\"".into(),
            ));
        }
        self.ensure_logs()?;
        for log in self.logs.as_ref().unwrap() {
            let class = log.frames[0].class;
            let rel = format!("logs/{}.log", class.name());
            let path = self.out().join(&rel);
            std::fs::create_dir_all(path.parent().unwrap())?;
            save_can_log(log, &path)?;
            println!("wrote {}", path.display());
        }
        Ok(())
    }

    fn stage_ingest(&mut self) -> Result<(), Error> {
        self.ensure_logs()?;
        let mut text = String::from("class frames seconds distinct_ids source\n");
        for log in self.logs.as_ref().unwrap() {
            let first = log.frames.first().expect("generator rejects empty logs");
            let last = log.frames.last().unwrap();
            let mut ids: Vec<u32> = log.frames.iter().map(|f| f.can_id).collect();
            ids.sort_unstable();
            ids.dedup();
            writeln!(
                text,
                "{} {} {} {} {}",
                first.class.name(),
                log.frames.len(),
                sig6(last.timestamp - first.timestamp),
                ids.len(),
                log.source
            )
            .unwrap();
        }
        self.write_artifact("ingest_summary.txt", &text)
    }

    fn stage_features(&mut self) -> Result<(), Error> {
        self.ensure_data()?;
        let (train, test) = self.data.as_ref().unwrap();
        save_feature_csv(train, &self.out().join("features_train.csv"))?;
        println!("wrote {}", self.out().join("features_train.csv").display());
        save_feature_csv(test, &self.out().join("features_test.csv"))?;
        println!("wrote {}", self.out().join("features_test.csv").display());
        Ok(())
    }

    fn stage_train(&mut self) -> Result<(), Error> {
        self.ensure_baseline()?;
        let cfg = &self.loaded.cfg;
        let (train, test) = self.data.as_ref().unwrap();
        let model = self.baseline.as_ref().unwrap();
        let central = train_federated(
            train,
            1,
            &cfg.forest_params(),
            derive_seed(cfg.seed, "train"),
        )?;
        let phi = canids_core::forest::phi_loss(model, &central, test, Metric::Accuracy)?;
        let chain = self.chain.as_ref().unwrap();

        let mut text = String::new();
        writeln!(
            text,
            "train rows {} test rows {} miners {}",
            train.len(),
            test.len(),
            cfg.forest.miners
        )
        .unwrap();
        writeln!(text, "federation accuracy gap {}", sig6(phi)).unwrap();
        writeln!(
            text,
            "chain blocks {} head {}",
            chain.len(),
            chain.head_digest().expect("trained chain is non-empty")
        )
        .unwrap();
        text.push('\n');
        text.push_str(&render_report(&metrics(&confusion(model, test)?)));
        self.write_artifact("train_report.txt", &text)
    }

    fn stage_attack(&mut self) -> Result<(), Error> {
        self.ensure_baseline()?;
        self.ensure_batches()?;
        let model = self.baseline.as_ref().unwrap();
        let test = &self.data.as_ref().unwrap().1;
        let clean = model.accuracy(test);

        let mut report = String::from(
            "method,substitute,rows,success_rate,transfer_rate,clean_accuracy,adversarial_accuracy\n",
        );
        for (method, batch) in self.batches.as_ref().unwrap() {
            let rel = format!("attacks/{}.csv", method.label());
            let path = self.out().join(&rel);
            std::fs::create_dir_all(path.parent().unwrap())?;
            save_batch_csv(batch, &path)?;
            println!("wrote {}", path.display());

            writeln!(
                report,
                "{},{},{},{},{},{},{}",
                method.label(),
                batch.substitute_tag,
                batch.len(),
                sig6(batch.success_rate()),
                sig6(transferability_rate(model, batch)?),
                sig6(clean),
                sig6(detection_rate(model, batch)?),
            )
            .unwrap();
        }
        self.write_artifact("attack_report.csv", &report)
    }

    fn stage_detect(&mut self) -> Result<(), Error> {
        self.ensure_verdicts()?;
        let cfg = &self.loaded.cfg;
        let detector = cfg.detector_config()?;
        let (train, test) = self.data.as_ref().unwrap();
        let reference = train.to_matrix();

        let mut report =
            String::from("pool,statistic,value,p_value,alpha,reject,n,m,bandwidth\n");
        let mut push_row = |pool: &str, v: &DetectionVerdict| {
            writeln!(
                report,
                "{pool},{},{},{},{},{},{},{},{}",
                v.kind.name(),
                sig6(v.statistic),
                sig6(v.p_value),
                sig6(v.alpha),
                u8::from(v.reject_h0),
                v.n,
                v.m,
                v.bandwidth.map_or_else(|| "-".to_string(), sig6),
            )
            .unwrap();
        };

        let benign = two_sample_test(
            &reference,
            &test.to_matrix(),
            &detector,
            derive_seed(cfg.seed, "detect/benign"),
        )?;
        push_row("benign", &benign);
        let batches = self.batches.as_ref().unwrap();
        for ((method, _), verdict) in batches.iter().zip(self.verdicts.as_ref().unwrap()) {
            push_row(&method.label(), verdict);
        }
        if cfg.detector.pool_batches {
            let pooled: Vec<Vec<f64>> = batches
                .iter()
                .flat_map(|(_, b)| batch_matrix(b))
                .collect();
            let verdict = two_sample_test(
                &reference,
                &pooled,
                &detector,
                derive_seed(cfg.seed, "detect/pooled"),
            )?;
            push_row("pooled", &verdict);
        }
        self.write_artifact("detect_report.csv", &report)?;

        let mut sizes = String::from("pool,size,trials,rejection_fraction,skipped,minimal\n");
        for (method, batch) in batches {
            let scan = min_sample_size(
                &reference,
                &batch_matrix(batch),
                &cfg.detector.sizes,
                cfg.detector.size_trials,
                cfg.detector.size_threshold,
                &detector,
                derive_seed(cfg.seed, &format!("detect/minsize/{}", method.label())),
            )?;
            let minimal = scan
                .minimal_detected
                .map_or_else(|| "-".to_string(), |s| s.to_string());
            for probe in &scan.probes {
                writeln!(
                    sizes,
                    "{},{},{},{},{},{}",
                    method.label(),
                    probe.size,
                    probe.trials,
                    sig6(probe.rejection_fraction),
                    u8::from(probe.skipped),
                    minimal,
                )
                .unwrap();
            }
        }
        self.write_artifact("min_size.csv", &sizes)?;

        let mixture_method = AttackMethod::parse(&self.loaded.cfg.detector.mixture_method)?;
        self.ensure_substitutes_for(std::slice::from_ref(&mixture_method))?;
        let cfg = &self.loaded.cfg;
        let cached = self
            .batches
            .as_ref()
            .unwrap()
            .iter()
            .find(|(m, _)| *m == mixture_method)
            .map(|(_, b)| b.clone());
        let mixture_batch = match cached {
            Some(batch) => batch,
            None => craft_batch(
                &mixture_method,
                self.substitute_for(&mixture_method),
                &self.data.as_ref().unwrap().1,
            )?,
        };
        let points = canids_core::detector::mixture_test(
            &reference,
            &batch_matrix(&mixture_batch),
            &cfg.detector.proportions,
            cfg.detector.mixture_size,
            cfg.detector.mixture_trials,
            &detector,
            derive_seed(cfg.seed, "detect/mixture"),
        )?;
        let mut mixture = String::from("benign_proportion,acceptance_fraction\n");
        for point in &points {
            writeln!(
                mixture,
                "{},{}",
                sig6(point.proportion),
                sig6(point.acceptance)
            )
            .unwrap();
        }
        self.write_artifact("mixture.csv", &mixture)
    }

    fn stage_augment(&mut self) -> Result<(), Error> {
        self.ensure_hardened()?;
        let baseline = self.baseline.as_ref().unwrap();
        let hardened = self.hardened.as_ref().unwrap();

        let mut report =
            String::from("method,baseline_rate,hardened_rate,recovered_points\n");
        for (method, batch) in self.batches.as_ref().unwrap() {
            let old = detection_rate(baseline, batch)?;
            let new = detection_rate(hardened, batch)?;
            writeln!(
                report,
                "{},{},{},{}",
                method.label(),
                sig6(old),
                sig6(new),
                sig6(recovered_rate(old, new)),
            )
            .unwrap();
        }
        self.write_artifact("augment_report.csv", &report)
    }

    fn stage_evaluate(&mut self) -> Result<(), Error> {
        self.ensure_hardened()?;
        let cfg = &self.loaded.cfg;
        let (_, test) = self.data.as_ref().unwrap();
        let baseline = self.baseline.as_ref().unwrap();
        let hardened = self.hardened.as_ref().unwrap();

        let mut csv = String::from("model,pool,users,user,accuracy,macro_f1\n");
        for (model_name, model) in [("baseline", baseline), ("augmented", hardened)] {
            let mut pools: Vec<(String, Vec<&AdversarialBatch>)> =
                vec![("benign".to_string(), Vec::new())];
            for (method, batch) in self.batches.as_ref().unwrap() {
                pools.push((method.label(), vec![batch]));
            }
            for (pool, batch_refs) in &pools {
                for &n_users in &cfg.evaluate.users {
                    let eval = per_user_eval(
                        model,
                        test,
                        batch_refs,
                        n_users,
                        derive_seed(cfg.seed, &format!("users/{model_name}/{pool}/{n_users}")),
                    )?;
                    for (u, user) in eval.users.iter().enumerate() {
                        writeln!(
                            csv,
                            "{model_name},{pool},{n_users},{u},{},{}",
                            sig6(user.accuracy),
                            sig6(user.macro_f1),
                        )
                        .unwrap();
                    }
                    writeln!(
                        csv,
                        "{model_name},{pool},{n_users},mean,{},{}",
                        sig6(eval.mean_accuracy),
                        sig6(eval.mean_macro_f1),
                    )
                    .unwrap();
                }
            }
        }
        self.write_artifact("per_user.csv", &csv)?;

        let mut text = String::new();
        writeln!(text, "experiment report").unwrap();
        writeln!(text, "config {}", self.loaded.hash).unwrap();
        writeln!(text, "seed {}", cfg.seed).unwrap();
        text.push_str("\nconfig echo:\n");
        for line in self.loaded.text.lines() {
            writeln!(text, "  {line}").unwrap();
        }

        let base_report = metrics(&confusion(baseline, test)?);
        let hard_report = metrics(&confusion(hardened, test)?);
        text.push_str("\nbaseline model on benign test rows:\n");
        text.push_str(&render_report(&base_report));
        text.push_str("\naugmented model on benign test rows:\n");
        text.push_str(&render_report(&hard_report));
        writeln!(
            text,
            "\nbenign macro f1: baseline {} augmented {}",
            sig6(base_report.macro_f1),
            sig6(hard_report.macro_f1)
        )
        .unwrap();

        text.push_str("\nsingle-input detection rates:\n");
        for (method, batch) in self.batches.as_ref().unwrap() {
            let old = detection_rate(baseline, batch)?;
            let new = detection_rate(hardened, batch)?;
            writeln!(
                text,
                "  {} baseline {} augmented {} recovered {}",
                method.label(),
                sig6(old),
                sig6(new),
                sig6(recovered_rate(old, new)),
            )
            .unwrap();
        }
        self.write_artifact("report.txt", &text)
    }
}

fn batch_matrix(batch: &AdversarialBatch) -> Vec<Vec<f64>> {
    batch.perturbed.iter().map(|r| r.values.to_vec()).collect()
}

/// Maps an error to the process exit code contract: 3 for integrity
/// failures (tampered content, broken chain, missing registry
/// objects), 2 for any other runtime failure.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Tamper(_) | Error::ChainBroken { .. } | Error::NotFound(_) => 3,
        _ => 2,
    }
}

/// Convenience for tests: full pipeline against a config file path.
pub fn run_pipeline_file(config: &Path, output: Option<&Path>) -> Result<PathBuf, Error> {
    let loaded = crate::config::load_config(config, output, None)
        .map_err(|v| Error::InvalidInput(v.join("; ")))?;
    let out = loaded.cfg.output.clone();
    Runner::new(loaded).run(Stage::Pipeline)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config;

    fn small_config(dir: &Path, seed: u64) -> PathBuf {
        let path = dir.join("cfg.toml");
        let text = format!(
            "\
seed = {seed}
output = {out:?}

[data]
frames_per_class = 4000

[window]
frames = 200
stride = 100

[forest]
miners = 3

[substitute]
mlp_epochs = 80

[attack]
methods = [\"fgsm0.36\", \"svm\"]

[detector]
permutations = 120
sizes = [10, 20]
size_trials = 4
proportions = [0.0, 0.5, 1.0]
mixture_size = 12
mixture_trials = 3
mixture_method = \"fgsm0.36\"

[augment]
methods = [\"fgsm0.36\", \"svm\"]

[evaluate]
users = [3]
",
            out = dir.join("out"),
        );
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn pipeline_writes_every_expected_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path(), 5);
        let out = run_pipeline_file(&cfg, None).unwrap();

        for rel in [
            "logs/AttackFree.log",
            "logs/DoS.log",
            "logs/Fuzzy.log",
            "logs/Impersonation.log",
            "ingest_summary.txt",
            "features_train.csv",
            "features_test.csv",
            "registry/chain.txt",
            "train_report.txt",
            "attacks/fgsm0.36.csv",
            "attacks/svm.csv",
            "attack_report.csv",
            "detect_report.csv",
            "min_size.csv",
            "mixture.csv",
            "augment_report.csv",
            "per_user.csv",
            "report.txt",
            "manifest.txt",
        ] {
            assert!(out.join(rel).exists(), "{rel} missing");
        }

        let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
        assert!(manifest.contains("train_report.txt"));
        assert!(manifest.contains("registry/chain.txt"));

        let chain = Chain::load(out.join("registry/chain.txt")).unwrap();
        assert_eq!(chain.len(), 6, "3 baseline + 3 augmented blocks");
        let store = ContentStore::open(out.join("registry/store")).unwrap();
        chain.verify_with_store(&store).unwrap();
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path(), 7);
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        run_pipeline_file(&cfg, Some(&out_a)).unwrap();
        run_pipeline_file(&cfg, Some(&out_b)).unwrap();
        let read = |p: &Path| std::fs::read_to_string(p.join("manifest.txt")).unwrap();
        assert_eq!(read(&out_a), read(&out_b));
    }

    #[test]
    fn synth_refuses_file_sources() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("x.log");
        std::fs::write(&log, "0.0 100 8 0001020304050607\n").unwrap();
        let text = format!(
            "\
seed = 3
output = {out:?}
[data]
source = \"files\"
[[data.files]]
path = {log:?}
class = \"DoS\"
",
            out = dir.path().join("out"),
        );
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, text).unwrap();
        let loaded = load_config(&path, None, None).unwrap();
        let err = Runner::new(loaded).run(Stage::Synth).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn registry_verify_flags_tampered_store() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path(), 9);
        let loaded = load_config(&cfg, None, None).unwrap();
        let mut runner = Runner::new(loaded);
        runner.run(Stage::Train).unwrap();
        runner.registry_verify().unwrap();

        let store_dir = runner.out().join("registry/store");
        let blob = std::fs::read_dir(&store_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .next()
            .unwrap();
        let mut bytes = std::fs::read(&blob).unwrap();
        bytes[0] ^= 1;
        std::fs::write(&blob, bytes).unwrap();

        let err = runner.registry_verify().unwrap_err();
        assert_eq!(exit_code(&err), 3);
    }

    #[test]
    fn exit_codes_separate_integrity_from_runtime() {
        assert_eq!(exit_code(&Error::Tamper("x".into())), 3);
        assert_eq!(exit_code(&Error::ChainBroken { index: 0 }), 3);
        assert_eq!(exit_code(&Error::NotFound("x".into())), 3);
        assert_eq!(exit_code(&Error::EmptyInput("x")), 2);
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), 2);
    }
}
