//! Manifest-driven experiment pipeline.
//!
//! A run is `data -> target -> shadows -> score -> attack -> evaluate`. Every
//! stage writes its outputs atomically into the output directory and records a
//! stamp `stamps/<stage>.json` holding its cache key and the SHA-256 of each
//! output file. The first stage's key is the manifest digest (the digest of the
//! manifest's canonical JSON with `output_dir` cleared); each later key chains
//! the previous key with the previous stage's output hashes. On a re-run a
//! stage is loaded from disk instead of recomputed when its stamp carries the
//! current key and every recorded file still hashes to the recorded value.
//!
//! All randomness derives from `master_seed` through
//! [`derive_seed`](crate::digest::derive_seed) with fixed stream tags, so a
//! manifest fully determines every output byte.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{
    aggregate_augmented, baseline_score, curv_lr_score, curv_nll_score, fit_gaussian_pairs, modified_entropy,
    AttackScore, Baseline, BaselineInputs, GaussianPair, Method, ShadowScores,
};
use crate::curvature::{curvature_score, probe_seed, read_jsonl, write_jsonl, CurvatureConfig, ScoreRecord};
use crate::data::{
    apply_transform, gen_gaussian_mixture, load_csv, sample_subset, sample_subset_count, select_lowest_curvature,
    CsvSchema, Dataset, SubsetMask, TransformSpec,
};
use crate::digest::{self, derive_seed};
use crate::error::{Error, Result};
use crate::metrics::{metric_report, roc_curve, write_roc_csv, MetricReport, DEFAULT_FPR_TARGETS};
use crate::nn::{forward_loss, scaled_logit, Example, LayerSizes, MlpParams};
use crate::theory::{empirical_kl_report, fit_bound_curve, FitResult, KlSummary};
use crate::trainer::{accuracy, train_model, train_shadow_ensemble, ShadowEnsemble, TrainHyper};

const SPLIT_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;
const SHADOW_STREAM: u64 = 3;
const REFERENCE_STREAM: u64 = 4;
const SWEEP_STREAM: u64 = 5;

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = digest::to_json_sig17_pretty(value).map_err(|e| Error::json(path, e))?;
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

/// Where the example pool comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Mixture {
        k: usize,
        d: usize,
        per_class: usize,
        separation: f64,
        noise: f64,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Mixture {
                k,
                d,
                per_class,
                separation,
                noise,
                seed,
            } => gen_gaussian_mixture(*k, *d, *per_class, *separation, *noise, *seed),
            DatasetSpec::Csv { path, schema } => load_csv(path, schema),
        }
    }
}

fn default_fraction() -> f64 {
    0.5
}

fn default_transforms() -> Vec<TransformSpec> {
    vec![TransformSpec::Identity]
}

fn default_fpr_targets() -> Vec<f64> {
    DEFAULT_FPR_TARGETS.to_vec()
}

/// One experiment as data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub name: String,
    pub dataset: DatasetSpec,
    /// Full layer widths, input dimension first.
    pub arch: LayerSizes,
    #[serde(default)]
    pub hyper: TrainHyper,
    pub n_shadow_models: usize,
    #[serde(default = "default_fraction")]
    pub subset_fraction: f64,
    #[serde(default)]
    pub curvature: CurvatureConfig,
    pub methods: Vec<Method>,
    #[serde(default = "default_transforms")]
    pub transforms: Vec<TransformSpec>,
    #[serde(default = "default_fpr_targets")]
    pub fpr_targets: Vec<f64>,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.curvature.validate()?;
        if self.n_shadow_models < 2 {
            return Err(Error::invalid("n_shadow_models must be >= 2"));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(Error::invalid("subset_fraction must be in (0, 1]"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("manifest lists no attack methods"));
        }
        if self.transforms.is_empty() {
            return Err(Error::invalid("manifest lists no transforms"));
        }
        for t in &self.transforms {
            t.validate()?;
        }
        if self.fpr_targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::invalid("fpr targets must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Digest of the canonical JSON with `output_dir` cleared.
    pub fn digest(&self) -> String {
        let canonical = Self {
            output_dir: None,
            ..self.clone()
        };
        digest::digest_of(&canonical)
    }
}

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Data,
    Target,
    Shadows,
    Score,
    Attack,
    Evaluate,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Target => "target",
            Stage::Shadows => "shadows",
            Stage::Score => "score",
            Stage::Attack => "attack",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads for shadow training and scoring.
    pub jobs: usize,
    /// Last stage to run.
    pub until: Stage,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            jobs: 1,
            until: Stage::Evaluate,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Stamp {
    cache_key: String,
    outputs: BTreeMap<String, String>,
}

struct Stamps<'a> {
    dir: &'a Path,
    key: String,
}

impl Stamps<'_> {
    fn path(&self, stage: Stage) -> PathBuf {
        self.dir.join("stamps").join(format!("{}.json", stage.as_str()))
    }

    fn advance(&mut self, outputs: &BTreeMap<String, String>) {
        self.key = digest::digest_of(&(&self.key, outputs));
    }

    /// True when `stage` can be loaded from disk; advances the chained key.
    fn is_fresh(&mut self, stage: Stage) -> bool {
        let Ok(stamp) = read_json::<Stamp>(&self.path(stage)) else {
            return false;
        };
        let fresh = stamp.cache_key == self.key
            && stamp
                .outputs
                .iter()
                .all(|(rel, want)| std::fs::read(self.dir.join(rel)).is_ok_and(|b| &digest::sha256_hex(&b) == want));
        if fresh {
            self.advance(&stamp.outputs);
        }
        fresh
    }

    fn record(&mut self, stage: Stage, files: &[PathBuf]) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for rel in files {
            let p = self.dir.join(rel);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            outputs.insert(rel.to_string_lossy().into_owned(), digest::sha256_hex(&bytes));
        }
        write_json_pretty(
            &self.path(stage),
            &Stamp {
                cache_key: self.key.clone(),
                outputs: outputs.clone(),
            },
        )?;
        self.advance(&outputs);
        Ok(())
    }
}

/// Statistic kinds collected for every `(model, example)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StatKind {
    Curvature,
    Loss,
    Logit,
    Mentr,
}

impl StatKind {
    pub const ALL: [StatKind; 4] = [StatKind::Curvature, StatKind::Loss, StatKind::Logit, StatKind::Mentr];

    pub fn as_str(self) -> &'static str {
        match self {
            StatKind::Curvature => "curvature",
            StatKind::Loss => "loss",
            StatKind::Logit => "logit",
            StatKind::Mentr => "mentr",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// One statistic over the shadow ensemble and the target model.
#[derive(Clone, Debug, PartialEq)]
pub struct StatTable {
    pub shadow: ShadowScores,
    pub target: Vec<f64>,
}

/// Every statistic, indexed by [`StatKind`].
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    pub tables: [StatTable; 4],
}

impl Observations {
    pub fn get(&self, kind: StatKind) -> &StatTable {
        &self.tables[kind.index()]
    }
}

/// Transform-averaged `[curvature, loss, logit, mentr]` of one model at one
/// example. Curvature probes come from `probe_seed(cfg.seed, id, model)` and
/// are shared by all transforms of the example.
pub fn observe(
    model: &MlpParams,
    model_digest: &str,
    example: &Example,
    transforms: &[TransformSpec],
    cfg: &CurvatureConfig,
) -> Result<[f64; 4]> {
    let probe_cfg = cfg.with_seed(probe_seed(cfg.seed, example.id, model_digest));
    let mut per: [Vec<f64>; 4] = Default::default();
    for t in transforms {
        let ex = apply_transform(example, t);
        let fwd = forward_loss(model, &ex)?;
        per[0].push(curvature_score(model, &ex, &probe_cfg)?);
        per[1].push(fwd.loss);
        per[2].push(scaled_logit(model, &ex)?);
        per[3].push(modified_entropy(&fwd.probs, ex.y));
    }
    Ok([
        aggregate_augmented(&per[0])?,
        aggregate_augmented(&per[1])?,
        aggregate_augmented(&per[2])?,
        aggregate_augmented(&per[3])?,
    ])
}

fn observe_model(
    model: &MlpParams,
    examples: &[Example],
    transforms: &[TransformSpec],
    cfg: &CurvatureConfig,
) -> Result<Vec<[f64; 4]>> {
    let d = model.digest();
    examples
        .iter()
        .map(|ex| observe(model, &d, ex, transforms, cfg))
        .collect()
}

/// Attack scores for one target model against precomputed observations.
pub fn compute_attacks(
    methods: &[Method],
    obs: &Observations,
    ensemble_ledger: &crate::data::MembershipLedger,
    truth: &SubsetMask,
) -> Result<Vec<AttackScore>> {
    let m = truth.len();
    let needs_curv = methods.iter().any(|x| matches!(x, Method::CurvLr | Method::CurvNll));
    let curv_pairs = if needs_curv {
        Some(fit_gaussian_pairs(
            &obs.get(StatKind::Curvature).shadow,
            ensemble_ledger,
        )?)
    } else {
        None
    };
    let loss = obs.get(StatKind::Loss);
    let logit = obs.get(StatKind::Logit);
    let mentr = obs.get(StatKind::Mentr);
    let curv = obs.get(StatKind::Curvature);

    let mut out = Vec::with_capacity(methods.len() * m);
    for &method in methods {
        for i in 0..m {
            let value = match method {
                Method::CurvLr => curv_lr_score(curv.target[i], &curv_pairs.as_ref().expect("fitted")[i]),
                Method::CurvNll => curv_nll_score(curv.target[i], &curv_pairs.as_ref().expect("fitted")[i]),
                // modified entropy was averaged over transforms already
                Method::SongMentr => -mentr.target[i],
                _ => {
                    let (loss_in, loss_out) = loss.shadow.split(ensemble_ledger, i);
                    let (logit_in, logit_out) = logit.shadow.split(ensemble_ledger, i);
                    let kind = match method {
                        Method::Yeom => Baseline::Yeom,
                        Method::Lira => Baseline::Lira,
                        Method::WatsonOffline => Baseline::WatsonOffline,
                        Method::Sablayrolles => Baseline::Sablayrolles,
                        Method::YeQuantile => Baseline::YeQuantile,
                        _ => unreachable!("handled above"),
                    };
                    baseline_score(
                        kind,
                        &BaselineInputs {
                            loss: loss.target[i],
                            logit: logit.target[i],
                            logit_in: &logit_in,
                            logit_out: &logit_out,
                            loss_in: &loss_in,
                            loss_out: &loss_out,
                            ..Default::default()
                        },
                    )?
                }
            };
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("{method} score of example {i}")));
            }
            out.push(AttackScore {
                example_id: i,
                method,
                value,
                is_member_truth: truth.contains(i),
            });
        }
    }
    Ok(out)
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub name: String,
    pub manifest_digest: String,
    pub dataset_digest: String,
    pub n_members: usize,
    pub n_nonmembers: usize,
    pub target_train_accuracy: f64,
    pub target_heldout_accuracy: f64,
    /// Equal-variance KL between fitted IN/OUT curvature Gaussians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature_kl: Option<KlSummary>,
    pub methods: Vec<MetricReport>,
}

/// Member and nonmember scores of one method.
pub fn split_scores(attacks: &[AttackScore], method: Method) -> (Vec<f64>, Vec<f64>) {
    let mut members = Vec::new();
    let mut nonmembers = Vec::new();
    for a in attacks.iter().filter(|a| a.method == method) {
        if a.is_member_truth {
            members.push(a.value);
        } else {
            nonmembers.push(a.value);
        }
    }
    (members, nonmembers)
}

/// Everything a completed (or partially completed) run produced.
#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub manifest_digest: String,
    pub dataset: Dataset,
    pub target_members: SubsetMask,
    pub target: Option<MlpParams>,
    pub ensemble: Option<ShadowEnsemble>,
    pub observations: Option<Observations>,
    pub curvature_pairs: Option<Vec<GaussianPair>>,
    pub attacks: Option<Vec<AttackScore>>,
    pub metrics: Option<MetricsDoc>,
}

#[derive(Serialize, Deserialize)]
struct DataDoc {
    dataset: Dataset,
    dataset_digest: String,
    target_members: SubsetMask,
}

fn stage<T>(s: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: s.as_str(),
        source: Box::new(e),
    })
}

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs the manifest's experiment into `opts.out_dir`.
pub fn run_experiment(manifest: &ExperimentManifest, opts: &RunOptions) -> Result<RunOutputs> {
    stage(Stage::Data, manifest.validate())?;
    let key = manifest.digest();
    let dataset = {
        let mut stamps = Stamps {
            dir: &opts.out_dir,
            key: key.clone(),
        };
        if stamps.is_fresh(Stage::Data) {
            None
        } else {
            Some(stage(Stage::Data, manifest.dataset.load())?)
        }
    };
    run_with_dataset(manifest, dataset, &key, opts)
}

/// Runs the pipeline on an explicit pool. `dataset` may be `None` only when
/// the data stage is cached under `cache_key`.
pub fn run_with_dataset(
    manifest: &ExperimentManifest,
    dataset: Option<Dataset>,
    cache_key: &str,
    opts: &RunOptions,
) -> Result<RunOutputs> {
    stage(Stage::Data, manifest.validate())?;
    let dir = opts.out_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut stamps = Stamps {
        dir,
        key: cache_key.to_string(),
    };
    write_json_pretty(&dir.join("manifest.json"), manifest)?;

    // data
    let data_path = PathBuf::from("dataset.json");
    let (dataset, target_members) = if stamps.is_fresh(Stage::Data) {
        let doc: DataDoc = stage(Stage::Data, read_json(&dir.join(&data_path)))?;
        (doc.dataset, doc.target_members)
    } else {
        let dataset = stage(
            Stage::Data,
            dataset.ok_or_else(|| Error::invalid("no dataset supplied and no cached data stage")),
        )?;
        let members = stage(
            Stage::Data,
            (|| {
                if dataset.d != manifest.arch.input_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: manifest.arch.input_dim(),
                        got: dataset.d,
                    });
                }
                if dataset.k > manifest.arch.n_classes() {
                    return Err(Error::InvalidArch(format!(
                        "{} outputs for {} classes",
                        manifest.arch.n_classes(),
                        dataset.k
                    )));
                }
                sample_subset(&dataset, 0.5, derive_seed(manifest.master_seed, SPLIT_STREAM))
            })(),
        )?;
        let doc = DataDoc {
            dataset_digest: dataset.digest(),
            dataset,
            target_members: members,
        };
        stage(Stage::Data, write_json_pretty(&dir.join(&data_path), &doc))?;
        stage(Stage::Data, doc.dataset.write_csv(&dir.join("dataset.csv")))?;
        stage(
            Stage::Data,
            stamps.record(Stage::Data, &[data_path.clone(), "dataset.csv".into()]),
        )?;
        (doc.dataset, doc.target_members)
    };
    let mut out = RunOutputs {
        manifest_digest: cache_key.to_string(),
        dataset,
        target_members,
        target: None,
        ensemble: None,
        observations: None,
        curvature_pairs: None,
        attacks: None,
        metrics: None,
    };
    if opts.until == Stage::Data {
        return Ok(out);
    }

    // target
    let target_path = PathBuf::from("target/model.json");
    let target = if stamps.is_fresh(Stage::Target) {
        stage(Stage::Target, MlpParams::load_json(&dir.join(&target_path)))?
    } else {
        let t = stage(
            Stage::Target,
            train_model(
                &out.dataset,
                &out.target_members,
                &manifest.arch,
                &manifest.hyper,
                derive_seed(manifest.master_seed, TARGET_STREAM),
            ),
        )?;
        stage(Stage::Target, write_atomic(&dir.join(&target_path), &t.to_json_bytes()))?;
        stage(Stage::Target, stamps.record(Stage::Target, &[target_path]))?;
        t
    };
    out.target = Some(target);
    if opts.until == Stage::Target {
        return Ok(out);
    }

    // shadows
    let shadow_dir = dir.join("shadows");
    let ensemble = if stamps.is_fresh(Stage::Shadows) {
        stage(Stage::Shadows, ShadowEnsemble::load_dir(&shadow_dir))?
    } else {
        let e = stage(
            Stage::Shadows,
            in_pool(opts.jobs, || {
                train_shadow_ensemble(
                    &out.dataset,
                    manifest.n_shadow_models,
                    manifest.subset_fraction,
                    &manifest.arch,
                    &manifest.hyper,
                    derive_seed(manifest.master_seed, SHADOW_STREAM),
                )
            })
            .and_then(|r| r),
        )?;
        stage(Stage::Shadows, e.save_dir(&shadow_dir))?;
        let mut files: Vec<PathBuf> = vec!["shadows/ledger.json".into()];
        files.extend((0..e.models.len()).map(|j| PathBuf::from(format!("shadows/model_{j}.json"))));
        stage(Stage::Shadows, stamps.record(Stage::Shadows, &files))?;
        e
    };
    out.ensemble = Some(ensemble);
    if opts.until == Stage::Shadows {
        return Ok(out);
    }

    // score
    let ensemble = out.ensemble.as_ref().expect("set above");
    let target = out.target.as_ref().expect("set above");
    let scores_path = PathBuf::from("scores.jsonl");
    let obs = if stamps.is_fresh(Stage::Score) {
        stage(
            Stage::Score,
            load_observations(&dir.join(&scores_path), ensemble, target, out.dataset.len()),
        )?
    } else {
        let obs = stage(
            Stage::Score,
            score_all(ensemble, target, &out.dataset.examples, manifest, opts.jobs),
        )?;
        stage(
            Stage::Score,
            write_observations(&dir.join(&scores_path), &obs, ensemble, target, manifest),
        )?;
        stage(Stage::Score, stamps.record(Stage::Score, &[scores_path]))?;
        obs
    };
    out.observations = Some(obs);
    if opts.until == Stage::Score {
        return Ok(out);
    }

    // attack
    let obs = out.observations.as_ref().expect("set above");
    if manifest
        .methods
        .iter()
        .any(|x| matches!(x, Method::CurvLr | Method::CurvNll))
        || manifest.methods.is_empty()
    {
        out.curvature_pairs = Some(stage(
            Stage::Attack,
            fit_gaussian_pairs(&obs.get(StatKind::Curvature).shadow, &ensemble.ledger),
        )?);
    }
    let attacks_path = PathBuf::from("attacks.jsonl");
    let attacks = if stamps.is_fresh(Stage::Attack) {
        stage(Stage::Attack, read_jsonl::<AttackScore>(&dir.join(&attacks_path)))?
    } else {
        let a = stage(
            Stage::Attack,
            compute_attacks(&manifest.methods, obs, &ensemble.ledger, &out.target_members),
        )?;
        stage(Stage::Attack, write_jsonl(&dir.join(&attacks_path), &a))?;
        stage(Stage::Attack, stamps.record(Stage::Attack, &[attacks_path]))?;
        a
    };
    out.attacks = Some(attacks);
    if opts.until == Stage::Attack {
        return Ok(out);
    }

    // evaluate
    let metrics = stage(Stage::Evaluate, evaluate(manifest, cache_key, &out))?;
    let mut files = vec![PathBuf::from("metrics.json")];
    stage(Stage::Evaluate, write_json_pretty(&dir.join("metrics.json"), &metrics))?;
    for method in &manifest.methods {
        let (mem, non) = split_scores(out.attacks.as_ref().expect("set above"), *method);
        let curve = stage(Stage::Evaluate, roc_curve(&mem, &non))?;
        let rel = PathBuf::from(format!("roc_{method}.csv"));
        stage(Stage::Evaluate, write_roc_csv(&curve, &dir.join(&rel)))?;
        files.push(rel);
    }
    stage(Stage::Evaluate, stamps.record(Stage::Evaluate, &files))?;
    out.metrics = Some(metrics);
    Ok(out)
}

fn evaluate(manifest: &ExperimentManifest, cache_key: &str, out: &RunOutputs) -> Result<MetricsDoc> {
    let attacks = out.attacks.as_ref().expect("attack stage ran");
    let target = out.target.as_ref().expect("target stage ran");
    let members = out.dataset.select(&out.target_members);
    let heldout = out.dataset.select(&out.target_members.complement());
    let mut methods = Vec::with_capacity(manifest.methods.len());
    for method in &manifest.methods {
        let (mem, non) = split_scores(attacks, *method);
        let curve = roc_curve(&mem, &non)?;
        methods.push(metric_report(method.as_str(), &curve, &manifest.fpr_targets)?);
    }
    Ok(MetricsDoc {
        name: manifest.name.clone(),
        manifest_digest: cache_key.to_string(),
        dataset_digest: out.dataset.digest(),
        n_members: members.len(),
        n_nonmembers: heldout.len(),
        target_train_accuracy: accuracy(target, &members),
        target_heldout_accuracy: accuracy(target, &heldout),
        curvature_kl: match &out.curvature_pairs {
            Some(p) => Some(empirical_kl_report(p)?),
            None => None,
        },
        methods,
    })
}

fn score_all(
    ensemble: &ShadowEnsemble,
    target: &MlpParams,
    examples: &[Example],
    manifest: &ExperimentManifest,
    jobs: usize,
) -> Result<Observations> {
    let models: Vec<&MlpParams> = ensemble.models.iter().chain(std::iter::once(target)).collect();
    let per_model: Vec<Result<Vec<[f64; 4]>>> = in_pool(jobs, || {
        models
            .par_iter()
            .map(|m| observe_model(m, examples, &manifest.transforms, &manifest.curvature))
            .collect()
    })?;
    let per_model = per_model.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(tables_from_rows(&per_model))
}

/// Splits per-model rows (shadows first, target last) into statistic tables.
fn tables_from_rows(per_model: &[Vec<[f64; 4]>]) -> Observations {
    let (shadow_rows, target_row) = per_model.split_at(per_model.len() - 1);
    let table = |k: usize| StatTable {
        shadow: ShadowScores {
            values: shadow_rows.iter().map(|r| r.iter().map(|o| o[k]).collect()).collect(),
        },
        target: target_row[0].iter().map(|o| o[k]).collect(),
    };
    Observations {
        tables: [table(0), table(1), table(2), table(3)],
    }
}

fn stat_config_digest(kind: StatKind, manifest: &ExperimentManifest) -> String {
    match kind {
        StatKind::Curvature => digest::digest_of(&(&manifest.curvature, &manifest.transforms)),
        _ => digest::digest_of(&(kind.as_str(), &manifest.transforms)),
    }
}

fn write_observations(
    path: &Path,
    obs: &Observations,
    ensemble: &ShadowEnsemble,
    target: &MlpParams,
    manifest: &ExperimentManifest,
) -> Result<()> {
    let mut digests = ensemble.model_digests();
    digests.push(target.digest());
    let cfg_digests: Vec<String> = StatKind::ALL.iter().map(|k| stat_config_digest(*k, manifest)).collect();
    let mut records = Vec::new();
    for (row, model_digest) in digests.iter().enumerate() {
        let m = obs.tables[0].target.len();
        for i in 0..m {
            for kind in StatKind::ALL {
                let t = obs.get(kind);
                let value = if row < ensemble.models.len() {
                    t.shadow.values[row][i]
                } else {
                    t.target[i]
                };
                records.push(ScoreRecord {
                    example_id: i,
                    model_digest: model_digest.clone(),
                    kind: kind.as_str().to_string(),
                    value,
                    config_digest: cfg_digests[kind.index()].clone(),
                });
            }
        }
    }
    write_jsonl(path, &records)
}

fn load_observations(path: &Path, ensemble: &ShadowEnsemble, target: &MlpParams, m: usize) -> Result<Observations> {
    let records: Vec<ScoreRecord> = read_jsonl(path)?;
    let mut digests = ensemble.model_digests();
    digests.push(target.digest());
    let mut rows_of: HashMap<&str, Vec<usize>> = HashMap::new();
    for (row, d) in digests.iter().enumerate() {
        rows_of.entry(d.as_str()).or_default().push(row);
    }
    let mut per_model = vec![vec![[f64::NAN; 4]; m]; digests.len()];
    for r in &records {
        let kind = StatKind::ALL
            .into_iter()
            .find(|k| k.as_str() == r.kind)
            .ok_or_else(|| Error::invalid(format!("unknown score kind `{}`", r.kind)))?;
        let rows = rows_of
            .get(r.model_digest.as_str())
            .ok_or_else(|| Error::invalid(format!("score for unknown model {}", r.model_digest)))?;
        if r.example_id >= m {
            return Err(Error::invalid(format!("score for unknown example {}", r.example_id)));
        }
        for &row in rows {
            per_model[row][r.example_id][kind.index()] = r.value;
        }
    }
    if per_model.iter().flatten().flatten().any(|v| v.is_nan()) {
        return Err(Error::invalid(format!("{} is missing observations", path.display())));
    }
    Ok(tables_from_rows(&per_model))
}

/// How the sub-pool of each sweep size is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Random,
    LowestCurvature,
}

/// One `(size, method)` row of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub seed: u64,
    pub method: String,
    pub auroc: f64,
    pub bal_acc: f64,
}

/// Reference curvature of every pool example under a model trained on the
/// whole pool, used to rank examples for [`Selection::LowestCurvature`].
pub fn reference_curvature(manifest: &ExperimentManifest, pool: &Dataset) -> Result<Vec<f64>> {
    let model = train_model(
        pool,
        &SubsetMask::full(pool.len()),
        &manifest.arch,
        &manifest.hyper,
        derive_seed(manifest.master_seed, REFERENCE_STREAM),
    )?;
    let d = model.digest();
    let cfg = &manifest.curvature;
    pool.examples
        .iter()
        .map(|ex| curvature_score(&model, ex, &cfg.with_seed(probe_seed(cfg.seed, ex.id, &d))))
        .collect()
}

/// Trains and attacks one target per size. A size `s` run uses a sub-pool of
/// `2s` examples, split evenly into members and held-out nonmembers. Each
/// size runs in `<out>/size_<s>/`.
pub fn sweep_dataset_size(
    manifest: &ExperimentManifest,
    sizes: &[usize],
    selection: Selection,
    opts: &RunOptions,
) -> Result<Vec<SweepRow>> {
    manifest.validate()?;
    let pool = stage(Stage::Data, manifest.dataset.load())?;
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || 2 * s > pool.len()) {
        return Err(Error::invalid(format!(
            "sweep size {s} needs {} examples, pool has {}",
            2 * s,
            pool.len()
        )));
    }
    let ref_scores = match selection {
        Selection::Random => None,
        Selection::LowestCurvature => {
            let scores = stage(Stage::Score, reference_curvature(manifest, &pool))?;
            let records: Vec<ScoreRecord> = scores
                .iter()
                .enumerate()
                .map(|(i, &value)| ScoreRecord {
                    example_id: i,
                    model_digest: "reference".into(),
                    kind: StatKind::Curvature.as_str().into(),
                    value,
                    config_digest: manifest.curvature.digest(),
                })
                .collect();
            write_jsonl(&opts.out_dir.join("reference_scores.jsonl"), &records)?;
            Some(scores)
        }
    };
    let mut rows = Vec::new();
    for &size in sizes {
        let mask = match &ref_scores {
            None => sample_subset_count(
                pool.len(),
                2 * size,
                derive_seed(derive_seed(manifest.master_seed, SWEEP_STREAM), size as u64),
            )?,
            Some(scores) => select_lowest_curvature(&pool, scores, 2 * size)?,
        };
        let (sub, _) = pool.subset(&mask, format!("{}-sub{}", pool.name, 2 * size))?;
        let key = digest::digest_of(&(manifest.digest(), size, selection));
        let sub_opts = RunOptions {
            out_dir: opts.out_dir.join(format!("size_{size}")),
            jobs: opts.jobs,
            until: Stage::Evaluate,
        };
        let run = run_with_dataset(manifest, Some(sub), &key, &sub_opts)?;
        for r in &run.metrics.expect("evaluate ran").methods {
            rows.push(SweepRow {
                size,
                seed: manifest.master_seed,
                method: r.method.clone(),
                auroc: r.auroc,
                bal_acc: r.bal_acc,
            });
        }
    }
    Ok(rows)
}

/// `size,seed,method,auroc,bal_acc` with a header.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("size,seed,method,auroc,bal_acc\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.17e},{:.17e}\n",
            r.size, r.seed, r.method, r.auroc, r.bal_acc
        ));
    }
    s
}

/// Reads `(epsilon, value)` rows; a non-numeric first row is a header.
pub fn read_points_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut points = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let err = |msg: String| Error::Csv {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != 2 {
            return Err(err(format!("expected 2 columns (epsilon, value), got {}", rec.len())));
        }
        let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        match parsed {
            (Ok(e), Ok(v)) => points.push((e, v)),
            _ if i == 0 => continue,
            _ => return Err(err(format!("non-numeric row `{},{}`", &rec[0], &rec[1]))),
        }
    }
    Ok(points)
}

/// Fits the bound curve to a points file and writes the result as JSON.
pub fn fit_bound(points_csv: &Path, out: &Path) -> Result<FitResult> {
    let points = read_points_csv(points_csv)?;
    let fit = fit_bound_curve(&points)?;
    write_json_pretty(out, &fit)?;
    Ok(fit)
}
