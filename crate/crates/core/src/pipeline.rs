//! End-to-end runs: configuration, preparation of representations and weak
//! labels, two-stage training, report files, sweeps and the gradient suite.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_gold, load_triples, neighbor_index, normalize_surface, Corpus, GoldLabels};
use crate::embedding::{augment, contextual_table, detect_dim, load_vectors, phrase_table, VectorStore};
use crate::error::{Error, Result};
use crate::hac::{hac_cluster, ClusterAssignment, Linkage};
use crate::kge::KgeModel;
use crate::metrics::{evaluate, evaluate_named, Metrics};
use crate::side_info::{candidate_pairs, SideResources, TokenStats};
use crate::synthetic::{generate, SyntheticConfig, SyntheticDataset};
use crate::trainer::{
    full_batch_draws, gradient_check, infer_clusters, stage_one, stage_two, CanonicalSource, LossReport, LossWeights,
    ModelSpec, OptimizerKind, ScheduleSpec, Stage, StageConfig, Term, TrainData, TrainState,
};

/// Every setting of a run. Serialized field names double as CLI flag names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub triples: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub sentences: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub contextual_vectors: Option<PathBuf>,
    pub paraphrases: Option<PathBuf>,
    pub entity_links: Option<PathBuf>,
    pub validation_gold: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Word-vector dimension `d`.
    pub dim: usize,
    /// KGE dimension `d_k`; defaults to `d_h`.
    pub kge_dim: Option<usize>,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Noise-network hidden widths; empty means two layers of `2 d_h`.
    pub hidden: Vec<usize>,
    pub linkage: Linkage,
    pub hac_threshold: f64,
    /// Candidate thresholds tried against `validation_gold`.
    pub threshold_grid: Vec<f64>,
    pub idf_threshold: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub diffusion_weight: f64,
    pub clu_weight: f64,
    pub kge_weight: f64,
    pub side_weight: f64,
    pub n_neg: usize,
    pub margin: f64,
    pub seed: u64,
    pub variance_floor: f64,
    pub initial_log_sigma: f64,
    pub augment: bool,
    pub kge_model: KgeModel,
    pub canonical: CanonicalSource,
    pub without_neighbor: bool,
    pub without_diffusion: bool,
    pub without_side_info: bool,
    /// Replaces HolE by TransE.
    pub transe: bool,
    pub strict_gold: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            triples: None,
            gold: None,
            sentences: None,
            vectors: None,
            contextual_vectors: None,
            paraphrases: None,
            entity_links: None,
            validation_gold: None,
            output_dir: PathBuf::from("out"),
            dim: 100,
            kge_dim: None,
            diffusion_steps: 2,
            beta_start: 1e-4,
            beta_end: 0.02,
            hidden: Vec::new(),
            linkage: Linkage::Complete,
            hac_threshold: DEFAULT_HAC_THRESHOLD,
            threshold_grid: Vec::new(),
            idf_threshold: 0.75,
            epochs_stage1: 50,
            epochs_stage2: 50,
            lr_stage1: 1e-3,
            lr_stage2: 1e-5,
            batch_size: 0,
            optimizer: OptimizerKind::Sgd,
            diffusion_weight: 0.6,
            clu_weight: 1.0,
            kge_weight: 1.0,
            side_weight: 1.0,
            n_neg: 20,
            margin: 1.0,
            seed: 0,
            variance_floor: crate::mixture::DEFAULT_VARIANCE_FLOOR,
            initial_log_sigma: -3.0,
            augment: true,
            kge_model: KgeModel::Hole,
            canonical: CanonicalSource::ClusterMean,
            without_neighbor: false,
            without_diffusion: false,
            without_side_info: false,
            transe: false,
            strict_gold: false,
        }
    }
}

/// Cosine-distance cut used when no validation labels are available.
pub const DEFAULT_HAC_THRESHOLD: f64 = 0.4;

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies `overrides`, a JSON object of field values, on top of `self`.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        let (Some(b), Some(o)) = (base.as_object_mut(), overrides.as_object()) else {
            return Err(Error::Config("overrides must be a JSON object".into()));
        };
        for (k, v) in o {
            b.insert(k.clone(), v.clone());
        }
        serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let files = [
            ("triples", &self.triples),
            ("gold", &self.gold),
            ("sentences", &self.sentences),
            ("vectors", &self.vectors),
            ("contextual_vectors", &self.contextual_vectors),
            ("paraphrases", &self.paraphrases),
            ("entity_links", &self.entity_links),
            ("validation_gold", &self.validation_gold),
        ];
        for (name, p) in files {
            if let Some(p) = p {
                let resolved = PathBuf::from(p.to_string_lossy().replace("{dim}", &self.dim.to_string()));
                if !resolved.exists() {
                    return Err(Error::Config(format!("{name} file {} does not exist", resolved.display())));
                }
            }
        }
        self.validate_numbers()
    }

    fn validate_numbers(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.hac_threshold < 0.0 || self.threshold_grid.iter().any(|t| *t < 0.0) {
            return bad("HAC thresholds must be non-negative".into());
        }
        if !(self.lr_stage1 > 0.0 && self.lr_stage2 > 0.0) {
            return bad("learning rates must be positive".into());
        }
        let weights = [self.diffusion_weight, self.clu_weight, self.kge_weight, self.side_weight];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("loss weights must be finite and non-negative".into());
        }
        if self.n_neg == 0 {
            return bad("n_neg must be at least 1".into());
        }
        if !(self.variance_floor > 0.0) {
            return bad("variance_floor must be positive".into());
        }
        Ok(())
    }

    fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            hidden: self.hidden.clone(),
            kge_dim: self.kge_dim,
            initial_log_sigma: self.initial_log_sigma,
            variance_floor: self.variance_floor,
            schedule: ScheduleSpec {
                steps: self.diffusion_steps,
                beta_start: self.beta_start,
                beta_end: self.beta_end,
            },
            diffusion: !self.without_diffusion,
            kge_model: if self.transe { KgeModel::Transe } else { self.kge_model },
            margin: self.margin,
            canonical: self.canonical,
            weights: LossWeights {
                diff: if self.without_diffusion { 0.0 } else { self.diffusion_weight },
                clu: self.clu_weight,
                kge: self.kge_weight,
                side: if self.without_side_info { 0.0 } else { self.side_weight },
            },
            optimizer: self.optimizer,
            seed: self.seed,
        }
    }

    fn stage_configs(&self) -> (StageConfig, StageConfig) {
        let one = StageConfig {
            epochs: self.epochs_stage1,
            learning_rate: self.lr_stage1,
            batch_size: self.batch_size,
            n_neg: self.n_neg,
            optimizer: self.optimizer,
            max_loss: 1e6,
        };
        let two = StageConfig {
            epochs: self.epochs_stage2,
            learning_rate: self.lr_stage2,
            ..one
        };
        (one, two)
    }
}

/// Loaded inputs of a run.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub corpus: Corpus,
    pub vectors: VectorStore,
    pub gold: Option<GoldLabels>,
    pub validation: Option<GoldLabels>,
    pub side: SideResources,
    /// Per-phrase vectors for the preliminary clustering.
    pub contextual: Option<Array2<f64>>,
}

fn resolve_dim(path: &Path, dim: usize) -> PathBuf {
    PathBuf::from(path.to_string_lossy().replace("{dim}", &dim.to_string()))
}

impl Inputs {
    /// Reads every file named in `config`. A `{dim}` placeholder in the
    /// vector path is replaced by `config.dim`; otherwise wider vectors are
    /// truncated to `config.dim` components.
    pub fn load(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let triples = config
            .triples
            .as_ref()
            .ok_or_else(|| Error::Config("a triples file is required".into()))?;
        let mut corpus = load_triples(triples)?;
        if let Some(s) = &config.sentences {
            let skipped = corpus.attach_sentences(s)?;
            if skipped > 0 {
                log::warn!("{skipped} sentence rows did not match a triple id");
            }
        }
        let vpath = config
            .vectors
            .as_ref()
            .ok_or_else(|| Error::Config("a word-vector file is required".into()))?;
        let vpath = resolve_dim(vpath, config.dim);
        let native = detect_dim(&vpath)?;
        let vectors = load_vectors(&vpath, native, false)?;
        let vectors = if native == config.dim { vectors } else { vectors.truncated(config.dim)? };
        let gold = config
            .gold
            .as_ref()
            .map(|p| load_gold(p, &corpus, config.strict_gold))
            .transpose()?;
        let validation = config
            .validation_gold
            .as_ref()
            .map(|p| load_gold(p, &corpus, config.strict_gold))
            .transpose()?;
        let side = SideResources::load(config.paraphrases.as_deref(), config.entity_links.as_deref())?;
        let contextual = match &config.contextual_vectors {
            Some(p) => Some(contextual_table(p, &corpus, &phrase_table(&corpus, &vectors))?),
            None => None,
        };
        Ok(Inputs {
            corpus,
            vectors,
            gold,
            validation,
            side,
            contextual,
        })
    }

    pub fn from_synthetic(data: &SyntheticDataset) -> Self {
        let corpus = data.corpus();
        let gold = data.gold_labels(&corpus);
        Inputs {
            corpus,
            vectors: data.vectors.clone(),
            gold: Some(gold),
            validation: None,
            side: data.side.clone(),
            contextual: None,
        }
    }

    /// Copy with word vectors cut to `dim` components.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        Ok(Inputs {
            vectors: if dim == self.vectors.dim() {
                self.vectors.clone()
            } else {
                self.vectors.truncated(dim)?
            },
            ..self.clone()
        })
    }
}

/// Representations, weak labels and candidate pairs ready for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub e: Array2<f64>,
    pub h: Array2<f64>,
    pub hac: ClusterAssignment,
    pub threshold: f64,
    pub pairs: Vec<(usize, usize, f64)>,
}

pub fn prepare(inputs: &Inputs, config: &RunConfig) -> Result<Prepared> {
    config.validate_numbers()?;
    let corpus = &inputs.corpus;
    if inputs.vectors.dim() != config.dim {
        return Err(Error::Config(format!(
            "word vectors have dimension {}, config asks for {}",
            inputs.vectors.dim(),
            config.dim
        )));
    }
    let e = phrase_table(corpus, &inputs.vectors);
    let hac_input = inputs.contextual.as_ref().unwrap_or(&e);
    let neighbors = neighbor_index(corpus);
    let table = augment(&e, &neighbors, config.augment && !config.without_neighbor)?;

    let threshold = match (&inputs.validation, config.threshold_grid.is_empty()) {
        (Some(val), false) if !val.is_empty() => tune_threshold(hac_input, config.linkage, &config.threshold_grid, val)?,
        _ => config.hac_threshold,
    };
    let hac = hac_cluster(hac_input, config.linkage, threshold)?;

    let pairs = if config.without_side_info {
        Vec::new()
    } else {
        let stats = TokenStats::build(corpus);
        candidate_pairs(&inputs.side, corpus, &stats, config.idf_threshold)?
            .weighted()
            .map(|(a, b, w)| (a.0, b.0, w))
            .collect()
    };
    Ok(Prepared {
        e: table.e,
        h: table.h,
        hac,
        threshold,
        pairs,
    })
}

/// Threshold from `grid` with the best average F1 on `validation`; ties keep
/// the earliest value.
pub fn tune_threshold(vectors: &Array2<f64>, linkage: Linkage, grid: &[f64], validation: &GoldLabels) -> Result<f64> {
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &t in grid {
        let m = evaluate(&hac_cluster(vectors, linkage, t)?, validation)?;
        log::info!("threshold {t}: validation average F1 {:.4}", m.average_f1);
        if m.average_f1 > best.0 {
            best = (m.average_f1, t);
        }
    }
    Ok(best.1)
}

/// Result of one pipeline run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub clusters: ClusterAssignment,
    pub metrics: Option<Metrics>,
    pub hac: ClusterAssignment,
    pub hac_metrics: Option<Metrics>,
    pub reports: Vec<LossReport>,
    pub state: TrainState,
    pub threshold: f64,
}

/// Preparation, stage 1, stage 2 and inference.
pub fn run(inputs: &Inputs, config: &RunConfig) -> Result<RunOutput> {
    let prep = prepare(inputs, config)?;
    let data = TrainData {
        corpus: &inputs.corpus,
        h: &prep.h,
        labels: prep.hac.labels(),
        pairs: &prep.pairs,
    };
    let state = TrainState::init(&prep.h, &prep.hac, inputs.corpus.num_relations(), &config.model_spec())?;
    let (one, two) = config.stage_configs();
    let (state, mut reports) = stage_one(state, &data, &one)?;
    let (state, more) = stage_two(state, &data, &two)?;
    reports.extend(more);
    let clusters = infer_clusters(&state, &prep.h)?;
    let idle = state.params.mixture.num_clusters() - clusters.num_clusters();
    if idle > 0 {
        log::info!("{idle} of {} mixture components own no phrase", state.params.mixture.num_clusters());
    }
    let metrics = inputs.gold.as_ref().map(|g| evaluate(&clusters, g)).transpose()?;
    let hac_metrics = inputs.gold.as_ref().map(|g| evaluate(&prep.hac, g)).transpose()?;
    Ok(RunOutput {
        clusters,
        metrics,
        hac: prep.hac,
        hac_metrics,
        reports,
        state,
        threshold: prep.threshold,
    })
}

/// One line per cluster with tab-separated member surface strings.
pub fn clusters_tsv(clusters: &ClusterAssignment, corpus: &Corpus) -> String {
    let mut out = String::new();
    for members in clusters.clusters() {
        let names: Vec<&str> = members.iter().map(|&i| corpus.phrases().resolve(i)).collect();
        out.push_str(&names.join("\t"));
        out.push('\n');
    }
    out
}

pub const LOSS_HEADER: &str = "epoch,stage,l_diff,l_clu,l_kge,l_side,objective";

pub fn losses_csv(reports: &[LossReport]) -> String {
    let mut out = format!("{LOSS_HEADER}\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch, r.stage, r.l_diff, r.l_clu, r.l_kge, r.l_side, r.objective
        )
        .expect("string write");
    }
    out
}

pub fn metrics_json(m: &Metrics) -> String {
    serde_json::to_string_pretty(m).expect("plain struct serializes") + "\n"
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFiles {
    pub clusters: PathBuf,
    pub metrics: Option<PathBuf>,
    pub losses: PathBuf,
}

/// Writes `clusters.tsv`, `losses.csv` and (with gold labels) `metrics.json`.
pub fn write_outputs(out: &RunOutput, corpus: &Corpus, dir: &Path) -> Result<OutputFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, body: String| -> Result<PathBuf> {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    let clusters = put("clusters.tsv", clusters_tsv(&out.clusters, corpus))?;
    let losses = put("losses.csv", losses_csv(&out.reports))?;
    let metrics = out.metrics.as_ref().map(|m| put("metrics.json", metrics_json(m))).transpose()?;
    Ok(OutputFiles {
        clusters,
        metrics,
        losses,
    })
}

/// Loads the configured inputs, runs, and writes the report files.
pub fn canonicalize(config: &RunConfig) -> Result<(RunOutput, OutputFiles)> {
    let inputs = Inputs::load(config)?;
    let out = run(&inputs, config)?;
    let files = write_outputs(&out, &inputs.corpus, &config.output_dir)?;
    Ok((out, files))
}

/// HAC-only baseline under the same preparation as [`run`].
pub fn hac_baseline(inputs: &Inputs, config: &RunConfig) -> Result<(ClusterAssignment, Option<Metrics>)> {
    let prep = prepare(inputs, config)?;
    let m = inputs.gold.as_ref().map(|g| evaluate(&prep.hac, g)).transpose()?;
    Ok((prep.hac, m))
}

/// Reads a cluster file: one cluster per non-empty line, tab-separated members.
pub fn read_clusters(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let members: Vec<String> = line.split('\t').map(normalize_surface).collect();
        if members.iter().any(String::is_empty) {
            return Err(Error::Ingest {
                path: path.to_owned(),
                line: lineno + 1,
                message: "empty cluster member".into(),
            });
        }
        out.push(members);
    }
    Ok(out)
}

/// Reads `phrase<TAB>entity_id` rows into a surface-keyed map.
pub fn read_gold_map(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match line.split_once('\t') {
            Some((p, e)) if !p.trim().is_empty() && !e.trim().is_empty() => {
                out.insert(normalize_surface(p), e.trim().to_owned());
            }
            _ => {
                return Err(Error::Ingest {
                    path: path.to_owned(),
                    line: lineno + 1,
                    message: "expected `phrase<TAB>entity_id`".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Scores a cluster file against a gold file.
pub fn evaluate_files(pred: &Path, gold: &Path) -> Result<Metrics> {
    let clusters = read_clusters(pred)?;
    let gold = read_gold_map(gold)?;
    evaluate_named(&clusters, &gold, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Dim,
    DiffusionWeight,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dim" => Ok(SweepAxis::Dim),
            "diffusion_weight" | "diffusion-weight" => Ok(SweepAxis::DiffusionWeight),
            other => Err(Error::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub result: std::result::Result<Metrics, String>,
}

/// One full run per value with a shared seed. Failed runs are recorded and
/// the sweep continues.
pub fn sweep(inputs: &Inputs, config: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if inputs.gold.is_none() {
        return Err(Error::Config("sweep needs gold labels".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let attempt = || -> Result<Metrics> {
            let mut cfg = config.clone();
            let inp = match axis {
                SweepAxis::Dim => {
                    if value < 1.0 || value.fract() != 0.0 {
                        return Err(Error::Config(format!("dimension {value} is not a positive integer")));
                    }
                    cfg.dim = value as usize;
                    inputs.with_dim(cfg.dim)?
                }
                SweepAxis::DiffusionWeight => {
                    cfg.diffusion_weight = value;
                    inputs.clone()
                }
            };
            let out = run(&inp, &cfg)?;
            Ok(out.metrics.expect("gold labels present"))
        };
        let result = attempt().map_err(|e| {
            log::warn!("sweep value {value} failed: {e}");
            e.to_string()
        });
        rows.push(SweepRow { value, result });
    }
    Ok(rows)
}

/// Reloads vectors per dimension when the configured path has a `{dim}`
/// placeholder; otherwise behaves like [`sweep`] on the loaded inputs.
pub fn sweep_from_config(config: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    let templated = config.vectors.as_ref().is_some_and(|p| p.to_string_lossy().contains("{dim}"));
    if axis != SweepAxis::Dim || !templated {
        let mut base = config.clone();
        if axis == SweepAxis::Dim {
            // load once at the widest requested width, truncate per run
            let widest = values.iter().fold(0.0_f64, |m, &v| m.max(v));
            base.dim = widest as usize;
        }
        let inputs = Inputs::load(&base)?;
        return sweep(&inputs, config, axis, values);
    }
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::new();
    for &value in values {
        let mut cfg = config.clone();
        cfg.dim = value as usize;
        let result = Inputs::load(&cfg)
            .and_then(|inp| sweep(&inp, &cfg, axis, &[value]))
            .map(|mut r| r.remove(0).result)
            .unwrap_or_else(|e| Err(e.to_string()));
        rows.push(SweepRow { value, result });
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "value,macro_f1,micro_f1,pair_f1,average_f1,error";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        match &r.result {
            Ok(m) => writeln!(
                out,
                "{},{},{},{},{},",
                r.value, m.macro_f1, m.micro_f1, m.pair_f1, m.average_f1
            ),
            Err(e) => writeln!(out, "{},,,,,\"{}\"", r.value, e.replace('"', "'")),
        }
        .expect("string write");
    }
    out
}

/// Config for the gradient suite's toy problem.
pub fn gradcheck_config() -> RunConfig {
    RunConfig {
        dim: 8,
        hac_threshold: 0.5,
        n_neg: 3,
        hidden: vec![8],
        kge_dim: Some(6),
        ..RunConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckResult {
    pub label: String,
    pub max_rel_error: f64,
    /// Largest analytic component; guards against a vacuous all-zero check.
    pub max_abs_gradient: f64,
    pub checked: usize,
}

/// Finite-difference checks of every loss term in isolation and of both
/// stage objectives, for both KGE backends, on the seeded toy problem.
pub fn gradcheck_suite(seed: u64, eps: f64) -> Result<(Vec<GradcheckResult>, usize)> {
    let data = generate(&SyntheticConfig::toy(seed))?;
    let inputs = Inputs::from_synthetic(&data);
    let config = gradcheck_config();
    let prep = prepare(&inputs, &config)?;
    let train = TrainData {
        corpus: &inputs.corpus,
        h: &prep.h,
        labels: prep.hac.labels(),
        pairs: &prep.pairs,
    };
    let mut cases: Vec<(String, LossWeights, Stage, KgeModel)> = vec![
        ("L_diff".into(), LossWeights::only(Term::Diff), Stage::One, KgeModel::Hole),
        ("L_clu".into(), LossWeights::only(Term::Clu), Stage::One, KgeModel::Hole),
        ("L_side".into(), LossWeights::only(Term::Side), Stage::One, KgeModel::Hole),
    ];
    for model in [KgeModel::Hole, KgeModel::Transe] {
        let tag = if model == KgeModel::Hole { "hole" } else { "transe" };
        cases.push((format!("L_kge[{tag}]"), LossWeights::only(Term::Kge), Stage::Two, model));
        cases.push((format!("L_2[{tag}]"), LossWeights::default(), Stage::Two, model));
    }
    cases.insert(3, ("L_1".into(), LossWeights::default(), Stage::One, KgeModel::Hole));

    let mut out = Vec::new();
    for (label, weights, stage, model) in cases {
        let spec = ModelSpec {
            weights,
            kge_model: model,
            seed,
            ..config.model_spec()
        };
        let mut state = TrainState::init(&prep.h, &prep.hac, inputs.corpus.num_relations(), &spec)?;
        // move off the initialization so no term sits at a special point
        perturb(&mut state, seed);
        let draws = full_batch_draws(&state, &train, stage, config.n_neg, 0)?;
        let blocks = gradient_check(&state, &train, &draws, stage, eps, 1)?;
        let worst = blocks.iter().fold(0.0_f64, |m, b| m.max(b.max_rel_error));
        let largest = blocks.iter().fold(0.0_f64, |m, b| m.max(b.max_abs_gradient));
        let checked = blocks.iter().map(|b| b.checked).sum();
        out.push(GradcheckResult {
            label,
            max_rel_error: worst,
            max_abs_gradient: largest,
            checked,
        });
    }
    Ok((out, prep.hac.num_clusters()))
}

fn perturb(state: &mut TrainState, seed: u64) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let n = Normal::new(0.0, 0.05).expect("valid");
    for b in state.params.blocks_mut() {
        b.mapv_inplace(|x| x + n.sample(&mut rng));
    }
    // widen the components so posteriors are soft and L_clu has a gradient
    state.params.mixture.log_vars.mapv_inplace(|v| v + 3.0);
    state.params.mixture.enforce_floor();
}
