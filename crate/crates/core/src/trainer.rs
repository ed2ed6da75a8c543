//! Joint objective, gradients and the two-stage optimization loop.
//!
//! Stage 1 minimizes `l_clu L_clu + l_diff L_diff + l_side L_side`; stage 2
//! adds `l_kge L_kge`. Every evaluation freezes its random draws up front
//! ([`Draws`]) so the objective is a deterministic function of the
//! parameters, which is what the finite-difference checks rely on.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::corpus::{Corpus, Triple};
use crate::diffusion::{
    diffusion_loss_graph, make_schedule, normal_matrix, DiffusionDraws, LatentHeads, NoiseNet, NoiseSchedule,
    MAX_LOG_SIGMA,
};
use crate::error::{Error, Result};
use crate::hac::ClusterAssignment;
use crate::kge::{kge_loss_graph, sample_negatives, KgeModel, NegativeSet};
use crate::mixture::{clustering_loss_graph, init_mixture, posteriors, MixtureParams};
use crate::side_info::side_loss_graph;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Loss weights; a zero weight removes the term from the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub diff: f64,
    pub clu: f64,
    pub kge: f64,
    pub side: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            diff: 0.6,
            clu: 1.0,
            kge: 1.0,
            side: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            diff: 0.0,
            clu: 0.0,
            kge: 0.0,
            side: 0.0,
        }
    }

    /// Weights isolating a single term.
    pub fn only(term: Term) -> Self {
        let mut w = Self::zero();
        match term {
            Term::Diff => w.diff = 1.0,
            Term::Clu => w.clu = 1.0,
            Term::Kge => w.kge = 1.0,
            Term::Side => w.side = 1.0,
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Diff,
    Clu,
    Kge,
    Side,
}

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::Diff => "L_diff",
            Term::Clu => "L_clu",
            Term::Kge => "L_kge",
            Term::Side => "L_side",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// What the KGE term embeds each phrase as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CanonicalSource {
    /// Mean of the phrase's argmax-posterior mixture component.
    #[default]
    ClusterMean,
    /// The phrase's own noiseless latent.
    OwnLatent,
}

/// Schedule settings kept with the state so checkpoints are self-contained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            steps: 2,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub net: NoiseNet,
    pub heads: LatentHeads,
    pub mixture: MixtureParams,
    /// `R x d_k`.
    pub relations: Array2<f64>,
    /// `d_h x d_k`, present when `d_k != d_h`.
    pub projection: Option<Array2<f64>>,
}

impl Params {
    /// Parameter blocks in a fixed order with their names.
    pub fn blocks(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (i, l) in self.net.layers.iter().enumerate() {
            out.push((format!("net.{i}.w"), &l.w));
            out.push((format!("net.{i}.b"), &l.b));
        }
        out.push(("heads.w_mu".into(), &self.heads.w_mu));
        out.push(("heads.w_sigma".into(), &self.heads.w_sigma));
        out.push(("heads.log_sigma_bias".into(), &self.heads.log_sigma_bias));
        out.push(("mixture.prior_logits".into(), &self.mixture.prior_logits));
        out.push(("mixture.means".into(), &self.mixture.means));
        out.push(("mixture.log_vars".into(), &self.mixture.log_vars));
        out.push(("relations".into(), &self.relations));
        if let Some(p) = &self.projection {
            out.push(("projection".into(), p));
        }
        out
    }

    /// Mutable view of [`Params::blocks`], same order.
    pub fn blocks_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for l in &mut self.net.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.heads.w_mu);
        out.push(&mut self.heads.w_sigma);
        out.push(&mut self.heads.log_sigma_bias);
        out.push(&mut self.mixture.prior_logits);
        out.push(&mut self.mixture.means);
        out.push(&mut self.mixture.log_vars);
        out.push(&mut self.relations);
        if let Some(p) = &mut self.projection {
            out.push(p);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    fn check_finite(&self) -> Result<()> {
        for (name, b) in self.blocks() {
            if b.iter().any(|x| !x.is_finite()) {
                return Err(Error::Train(format!("parameter block `{name}` became non-finite")));
            }
        }
        Ok(())
    }
}

/// Gradient blocks aligned with [`Params::blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub blocks: Vec<(String, Array2<f64>)>,
}

impl GradientSet {
    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, g)| g)
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|(_, g)| g.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OptimizerState {
    Sgd,
    Adam {
        step: u64,
        m: Vec<Array2<f64>>,
        v: Vec<Array2<f64>>,
    },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam {
                step: 0,
                m: Vec::new(),
                v: Vec::new(),
            },
        }
    }

    fn apply(&mut self, params: &mut Params, grads: &GradientSet, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let blocks = params.blocks_mut();
        match self {
            OptimizerState::Sgd => {
                for (p, (_, g)) in blocks.into_iter().zip(&grads.blocks) {
                    p.scaled_add(-lr, g);
                }
            }
            OptimizerState::Adam { step, m, v } => {
                if m.is_empty() {
                    *m = grads.blocks.iter().map(|(_, g)| Array2::zeros(g.dim())).collect();
                    *v = m.clone();
                }
                *step += 1;
                let c1 = 1.0 - B1.powi(*step as i32);
                let c2 = 1.0 - B2.powi(*step as i32);
                for (((p, (_, g)), m), v) in blocks.into_iter().zip(&grads.blocks).zip(m).zip(v) {
                    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = B1 * *m + (1.0 - B1) * g;
                        *v = B2 * *v + (1.0 - B2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                    });
                }
            }
        }
        params.mixture.enforce_floor();
    }
}

/// Complete training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: Params,
    pub optimizer: OptimizerState,
    /// Epochs completed across both stages.
    pub epoch: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub schedule: ScheduleSpec,
    /// When false, latents come straight from `h` and no diffusion term is used.
    pub diffusion: bool,
    pub kge_model: KgeModel,
    pub margin: f64,
    pub canonical: CanonicalSource,
}

/// Shape and initialization settings for [`TrainState::init`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Hidden widths of the noise network; empty means two layers of `2 d_h`.
    pub hidden: Vec<usize>,
    /// KGE dimension; `None` uses `d_h`.
    pub kge_dim: Option<usize>,
    pub initial_log_sigma: f64,
    pub variance_floor: f64,
    pub schedule: ScheduleSpec,
    pub diffusion: bool,
    pub kge_model: KgeModel,
    pub margin: f64,
    pub canonical: CanonicalSource,
    pub weights: LossWeights,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden: Vec::new(),
            kge_dim: None,
            initial_log_sigma: -3.0,
            variance_floor: crate::mixture::DEFAULT_VARIANCE_FLOOR,
            schedule: ScheduleSpec::default(),
            diffusion: true,
            kge_model: KgeModel::Hole,
            margin: 1.0,
            canonical: CanonicalSource::ClusterMean,
            weights: LossWeights::default(),
            optimizer: OptimizerKind::Sgd,
            seed: 0,
        }
    }
}

/// Immutable inputs shared by every evaluation.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub corpus: &'a Corpus,
    /// Augmented representations `h`, one row per phrase.
    pub h: &'a Array2<f64>,
    /// Weak labels from the preliminary clustering.
    pub labels: &'a [usize],
    /// Candidate pairs `(a, b, weight)` over phrase ids.
    pub pairs: &'a [(usize, usize, f64)],
}

impl TrainData<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.h.nrows();
        if n == 0 {
            return Err(Error::Train("no phrases to train on".into()));
        }
        if self.labels.len() != n || self.corpus.num_phrases() != n {
            return Err(Error::Train(format!(
                "{} weak labels and {} corpus phrases for {} representations",
                self.labels.len(),
                self.corpus.num_phrases(),
                n
            )));
        }
        Ok(())
    }
}

fn stream(seed: u64, epoch: usize, batch: usize, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 24) ^ ((batch as u64) << 4) ^ id);
    rng
}

const STREAM_LATENT: u64 = 1;
const STREAM_NEGATIVE: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

impl TrainState {
    /// Builds a state whose mixture is initialized from `assignment` on the
    /// noiseless latents of `h`.
    pub fn init(h: &Array2<f64>, assignment: &ClusterAssignment, num_relations: usize, spec: &ModelSpec) -> Result<Self> {
        let dh = h.ncols();
        spec.schedule.build()?;
        let mut rng = stream(spec.seed, usize::MAX >> 8, 0, 0);
        let hidden = if spec.hidden.is_empty() { vec![2 * dh, 2 * dh] } else { spec.hidden.clone() };
        let net = NoiseNet::new(dh, spec.schedule.steps, &hidden, &mut rng);
        let heads = LatentHeads::identity(dh, spec.initial_log_sigma);
        let dk = spec.kge_dim.unwrap_or(dh);
        let scale = 1.0 / (dk as f64).sqrt();
        let relations = normal_matrix(&mut rng, num_relations, dk) * scale;
        let projection = (dk != dh).then(|| normal_matrix(&mut rng, dh, dk) / (dh as f64).sqrt());
        let mut state = TrainState {
            params: Params {
                net,
                heads,
                mixture: MixtureParams {
                    prior_logits: Array2::zeros((1, 1)),
                    means: Array2::zeros((1, dh)),
                    log_vars: Array2::zeros((1, dh)),
                    variance_floor: spec.variance_floor,
                },
                relations,
                projection,
            },
            optimizer: OptimizerState::new(spec.optimizer),
            epoch: 0,
            seed: spec.seed,
            weights: spec.weights,
            schedule: spec.schedule,
            diffusion: spec.diffusion,
            kge_model: spec.kge_model,
            margin: spec.margin,
            canonical: spec.canonical,
        };
        let latents = state.sampled_latents(h, &mut stream(spec.seed, usize::MAX >> 8, 0, STREAM_LATENT))?;
        state.params.mixture = init_mixture(assignment, &latents, spec.variance_floor)?;
        Ok(state)
    }

    /// One training-time draw of `omega` per row of `h`: forward noise
    /// (when diffusion is on) followed by the reparameterized heads.
    pub fn sampled_latents<R: Rng + ?Sized>(&self, h: &Array2<f64>, rng: &mut R) -> Result<Array2<f64>> {
        let (n, dh) = h.dim();
        let mut x = h.clone();
        if self.diffusion {
            let schedule = self.schedule()?;
            for t in 1..=schedule.steps() {
                let a = schedule.alpha(t);
                x = x * a.sqrt() + normal_matrix(rng, n, dh) * (1.0 - a).sqrt();
            }
        }
        let heads = &self.params.heads;
        let log_sigma = x.dot(&heads.w_sigma) + &heads.log_sigma_bias;
        if log_sigma.iter().any(|&s| !(s <= 30.0)) {
            return Err(Error::Diffusion("latent scale overflow: log sigma above 30".into()));
        }
        Ok(x.dot(&heads.w_mu) + log_sigma.mapv(f64::exp) * normal_matrix(rng, n, dh))
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build()
    }

    fn mean_scale(&self) -> Result<f64> {
        Ok(if self.diffusion {
            let s = self.schedule()?;
            s.alpha_bar(s.steps()).sqrt()
        } else {
            1.0
        })
    }

    /// Noiseless latents `sqrt(alpha_bar_T) h W_mu` (or `h W_mu` without diffusion).
    pub fn inference_latents(&self, h: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(h.dot(&self.params.heads.w_mu) * self.mean_scale()?)
    }

    /// Raw argmax-posterior component per phrase (not re-densified).
    pub fn argmax_components(&self, h: &Array2<f64>) -> Result<Vec<usize>> {
        let post = posteriors(&self.inference_latents(h)?, &self.params.mixture)?;
        Ok(post
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            version: CHECKPOINT_VERSION,
            state: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Train(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        Ok(c.state)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    state: TrainState,
}

/// Cluster assignment from the argmax posterior of each phrase's noiseless
/// latent, with empty components dropped.
pub fn infer_clusters(state: &TrainState, h: &Array2<f64>) -> Result<ClusterAssignment> {
    Ok(ClusterAssignment::from_labels(&state.argmax_components(h)?))
}

/// Frozen randomness and batch selection for one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    /// Phrase ids in the batch.
    pub rows: Vec<usize>,
    /// Forward noise per step, each `rows x d_h`.
    pub forward: Vec<Array2<f64>>,
    /// Reparameterization noise `rows x d_h`.
    pub z0: Array2<f64>,
    pub diffusion: DiffusionDraws,
    /// Candidate pairs inside the batch as local row indices.
    pub pairs: Vec<(usize, usize, f64)>,
    /// Stage-2 triples with negatives.
    pub negatives: Vec<NegativeSet>,
    /// Stage-2 argmax component per phrase.
    pub canonical: Vec<usize>,
}

impl Draws {
    /// Draws for the batch `rows`. Negatives are drawn for `triples` only
    /// when `stage` is two.
    #[allow(clippy::too_many_arguments)]
    pub fn sample(
        state: &TrainState,
        data: &TrainData<'_>,
        rows: Vec<usize>,
        triples: &[Triple],
        stage: Stage,
        n_neg: usize,
        epoch: usize,
        batch: usize,
    ) -> Result<Self> {
        let dh = data.h.ncols();
        let schedule = state.schedule()?;
        let mut rng = stream(state.seed, epoch, batch, STREAM_LATENT);
        let n = rows.len();
        let forward = if state.diffusion {
            (0..schedule.steps()).map(|_| normal_matrix(&mut rng, n, dh)).collect()
        } else {
            Vec::new()
        };
        let z0 = normal_matrix(&mut rng, n, dh);
        let diffusion = if state.diffusion {
            DiffusionDraws::sample(n, dh, &schedule, &mut rng)
        } else {
            DiffusionDraws {
                steps: Vec::new(),
                noise: Array2::zeros((0, dh)),
            }
        };
        let mut local = vec![usize::MAX; data.h.nrows()];
        for (i, &r) in rows.iter().enumerate() {
            local[r] = i;
        }
        let pairs = data
            .pairs
            .iter()
            .filter(|(a, b, _)| local[*a] != usize::MAX && local[*b] != usize::MAX)
            .map(|&(a, b, w)| (local[a], local[b], w))
            .collect();
        let (negatives, canonical) = if stage == Stage::Two && state.weights.kge != 0.0 {
            let mut nrng = stream(state.seed, epoch, batch, STREAM_NEGATIVE);
            let negatives = triples
                .iter()
                .map(|t| NegativeSet {
                    positive: *t,
                    negatives: sample_negatives(t, n_neg, data.corpus, &mut nrng),
                })
                .collect();
            (negatives, state.argmax_components(data.h)?)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Draws {
            rows,
            forward,
            z0,
            diffusion,
            pairs,
            negatives,
            canonical,
        })
    }
}

/// Loss values of one evaluation. Terms outside the stage (or disabled) are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub stage: u8,
    pub l_diff: f64,
    pub l_clu: f64,
    pub l_kge: f64,
    pub l_side: f64,
    pub objective: f64,
}

impl LossReport {
    fn mean(reports: &[LossReport]) -> LossReport {
        let k = reports.len() as f64;
        let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        LossReport {
            l_diff: avg(|r| r.l_diff),
            l_clu: avg(|r| r.l_clu),
            l_kge: avg(|r| r.l_kge),
            l_side: avg(|r| r.l_side),
            objective: avg(|r| r.objective),
            ..reports[0]
        }
    }
}

struct Taped {
    graph: Graph,
    leaves: Vec<Var>,
    objective: Var,
    report: LossReport,
}

fn x_t(data: &TrainData<'_>, draws: &Draws, schedule: &NoiseSchedule, diffusion: bool) -> Array2<f64> {
    let mut x = data.h.select(Axis(0), &draws.rows);
    if diffusion {
        for (t, z) in (1..=schedule.steps()).zip(&draws.forward) {
            let a = schedule.alpha(t);
            x = x * a.sqrt() + z * (1.0 - a).sqrt();
        }
    }
    x
}

fn tape(state: &TrainState, data: &TrainData<'_>, draws: &Draws, stage: Stage) -> Result<Taped> {
    let p = &state.params;
    let w = state.weights;
    let schedule = state.schedule()?;
    let mut g = Graph::new();
    let leaves: Vec<Var> = p.blocks().into_iter().map(|(_, b)| g.leaf(b.clone())).collect();
    let nl = p.net.layers.len();
    let net_params: Vec<(Var, Var)> = (0..nl).map(|i| (leaves[2 * i], leaves[2 * i + 1])).collect();
    let [w_mu, w_sigma, b_sigma, prior_logits, means, log_vars, relations] =
        std::array::from_fn(|i| leaves[2 * nl + i]);
    let projection = p.projection.as_ref().map(|_| leaves[2 * nl + 7]);

    let xt = g.leaf(x_t(data, draws, &schedule, state.diffusion));
    let mu = g.matmul(xt, w_mu);
    let ls = g.matmul(xt, w_sigma);
    let ls = g.add(ls, b_sigma);
    if g.value(ls).iter().any(|&s| !(s <= MAX_LOG_SIGMA)) {
        return Err(Error::Train("latent scale overflow (log sigma above 30) in L_clu".into()));
    }
    let sigma = g.exp(ls);
    let z0 = g.leaf(draws.z0.clone());
    let noise = g.mul(sigma, z0);
    let omega = g.add(mu, noise);

    let labels: Vec<usize> = draws.rows.iter().map(|&r| data.labels[r]).collect();
    let l_clu = clustering_loss_graph(&mut g, omega, prior_logits, means, log_vars, &labels);
    let l_side = side_loss_graph(&mut g, omega, &draws.pairs, draws.pairs.len());
    let l_diff = if state.diffusion {
        let x0 = data.h.select(Axis(0), &draws.rows);
        Some(diffusion_loss_graph(&mut g, &x0, &p.net, &net_params, &schedule, &draws.diffusion))
    } else {
        None
    };
    let l_kge = if stage == Stage::Two && w.kge != 0.0 {
        let entities = match state.canonical {
            CanonicalSource::ClusterMean => g.gather(means, draws.canonical.clone()),
            CanonicalSource::OwnLatent => {
                let scaled = g.leaf(data.h * state.mean_scale()?);
                g.matmul(scaled, w_mu)
            }
        };
        let entities = match projection {
            Some(pv) => g.matmul(entities, pv),
            None => entities,
        };
        Some(kge_loss_graph(&mut g, entities, relations, &draws.negatives, state.kge_model, state.margin))
    } else {
        None
    };

    let mut report = LossReport {
        epoch: state.epoch,
        stage: stage.number(),
        l_diff: l_diff.map_or(0.0, |v| g.scalar_value(v)),
        l_clu: g.scalar_value(l_clu),
        l_kge: l_kge.map_or(0.0, |v| g.scalar_value(v)),
        l_side: g.scalar_value(l_side),
        objective: 0.0,
    };
    for (term, value) in [
        (Term::Diff, report.l_diff),
        (Term::Clu, report.l_clu),
        (Term::Kge, report.l_kge),
        (Term::Side, report.l_side),
    ] {
        if !value.is_finite() {
            return Err(Error::Train(format!("{} is non-finite ({value})", term.name())));
        }
    }

    let mut objective = g.scalar(0.0);
    for (weight, term) in [(w.clu, Some(l_clu)), (w.diff, l_diff), (w.side, Some(l_side)), (w.kge, l_kge)] {
        if let (true, Some(t)) = (weight != 0.0, term) {
            let scaled = g.scale(t, weight);
            objective = g.add(objective, scaled);
        }
    }
    report.objective = g.scalar_value(objective);
    Ok(Taped {
        graph: g,
        leaves,
        objective,
        report,
    })
}

fn check_divergence(report: &LossReport, max_loss: f64) -> Result<()> {
    if report.objective.is_finite() && report.objective <= max_loss {
        return Ok(());
    }
    let worst = [
        (Term::Diff, report.l_diff),
        (Term::Clu, report.l_clu),
        (Term::Kge, report.l_kge),
        (Term::Side, report.l_side),
    ]
    .into_iter()
    .fold((Term::Clu, f64::NEG_INFINITY), |a, b| if !(b.1 <= a.1) { b } else { a });
    Err(Error::Train(format!(
        "objective diverged ({}) at epoch {}; largest term {} = {}",
        report.objective,
        report.epoch,
        worst.0.name(),
        worst.1
    )))
}

/// Value of the stage objective for fixed draws.
pub fn evaluate_objective(state: &TrainState, data: &TrainData<'_>, draws: &Draws, stage: Stage) -> Result<LossReport> {
    data.validate()?;
    Ok(tape(state, data, draws, stage)?.report)
}

/// Exact reverse-mode gradients of the stage objective for fixed draws.
pub fn compute_gradients(
    state: &TrainState,
    data: &TrainData<'_>,
    draws: &Draws,
    stage: Stage,
) -> Result<(LossReport, GradientSet)> {
    data.validate()?;
    if draws.rows.is_empty() {
        return Err(Error::Train("empty batch".into()));
    }
    let t = tape(state, data, draws, stage)?;
    let grads = t.graph.backward(t.objective);
    let blocks = state
        .params
        .blocks()
        .into_iter()
        .zip(&t.leaves)
        .map(|((name, _), &v)| (name, grads.get(v)))
        .collect();
    Ok((t.report, GradientSet { blocks }))
}

/// Optimization settings for one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Phrases per batch; 0 trains on the full set.
    pub batch_size: usize,
    pub n_neg: usize,
    pub optimizer: OptimizerKind,
    pub max_loss: f64,
}

impl StageConfig {
    pub fn stage_one() -> Self {
        StageConfig {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 0,
            n_neg: 20,
            optimizer: OptimizerKind::Sgd,
            max_loss: 1e6,
        }
    }

    pub fn stage_two() -> Self {
        StageConfig {
            learning_rate: 1e-5,
            ..Self::stage_one()
        }
    }
}

fn batches(state: &TrainState, n: usize, batch_size: usize, epoch: usize) -> Vec<Vec<usize>> {
    if batch_size == 0 || batch_size >= n {
        return vec![(0..n).collect()];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(state.seed, epoch, 0, STREAM_SHUFFLE));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn run_stage(
    mut state: TrainState,
    data: &TrainData<'_>,
    config: &StageConfig,
    stage: Stage,
) -> Result<(TrainState, Vec<LossReport>)> {
    data.validate()?;
    if !(config.learning_rate > 0.0) {
        return Err(Error::Train(format!("learning rate must be positive, got {}", config.learning_rate)));
    }
    if stage == Stage::Two && config.n_neg == 0 && state.weights.kge != 0.0 {
        return Err(Error::Train("stage 2 needs at least one negative per triple".into()));
    }
    state.optimizer = OptimizerState::new(config.optimizer);
    let n = data.h.nrows();
    let triples = data.corpus.triples();
    let mut reports = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let epoch = state.epoch;
        let groups = batches(&state, n, config.batch_size, epoch);
        let chunk = triples.len().div_ceil(groups.len()).max(1);
        let mut epoch_reports = Vec::with_capacity(groups.len());
        for (b, rows) in groups.into_iter().enumerate() {
            let lo = (b * chunk).min(triples.len());
            let hi = ((b + 1) * chunk).min(triples.len());
            let draws = Draws::sample(&state, data, rows, &triples[lo..hi], stage, config.n_neg, epoch, b)?;
            let (report, grads) = compute_gradients(&state, data, &draws, stage)?;
            check_divergence(&report, config.max_loss)?;
            state.optimizer.apply(&mut state.params, &grads, config.learning_rate);
            state.params.check_finite()?;
            epoch_reports.push(report);
        }
        let report = LossReport::mean(&epoch_reports);
        log::debug!(
            "stage {} epoch {epoch}: objective {:.6} (clu {:.4}, diff {:.4}, side {:.4}, kge {:.4})",
            stage.number(),
            report.objective,
            report.l_clu,
            report.l_diff,
            report.l_side,
            report.l_kge
        );
        reports.push(report);
        state.epoch += 1;
    }
    Ok((state, reports))
}

/// Stage-1 descent on clustering, diffusion and side-information terms.
pub fn stage_one(state: TrainState, data: &TrainData<'_>, config: &StageConfig) -> Result<(TrainState, Vec<LossReport>)> {
    run_stage(state, data, config, Stage::One)
}

/// Stage-2 descent adding the KGE term, with canonical embeddings refreshed
/// from the current argmax posteriors every epoch.
pub fn stage_two(state: TrainState, data: &TrainData<'_>, config: &StageConfig) -> Result<(TrainState, Vec<LossReport>)> {
    run_stage(state, data, config, Stage::Two)
}

/// Draws over the full phrase set and every triple, as used by a full-batch epoch.
pub fn full_batch_draws(state: &TrainState, data: &TrainData<'_>, stage: Stage, n_neg: usize, epoch: usize) -> Result<Draws> {
    Draws::sample(
        state,
        data,
        (0..data.h.nrows()).collect(),
        data.corpus.triples(),
        stage,
        n_neg,
        epoch,
        0,
    )
}

/// Largest relative error of one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_gradient: f64,
    pub checked: usize,
}

/// Floor on the relative-error denominator, so components whose true
/// gradient is below round-off are compared in absolute terms.
pub const GRADCHECK_DENOM_FLOOR: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|, GRADCHECK_DENOM_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADCHECK_DENOM_FLOOR)
}

/// Compares analytic gradients with central differences of step `eps` on
/// every parameter component (or a strided subset when `stride > 1`).
pub fn gradient_check(
    state: &TrainState,
    data: &TrainData<'_>,
    draws: &Draws,
    stage: Stage,
    eps: f64,
    stride: usize,
) -> Result<Vec<BlockCheck>> {
    let (_, grads) = compute_gradients(state, data, draws, stage)?;
    let mut probe = state.clone();
    let mut out = Vec::new();
    for (bi, (name, analytic)) in grads.blocks.iter().enumerate() {
        let mut worst = 0.0_f64;
        let mut largest = 0.0_f64;
        let mut checked = 0;
        for k in (0..analytic.len()).step_by(stride.max(1)) {
            let orig = {
                let block = &mut probe.params.blocks_mut()[bi];
                let slot = block.as_slice_mut().expect("standard layout");
                let o = slot[k];
                slot[k] = o + eps;
                o
            };
            let up = tape(&probe, data, draws, stage)?.report.objective;
            probe.params.blocks_mut()[bi].as_slice_mut().expect("standard layout")[k] = orig - eps;
            let down = tape(&probe, data, draws, stage)?.report.objective;
            probe.params.blocks_mut()[bi].as_slice_mut().expect("standard layout")[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.as_slice().expect("standard layout")[k];
            worst = worst.max(relative_error(a, numeric));
            largest = largest.max(a.abs());
            checked += 1;
        }
        out.push(BlockCheck {
            name: name.clone(),
            max_rel_error: worst,
            max_abs_gradient: largest,
            checked,
        });
    }
    Ok(out)
}
