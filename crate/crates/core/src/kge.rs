//! Knowledge-graph embedding scores and losses (HolE and TransE) with
//! head/tail-corrupting negative sampling.

use std::cell::RefCell;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::corpus::{Corpus, PhraseId, Triple};
use crate::error::{Error, Result};
use crate::hac::ClusterAssignment;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft(x: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(x.len()).process(&mut buf));
    buf
}

fn ifft_real(mut buf: Vec<Complex<f64>>) -> Vec<f64> {
    let n = buf.len();
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n).process(&mut buf));
    buf.into_iter().map(|c| c.re / n as f64).collect()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Kge(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Kge("empty vectors".into()));
    }
    Ok(())
}

/// `out[k] = sum_i a[i] * b[(k + i) mod d]`, computed in the frequency domain.
pub fn circular_correlation(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_dims(a, b)?;
    let (fa, fb) = (fft(a), fft(b));
    Ok(ifft_real(fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect()))
}

/// Direct `O(d^2)` evaluation of [`circular_correlation`].
pub fn circular_correlation_direct(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_dims(a, b)?;
    let d = a.len();
    Ok((0..d)
        .map(|k| (0..d).map(|i| a[i] * b[(k + i) % d]).sum())
        .collect())
}

/// `out[k] = sum_i a[i] * b[(k - i) mod d]`; the adjoint partner of correlation.
pub fn circular_convolution(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_dims(a, b)?;
    let (fa, fb) = (fft(a), fft(b));
    Ok(ifft_real(fa.iter().zip(&fb).map(|(x, y)| x * y).collect()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Unsquashed HolE score `r · corr(h, t)`.
pub fn hole_raw(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    let c = circular_correlation(h, t)?;
    check_dims(r, &c)?;
    Ok(dot(r, &c))
}

/// HolE plausibility `sigmoid(r · corr(h, t))`.
pub fn hole_score(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    hole_raw(h, r, t).map(sigmoid)
}

/// `||h + r - t||_2`.
pub fn transe_distance(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    check_dims(h, r)?;
    check_dims(h, t)?;
    Ok(h.iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| (h + r - t).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// TransE score `-||h + r - t||_2`; higher is more plausible.
pub fn transe_score(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    transe_distance(h, r, t).map(|d| -d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KgeModel {
    #[default]
    Hole,
    Transe,
}

impl FromStr for KgeModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hole" => Ok(KgeModel::Hole),
            "transe" => Ok(KgeModel::Transe),
            other => Err(Error::Config(format!("unknown kge model `{other}`"))),
        }
    }
}

/// Relation embeddings and scoring configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgeParams {
    pub model: KgeModel,
    /// One row per relation.
    pub relations: Array2<f64>,
    /// Ranking margin for TransE.
    pub margin: f64,
}

impl KgeParams {
    pub fn dim(&self) -> usize {
        self.relations.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.model == KgeModel::Transe && !(self.margin > 0.0) {
            return Err(Error::Kge(format!("TransE margin must be positive, got {}", self.margin)));
        }
        if self.relations.iter().any(|x| !x.is_finite()) {
            return Err(Error::Kge("non-finite relation embedding".into()));
        }
        Ok(())
    }
}

/// Per-phrase embedding fed to the KGE objective: the mean of the phrase's
/// most probable mixture component, optionally projected.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalEmbedding {
    pub table: Array2<f64>,
}

impl CanonicalEmbedding {
    /// Row `i` is `means[assignment[i]]`, times `projection` when given.
    pub fn from_clusters(
        means: &Array2<f64>,
        assignment: &[usize],
        projection: Option<&Array2<f64>>,
    ) -> Self {
        let rows = means.select(ndarray::Axis(0), assignment);
        let table = match projection {
            Some(p) => rows.dot(p),
            None => rows,
        };
        CanonicalEmbedding { table }
    }

    pub fn row(&self, phrase: PhraseId) -> ArrayView1<'_, f64> {
        self.table.row(phrase.0)
    }
}

/// A positive triple with its corrupted counterparts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSet {
    pub positive: Triple,
    pub negatives: Vec<Triple>,
}

const MAX_RETRIES: usize = 32;

/// Draws `n` corruptions of `triple`, each replacing the head or the tail
/// (fair coin) by a different, uniformly drawn phrase. Corruptions that are
/// themselves corpus triples are redrawn up to a bounded number of times.
pub fn sample_negatives<R: Rng + ?Sized>(
    triple: &Triple,
    n: usize,
    corpus: &Corpus,
    rng: &mut R,
) -> Vec<Triple> {
    let m = corpus.num_phrases();
    assert!(m >= 2, "negative sampling needs at least two noun phrases");
    let corrupt = |rng: &mut R| {
        let mut t = *triple;
        let slot = if rng.random_bool(0.5) { &mut t.head } else { &mut t.tail };
        let mut r = rng.random_range(0..m - 1);
        if r >= slot.0 {
            r += 1;
        }
        *slot = PhraseId(r);
        t
    };
    (0..n)
        .map(|_| {
            let mut cand = corrupt(rng);
            for _ in 0..MAX_RETRIES {
                if !corpus.contains(&cand) {
                    break;
                }
                cand = corrupt(rng);
            }
            cand
        })
        .collect()
}

/// Negative sets for every corpus triple, in corpus order.
pub fn draw_negative_sets<R: Rng + ?Sized>(corpus: &Corpus, n_neg: usize, rng: &mut R) -> Vec<NegativeSet> {
    corpus
        .triples()
        .iter()
        .map(|t| NegativeSet {
            positive: *t,
            negatives: sample_negatives(t, n_neg, corpus, rng),
        })
        .collect()
}

fn row<'a>(table: &'a Array2<f64>, i: usize) -> &'a [f64] {
    table.row(i).to_slice().expect("standard layout")
}

/// KGE loss over prepared negative sets.
///
/// HolE: mean logistic loss over every positive and negative triple.
/// TransE: mean margin ranking loss over every (positive, negative) pair.
pub fn kge_loss_on(samples: &[NegativeSet], canon: &CanonicalEmbedding, params: &KgeParams) -> Result<f64> {
    let ent = &canon.table;
    if ent.ncols() != params.dim() {
        return Err(Error::Kge(format!(
            "entity dimension {} differs from relation dimension {}",
            ent.ncols(),
            params.dim()
        )));
    }
    let rel = &params.relations;
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        let p = s.positive;
        match params.model {
            KgeModel::Hole => {
                let raw = hole_raw(row(ent, p.head.0), row(rel, p.relation.0), row(ent, p.tail.0))?;
                total += softplus(-raw);
                count += 1;
                for n in &s.negatives {
                    let raw = hole_raw(row(ent, n.head.0), row(rel, n.relation.0), row(ent, n.tail.0))?;
                    total += softplus(raw);
                    count += 1;
                }
            }
            KgeModel::Transe => {
                let dp = transe_distance(row(ent, p.head.0), row(rel, p.relation.0), row(ent, p.tail.0))?;
                for n in &s.negatives {
                    let dn = transe_distance(row(ent, n.head.0), row(rel, n.relation.0), row(ent, n.tail.0))?;
                    total += (params.margin + dp - dn).max(0.0);
                    count += 1;
                }
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Samples `n_neg` corruptions per corpus triple and evaluates the loss.
pub fn kge_loss<R: Rng + ?Sized>(
    corpus: &Corpus,
    canon: &CanonicalEmbedding,
    params: &KgeParams,
    n_neg: usize,
    rng: &mut R,
) -> Result<f64> {
    let samples = draw_negative_sets(corpus, n_neg, rng);
    kge_loss_on(&samples, canon, params)
}

/// Argmax-cluster canonical embedding for a hard assignment.
pub fn canonical_from_assignment(
    means: &Array2<f64>,
    assignment: &ClusterAssignment,
    projection: Option<&Array2<f64>>,
) -> CanonicalEmbedding {
    CanonicalEmbedding::from_clusters(means, assignment.labels(), projection)
}

/// Taped [`kge_loss_on`] with `entities` (`n x d`) and `relations` leaves.
pub fn kge_loss_graph(
    g: &mut Graph,
    entities: Var,
    relations: Var,
    samples: &[NegativeSet],
    model: KgeModel,
    margin: f64,
) -> Var {
    if samples.is_empty() {
        return g.scalar(0.0);
    }
    let mut triples = Vec::new();
    let mut signs = Vec::new();
    // (positive row, negative row) for ranking losses
    let mut ranked = Vec::new();
    for s in samples {
        let pos_row = triples.len();
        triples.push(s.positive);
        signs.push(-1.0);
        for n in &s.negatives {
            ranked.push((pos_row, triples.len()));
            triples.push(*n);
            signs.push(1.0);
        }
    }
    let h = g.gather(entities, triples.iter().map(|t| t.head.0).collect());
    let t = g.gather(entities, triples.iter().map(|t| t.tail.0).collect());
    let r = g.gather(relations, triples.iter().map(|t| t.relation.0).collect());
    match model {
        KgeModel::Hole => {
            let corr = g.circ_corr_rows(h, t);
            let prod = g.mul(r, corr);
            let raw = g.sum_rows(prod);
            let sign = g.leaf(Array2::from_shape_vec((signs.len(), 1), signs).expect("column"));
            let signed = g.mul(raw, sign);
            let sp = g.softplus(signed);
            g.mean(sp)
        }
        KgeModel::Transe => {
            if ranked.is_empty() {
                return g.scalar(0.0);
            }
            let hr = g.add(h, r);
            let diff = g.sub(hr, t);
            let sq = g.mul(diff, diff);
            let ss = g.sum_rows(sq);
            let dist = g.sqrt(ss);
            let dp = g.gather(dist, ranked.iter().map(|p| p.0).collect());
            let dn = g.gather(dist, ranked.iter().map(|p| p.1).collect());
            let gap = g.sub(dp, dn);
            let m = g.scalar(margin);
            let shifted = g.add(gap, m);
            let hinge = g.relu(shifted);
            g.mean(hinge)
        }
    }
}
