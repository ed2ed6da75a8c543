//! Equidimensional forward/reverse diffusion over augmented phrase
//! representations, reparameterized latent sampling, and the noise-prediction
//! loss that trains the denoising network.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Largest admissible `log sigma` component before sampling is treated as divergent.
pub const MAX_LOG_SIGMA: f64 = 30.0;

/// Variance schedule `beta_1..beta_T` with `alpha_t = 1 - beta_t` and
/// cumulative products `alpha_bar_t`. Step indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Linear schedule from `beta_start` to `beta_end` over `steps` steps.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Diffusion("need at least one diffusion step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Diffusion(format!(
            "require 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    Ok(NoiseSchedule::from_betas(betas))
}

impl NoiseSchedule {
    fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| StandardNormal.sample(rng))
}

/// Standard-normal matrix of the given shape.
pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// One noising step `x_t = sqrt(alpha_t) x_{t-1} + sqrt(1 - alpha_t) z` with
/// an explicit noise vector.
pub fn forward_step_with(x_prev: ArrayView1<'_, f64>, t: usize, schedule: &NoiseSchedule, z: ArrayView1<'_, f64>) -> Array1<f64> {
    let a = schedule.alpha(t);
    &x_prev * a.sqrt() + &z * (1.0 - a).sqrt()
}

pub fn forward_step<R: Rng + ?Sized>(
    x_prev: ArrayView1<'_, f64>,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Array1<f64> {
    let z = standard_normal(rng, x_prev.len());
    forward_step_with(x_prev, t, schedule, z.view())
}

/// Chains [`forward_step`] for `t = 1..=T` starting from `x0`.
pub fn forward_chain<R: Rng + ?Sized>(x0: ArrayView1<'_, f64>, schedule: &NoiseSchedule, rng: &mut R) -> Array1<f64> {
    let mut x = x0.to_owned();
    for t in 1..=schedule.steps() {
        x = forward_step(x.view(), t, schedule, rng);
    }
    x
}

/// Closed-form marginal `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn marginal(x0: ArrayView1<'_, f64>, t: usize, schedule: &NoiseSchedule, eps: ArrayView1<'_, f64>) -> Array1<f64> {
    let ab = schedule.alpha_bar(t);
    &x0 * ab.sqrt() + &eps * (1.0 - ab).sqrt()
}

/// Linear heads mapping `x_T` to the latent mean and log-scale.
///
/// `mu = x W_mu`, `log sigma = x W_sigma + b_sigma`. The bias lets the scale
/// start small independently of the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentHeads {
    pub w_mu: Array2<f64>,
    pub w_sigma: Array2<f64>,
    /// `1 x d`.
    pub log_sigma_bias: Array2<f64>,
}

impl LatentHeads {
    /// `W_mu = I`, `W_sigma = 0`, constant log-scale `log_sigma`.
    pub fn identity(dim: usize, log_sigma: f64) -> Self {
        LatentHeads {
            w_mu: Array2::eye(dim),
            w_sigma: Array2::zeros((dim, dim)),
            log_sigma_bias: Array2::from_elem((1, dim), log_sigma),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_mu.nrows()
    }

    pub fn mean(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        x.dot(&self.w_mu)
    }

    pub fn log_sigma(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        x.dot(&self.w_sigma) + &self.log_sigma_bias.row(0)
    }
}

/// Reparameterized latent `omega = mu + sigma * z0` with explicit noise.
pub fn sample_latent_with(x_t: ArrayView1<'_, f64>, heads: &LatentHeads, z0: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if x_t.len() != heads.dim() {
        return Err(Error::Diffusion(format!(
            "x_T has dimension {}, heads expect {}",
            x_t.len(),
            heads.dim()
        )));
    }
    let log_sigma = heads.log_sigma(x_t);
    if log_sigma.iter().any(|&s| !(s <= MAX_LOG_SIGMA)) {
        return Err(Error::Diffusion("latent scale overflow: log sigma above 30".into()));
    }
    Ok(heads.mean(x_t) + log_sigma.mapv(f64::exp) * z0)
}

pub fn sample_latent<R: Rng + ?Sized>(x_t: ArrayView1<'_, f64>, heads: &LatentHeads, rng: &mut R) -> Result<Array1<f64>> {
    let z0 = standard_normal(rng, x_t.len());
    sample_latent_with(x_t, heads, z0.view())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`.
    pub w: Array2<f64>,
    /// `1 x out`.
    pub b: Array2<f64>,
}

/// Noise-prediction MLP `f(x_t, t)`: input is `x_t` with a one-hot step
/// code appended, hidden layers use tanh, the output matches `x_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseNet {
    pub layers: Vec<Dense>,
    pub dim: usize,
    pub steps: usize,
}

impl NoiseNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dim: usize, steps: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut widths = vec![dim + steps];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let dist = Uniform::new(-bound, bound).expect("valid bounds");
                Dense {
                    w: Array2::from_shape_fn((w[0], w[1]), |_| dist.sample(rng)),
                    b: Array2::zeros((1, w[1])),
                }
            })
            .collect();
        NoiseNet { layers, dim, steps }
    }

    /// A network that predicts zero for every input.
    pub fn zeros(dim: usize, steps: usize, hidden: &[usize]) -> Self {
        let mut widths = vec![dim + steps];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                w: Array2::zeros((w[0], w[1])),
                b: Array2::zeros((1, w[1])),
            })
            .collect();
        NoiseNet { layers, dim, steps }
    }

    fn input(&self, x: &Array2<f64>, ts: &[usize]) -> Array2<f64> {
        let mut inp = Array2::zeros((x.nrows(), self.dim + self.steps));
        inp.slice_mut(ndarray::s![.., ..self.dim]).assign(x);
        for (i, &t) in ts.iter().enumerate() {
            inp[[i, self.dim + t - 1]] = 1.0;
        }
        inp
    }

    /// Batched prediction; row `i` is conditioned on step `ts[i]`.
    pub fn predict_batch(&self, x: &Array2<f64>, ts: &[usize]) -> Array2<f64> {
        let mut h = self.input(x, ts);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.w) + &layer.b;
            if k < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>, t: usize) -> Array1<f64> {
        let x2 = x.to_owned().insert_axis(Axis(0));
        self.predict_batch(&x2, &[t]).row(0).to_owned()
    }

    /// Taped forward pass; `params` holds `(w, b)` leaves in layer order.
    pub fn forward_graph(&self, g: &mut Graph, params: &[(Var, Var)], x: Var, ts: &[usize]) -> Var {
        let n = g.value(x).nrows();
        let mut code = Array2::zeros((n, self.steps));
        for (i, &t) in ts.iter().enumerate() {
            code[[i, t - 1]] = 1.0;
        }
        let code = g.leaf(code);
        let mut h = g.concat_cols(x, code);
        let last = params.len() - 1;
        for (k, &(w, b)) in params.iter().enumerate() {
            let z = g.matmul(h, w);
            h = g.add(z, b);
            if k < last {
                h = g.tanh(h);
            }
        }
        h
    }
}

/// Denoising step `x_{t-1} = x_t / sqrt(alpha_t) - sqrt(1 - alpha_t) / sqrt(alpha_t) f(x_t, t) + z2`
/// with explicit `z2` (pass zeros for the noiseless variant).
pub fn reverse_step_with(
    x_t: ArrayView1<'_, f64>,
    t: usize,
    net: &NoiseNet,
    schedule: &NoiseSchedule,
    z2: ArrayView1<'_, f64>,
) -> Array1<f64> {
    let a = schedule.alpha(t);
    let pred = net.predict(x_t, t);
    &x_t / a.sqrt() - pred * ((1.0 - a).sqrt() / a.sqrt()) + z2
}

pub fn reverse_step<R: Rng + ?Sized>(
    x_t: ArrayView1<'_, f64>,
    t: usize,
    net: &NoiseNet,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Array1<f64> {
    let z2 = standard_normal(rng, x_t.len());
    reverse_step_with(x_t, t, net, schedule, z2.view())
}

pub fn reverse_step_noiseless(x_t: ArrayView1<'_, f64>, t: usize, net: &NoiseNet, schedule: &NoiseSchedule) -> Array1<f64> {
    let z = Array1::zeros(x_t.len());
    reverse_step_with(x_t, t, net, schedule, z.view())
}

/// Frozen randomness for one evaluation of the diffusion loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionDraws {
    /// Step per row, in `1..=T`.
    pub steps: Vec<usize>,
    /// Injected noise per row.
    pub noise: Array2<f64>,
}

impl DiffusionDraws {
    pub fn sample<R: Rng + ?Sized>(rows: usize, dim: usize, schedule: &NoiseSchedule, rng: &mut R) -> Self {
        let steps = (0..rows).map(|_| rng.random_range(1..=schedule.steps())).collect();
        let noise = normal_matrix(rng, rows, dim);
        DiffusionDraws { steps, noise }
    }
}

fn noised_inputs(x0: &Array2<f64>, draws: &DiffusionDraws, schedule: &NoiseSchedule) -> Array2<f64> {
    let mut xt = Array2::zeros(x0.dim());
    for (i, &t) in draws.steps.iter().enumerate() {
        let row = marginal(x0.row(i), t, schedule, draws.noise.row(i));
        xt.row_mut(i).assign(&row);
    }
    xt
}

/// Mean over the batch of `||f - f_tau(x_t, t)||^2` for the given draws.
pub fn diffusion_loss_with(x0: &Array2<f64>, net: &NoiseNet, schedule: &NoiseSchedule, draws: &DiffusionDraws) -> f64 {
    let xt = noised_inputs(x0, draws, schedule);
    let pred = net.predict_batch(&xt, &draws.steps);
    let diff = &draws.noise - &pred;
    diff.mapv(|x| x * x).sum() / x0.nrows() as f64
}

/// Draws a step and a noise vector per row, then evaluates the loss.
pub fn diffusion_loss<R: Rng + ?Sized>(x0: &Array2<f64>, net: &NoiseNet, schedule: &NoiseSchedule, rng: &mut R) -> Result<f64> {
    if x0.nrows() == 0 {
        return Err(Error::Diffusion("empty batch".into()));
    }
    let draws = DiffusionDraws::sample(x0.nrows(), x0.ncols(), schedule, rng);
    Ok(diffusion_loss_with(x0, net, schedule, &draws))
}

/// Taped [`diffusion_loss_with`]; only the network parameters are trainable.
pub fn diffusion_loss_graph(
    g: &mut Graph,
    x0: &Array2<f64>,
    net: &NoiseNet,
    params: &[(Var, Var)],
    schedule: &NoiseSchedule,
    draws: &DiffusionDraws,
) -> Var {
    let xt = g.leaf(noised_inputs(x0, draws, schedule));
    let pred = net.forward_graph(g, params, xt, &draws.steps);
    let target = g.leaf(draws.noise.clone());
    let diff = g.sub(target, pred);
    let sq = g.mul(diff, diff);
    let total = g.sum(sq);
    g.scale(total, 1.0 / x0.nrows() as f64)
}
