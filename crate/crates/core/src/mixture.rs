//! Diagonal Gaussian mixture over latents: initialization from a hard
//! clustering, soft cluster posteriors and the weak-label clustering loss.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::hac::ClusterAssignment;

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-4;

/// Lower clamp applied to posterior probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mixture parameters in their trainable form: priors through unnormalized
/// logits, variances through their logarithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    /// `1 x K`; `p(c) = softmax(prior_logits)_c`.
    pub prior_logits: Array2<f64>,
    /// `K x d`.
    pub means: Array2<f64>,
    /// `K x d`; `sigma_c^2 = exp(log_vars)`.
    pub log_vars: Array2<f64>,
    pub variance_floor: f64,
}

impl MixtureParams {
    pub fn num_clusters(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn priors(&self) -> Array1<f64> {
        let logits = self.prior_logits.row(0);
        let m = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let e = logits.mapv(|x| (x - m).exp());
        let z = e.sum();
        e / z
    }

    pub fn log_priors(&self) -> Array1<f64> {
        let logits = self.prior_logits.row(0);
        let m = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        logits.mapv(|x| x - lse)
    }

    pub fn variances(&self) -> Array2<f64> {
        self.log_vars.mapv(f64::exp)
    }

    /// Re-imposes the variance floor after a parameter update.
    pub fn enforce_floor(&mut self) {
        let lf = self.variance_floor.ln();
        self.log_vars.mapv_inplace(|s| s.max(lf));
    }
}

/// Priors from cluster sizes, means and floored per-dimension population
/// variances from the member latents.
pub fn init_mixture(assignment: &ClusterAssignment, latents: &Array2<f64>, floor: f64) -> Result<MixtureParams> {
    if assignment.is_empty() {
        return Err(Error::Mixture("empty cluster assignment".into()));
    }
    if latents.nrows() != assignment.len() {
        return Err(Error::Mixture(format!(
            "{} latents for {} assigned phrases",
            latents.nrows(),
            assignment.len()
        )));
    }
    if !(floor > 0.0) {
        return Err(Error::Mixture("variance floor must be positive".into()));
    }
    let n = assignment.len() as f64;
    let k = assignment.num_clusters();
    let d = latents.ncols();
    let mut prior_logits = Array2::zeros((1, k));
    let mut means = Array2::zeros((k, d));
    let mut log_vars = Array2::zeros((k, d));
    for (c, members) in assignment.clusters().iter().enumerate() {
        let rows = latents.select(Axis(0), members);
        let m = members.len() as f64;
        let mean = rows.sum_axis(Axis(0)) / m;
        let var = rows
            .rows()
            .into_iter()
            .fold(Array1::<f64>::zeros(d), |acc, r| acc + (&r - &mean).mapv(|x| x * x))
            / m;
        prior_logits[[0, c]] = (m / n).ln();
        means.row_mut(c).assign(&mean);
        log_vars.row_mut(c).assign(&var.mapv(|v| v.max(floor).ln()));
    }
    Ok(MixtureParams {
        prior_logits,
        means,
        log_vars,
        variance_floor: floor,
    })
}

/// `log p(c) + log N(omega; mu_c, diag sigma_c^2)` for every cluster.
pub fn log_joint(omega: ArrayView1<'_, f64>, params: &MixtureParams) -> Array1<f64> {
    let lp = params.log_priors();
    Array1::from_shape_fn(params.num_clusters(), |c| {
        let mut acc = 0.0;
        for j in 0..params.dim() {
            let s = params.log_vars[[c, j]];
            let diff = omega[j] - params.means[[c, j]];
            acc += LN_2PI + s + diff * diff * (-s).exp();
        }
        lp[c] - 0.5 * acc
    })
}

/// Cluster posterior `v(c)`, normalized in log space.
pub fn posterior(omega: ArrayView1<'_, f64>, params: &MixtureParams) -> Result<Array1<f64>> {
    if omega.len() != params.dim() {
        return Err(Error::Mixture(format!(
            "latent has dimension {}, mixture expects {}",
            omega.len(),
            params.dim()
        )));
    }
    let lj = log_joint(omega, params);
    let m = lj.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    if !m.is_finite() {
        return Err(Error::Mixture("all cluster log-densities are non-finite".into()));
    }
    let e = lj.mapv(|x| (x - m).exp());
    let z = e.sum();
    Ok(e / z)
}

/// Row-wise [`posterior`] for a batch of latents.
pub fn posteriors(latents: &Array2<f64>, params: &MixtureParams) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((latents.nrows(), params.num_clusters()));
    for (i, row) in latents.rows().into_iter().enumerate() {
        out.row_mut(i).assign(&posterior(row, params)?);
    }
    Ok(out)
}

/// Mean cross-entropy `-(1/n) sum_i log v_i(label_i)` with `v` floored at
/// [`PROB_FLOOR`].
pub fn clustering_loss(posteriors: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if posteriors.nrows() != labels.len() {
        return Err(Error::Mixture("one weak label per posterior row required".into()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let k = posteriors.ncols();
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Mixture(format!("label {l} out of range for {k} clusters")));
        }
        total -= posteriors[[i, l]].max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Taped log-posterior `n x K` for latents `omega`.
pub fn log_posterior_graph(g: &mut Graph, omega: Var, prior_logits: Var, means: Var, log_vars: Var) -> Var {
    let ll = g.gauss_log_joint(omega, means, log_vars);
    let lp = g.log_softmax_rows(prior_logits);
    let joint = g.add(ll, lp);
    g.log_softmax_rows(joint)
}

/// Taped [`clustering_loss`].
pub fn clustering_loss_graph(
    g: &mut Graph,
    omega: Var,
    prior_logits: Var,
    means: Var,
    log_vars: Var,
    labels: &[usize],
) -> Var {
    let lv = log_posterior_graph(g, omega, prior_logits, means, log_vars);
    let picked = g.pick(lv, labels.to_vec());
    let floored = g.clamp_min(picked, PROB_FLOOR.ln());
    let m = g.mean(floored);
    g.scale(m, -1.0)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn singletons() {
        let a = ClusterAssignment::from_labels(&[0, 1]);
        let lat = array![[1.0, 2.0], [3.0, -1.0]];
        let m = init_mixture(&a, &lat, 1e-4).unwrap();
        assert!((m.priors()[0] - 0.5).abs() < 1e-15);
        assert_eq!(m.means, lat);
        for v in m.variances() {
            assert!((v - 1e-4).abs() < 1e-18);
        }
    }

    #[test]
    fn identical_members_floor() {
        let a = ClusterAssignment::from_labels(&[0, 0, 0, 0]);
        let lat = Array2::from_elem((4, 3), 0.7);
        let m = init_mixture(&a, &lat, 1e-4).unwrap();
        assert!(m.variances().iter().all(|&v| (v - 1e-4).abs() < 1e-18));
    }

    #[test]
    fn empty_assignment_is_error() {
        let a = ClusterAssignment::from_labels(&[]);
        assert!(init_mixture(&a, &Array2::zeros((0, 2)), 1e-4).is_err());
    }

    #[test]
    fn single_cluster_posterior_is_one() {
        let a = ClusterAssignment::from_labels(&[0, 0]);
        let m = init_mixture(&a, &array![[0.0], [1.0]], 1e-4).unwrap();
        assert_eq!(posterior(array![5.0].view(), &m).unwrap().to_vec(), vec![1.0]);
    }

    #[test]
    fn symmetric_midpoint() {
        let m = MixtureParams {
            prior_logits: array![[0.3, 0.3]],
            means: array![[-1.0, 0.0], [1.0, 0.0]],
            log_vars: Array2::zeros((2, 2)),
            variance_floor: 1e-4,
        };
        let v = posterior(array![0.0, 5.0].view(), &m).unwrap();
        assert_eq!(v.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn dimension_mismatch() {
        let m = MixtureParams {
            prior_logits: array![[0.0]],
            means: array![[0.0, 0.0]],
            log_vars: Array2::zeros((1, 2)),
            variance_floor: 1e-4,
        };
        assert!(posterior(array![0.0].view(), &m).is_err());
    }

    #[test]
    fn loss_analytic_values() {
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(clustering_loss(&p, &[0, 1]).unwrap(), 0.0);
        let u = Array2::from_elem((3, 4), 0.25);
        assert!((clustering_loss(&u, &[0, 1, 3]).unwrap() - 4f64.ln()).abs() < 1e-15);
        let z = array![[0.0, 1.0]];
        assert!((clustering_loss(&z, &[0]).unwrap() + PROB_FLOOR.ln()).abs() < 1e-12);
        assert!(clustering_loss(&z, &[2]).is_err());
    }

    #[test]
    fn floor_is_enforced() {
        let mut m = MixtureParams {
            prior_logits: array![[0.0]],
            means: array![[0.0]],
            log_vars: array![[-50.0]],
            variance_floor: 1e-4,
        };
        m.enforce_floor();
        assert!((m.variances()[[0, 0]] - 1e-4).abs() < 1e-16);
    }
}
