//! Gaussian mixture over latents: HAC-style initialization, posteriors and
//! the clustering loss against weak labels.

use ndarray::array;
use okb_canon::hac::ClusterAssignment;
use okb_canon::mixture::{clustering_loss, init_mixture, posteriors, DEFAULT_VARIANCE_FLOOR};

fn main() -> okb_canon::Result<()> {
    let latents = array![[0.0, 0.0], [0.2, -0.1], [-0.1, 0.1], [3.0, 3.0], [3.2, 2.9], [5.0, -1.0]];
    let labels = ClusterAssignment::from_labels(&[0, 0, 0, 1, 1, 2]);
    let params = init_mixture(&labels, &latents, DEFAULT_VARIANCE_FLOOR)?;
    println!("priors {:.3}", params.priors());
    println!("means\n{:.3}", params.means);
    println!("variances\n{:.4}", params.variances());

    let probe = array![[0.1, 0.0], [1.5, 1.5], [4.0, 1.0]];
    println!("posteriors\n{:.4}", posteriors(&probe, &params)?);

    let v = posteriors(&latents, &params)?;
    println!("L_clu on the training latents: {:.3e}", clustering_loss(&v, labels.labels())?);
    Ok(())
}
