//! Noise schedule, the forward chain against its closed-form marginal,
//! reparameterized latents and one reverse step.

use ndarray::{Array1, Array2};
use okb_canon::diffusion::{
    forward_chain, make_schedule, marginal, reverse_step_noiseless, sample_latent, LatentHeads, NoiseNet,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> okb_canon::Result<()> {
    let schedule = make_schedule(2, 1e-4, 0.02)?;
    println!("alpha_bar_T = {:.6}", schedule.alpha_bar(2));

    let x0 = Array1::from(vec![1.0, -2.0, 0.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let mut draws = Array2::zeros((n, x0.len()));
    for mut row in draws.rows_mut() {
        row.assign(&forward_chain(x0.view(), &schedule, &mut rng));
    }
    let mean = draws.mean_axis(ndarray::Axis(0)).expect("rows");
    let var = draws.var_axis(ndarray::Axis(0), 0.0);
    let expected = marginal(x0.view(), 2, &schedule, Array1::zeros(3).view());
    println!("chain mean {mean:.4} vs {expected:.4}");
    println!("chain var  {var:.5} vs {:.5}", 1.0 - schedule.alpha_bar(2));

    let heads = LatentHeads::identity(3, -3.0);
    let omega = sample_latent(x0.view(), &heads, &mut rng)?;
    println!("omega {omega:.4}");

    let net = NoiseNet::new(3, 2, &[6, 6], &mut rng);
    let x_t = forward_chain(x0.view(), &schedule, &mut rng);
    println!("x_2 {x_t:.4} -> x_1 {:.4}", reverse_step_noiseless(x_t.view(), 2, &net, &schedule));
    Ok(())
}
