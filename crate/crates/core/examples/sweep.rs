//! Average F1 as a function of the diffusion-loss weight and of the word
//! vector width, printed as CSV.

use okb_canon::pipeline::{sweep, sweep_csv, Inputs, RunConfig, SweepAxis};
use okb_canon::synthetic::{generate, SyntheticConfig};

fn main() -> okb_canon::Result<()> {
    let data = generate(&SyntheticConfig {
        entities: 20,
        triples: 120,
        ..SyntheticConfig::default()
    })?;
    let inputs = Inputs::from_synthetic(&data);
    let config = RunConfig {
        dim: data.vectors.dim(),
        epochs_stage1: 20,
        epochs_stage2: 20,
        ..RunConfig::default()
    };
    let weights = sweep(&inputs, &config, SweepAxis::DiffusionWeight, &[0.2, 0.4, 0.6, 0.8])?;
    print!("{}", sweep_csv(&weights));
    // narrower widths are prefixes of the generated vectors
    let dims = sweep(&inputs, &config, SweepAxis::Dim, &[8.0, 16.0, 32.0])?;
    print!("{}", sweep_csv(&dims));
    Ok(())
}
