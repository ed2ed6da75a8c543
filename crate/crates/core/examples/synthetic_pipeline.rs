//! End to end on generated data: the full two-stage model, its ablations and
//! the HAC-only baseline.
//!
//! `cargo run --release --example synthetic_pipeline [seed]`

use std::time::Instant;

use okb_canon::pipeline::{run, Inputs, RunConfig};
use okb_canon::synthetic::{generate, SyntheticConfig};

fn main() -> okb_canon::Result<()> {
    let seed = std::env::args().nth(1).map_or(7, |s| s.parse().expect("seed"));
    let data = generate(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })?;
    let inputs = Inputs::from_synthetic(&data);
    println!(
        "{} phrases, {} triples, {} gold entities, centroid spacing {:.3}",
        inputs.corpus.num_phrases(),
        inputs.corpus.triples().len(),
        data.centroids.nrows(),
        data.spacing
    );

    let base = RunConfig {
        dim: data.vectors.dim(),
        ..RunConfig::default()
    };
    let variants = [
        ("full", base.clone()),
        ("w/o diffusion", RunConfig { without_diffusion: true, ..base.clone() }),
        ("w/o neighbor", RunConfig { without_neighbor: true, ..base.clone() }),
        ("w/o side info", RunConfig { without_side_info: true, ..base.clone() }),
        ("TransE", RunConfig { transe: true, ..base.clone() }),
    ];
    let mut hac_line = None;
    for (name, config) in variants {
        let start = Instant::now();
        let out = run(&inputs, &config)?;
        let m = out.metrics.expect("synthetic data has gold labels");
        println!(
            "{name:<14} macro {:.3} micro {:.3} pair {:.3} avg {:.3}  k={:<3} {:.1}s",
            m.macro_f1,
            m.micro_f1,
            m.pair_f1,
            m.average_f1,
            out.clusters.num_clusters(),
            start.elapsed().as_secs_f64()
        );
        hac_line.get_or_insert((out.hac_metrics.expect("gold"), out.hac.num_clusters()));
    }
    let (h, k) = hac_line.expect("at least one run");
    println!(
        "{:<14} macro {:.3} micro {:.3} pair {:.3} avg {:.3}  k={k}",
        "HAC only", h.macro_f1, h.micro_f1, h.pair_f1, h.average_f1
    );
    Ok(())
}
