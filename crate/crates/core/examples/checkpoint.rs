//! Train stage one, save a checkpoint, reload it and check that inference
//! gives the same clusters.

use okb_canon::pipeline::{prepare, Inputs, RunConfig};
use okb_canon::synthetic::{generate, SyntheticConfig};
use okb_canon::trainer::{infer_clusters, stage_one, ModelSpec, StageConfig, TrainData, TrainState};

fn main() -> okb_canon::Result<()> {
    let data = generate(&SyntheticConfig::toy(1))?;
    let inputs = Inputs::from_synthetic(&data);
    let config = RunConfig {
        dim: data.vectors.dim(),
        hac_threshold: 0.5,
        ..RunConfig::default()
    };
    let prep = prepare(&inputs, &config)?;
    let train = TrainData {
        corpus: &inputs.corpus,
        h: &prep.h,
        labels: prep.hac.labels(),
        pairs: &prep.pairs,
    };
    let state = TrainState::init(&prep.h, &prep.hac, inputs.corpus.num_relations(), &ModelSpec::default())?;
    let (state, reports) = stage_one(state, &train, &StageConfig { epochs: 10, ..StageConfig::stage_one() })?;
    println!("stage one objective {:.4} -> {:.4}", reports[0].objective, reports[9].objective);

    let path = std::env::temp_dir().join("okb-canon-example-checkpoint.json");
    state.save(&path)?;
    let back = TrainState::load(&path)?;
    println!("{} scalars round-tripped exactly: {}", back.params.num_scalars(), back == state);
    println!(
        "same clusters after reload: {}",
        infer_clusters(&back, &prep.h)? == infer_clusters(&state, &prep.h)?
    );
    Ok(())
}
