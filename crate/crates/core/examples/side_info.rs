//! Candidate equivalent pairs from the four side-information sources and the
//! pairwise loss they induce on a latent table.

use okb_canon::corpus::Corpus;
use okb_canon::side_info::{candidate_pairs, idf_overlap, morph_normalize, side_loss, SideResources, Source, TokenStats};

fn main() -> okb_canon::Result<()> {
    let (corpus, _) = Corpus::from_rows([
        ("the Beatles", "released", "Abbey Road", None),
        ("Beatles", "recorded", "Abbey Road album", None),
        ("Fab Four", "formed in", "Liverpool", None),
        ("John Lennon", "member of", "Beatles", None),
    ]);
    let stats = TokenStats::build(&corpus);
    let id = |s: &str| corpus.phrase_id(s).expect("phrase");

    println!("morph: {:?} -> {:?}", "the Beatles", morph_normalize("the Beatles"));
    println!(
        "idf overlap(Abbey Road, Abbey Road album) = {:.4}",
        idf_overlap(id("Abbey Road"), id("Abbey Road album"), &stats)
    );

    let res = SideResources {
        paraphrases: vec![("Fab Four".into(), "Beatles".into())],
        entity_links: vec![("the Beatles".into(), "Q1299".into()), ("Beatles".into(), "Q1299".into())],
    };
    let pairs = candidate_pairs(&res, &corpus, &stats, 0.5)?;
    for source in Source::ALL {
        for (a, b, w) in pairs.by_source(source) {
            println!("{source:?}: {} ~ {} ({w:.3})", corpus.phrase(a), corpus.phrase(b));
        }
    }

    let n = corpus.num_phrases();
    let latents = ndarray::Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64 * 0.1);
    println!("L_side on a ramp table: {:.4}", side_loss(&latents, &pairs));
    Ok(())
}
