//! HolE and TransE scoring, FFT circular correlation against the direct sum,
//! and negative sampling.

use okb_canon::corpus::Corpus;
use okb_canon::kge::{
    circular_correlation, circular_correlation_direct, hole_score, sample_negatives, transe_score,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> okb_canon::Result<()> {
    let a = [0.3, -1.2, 0.8, 0.05, 2.0];
    let b = [1.0, 0.4, -0.7, 0.2, -0.1];
    let fast = circular_correlation(&a, &b)?;
    let slow = circular_correlation_direct(&a, &b)?;
    let diff = fast.iter().zip(&slow).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("a * b = {fast:.4?} (max deviation from direct {diff:.1e})");

    let (h, r, t) = ([0.5, 0.1, -0.3, 0.9], [0.2, 0.7, 0.1, -0.4], [0.4, 0.2, -0.2, 0.8]);
    println!("HolE   sigma(r . (h * t)) = {:.4}", hole_score(&h, &r, &t)?);
    println!("TransE -||h + r - t||     = {:.4}", transe_score(&h, &r, &t)?);

    let (corpus, _) = Corpus::from_rows([
        ("paris", "capital of", "france", None),
        ("berlin", "capital of", "germany", None),
        ("rome", "capital of", "italy", None),
        ("madrid", "capital of", "spain", None),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let positive = corpus.triples()[0];
    for neg in sample_negatives(&positive, 5, &corpus, &mut rng) {
        println!(
            "negative: {} / {}",
            corpus.phrase(neg.head),
            corpus.phrase(neg.tail)
        );
    }
    Ok(())
}
