//! Phrase vectors from a word-vector table: token averaging, the hashed
//! fallback for unknown tokens, and neighbor augmentation.

use okb_canon::corpus::{neighbor_index, Corpus};
use okb_canon::embedding::{augment, parse_vectors, phrase_embedding, phrase_table};

fn main() -> okb_canon::Result<()> {
    let text = "barack 1 0 0 0\nobama 0 1 0 0\nhonolulu 0 0 1 0\nhawaii 0 0 0.5 0.5\n";
    let (store, skipped) = parse_vectors(text, 4, true)?;
    println!("{} vectors of dimension {} ({skipped} skipped)", store.len(), store.dim());

    println!("barack obama   {:?}", phrase_embedding("barack obama", &store));
    // every token unknown: a deterministic unit direction scaled to the mean norm
    let oov = phrase_embedding("zanzibar", &store);
    let norm = oov.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("zanzibar       norm {norm:.4} (mean norm {:.4})", store.mean_norm());

    let (corpus, _) = Corpus::from_rows([
        ("barack obama", "born in", "honolulu", None),
        ("obama", "lived in", "hawaii", None),
    ]);
    let e = phrase_table(&corpus, &store);
    let table = augment(&e, &neighbor_index(&corpus), true)?;
    println!("e is {:?}, h is {:?}", table.e.dim(), table.h.dim());
    for (id, surface) in corpus.phrases().iter() {
        println!("{surface:>13} h = {:.2}", table.h.row(id));
    }
    Ok(())
}
