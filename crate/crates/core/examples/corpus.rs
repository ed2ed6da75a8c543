//! Ingest a tiny triple file, look at the interned phrases, the dropped
//! duplicates and the symmetric neighbor index.

use std::fs;

use okb_canon::corpus::{load_gold, load_triples, neighbor_index, PhraseId};

fn main() -> okb_canon::Result<()> {
    let dir = std::env::temp_dir().join("okb-canon-example-corpus");
    fs::create_dir_all(&dir).expect("temp dir");
    let triples = dir.join("triples.tsv");
    let gold = dir.join("gold.tsv");
    fs::write(
        &triples,
        "Barack Obama\twas born in\tHonolulu\tt1\n\
         Obama\tgrew up in\tHonolulu\tt2\n\
         Obama\twas president of\tUnited States\tt3\n\
         Obama\tgrew up in\tHonolulu\tt4\n\
         the US\thas capital\tWashington\tt5\n",
    )
    .expect("write triples");
    fs::write(
        &gold,
        "Barack Obama\tobama\nObama\tobama\nHonolulu\thonolulu\nUnited States\tusa\nthe US\tusa\nWashington\tdc\n",
    )
    .expect("write gold");

    let corpus = load_triples(&triples)?;
    println!(
        "{} triples, {} phrases, {} relations",
        corpus.triples().len(),
        corpus.num_phrases(),
        corpus.num_relations()
    );

    let neighbors = neighbor_index(&corpus);
    for (id, surface) in corpus.phrases().iter() {
        let names: Vec<&str> = neighbors.neighbors(PhraseId(id)).iter().map(|&n| corpus.phrase(n)).collect();
        println!("{surface:>14} -> {}", names.join(", "));
    }

    let labels = load_gold(&gold, &corpus, true)?;
    println!("{} gold labels", labels.len());
    Ok(())
}
