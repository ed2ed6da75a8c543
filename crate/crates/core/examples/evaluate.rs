//! Macro, micro and pairwise scores for a predicted clustering, in memory and
//! from files.

use std::fs;

use okb_canon::metrics::evaluate_items;
use okb_canon::pipeline::{evaluate_files, metrics_json};

fn main() -> okb_canon::Result<()> {
    // (predicted cluster, gold entity) per phrase: gold {a, b}, {c}; one predicted cluster
    let items = [(0, "ab"), (0, "ab"), (0, "c")];
    let m = evaluate_items(&items)?;
    print!("{}", metrics_json(&m));

    let dir = std::env::temp_dir().join("okb-canon-example-evaluate");
    fs::create_dir_all(&dir).expect("temp dir");
    let pred = dir.join("clusters.tsv");
    let gold = dir.join("gold.tsv");
    fs::write(&pred, "Obama\tBarack Obama\nUS\tUnited States\tUSA\nHonolulu\n").expect("write");
    fs::write(
        &gold,
        "Obama\tobama\nBarack Obama\tobama\nUS\tusa\nUnited States\tusa\nUSA\tusa\nHonolulu\thonolulu\n",
    )
    .expect("write");
    let m = evaluate_files(&pred, &gold)?;
    println!("file-based average F1 {:.4}", m.average_f1);
    Ok(())
}
