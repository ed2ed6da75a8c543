//! Threshold-cut agglomerative clustering under the three linkages.

use ndarray::array;
use okb_canon::hac::{hac_cluster, Linkage};

fn main() -> okb_canon::Result<()> {
    let vectors = array![
        [1.0, 0.05, 0.0],
        [0.98, 0.1, 0.0],
        [0.9, 0.3, 0.1],
        [0.0, 1.0, 0.1],
        [0.1, 0.95, 0.0],
        [0.0, 0.0, 1.0],
    ];
    for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average] {
        for threshold in [0.0, 0.05, 0.3, 2.0] {
            let a = hac_cluster(&vectors, linkage, threshold)?;
            println!("{linkage:?} @ {threshold}: {} clusters {:?}", a.num_clusters(), a.clusters());
        }
    }
    Ok(())
}
