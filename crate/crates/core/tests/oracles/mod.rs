//! Slow, direct reference implementations used as test oracles. Nothing here
//! calls into the library's numeric code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

/// Cosine distance, computed the obvious way.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaiveLinkage {
    Single,
    Complete,
    Average,
}

/// O(n^3) agglomerative clustering: every round recomputes every
/// cluster-to-cluster distance from the point distances. Returns clusters as
/// sorted member lists, ordered by smallest member.
pub fn naive_hac(points: &[Vec<f64>], linkage: NaiveLinkage, threshold: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i][j] = cosine(&points[i], &points[j]);
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut all = Vec::new();
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        all.push(d[i][j]);
                    }
                }
                let dist = match linkage {
                    NaiveLinkage::Single => all.iter().cloned().fold(f64::INFINITY, f64::min),
                    NaiveLinkage::Complete => all.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    NaiveLinkage::Average => all.iter().sum::<f64>() / all.len() as f64,
                };
                let better = match best {
                    None => true,
                    Some((bd, _, _)) => dist < bd,
                };
                if better {
                    best = Some((dist, a, b));
                }
            }
        }
        match best {
            Some((dist, a, b)) if dist <= threshold => {
                let moved = clusters.remove(b);
                clusters[a].extend(moved);
                clusters[a].sort();
            }
            _ => break,
        }
    }
    clusters.sort();
    clusters
}

/// Groups phrase indices by label into sorted member lists ordered by
/// smallest member.
pub fn partition(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `[macro P, R, F1, micro P, R, F1, pair P, R, F1, average F1]` by
/// enumerating every cluster, every entity and every phrase pair.
pub fn brute_metrics(pred: &[usize], gold: &[usize]) -> [f64; 10] {
    let n = pred.len();
    let clusters = partition(pred);
    let entities = partition(gold);

    let pure = |groups: &[Vec<usize>], other: &[usize]| -> f64 {
        groups
            .iter()
            .filter(|g| g.iter().all(|&i| other[i] == other[g[0]]))
            .count() as f64
            / groups.len() as f64
    };
    let macro_p = pure(&clusters, gold);
    let macro_r = pure(&entities, pred);

    let majority = |groups: &[Vec<usize>], other: &[usize]| -> f64 {
        let mut total = 0.0;
        for g in groups {
            let mut best = 0;
            for &i in g {
                let count = g.iter().filter(|&&j| other[j] == other[i]).count();
                best = best.max(count);
            }
            total += best as f64;
        }
        total / n as f64
    };
    let micro_p = majority(&clusters, gold);
    let micro_r = majority(&entities, pred);

    let mut same_pred = 0.0;
    let mut same_gold = 0.0;
    let mut hits = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let p = pred[i] == pred[j];
            let g = gold[i] == gold[j];
            if p {
                same_pred += 1.0;
            }
            if g {
                same_gold += 1.0;
            }
            if p && g {
                hits += 1.0;
            }
        }
    }
    let pair_p = safe_div(hits, same_pred);
    let pair_r = safe_div(hits, same_gold);

    let (f_ma, f_mi, f_pa) = (harmonic(macro_p, macro_r), harmonic(micro_p, micro_r), harmonic(pair_p, pair_r));
    [
        macro_p,
        macro_r,
        f_ma,
        micro_p,
        micro_r,
        f_mi,
        pair_p,
        pair_r,
        f_pa,
        (f_ma + f_mi + f_pa) / 3.0,
    ]
}

/// Normalized `p(c) N(omega; mu_c, diag var_c)` from plain density products.
pub fn naive_posterior(omega: &[f64], priors: &[f64], means: &[Vec<f64>], vars: &[Vec<f64>]) -> Vec<f64> {
    let mut joint = Vec::new();
    for c in 0..priors.len() {
        let mut density = 1.0;
        for k in 0..omega.len() {
            let diff = omega[k] - means[c][k];
            density *= (-diff * diff / (2.0 * vars[c][k])).exp() / (2.0 * std::f64::consts::PI * vars[c][k]).sqrt();
        }
        joint.push(priors[c] * density);
    }
    let z: f64 = joint.iter().sum();
    joint.iter().map(|j| j / z).collect()
}

/// `out[k] = sum_i a[i] b[(i + k) mod d]`.
pub fn direct_correlation(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = a.len();
    let mut out = vec![0.0; d];
    for (k, slot) in out.iter_mut().enumerate() {
        for i in 0..d {
            *slot += a[i] * b[(i + k) % d];
        }
    }
    out
}

/// Central difference of `f` at `x` along coordinate `k`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], k: usize, eps: f64) -> f64 {
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[k] += eps;
    down[k] -= eps;
    (f(&up) - f(&down)) / (2.0 * eps)
}

/// Neighbor sets straight from the triple list.
pub fn brute_neighbors(n: usize, triples: &[(usize, usize)]) -> Vec<BTreeSet<usize>> {
    let mut out = vec![BTreeSet::new(); n];
    for &(h, t) in triples {
        if h != t {
            out[h].insert(t);
            out[t].insert(h);
        }
    }
    out
}

/// Weighted token overlap with weights `1 / ln(1 + df)`, documents being
/// whitespace-tokenized lowercase phrases.
pub fn brute_idf(phrases: &[String], a: usize, b: usize) -> f64 {
    let toks = |p: &String| -> BTreeSet<String> { p.split_whitespace().map(|t| t.to_lowercase()).collect() };
    let sets: Vec<BTreeSet<String>> = phrases.iter().map(toks).collect();
    let df = |t: &String| sets.iter().filter(|s| s.contains(t)).count() as f64;
    let w = |t: &String| 1.0 / (1.0 + df(t)).ln();
    let inter: f64 = sets[a].intersection(&sets[b]).map(w).sum();
    if inter == 0.0 {
        return 0.0;
    }
    let union: f64 = sets[a].union(&sets[b]).map(w).sum();
    inter / union
}

/// Per-cluster prior, mean and floored population variance.
pub fn brute_cluster_stats(
    labels: &[usize],
    latents: &[Vec<f64>],
    floor: f64,
) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let d = latents[0].len();
    let n = labels.len() as f64;
    let mut priors = Vec::new();
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for c in 0..k {
        let members: Vec<&Vec<f64>> = labels.iter().zip(latents).filter(|(l, _)| **l == c).map(|(_, x)| x).collect();
        let m = members.len() as f64;
        priors.push(m / n);
        let mean: Vec<f64> = (0..d).map(|j| members.iter().map(|x| x[j]).sum::<f64>() / m).collect();
        let var: Vec<f64> = (0..d)
            .map(|j| (members.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / m).max(floor))
            .collect();
        means.push(mean);
        vars.push(var);
    }
    (priors, means, vars)
}
