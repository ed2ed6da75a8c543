//! Library results against the direct reference computations in `oracles`.

mod oracles;

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use okb_canon::corpus::{neighbor_index, Corpus, PhraseId};
use okb_canon::diffusion::{
    diffusion_loss, make_schedule, normal_matrix, sample_latent, DiffusionDraws, LatentHeads, NoiseNet,
};
use okb_canon::embedding::{augment, parse_vectors, phrase_embedding};
use okb_canon::hac::{hac_cluster, ClusterAssignment, Linkage};
use okb_canon::kge::{
    circular_correlation, hole_raw, hole_score, kge_loss_on, transe_distance, CanonicalEmbedding, KgeModel, KgeParams,
    NegativeSet,
};
use okb_canon::metrics::evaluate_items;
use okb_canon::mixture::{clustering_loss, init_mixture, posteriors};
use okb_canon::side_info::{candidate_pairs, idf_overlap, side_loss, SideResources, Source, TokenStats};
use okb_canon::trainer::{infer_clusters, ModelSpec, TrainState};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

fn random_corpus(r: &mut ChaCha8Rng, phrases: usize, triples: usize) -> (Corpus, Vec<(usize, usize)>) {
    let rows: Vec<(String, String, String)> = (0..triples)
        .map(|_| {
            (
                format!("p{}", r.random_range(0..phrases)),
                format!("r{}", r.random_range(0..3)),
                format!("p{}", r.random_range(0..phrases)),
            )
        })
        .collect();
    let (corpus, _) = Corpus::from_rows(rows.iter().map(|(h, rel, t)| (h.as_str(), rel.as_str(), t.as_str(), None)));
    let pairs = corpus.triples().iter().map(|t| (t.head.0, t.tail.0)).collect();
    (corpus, pairs)
}

#[test]
fn neighbor_index_matches_scan() {
    let mut r = rng(1);
    for _ in 0..20 {
        let (corpus, pairs) = random_corpus(&mut r, 12, 20);
        let index = neighbor_index(&corpus);
        let want = oracles::brute_neighbors(corpus.num_phrases(), &pairs);
        for (i, expected) in want.iter().enumerate() {
            let got: BTreeSet<usize> = index.neighbors(PhraseId(i)).iter().map(|p| p.0).collect();
            assert_eq!(&got, expected, "phrase {i}");
        }
    }
}

#[test]
fn phrase_vector_averages_known_tokens_only() {
    let (store, _) = parse_vectors("obama 0.25 -1.5 2.0\nhawaii 1 1 1\n", 3, true).unwrap();
    assert_eq!(phrase_embedding("barack obama", &store), vec![0.25, -1.5, 2.0]);
    let both = phrase_embedding("obama hawaii", &store);
    let want = [(0.25 + 1.0) / 2.0, (-1.5 + 1.0) / 2.0, (2.0 + 1.0) / 2.0];
    for (a, b) in both.iter().zip(want) {
        assert_eq!(*a, b);
    }
}

#[test]
fn augmented_rows_match_neighbor_loop() {
    let mut r = rng(2);
    let (corpus, pairs) = random_corpus(&mut r, 10, 14);
    let n = corpus.num_phrases();
    let e = Array2::from_shape_vec((n, 4), gaussian(&mut r, n * 4)).unwrap();
    let table = augment(&e, &neighbor_index(&corpus), true).unwrap();
    let nb = oracles::brute_neighbors(n, &pairs);
    for i in 0..n {
        let mut mean = [0.0; 4];
        for &j in &nb[i] {
            for k in 0..4 {
                mean[k] += e[[j, k]] / nb[i].len() as f64;
            }
        }
        for k in 0..4 {
            assert_eq!(table.h[[i, k]], e[[i, k]]);
            assert!((table.h[[i, 4 + k]] - mean[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn idf_pairs_match_all_pairs_filter() {
    let vocab = ["new", "york", "city", "times", "square", "the", "big", "apple", "state", "park"];
    let mut r = rng(3);
    let mut surfaces = BTreeSet::new();
    while surfaces.len() < 30 {
        let len = r.random_range(1..=3);
        let words: Vec<&str> = (0..len).map(|_| vocab[r.random_range(0..vocab.len())]).collect();
        surfaces.insert(words.join(" "));
    }
    let surfaces: Vec<String> = surfaces.into_iter().collect();
    let rows: Vec<(&str, &str, &str, Option<&str>)> =
        surfaces.chunks(2).map(|c| (c[0].as_str(), "rel", c[1].as_str(), None)).collect();
    let (corpus, _) = Corpus::from_rows(rows);
    let ordered: Vec<String> = (0..corpus.num_phrases()).map(|i| corpus.phrase(PhraseId(i)).to_owned()).collect();
    let stats = TokenStats::build(&corpus);
    let pairs = candidate_pairs(&SideResources::default(), &corpus, &stats, 0.5).unwrap();

    let mut want = BTreeSet::new();
    for a in 0..ordered.len() {
        for b in a + 1..ordered.len() {
            let score = oracles::brute_idf(&ordered, a, b);
            assert!((idf_overlap(PhraseId(a), PhraseId(b), &stats) - score).abs() < 1e-12);
            if score >= 0.5 {
                want.insert((a, b));
            }
        }
    }
    let got: BTreeSet<(usize, usize)> = pairs.by_source(Source::Idf).map(|(a, b, _)| (a.0.min(b.0), a.0.max(b.0))).collect();
    assert_eq!(got, want);
    assert!(!want.is_empty());
}

#[test]
fn side_loss_matches_direct_sum() {
    let (corpus, _) = Corpus::from_rows([
        ("a x", "r", "b y", None),
        ("c z", "r", "d w", None),
        ("e v", "r", "f u", None),
    ]);
    let res = SideResources {
        paraphrases: vec![("a x".into(), "b y".into()), ("c z".into(), "d w".into())],
        entity_links: vec![("e v".into(), "E".into()), ("f u".into(), "E".into()), ("a x".into(), "E".into())],
    };
    let pairs = candidate_pairs(&res, &corpus, &TokenStats::build(&corpus), 1.0).unwrap();
    assert_eq!(pairs.len(), 5);
    let mut r = rng(4);
    let latents = Array2::from_shape_vec((6, 3), gaussian(&mut r, 18)).unwrap();
    let mut total = 0.0;
    for (a, b, w) in pairs.weighted() {
        let mut sq = 0.0;
        for k in 0..3 {
            sq += (latents[[a.0, k]] - latents[[b.0, k]]).powi(2);
        }
        total += w * sq;
    }
    assert!((side_loss(&latents, &pairs) - total / 5.0).abs() < 1e-12);
}

#[test]
fn three_blobs_recovered_like_naive() {
    let mut r = rng(5);
    let centers = [[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0]];
    let mut points = Vec::new();
    for c in centers {
        for _ in 0..4 {
            points.push(c.iter().map(|x| x + 0.3 * r.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>());
        }
    }
    let m = Array2::from_shape_fn((12, 3), |(i, j)| points[i][j]);
    let got = oracles::partition(hac_cluster(&m, Linkage::Complete, 0.3).unwrap().labels());
    assert_eq!(got, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9, 10, 11]]);
    assert_eq!(got, oracles::naive_hac(&points, oracles::NaiveLinkage::Complete, 0.3));
}

#[test]
fn mixture_init_matches_cluster_statistics() {
    let mut r = rng(6);
    let labels: Vec<usize> = (0..30).map(|i| if i < 3 { i } else { r.random_range(0..3) }).collect();
    let latents: Vec<Vec<f64>> = (0..30).map(|_| gaussian(&mut r, 4)).collect();
    let m = Array2::from_shape_fn((30, 4), |(i, j)| latents[i][j]);
    let params = init_mixture(&ClusterAssignment::from_labels(&labels), &m, 1e-4).unwrap();
    let (priors, means, vars) = oracles::brute_cluster_stats(&labels, &latents, 1e-4);
    // from_labels numbers clusters by first appearance, which is 0, 1, 2 here
    for c in 0..3 {
        assert!((params.priors()[c] - priors[c]).abs() < 1e-12);
        for j in 0..4 {
            assert!((params.means[[c, j]] - means[c][j]).abs() < 1e-12);
            assert!((params.variances()[[c, j]] - vars[c][j]).abs() < 1e-12);
        }
    }
}

#[test]
fn posterior_matches_density_product() {
    let mut r = rng(7);
    let (k, d) = (4, 5);
    let logits: Vec<f64> = gaussian(&mut r, k);
    let means: Vec<Vec<f64>> = (0..k).map(|_| gaussian(&mut r, d)).collect();
    let vars: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| r.random_range(0.3..3.0)).collect()).collect();
    let params = okb_canon::mixture::MixtureParams {
        prior_logits: Array2::from_shape_vec((1, k), logits.clone()).unwrap(),
        means: Array2::from_shape_fn((k, d), |(c, j)| means[c][j]),
        log_vars: Array2::from_shape_fn((k, d), |(c, j)| vars[c][j].ln()),
        variance_floor: 1e-4,
    };
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let priors: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
    for _ in 0..20 {
        let omega = gaussian(&mut r, d);
        let v = okb_canon::mixture::posterior(Array1::from(omega.clone()).view(), &params).unwrap();
        for (a, b) in v.iter().zip(oracles::naive_posterior(&omega, &priors, &means, &vars)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn clustering_loss_matches_summation() {
    let mut r = rng(8);
    let mut post = Array2::<f64>::zeros((10, 3));
    for mut row in post.rows_mut() {
        let raw: Vec<f64> = (0..3).map(|_| r.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        for (x, v) in row.iter_mut().zip(raw) {
            *x = v / s;
        }
    }
    let labels: Vec<usize> = (0..10).map(|_| r.random_range(0..3)).collect();
    let want = -labels.iter().enumerate().map(|(i, &l)| post[[i, l]].ln()).sum::<f64>() / 10.0;
    assert!((clustering_loss(&post, &labels).unwrap() - want).abs() < 1e-12);
}

#[test]
fn latent_samples_match_heads() {
    let mut r = rng(9);
    let d = 3;
    let heads = LatentHeads {
        w_mu: Array2::from_shape_vec((d, d), gaussian(&mut r, d * d)).unwrap(),
        w_sigma: Array2::from_shape_vec((d, d), gaussian(&mut r, d * d)).unwrap() * 0.2,
        log_sigma_bias: Array2::from_elem((1, d), -0.5),
    };
    let x = Array1::from(gaussian(&mut r, d));
    let mu = x.dot(&heads.w_mu);
    let sigma = (x.dot(&heads.w_sigma) + &heads.log_sigma_bias.row(0)).mapv(f64::exp);
    let n = 100_000;
    let mut sum = Array1::<f64>::zeros(d);
    let mut sq = Array1::<f64>::zeros(d);
    for _ in 0..n {
        let w = sample_latent(x.view(), &heads, &mut r).unwrap();
        sum += &w;
        sq += &w.mapv(|v| v * v);
    }
    let mean = &sum / n as f64;
    let std = (&sq / n as f64 - mean.mapv(|m| m * m)).mapv(f64::sqrt);
    for k in 0..d {
        // mean error is judged against sigma since mu may sit near zero
        assert!(((mean[k] - mu[k]) / sigma[k]).abs() < 0.01, "mean {k}");
        assert!((std[k] / sigma[k] - 1.0).abs() < 0.01, "std {k}");
    }
}

#[test]
fn zero_net_loss_near_dimension() {
    let schedule = make_schedule(2, 1e-4, 0.02).unwrap();
    let d = 6;
    let net = NoiseNet::zeros(d, 2, &[12, 12]);
    let mut r = rng(10);
    let x0 = normal_matrix(&mut r, 10_000, d);
    let loss = diffusion_loss(&x0, &net, &schedule, &mut r).unwrap();
    assert!((loss / d as f64 - 1.0).abs() < 0.05, "loss {loss}");
}

#[test]
fn single_sample_loss_replays() {
    let schedule = make_schedule(2, 1e-4, 0.02).unwrap();
    let mut init = rng(11);
    let net = NoiseNet::new(3, 2, &[5], &mut init);
    let x0 = Array2::from_shape_vec((1, 3), vec![0.4, -1.0, 2.0]).unwrap();
    let loss = diffusion_loss(&x0, &net, &schedule, &mut rng(12)).unwrap();

    let draws = DiffusionDraws::sample(1, 3, &schedule, &mut rng(12));
    let t = draws.steps[0];
    let abar = (1..=t).map(|s| 1.0 - schedule.beta(s)).product::<f64>();
    let f = draws.noise.row(0);
    let xt: Vec<f64> = (0..3).map(|k| abar.sqrt() * x0[[0, k]] + (1.0 - abar).sqrt() * f[k]).collect();
    let pred = net.predict(Array1::from(xt).view(), t);
    let want: f64 = (0..3).map(|k| (f[k] - pred[k]).powi(2)).sum();
    assert!((loss - want).abs() < 1e-12);
}

#[test]
fn fft_correlation_matches_direct_at_128() {
    let mut r = rng(13);
    let a = gaussian(&mut r, 128);
    let b = gaussian(&mut r, 128);
    let fast = circular_correlation(&a, &b).unwrap();
    for (x, y) in fast.iter().zip(oracles::direct_correlation(&a, &b)) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn hole_and_transe_match_direct_formulas() {
    let mut r = rng(14);
    let (h, rel, t) = (gaussian(&mut r, 16), gaussian(&mut r, 16), gaussian(&mut r, 16));
    let corr = oracles::direct_correlation(&h, &t);
    let raw: f64 = rel.iter().zip(&corr).map(|(a, b)| a * b).sum();
    assert!((hole_raw(&h, &rel, &t).unwrap() - raw).abs() < 1e-9);
    assert!((hole_score(&h, &rel, &t).unwrap() - 1.0 / (1.0 + (-raw).exp())).abs() < 1e-12);
    let dist = (0..16).map(|k| (h[k] + rel[k] - t[k]).powi(2)).sum::<f64>().sqrt();
    assert!((transe_distance(&h, &rel, &t).unwrap() - dist).abs() < 1e-12);
}

#[test]
fn kge_loss_replays_by_hand() {
    let (corpus, _) = Corpus::from_rows([
        ("a", "r", "b", None),
        ("b", "r", "c", None),
        ("c", "s", "d", None),
        ("d", "s", "e", None),
        ("e", "r", "a", None),
    ]);
    let mut r = rng(15);
    let ent = Array2::from_shape_vec((5, 4), gaussian(&mut r, 20)).unwrap();
    let rel = Array2::from_shape_vec((2, 4), gaussian(&mut r, 8)).unwrap();
    let samples: Vec<NegativeSet> = corpus
        .triples()
        .iter()
        .map(|p| {
            let negatives = okb_canon::kge::sample_negatives(p, 3, &corpus, &mut r);
            NegativeSet { positive: *p, negatives }
        })
        .collect();
    let canon = CanonicalEmbedding { table: ent.clone() };
    let row = |m: &Array2<f64>, i: usize| m.row(i).to_vec();
    let softplus = |x: f64| (1.0 + x.exp()).ln();
    let raw = |t: &okb_canon::corpus::Triple| -> f64 {
        let c = oracles::direct_correlation(&row(&ent, t.head.0), &row(&ent, t.tail.0));
        row(&rel, t.relation.0).iter().zip(&c).map(|(a, b)| a * b).sum()
    };
    let dist = |t: &okb_canon::corpus::Triple| -> f64 {
        (0..4)
            .map(|k| (ent[[t.head.0, k]] + rel[[t.relation.0, k]] - ent[[t.tail.0, k]]).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    let (mut hole, mut hole_n, mut transe, mut transe_n) = (0.0, 0.0, 0.0, 0.0);
    for s in &samples {
        hole += softplus(-raw(&s.positive));
        hole_n += 1.0;
        for n in &s.negatives {
            hole += softplus(raw(n));
            hole_n += 1.0;
            transe += (1.0 + dist(&s.positive) - dist(n)).max(0.0);
            transe_n += 1.0;
        }
    }
    let params = |model| KgeParams {
        model,
        relations: rel.clone(),
        margin: 1.0,
    };
    assert!((kge_loss_on(&samples, &canon, &params(KgeModel::Hole)).unwrap() - hole / hole_n).abs() < 1e-9);
    assert!((kge_loss_on(&samples, &canon, &params(KgeModel::Transe)).unwrap() - transe / transe_n).abs() < 1e-9);
}

#[test]
fn inference_is_argmax_of_naive_posterior() {
    let mut r = rng(16);
    let n = 30;
    let h = Array2::from_shape_vec((n, 4), gaussian(&mut r, n * 4)).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let state = TrainState::init(&h, &ClusterAssignment::from_labels(&labels), 1, &ModelSpec::default()).unwrap();
    let latents = state.inference_latents(&h).unwrap();
    let mix = &state.params.mixture;
    let priors = mix.priors().to_vec();
    let means: Vec<Vec<f64>> = mix.means.rows().into_iter().map(|r| r.to_vec()).collect();
    let vars: Vec<Vec<f64>> = mix.variances().rows().into_iter().map(|r| r.to_vec()).collect();
    let argmax: Vec<usize> = (0..n)
        .map(|i| {
            let v = oracles::naive_posterior(&latents.row(i).to_vec(), &priors, &means, &vars);
            (0..v.len()).fold(0, |b, c| if v[c] > v[b] { c } else { b })
        })
        .collect();
    let got = infer_clusters(&state, &h).unwrap();
    assert_eq!(oracles::partition(got.labels()), oracles::partition(&argmax));
    assert_eq!(posteriors(&latents, mix).unwrap().nrows(), n);
}

#[test]
fn metrics_match_enumeration_on_forty_phrases() {
    let mut r = rng(17);
    for _ in 0..50 {
        let pred: Vec<usize> = (0..40).map(|_| r.random_range(0..8)).collect();
        let gold: Vec<usize> = (0..40).map(|_| r.random_range(0..6)).collect();
        let items: Vec<(usize, usize)> = pred.iter().copied().zip(gold.iter().copied()).collect();
        let m = evaluate_items(&items).unwrap();
        let got = [
            m.macro_p, m.macro_r, m.macro_f1, m.micro_p, m.micro_r, m.micro_f1, m.pair_p, m.pair_r, m.pair_f1,
            m.average_f1,
        ];
        for (a, b) in got.iter().zip(oracles::brute_metrics(&pred, &gold)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
