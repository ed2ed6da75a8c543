//! Seeded toy knowledge bases with known entities.
//!
//! Each entity gets a random centroid and a handful of single-token alias
//! phrases whose word vectors are the centroid plus isotropic Gaussian noise.
//! Triples connect aliases of an entity mostly to aliases of a few partner
//! entities, with the relation determined by the entity pair most of the
//! time. Side resources (entity links, paraphrase edges) are drawn from the
//! true entities.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::corpus::{Corpus, GoldLabels};
use crate::embedding::VectorStore;
use crate::error::{Error, Result};
use crate::side_info::SideResources;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub entities: usize,
    pub min_aliases: usize,
    pub max_aliases: usize,
    /// Explicit alias count per entity; overrides the range when set.
    pub alias_counts: Option<Vec<usize>>,
    pub dim: usize,
    pub triples: usize,
    pub relations: usize,
    /// Partner entities per entity that tails are drawn from.
    pub partners: usize,
    /// Probability a triple's tail comes from a partner entity.
    pub partner_rate: f64,
    /// Probability a triple uses its entity pair's usual relation.
    pub relation_rate: f64,
    /// Expected noise norm as a fraction of the mean inter-centroid distance.
    pub noise_ratio: f64,
    pub link_fraction: f64,
    pub paraphrase_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            entities: 50,
            min_aliases: 2,
            max_aliases: 5,
            alias_counts: None,
            dim: 32,
            triples: 300,
            relations: 10,
            partners: 3,
            partner_rate: 0.9,
            relation_rate: 0.8,
            noise_ratio: 0.3,
            link_fraction: 0.3,
            paraphrase_fraction: 0.3,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    /// 20 phrases over 3 entities with 10 triples in 8 dimensions.
    pub fn toy(seed: u64) -> Self {
        SyntheticConfig {
            entities: 3,
            alias_counts: Some(vec![7, 7, 6]),
            dim: 8,
            triples: 10,
            relations: 3,
            partners: 2,
            noise_ratio: 0.15,
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub triples: Vec<(String, String, String)>,
    pub vectors: VectorStore,
    /// `(alias, entity id)`.
    pub gold: Vec<(String, String)>,
    pub side: SideResources,
    pub centroids: Array2<f64>,
    /// Mean distance between distinct centroids.
    pub spacing: f64,
}

type Alias = (usize, usize);
type Key = (Alias, usize, Alias);

const CONSONANTS: &[u8] = b"bdfgklmnprtvz";
const VOWELS: &[u8] = b"aeiou";

fn pseudo_word<R: Rng + ?Sized>(rng: &mut R, taken: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
            w.push(*VOWELS.choose(rng).expect("non-empty") as char);
        }
        if rng.random_bool(0.5) {
            w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
        }
        // plural and capitalized variants are derived from this form
        let variants = [w.clone(), format!("{w}s"), capitalize(&w)];
        if variants.iter().all(|v| !taken.contains(v)) {
            taken.extend(variants);
            return w;
        }
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn mean_pairwise_distance(c: &Array2<f64>) -> f64 {
    let k = c.nrows();
    if k < 2 {
        return 1.0;
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += (&c.row(i) - &c.row(j)).mapv(|x| x * x).sum().sqrt();
        }
    }
    total / (k * (k - 1) / 2) as f64
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    let counts: Vec<usize> = match &config.alias_counts {
        Some(c) => c.clone(),
        None => {
            if config.min_aliases == 0 || config.min_aliases > config.max_aliases {
                return Err(Error::Config("alias range must satisfy 1 <= min <= max".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xa11a5);
            (0..config.entities)
                .map(|_| rng.random_range(config.min_aliases..=config.max_aliases))
                .collect()
        }
    };
    let k = counts.len();
    if k < 2 || config.dim == 0 || config.relations == 0 {
        return Err(Error::Config("need at least two entities, one relation and a positive dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let centroids = Array2::from_shape_fn((k, config.dim), |_| StandardNormal.sample(&mut rng));
    let spacing = mean_pairwise_distance(&centroids);
    let sigma = config.noise_ratio * spacing / (config.dim as f64).sqrt();
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;

    let mut taken = HashSet::new();
    let mut vectors = VectorStore::new(config.dim)?;
    let mut aliases: Vec<Vec<String>> = Vec::with_capacity(k);
    let mut gold = Vec::new();
    for (e, &count) in counts.iter().enumerate() {
        let base = pseudo_word(&mut rng, &mut taken);
        let mut names = vec![base.clone()];
        while names.len() < count {
            let name = match rng.random_range(0..4) {
                0 if !names.contains(&format!("{base}s")) => format!("{base}s"),
                1 if !names.contains(&capitalize(&base)) => capitalize(&base),
                _ => pseudo_word(&mut rng, &mut taken),
            };
            names.push(name);
        }
        for name in &names {
            let v: Vec<f64> = centroids.row(e).iter().map(|c| c + noise.sample(&mut rng)).collect();
            vectors.insert(name.clone(), v)?;
            gold.push((name.clone(), format!("/ent/{e}")));
        }
        aliases.push(names);
    }

    let partners: Vec<Vec<usize>> = (0..k)
        .map(|e| {
            let mut others: Vec<usize> = (0..k).filter(|&o| o != e).collect();
            others.shuffle(&mut rng);
            others.truncate(config.partners.max(1));
            others
        })
        .collect();
    let pair_relation = |h: usize, t: usize| (h * 31 + t * 17) % config.relations;
    let rel_name = |r: usize| format!("rel{r}");

    let all: Vec<(usize, usize)> = (0..k).flat_map(|e| (0..counts[e]).map(move |a| (e, a))).collect();
    let mut seen: BTreeSet<Key> = BTreeSet::new();
    let mut accepted: Vec<Key> = Vec::new();
    let mut push = |h: Alias, t: Alias, rng: &mut ChaCha8Rng, accepted: &mut Vec<Key>| {
        let r = if rng.random_bool(config.relation_rate) {
            pair_relation(h.0, t.0)
        } else {
            rng.random_range(0..config.relations)
        };
        let fresh = h != t && seen.insert((h, r, t));
        if fresh {
            accepted.push((h, r, t));
        }
        fresh
    };

    // cover every alias: repeatedly pair an uncovered alias of the entity
    // with the most uncovered aliases with one from its fullest partner
    let mut uncovered: Vec<Vec<usize>> = counts
        .iter()
        .map(|&c| {
            let mut v: Vec<usize> = (0..c).collect();
            v.shuffle(&mut rng);
            v
        })
        .collect();
    let mut guard = 0;
    while guard < 100 * all.len() {
        guard += 1;
        let Some(e) = (0..k).filter(|&e| !uncovered[e].is_empty()).max_by_key(|&e| (uncovered[e].len(), k - e)) else {
            break;
        };
        let a = (e, *uncovered[e].last().expect("non-empty"));
        let fullest = |cands: &mut dyn Iterator<Item = usize>| {
            cands
                .filter(|&p| !uncovered[p].is_empty())
                .max_by_key(|&p| (uncovered[p].len(), k - p))
        };
        let tail = match fullest(&mut partners[e].iter().copied())
            .or_else(|| fullest(&mut (0..k).filter(|&p| p != e)))
        {
            Some(p) => (p, *uncovered[p].last().expect("non-empty")),
            None => {
                let p = *partners[e].choose(&mut rng).expect("has partners");
                (p, rng.random_range(0..counts[p]))
            }
        };
        let (h, t) = if rng.random_bool(0.5) { (a, tail) } else { (tail, a) };
        if push(h, t, &mut rng, &mut accepted) {
            for x in [h, t] {
                uncovered[x.0].retain(|&i| i != x.1);
            }
        }
    }
    let mut attempts = 0;
    while accepted.len() < config.triples && attempts < config.triples * 100 {
        attempts += 1;
        let h = *all.choose(&mut rng).expect("non-empty");
        let te = if rng.random_bool(config.partner_rate) {
            *partners[h.0].choose(&mut rng).expect("has partners")
        } else {
            rng.random_range(0..k)
        };
        let t = (te, rng.random_range(0..counts[te]));
        push(h, t, &mut rng, &mut accepted);
    }

    let triples: Vec<(String, String, String)> = accepted
        .iter()
        .map(|&(h, r, t)| (aliases[h.0][h.1].clone(), rel_name(r), aliases[t.0][t.1].clone()))
        .collect();

    let mut side = SideResources::default();
    for (e, names) in aliases.iter().enumerate() {
        for name in names {
            if rng.random_bool(config.link_fraction) {
                side.entity_links.push((name.clone(), format!("wiki:{e}")));
            }
        }
        if names.len() >= 2 && rng.random_bool(config.paraphrase_fraction) {
            let pick: Vec<&String> = names.choose_multiple(&mut rng, 2).collect();
            side.paraphrases.push((pick[0].clone(), pick[1].clone()));
        }
    }

    Ok(SyntheticDataset {
        triples,
        vectors,
        gold,
        side,
        centroids,
        spacing,
    })
}

impl SyntheticDataset {
    pub fn corpus(&self) -> Corpus {
        Corpus::from_rows(self.triples.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str(), None))).0
    }

    pub fn gold_labels(&self, corpus: &Corpus) -> GoldLabels {
        let mut g = GoldLabels::new();
        for (phrase, entity) in &self.gold {
            if let Some(id) = corpus.phrase_id(phrase) {
                g.insert(id, entity.clone());
            }
        }
        g
    }

    /// Writes `triples.tsv`, `gold.tsv`, `vectors.txt`, `paraphrases.tsv`
    /// and `links.tsv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(p, e))
        };
        let tsv = |rows: &[(String, String)]| rows.iter().map(|(a, b)| format!("{a}\t{b}\n")).collect::<String>();
        write(
            "triples.tsv",
            self.triples.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect(),
        )?;
        write("gold.tsv", tsv(&self.gold))?;
        write("paraphrases.tsv", tsv(&self.side.paraphrases))?;
        write("links.tsv", tsv(&self.side.entity_links))?;
        let mut vec_text = String::new();
        for (token, _) in &self.gold {
            let v = self.vectors.get(token).expect("every alias has a vector");
            vec_text.push_str(token);
            for x in v {
                write!(vec_text, " {x:?}").expect("string write");
            }
            vec_text.push('\n');
        }
        write("vectors.txt", vec_text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let d = generate(&SyntheticConfig::default()).unwrap();
        let corpus = d.corpus();
        assert_eq!(d.triples.len(), 300);
        assert_eq!(corpus.triples().len(), 300);
        assert_eq!(corpus.num_phrases(), d.gold.len());
        let entities: BTreeSet<&str> = d.gold.iter().map(|(_, e)| e.as_str()).collect();
        assert_eq!(entities.len(), 50);
    }

    #[test]
    fn toy_shape() {
        let d = generate(&SyntheticConfig::toy(1)).unwrap();
        assert_eq!(d.gold.len(), 20);
        assert_eq!(d.corpus().num_phrases(), 20);
        assert_eq!(d.triples.len(), 10);
    }

    #[test]
    fn deterministic() {
        let a = generate(&SyntheticConfig::default()).unwrap();
        let b = generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(a.triples, b.triples);
        assert_eq!(a.centroids, b.centroids);
    }
}
