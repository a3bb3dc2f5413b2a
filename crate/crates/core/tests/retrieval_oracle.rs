mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cat_core::corpus::ExampleSet;
use cat_core::embed::{embed_text, fnv1a64};
use cat_core::{build_index, HashedTrigramProvider};

/// Trigram hashing written out independently of the provider.
fn oracle_embed(text: &str) -> Vec<f64> {
    let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let chars: Vec<char> = format!(" {normalized} ").chars().collect();
    let mut v = vec![0.0; 256];
    for i in 0..chars.len() - 2 {
        let gram: String = chars[i..i + 3].iter().collect();
        v[(fnv1a64(gram.as_bytes()) % 256) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Positions of the `k` best entries: higher score first, then lower position.
fn brute_force(query: &[f64], corpus: &[Vec<f64>], k: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = corpus.iter().map(|v| oracle_cosine(query, v)).enumerate().collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

#[test]
fn oracle_embedding_matches_provider() {
    let provider = HashedTrigramProvider::new();
    for text in ["open settings", "  Share a PICTURE\twith Pony ", "a", "über café"] {
        let ours = embed_text(&provider, text).unwrap();
        let theirs = oracle_embed(text);
        for (x, y) in ours.values().iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-15, "{text:?}");
        }
    }
}

#[test]
fn top_k_agrees_with_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let set = common::synthetic_corpus(&mut rng, 1000, 20);
    let provider = HashedTrigramProvider::new();
    let index = build_index(&set, &provider).unwrap();
    let corpus: Vec<Vec<f64>> = set.examples().iter().map(|e| oracle_embed(&e.description)).collect();

    let mut compared = 0;
    for q in 0..1000 {
        let query = if q % 4 == 0 {
            set.examples()[q].description.clone()
        } else {
            common::synthetic_description(&mut rng)
        };
        let qv = oracle_embed(&query);
        let expected = brute_force(&qv, &corpus, 10);
        for k in [1, 5, 10] {
            let got = index.top_k(&query, k, &provider).unwrap();
            assert_eq!(got.len(), k);
            for (rank, (r, (pos, score))) in got.iter().zip(&expected).enumerate() {
                assert_eq!(r.example.id, set.examples()[*pos].id, "query {query:?} k={k} rank {}", rank + 1);
                assert_eq!(r.rank, rank + 1);
                assert!((r.score - score).abs() < 1e-12);
            }
            compared += 1;
        }
    }
    assert_eq!(compared, 3000);
}

#[test]
fn duplicate_descriptions_rank_by_corpus_position() {
    let provider = HashedTrigramProvider::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut examples: Vec<_> = (0..5).map(|i| common::synthetic_example(&mut rng, i, "A".into())).collect();
    for e in &mut examples {
        e.description = "open settings".into();
    }
    let set = ExampleSet::from_examples(examples).unwrap();
    let index = build_index(&set, &provider).unwrap();
    let ids: Vec<_> = index
        .top_k("open settings", 5, &provider)
        .unwrap()
        .into_iter()
        .map(|r| r.example.id)
        .collect();
    assert_eq!(ids, ["s0", "s1", "s2", "s3", "s4"]);
}
