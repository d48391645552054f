use std::collections::BTreeMap;

use heteroglossia_core::distance::{
    cosine_distance, embed_sum, rank_ideas, sentence_pair_distance, sentence_pair_distances, Aggregation,
    DistanceError, EmbeddingStore, TextRef,
};
use heteroglossia_core::orchestrator::IdeaSubmission;
use heteroglossia_core::{SlotId, SubmissionId, TaskId, Timestamp, WorkerId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle;
use super::Check;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn store_from(table: &[(&str, Vec<f64>)]) -> EmbeddingStore {
    EmbeddingStore::from_entries(table.iter().map(|(t, v)| (t.to_string(), v.clone())), false).unwrap()
}

fn toy_table() -> Vec<(&'static str, Vec<f64>)> {
    vec![("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0]), ("c", vec![1.0, 1.0])]
}

/// All pair distances between two sentence lists, by brute force.
fn brute_pairs(a: &[Vec<&str>], b: &[Vec<&str>], table: &[(&str, Vec<f64>)]) -> Vec<f64> {
    let vecs = |doc: &[Vec<&str>]| -> Vec<Vec<f64>> {
        doc.iter()
            .filter_map(|s| oracle::embed_sum(&s.join(" "), table))
            .filter(|v| v.iter().any(|x| *x != 0.0))
            .collect()
    };
    let (va, vb) = (vecs(a), vecs(b));
    let mut out = Vec::new();
    for x in &va {
        for y in &vb {
            out.push(oracle::cosine_distance(x, y));
        }
    }
    out
}

/// k-th smallest (1-based) by counting, with no sorting.
fn kth_smallest(d: &[f64], k: usize) -> f64 {
    *d.iter()
        .find(|&&v| {
            let below = d.iter().filter(|&&x| x < v).count();
            let at_or_below = d.iter().filter(|&&x| x <= v).count();
            below < k && k <= at_or_below
        })
        .expect("k within range")
}

fn brute_median(d: &[f64]) -> f64 {
    let n = d.len();
    if n % 2 == 1 {
        kth_smallest(d, n / 2 + 1)
    } else {
        0.5 * (kth_smallest(d, n / 2) + kth_smallest(d, n / 2 + 1))
    }
}

fn render(doc: &[Vec<&str>]) -> String {
    doc.iter().map(|s| format!("{}.", s.join(" "))).collect::<Vec<_>>().join(" ")
}

/// Hand values on the three-token store plus exhaustive enumeration of every
/// pair of one- and two-sentence documents over it.
pub fn check_toy_store(tol: f64) -> Check {
    let table = toy_table();
    let store = store_from(&table);

    let ab = embed_sum("a b", &store).map_err(|e| e.to_string())?;
    if ab.values != vec![1.0, 1.0] || ab.token_hits != 2 {
        return Err(format!("embed_sum(\"a b\") = {:?}", ab));
    }
    let aaz = embed_sum("a a z", &store).map_err(|e| e.to_string())?;
    if aaz.values != vec![2.0, 0.0] || aaz.token_hits != 2 {
        return Err(format!("embed_sum(\"a a z\") = {:?}", aaz));
    }
    if embed_sum("z q", &store) != Err(DistanceError::NoKnownTokens) {
        return Err("embed_sum(\"z q\") should fail with NoKnownTokens".into());
    }
    let cd = |u: &[f64], v: &[f64]| cosine_distance(u, v).unwrap();
    let hand = [
        (cd(&[1.0, 1.0], &[1.0, 1.0]), 0.0),
        (cd(&[1.0, 0.0], &[0.0, 1.0]), 1.0),
        (cd(&[1.0, 0.0], &[1.0, 1.0]), 1.0 - 1.0 / 2f64.sqrt()),
    ];
    for (got, want) in hand {
        if !close(got, want, tol) {
            return Err(format!("cosine distance {got} expected {want}"));
        }
    }
    for (agg, want) in [(Aggregation::Mean, 0.5), (Aggregation::Min, 0.0), (Aggregation::Median, 0.5)] {
        let got = sentence_pair_distance("a. b.", "a.", &store, agg).map_err(|e| e.to_string())?;
        if !close(got, want, tol) {
            return Err(format!("{agg:?} of a./b. vs a. = {got}, expected {want}"));
        }
    }

    let sentences: Vec<Vec<&str>> = vec![
        vec!["a"],
        vec!["b"],
        vec!["c"],
        vec!["a", "b"],
        vec!["a", "c"],
        vec!["b", "c"],
        vec!["a", "a", "z"],
        vec!["z"],
    ];
    let mut docs: Vec<Vec<Vec<&str>>> = sentences.iter().map(|s| vec![s.clone()]).collect();
    for s in &sentences {
        for t in &sentences {
            docs.push(vec![s.clone(), t.clone()]);
        }
    }
    let mut compared = 0usize;
    for a in &docs {
        for b in &docs {
            let expected = brute_pairs(a, b, &table);
            let got = sentence_pair_distances(&render(a), &render(b), &store);
            if expected.is_empty() {
                if got != Err(DistanceError::NoVectorizableSentence) {
                    return Err(format!("{:?} vs {:?}: expected NoVectorizableSentence, got {got:?}", a, b));
                }
                continue;
            }
            let got = got.map_err(|e| format!("{:?} vs {:?}: {e}", a, b))?;
            if got.len() != expected.len() || got.iter().zip(&expected).any(|(x, y)| !close(*x, *y, tol)) {
                return Err(format!("{:?} vs {:?}: pairs {got:?} expected {expected:?}", a, b));
            }
            let mean = expected.iter().sum::<f64>() / expected.len() as f64;
            let min = expected.iter().copied().fold(f64::INFINITY, f64::min);
            let med = brute_median(&expected);
            for (agg, want) in [(Aggregation::Mean, mean), (Aggregation::Min, min), (Aggregation::Median, med)] {
                let v = sentence_pair_distance(&render(a), &render(b), &store, agg).unwrap();
                if !close(v, want, tol) {
                    return Err(format!("{:?} vs {:?}: {agg:?} {v} expected {want}", a, b));
                }
            }
            compared += 1;
        }
    }
    if let (Ok(x), Ok(y)) = (embed_sum("a b", &store), embed_sum("c", &store)) {
        if !close(cosine_distance(&x.values, &y.values).unwrap(), 0.0, tol) {
            return Err("\"a b\" and \"c\" should coincide".into());
        }
    }
    Ok(format!("hand examples plus {compared} enumerated document pairs"))
}

const VOCAB: [&str; 6] = ["w0", "w1", "w2", "w3", "w4", "w5"];

fn random_table(rng: &mut ChaCha8Rng, dim: usize) -> Vec<(&'static str, Vec<f64>)> {
    VOCAB
        .iter()
        .map(|&t| (t, (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()))
        .collect()
}

fn random_doc(rng: &mut ChaCha8Rng) -> Vec<Vec<&'static str>> {
    let sentences = rng.random_range(1..=4);
    (0..sentences)
        .map(|_| {
            let len = rng.random_range(1..=4);
            (0..len)
                .map(|_| if rng.random_bool(0.1) { "oov" } else { VOCAB[rng.random_range(0..VOCAB.len())] })
                .collect()
        })
        .collect()
}

fn idea(id: u64, body: String, at: i64) -> IdeaSubmission {
    IdeaSubmission {
        id: SubmissionId(id),
        slot_id: SlotId(id),
        task_id: TaskId(1),
        worker_id: WorkerId::new(format!("w{id}")),
        role: None,
        role_label: "no role".into(),
        body,
        submitted_at: Timestamp::from_millis(at),
        elapsed_read_ms: 0,
        distance_scores: BTreeMap::new(),
    }
}

/// Symmetry, scale invariance, additivity, aggregation bounds against brute
/// force, and ranking permutation/scale invariance on random small instances.
pub fn check_invariants(seed: u64, cases: usize, tol: f64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let dim = rng.random_range(2..=5);
        let table = random_table(&mut rng, dim);
        let store = store_from(&table);
        let fail = |what: &str| Err(format!("case {case}: {what}"));

        // cosine: oracle, symmetry, self-distance, scale
        let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let alpha = rng.random_range(0.01..100.0);
        let scaled: Vec<f64> = u.iter().map(|x| x * alpha).collect();
        let d_uv = cosine_distance(&u, &v).unwrap();
        if !close(d_uv, oracle::cosine_distance(&u, &v).clamp(0.0, 2.0), tol) {
            return fail("cosine vs oracle");
        }
        if !close(d_uv, cosine_distance(&v, &u).unwrap(), tol) {
            return fail("cosine symmetry");
        }
        if !close(cosine_distance(&u, &u).unwrap(), 0.0, tol) {
            return fail("self distance");
        }
        if !close(cosine_distance(&scaled, &v).unwrap(), d_uv, tol) {
            return fail("scale invariance");
        }
        if !(0.0..=2.0).contains(&d_uv) {
            return fail("range");
        }

        // additivity of the word sum
        let a = random_doc(&mut rng).concat().join(" ");
        let b = random_doc(&mut rng).concat().join(" ");
        if let (Ok(ea), Ok(eb)) = (embed_sum(&a, &store), embed_sum(&b, &store)) {
            let joined = embed_sum(&format!("{a} {b}"), &store).unwrap();
            if joined.token_hits != ea.token_hits + eb.token_hits {
                return fail("additivity of hits");
            }
            for i in 0..dim {
                if !close(joined.values[i], ea.values[i] + eb.values[i], tol) {
                    return fail("additivity");
                }
            }
            let reference = oracle::embed_sum(&a, &table).unwrap();
            if ea.values.iter().zip(&reference).any(|(x, y)| !close(*x, *y, tol)) {
                return fail("embed_sum vs oracle");
            }
        }

        // aggregation against brute force
        let da = random_doc(&mut rng);
        let db = random_doc(&mut rng);
        let pairs = brute_pairs(&da, &db, &table);
        let (ra, rb) = (render(&da), render(&db));
        if pairs.is_empty() {
            if sentence_pair_distance(&ra, &rb, &store, Aggregation::Mean) != Err(DistanceError::NoVectorizableSentence) {
                return fail("expected NoVectorizableSentence");
            }
        } else {
            let max = pairs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = pairs.iter().copied().fold(f64::INFINITY, f64::min);
            let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
            let got_min = sentence_pair_distance(&ra, &rb, &store, Aggregation::Min).unwrap();
            let got_med = sentence_pair_distance(&ra, &rb, &store, Aggregation::Median).unwrap();
            let got_mean = sentence_pair_distance(&ra, &rb, &store, Aggregation::Mean).unwrap();
            if !close(got_min, min, tol) || !close(got_mean, mean, tol) || !close(got_med, brute_median(&pairs), tol) {
                return fail("aggregation vs brute force");
            }
            if !(got_min <= got_med + tol && got_med <= max + tol && got_min <= got_mean + tol && got_mean <= max + tol) {
                return fail("aggregation bounds");
            }
        }

        // ranking: a permutation, unchanged by scaling every vector
        let prompt = render(&random_doc(&mut rng));
        let ideas: Vec<IdeaSubmission> = (1..=rng.random_range(2..=6u64))
            .map(|i| idea(i, render(&random_doc(&mut rng)), rng.random_range(0..5) * 1000))
            .collect();
        let factor = rng.random_range(0.1..10.0);
        let scaled_table: Vec<(&str, Vec<f64>)> =
            table.iter().map(|(t, v)| (*t, v.iter().map(|x| x * factor).collect())).collect();
        let scaled_store = store_from(&scaled_table);
        let metric_for = |s: &EmbeddingStore| {
            let s = s.clone();
            move |p: TextRef<'_>, q: TextRef<'_>| -> Result<f64, DistanceError> {
                cosine_distance(&embed_sum(p.body, &s)?.values, &embed_sum(q.body, &s)?.values)
            }
        };
        let p = TextRef { id: "task:1", body: &prompt };
        let r1: Vec<SubmissionId> = rank_ideas(&metric_for(&store), p, &ideas).iter().map(|r| r.submission_id).collect();
        let r2: Vec<SubmissionId> =
            rank_ideas(&metric_for(&scaled_store), p, &ideas).iter().map(|r| r.submission_id).collect();
        let mut sorted = r1.clone();
        sorted.sort();
        let expected: Vec<SubmissionId> = ideas.iter().map(|i| i.id).collect();
        if sorted != expected {
            return fail("ranking is not a permutation");
        }
        if r1 != r2 {
            // exact ties can flip under rounding; accept only if distances tie to within tol
            let d = |s: &EmbeddingStore, id: SubmissionId| {
                let body = &ideas.iter().find(|i| i.id == id).unwrap().body;
                metric_for(s)(p, TextRef { id: "", body }).ok()
            };
            let tie_only = r1.iter().zip(&r2).all(|(x, y)| match (d(&store, *x), d(&store, *y)) {
                (Some(a), Some(b)) => close(a, b, 1e-9),
                (None, None) => true,
                _ => false,
            });
            if !tie_only {
                return fail("ranking changed under uniform scaling");
            }
        }
    }
    Ok(format!("{cases} random instances"))
}
