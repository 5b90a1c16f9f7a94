#![allow(dead_code)]

pub mod plain;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veritopic::topic_model::TopicModel;

/// `topics` disjoint vocabularies of `words_per_topic` words; each document
/// draws all its tokens from one topic. Returns sentences and true topics.
pub fn planted_corpus(
    topics: usize,
    words_per_topic: usize,
    docs: usize,
    doc_len: usize,
    seed: u64,
) -> (Vec<String>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(docs);
    let mut truth = Vec::with_capacity(docs);
    for d in 0..docs {
        let t = d % topics;
        let words: Vec<String> = (0..doc_len)
            .map(|_| planted_word(t, rng.random_range(0..words_per_topic)))
            .collect();
        out.push(words.join(" "));
        truth.push(t);
    }
    (out, truth)
}

pub fn planted_word(topic: usize, j: usize) -> String {
    format!("p{topic}w{j}")
}

pub fn planted_topic_of(token: &str) -> Option<usize> {
    let rest = token.strip_prefix('p')?;
    rest.split('w').next()?.parse().ok()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// `mass[k][j]`: probability mass of fitted topic k on planted topic j's words.
pub fn topic_mass(model: &TopicModel, planted: usize) -> Vec<Vec<f64>> {
    (0..model.k)
        .map(|k| {
            let mut m = vec![0.0; planted];
            for (w, p) in model.topic(k).iter().enumerate() {
                if let Some(j) = planted_topic_of(model.vocab.token(w).unwrap()) {
                    if j < planted {
                        m[j] += p;
                    }
                }
            }
            m
        })
        .collect()
}

/// Optimal one-to-one alignment of fitted to planted topics (exhaustive
/// assignment, K = planted ≤ 8) and the mean aligned mass ("purity").
pub fn aligned_purity(model: &TopicModel, planted: usize) -> (Vec<usize>, f64) {
    assert_eq!(model.k, planted);
    let mass = topic_mass(model, planted);
    permutations(planted)
        .into_iter()
        .map(|perm| {
            let score: f64 = perm.iter().enumerate().map(|(k, &j)| mass[k][j]).sum();
            (perm, score / planted as f64)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

/// Largest deviation between a forward pass on a random toy instance and
/// one on the same instance with its evidence shuffled, after undoing the
/// shuffle. Errors if the predicted label changes.
pub fn permutation_deviation(seed: u64) -> Result<f64, String> {
    use rand::seq::SliceRandom;
    use veritopic::checks::{toy_example, ToySizes};
    use veritopic::model::Architecture;
    use veritopic::numerics::{Graph, ParamStore, Var};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = ToySizes {
        evidence: rng.random_range(2..6),
        ..ToySizes::default()
    };
    let arch = Architecture::new(sizes.model_config()).map_err(|e| e.to_string())?;
    let mut store = ParamStore::new();
    arch.init(&mut store, seed).map_err(|e| e.to_string())?;
    let (ex, p) = toy_example(&sizes, &mut rng);
    let mut order: Vec<usize> = (0..sizes.evidence).collect();
    order.shuffle(&mut rng);
    let shuffled = ex.permuted(&order);

    let mut g1 = Graph::new();
    let f1 = arch.forward(&mut g1, &store, &ex, &p).map_err(|e| e.to_string())?;
    let mut g2 = Graph::new();
    let f2 = arch.forward(&mut g2, &store, &shuffled, &p).map_err(|e| e.to_string())?;
    let (v1, v2) = (f1.verdict(&g1), f2.verdict(&g2));
    if v1.label != v2.label {
        return Err(format!("seed {seed}: label {:?} became {:?}", v1.label, v2.label));
    }
    let mut worst: f64 = v1.rho.iter().zip(&v2.rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let rows = |g: &Graph, v: Var| -> Vec<Vec<f64>> {
        let t = g.value(v);
        match t.shape() {
            [n] => (0..*n).map(|i| vec![t.data()[i]]).collect(),
            _ => (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect(),
        }
    };
    let pairs = [
        (f1.h, f2.h),
        (f1.coherence.alpha, f2.coherence.alpha),
        (f1.coherence.beta, f2.coherence.beta),
        (f1.coherence.t_hat, f2.coherence.t_hat),
        (f1.coherence.a, f2.coherence.a),
        (f1.coherence.s, f2.coherence.s),
        (f1.capsules.evidence_logits, f2.capsules.evidence_logits),
    ];
    for (a, b) in pairs {
        let (ra, rb) = (rows(&g1, a), rows(&g2, b));
        for (i, &src) in order.iter().enumerate() {
            for (x, y) in ra[src].iter().zip(&rb[i]) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    for (i, &src) in order.iter().enumerate() {
        worst = worst.max((v1.evidence_scores[src] - v2.evidence_scores[i]).abs());
    }
    Ok(worst)
}

/// Compare one accumulation step over `batch` examples against gradients
/// summed one example at a time, and the resulting parameters against a
/// hand-written first Adam step. Returns the two largest deviations.
pub fn accumulation_deviation(batch: usize, seed: u64) -> (f64, f64) {
    use veritopic::checks::{toy_example, ToySizes};
    use veritopic::model::{Architecture, Example};
    use veritopic::numerics::{Adam, ParamStore};
    use veritopic::pipeline::train::accumulation_step;

    let sizes = ToySizes::default();
    let arch = Architecture::new(sizes.model_config()).unwrap();
    let mut store = ParamStore::new();
    arch.init(&mut store, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (first, p) = toy_example(&sizes, &mut rng);
    let mut examples = vec![first];
    while examples.len() < batch {
        examples.push(toy_example(&sizes, &mut rng).0);
    }

    let mut summed: Vec<Vec<f64>> = store.iter().map(|q| vec![0.0; q.value.len()]).collect();
    for ex in &examples {
        let (_, grads, _) = arch.example_gradients(&store, ex, &p).unwrap();
        for (acc, g) in summed.iter_mut().zip(&grads.0) {
            for (a, x) in acc.iter_mut().zip(g.data()) {
                *a += x;
            }
        }
    }

    let before = store.clone();
    let lr = 1e-3;
    let mut adam = Adam::new(&store, lr);
    let refs: Vec<&Example> = examples.iter().collect();
    accumulation_step(&arch, &mut store, &mut adam, &refs, &p).unwrap();

    let mut grad_err: f64 = 0.0;
    let mut step_err: f64 = 0.0;
    for ((after, old), want) in store.iter().zip(before.iter()).zip(&summed) {
        for (k, g) in want.iter().enumerate() {
            grad_err = grad_err.max((after.grad.data()[k] - g).abs());
            // First Adam step: m̂ = g and v̂ = g², so the move is lr·g/(|g|+ε).
            let expected = old.value.data()[k] - lr * g / (g.abs() + 1e-8);
            step_err = step_err.max((after.value.data()[k] - expected).abs());
        }
    }
    (grad_err, step_err)
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// The five-claim metric fixture: (predictions, gold).
pub fn metric_fixture() -> (Vec<veritopic::pipeline::Prediction>, Vec<veritopic::pipeline::ClaimInstance>) {
    use veritopic::pipeline::corpus::read_jsonl;
    use veritopic::pipeline::load_corpus;
    (
        read_jsonl(&fixture("metric_pred.jsonl")).unwrap(),
        load_corpus(&fixture("metric_gold.jsonl")).unwrap(),
    )
}
