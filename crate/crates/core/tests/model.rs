mod common;

use common::{accumulation_deviation, permutation_deviation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use veritopic::checks::{toy_example, ToySizes};
use veritopic::model::Verifier;

#[test]
fn evidence_order_does_not_matter() {
    for seed in 0..25 {
        let dev = permutation_deviation(seed).unwrap();
        assert!(dev < 1e-9, "seed {seed}: deviation {dev:e}");
    }
}

#[test]
fn accumulated_step_equals_summed_gradients() {
    for seed in [3, 4] {
        let (grad, step) = accumulation_deviation(8, seed);
        assert!(grad < 1e-9, "gradient deviation {grad:e}");
        assert!(step < 1e-9, "parameter deviation {step:e}");
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let sizes = ToySizes::default();
    let mut v = Verifier::new(sizes.model_config(), sizes.vocab(), 5).unwrap();
    v.disable_coherence();
    let (ex, p) = toy_example(&sizes, &mut ChaCha8Rng::seed_from_u64(1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    v.save(&path).unwrap();
    let back = Verifier::load(&path).unwrap();
    assert!(back.coherence_disabled());
    assert_eq!(v.predict(&ex, &p).unwrap(), back.predict(&ex, &p).unwrap());
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let sizes = ToySizes::default();
    let v = Verifier::new(sizes.model_config(), sizes.vocab(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    v.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(Verifier::load(&path).is_err());
}

#[test]
fn topic_word_matrix_is_a_constant() {
    let sizes = ToySizes::default();
    let v = Verifier::new(sizes.model_config(), sizes.vocab(), 2).unwrap();
    let (ex, p) = toy_example(&sizes, &mut ChaCha8Rng::seed_from_u64(2));
    // P is passed in per call, never stored: no parameter can hold it, and
    // gradients come back for stored parameters only.
    assert!(v.params.iter().all(|q| q.value.shape() != p.shape()));
    let (_, grads, _) = v.arch.example_gradients(&v.params, &ex, &p).unwrap();
    assert_eq!(grads.0.len(), v.params.len());
    let before = p.clone();
    v.predict(&ex, &p).unwrap();
    assert_eq!(p, before);
}

#[test]
fn non_finite_loss_names_the_instance() {
    use veritopic::numerics::Tensor;
    let sizes = ToySizes::default();
    let mut v = Verifier::new(sizes.model_config(), sizes.vocab(), 2).unwrap();
    let (mut ex, p) = toy_example(&sizes, &mut ChaCha8Rng::seed_from_u64(2));
    ex.id = "claim-17".into();
    let shape = v.params.value("capsule.w0").unwrap().shape().to_vec();
    v.params.set_value("capsule.w0", Tensor::full(&shape, f64::NAN)).unwrap();
    let err = v.arch.example_gradients(&v.params, &ex, &p).unwrap_err().to_string();
    assert!(err.contains("claim-17"), "{err}");
}

#[test]
fn ablation_zeroes_and_freezes_only_the_coherence_layer() {
    let sizes = ToySizes::default();
    let mut v = Verifier::new(sizes.model_config(), sizes.vocab(), 2).unwrap();
    let n = v.disable_coherence();
    assert!(n > 0);
    for p in v.params.iter() {
        let coherent = p.name.starts_with("coherence.");
        assert_eq!(p.frozen, coherent, "{}", p.name);
        if coherent {
            assert!(p.value.data().iter().all(|&x| x == 0.0));
        }
    }
}
