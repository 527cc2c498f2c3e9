mod common;

use citefocus::fcm::LexicalScorer;
use citefocus::pipeline::{run_loop, LoopConfig, TrainingExample};
use citefocus::trainer::{
    example_from_tokens, gradients, loss_trace_csv, softmax, train, LossMode, ToyLm, TrainConfig, Vocabulary,
};
use citefocus::tokenize::EOS;
use common::{candidates, instances};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture_corpus() -> Vec<TrainingExample> {
    let insts = instances();
    let config = LoopConfig {
        max_iterations: 1,
        ..LoopConfig::shipped()
    };
    run_loop(&insts, &[candidates()], &insts, &LexicalScorer, &config)
        .unwrap()
        .training_set()
}

fn random_example(rng: &mut ChaCha8Rng, pieces: &[&str]) -> TrainingExample {
    let len = rng.gen_range(1..7);
    let mut answer: Vec<&str> = (0..len).map(|_| pieces[rng.gen_range(0..pieces.len())]).collect();
    answer.push(EOS);
    let weights: Vec<f64> = (0..answer.len()).map(|_| rng.gen_range(0.0..=1.0)).collect();
    example_from_tokens("q", &answer, &weights)
}

fn loss_of(model: &ToyLm, ex: &TrainingExample, mode: LossMode) -> f64 {
    match mode {
        LossMode::Nll => citefocus::trainer::nll_loss(model, ex).unwrap(),
        LossMode::Focused => citefocus::trainer::focused_loss(model, ex).unwrap(),
    }
}

#[test]
fn gradients_match_finite_differences() {
    let pieces = ["▁a", "▁b", "c", "▁d", "e"];
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ex = random_example(&mut rng, &pieces);
        let vocab = Vocabulary::from_examples(std::slice::from_ref(&ex));
        let model = ToyLm::new(vocab, 2, 3, seed);
        for mode in [LossMode::Nll, LossMode::Focused] {
            let g: Vec<f64> = gradients(&model, &ex, mode).unwrap().iter().copied().collect();
            assert_eq!(g.len(), model.parameter_count());
            let h = 1e-5;
            for (k, analytic) in g.iter().enumerate() {
                let mut plus = model.clone();
                *plus.params_mut().nth(k).unwrap() += h;
                let mut minus = model.clone();
                *minus.params_mut().nth(k).unwrap() -= h;
                let numeric = (loss_of(&plus, &ex, mode) - loss_of(&minus, &ex, mode)) / (2.0 * h);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "seed {seed} {mode:?} param {k}: {analytic} vs {numeric}");
            }
        }
    }
}

#[test]
fn loss_trace_is_non_increasing_over_fifty_step_windows() {
    let corpus = fixture_corpus();
    assert!(corpus.len() >= 4);
    let mut model = ToyLm::new(Vocabulary::from_examples(&corpus), 2, 8, 3);
    let config = TrainConfig {
        steps: 200,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let trace = train(&mut model, &corpus, &config).unwrap();
    assert_eq!(trace.len(), 200);
    for t in 0..trace.len() - 50 {
        assert!(trace[t + 50] <= trace[t], "step {t}: {} then {}", trace[t], trace[t + 50]);
    }
    assert!(trace.last().unwrap() < &trace[0]);
    let csv = loss_trace_csv(&trace);
    assert_eq!(csv.lines().count(), 201);
    assert!(csv.starts_with("step,loss\n0,"));
}

#[test]
fn distributions_stay_normalized_during_training() {
    let corpus = fixture_corpus();
    let mut model = ToyLm::new(Vocabulary::from_examples(&corpus), 2, 4, 1);
    let config = TrainConfig {
        steps: 1,
        learning_rate: 0.5,
        ..TrainConfig::default()
    };
    let contexts = [[0usize, 0], [0, 3], [5, 2], [7, 7]];
    for _ in 0..20 {
        train(&mut model, &corpus[..3], &config).unwrap();
        for ctx in &contexts {
            let p = model.next_distribution(ctx);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|x| *x >= 0.0));
        }
    }
    let s = softmax(&[1000.0, 0.0, -1000.0]);
    assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn training_is_deterministic_and_zero_steps_is_identity() {
    let corpus = fixture_corpus();
    let vocab = || Vocabulary::from_examples(&corpus);
    let config = TrainConfig {
        steps: 15,
        ..TrainConfig::default()
    };
    let mut a = ToyLm::new(vocab(), 2, 8, 11);
    let mut b = ToyLm::new(vocab(), 2, 8, 11);
    let ta = train(&mut a, &corpus, &config).unwrap();
    let tb = train(&mut b, &corpus, &config).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(a.to_checkpoint(), b.to_checkpoint());

    let mut c = ToyLm::new(vocab(), 2, 8, 11);
    let before = c.to_checkpoint();
    let trace = train(
        &mut c,
        &corpus,
        &TrainConfig {
            steps: 0,
            ..config.clone()
        },
    )
    .unwrap();
    assert!(trace.is_empty());
    assert_eq!(c.to_checkpoint(), before);
}

#[test]
fn checkpoint_survives_json() {
    let corpus = fixture_corpus();
    let mut model = ToyLm::new(Vocabulary::from_examples(&corpus), 2, 4, 2);
    train(
        &mut model,
        &corpus,
        &TrainConfig {
            steps: 5,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let json = serde_json::to_string(&model.to_checkpoint()).unwrap();
    let back = ToyLm::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
    for ex in &corpus {
        assert_eq!(
            citefocus::trainer::nll_loss(&back, ex).unwrap(),
            citefocus::trainer::nll_loss(&model, ex).unwrap()
        );
    }
}
