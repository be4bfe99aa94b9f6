mod common;

use fanpower::labeling::{fit_bounds, ClassLabel, TargetCode};
use fanpower::mlp::*;
use fanpower::spectral::{ExtractionConfig, MinMaxScaler};
use fanpower::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{gradient_gap, random_batch, random_shape};

#[test]
fn backprop_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cases = vec![NetworkShape {
        inputs: 3,
        hidden1: 4,
        hidden2: 3,
        outputs: 2,
    }];
    cases.extend((0..19).map(|_| random_shape(&mut rng)));
    for shape in cases {
        let net = Network::random(shape, 1.0, &mut rng);
        let n = rng.random_range(1..=40);
        let (x, t) = random_batch(&mut rng, shape.inputs, n);
        let gap = gradient_gap(&net, &x, &t);
        assert!(gap < 1e-4, "{shape:?} batch {n}: {gap:e}");
    }
}

#[test]
fn small_steps_do_not_raise_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let shape = random_shape(&mut rng);
        let net = Network::random(shape, 0.5, &mut rng);
        let (x, t) = random_batch(&mut rng, shape.inputs, 24);
        let cfg = TrainConfig {
            max_epochs: 1,
            learning_rate: 1e-4,
            goal_error: 1e-12,
            ..TrainConfig::default()
        };
        let out = train_network(net, &x, &t, &cfg).unwrap();
        assert_eq!(out.history.len(), 2);
        assert!(out.history[1] <= out.history[0]);
    }
}

#[test]
fn identical_inputs_train_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (x, t) = random_batch(&mut rng, 5, 50);
    let codes: Vec<TargetCode> = t
        .iter()
        .map(|v| TargetCode::new(v[0] as i8, v[1] as i8).unwrap())
        .collect();
    let cfg = TrainConfig {
        max_epochs: 200,
        seed: 99,
        ..TrainConfig::default()
    };
    let a = train(&x, &codes, &cfg).unwrap();
    let b = train(&x, &codes, &cfg).unwrap();
    assert_eq!(a.network.parameters(), b.network.parameters());
    assert_eq!(a.history, b.history);
    let c = train(&x, &codes, &TrainConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(a.network.parameters(), c.network.parameters());
}

#[test]
fn history_stops_at_goal() {
    let x = vec![vec![0.0]; 4];
    let t = vec![TargetCode::new(1, 1).unwrap(); 4];
    let cfg = TrainConfig {
        max_epochs: 100_000,
        learning_rate: 0.5,
        goal_error: 1e-2,
        ..TrainConfig::default()
    };
    let out = train(&x, &t, &cfg).unwrap();
    assert_eq!(out.stop, StopReason::GoalReached);
    assert!(out.final_mse() <= 1e-2);
    assert!(out.history[..out.history.len() - 1]
        .iter()
        .all(|&l| l > 1e-2));
}

fn toy_set() -> (Vec<Vec<f64>>, Vec<TargetCode>) {
    let x = vec![
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 0.0],
        vec![1.0, 1.0],
    ];
    let t = [(1, 1), (-1, 1), (1, -1), (-1, -1)]
        .iter()
        .map(|&(a, b)| TargetCode::new(a, b).unwrap())
        .collect();
    (x, t)
}

fn codes_of(net: &Network, x: &[Vec<f64>]) -> Vec<TargetCode> {
    x.iter()
        .map(|p| threshold(&net.forward(p).unwrap()).unwrap())
        .collect()
}

// Two inputs give a single second-layer neuron, so both outputs are
// monotone functions of one scalar and one of the four codes is
// unreachable whatever the weights.
#[test]
fn formula_shape_cannot_separate_the_toy_set() {
    assert_eq!(hidden_sizes(2, 2), (4, 1));
    let (x, t) = toy_set();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let net = Network::random(NetworkShape::for_inputs(2, 2), 5.0, &mut rng);
        let mut seen = codes_of(&net, &x);
        seen.sort_by_key(|c| c.pair());
        seen.dedup();
        assert!(seen.len() <= 3);
    }
    let out = train(&x, &t, &TrainConfig::default()).unwrap();
    assert_ne!(codes_of(&out.network, &x), t);
}

fn trained_toy() -> Network {
    let (x, t) = toy_set();
    let t: Vec<Vec<f64>> = t.iter().map(|c| c.as_f64().to_vec()).collect();
    let shape = NetworkShape {
        inputs: 2,
        hidden1: 4,
        hidden2: 4,
        outputs: 2,
    };
    let cfg = TrainConfig {
        max_epochs: 20_000,
        learning_rate: 0.5,
        ..TrainConfig::default()
    };
    let net = Network::random(
        shape,
        cfg.init_range,
        &mut ChaCha8Rng::seed_from_u64(cfg.seed),
    );
    train_network(net, &x, &t, &cfg).unwrap().network
}

#[test]
fn wider_net_separates_the_toy_set() {
    let (x, t) = toy_set();
    let net = trained_toy();
    assert_eq!(codes_of(&net, &x), t);

    let scaler = MinMaxScaler::fit(x.iter().map(|r| r.as_slice())).unwrap();
    let bounds = fit_bounds(&[0.0, 4.0]).unwrap();
    let model = MlpModel::new(16000, 2, ExtractionConfig::default(), scaler, bounds, net).unwrap();
    assert_eq!(model.predict(&[0.0, 1.0]).unwrap(), ClassLabel::Low);
    assert!(matches!(
        model.predict(&[0.0, 1.0, 2.0]),
        Err(Error::Dimension {
            expected: 2,
            actual: 3
        })
    ));
}

#[test]
fn hand_computed_forward_pass() {
    let l1 = Layer::from_parts(1, vec![2.0, -1.0], vec![0.0, 0.5]).unwrap();
    let l2 = Layer::from_parts(2, vec![1.0, 1.0], vec![-0.25]).unwrap();
    let l3 = Layer::from_parts(1, vec![3.0, -0.5], vec![0.0, 0.1]).unwrap();
    let net = Network::from_layers(vec![l1, l2, l3]).unwrap();
    let x = 0.3f64;
    let h1 = [(2.0 * x).tanh(), (-x + 0.5).tanh()];
    let h2 = (h1[0] + h1[1] - 0.25).tanh();
    let expect = [(3.0 * h2).tanh(), (-0.5 * h2 + 0.1).tanh()];
    let got = net.forward(&[x]).unwrap();
    for (g, e) in got.iter().zip(expect) {
        assert!((g - e).abs() < 1e-15);
    }
    assert!(Layer::from_parts(2, vec![1.0; 3], vec![0.0]).is_err());
}

#[test]
fn tansig_is_tanh() {
    for i in -400..=400 {
        let x = i as f64 * 0.05;
        assert!((tansig(x) - x.tanh()).abs() < 1e-15);
    }
    assert!((tansig(0.5) - 0.462117).abs() < 1e-6);
}

fn toy_model() -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Network::random(NetworkShape::for_inputs(4, 2), 0.5, &mut rng);
    let rows = [vec![0.1, 2.0, -3.0, 1e-9], vec![0.7, 2.5, 3.0, 1.0 / 3.0]];
    let scaler = MinMaxScaler::fit(rows.iter().map(|r| r.as_slice())).unwrap();
    let bounds = fit_bounds(&[101.25, 247.1]).unwrap();
    MlpModel::new(
        16000,
        32000,
        ExtractionConfig::default(),
        scaler,
        bounds,
        net,
    )
    .unwrap()
}

#[test]
fn model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let model = toy_model();
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_json(), model.to_json());
}

#[test]
fn damaged_model_files() {
    let text = toy_model().to_json();
    let cut = &text[..text.len() / 2];
    assert!(matches!(MlpModel::from_json(cut), Err(Error::Parse(_))));
    assert!(matches!(
        MlpModel::from_json("not json"),
        Err(Error::Parse(_))
    ));

    let newer = text.replacen("\"version\": 1", "\"version\": 7", 1);
    assert_ne!(newer, text);
    assert!(matches!(
        MlpModel::from_json(&newer),
        Err(Error::IncompatibleModel(_))
    ));
    let other = text.replacen("fanpower-mlp", "something-else", 1);
    assert!(matches!(
        MlpModel::from_json(&other),
        Err(Error::IncompatibleModel(_))
    ));

    let missing = std::path::Path::new("/nonexistent/dir/model.json");
    assert!(matches!(load_model(missing), Err(Error::Io { .. })));
}

proptest! {
    #[test]
    fn hidden_sizes_monotone(m in 1usize..20_000, p in 1usize..6) {
        let (a1, a2) = hidden_sizes(m, p);
        let (b1, b2) = hidden_sizes(m + 1, p);
        prop_assert!(a1 <= b1 && a2 <= b2);
        prop_assert!(a1 >= 1 && a2 >= 1);
    }

    #[test]
    fn threshold_ignores_positive_scale(
        a in -1.0f64..1.0,
        b in -1.0f64..1.0,
        s in 1e-6f64..1e6,
    ) {
        prop_assert_eq!(threshold(&[a, b]).unwrap(), threshold(&[s * a, s * b]).unwrap());
    }

    #[test]
    fn outputs_stay_in_open_unit_box(seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::random(NetworkShape::for_inputs(3, 2), 0.5, &mut rng);
        let y = net.forward(&x).unwrap();
        prop_assert!(y.iter().all(|v| v.abs() < 1.0));
    }
}
