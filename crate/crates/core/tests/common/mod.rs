#![allow(dead_code)]

use std::f64::consts::PI;

use fanpower::mlp::{Network, NetworkShape};
use fanpower::pipeline::Recording;
use fanpower::synth::{synth_dataset, Interferer, PowerScript, RoomProfile, SynthConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `|X_k|` for `k = 0..=N/2` by direct summation. The twiddle angle is
/// reduced modulo N first so large `k * n` products stay exact.
pub fn direct_dft_magnitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &v) in x.iter().enumerate() {
                let angle = 2.0 * PI * ((k * j) % n) as f64 / n as f64;
                re += v * angle.cos();
                im -= v * angle.sin();
            }
            re.hypot(im)
        })
        .collect()
}

pub const LEVELS_W: [f64; 4] = [100.0, 150.0, 200.0, 250.0];
pub const SHORT_SEGMENT_S: f64 = 2.0;

fn base(seed: u64, segments: usize) -> SynthConfig {
    SynthConfig {
        sample_rate_hz: 16000,
        segment_s: SHORT_SEGMENT_S,
        segments,
        seed,
        script: PowerScript::Levels {
            levels: LEVELS_W.to_vec(),
            weights: vec![],
            jitter_w: 0.0,
        },
        ..SynthConfig::default()
    }
}

pub fn clean_config(seed: u64, segments: usize) -> SynthConfig {
    SynthConfig {
        room: RoomProfile {
            ac_level: 0.0,
            broadband_noise_level: 0.05,
            ..RoomProfile::default()
        },
        ..base(seed, segments)
    }
}

/// AC hum, a second fan and strong broadband noise.
pub fn noisy_config(seed: u64, segments: usize) -> SynthConfig {
    SynthConfig {
        room: RoomProfile {
            ac_level: 5.0,
            broadband_noise_level: 12.0,
            ..RoomProfile::default()
        },
        interferer: Some(Interferer::default()),
        ..base(seed, segments)
    }
}

/// Noisy condition where class 2 gets 5% of the segments.
pub fn imbalanced_config(seed: u64, segments: usize) -> SynthConfig {
    let mut cfg = noisy_config(seed, segments);
    cfg.script = PowerScript::Levels {
        levels: LEVELS_W.to_vec(),
        weights: vec![0.95 / 3.0, 0.05, 0.95 / 3.0, 0.95 / 3.0],
        jitter_w: 0.0,
    };
    cfg
}

pub fn record(cfg: &SynthConfig) -> Recording {
    let (signal, trace) = synth_dataset(cfg).expect("synthesis succeeds");
    Recording { signal, trace }
}

pub fn random_batch(rng: &mut ChaCha8Rng, m: usize, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let inputs = (0..n)
        .map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let targets = (0..n)
        .map(|_| {
            (0..2)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    (inputs, targets)
}

pub fn random_shape(rng: &mut ChaCha8Rng) -> NetworkShape {
    NetworkShape {
        inputs: rng.random_range(1..=6),
        hidden1: rng.random_range(1..=6),
        hidden2: rng.random_range(1..=5),
        outputs: 2,
    }
}

/// Largest gap between backprop and central differences, relative to the
/// larger magnitude with a 1e-7 floor.
pub fn gradient_gap(net: &Network, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let h = 1e-5;
    let (_, analytic) = net.loss_and_gradient(inputs, targets).unwrap();
    let params = net.parameters();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + h;
        probe.set_parameters(&p).unwrap();
        let up = probe.mse(inputs, targets).unwrap();
        p[i] = params[i] - h;
        probe.set_parameters(&p).unwrap();
        let down = probe.mse(inputs, targets).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}
