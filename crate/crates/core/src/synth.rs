//! Synthetic server-room recordings with a known wattage trace.
//!
//! Each segment holds one fan whose speed follows the wattage, so its
//! blade-pass tone (`rpm / 60 * blades`) and overtones move with the load.
//! Optional extras are low-frequency air-conditioning rumble (white noise
//! through a cascade of moving averages), a second fixed-speed fan standing
//! in for a neighbouring tenant, and white background noise.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::{segment_len, AudioSignal, PowerTrace};
use crate::error::{Error, Result};

/// Peak amplitude after normalization.
pub const HEADROOM: f64 = 0.95;

/// Moving-average passes used for the AC low-pass.
const AC_FILTER_PASSES: usize = 4;

pub fn blade_pass_freq(rpm: f64, blades: u32) -> f64 {
    rpm / 60.0 * blades as f64
}

/// Wattage-to-speed mapping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FanCurve {
    /// Straight line from `(power_min_w, rpm_min)` to `(power_max_w, rpm_max)`.
    #[default]
    Affine,
    /// Linear interpolation through `(watts, rpm)` points sorted by watts.
    Piecewise { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FanProfile {
    pub blade_count: u32,
    pub rpm_min: f64,
    pub rpm_max: f64,
    /// Overtones above the blade-pass fundamental.
    pub harmonics: usize,
    /// Amplitude ratio between successive overtones.
    pub harmonic_decay: f64,
    pub curve: FanCurve,
}

impl Default for FanProfile {
    fn default() -> Self {
        Self {
            blade_count: 7,
            rpm_min: 2000.0,
            rpm_max: 6000.0,
            harmonics: 3,
            harmonic_decay: 0.5,
            curve: FanCurve::Affine,
        }
    }
}

impl FanProfile {
    pub fn validate(&self) -> Result<()> {
        if !(5..=7).contains(&self.blade_count) {
            return Err(Error::InvalidInput(format!(
                "blade count {} outside 5..=7",
                self.blade_count
            )));
        }
        if !(self.rpm_min > 0.0 && self.rpm_min < self.rpm_max && self.rpm_max.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bad rpm range {}..{}",
                self.rpm_min, self.rpm_max
            )));
        }
        if !(self.harmonic_decay > 0.0 && self.harmonic_decay < 1.0) {
            return Err(Error::InvalidInput(format!(
                "harmonic decay {} outside (0, 1)",
                self.harmonic_decay
            )));
        }
        if let FanCurve::Piecewise { points } = &self.curve {
            if points.len() < 2 {
                return Err(Error::InvalidInput(
                    "piecewise curve needs two points".into(),
                ));
            }
            for w in points.windows(2) {
                if !(w[0].0 < w[1].0 && w[0].1 <= w[1].1) {
                    return Err(Error::InvalidInput(
                        "piecewise curve must increase in watts and not decrease in rpm".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoomProfile {
    pub ac_cutoff_hz: f64,
    /// RMS of the AC component, relative to a unit fan fundamental.
    pub ac_level: f64,
    /// Standard deviation of the white background noise.
    pub broadband_noise_level: f64,
    pub power_min_w: f64,
    pub power_max_w: f64,
}

impl Default for RoomProfile {
    fn default() -> Self {
        Self {
            ac_cutoff_hz: 200.0,
            ac_level: 0.0,
            broadband_noise_level: 0.0,
            power_min_w: 100.0,
            power_max_w: 250.0,
        }
    }
}

impl RoomProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.ac_cutoff_hz > 0.0 && self.ac_cutoff_hz.is_finite()) {
            return Err(Error::InvalidInput("AC cutoff must be positive".into()));
        }
        if !(self.ac_level >= 0.0 && self.broadband_noise_level >= 0.0) {
            return Err(Error::InvalidInput(
                "noise levels must be nonnegative".into(),
            ));
        }
        if !(self.power_min_w > 0.0 && self.power_min_w < self.power_max_w) {
            return Err(Error::InvalidInput(format!(
                "bad power range {}..{}",
                self.power_min_w, self.power_max_w
            )));
        }
        Ok(())
    }
}

/// A neighbouring fan at constant speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interferer {
    pub rpm: f64,
    pub blade_count: u32,
    /// Amplitude relative to a unit fan fundamental.
    pub level: f64,
}

impl Default for Interferer {
    fn default() -> Self {
        Self {
            rpm: 3300.0,
            blade_count: 6,
            level: 1.0,
        }
    }
}

/// How the wattage evolves from segment to segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PowerScript {
    /// Explicit wattage per segment.
    Scripted { watts: Vec<f64> },
    /// Discrete levels in shuffled order. Level `i` receives a share of the
    /// segments proportional to `weights[i]` (equal shares when empty); each
    /// reading is perturbed uniformly by up to `jitter_w`.
    Levels {
        levels: Vec<f64>,
        #[serde(default)]
        weights: Vec<f64>,
        #[serde(default)]
        jitter_w: f64,
    },
    /// Reflecting random walk inside the room's power range.
    RandomWalk { start_w: f64, step_w: f64 },
}

impl Default for PowerScript {
    fn default() -> Self {
        PowerScript::RandomWalk {
            start_w: 175.0,
            step_w: 10.0,
        }
    }
}

/// Largest-remainder split of `total` items according to `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

impl PowerScript {
    pub fn wattages<R: Rng>(
        &self,
        segments: usize,
        room: &RoomProfile,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let watts = match self {
            PowerScript::Scripted { watts } => {
                if watts.len() != segments {
                    return Err(Error::InvalidInput(format!(
                        "script has {} wattages for {segments} segments",
                        watts.len()
                    )));
                }
                watts.clone()
            }
            PowerScript::Levels {
                levels,
                weights,
                jitter_w,
            } => {
                if levels.is_empty() {
                    return Err(Error::InvalidInput("no power levels given".into()));
                }
                let weights = if weights.is_empty() {
                    vec![1.0; levels.len()]
                } else if weights.len() == levels.len() && weights.iter().all(|w| *w >= 0.0) {
                    weights.clone()
                } else {
                    return Err(Error::InvalidInput(
                        "level weights must be nonnegative, one per level".into(),
                    ));
                };
                if weights.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::InvalidInput("level weights sum to zero".into()));
                }
                let counts = apportion(segments, &weights);
                let mut watts: Vec<f64> = levels
                    .iter()
                    .zip(&counts)
                    .flat_map(|(&l, &c)| std::iter::repeat_n(l, c))
                    .collect();
                watts.shuffle(rng);
                if *jitter_w > 0.0 {
                    for w in &mut watts {
                        *w += rng.random_range(-*jitter_w..=*jitter_w);
                    }
                }
                watts
            }
            PowerScript::RandomWalk { start_w, step_w } => {
                let (lo, hi) = (room.power_min_w, room.power_max_w);
                let mut w = start_w.clamp(lo, hi);
                let mut watts = Vec::with_capacity(segments);
                for _ in 0..segments {
                    watts.push(w);
                    w += rng.random_range(-*step_w..=*step_w);
                    if w < lo {
                        w = 2.0 * lo - w;
                    }
                    if w > hi {
                        w = 2.0 * hi - w;
                    }
                    w = w.clamp(lo, hi);
                }
                watts
            }
        };
        if let Some(w) = watts.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidInput(format!("wattage {w} is not positive")));
        }
        Ok(watts)
    }
}

/// Fan speed for a wattage; clamps to the room's power range.
pub fn power_to_rpm(watts: f64, fan: &FanProfile, room: &RoomProfile) -> f64 {
    match &fan.curve {
        FanCurve::Affine => {
            let w = watts.clamp(room.power_min_w, room.power_max_w);
            let t = (w - room.power_min_w) / (room.power_max_w - room.power_min_w);
            fan.rpm_min + t * (fan.rpm_max - fan.rpm_min)
        }
        FanCurve::Piecewise { points } => {
            let first = points[0];
            let last = points[points.len() - 1];
            if watts <= first.0 {
                return first.1;
            }
            if watts >= last.0 {
                return last.1;
            }
            let i = points.partition_point(|p| p.0 <= watts);
            let (a, b) = (points[i - 1], points[i]);
            a.1 + (watts - a.0) / (b.0 - a.0) * (b.1 - a.1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sample_rate_hz: u32,
    pub segment_s: f64,
    pub segments: usize,
    pub fan: FanProfile,
    pub room: RoomProfile,
    pub script: PowerScript,
    pub interferer: Option<Interferer>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16000,
            segment_s: 20.0,
            segments: 1,
            fan: FanProfile::default(),
            room: RoomProfile::default(),
            script: PowerScript::default(),
            interferer: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<usize> {
        if self.segments == 0 {
            return Err(Error::InvalidInput("need at least one segment".into()));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        self.fan.validate()?;
        self.room.validate()?;
        if let Some(i) = &self.interferer {
            if !(i.rpm > 0.0 && i.blade_count >= 1 && i.level >= 0.0) {
                return Err(Error::InvalidInput("bad interferer parameters".into()));
            }
        }
        if self.room.ac_cutoff_hz >= self.sample_rate_hz as f64 / 2.0 {
            return Err(Error::InvalidInput("AC cutoff above Nyquist".into()));
        }
        segment_len(self.segment_s, self.sample_rate_hz)
    }
}

/// The separately generated parts of one segment, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentComponents {
    pub watts: f64,
    pub rpm: f64,
    pub blade_pass_hz: f64,
    pub fan: Vec<f64>,
    pub interferer: Vec<f64>,
    pub ac: Vec<f64>,
    pub broadband: Vec<f64>,
}

impl SegmentComponents {
    pub fn mix(&self) -> Vec<f64> {
        (0..self.fan.len())
            .map(|i| self.fan[i] + self.interferer[i] + self.ac[i] + self.broadband[i])
            .collect()
    }
}

fn add_tone(out: &mut [f64], freq: f64, amplitude: f64, phase: f64, fs: f64) {
    if freq >= fs / 2.0 || amplitude == 0.0 {
        return;
    }
    let w = 2.0 * PI * freq / fs;
    for (n, x) in out.iter_mut().enumerate() {
        *x += amplitude * (w * n as f64 + phase).sin();
    }
}

/// Cascaded moving average; the first spectral null sits at `fs / len`.
fn moving_average_lowpass(input: &[f64], len: usize, passes: usize) -> Vec<f64> {
    let mut cur = input.to_vec();
    for _ in 0..passes {
        let mut next = Vec::with_capacity(cur.len().saturating_sub(len - 1));
        let mut acc: f64 = cur[..len].iter().sum();
        next.push(acc / len as f64);
        for i in len..cur.len() {
            acc += cur[i] - cur[i - len];
            next.push(acc / len as f64);
        }
        cur = next;
    }
    cur
}

fn segment_rng(seed: u64, segment: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // stream 0 drives the wattage script
    rng.set_stream(segment as u64 + 1);
    rng
}

/// Generates the components of segment `index` at the given wattage.
pub fn synth_segment(config: &SynthConfig, index: usize, watts: f64) -> Result<SegmentComponents> {
    let n = config.validate()?;
    let fs = config.sample_rate_hz as f64;
    let mut rng = segment_rng(config.seed, index);

    let rpm = power_to_rpm(watts, &config.fan, &config.room);
    let f0 = blade_pass_freq(rpm, config.fan.blade_count);
    let mut fan = vec![0.0; n];
    let mut amplitude = 1.0;
    for h in 1..=config.fan.harmonics + 1 {
        let phase = rng.random_range(0.0..2.0 * PI);
        add_tone(&mut fan, h as f64 * f0, amplitude, phase, fs);
        amplitude *= config.fan.harmonic_decay;
    }

    let mut interferer = vec![0.0; n];
    if let Some(i) = &config.interferer {
        let phase = rng.random_range(0.0..2.0 * PI);
        add_tone(
            &mut interferer,
            blade_pass_freq(i.rpm, i.blade_count),
            i.level,
            phase,
            fs,
        );
    }

    let ac = if config.room.ac_level > 0.0 {
        let len = ((fs / config.room.ac_cutoff_hz).round() as usize).max(1);
        let warmup = (len - 1) * AC_FILTER_PASSES;
        let white: Vec<f64> = (0..n + warmup)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut ac = moving_average_lowpass(&white, len, AC_FILTER_PASSES);
        let rms = (ac.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
        if rms > 0.0 {
            let scale = config.room.ac_level / rms;
            ac.iter_mut().for_each(|x| *x *= scale);
        }
        ac
    } else {
        vec![0.0; n]
    };

    let broadband: Vec<f64> = if config.room.broadband_noise_level > 0.0 {
        let sigma = config.room.broadband_noise_level;
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            })
            .collect()
    } else {
        vec![0.0; n]
    };

    Ok(SegmentComponents {
        watts,
        rpm,
        blade_pass_hz: f0,
        fan,
        interferer,
        ac,
        broadband,
    })
}

/// Wattage per segment, drawn from the script with the config's seed.
pub fn scripted_wattages(config: &SynthConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    config
        .script
        .wattages(config.segments, &config.room, &mut rng)
}

/// A complete recording and its power trace. The audio is scaled so that
/// its peak is [`HEADROOM`].
pub fn synth_dataset(config: &SynthConfig) -> Result<(AudioSignal, PowerTrace)> {
    let n = config.validate()?;
    let watts = scripted_wattages(config)?;
    let segments: Vec<Vec<f64>> = watts
        .par_iter()
        .enumerate()
        .map(|(k, &w)| synth_segment(config, k, w).map(|c| c.mix()))
        .collect::<Result<_>>()?;
    let mut samples = Vec::with_capacity(n * config.segments);
    for s in segments {
        samples.extend(s);
    }
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        let scale = HEADROOM / peak;
        samples.iter_mut().for_each(|x| *x *= scale);
    }
    if samples.iter().any(|x| x.abs() > 1.0) {
        return Err(Error::Internal("normalized signal clips".into()));
    }
    let signal = AudioSignal::new(samples, config.sample_rate_hz)?;
    let trace = PowerTrace::from_watts(&watts, config.segment_s)?;
    Ok((signal, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blade_pass_examples() {
        assert_eq!(blade_pass_freq(3000.0, 6), 300.0);
        assert!((blade_pass_freq(2000.0, 5) - 166.666_666).abs() < 1e-5);
        assert_eq!(blade_pass_freq(6000.0, 7), 700.0);
    }

    #[test]
    fn affine_rpm_map() {
        let fan = FanProfile::default();
        let room = RoomProfile::default();
        assert_eq!(power_to_rpm(room.power_min_w, &fan, &room), fan.rpm_min);
        assert_eq!(power_to_rpm(175.0, &fan, &room), 4000.0);
        assert_eq!(power_to_rpm(1.0, &fan, &room), fan.rpm_min);
        assert_eq!(power_to_rpm(1e6, &fan, &room), fan.rpm_max);
        let sweep: Vec<f64> = (0..100)
            .map(|i| power_to_rpm(100.0 + 1.5 * i as f64, &fan, &room))
            .collect();
        assert!(sweep.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn piecewise_rpm_map() {
        let fan = FanProfile {
            curve: FanCurve::Piecewise {
                points: vec![(100.0, 2000.0), (150.0, 2500.0), (250.0, 6000.0)],
            },
            ..FanProfile::default()
        };
        fan.validate().unwrap();
        let room = RoomProfile::default();
        assert_eq!(power_to_rpm(125.0, &fan, &room), 2250.0);
        assert_eq!(power_to_rpm(200.0, &fan, &room), 4250.0);
        assert_eq!(power_to_rpm(50.0, &fan, &room), 2000.0);
    }

    #[test]
    fn apportion_counts() {
        assert_eq!(apportion(200, &[1.0; 4]), vec![50; 4]);
        let c = apportion(80, &[0.3167, 0.05, 0.3167, 0.3166]);
        assert_eq!(c.iter().sum::<usize>(), 80);
        assert_eq!(c[1], 4);
    }

    #[test]
    fn rejects_bad_configs() {
        let cfg = SynthConfig {
            segments: 0,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SynthConfig {
            fan: FanProfile {
                blade_count: 9,
                ..FanProfile::default()
            },
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn random_walk_stays_in_range() {
        let room = RoomProfile::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = PowerScript::RandomWalk {
            start_w: 240.0,
            step_w: 40.0,
        }
        .wattages(500, &room, &mut rng)
        .unwrap();
        assert!(w.iter().all(|&x| (100.0..=250.0).contains(&x)));
    }

    #[test]
    fn lowpass_output_length() {
        let x = vec![1.0; 100];
        let y = moving_average_lowpass(&x, 10, 3);
        assert_eq!(y.len(), 100 - 27);
        assert!(y.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }
}
