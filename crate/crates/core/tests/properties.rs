use fanpower::audio_io::*;
use fanpower::eval::{class_counts, split, EvalReport, SplitSpec};
use fanpower::labeling::{decode, encode, fit_bounds, ClassLabel};
use proptest::prelude::*;

fn unit_samples(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..=1.0, len)
}

proptest! {
    #[test]
    fn segments_are_contiguous_windows(
        samples in unit_samples(10..400),
        seg in 1usize..25,
        readings in 1usize..40,
    ) {
        // 100 Hz audio, one reading per `seg` samples
        let signal = AudioSignal::new(samples.clone(), 100).unwrap();
        let trace = PowerTrace::from_watts(&vec![150.0; readings], seg as f64 / 100.0).unwrap();
        let expected = (samples.len() / seg).min(readings);
        match segment_and_align(&signal, &trace, 0.0) {
            Ok(pairs) => {
                prop_assert_eq!(pairs.len(), expected);
                for (k, (s, _)) in pairs.iter().enumerate() {
                    prop_assert_eq!(&s.samples[..], &samples[k * seg..(k + 1) * seg]);
                }
            }
            Err(e) => prop_assert!(expected == 0, "{}", e),
        }
    }

    #[test]
    fn pcm16_round_trip_within_one_step(samples in unit_samples(1..500)) {
        let signal = AudioSignal::new(samples, 8000).unwrap();
        let back = decode_wav(&encode_wav(&signal, SampleFormat::Pcm16)).unwrap();
        prop_assert_eq!(back.sample_rate_hz(), 8000);
        for (a, b) in signal.samples().iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn float_round_trip_is_exact_in_f32(samples in unit_samples(1..300)) {
        let signal = AudioSignal::new(samples, 44100).unwrap();
        let back = decode_wav(&encode_wav(&signal, SampleFormat::Float32)).unwrap();
        for (a, b) in signal.samples().iter().zip(back.samples()) {
            prop_assert_eq!(*a as f32 as f64, *b);
        }
    }

    #[test]
    fn power_csv_round_trip(watts in prop::collection::vec(1.0f64..1000.0, 2..50)) {
        let trace = PowerTrace::from_watts(&watts, 20.0).unwrap();
        let text = format_power_csv(&trace);
        let back = parse_power_csv(text.as_bytes(), PowerCsvOptions::default()).unwrap();
        prop_assert_eq!(back.watts(), watts);
        prop_assert_eq!(back.interval_s(), 20.0);
    }

    #[test]
    fn classification_is_monotone(
        watts in prop::collection::vec(0.0f64..1000.0, 2..30),
        a in -100.0f64..1100.0,
        b in -100.0f64..1100.0,
    ) {
        prop_assume!(watts.iter().any(|w| *w != watts[0]));
        let bounds = fit_bounds(&watts).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(bounds.classify(lo).unwrap() <= bounds.classify(hi).unwrap());
    }

    #[test]
    fn split_partitions_indices(n in 2usize..200, seed in any::<u64>(), frac in 0.05f64..0.95) {
        let labels: Vec<ClassLabel> = (0..n).map(|i| ClassLabel::ALL[i % 4]).collect();
        let s = split(&labels, &SplitSpec { train_fraction: frac, seed, stratified: false }).unwrap();
        prop_assert_eq!(s.train.len(), ((frac * n as f64) - 1e-9).ceil() as usize);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn confusion_totals(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..100)) {
        let truth: Vec<ClassLabel> = pairs.iter().map(|p| ClassLabel::ALL[p.0]).collect();
        let pred: Vec<ClassLabel> = pairs.iter().map(|p| ClassLabel::ALL[p.1]).collect();
        let r = EvalReport::from_predictions(&truth, &pred).unwrap();
        let total: usize = r.confusion.iter().flatten().sum();
        prop_assert_eq!(total, pairs.len());
        prop_assert_eq!(r.per_class_counts, class_counts(truth.iter().copied()));
        let hits = pairs.iter().filter(|p| p.0 == p.1).count();
        prop_assert!((r.accuracy - hits as f64 / pairs.len() as f64).abs() < 1e-15);
    }
}

#[test]
fn codes_are_a_bijection() {
    let mut codes: Vec<(i8, i8)> = ClassLabel::ALL.iter().map(|c| encode(*c).pair()).collect();
    for c in ClassLabel::ALL {
        assert_eq!(decode(encode(c)), c);
    }
    codes.sort();
    codes.dedup();
    assert_eq!(codes.len(), 4);
}
