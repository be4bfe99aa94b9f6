use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use fanpower::audio_io::{
    read_power_csv, read_wav, segment_len, split_segments, write_power_csv, write_wav, AudioSignal,
    PowerCsvOptions, PowerTrace, SampleFormat,
};
use fanpower::eval::{class_counts, evaluate};
use fanpower::labeling::ClassLabel;
use fanpower::mlp::{load_model, save_model};
use fanpower::pipeline::{
    extract_dataset, label_and_split, run, run_experiment_matrix, PipelineConfig, Recording,
};
use fanpower::spectral::{column_freqs, write_feature_csv, BandSpec, ExtractionConfig};
use fanpower::synth::{synth_dataset, Interferer, PowerScript, SynthConfig};
use fanpower::{Error, Result};
use serde_json::Value;

use crate::{
    EvalArgs, ExtractArgs, FeatureArgs, InputArgs, MatrixArgs, PredictArgs, SynthArgs, TrainArgs,
    TrainingArgs,
};

fn write_file(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("config serializes");
    s.push('\n');
    s
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => read_json(path)?,
        None => SynthConfig {
            segments: 200,
            ..SynthConfig::default()
        },
    };
    if let Some(n) = a.segments {
        cfg.segments = n as usize;
    }
    if let Some(s) = a.segment_s {
        cfg.segment_s = s;
    }
    if let Some(fs) = a.sample_rate {
        cfg.sample_rate_hz = fs;
    }
    if let Some(b) = a.blades {
        cfg.fan.blade_count = b;
    }
    if let Some((lo, hi)) = a.rpm_range {
        cfg.fan.rpm_min = lo;
        cfg.fan.rpm_max = hi;
    }
    if let Some(h) = a.harmonics {
        cfg.fan.harmonics = h;
    }
    if let Some((lo, hi)) = a.power_range {
        cfg.room.power_min_w = lo;
        cfg.room.power_max_w = hi;
    }
    if let Some(levels) = a.levels {
        cfg.script = PowerScript::Levels {
            levels,
            weights: a.level_weights.unwrap_or_default(),
            jitter_w: a.jitter_w.unwrap_or(0.0),
        };
    }
    if let Some(v) = a.ac_level {
        cfg.room.ac_level = v;
    }
    if let Some(v) = a.ac_cutoff {
        cfg.room.ac_cutoff_hz = v;
    }
    if let Some(v) = a.noise_level {
        cfg.room.broadband_noise_level = v;
    }
    if a.extra_tenant {
        let mut t = cfg.interferer.take().unwrap_or_default();
        if let Some(v) = a.tenant_rpm {
            t.rpm = v;
        }
        if let Some(v) = a.tenant_blades {
            t.blade_count = v;
        }
        if let Some(v) = a.tenant_level {
            t.level = v;
        }
        cfg.interferer = Some::<Interferer>(t);
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }

    let (signal, trace) = synth_dataset(&cfg)?;
    let format = if a.float {
        SampleFormat::Float32
    } else {
        SampleFormat::Pcm16
    };
    let wav = format!("{}.wav", a.out_prefix);
    let csv = format!("{}.csv", a.out_prefix);
    let json = format!("{}.json", a.out_prefix);
    write_wav(&wav, &signal, format)?;
    write_power_csv(&csv, &trace)?;
    write_file(&json, to_json(&cfg))?;
    println!(
        "wrote {wav} ({:.1} s at {} Hz), {csv} ({} readings), {json}",
        signal.duration_s(),
        signal.sample_rate_hz(),
        trace.len()
    );
    Ok(())
}

fn load_input(input: &InputArgs) -> Result<(AudioSignal, PowerTrace)> {
    let signal = read_wav(&input.wav)?;
    let trace = read_power_csv(
        &input.power_csv,
        PowerCsvOptions {
            interval_s: input.interval_s,
        },
    )?;
    Ok((signal, trace))
}

fn apply_features(f: &FeatureArgs, extraction: &mut ExtractionConfig) -> Result<()> {
    if let Some(a) = f.approach {
        extraction.approach = a;
    }
    let (low, high) = f
        .band
        .unwrap_or((extraction.band.low_hz, extraction.band.high_hz));
    let width = f.bin_width.unwrap_or(extraction.band.bin_width_hz);
    extraction.band = BandSpec::new(low, high, width)?;
    if f.taper {
        extraction.taper = true;
    }
    Ok(())
}

fn resolve_pipeline(
    t: &TrainingArgs,
    f: &FeatureArgs,
    offset_s: Option<f64>,
) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = match &t.config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::default(),
    };
    apply_features(f, &mut cfg.extraction)?;
    if let Some(v) = t.epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = t.goal_error {
        cfg.train.goal_error = v;
    }
    if let Some(v) = t.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = t.init_range {
        cfg.train.init_range = v;
    }
    if let Some(seed) = t.seed {
        cfg.train.seed = seed;
        cfg.split.seed = seed;
    }
    if let Some(v) = t.train_frac {
        cfg.split.train_fraction = v;
    }
    if t.stratified {
        cfg.split.stratified = true;
    }
    if let Some(v) = t.bounds_policy {
        cfg.bounds_policy = v;
    }
    if let Some(v) = t.bounds_source {
        cfg.bounds_source = v;
    }
    if let Some(v) = offset_s {
        cfg.offset_s = v;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let mut extraction = ExtractionConfig::default();
    apply_features(&a.features, &mut extraction)?;
    let (signal, trace) = load_input(&a.input)?;
    let data = extract_dataset(
        &signal,
        &trace,
        &extraction,
        a.input.offset_s.unwrap_or(0.0),
    )?;
    let freqs = column_freqs(
        data.sample_rate_hz,
        data.segment_len,
        &extraction.band,
        extraction.approach,
    )?;
    let mut out = Vec::new();
    write_feature_csv(&mut out, &freqs, &data.features, Some(&data.watts))
        .expect("writing to memory");
    write_file(&a.out, out)?;
    println!(
        "wrote {} rows x {} features to {}",
        data.len(),
        freqs.len(),
        a.out.display()
    );
    Ok(())
}

fn write_report(prefix: &str, report: &fanpower::eval::EvalReport) -> Result<()> {
    write_file(format!("{prefix}.json"), report.to_json())?;
    write_file(format!("{prefix}.txt"), report.to_text())?;
    write_file(format!("{prefix}.csv"), report.confusion_csv())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = resolve_pipeline(&a.training, &a.features, a.input.offset_s)?;
    let (signal, trace) = load_input(&a.input)?;
    let data = extract_dataset(&signal, &trace, &cfg.extraction, cfg.offset_s)?;
    log::info!("{} segments of {} samples", data.len(), data.segment_len);
    let outcome = run(&data, &cfg)?;
    let shape = outcome.model.shape;

    let mut log = String::new();
    let _ = writeln!(
        log,
        "config {}",
        serde_json::to_string(&cfg).expect("config serializes")
    );
    let _ = writeln!(
        log,
        "input wav={} power_csv={} segments={} segment_len={} sample_rate_hz={}",
        a.input.wav.display(),
        a.input.power_csv.display(),
        data.len(),
        data.segment_len,
        data.sample_rate_hz
    );
    let _ = writeln!(
        log,
        "shape m={} k1={} k2={} p={}",
        shape.inputs, shape.hidden1, shape.hidden2, shape.outputs
    );
    for (epoch, mse) in outcome.history.iter().enumerate() {
        let _ = writeln!(log, "epoch {epoch} mse {mse:e}");
    }
    let summary = outcome
        .model
        .training
        .as_ref()
        .expect("run records training");
    let _ = writeln!(
        log,
        "stop {} epochs={} final_mse={:e}",
        serde_json::to_string(&summary.stop)
            .expect("serializes")
            .trim_matches('"'),
        summary.epochs,
        summary.final_mse
    );
    let _ = writeln!(
        log,
        "heldout accuracy={:.4} test_samples={}",
        outcome.report.accuracy,
        outcome.report.test_size()
    );

    let log_path = a.log.unwrap_or_else(|| a.model_out.with_extension("log"));
    save_model(&outcome.model, &a.model_out)?;
    write_file(&log_path, &log)?;
    if let Some(prefix) = &a.report_prefix {
        write_report(prefix, &outcome.report)?;
    }
    println!(
        "shape m={} k1={} k2={}; {} epochs, final mse {:.3e}; held-out accuracy {:.4}",
        shape.inputs,
        shape.hidden1,
        shape.hidden2,
        summary.epochs,
        summary.final_mse,
        outcome.report.accuracy
    );
    println!("wrote {} and {}", a.model_out.display(), log_path.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let trained = PipelineConfig::from_model(&model);
    let offset_s = a
        .input
        .offset_s
        .or(trained.map(|c| c.offset_s))
        .unwrap_or(0.0);
    let (signal, trace) = load_input(&a.input)?;
    let data = extract_dataset(&signal, &trace, &model.extraction, offset_s)?;
    if data.segment_len != model.segment_len {
        return Err(Error::Dimension {
            expected: model.segment_len,
            actual: data.segment_len,
        });
    }

    let (indices, labels, train_counts) = if a.heldout {
        let cfg = trained.ok_or_else(|| {
            Error::InvalidInput("model carries no training record; --heldout needs one".into())
        })?;
        let (_, split, labels) = label_and_split(&data.watts, &cfg)?;
        let counts = class_counts(split.train.iter().map(|&i| labels[i]));
        (split.test, labels, Some(counts))
    } else {
        let labels = data
            .watts
            .iter()
            .map(|&w| model.bounds.classify(w))
            .collect::<Result<Vec<ClassLabel>>>()?;
        ((0..data.len()).collect(), labels, None)
    };
    let test_set: Vec<(Vec<f64>, ClassLabel)> = indices
        .iter()
        .map(|&i| (data.features[i].values.clone(), labels[i]))
        .collect();
    let mut report = evaluate(&model, &test_set)?;
    if let Some(c) = train_counts {
        report = report.with_train_counts(c);
    }
    let report = report
        .echo("model", a.model.display().to_string())
        .echo("wav", a.input.wav.display().to_string())
        .echo("power_csv", a.input.power_csv.display().to_string())
        .echo("heldout", a.heldout)
        .echo("offset_s", offset_s)
        .echo("segments", data.len())
        .echo("approach", model.extraction.approach)
        .echo("band", model.extraction.band)
        .echo("bounds", model.bounds)
        .echo("shape", model.shape);
    write_report(&a.report_prefix, &report)?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let signal = read_wav(&a.wav)?;
    let n = match a.segment_s {
        Some(s) => segment_len(s, signal.sample_rate_hz())?,
        None => model.segment_len,
    };
    let segments = split_segments(&signal, n)?;
    let mut out = String::new();
    for (k, seg) in segments.iter().enumerate() {
        let class = model.predict_segment(seg)?;
        let _ = writeln!(
            out,
            "{k}\t{:.3}\t{}\t{}",
            seg.start_time_s,
            class.index(),
            class.name()
        );
    }
    print!("{out}");
    Ok(())
}

pub fn experiment_matrix(a: MatrixArgs) -> Result<()> {
    let cfg = resolve_pipeline(&a.training, &a.features, a.offset_s)?;
    let options = PowerCsvOptions {
        interval_s: a.interval_s,
    };
    let clean = Recording {
        signal: read_wav(&a.clean_wav)?,
        trace: read_power_csv(&a.clean_csv, options)?,
    };
    let noisy = Recording {
        signal: read_wav(&a.noisy_wav)?,
        trace: read_power_csv(&a.noisy_csv, options)?,
    };
    let matrix = run_experiment_matrix(&clean, &noisy, &cfg)?;
    let mut json: Value = serde_json::to_value(&matrix).expect("matrix serializes");
    json["config"] = serde_json::to_value(cfg).expect("config serializes");
    write_file(format!("{}.json", a.report_prefix), to_json(&json))?;
    write_file(format!("{}.txt", a.report_prefix), matrix.to_text())?;
    print!("{}", matrix.to_text());
    Ok(())
}
