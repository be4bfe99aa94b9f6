//! WAV and power-trace ingestion, plus segmentation of a recording into
//! windows that line up with the wattage readings.
//!
//! Only the RIFF subset needed here is handled: a `fmt ` chunk describing
//! 16-bit integer PCM or 32-bit IEEE float, followed (eventually) by a `data`
//! chunk. Unknown chunks are skipped.

use std::fs;
use std::io::Read;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Relative tolerance on the spacing between consecutive power readings.
pub const SPACING_TOLERANCE: f64 = 0.01;

/// Mono PCM audio normalized to roughly [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// One fixed-length window cut from an [`AudioSignal`].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub start_time_s: f64,
}

impl AudioSegment {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerReading {
    pub timestamp_s: f64,
    pub watts: f64,
}

/// Uniformly spaced wattage readings.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    readings: Vec<PowerReading>,
    interval_s: f64,
}

impl PowerTrace {
    /// Builds a trace, checking that timestamps are increasing and spaced by
    /// `interval_s` within [`SPACING_TOLERANCE`].
    pub fn new(readings: Vec<PowerReading>, interval_s: f64) -> Result<Self> {
        if readings.is_empty() {
            return Err(Error::EmptyInput("power trace has no readings".into()));
        }
        if !(interval_s.is_finite() && interval_s > 0.0) {
            return Err(Error::InvalidInput(format!(
                "interval must be positive, got {interval_s}"
            )));
        }
        for (i, r) in readings.iter().enumerate() {
            if !(r.timestamp_s.is_finite() && r.timestamp_s >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "reading {i}: timestamp {} is not a nonnegative number",
                    r.timestamp_s
                )));
            }
            if !(r.watts.is_finite() && r.watts > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "reading {i}: wattage {} is not positive",
                    r.watts
                )));
            }
        }
        for (i, pair) in readings.windows(2).enumerate() {
            let step = pair[1].timestamp_s - pair[0].timestamp_s;
            if (step - interval_s).abs() > SPACING_TOLERANCE * interval_s {
                return Err(Error::Alignment(format!(
                    "readings {i} and {} are {step} s apart, expected {interval_s} s",
                    i + 1
                )));
            }
        }
        Ok(Self {
            readings,
            interval_s,
        })
    }

    /// Readings at `t = k * interval_s`, starting from zero.
    pub fn from_watts(watts: &[f64], interval_s: f64) -> Result<Self> {
        let readings = watts
            .iter()
            .enumerate()
            .map(|(k, &w)| PowerReading {
                timestamp_s: k as f64 * interval_s,
                watts: w,
            })
            .collect();
        Self::new(readings, interval_s)
    }

    pub fn readings(&self) -> &[PowerReading] {
        &self.readings
    }

    pub fn interval_s(&self) -> f64 {
        self.interval_s
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn watts(&self) -> Vec<f64> {
        self.readings.iter().map(|r| r.watts).collect()
    }
}

/// Sample encoding used when writing a WAV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

pub fn write_wav(path: impl AsRef<Path>, signal: &AudioSignal, format: SampleFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(signal, format)).map_err(|e| Error::io(path, e))
}

fn le_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

struct Fmt {
    format: u16,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
    bits: u16,
}

fn parse_fmt(offset: usize, body: &[u8]) -> Result<Fmt> {
    if body.len() < 16 {
        return Err(Error::ParseAt {
            offset: offset as u64,
            reason: format!("fmt chunk is {} bytes, need at least 16", body.len()),
        });
    }
    let mut format = le_u16(body, 0);
    if format == FORMAT_EXTENSIBLE {
        // WAVEFORMATEXTENSIBLE: the real format tag leads the subformat GUID.
        if body.len() < 26 {
            return Err(Error::ParseAt {
                offset: offset as u64,
                reason: "extensible fmt chunk too short".into(),
            });
        }
        format = le_u16(body, 24);
    }
    let fmt = Fmt {
        format,
        channels: le_u16(body, 2),
        sample_rate: le_u32(body, 4),
        block_align: le_u16(body, 12),
        bits: le_u16(body, 14),
    };
    if fmt.channels == 0 {
        return Err(Error::ParseAt {
            offset: offset as u64 + 2,
            reason: "channel count is zero".into(),
        });
    }
    if fmt.sample_rate == 0 {
        return Err(Error::ParseAt {
            offset: offset as u64 + 4,
            reason: "sample rate is zero".into(),
        });
    }
    match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 16) | (FORMAT_IEEE_FLOAT, 32) => {}
        (f, b) => return Err(Error::UnsupportedFormat(format!(
            "format tag {f} with {b} bits per sample (only 16-bit PCM and 32-bit float are read)"
        ))),
    }
    let expected_align = fmt.channels as usize * fmt.bits as usize / 8;
    if fmt.block_align as usize != expected_align {
        return Err(Error::ParseAt {
            offset: offset as u64 + 12,
            reason: format!(
                "block align {} does not match {} channels of {} bits",
                fmt.block_align, fmt.channels, fmt.bits
            ),
        });
    }
    Ok(fmt)
}

/// Decodes an in-memory WAV file. Multichannel audio is averaged to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioSignal> {
    if bytes.len() < 12 {
        return Err(Error::ParseAt {
            offset: bytes.len() as u64,
            reason: "file shorter than the 12-byte RIFF header".into(),
        });
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::ParseAt {
            offset: 0,
            reason: "missing RIFF tag".into(),
        });
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::ParseAt {
            offset: 8,
            reason: "missing WAVE tag".into(),
        });
    }

    let mut pos = 12usize;
    let mut fmt: Option<Fmt> = None;
    let mut data: Option<(usize, &[u8])> = None;
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            return Err(Error::ParseAt {
                offset: pos as u64,
                reason: "truncated chunk header".into(),
            });
        }
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let Some(body_end) = body_start.checked_add(size).filter(|&e| e <= bytes.len()) else {
            return Err(Error::ParseAt {
                offset: pos as u64 + 4,
                reason: format!(
                    "chunk '{}' declares {size} bytes but only {} remain",
                    String::from_utf8_lossy(id),
                    bytes.len() - body_start
                ),
            });
        };
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body_start, body)?),
            b"data" => {
                data = Some((body_start, body));
                if fmt.is_some() {
                    break;
                }
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| Error::ParseAt {
        offset: bytes.len() as u64,
        reason: "no fmt chunk".into(),
    })?;
    let (data_offset, data) = data.ok_or_else(|| Error::ParseAt {
        offset: bytes.len() as u64,
        reason: "no data chunk".into(),
    })?;
    if data.is_empty() {
        return Err(Error::EmptyInput("WAV data chunk is empty".into()));
    }
    let block = fmt.block_align as usize;
    if data.len() % block != 0 {
        return Err(Error::ParseAt {
            offset: (data_offset + data.len() - data.len() % block) as u64,
            reason: format!(
                "data length {} is not a multiple of the {block}-byte frame",
                data.len()
            ),
        });
    }

    let channels = fmt.channels as usize;
    let interleaved: Vec<f64> = match fmt.format {
        FORMAT_PCM => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
            .collect(),
        _ => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
    };
    if let Some(i) = interleaved.iter().position(|x| !x.is_finite()) {
        return Err(Error::ParseAt {
            offset: (data_offset + i * fmt.bits as usize / 8) as u64,
            reason: "non-finite float sample".into(),
        });
    }

    let samples = if channels == 1 {
        interleaved
    } else {
        warn!("averaging {channels} channels down to mono");
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    AudioSignal::new(samples, fmt.sample_rate)
}

/// Maps an amplitude onto the 16-bit grid used by [`SampleFormat::Pcm16`].
pub fn quantize_pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(signal: &AudioSignal, format: SampleFormat) -> Vec<u8> {
    let (tag, bits) = match format {
        SampleFormat::Pcm16 => (FORMAT_PCM, 16u16),
        SampleFormat::Float32 => (FORMAT_IEEE_FLOAT, 32u16),
    };
    let bytes_per_sample = bits as usize / 8;
    let data_len = signal.samples.len() * bytes_per_sample;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&signal.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(signal.sample_rate_hz * bytes_per_sample as u32).to_le_bytes());
    out.extend_from_slice(&(bytes_per_sample as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    match format {
        SampleFormat::Pcm16 => {
            for &x in &signal.samples {
                out.extend_from_slice(&quantize_pcm16(x).to_le_bytes());
            }
        }
        SampleFormat::Float32 => {
            for &x in &signal.samples {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    if data_len % 2 == 1 {
        out.push(0);
    }
    out
}

/// How to interpret a power CSV.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PowerCsvOptions {
    /// Spacing for single-column (watts only) files. Ignored when the file
    /// carries its own timestamps.
    pub interval_s: Option<f64>,
}

pub fn read_power_csv(path: impl AsRef<Path>, options: PowerCsvOptions) -> Result<PowerTrace> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_power_csv(file, options)
}

/// Parses `timestamp_s,watts` rows (or bare `watts` rows). A first row that
/// does not parse as numbers is taken as a header.
pub fn parse_power_csv<R: Read>(reader: R, options: PowerCsvOptions) -> Result<PowerTrace> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::ParseRow {
            row,
            reason: e.to_string(),
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows.is_empty() && width.is_none() => {
                // header line
                width = Some(record.len());
                continue;
            }
            Err(e) => {
                return Err(Error::ParseRow {
                    row,
                    reason: format!("non-numeric field: {e}"),
                })
            }
        };
        if values.len() != 1 && values.len() != 2 {
            return Err(Error::ParseRow {
                row,
                reason: format!("expected 1 or 2 columns, found {}", values.len()),
            });
        }
        if let Some(first) = rows.first() {
            if first.len() != values.len() {
                return Err(Error::ParseRow {
                    row,
                    reason: format!("expected {} columns, found {}", first.len(), values.len()),
                });
            }
        }
        rows.push(values);
    }

    if rows.is_empty() {
        return Err(Error::EmptyInput("power CSV has no readings".into()));
    }

    if rows[0].len() == 1 {
        let interval = options.interval_s.ok_or_else(|| {
            Error::InvalidInput("single-column power CSV needs an explicit interval".into())
        })?;
        let watts: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        return PowerTrace::from_watts(&watts, interval);
    }

    let readings: Vec<PowerReading> = rows
        .iter()
        .map(|r| PowerReading {
            timestamp_s: r[0],
            watts: r[1],
        })
        .collect();
    let interval = if readings.len() >= 2 {
        (readings[readings.len() - 1].timestamp_s - readings[0].timestamp_s)
            / (readings.len() - 1) as f64
    } else {
        options.interval_s.ok_or_else(|| {
            Error::InvalidInput("cannot infer the interval from a single reading".into())
        })?
    };
    if interval <= 0.0 {
        return Err(Error::Alignment("timestamps are not increasing".into()));
    }
    PowerTrace::new(readings, interval)
}

pub fn write_power_csv(path: impl AsRef<Path>, trace: &PowerTrace) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_power_csv(trace)).map_err(|e| Error::io(path, e))
}

pub fn format_power_csv(trace: &PowerTrace) -> String {
    let mut out = String::from("timestamp_s,watts\n");
    for r in &trace.readings {
        out.push_str(&format!("{},{}\n", r.timestamp_s, r.watts));
    }
    out
}

/// Number of samples in one window of `interval_s` seconds.
pub fn segment_len(interval_s: f64, sample_rate_hz: u32) -> Result<usize> {
    let exact = interval_s * sample_rate_hz as f64;
    let n = exact.round();
    if n < 1.0 || (exact - n).abs() > 1e-6 {
        return Err(Error::Alignment(format!(
            "{interval_s} s at {sample_rate_hz} Hz is not a whole number of samples"
        )));
    }
    Ok(n as usize)
}

/// Cuts `signal` into windows of one power interval and pairs each with its
/// reading.
///
/// Reading `k` covers audio time `[t_k - t_0 + offset_s, ... + interval_s)`.
/// Readings whose window starts before the recording or runs past its end
/// are dropped; with a zero offset the result has
/// `min(floor(duration / interval), readings)` pairs.
pub fn segment_and_align(
    signal: &AudioSignal,
    trace: &PowerTrace,
    offset_s: f64,
) -> Result<Vec<(AudioSegment, f64)>> {
    if !offset_s.is_finite() {
        return Err(Error::InvalidInput("offset must be finite".into()));
    }
    let fs = signal.sample_rate_hz;
    let n = segment_len(trace.interval_s, fs)?;
    let mut pairs = Vec::new();
    for (k, reading) in trace.readings.iter().enumerate() {
        // nominal grid position; timestamps may jitter within tolerance
        let start_s = k as f64 * trace.interval_s + offset_s;
        if start_s < -1e-9 {
            continue;
        }
        let start = (start_s * fs as f64).round() as usize;
        let end = start + n;
        if end > signal.samples.len() {
            break;
        }
        pairs.push((
            AudioSegment {
                samples: signal.samples[start..end].to_vec(),
                sample_rate_hz: fs,
                start_time_s: start as f64 / fs as f64,
            },
            reading.watts,
        ));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{:.3} s of audio holds no full {} s segment",
            signal.duration_s(),
            trace.interval_s
        )));
    }
    Ok(pairs)
}

/// Splits a signal into consecutive windows of `n` samples, dropping the
/// trailing partial window.
pub fn split_segments(signal: &AudioSignal, n: usize) -> Result<Vec<AudioSegment>> {
    if n == 0 {
        return Err(Error::InvalidInput(
            "segment length must be positive".into(),
        ));
    }
    let fs = signal.sample_rate_hz;
    let segments: Vec<AudioSegment> = signal
        .samples
        .chunks_exact(n)
        .enumerate()
        .map(|(k, chunk)| AudioSegment {
            samples: chunk.to_vec(),
            sample_rate_hz: fs,
            start_time_s: (k * n) as f64 / fs as f64,
        })
        .collect();
    if segments.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} samples hold no full segment of {n}",
            signal.samples.len()
        )));
    }
    Ok(segments)
}
