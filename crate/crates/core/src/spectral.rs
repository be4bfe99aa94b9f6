//! Fan-band spectral features.
//!
//! A segment of `N` samples at `f_s` Hz is transformed with a plain DFT (no
//! window unless a taper is requested), giving magnitudes `|X_k|` at a
//! resolution of `f_s / N` Hz. The features are either every magnitude in
//! the fan band ([`Approach::Full`]) or, for each sub-band of
//! `bin_width_hz`, the largest magnitude inside it ([`Approach::Reduced`]).

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioSegment;
use crate::error::{Error, Result};

/// Lower edge of the default fan band (2000 RPM, 5 blades).
pub const DEFAULT_LOW_HZ: f64 = 166.0;
/// Upper edge of the default fan band (6000 RPM, 7 blades).
pub const DEFAULT_HIGH_HZ: f64 = 700.0;
pub const DEFAULT_BIN_WIDTH_HZ: f64 = 15.0;

/// Magnitudes of the non-redundant half of a real DFT.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    magnitudes: Vec<f64>,
    sample_rate_hz: u32,
    n: usize,
}

impl Spectrum {
    /// `|X_k|` for `k = 0..=N/2`.
    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn freq_resolution_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Width of the max-pooling sub-bands; zero disables pooling.
    pub bin_width_hz: f64,
}

impl Default for BandSpec {
    fn default() -> Self {
        Self {
            low_hz: DEFAULT_LOW_HZ,
            high_hz: DEFAULT_HIGH_HZ,
            bin_width_hz: DEFAULT_BIN_WIDTH_HZ,
        }
    }
}

impl BandSpec {
    pub fn new(low_hz: f64, high_hz: f64, bin_width_hz: f64) -> Result<Self> {
        let band = Self {
            low_hz,
            high_hz,
            bin_width_hz,
        };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.low_hz.is_finite() && self.high_hz.is_finite() && self.low_hz > 0.0) {
            return Err(Error::InvalidBand(format!(
                "edges must be positive, got {}..{}",
                self.low_hz, self.high_hz
            )));
        }
        if self.low_hz >= self.high_hz {
            return Err(Error::InvalidBand(format!(
                "low edge {} is not below high edge {}",
                self.low_hz, self.high_hz
            )));
        }
        if !(self.bin_width_hz.is_finite() && self.bin_width_hz >= 0.0) {
            return Err(Error::InvalidBand(format!(
                "bin width {} is negative",
                self.bin_width_hz
            )));
        }
        Ok(())
    }
}

/// Classifier input derived from one spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Frequency of the DFT component each value was taken from.
    pub center_freqs_hz: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    /// Every DFT magnitude inside the band.
    Full,
    /// Max magnitude per sub-band.
    Reduced,
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Approach::Full => "full",
            Approach::Reduced => "reduced",
        })
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Approach::Full),
            "reduced" => Ok(Approach::Reduced),
            other => Err(Error::InvalidInput(format!("unknown approach '{other}'"))),
        }
    }
}

/// Multiplies `samples` by a Hann window in place.
pub fn apply_cosine_taper(samples: &mut [f64]) {
    let n = samples.len();
    if n < 2 {
        return;
    }
    let denom = (n - 1) as f64;
    for (i, x) in samples.iter_mut().enumerate() {
        *x *= 0.5 - 0.5 * (2.0 * PI * i as f64 / denom).cos();
    }
}

pub fn dft_magnitudes(segment: &AudioSegment) -> Result<Spectrum> {
    magnitudes_of(&segment.samples, segment.sample_rate_hz)
}

/// `|X_k|` of `samples` for `k = 0..=N/2`, via FFT.
pub fn magnitudes_of(samples: &[f64], sample_rate_hz: u32) -> Result<Spectrum> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 samples for a spectrum, got {n}"
        )));
    }
    if sample_rate_hz == 0 {
        return Err(Error::InvalidInput("sample rate must be positive".into()));
    }
    if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("sample {i} is not finite")));
    }
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let magnitudes = buf[..=n / 2].iter().map(|c| c.norm()).collect();
    Ok(Spectrum {
        magnitudes,
        sample_rate_hz,
        n,
    })
}

// Index-space conversions tolerate float noise so that e.g. 166 Hz at
// 0.05 Hz resolution lands on exactly 3320.
fn to_index(freq_hz: f64, sample_rate_hz: u32, n: usize) -> f64 {
    freq_hz * n as f64 / sample_rate_hz as f64
}

fn ceil_eps(x: f64) -> f64 {
    (x - 1e-9 * x.abs().max(1.0)).ceil()
}

fn floor_eps(x: f64) -> f64 {
    (x + 1e-9 * x.abs().max(1.0)).floor()
}

/// Inclusive DFT index range `(k_low, k_high)` covered by `band`.
pub fn band_indices(sample_rate_hz: u32, n: usize, band: &BandSpec) -> Result<(usize, usize)> {
    band.validate()?;
    if n < 2 || sample_rate_hz == 0 {
        return Err(Error::InvalidInput(format!(
            "bad spectrum parameters f_s={sample_rate_hz}, N={n}"
        )));
    }
    let nyquist = sample_rate_hz as f64 / 2.0;
    if band.high_hz > nyquist {
        return Err(Error::InvalidBand(format!(
            "high edge {} Hz is above the {nyquist} Hz Nyquist limit",
            band.high_hz
        )));
    }
    let k_low = ceil_eps(to_index(band.low_hz, sample_rate_hz, n));
    let k_high = floor_eps(to_index(band.high_hz, sample_rate_hz, n)).min((n / 2) as f64);
    if k_low > k_high {
        return Err(Error::InvalidBand(format!(
            "{}..{} Hz contains no DFT component at {} Hz resolution",
            band.low_hz,
            band.high_hz,
            sample_rate_hz as f64 / n as f64
        )));
    }
    Ok((k_low as usize, k_high as usize))
}

/// Half-open index ranges of the pooling sub-bands. Sub-band `j` covers
/// `[low + j*w, low + (j+1)*w)`, the last one is cut at the high edge.
pub fn bin_ranges(sample_rate_hz: u32, n: usize, band: &BandSpec) -> Result<Vec<Range<usize>>> {
    let (k_low, k_high) = band_indices(sample_rate_hz, n, band)?;
    let w = band.bin_width_hz;
    if w == 0.0 {
        return Err(Error::InvalidBand(
            "pooling needs a positive bin width".into(),
        ));
    }
    let df = sample_rate_hz as f64 / n as f64;
    if w < df {
        return Err(Error::DegenerateBin(format!(
            "bin width {w} Hz is finer than the {df} Hz resolution"
        )));
    }
    let count = ceil_eps((band.high_hz - band.low_hz) / w) as usize;
    let mut ranges = Vec::with_capacity(count);
    for j in 0..count {
        let start =
            (ceil_eps(to_index(band.low_hz + j as f64 * w, sample_rate_hz, n)) as usize).max(k_low);
        let end = if j + 1 == count {
            k_high + 1
        } else {
            ceil_eps(to_index(
                band.low_hz + (j + 1) as f64 * w,
                sample_rate_hz,
                n,
            )) as usize
        };
        if start >= end {
            return Err(Error::DegenerateBin(format!(
                "sub-band {j} starting at {} Hz holds no DFT component",
                band.low_hz + j as f64 * w
            )));
        }
        ranges.push(start..end);
    }
    Ok(ranges)
}

pub fn full_features(spectrum: &Spectrum, band: &BandSpec) -> Result<FeatureVector> {
    let (k_low, k_high) = band_indices(spectrum.sample_rate_hz, spectrum.n, band)?;
    let df = spectrum.freq_resolution_hz();
    Ok(FeatureVector {
        values: spectrum.magnitudes[k_low..=k_high].to_vec(),
        center_freqs_hz: (k_low..=k_high).map(|k| k as f64 * df).collect(),
    })
}

pub fn reduced_features(spectrum: &Spectrum, band: &BandSpec) -> Result<FeatureVector> {
    let ranges = bin_ranges(spectrum.sample_rate_hz, spectrum.n, band)?;
    let df = spectrum.freq_resolution_hz();
    let mut values = Vec::with_capacity(ranges.len());
    let mut center_freqs_hz = Vec::with_capacity(ranges.len());
    for range in ranges {
        let mut best = range.start;
        for k in range {
            // strict comparison keeps the lowest index on ties
            if spectrum.magnitudes[k] > spectrum.magnitudes[best] {
                best = k;
            }
        }
        values.push(spectrum.magnitudes[best]);
        center_freqs_hz.push(best as f64 * df);
    }
    Ok(FeatureVector {
        values,
        center_freqs_hz,
    })
}

pub fn features(spectrum: &Spectrum, band: &BandSpec, approach: Approach) -> Result<FeatureVector> {
    match approach {
        Approach::Full => full_features(spectrum, band),
        Approach::Reduced => reduced_features(spectrum, band),
    }
}

/// Number of features produced for a segment of `n` samples.
pub fn feature_len(
    sample_rate_hz: u32,
    n: usize,
    band: &BandSpec,
    approach: Approach,
) -> Result<usize> {
    match approach {
        Approach::Full => {
            let (lo, hi) = band_indices(sample_rate_hz, n, band)?;
            Ok(hi - lo + 1)
        }
        Approach::Reduced => Ok(bin_ranges(sample_rate_hz, n, band)?.len()),
    }
}

/// Nominal frequency of each feature column: the component frequency for
/// [`Approach::Full`], the sub-band midpoint for [`Approach::Reduced`].
pub fn column_freqs(
    sample_rate_hz: u32,
    n: usize,
    band: &BandSpec,
    approach: Approach,
) -> Result<Vec<f64>> {
    let df = sample_rate_hz as f64 / n as f64;
    match approach {
        Approach::Full => {
            let (lo, hi) = band_indices(sample_rate_hz, n, band)?;
            Ok((lo..=hi).map(|k| k as f64 * df).collect())
        }
        Approach::Reduced => {
            let count = bin_ranges(sample_rate_hz, n, band)?.len();
            Ok((0..count)
                .map(|j| {
                    let lo = band.low_hz + j as f64 * band.bin_width_hz;
                    let hi = (lo + band.bin_width_hz).min(band.high_hz);
                    0.5 * (lo + hi)
                })
                .collect())
        }
    }
}

/// Everything needed to turn a segment into a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub band: BandSpec,
    pub approach: Approach,
    #[serde(default)]
    pub taper: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            band: BandSpec::default(),
            approach: Approach::Reduced,
            taper: false,
        }
    }
}

impl ExtractionConfig {
    pub fn extract(&self, segment: &AudioSegment) -> Result<FeatureVector> {
        let spectrum = if self.taper {
            let mut samples = segment.samples.clone();
            apply_cosine_taper(&mut samples);
            magnitudes_of(&samples, segment.sample_rate_hz)?
        } else {
            dft_magnitudes(segment)?
        };
        features(&spectrum, &self.band, self.approach)
    }
}

/// Per-dimension min-max scaling onto [0, 1], fit on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut iter = rows.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::EmptyInput("cannot fit a scaler on zero rows".into()))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in iter {
            if row.len() != min.len() {
                return Err(Error::Dimension {
                    expected: min.len(),
                    actual: row.len(),
                });
            }
            for (j, &x) in row.iter().enumerate() {
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Maps each value onto [0, 1]; zero-range dimensions map to 0 and
    /// values outside the training range are clamped.
    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.min.len() {
            return Err(Error::Dimension {
                expected: self.min.len(),
                actual: values.len(),
            });
        }
        Ok(values
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&x, (&lo, &hi))| {
                let range = hi - lo;
                if range > 0.0 {
                    ((x - lo) / range).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// Writes one row per feature vector under a header of column frequencies,
/// with a leading `watts` column when `watts` is given.
pub fn write_feature_csv<W: Write>(
    mut out: W,
    column_freqs_hz: &[f64],
    rows: &[FeatureVector],
    watts: Option<&[f64]>,
) -> std::io::Result<()> {
    let mut header: Vec<String> = column_freqs_hz.iter().map(|f| format!("{f}")).collect();
    if watts.is_some() {
        header.insert(0, "watts".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for (i, row) in rows.iter().enumerate() {
        let mut line: Vec<String> = row.values.iter().map(|v| format!("{v}")).collect();
        if let Some(w) = watts {
            line.insert(0, format!("{}", w[i]));
        }
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(samples: &[f64], fs: u32) -> Spectrum {
        magnitudes_of(samples, fs).unwrap()
    }

    #[test]
    fn constant_signal() {
        let s = spectrum(&[1.0; 8], 8);
        assert_eq!(s.magnitudes().len(), 5);
        assert!((s.magnitudes()[0] - 8.0).abs() < 1e-12);
        for k in 1..=4 {
            assert!(s.magnitudes()[k].abs() < 1e-12);
        }
    }

    #[test]
    fn single_tone() {
        let x: Vec<f64> = (0..8)
            .map(|n| (2.0 * PI * 2.0 * n as f64 / 8.0).cos())
            .collect();
        let s = spectrum(&x, 8);
        for k in 0..=4 {
            let expected = if k == 2 { 4.0 } else { 0.0 };
            assert!((s.magnitudes()[k] - expected).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn rejects_short_and_nonfinite() {
        assert!(matches!(
            magnitudes_of(&[1.0], 8),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            magnitudes_of(&[1.0, f64::NAN], 8),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn full_length_band_indices() {
        let band = BandSpec::default();
        assert_eq!(band_indices(16000, 320000, &band).unwrap(), (3320, 14000));
        assert_eq!(16000.0 / 320000.0, 0.05);
        let band = BandSpec::new(166.0, 400.0, 0.0).unwrap();
        assert_eq!(band_indices(1000, 1000, &band).unwrap(), (166, 400));
    }

    #[test]
    fn band_above_nyquist() {
        let band = BandSpec::new(166.0, 700.0, 15.0).unwrap();
        assert!(matches!(
            band_indices(1000, 1000, &band),
            Err(Error::InvalidBand(_))
        ));
        assert!(BandSpec::new(700.0, 166.0, 15.0).is_err());
    }

    #[test]
    fn one_component_band() {
        let s = spectrum(&vec![0.0; 1000], 1000);
        let band = BandSpec::new(200.0, 200.5, 0.0).unwrap();
        let f = full_features(&s, &band).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.values, vec![0.0]);
        assert_eq!(f.center_freqs_hz, vec![200.0]);
    }

    #[test]
    fn full_length_bin_layout() {
        let band = BandSpec::default();
        let ranges = bin_ranges(16000, 320000, &band).unwrap();
        assert_eq!(ranges.len(), 36);
        assert_eq!(ranges[0], 3320..3620);
        assert!(ranges[..35].iter().all(|r| r.len() == 300));
        assert_eq!(ranges[35], 13820..14001);
        assert_eq!(
            feature_len(16000, 320000, &band, Approach::Full).unwrap(),
            10681
        );
    }

    #[test]
    fn bins_finer_than_resolution() {
        let band = BandSpec::new(166.0, 400.0, 0.5).unwrap();
        assert!(matches!(
            bin_ranges(1000, 1000, &band),
            Err(Error::DegenerateBin(_))
        ));
        let band = BandSpec::new(166.0, 400.0, 0.0).unwrap();
        assert!(matches!(
            bin_ranges(1000, 1000, &band),
            Err(Error::InvalidBand(_))
        ));
    }

    #[test]
    fn ties_pick_lowest_index() {
        let s = Spectrum {
            magnitudes: vec![1.0; 501],
            sample_rate_hz: 1000,
            n: 1000,
        };
        let band = BandSpec::new(166.0, 400.0, 15.0).unwrap();
        let f = reduced_features(&s, &band).unwrap();
        assert_eq!(f.center_freqs_hz[0], 166.0);
        assert_eq!(f.center_freqs_hz[1], 181.0);
    }

    #[test]
    fn scaler_rules() {
        let rows = [vec![2.0, 5.0], vec![6.0, 5.0]];
        let sc = MinMaxScaler::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(sc.apply(&[4.0, 5.0]).unwrap(), vec![0.5, 0.0]);
        assert_eq!(sc.apply(&[4.0, 123.0]).unwrap(), vec![0.5, 0.0]);
        assert_eq!(sc.apply(&[-10.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(sc.apply(&[10.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            sc.apply(&[1.0]),
            Err(Error::Dimension {
                expected: 2,
                actual: 1
            })
        ));
        assert!(MinMaxScaler::fit(std::iter::empty()).is_err());
    }

    #[test]
    fn taper_zeroes_the_ends() {
        let mut x = vec![1.0; 9];
        apply_cosine_taper(&mut x);
        assert!(x[0].abs() < 1e-15 && x[8].abs() < 1e-15);
        assert!((x[4] - 1.0).abs() < 1e-15);
    }
}
