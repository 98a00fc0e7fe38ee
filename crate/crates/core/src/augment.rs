//! Time-domain augmentations and composable probabilistic pipelines.
//!
//! Seven transforms are available: high/low-pass cutoff filters, rewind,
//! inversion, random amplitude scaling, zero-mean uniform noise, and 2×
//! upsampling with a symmetric crop. A pipeline is an ordered list of
//! specs; each stage fires independently with its own probability, one
//! Bernoulli draw per stage per window. Every transform maps a 10,000
//! sample window to a 10,000 sample window.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::Window;

/// Nyquist frequency of the 2 kHz processing rate.
pub const NYQUIST_HZ: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid cutoff {0} Hz: must be in (0, {NYQUIST_HZ})")]
    InvalidCutoff(f64),
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
}

/// Which side of the spectrum a cutoff filter keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    HighPass,
    LowPass,
}

/// Transform identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Highpass,
    Lowpass,
    Rewind,
    Invert,
    RandomScale,
    UniformNoise,
    Upsample2,
}

/// One transform: kind, parameters, and application probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub kind: AugKind,
    /// Filter cutoff in Hz; present iff `kind` is a cutoff filter.
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "cutoff")]
    pub cutoff_hz: Option<f64>,
    /// Scale draw bounds (lo, hi); present iff `kind` is `RandomScale`.
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "scale")]
    pub scale_range: Option<(f64, f64)>,
    /// Peak-to-peak noise width; present iff `kind` is `UniformNoise`.
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "range")]
    pub noise_range: Option<f64>,
    #[serde(rename = "p")]
    pub probability: f64,
}

impl AugmentationSpec {
    pub fn highpass(cutoff_hz: f64) -> Self {
        Self {
            kind: AugKind::Highpass,
            cutoff_hz: Some(cutoff_hz),
            scale_range: None,
            noise_range: None,
            probability: 1.0,
        }
    }

    pub fn lowpass(cutoff_hz: f64) -> Self {
        Self {
            kind: AugKind::Lowpass,
            cutoff_hz: Some(cutoff_hz),
            ..Self::highpass(cutoff_hz)
        }
    }

    pub fn rewind() -> Self {
        Self {
            kind: AugKind::Rewind,
            cutoff_hz: None,
            scale_range: None,
            noise_range: None,
            probability: 1.0,
        }
    }

    pub fn invert() -> Self {
        Self {
            kind: AugKind::Invert,
            ..Self::rewind()
        }
    }

    pub fn random_scale(lo: f64, hi: f64) -> Self {
        Self {
            kind: AugKind::RandomScale,
            scale_range: Some((lo, hi)),
            ..Self::rewind()
        }
    }

    pub fn uniform_noise(range: f64) -> Self {
        Self {
            kind: AugKind::UniformNoise,
            noise_range: Some(range),
            ..Self::rewind()
        }
    }

    pub fn upsample2() -> Self {
        Self {
            kind: AugKind::Upsample2,
            ..Self::rewind()
        }
    }

    pub fn with_probability(mut self, p: f64) -> Self {
        self.probability = p;
        self
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(AugmentError::InvalidSpec(format!(
                "probability {} outside [0, 1]",
                self.probability
            )));
        }
        let filter = matches!(self.kind, AugKind::Highpass | AugKind::Lowpass);
        if filter != self.cutoff_hz.is_some() {
            return Err(AugmentError::InvalidSpec(format!(
                "cutoff must be present iff the kind is a filter ({:?})",
                self.kind
            )));
        }
        if let Some(c) = self.cutoff_hz {
            if !(0.0 < c && c < NYQUIST_HZ) {
                return Err(AugmentError::InvalidCutoff(c));
            }
        }
        if (self.kind == AugKind::RandomScale) != self.scale_range.is_some() {
            return Err(AugmentError::InvalidSpec(
                "scale range must be present iff the kind is random_scale".into(),
            ));
        }
        if let Some((lo, hi)) = self.scale_range {
            if !(0.0 < lo && lo < hi) {
                return Err(AugmentError::InvalidSpec(format!(
                    "scale range ({lo}, {hi}) requires 0 < lo < hi"
                )));
            }
        }
        if (self.kind == AugKind::UniformNoise) != self.noise_range.is_some() {
            return Err(AugmentError::InvalidSpec(
                "noise range must be present iff the kind is uniform_noise".into(),
            ));
        }
        if let Some(r) = self.noise_range {
            if r <= 0.0 {
                return Err(AugmentError::InvalidSpec(format!(
                    "noise range {r} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Compact identifier used in grid CSV cells and ledger keys.
    pub fn short_name(&self) -> String {
        match self.kind {
            AugKind::Highpass => format!("highpass{}", self.cutoff_hz.unwrap_or(0.0)),
            AugKind::Lowpass => format!("lowpass{}", self.cutoff_hz.unwrap_or(0.0)),
            AugKind::Rewind => "rewind".into(),
            AugKind::Invert => "invert".into(),
            AugKind::RandomScale => {
                let (lo, hi) = self.scale_range.unwrap_or((0.0, 0.0));
                format!("scale{lo}-{hi}")
            }
            AugKind::UniformNoise => format!("noise{}", self.noise_range.unwrap_or(0.0)),
            AugKind::Upsample2 => "upsample2".into(),
        }
    }
}

/// Ordered composition of augmentation stages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AugmentationPipeline {
    pub stages: Vec<AugmentationSpec>,
}

impl AugmentationPipeline {
    pub fn new(stages: Vec<AugmentationSpec>) -> Self {
        Self { stages }
    }

    /// The identity pipeline (single-augmentation mode's second view).
    pub fn identity() -> Self {
        Self { stages: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        self.stages.iter().try_for_each(AugmentationSpec::validate)
    }

    pub fn short_name(&self) -> String {
        if self.stages.is_empty() {
            "identity".into()
        } else {
            self.stages
                .iter()
                .map(AugmentationSpec::short_name)
                .collect::<Vec<_>>()
                .join("+")
        }
    }
}

/// One second-order section, Direct Form II transposed, a0 normalized out.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn design(kind: FilterKind, cutoff_hz: f64, fs: f64, q: f64) -> Self {
        let omega = 2.0 * std::f64::consts::PI * cutoff_hz / fs;
        let (sin_w, cos_w) = omega.sin_cos();
        let alpha = sin_w / (2.0 * q);
        let (b0, b1, b2) = match kind {
            FilterKind::LowPass => {
                let b1 = 1.0 - cos_w;
                (b1 / 2.0, b1, b1 / 2.0)
            }
            FilterKind::HighPass => {
                let b1 = -(1.0 + cos_w);
                (-b1 / 2.0, b1, -b1 / 2.0)
            }
        };
        let a0 = 1.0 + alpha;
        Self {
            b0: b0 / a0,
            b1: b1 / a0,
            b2: b2 / a0,
            a1: -2.0 * cos_w / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    fn run(&self, samples: &mut [f64]) {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for x in samples {
            let y = self.b0 * *x + s1;
            s1 = self.b1 * *x - self.a1 * y + s2;
            s2 = self.b2 * *x - self.a2 * y;
            *x = y;
        }
    }
}

// Section Q values of a 4th-order Butterworth: 1/(2 cos(pi/8)), 1/(2 cos(3pi/8)).
const BUTTER4_Q: [f64; 2] = [0.5411961001461969, 1.3065629648763766];

/// 4th-order Butterworth high/low-pass applied causally in a single pass.
pub fn cutoff_filter(w: &Window, kind: FilterKind, cutoff_hz: f64) -> Result<Window, AugmentError> {
    if !(0.0 < cutoff_hz && cutoff_hz < NYQUIST_HZ) {
        return Err(AugmentError::InvalidCutoff(cutoff_hz));
    }
    let fs = f64::from(crate::dsp::TARGET_RATE);
    let mut out = w.clone();
    for q in BUTTER4_Q {
        Biquad::design(kind, cutoff_hz, fs, q).run(&mut out.samples);
    }
    Ok(out)
}

/// Reverse the sample order.
pub fn rewind(w: &Window) -> Window {
    let mut out = w.clone();
    out.samples.reverse();
    out
}

/// Negate every sample.
pub fn invert(w: &Window) -> Window {
    let mut out = w.clone();
    for s in &mut out.samples {
        *s = -*s;
    }
    out
}

/// Multiply the whole window by one draw s ~ Uniform[lo, hi).
pub fn random_scale<R: Rng>(w: &Window, lo: f64, hi: f64, rng: &mut R) -> Window {
    let s = rng.gen_range(lo..hi);
    let mut out = w.clone();
    for v in &mut out.samples {
        *v *= s;
    }
    out
}

/// Add i.i.d. zero-mean uniform noise with the given peak-to-peak range,
/// i.e. each sample gets u ~ Uniform[-range/2, +range/2).
pub fn uniform_noise<R: Rng>(w: &Window, range: f64, rng: &mut R) -> Window {
    let half = range / 2.0;
    let mut out = w.clone();
    for v in &mut out.samples {
        *v += rng.gen_range(-half..half);
    }
    out
}

/// Linear-interpolation 2× upsampling followed by a symmetric crop back to
/// the original length: even outputs copy the input, odd outputs average
/// neighbours (the final odd sample replicates the last input sample).
pub fn upsample2_crop(w: &Window) -> Window {
    let n = w.samples.len();
    let mut up = Vec::with_capacity(2 * n);
    for i in 0..n {
        up.push(w.samples[i]);
        if i + 1 < n {
            up.push((w.samples[i] + w.samples[i + 1]) / 2.0);
        } else {
            up.push(w.samples[i]);
        }
    }
    let start = (2 * n - n) / 2;
    let mut out = w.clone();
    out.samples = up[start..start + n].to_vec();
    out
}

/// Apply one spec unconditionally (the Bernoulli gate lives in
/// [`apply_pipeline`]).
fn apply_spec<R: Rng>(w: &Window, spec: &AugmentationSpec, rng: &mut R) -> Result<Window, AugmentError> {
    match spec.kind {
        AugKind::Highpass => cutoff_filter(w, FilterKind::HighPass, spec.cutoff_hz.unwrap_or(0.0)),
        AugKind::Lowpass => cutoff_filter(w, FilterKind::LowPass, spec.cutoff_hz.unwrap_or(0.0)),
        AugKind::Rewind => Ok(rewind(w)),
        AugKind::Invert => Ok(invert(w)),
        AugKind::RandomScale => {
            let (lo, hi) = spec
                .scale_range
                .ok_or_else(|| AugmentError::InvalidSpec("random_scale without range".into()))?;
            Ok(random_scale(w, lo, hi, rng))
        }
        AugKind::UniformNoise => {
            let range = spec
                .noise_range
                .ok_or_else(|| AugmentError::InvalidSpec("uniform_noise without range".into()))?;
            Ok(uniform_noise(w, range, rng))
        }
        AugKind::Upsample2 => Ok(upsample2_crop(w)),
    }
}

/// Run the pipeline: stages in order, each firing independently with its
/// probability. Deterministic for a fixed generator state.
pub fn apply_pipeline<R: Rng>(
    w: &Window,
    pipeline: &AugmentationPipeline,
    rng: &mut R,
) -> Result<Window, AugmentError> {
    let mut out = w.clone();
    for spec in &pipeline.stages {
        let fire = rng.gen::<f64>() < spec.probability;
        if fire {
            out = apply_spec(&out, spec, rng)?;
        }
    }
    Ok(out)
}

/// The submitted configuration: view one is high-passed at 250 Hz then
/// rewound and inverted with probability one half each; view two gets
/// 0.02-range uniform noise then 2× upsampling with probability one half.
pub fn default_view_pipelines() -> (AugmentationPipeline, AugmentationPipeline) {
    let view1 = AugmentationPipeline::new(vec![
        AugmentationSpec::highpass(250.0),
        AugmentationSpec::rewind().with_probability(0.5),
        AugmentationSpec::invert().with_probability(0.5),
    ]);
    let view2 = AugmentationPipeline::new(vec![
        AugmentationSpec::uniform_noise(0.02),
        AugmentationSpec::upsample2().with_probability(0.5),
    ]);
    (view1, view2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Location;
    use crate::dsp::WINDOW_SAMPLES;
    use crate::seed;

    fn window_from(samples: Vec<f64>) -> Window {
        Window {
            samples,
            patient_id: "p".into(),
            recording_index: 0,
            location: Location::Av,
            offset_s: 2.0,
            label: None,
        }
    }

    fn sine(freq_hz: f64) -> Window {
        let fs = f64::from(crate::dsp::TARGET_RATE);
        window_from(
            (0..WINDOW_SAMPLES)
                .map(|i| (2.0 * std::f64::consts::PI * freq_hz * i as f64 / fs).sin())
                .collect(),
        )
    }

    /// Goertzel-style single-bin amplitude estimate, independent of the
    /// filter implementation.
    fn amplitude_at(samples: &[f64], freq_hz: f64) -> f64 {
        let fs = f64::from(crate::dsp::TARGET_RATE);
        let n = samples.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &s) in samples.iter().enumerate() {
            let phase = 2.0 * std::f64::consts::PI * freq_hz * i as f64 / fs;
            re += s * phase.cos();
            im += s * phase.sin();
        }
        2.0 * (re * re + im * im).sqrt() / n
    }

    #[test]
    fn lowpass_keeps_passband_within_1db() {
        let w = sine(100.0);
        let y = cutoff_filter(&w, FilterKind::LowPass, 250.0).unwrap();
        let ratio = amplitude_at(&y.samples, 100.0) / amplitude_at(&w.samples, 100.0);
        assert!(ratio >= 0.89, "passband ratio {ratio}");
    }

    #[test]
    fn lowpass_attenuates_stopband_by_20db() {
        let w = sine(900.0);
        let y = cutoff_filter(&w, FilterKind::LowPass, 250.0).unwrap();
        let ratio = amplitude_at(&y.samples, 900.0) / amplitude_at(&w.samples, 900.0);
        assert!(ratio <= 0.1, "stopband ratio {ratio}");
    }

    #[test]
    fn highpass_mirrors_the_contract() {
        let pass = sine(900.0);
        let y = cutoff_filter(&pass, FilterKind::HighPass, 250.0).unwrap();
        let ratio = amplitude_at(&y.samples, 900.0) / amplitude_at(&pass.samples, 900.0);
        assert!(ratio >= 0.89, "passband ratio {ratio}");

        let stop = sine(100.0);
        let y = cutoff_filter(&stop, FilterKind::HighPass, 250.0).unwrap();
        let ratio = amplitude_at(&y.samples, 100.0) / amplitude_at(&stop.samples, 100.0);
        assert!(ratio <= 0.1, "stopband ratio {ratio}");
    }

    #[test]
    fn filters_fix_the_zero_signal() {
        let w = window_from(vec![0.0; WINDOW_SAMPLES]);
        for kind in [FilterKind::HighPass, FilterKind::LowPass] {
            let y = cutoff_filter(&w, kind, 500.0).unwrap();
            assert!(y.samples.iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn filter_rejects_cutoff_at_nyquist() {
        let w = sine(100.0);
        assert!(matches!(
            cutoff_filter(&w, FilterKind::LowPass, 1000.0),
            Err(AugmentError::InvalidCutoff(_))
        ));
    }

    #[test]
    fn filter_is_linear() {
        let w = sine(180.0);
        let scaled = window_from(w.samples.iter().map(|s| 3.25 * s).collect());
        let a = cutoff_filter(&scaled, FilterKind::LowPass, 500.0).unwrap();
        let b = cutoff_filter(&w, FilterKind::LowPass, 500.0).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            let rel = (x - 3.25 * y).abs() / x.abs().max(1e-12);
            assert!(rel < 1e-9, "{x} vs {}", 3.25 * y);
        }
    }

    #[test]
    fn rewind_reverses_and_is_an_involution() {
        let mut samples = vec![0.0; WINDOW_SAMPLES];
        samples[0] = 1.0;
        samples[1] = 2.0;
        samples[2] = 3.0;
        let w = window_from(samples);
        let r = rewind(&w);
        assert_eq!(r.samples[WINDOW_SAMPLES - 1], 1.0);
        assert_eq!(r.samples[WINDOW_SAMPLES - 2], 2.0);
        assert_eq!(rewind(&r), w);
    }

    #[test]
    fn rewind_fixes_palindromes() {
        let mut samples = vec![0.0; WINDOW_SAMPLES];
        samples[0] = 7.0;
        samples[WINDOW_SAMPLES - 1] = 7.0;
        let w = window_from(samples);
        assert_eq!(rewind(&w), w);
    }

    #[test]
    fn invert_negates_and_is_an_involution() {
        let mut samples = vec![0.0; WINDOW_SAMPLES];
        samples[0] = 0.5;
        samples[1] = -0.2;
        let w = window_from(samples);
        let inv = invert(&w);
        assert_eq!(inv.samples[0], -0.5);
        assert_eq!(inv.samples[1], 0.2);
        assert_eq!(invert(&inv), w);
        let zero = window_from(vec![0.0; WINDOW_SAMPLES]);
        assert_eq!(invert(&zero).samples, zero.samples);
    }

    #[test]
    fn random_scale_stays_in_range_and_is_deterministic() {
        let w = sine(80.0);
        let peak_in = w.samples.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut rng = seed::rng(11);
        let y = random_scale(&w, 0.5, 2.0, &mut rng);
        let peak_out = y.samples.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        let ratio = peak_out / peak_in;
        assert!((0.5..=2.0).contains(&ratio), "{ratio}");

        let mut rng2 = seed::rng(11);
        let y2 = random_scale(&w, 0.5, 2.0, &mut rng2);
        assert_eq!(y.samples, y2.samples);
    }

    #[test]
    fn random_scale_degenerate_range_is_nearly_identity() {
        let w = sine(80.0);
        let mut rng = seed::rng(3);
        let y = random_scale(&w, 0.999, 1.001, &mut rng);
        for (a, b) in y.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() <= 0.001 * b.abs() + 1e-12);
        }
    }

    #[test]
    fn uniform_noise_respects_support_and_mean() {
        let zero = window_from(vec![0.0; WINDOW_SAMPLES]);
        let mut rng = seed::rng(5);
        let y = uniform_noise(&zero, 0.02, &mut rng);
        assert!(y.samples.iter().all(|&s| (-0.01..0.01).contains(&s)));
        let mean: f64 = y.samples.iter().sum::<f64>() / y.samples.len() as f64;
        assert!(mean.abs() <= 0.0006, "mean {mean}");
    }

    #[test]
    fn uniform_noise_tiny_range_bound() {
        let w = sine(60.0);
        let mut rng = seed::rng(5);
        let y = uniform_noise(&w, 1e-9, &mut rng);
        for (a, b) in y.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() <= 5e-10);
        }
    }

    #[test]
    fn upsample_fixes_constants_and_keeps_length() {
        let w = window_from(vec![0.37; WINDOW_SAMPLES]);
        let y = upsample2_crop(&w);
        assert_eq!(y.samples.len(), WINDOW_SAMPLES);
        assert!(y.samples.iter().all(|&s| (s - 0.37).abs() < 1e-15));
    }

    #[test]
    fn upsample_ramp_matches_closed_form() {
        let w = window_from((0..WINDOW_SAMPLES).map(|i| i as f64).collect());
        let y = upsample2_crop(&w);
        for (i, &v) in y.samples.iter().enumerate() {
            let expected = 2500.0 + 0.5 * i as f64;
            assert!((v - expected).abs() < 1e-12, "at {i}: {v} vs {expected}");
        }
    }

    #[test]
    fn pipeline_with_zero_probabilities_is_identity() {
        let w = sine(120.0);
        let p = AugmentationPipeline::new(vec![
            AugmentationSpec::highpass(250.0).with_probability(0.0),
            AugmentationSpec::rewind().with_probability(0.0),
        ]);
        let y = apply_pipeline(&w, &p, &mut seed::rng(1)).unwrap();
        assert_eq!(y.samples, w.samples);
    }

    #[test]
    fn pipeline_composes_in_order() {
        let w = sine(120.0);
        let p = AugmentationPipeline::new(vec![
            AugmentationSpec::highpass(250.0),
            AugmentationSpec::rewind(),
            AugmentationSpec::invert(),
        ]);
        let piped = apply_pipeline(&w, &p, &mut seed::rng(1)).unwrap();
        let manual = invert(&rewind(
            &cutoff_filter(&w, FilterKind::HighPass, 250.0).unwrap(),
        ));
        assert_eq!(piped.samples, manual.samples);
    }

    #[test]
    fn pipeline_is_deterministic_per_seed() {
        let w = sine(120.0);
        let (p1, _) = default_view_pipelines();
        let a = apply_pipeline(&w, &p1, &mut seed::rng(42)).unwrap();
        let b = apply_pipeline(&w, &p1, &mut seed::rng(42)).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn all_kinds_preserve_length() {
        let w = sine(90.0);
        let specs = vec![
            AugmentationSpec::highpass(250.0),
            AugmentationSpec::lowpass(750.0),
            AugmentationSpec::rewind(),
            AugmentationSpec::invert(),
            AugmentationSpec::random_scale(0.5, 2.0),
            AugmentationSpec::uniform_noise(0.02),
            AugmentationSpec::upsample2(),
        ];
        for spec in specs {
            spec.validate().unwrap();
            let p = AugmentationPipeline::new(vec![spec]);
            let y = apply_pipeline(&w, &p, &mut seed::rng(9)).unwrap();
            assert_eq!(y.samples.len(), WINDOW_SAMPLES);
        }
    }

    #[test]
    fn spec_validation_catches_mismatched_fields() {
        let mut bad = AugmentationSpec::rewind();
        bad.cutoff_hz = Some(250.0);
        assert!(bad.validate().is_err());

        let mut bad = AugmentationSpec::random_scale(2.0, 0.5);
        assert!(bad.validate().is_err());
        bad.scale_range = Some((0.5, 2.0));
        bad.probability = 1.5;
        assert!(bad.validate().is_err());

        assert!(AugmentationSpec::highpass(1200.0).validate().is_err());
    }
}
