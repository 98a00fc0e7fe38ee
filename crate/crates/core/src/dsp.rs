//! Rate conversion and fixed-length windowing of recordings.
//!
//! Everything downstream runs at 2 kHz on 5 s windows (10,000 samples) cut
//! with a 2.5 s hop after discarding 2 s from both ends of the recording.

use thiserror::Error;

use crate::dataio::{Location, Murmur, Outcome};

/// Common processing rate in Hz.
pub const TARGET_RATE: u32 = 2000;
/// Samples per window at [`TARGET_RATE`].
pub const WINDOW_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("unsupported sample rate {0} Hz (expected 2000 or 4000)")]
    UnsupportedRate(u32),
}

/// Task label attached to a window by label propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowLabel {
    Murmur(Murmur),
    Outcome(Outcome),
}

/// A fixed-length mono segment with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub samples: Vec<f64>,
    pub patient_id: String,
    pub recording_index: usize,
    pub location: Location,
    pub offset_s: f64,
    pub label: Option<WindowLabel>,
}

impl Window {
    pub fn is_valid(&self) -> bool {
        self.samples.len() == WINDOW_SAMPLES
            && self.offset_s >= 0.0
            && self.samples.iter().all(|s| s.is_finite())
    }
}

/// 63-tap Hamming-windowed sinc lowpass, cutoff 900 Hz at the given rate,
/// normalized to unit DC gain.
fn antialias_taps(rate_in: f64) -> Vec<f64> {
    const TAPS: usize = 63;
    const CUTOFF_HZ: f64 = 900.0;
    let fc = CUTOFF_HZ / rate_in;
    let mid = (TAPS - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..TAPS)
        .map(|n| {
            let t = n as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * t).sin() / (std::f64::consts::PI * t)
            };
            let hamming =
                0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (TAPS - 1) as f64).cos();
            sinc * hamming
        })
        .collect();
    let sum: f64 = h.iter().sum();
    for v in &mut h {
        *v /= sum;
    }
    h
}

/// Mirror an out-of-range index back into [0, n). Edge sample not repeated.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Resample to 2 kHz. 2 kHz input passes through unchanged; 4 kHz input is
/// lowpass-filtered (reflection padding, zero-phase alignment) and
/// decimated by 2, yielding ⌊n/2⌋ samples.
pub fn resample_to_2k(samples: &[f64], rate_in: u32) -> Result<Vec<f64>, DspError> {
    match rate_in {
        2000 => Ok(samples.to_vec()),
        4000 => {
            let n = samples.len();
            let out_len = n / 2;
            if out_len == 0 {
                return Ok(Vec::new());
            }
            let taps = antialias_taps(4000.0);
            let half = (taps.len() - 1) as isize / 2;
            let mut out = Vec::with_capacity(out_len);
            for j in 0..out_len {
                let center = (2 * j) as isize;
                let mut acc = 0.0;
                for (k, &tap) in taps.iter().enumerate() {
                    let idx = center + k as isize - half;
                    acc += tap * samples[reflect(idx, n)];
                }
                out.push(acc);
            }
            Ok(out)
        }
        other => Err(DspError::UnsupportedRate(other)),
    }
}

/// Windowing geometry in seconds at [`TARGET_RATE`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowParams {
    pub window_s: f64,
    pub hop_s: f64,
    pub trim_s: f64,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self {
            window_s: 5.0,
            hop_s: 2.5,
            trim_s: 2.0,
        }
    }
}

/// Provenance stamped onto every window cut from one recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSource {
    pub patient_id: String,
    pub recording_index: usize,
    pub location: Location,
}

/// Cut overlapping windows from a 2 kHz signal, discarding `trim_s` seconds
/// at both ends. Offsets are `trim_s + k·hop_s`; a trailing remainder
/// shorter than the window is dropped. Recordings whose trimmed region is
/// shorter than one window yield no windows.
pub fn trim_and_window(samples: &[f64], src: &WindowSource, params: &WindowParams) -> Vec<Window> {
    assert!(params.window_s > 0.0, "window_s must be positive");
    assert!(
        params.hop_s > 0.0 && params.hop_s <= params.window_s,
        "hop_s must be in (0, window_s]"
    );
    let fs = f64::from(TARGET_RATE);
    let window = (params.window_s * fs).round() as usize;
    let hop = (params.hop_s * fs).round() as usize;
    let trim = (params.trim_s * fs).round() as usize;

    let n = samples.len();
    if n < 2 * trim + window {
        return Vec::new();
    }
    let usable = n - 2 * trim;
    let count = (usable - window) / hop + 1;

    let mut windows = Vec::with_capacity(count);
    for k in 0..count {
        let start = trim + k * hop;
        windows.push(Window {
            samples: samples[start..start + window].to_vec(),
            patient_id: src.patient_id.clone(),
            recording_index: src.recording_index,
            location: src.location,
            offset_s: start as f64 / fs,
            label: None,
        });
    }
    windows
}

/// Closed-form window count for a recording of `n` samples at 2 kHz.
pub fn expected_window_count(n: usize, params: &WindowParams) -> usize {
    let fs = f64::from(TARGET_RATE);
    let window = (params.window_s * fs).round() as usize;
    let hop = (params.hop_s * fs).round() as usize;
    let trim = (params.trim_s * fs).round() as usize;
    if n < 2 * trim + window {
        0
    } else {
        (n - 2 * trim - window) / hop + 1
    }
}
