//! STFT analysis/synthesis and the feature transforms applied around the network.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio_io::Waveform;
use crate::error::{Error, Result};

/// Analysis geometry: 256-point Hamming-windowed FFT with a 64-sample hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 256,
            hop: 64,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Periodic-free (symmetric) Hamming window of length `fft_size`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size;
        (0..n)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
            .collect()
    }

    /// Number of full frames that fit into `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.fft_size {
            0
        } else {
            (len - self.fft_size) / self.hop + 1
        }
    }

    /// Sample count produced by overlap-add of `frames` frames.
    pub fn output_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.fft_size
        }
    }

    fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || self.hop == 0 || !self.fft_size.is_multiple_of(self.hop) {
            return Err(Error::Invalid(format!(
                "stft geometry fft_size={} hop={} (hop must divide fft_size)",
                self.fft_size, self.hop
            )));
        }
        Ok(())
    }
}

/// Row-major `frames x bins` matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    bins: usize,
    data: Vec<f64>,
}

impl Frames {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self {
            bins,
            data: vec![0.0; frames * bins],
        }
    }

    pub fn from_vec(bins: usize, data: Vec<f64>) -> Result<Self> {
        if bins == 0 || !data.len().is_multiple_of(bins) {
            return Err(Error::shape(format!(
                "{} values do not form rows of {bins}",
                data.len()
            )));
        }
        Ok(Self { bins, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let bins = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != bins) {
            return Err(Error::shape("ragged rows"));
        }
        Self::from_vec(bins, rows.concat())
    }

    pub fn n_frames(&self) -> usize {
        self.data.len().checked_div(self.bins).unwrap_or(0)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + Clone {
        self.data.chunks_exact(self.bins)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn same_shape(&self, other: &Frames) -> bool {
        self.bins == other.bins && self.data.len() == other.data.len()
    }
}

/// One-sided magnitude and phase per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitude: Frames,
    pub phase: Frames,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.magnitude.n_frames()
    }
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let frames = cfg.frame_count(w.len());
    if frames == 0 {
        return Err(Error::Invalid(format!(
            "signal of {} samples is shorter than one {}-sample frame",
            w.len(),
            cfg.fft_size
        )));
    }
    let n = cfg.fft_size;
    let bins = cfg.bins();
    let window = cfg.window();
    let fft = plan(n, false);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut magnitude = Frames::zeros(frames, bins);
    let mut phase = Frames::zeros(frames, bins);
    for t in 0..frames {
        let seg = &w.samples[t * cfg.hop..t * cfg.hop + n];
        for ((b, &x), &win) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(x * win, 0.0);
        }
        fft.process(&mut buf);
        let (m, p) = (magnitude.row_mut(t), phase.row_mut(t));
        for k in 0..bins {
            m[k] = buf[k].norm();
            p[k] = buf[k].arg();
        }
    }
    Ok(Spectrogram {
        magnitude,
        phase,
        config: *cfg,
    })
}

/// Weighted overlap-add inverse of [`stft`].
///
/// Each frame is synthesized from `mag * e^{i phase}` (negative magnitudes flip
/// the phase by pi), windowed again, summed, and divided per sample by the
/// summed squared window.
pub fn istft(mag: &Frames, phase: &Frames, cfg: &StftConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !mag.same_shape(phase) || mag.bins() != cfg.bins() {
        return Err(Error::shape(format!(
            "istft magnitude {}x{} vs phase {}x{} (expected {} bins)",
            mag.n_frames(),
            mag.bins(),
            phase.n_frames(),
            phase.bins(),
            cfg.bins()
        )));
    }
    let n = cfg.fft_size;
    let bins = cfg.bins();
    let frames = mag.n_frames();
    let window = cfg.window();
    let ifft = plan(n, true);
    let len = cfg.output_len(frames);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for t in 0..frames {
        let (m, p) = (mag.row(t), phase.row(t));
        for k in 0..bins {
            buf[k] = Complex::from_polar(m[k], p[k]);
        }
        // Hermitian completion; DC and Nyquist must be real.
        buf[0] = Complex::new(buf[0].re, 0.0);
        if n.is_multiple_of(2) {
            buf[n / 2] = Complex::new(buf[n / 2].re, 0.0);
        }
        for k in bins..n {
            buf[k] = buf[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for i in 0..n {
            out[start + i] += window[i] * buf[i].re / n as f64;
            norm[start + i] += window[i] * window[i];
        }
    }
    for (o, &d) in out.iter_mut().zip(&norm) {
        *o = if d > 1e-12 { *o / d } else { 0.0 };
    }
    Ok(out)
}

/// `clean_mag * cos(clean_phase - noisy_phase)` per bin.
pub fn phase_aware_target(clean: &Spectrogram, noisy: &Spectrogram) -> Result<Frames> {
    if clean.config != noisy.config
        || !clean.magnitude.same_shape(&noisy.magnitude)
        || !clean.phase.same_shape(&noisy.phase)
    {
        return Err(Error::shape(format!(
            "clean spectrogram has {} frames, noisy {}",
            clean.n_frames(),
            noisy.n_frames()
        )));
    }
    let data = clean
        .magnitude
        .as_slice()
        .iter()
        .zip(clean.phase.as_slice())
        .zip(noisy.phase.as_slice())
        .map(|((&m, &pc), &pn)| m * (pc - pn).cos())
        .collect();
    Frames::from_vec(clean.magnitude.bins(), data)
}

/// Floor applied to per-bin standard deviations.
pub const EPSILON_STD: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsKind {
    Input,
    Target,
}

/// Per-bin mean and (floored) population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub kind: StatsKind,
}

impl FeatureStats {
    pub fn bins(&self) -> usize {
        self.mean.len()
    }
}

pub fn compute_stats<'a, I>(rows: I, kind: StatsKind) -> Result<FeatureStats>
where
    I: IntoIterator<Item = &'a [f64]>,
    I::IntoIter: Clone,
{
    let rows = rows.into_iter();
    let mut count = 0usize;
    let mut mean: Vec<f64> = Vec::new();
    for r in rows.clone() {
        if mean.is_empty() {
            mean = vec![0.0; r.len()];
        } else if r.len() != mean.len() {
            return Err(Error::shape("feature rows of differing width"));
        }
        mean.iter_mut().zip(r).for_each(|(m, &x)| *m += x);
        count += 1;
    }
    if count < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 frames for statistics, got {count}"
        )));
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; mean.len()];
    for r in rows {
        for ((v, &x), &m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var
        .into_iter()
        .map(|v| (v / count as f64).sqrt().max(EPSILON_STD))
        .collect();
    Ok(FeatureStats { mean, std, kind })
}

fn check_stats(frames: &Frames, stats: &FeatureStats) -> Result<()> {
    if frames.bins() != stats.bins() || stats.std.len() != stats.bins() {
        return Err(Error::shape(format!(
            "{} feature bins vs {} stats bins",
            frames.bins(),
            stats.bins()
        )));
    }
    Ok(())
}

pub fn standardize(frames: &Frames, stats: &FeatureStats) -> Result<Frames> {
    check_stats(frames, stats)?;
    let mut out = frames.clone();
    for t in 0..out.n_frames() {
        standardize_row(out.row_mut(t), stats);
    }
    Ok(out)
}

pub fn destandardize(frames: &Frames, stats: &FeatureStats) -> Result<Frames> {
    check_stats(frames, stats)?;
    let mut out = frames.clone();
    for t in 0..out.n_frames() {
        for ((x, &m), &s) in out.row_mut(t).iter_mut().zip(&stats.mean).zip(&stats.std) {
            *x = *x * s + m;
        }
    }
    Ok(out)
}

pub(crate) fn standardize_row(row: &mut [f64], stats: &FeatureStats) {
    for ((x, &m), &s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
        *x = (*x - m) / s;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    /// Only frames with a full history (`t >= n_t - 1`).
    Training,
    /// Every frame; missing history replicates frame 0.
    Inference,
}

/// Copies the `n_t`-frame history ending at frame `t` into `out`, laid out
/// bin-fastest with the oldest frame in slot 0. Indices before 0 clamp to 0.
pub fn fill_window<T: Copy>(
    frames: &[T],
    bins: usize,
    t: usize,
    n_t: usize,
    out: &mut [T],
) {
    debug_assert_eq!(out.len(), bins * n_t);
    for slot in 0..n_t {
        let src = (t + slot + 1).saturating_sub(n_t);
        out[slot * bins..(slot + 1) * bins].copy_from_slice(&frames[src * bins..(src + 1) * bins]);
    }
}

/// Frame indices `t` that produce a window in the given mode.
pub fn window_indices(n_frames: usize, n_t: usize, mode: WindowMode) -> std::ops::Range<usize> {
    match mode {
        WindowMode::Training => n_t.saturating_sub(1).min(n_frames)..n_frames,
        WindowMode::Inference => 0..n_frames,
    }
}

/// Stacks `n_t` consecutive standardized frames into `bins x n_t` network inputs.
pub fn make_input_windows(
    noisy_std: &Frames,
    n_t: usize,
    mode: WindowMode,
) -> Result<Vec<(Vec<f64>, usize)>> {
    if noisy_std.n_frames() < 1 || n_t == 0 {
        return Err(Error::Invalid("windowing needs at least one frame".into()));
    }
    let bins = noisy_std.bins();
    Ok(window_indices(noisy_std.n_frames(), n_t, mode)
        .map(|t| {
            let mut w = vec![0.0; bins * n_t];
            fill_window(noisy_std.as_slice(), bins, t, n_t, &mut w);
            (w, t)
        })
        .collect())
}
