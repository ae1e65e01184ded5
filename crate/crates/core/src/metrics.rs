//! Signal-to-distortion ratio and corpus evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dsp::FeatureStats;
use crate::enhance::{denoise, SpectralMap};
use crate::error::{Error, Result};
use crate::train::{prepare_pair, Manifest};

pub const SDR_CAP_DB: f64 = 100.0;

/// Published R-CED / CR-CED results on TIMIT, listed in report footers for
/// orientation only.
pub const REFERENCE_SDR_DB: [(&str, f64); 3] = [
    ("R-CED(10, skip)", 8.19),
    ("CR-CED(16, skip)", 8.73),
    ("R-CED(20, skip)", 8.79),
];

/// `10 log10(sum y^2 / sum (y_hat - y)^2)`, capped at +100 dB.
pub fn sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::shape(format!(
            "sdr of {} reference vs {} estimate samples",
            reference.len(),
            estimate.len()
        )));
    }
    let signal: f64 = reference.iter().map(|y| y * y).sum();
    if signal == 0.0 {
        return Err(Error::Invalid("reference has zero power".into()));
    }
    let error: f64 = reference.iter().zip(estimate).map(|(y, e)| (e - y) * (e - y)).sum();
    if error == 0.0 {
        return Ok(SDR_CAP_DB);
    }
    Ok((10.0 * (signal / error).log10()).min(SDR_CAP_DB))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub utterance: String,
    pub sdr_noisy_db: f64,
    pub sdr_denoised_db: f64,
    pub improvement_db: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// `(entry index, message)` for entries that could not be evaluated.
    pub failures: Vec<(usize, String)>,
}

impl EvalReport {
    /// Means of `(noisy, denoised, improvement)` SDR.
    pub fn means(&self) -> (f64, f64, f64) {
        let n = self.rows.len().max(1) as f64;
        self.rows.iter().fold((0.0, 0.0, 0.0), |(a, b, c), r| {
            (a + r.sdr_noisy_db / n, b + r.sdr_denoised_db / n, c + r.improvement_db / n)
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("utterance,sdr_noisy_db,sdr_denoised_db,improvement_db\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.utterance, r.sdr_noisy_db, r.sdr_denoised_db, r.improvement_db
            );
        }
        let (a, b, c) = self.means();
        let _ = writeln!(s, "mean,{a},{b},{c}");
        for (i, msg) in &self.failures {
            let _ = writeln!(s, "# entry {i} failed: {msg}");
        }
        for (name, v) in REFERENCE_SDR_DB {
            let _ = writeln!(s, "# reference {name} on TIMIT: {v} dB (not reproducible on this corpus)");
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Rebuilds each entry's mixture, denoises it, and scores both the noisy and
/// the denoised signal against the gated clean speech. Per-entry failures are
/// collected in the report.
pub fn evaluate<M: SpectralMap + ?Sized>(
    model: &M,
    input_stats: &FeatureStats,
    target_stats: &FeatureStats,
    manifest: &Manifest,
) -> Result<EvalReport> {
    if manifest.entries.is_empty() {
        return Err(Error::Manifest("no entries".into()));
    }
    let mut report = EvalReport::default();
    for (i, e) in manifest.entries.iter().enumerate() {
        let row = (|| {
            let (clean, noisy) = prepare_pair(e, i, manifest.seed)?;
            let den = denoise(model, input_stats, target_stats, &noisy)?;
            let n = clean.len().min(den.len()).min(noisy.len());
            let sdr_noisy_db = sdr(&clean.samples[..n], &noisy.samples[..n])?;
            let sdr_denoised_db = sdr(&clean.samples[..n], &den.samples[..n])?;
            Ok::<_, Error>(EvalRow {
                utterance: e.clean.display().to_string(),
                sdr_noisy_db,
                sdr_denoised_db,
                improvement_db: sdr_denoised_db - sdr_noisy_db,
            })
        })();
        match row {
            Ok(r) => report.rows.push(r),
            Err(err) => report.failures.push((i, err.to_string())),
        }
    }
    Ok(report)
}
