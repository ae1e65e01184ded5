use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio_io::{read_wav, remove_silence, resample_to_8k, Waveform};
use crate::dsp::{
    compute_stats, fill_window, phase_aware_target, standardize, stft, window_indices, FeatureStats,
    Frames, StatsKind, StftConfig, WindowMode,
};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const DEFAULT_SPLIT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub noise: PathBuf,
    pub snr_db: f64,
}

/// Line-oriented corpus description:
///
/// ```text
/// # comment
/// split=0.2
/// seed=7
/// clean=a.wav noise=n.wav snr=0
/// ```
///
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub split: f64,
    pub seed: u64,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, split: f64, seed: u64) -> Self {
        Self { entries, split, seed }
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut m = Manifest::new(Vec::new(), DEFAULT_SPLIT, 0);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Manifest(format!("line {}: {msg}", n + 1));
            let (mut clean, mut noise, mut snr) = (None, None, None);
            let mut header = false;
            for tok in line.split_whitespace() {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| err(format!("expected key=value, got `{tok}`")))?;
                match k {
                    "split" => {
                        let s: f64 = v.parse().map_err(|_| err(format!("bad split `{v}`")))?;
                        if !(s > 0.0 && s < 1.0) {
                            return Err(err(format!("split {s} outside (0, 1)")));
                        }
                        m.split = s;
                        header = true;
                    }
                    "seed" => {
                        m.seed = v.parse().map_err(|_| err(format!("bad seed `{v}`")))?;
                        header = true;
                    }
                    "clean" => clean = Some(base.join(v)),
                    "noise" => noise = Some(base.join(v)),
                    "snr" => {
                        let s: f64 = v.parse().map_err(|_| err(format!("bad snr `{v}`")))?;
                        if !s.is_finite() {
                            return Err(err("snr must be finite".into()));
                        }
                        snr = Some(s);
                    }
                    _ => return Err(err(format!("unknown key `{k}`"))),
                }
            }
            match (clean, noise) {
                (Some(clean), Some(noise)) => m.entries.push(ManifestEntry {
                    clean,
                    noise,
                    snr_db: snr.unwrap_or(0.0),
                }),
                (None, None) if header && snr.is_none() => {}
                _ => return Err(err("entry needs both clean= and noise=".into())),
            }
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("split={}\nseed={}\n", self.split, self.seed);
        for e in &self.entries {
            s.push_str(&format!(
                "clean={} noise={} snr={}\n",
                e.clean.display(),
                e.noise.display(),
                e.snr_db
            ));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// A manifest with the entries in `range` and the same header.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Manifest {
        Manifest::new(self.entries[range].to_vec(), self.split, self.seed)
    }
}

/// `clean + alpha * noise` with `alpha` chosen so that the clean-to-added-noise
/// power ratio equals `snr_db`. The noise is read cyclically from a random
/// start offset over the length of `clean`.
pub fn mix_at_snr<R: Rng + ?Sized>(clean: &Waveform, noise: &Waveform, snr_db: f64, rng: &mut R) -> Result<Waveform> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::Invalid(format!(
            "sample rates differ: clean {} Hz, noise {} Hz",
            clean.sample_rate, noise.sample_rate
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::Invalid("snr must be finite".into()));
    }
    let p_clean = clean.power();
    if clean.is_empty() || p_clean == 0.0 {
        return Err(Error::Invalid("clean signal has zero power".into()));
    }
    if noise.is_empty() {
        return Err(Error::Invalid("noise signal has zero power".into()));
    }
    let offset = rng.gen_range(0..noise.len());
    let seg: Vec<f64> = (0..clean.len()).map(|i| noise.samples[(offset + i) % noise.len()]).collect();
    let p_noise = seg.iter().map(|x| x * x).sum::<f64>() / seg.len() as f64;
    if p_noise == 0.0 {
        return Err(Error::Invalid("noise signal has zero power".into()));
    }
    let alpha = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = clean.samples.iter().zip(&seg).map(|(c, n)| c + alpha * n).collect();
    Ok(Waveform::new(samples, clean.sample_rate))
}

/// `10 log10(P_clean / P_(noisy - clean))`.
pub fn measured_snr_db(clean: &Waveform, noisy: &Waveform) -> f64 {
    let p_clean: f64 = clean.samples.iter().map(|x| x * x).sum();
    let p_noise: f64 = clean.samples.iter().zip(&noisy.samples).map(|(c, y)| (y - c) * (y - c)).sum();
    10.0 * (p_clean / p_noise).log10()
}

/// Reads, resamples and gates the clean file, then mixes it with the entry's
/// noise. Returns `(clean, noisy)` of equal length at 8 kHz. The mixing offset
/// depends only on `seed` and `index`.
pub fn prepare_pair(entry: &ManifestEntry, index: usize, seed: u64) -> Result<(Waveform, Waveform)> {
    let clean = remove_silence(&resample_to_8k(&read_wav(&entry.clean)?)?);
    let noise = resample_to_8k(&read_wav(&entry.noise)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let noisy = mix_at_snr(&clean, &noise, entry.snr_db, &mut rng)?;
    Ok((clean, noisy))
}

/// Standardized features of one utterance, frame-major with bins fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub noisy: Vec<f32>,
    pub target: Vec<f32>,
    pub n_frames: usize,
}

/// A training example: the window ending at `frame` of `utterance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub utterance: u32,
    pub frame: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub train: Vec<WindowRef>,
    pub val: Vec<WindowRef>,
    pub input_stats: FeatureStats,
    pub target_stats: FeatureStats,
    pub bins: usize,
    pub context: usize,
}

fn round_to_f32(stats: &mut FeatureStats) {
    for v in stats.mean.iter_mut().chain(stats.std.iter_mut()) {
        *v = *v as f32 as f64;
    }
}

impl Dataset {
    /// Builds the dataset from per-utterance `(noisy magnitude, phase-aware
    /// target)` spectra. Every full-history window is an example; a seeded
    /// shuffle assigns `round(split * N)` of them to validation. Statistics
    /// come from the current frames of the training windows only.
    pub fn from_spectra(spectra: &[(Frames, Frames)], split: f64, seed: u64, context: usize) -> Result<Self> {
        if spectra.is_empty() {
            return Err(Error::Invalid("empty dataset".into()));
        }
        if !(0.0..1.0).contains(&split) {
            return Err(Error::Invalid(format!("split {split} outside [0, 1)")));
        }
        let bins = spectra[0].0.bins();
        let mut all = Vec::new();
        for (u, (noisy, target)) in spectra.iter().enumerate() {
            if noisy.n_frames() != target.n_frames() || noisy.bins() != bins || target.bins() != bins {
                return Err(Error::Entry {
                    index: u,
                    source: Box::new(Error::shape("noisy and target spectra differ in shape")),
                });
            }
            all.extend(window_indices(noisy.n_frames(), context, WindowMode::Training).map(|t| WindowRef {
                utterance: u as u32,
                frame: t as u32,
            }));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        all.shuffle(&mut rng);
        let n_val = (split * all.len() as f64).round() as usize;
        let train = all.split_off(n_val);
        let val = all;
        if train.len() < 2 {
            return Err(Error::Invalid(format!(
                "only {} training windows; need at least 2",
                train.len()
            )));
        }
        let rows = |pick: fn(&(Frames, Frames)) -> &Frames| {
            train
                .iter()
                .map(move |r| pick(&spectra[r.utterance as usize]).row(r.frame as usize))
        };
        let mut input_stats = compute_stats(rows(|s| &s.0), StatsKind::Input)?;
        let mut target_stats = compute_stats(rows(|s| &s.1), StatsKind::Target)?;
        round_to_f32(&mut input_stats);
        round_to_f32(&mut target_stats);
        let to_f32 = |f: Frames| f.as_slice().iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let utterances = spectra
            .iter()
            .map(|(noisy, target)| {
                Ok(Utterance {
                    noisy: to_f32(standardize(noisy, &input_stats)?),
                    target: to_f32(standardize(target, &target_stats)?),
                    n_frames: noisy.n_frames(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            utterances,
            train,
            val,
            input_stats,
            target_stats,
            bins,
            context,
        })
    }

    /// Inputs `bins x context x B` and targets `bins x 1 x B` for `refs`.
    pub fn batch(&self, refs: &[WindowRef]) -> (Tensor<f32>, Tensor<f32>) {
        let (bins, ctx) = (self.bins, self.context);
        let mut x = Tensor::zeros(bins, ctx, refs.len());
        let mut y = Tensor::zeros(bins, 1, refs.len());
        for (b, r) in refs.iter().enumerate() {
            let u = &self.utterances[r.utterance as usize];
            let t = r.frame as usize;
            fill_window(&u.noisy, bins, t, ctx, x.batch_slice_mut(b));
            y.batch_slice_mut(b).copy_from_slice(&u.target[t * bins..(t + 1) * bins]);
        }
        (x, y)
    }

    /// Keeps the first `n` training windows.
    pub fn truncate_train(&mut self, n: usize) {
        self.train.truncate(n);
    }
}

/// Mixes, transforms and standardizes every manifest entry. Failures carry
/// the entry index.
pub fn assemble_dataset(manifest: &Manifest) -> Result<Dataset> {
    if manifest.entries.is_empty() {
        return Err(Error::Manifest("no entries".into()));
    }
    let cfg = StftConfig::default();
    let spectra = manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let (clean, noisy) = prepare_pair(e, i, manifest.seed)?;
            let (cs, ns) = (stft(&clean, &cfg)?, stft(&noisy, &cfg)?);
            let target = phase_aware_target(&cs, &ns)?;
            Ok((ns.magnitude, target))
        })
        .enumerate()
        .map(|(i, r): (usize, Result<_>)| {
            r.map_err(|e| Error::Entry {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_spectra(&spectra, manifest.split, manifest.seed, crate::CONTEXT_FRAMES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::write_wav;
    use proptest::prelude::*;
    use rand::Rng;

    fn noise_like(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), 8000)
    }

    #[test]
    fn alpha_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Waveform::new(vec![1.0, -1.0, 1.0, -1.0], 8000);
        let n = Waveform::new(vec![-1.0, 1.0, 1.0, -1.0], 8000);
        let y = mix_at_snr(&c, &n, 0.0, &mut rng).unwrap();
        let added: Vec<f64> = y.samples.iter().zip(&c.samples).map(|(a, b)| a - b).collect();
        assert!(added.iter().all(|a| (a.abs() - 1.0).abs() < 1e-12));

        let c = Waveform::new(vec![0.5f64.sqrt(); 8], 8000);
        let n = Waveform::new(vec![2f64.sqrt(); 8], 8000);
        let y = mix_at_snr(&c, &n, 0.0, &mut rng).unwrap();
        for (a, b) in y.samples.iter().zip(&c.samples) {
            assert!(((a - b) - 0.5 * 2f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn measured_snr_matches_requested() {
        let c = noise_like(4000, 1);
        let n = noise_like(1500, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for snr in [-5.0, 0.0, 5.0, 17.5] {
            let y = mix_at_snr(&c, &n, snr, &mut rng).unwrap();
            assert!((measured_snr_db(&c, &y) - snr).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn snr_invariant(snr in -20.0f64..20.0, seed in 0u64..1000, len in 16usize..400) {
            let c = noise_like(len, seed);
            let n = noise_like(37, seed + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = mix_at_snr(&c, &n, snr, &mut rng).unwrap();
            prop_assert!((measured_snr_db(&c, &y) - snr).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_power_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = Waveform::new(vec![0.0; 10], 8000);
        let c = noise_like(10, 1);
        assert!(mix_at_snr(&z, &c, 0.0, &mut rng).is_err());
        assert!(mix_at_snr(&c, &z, 0.0, &mut rng).is_err());
        let other_rate = Waveform::new(c.samples.clone(), 16000);
        assert!(mix_at_snr(&c, &other_rate, 0.0, &mut rng).is_err());
    }

    #[test]
    fn manifest_parse_and_round_trip() {
        let text = "# corpus\nsplit=0.25\nseed=9\nclean=a.wav noise=n.wav snr=5\n\nclean=b.wav noise=n.wav # x\n";
        let m = Manifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!((m.split, m.seed, m.entries.len()), (0.25, 9, 2));
        assert_eq!(m.entries[0].clean, PathBuf::from("/data/a.wav"));
        assert_eq!(m.entries[0].snr_db, 5.0);
        assert_eq!(m.entries[1].snr_db, 0.0);
        assert_eq!(Manifest::parse(&m.to_text(), Path::new("/elsewhere")).unwrap(), m);
    }

    #[test]
    fn manifest_defaults_and_errors() {
        let m = Manifest::parse("clean=a noise=b\n", Path::new("")).unwrap();
        assert_eq!((m.split, m.seed), (0.2, 0));
        for bad in [
            "clean=a\n",
            "split=1.5\n",
            "split=0\n",
            "clean=a noise=b snr=x\n",
            "clean=a noise=b snr=inf\n",
            "bogus=1\n",
            "clean=a noise=b extra\n",
        ] {
            assert!(matches!(Manifest::parse(bad, Path::new("")), Err(Error::Manifest(_))), "{bad}");
        }
    }

    fn spectra(n_utt: usize, frames: usize, seed: u64) -> Vec<(Frames, Frames)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_utt)
            .map(|_| {
                let mut gen = || {
                    let v: Vec<f64> = (0..frames * 4).map(|_| rng.gen_range(0.0..3.0)).collect();
                    Frames::from_vec(4, v).unwrap()
                };
                (gen(), gen())
            })
            .collect()
    }

    #[test]
    fn split_arithmetic() {
        // 10 utterances x 507 frames -> 10 x 500 full-history windows
        let d = Dataset::from_spectra(&spectra(10, 507, 1), 0.2, 5, 8).unwrap();
        assert_eq!((d.train.len(), d.val.len()), (4000, 1000));
        let mut all: Vec<_> = d.train.iter().chain(&d.val).copied().collect();
        all.sort_by_key(|r| (r.utterance, r.frame));
        all.dedup();
        assert_eq!(all.len(), 5000);
        assert!(all.iter().all(|r| r.frame >= 7));
    }

    #[test]
    fn standardized_train_frames_have_zero_mean() {
        let d = Dataset::from_spectra(&spectra(3, 60, 2), 0.2, 5, 8).unwrap();
        for b in 0..d.bins {
            let n = d.train.len() as f64;
            let (mut mi, mut mt) = (0.0, 0.0);
            for r in &d.train {
                let u = &d.utterances[r.utterance as usize];
                let i = r.frame as usize * d.bins + b;
                mi += u.noisy[i] as f64 / n;
                mt += u.target[i] as f64 / n;
            }
            assert!(mi.abs() < 1e-5 && mt.abs() < 1e-5, "{mi} {mt}");
        }
    }

    #[test]
    fn stats_match_independent_computation() {
        let sp = spectra(2, 40, 3);
        let d = Dataset::from_spectra(&sp, 0.3, 11, 8).unwrap();
        for b in 0..4 {
            let vals: Vec<f64> = d.train.iter().map(|r| sp[r.utterance as usize].0.row(r.frame as usize)[b]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((d.input_stats.mean[b] - mean).abs() < 1e-6 * mean.abs().max(1.0));
            assert!((d.input_stats.std[b] - var.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn same_seed_same_split() {
        let sp = spectra(4, 30, 4);
        let a = Dataset::from_spectra(&sp, 0.2, 1, 8).unwrap();
        let b = Dataset::from_spectra(&sp, 0.2, 1, 8).unwrap();
        let c = Dataset::from_spectra(&sp, 0.2, 2, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn batch_layout() {
        let sp = spectra(1, 20, 5);
        let d = Dataset::from_spectra(&sp, 0.2, 1, 8).unwrap();
        let refs = [d.train[0], d.train[1]];
        let (x, y) = d.batch(&refs);
        assert_eq!((x.shape(), y.shape()), ([4, 8, 2], [4, 1, 2]));
        for (b, r) in refs.iter().enumerate() {
            let u = &d.utterances[0];
            for slot in 0..8 {
                let t = r.frame as usize - 7 + slot;
                for f in 0..4 {
                    assert_eq!(x.at(f, slot, b), u.noisy[t * 4 + f]);
                }
            }
            for f in 0..4 {
                assert_eq!(y.at(f, 0, b), u.target[r.frame as usize * 4 + f]);
            }
        }
    }

    #[test]
    fn empty_inputs_error() {
        assert!(Dataset::from_spectra(&[], 0.2, 1, 8).is_err());
        assert!(assemble_dataset(&Manifest::new(Vec::new(), 0.2, 0)).is_err());
    }

    #[test]
    fn missing_file_reports_entry_index() {
        let dir = tempfile::tempdir().unwrap();
        let ok = dir.path().join("ok.wav");
        write_wav(&noise_like(4000, 1), &ok).unwrap();
        let entries = vec![
            ManifestEntry { clean: ok.clone(), noise: ok.clone(), snr_db: 0.0 },
            ManifestEntry { clean: dir.path().join("missing.wav"), noise: ok, snr_db: 0.0 },
        ];
        match assemble_dataset(&Manifest::new(entries, 0.2, 0)) {
            Err(Error::Entry { index, source }) => {
                assert_eq!(index, 1);
                assert!(matches!(*source, Error::Io { .. }));
            }
            other => panic!("{other:?}"),
        }
    }
}
