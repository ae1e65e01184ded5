use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{AdamConfig, AdamState};
use super::dataset::{Dataset, WindowRef};
use super::schedule::{Directive, LrSchedule};
use crate::error::{Error, Result};
use crate::models::{Mode, Network, ParamKind};
use crate::nn::mse_loss;

pub const BATCH_SIZE: usize = 64;
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub epochs_max: usize,
    pub batch_size: usize,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs_max: 100,
            batch_size: BATCH_SIZE,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's mini-batches, weighted by batch size.
    pub train_mse: f64,
    pub val_mse: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// True when the schedule stopped training before `epochs_max`.
    pub stopped: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse,lr\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{:.9e},{:.9e},{}", r.epoch, r.train_mse, r.val_mse, r.lr);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Inference-mode MSE over `refs`.
pub fn eval_mse(net: &Network<f32>, data: &Dataset, refs: &[WindowRef]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in refs.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk);
        let pred = net.predict(&x)?;
        let (loss, _) = mse_loss(&pred, &y)?;
        sum += f64::from(loss) * y.len() as f64;
        count += y.len();
    }
    if count == 0 {
        return Err(Error::Invalid("no windows to evaluate".into()));
    }
    Ok(sum / count as f64)
}

pub fn fit(net: &mut Network<f32>, data: &Dataset, cfg: &FitConfig) -> Result<History> {
    fit_with_progress(net, data, cfg, |_| {})
}

/// Mini-batch Adam on the MSE loss with the plateau schedule. Validation uses
/// the held-out windows (or the training windows when there are none) in
/// inference mode. A trailing batch of one window is skipped.
pub fn fit_with_progress(
    net: &mut Network<f32>,
    data: &Dataset,
    cfg: &FitConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<History> {
    if data.train.len() < 2 {
        return Err(Error::Invalid("empty dataset".into()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Invalid("batch size must be at least 2".into()));
    }
    let kinds: Vec<ParamKind> = net.params().iter().map(|(_, k)| *k).collect();
    let shapes: Vec<usize> = net.params().iter().map(|(p, _)| p.len()).collect();
    let mut adam = AdamState::<f32>::new(cfg.adam, &shapes);
    let mut schedule = LrSchedule::new(cfg.adam.lr);
    let mut order = data.train.clone();
    let val_refs = if data.val.is_empty() { &data.train } else { &data.val };
    let mut history = History::default();

    for epoch in 1..=cfg.epochs_max {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let lr = schedule.lr();
        adam.set_lr(lr);
        net.set_mode(Mode::Train);
        let (mut sum, mut count) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size).filter(|b| b.len() > 1) {
            let (x, y) = data.batch(batch);
            let pred = net.forward(&x)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            let grads = net.backward(&grad)?;
            adam.step(net.params_mut(), &kinds, &grads.arrays)?;
            sum += f64::from(loss) * batch.len() as f64;
            count += batch.len();
        }
        net.set_mode(Mode::Infer);
        let val_mse = eval_mse(net, data, val_refs)?;
        if !val_mse.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_mse: sum / count as f64,
            val_mse,
            lr,
        };
        progress(&record);
        history.records.push(record);
        if schedule.update(val_mse) == Directive::Stop {
            history.stopped = true;
            break;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Frames;
    use crate::models::NetworkConfig;
    use rand::Rng;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig::parse(
            "arch = rced-tiny\nframes = 8\n\
             layer.0 = conv:6:5\nlayer.1 = relu\nlayer.2 = bn\n\
             layer.3 = conv:6:5\nlayer.4 = relu\nlayer.5 = bn\n\
             layer.6 = conv:1:5\nskip = 2->3\n",
        )
        .unwrap()
    }

    fn toy_dataset(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spectra: Vec<(Frames, Frames)> = (0..3)
            .map(|_| {
                let noisy: Vec<f64> = (0..40 * 16).map(|_| rng.gen_range(0.0..2.0)).collect();
                let target: Vec<f64> = noisy.iter().map(|v| 0.5 * v + rng.gen_range(0.0..0.1)).collect();
                (Frames::from_vec(16, noisy).unwrap(), Frames::from_vec(16, target).unwrap())
            })
            .collect();
        Dataset::from_spectra(&spectra, 0.2, seed, 8).unwrap()
    }

    #[test]
    fn zero_output_layer_starts_near_target_variance() {
        let data = toy_dataset(1);
        let mut net = Network::<f32>::build_for_input(&tiny_config(), 16, 2).unwrap();
        net.zero_output_layer();
        let mse = eval_mse(&net, &data, &data.train).unwrap();
        assert!((mse - 1.0).abs() < 0.2, "{mse}");
    }

    #[test]
    fn loss_decreases_and_history_is_complete() {
        let data = toy_dataset(3);
        let mut net = Network::<f32>::build_for_input(&tiny_config(), 16, 4).unwrap();
        let cfg = FitConfig {
            epochs_max: 15,
            seed: 5,
            ..FitConfig::default()
        };
        let h = fit(&mut net, &data, &cfg).unwrap();
        assert_eq!(h.records.len(), 15);
        assert!(h.records.last().unwrap().train_mse < 0.5 * h.records[0].train_mse);
        assert!(h.records.iter().all(|r| r.lr == 0.0015));
        assert_eq!(net.mode(), Mode::Infer);
    }

    #[test]
    fn deterministic_history() {
        let data = toy_dataset(6);
        let cfg = FitConfig {
            epochs_max: 4,
            seed: 9,
            ..FitConfig::default()
        };
        let run = || {
            let mut net = Network::<f32>::build_for_input(&tiny_config(), 16, 1).unwrap();
            let h = fit(&mut net, &data, &cfg).unwrap();
            (h.to_csv(), net.layers().to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn csv_format() {
        let h = History {
            records: vec![EpochRecord {
                epoch: 1,
                train_mse: 0.5,
                val_mse: 0.25,
                lr: 0.0015,
            }],
            stopped: false,
        };
        assert_eq!(h.to_csv(), "epoch,train_mse,val_mse,lr\n1,5.000000000e-1,2.500000000e-1,0.0015\n");
    }

    #[test]
    fn rejects_tiny_dataset() {
        let mut data = toy_dataset(1);
        data.truncate_train(1);
        let mut net = Network::<f32>::build_for_input(&tiny_config(), 16, 2).unwrap();
        assert!(fit(&mut net, &data, &FitConfig::default()).is_err());
    }
}
