//! Mini-batch Adam training with a held-out validation split and early
//! stopping.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::adam::adam_step;
use crate::nn::backward::backward;
use crate::nn::loss::cross_entropy;
use crate::nn::network::Network;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub rng_seed: u64,
}

impl TrainConfig {
    pub fn new(
        max_epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        early_stop_patience: usize,
        validation_fraction: f64,
        rng_seed: u64,
    ) -> Result<Self> {
        if max_epochs < 1 {
            return Err(Error::InvalidInput("max_epochs must be >= 1".into()));
        }
        if batch_size < 1 {
            return Err(Error::InvalidInput("batch_size must be >= 1".into()));
        }
        if !(learning_rate > 0.0) {
            return Err(Error::InvalidInput("learning_rate must be positive".into()));
        }
        if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
            return Err(Error::InvalidInput("validation_fraction must be in (0, 1)".into()));
        }
        Ok(TrainConfig {
            max_epochs,
            batch_size,
            learning_rate,
            early_stop_patience,
            validation_fraction,
            rng_seed,
        })
    }

    /// Max 5 epochs, batch 32, Adam at 1e-3, patience 1, 10% validation.
    pub fn standard(rng_seed: u64) -> Self {
        TrainConfig::new(5, 32, 1e-3, 1, 0.1, rng_seed).expect("valid defaults")
    }

    pub fn with_seed(mut self, rng_seed: u64) -> Self {
        self.rng_seed = rng_seed;
        self
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: Network,
    /// Validation loss of the restored best epoch.
    pub val_loss: f64,
    pub epochs_run: usize,
}

pub(crate) fn train_val_split(n: usize, fraction: f64, rng: &mut rand_chacha::ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let val_n = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = idx[..val_n].to_vec();
    let train = idx[val_n..].to_vec();
    (train, val)
}

/// Train with mini-batch Adam for at most `cfg.max_epochs` epochs, stopping
/// once validation loss fails to improve for `early_stop_patience`
/// consecutive epochs; returns the best-epoch snapshot. Existing Adam state
/// on `net` is kept, so repeated calls continue optimization.
pub fn train(net: Network, features: &Matrix, targets: &Matrix, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if features.rows() == 0 {
        return Err(Error::InvalidInput("training dataset is empty".into()));
    }
    if features.rows() < 2 {
        return Err(Error::InvalidInput(
            "training requires at least 2 samples for a validation split".into(),
        ));
    }
    if features.rows() != targets.rows() {
        return Err(Error::Shape(format!(
            "{} feature rows vs {} target rows",
            features.rows(),
            targets.rows()
        )));
    }

    let mut rng = rng_from_seed(cfg.rng_seed);
    let (mut train_idx, val_idx) = train_val_split(features.rows(), cfg.validation_fraction, &mut rng);
    let val_x = features.select_rows(&val_idx);
    let val_y = targets.select_rows(&val_idx);

    let mut net = net;
    let mut best: Option<(Network, f64)> = None;
    let mut stale_epochs = 0;
    let mut epochs_run = 0;

    for _ in 0..cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        for chunk in train_idx.chunks(cfg.batch_size) {
            let bx = features.select_rows(chunk);
            let by = targets.select_rows(chunk);
            let grads = backward(&net, &bx, &by)?;
            adam_step(&mut net, &grads, cfg.learning_rate)?;
        }
        epochs_run += 1;

        let val_loss = cross_entropy(&net.forward(&val_x)?, &val_y)?;
        let improved = best.as_ref().map_or(true, |(_, b)| val_loss < *b);
        if improved {
            best = Some((net.clone(), val_loss));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.early_stop_patience {
                break;
            }
        }
    }

    let (best_net, val_loss) = best.expect("at least one epoch ran");
    if !best_net.params_finite() {
        return Err(Error::InvalidInput("training produced non-finite parameters".into()));
    }
    Ok(TrainOutcome { net: best_net, val_loss, epochs_run })
}
