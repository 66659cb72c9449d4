//! Local Update via model distillation.
//!
//! A client never sees public ground-truth labels here: it restricts the
//! server's global score table to its own label subset, renormalizes the
//! surviving rows into soft targets, trains a fresh student on those
//! targets over the public inputs, then fine-tunes the student on its new
//! private shard. A zero (or uninformative) global table produces a
//! cold-start signal instead, and the caller trains the client's own
//! architecture on the shard alone.

use crate::data::dataset::PrivateShard;
use crate::data::labels::{LabelId, LabelSet};
use crate::error::{Error, Result};
use crate::federation::GlobalScoreTable;
use crate::matrix::Matrix;
use crate::nn::network::Network;
use crate::nn::spec::ModelSpec;
use crate::nn::train::{train, TrainConfig};
use crate::rng::mix_seed;

/// Rows whose restricted score mass is at or below this are uninformative.
pub const MASS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct DistillConfig {
    /// Softening temperature; 1 leaves targets unchanged.
    pub temperature: f64,
    pub student_spec: ModelSpec,
    pub train: TrainConfig,
}

impl DistillConfig {
    pub fn new(temperature: f64, student_spec: ModelSpec, train: TrainConfig) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidInput("distillation temperature must be positive".into()));
        }
        Ok(DistillConfig { temperature, student_spec, train })
    }
}

/// Two-layer (8, 16) ANN, the fallback student architecture.
pub fn default_student_spec(input_dim: usize, labels: LabelSet) -> Result<ModelSpec> {
    ModelSpec::ann(input_dim, &[8, 16], labels)
}

/// Per-sample probability rows over one client's label subset, column order
/// following the label-set order.
#[derive(Debug, Clone)]
pub struct SoftTargets {
    pub labels: LabelSet,
    pub values: Matrix,
}

#[derive(Debug, Clone)]
pub struct RestrictedTargets {
    pub targets: SoftTargets,
    /// `false` rows carry no information and are excluded from training.
    pub mask: Vec<bool>,
    pub unmasked: usize,
}

/// Restrict the global table to `labels` and renormalize each informative
/// row to sum 1; rows with restricted mass <= [`MASS_FLOOR`] are masked.
pub fn restrict_and_normalize(
    global: &GlobalScoreTable,
    labels: &LabelSet,
) -> Result<RestrictedTargets> {
    let cols = global.scores.cols();
    for l in labels.iter() {
        if l as usize >= cols {
            return Err(Error::InvalidInput(format!(
                "label {l} outside global universe of {cols} labels"
            )));
        }
    }
    let col_idx: Vec<usize> = labels.iter().map(|l| l as usize).collect();
    let mut values = global.scores.select_cols(&col_idx);
    let mut mask = Vec::with_capacity(values.rows());
    let mut unmasked = 0;
    for r in 0..values.rows() {
        let row = values.row_mut(r);
        let sum: f64 = row.iter().sum();
        if sum <= MASS_FLOOR {
            row.fill(0.0);
            mask.push(false);
        } else {
            for v in row.iter_mut() {
                *v /= sum;
            }
            mask.push(true);
            unmasked += 1;
        }
    }
    Ok(RestrictedTargets { targets: SoftTargets { labels: labels.clone(), values }, mask, unmasked })
}

/// Row-wise `p^(1/T)` renormalized. `T = 1` is the identity; masked
/// (all-zero) rows stay zero.
pub fn soften(targets: &SoftTargets, temperature: f64) -> Result<SoftTargets> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidInput("temperature must be positive".into()));
    }
    if temperature == 1.0 {
        return Ok(targets.clone());
    }
    let inv_t = 1.0 / temperature;
    let mut values = targets.values.clone();
    for r in 0..values.rows() {
        let row = values.row_mut(r);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = v.powf(inv_t);
            sum += *v;
        }
        if sum > 0.0 {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
    Ok(SoftTargets { labels: targets.labels.clone(), values })
}

#[derive(Debug)]
pub enum DistillOutcome {
    Student(Network),
    /// Fewer than 2 informative rows: nothing to distill from.
    ColdStart,
}

/// Train a fresh student on the masked public inputs against softened
/// targets. Deterministic in `seed`.
pub fn distill_student(
    public_x: &Matrix,
    restricted: &RestrictedTargets,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<DistillOutcome> {
    if public_x.rows() != restricted.mask.len() {
        return Err(Error::Shape(format!(
            "{} public rows vs {} mask entries",
            public_x.rows(),
            restricted.mask.len()
        )));
    }
    if restricted.unmasked < 2 {
        return Ok(DistillOutcome::ColdStart);
    }
    let keep: Vec<usize> =
        restricted.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    let x = public_x.select_rows(&keep);
    let soft = soften(&restricted.targets, cfg.temperature)?;
    let t = soft.values.select_rows(&keep);
    let student = Network::new(cfg.student_spec.clone(), mix_seed(seed, &[0]));
    let outcome = train(student, &x, &t, &cfg.train.clone().with_seed(mix_seed(seed, &[1])))?;
    Ok(DistillOutcome::Student(outcome.net))
}

/// Fine-tune on the private shard that arrived this iteration; Adam state
/// carries over from whatever training produced `net`.
pub fn local_update(net: Network, shard: &PrivateShard, cfg: &TrainConfig) -> Result<Network> {
    if shard.is_empty() {
        return Err(Error::InvalidInput(format!(
            "empty private shard for user {} iteration {}",
            shard.owner, shard.iteration
        )));
    }
    if !shard.label_set.is_subset_of(net.labels()) {
        return Err(Error::InvalidInput(format!(
            "shard labels {:?} not covered by network labels {:?}",
            shard.label_set.ids(),
            net.labels().ids()
        )));
    }
    let targets = one_hot(&shard.labels, net.labels())?;
    Ok(train(net, &shard.features, &targets, cfg)?.net)
}

/// One-hot rows in the column order of `order`.
pub fn one_hot(labels: &[LabelId], order: &LabelSet) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), order.len());
    for (r, &l) in labels.iter().enumerate() {
        let c = order
            .position(l)
            .ok_or_else(|| Error::InvalidInput(format!("label {l} not in label set")))?;
        m.set(r, c, 1.0);
    }
    Ok(m)
}
