//! Server side of the protocol: score submissions, overlap-aware beta
//! weights, label-wise aggregation of client scores, and the round driver.
//!
//! Only score matrices and score-derived metadata cross the client/server
//! boundary ([`ScoreSubmission`]); network parameters never do.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::dataset::{PrivateShard, PublicDataset, UserId};
use crate::data::labels::{LabelId, LabelSet};
use crate::distill::{
    distill_student, local_update, restrict_and_normalize, DistillConfig, DistillOutcome,
};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::matrix::Matrix;
use crate::nn::network::Network;
use crate::nn::spec::ModelSpec;
use crate::nn::train::TrainConfig;
use crate::rng::mix_seed;

/// One client's softmax scores over its own label subset for every public
/// sample.
#[derive(Debug, Clone)]
pub struct ClientScoreMatrix {
    pub user: UserId,
    pub iteration: usize,
    pub labels: LabelSet,
    pub scores: Matrix,
}

impl ClientScoreMatrix {
    pub fn new(user: UserId, iteration: usize, labels: LabelSet, scores: Matrix) -> Result<Self> {
        if scores.cols() != labels.len() {
            return Err(Error::Shape(format!(
                "{} score columns vs {} labels",
                scores.cols(),
                labels.len()
            )));
        }
        if !scores.is_finite() {
            return Err(Error::InvalidInput("score matrix contains non-finite entries".into()));
        }
        for r in 0..scores.rows() {
            let sum: f64 = scores.row(r).iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "score row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(ClientScoreMatrix { user, iteration, labels, scores })
    }
}

/// The server's per-sample, per-label score table. Iteration 0 is all zero.
#[derive(Debug, Clone)]
pub struct GlobalScoreTable {
    pub iteration: usize,
    pub scores: Matrix,
}

impl GlobalScoreTable {
    pub fn zeros(rows: usize, label_count: usize) -> Self {
        GlobalScoreTable { iteration: 0, scores: Matrix::zeros(rows, label_count) }
    }

    pub fn is_zero(&self) -> bool {
        self.scores.data().iter().all(|&v| v == 0.0)
    }
}

/// Label -> owning users (ascending user id).
#[derive(Debug, Clone)]
pub struct OverlapMap {
    owners: BTreeMap<LabelId, Vec<UserId>>,
    label_count: usize,
}

impl OverlapMap {
    pub fn new(users: &[(UserId, LabelSet)], label_count: usize) -> Result<Self> {
        let mut owners: BTreeMap<LabelId, Vec<UserId>> = BTreeMap::new();
        for (user, labels) in users {
            for l in labels.iter() {
                if l as usize >= label_count {
                    return Err(Error::Protocol(format!(
                        "user {user} owns label {l} outside universe of {label_count}"
                    )));
                }
                let list = owners.entry(l).or_default();
                if list.contains(user) {
                    return Err(Error::Protocol(format!("user {user} listed twice for label {l}")));
                }
                list.push(*user);
            }
        }
        for list in owners.values_mut() {
            list.sort_unstable();
        }
        Ok(OverlapMap { owners, label_count })
    }

    pub fn owners(&self, label: LabelId) -> &[UserId] {
        self.owners.get(&label).map_or(&[], Vec::as_slice)
    }

    /// A label is unique iff exactly one user owns it.
    pub fn is_unique(&self, label: LabelId) -> bool {
        self.owners(label).len() == 1
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    /// Labels of the universe owned by no user.
    pub fn uncovered(&self) -> Vec<LabelId> {
        (0..self.label_count as LabelId).filter(|l| self.owners(*l).is_empty()).collect()
    }
}

/// Per (user, label) aggregation weight in [0, 1]; defined only for owned
/// labels, exactly 1 for unique labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaWeights {
    weights: BTreeMap<(UserId, LabelId), f64>,
}

impl BetaWeights {
    pub fn get(&self, user: UserId, label: LabelId) -> Option<f64> {
        self.weights.get(&(user, label)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(UserId, LabelId), &f64)> {
        self.weights.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaGranularity {
    /// One weight per user, reused for each of its overlapping labels.
    User,
    /// One weight per (user, label), from label-restricted accuracy.
    UserLabel,
}

/// Predict softmax scores on the public inputs; a thin protocol wrapper
/// around the network forward pass.
pub fn predict_public_scores(
    model: &Network,
    public_x: &Matrix,
    labels: &LabelSet,
    user: UserId,
    iteration: usize,
) -> Result<ClientScoreMatrix> {
    if model.labels() != labels {
        return Err(Error::Protocol(format!(
            "model labels {:?} do not match submission labels {:?}",
            model.labels().ids(),
            labels.ids()
        )));
    }
    let scores = model.forward(public_x)?;
    ClientScoreMatrix::new(user, iteration, labels.clone(), scores)
}

/// Argmax label (ties to the lowest label id) of a score row over `labels`.
fn argmax_label(labels: &LabelSet, row: &[f64]) -> LabelId {
    let mut best_label = labels.ids()[0];
    let mut best_score = row[0];
    for (c, &l) in labels.ids().iter().enumerate().skip(1) {
        let s = row[c];
        if s > best_score || (s == best_score && l < best_label) {
            best_score = s;
            best_label = l;
        }
    }
    best_label
}

/// Accuracy of score rows over `labels` against `y0`. With `restrict` set,
/// only rows whose true label lies in `labels` count (numerator and
/// denominator); otherwise every row counts.
pub fn scores_accuracy(
    labels: &LabelSet,
    scores: &Matrix,
    y0: &[LabelId],
    restrict: bool,
) -> Result<f64> {
    if scores.rows() != y0.len() {
        return Err(Error::Shape(format!("{} score rows vs {} labels", scores.rows(), y0.len())));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (r, &truth) in y0.iter().enumerate() {
        if restrict && !labels.contains(truth) {
            continue;
        }
        total += 1;
        if argmax_label(labels, scores.row(r)) == truth {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::UndefinedAccuracy("empty evaluation set".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Accuracy function of a submitted score matrix, as used for beta.
pub fn client_accuracy(csm: &ClientScoreMatrix, y0: &[LabelId], restrict: bool) -> Result<f64> {
    scores_accuracy(&csm.labels, &csm.scores, y0, restrict)
}

/// Accuracy per owned label, restricted to that label's public rows; order
/// follows the label set.
pub fn per_label_accuracy(labels: &LabelSet, scores: &Matrix, y0: &[LabelId]) -> Result<Vec<f64>> {
    if scores.rows() != y0.len() {
        return Err(Error::Shape(format!("{} score rows vs {} labels", scores.rows(), y0.len())));
    }
    let mut correct = vec![0usize; labels.len()];
    let mut total = vec![0usize; labels.len()];
    for (r, &truth) in y0.iter().enumerate() {
        if let Some(c) = labels.position(truth) {
            total[c] += 1;
            if argmax_label(labels, scores.row(r)) == truth {
                correct[c] += 1;
            }
        }
    }
    labels
        .iter()
        .enumerate()
        .map(|(c, l)| {
            if total[c] == 0 {
                Err(Error::UndefinedAccuracy(format!("no public rows for label {l}")))
            } else {
                Ok(correct[c] as f64 / total[c] as f64)
            }
        })
        .collect()
}

/// Unique labels get weight 1; overlapping labels take the supplied
/// accuracy for each owner.
pub fn compute_beta(
    overlap: &OverlapMap,
    accuracies: &BTreeMap<(UserId, LabelId), f64>,
) -> Result<BetaWeights> {
    let mut weights = BTreeMap::new();
    for l in 0..overlap.label_count() as LabelId {
        let owners = overlap.owners(l);
        if owners.len() == 1 {
            weights.insert((owners[0], l), 1.0);
            continue;
        }
        for &m in owners {
            let acc = *accuracies.get(&(m, l)).ok_or_else(|| {
                Error::Protocol(format!("missing accuracy for user {m} on overlapping label {l}"))
            })?;
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Protocol(format!(
                    "accuracy {acc} for user {m} label {l} outside [0, 1]"
                )));
            }
            weights.insert((m, l), acc);
        }
    }
    Ok(BetaWeights { weights })
}

/// Label-wise beta-weighted aggregation:
/// `G[n, l] = sum_m beta(m, l) * s_m[n, l] / sum_m beta(m, l)` over the
/// owners of `l`, reduced in ascending user-id order. A label whose betas
/// all vanish falls back to the unweighted mean.
pub fn global_update(
    submissions: &[ClientScoreMatrix],
    beta: &BetaWeights,
    overlap: &OverlapMap,
) -> Result<GlobalScoreTable> {
    if submissions.is_empty() {
        return Err(Error::Protocol("no submissions to aggregate".into()));
    }
    let rows = submissions[0].scores.rows();
    let iteration = submissions[0].iteration;
    let mut by_user: BTreeMap<UserId, &ClientScoreMatrix> = BTreeMap::new();
    for sub in submissions {
        if sub.scores.rows() != rows {
            return Err(Error::Protocol(format!(
                "user {} submitted {} rows, expected {rows}",
                sub.user,
                sub.scores.rows()
            )));
        }
        if sub.iteration != iteration {
            return Err(Error::Protocol(format!(
                "user {} submitted iteration {}, expected {iteration}",
                sub.user, sub.iteration
            )));
        }
        by_user.insert(sub.user, sub);
    }

    let uncovered = overlap.uncovered();
    if !uncovered.is_empty() {
        return Err(Error::Protocol(format!("labels {uncovered:?} owned by no user")));
    }

    let label_count = overlap.label_count();
    let mut table = Matrix::zeros(rows, label_count);
    for l in 0..label_count as LabelId {
        let owners = overlap.owners(l);
        let mut weighted: Vec<(&ClientScoreMatrix, usize, f64)> = Vec::with_capacity(owners.len());
        for &m in owners {
            let sub = by_user.get(&m).ok_or_else(|| {
                Error::Protocol(format!("owner {m} of label {l} did not submit"))
            })?;
            let col = sub.labels.position(l).ok_or_else(|| {
                Error::Protocol(format!("user {m} submission lacks owned label {l}"))
            })?;
            let b = beta.get(m, l).ok_or_else(|| {
                Error::Protocol(format!("missing beta for user {m} label {l}"))
            })?;
            weighted.push((sub, col, b));
        }
        let mut beta_sum: f64 = weighted.iter().map(|(_, _, b)| b).sum();
        if beta_sum == 0.0 {
            log::warn!("all betas zero for label {l}; falling back to unweighted mean");
            for w in weighted.iter_mut() {
                w.2 = 1.0;
            }
            beta_sum = weighted.len() as f64;
        }
        for r in 0..rows {
            let mut acc = 0.0;
            for (sub, col, b) in &weighted {
                acc += b * sub.scores.get(r, *col);
            }
            table.set(r, l as usize, acc / beta_sum);
        }
    }
    if !table.is_finite() {
        return Err(Error::Protocol("aggregated table has non-finite entries".into()));
    }
    Ok(GlobalScoreTable { iteration, scores: table })
}

/// Accuracy of the global table over all labels (argmax per row, ties to
/// the lowest label id).
pub fn global_accuracy(global: &GlobalScoreTable, y0: &[LabelId]) -> Result<f64> {
    if global.is_zero() {
        return Err(Error::UndefinedAccuracy("global table is all zero".into()));
    }
    let all = LabelSet::new((0..global.scores.cols() as LabelId).collect())?;
    scores_accuracy(&all, &global.scores, y0, false)
}

/// The wire message from client to server: label ids, a score matrix, and
/// score-derived accuracy metadata. Deliberately free of model parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSubmission {
    pub user_id: u32,
    pub iteration: u32,
    pub label_ids: Vec<u32>,
    pub row_count: u32,
    /// Row-major, `row_count` x `label_ids.len()`, 64-bit floats.
    pub scores: Vec<f64>,
    /// Restricted accuracy per owned label, aligned with `label_ids`.
    pub per_label_accuracy: Vec<f64>,
}

impl ScoreSubmission {
    pub fn from_scores(csm: &ClientScoreMatrix, per_label_accuracy: Vec<f64>) -> Self {
        ScoreSubmission {
            user_id: csm.user,
            iteration: csm.iteration as u32,
            label_ids: csm.labels.ids().to_vec(),
            row_count: csm.scores.rows() as u32,
            scores: csm.scores.data().to_vec(),
            per_label_accuracy,
        }
    }

    pub fn to_score_matrix(&self) -> Result<ClientScoreMatrix> {
        let labels = LabelSet::new(self.label_ids.clone())?;
        let scores =
            Matrix::from_vec(self.row_count as usize, self.label_ids.len(), self.scores.clone())?;
        ClientScoreMatrix::new(self.user_id, self.iteration as usize, labels, scores)
    }
}

/// One user's protocol identity for a round: label subset plus the model
/// architecture currently scheduled for it.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub user: UserId,
    pub labels: LabelSet,
    pub spec: ModelSpec,
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub temperature: f64,
    /// Template for both distillation and shard fine-tuning; the round
    /// derives per-client seeds.
    pub train: TrainConfig,
    pub beta_granularity: BetaGranularity,
    /// Evaluate client accuracy only on public rows whose true label the
    /// client owns.
    pub restrict_accuracy: bool,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRoundMetrics {
    pub user: UserId,
    pub local_accuracy: f64,
    pub global_accuracy: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PhaseTimings {
    pub local_update_secs: f64,
    pub aggregate_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RoundMetrics {
    pub iteration: usize,
    pub per_user: Vec<UserRoundMetrics>,
    /// Mean over users of per-user global-update accuracy.
    pub global_average_accuracy: f64,
    /// Accuracy of the aggregated table over all labels.
    pub table_accuracy: f64,
    pub timings: PhaseTimings,
}

#[derive(Debug)]
pub struct RoundOutput {
    pub global: GlobalScoreTable,
    pub metrics: RoundMetrics,
    pub submissions: Vec<ScoreSubmission>,
}

/// One protocol iteration.
///
/// Per client: restrict the previous global table, distill a student (or
/// cold-start on a zero table), fine-tune on this iteration's shard, and
/// predict public scores. The server then computes beta weights and the
/// label-wise update. Client steps may run in parallel; everything is
/// deterministic in `(config, seed)`.
pub fn run_round(
    public: &PublicDataset,
    clients: &[ClientState],
    shards: &[PrivateShard],
    prev_global: &GlobalScoreTable,
    iteration: usize,
    cfg: &ProtocolConfig,
    mode: &ExecMode,
) -> Result<RoundOutput> {
    if clients.len() != shards.len() {
        return Err(Error::Protocol(format!(
            "{} clients but {} shards",
            clients.len(),
            shards.len()
        )));
    }
    for (client, shard) in clients.iter().zip(shards) {
        if shard.owner != client.user || shard.iteration != iteration {
            return Err(Error::Protocol(format!(
                "shard (user {}, iteration {}) does not match client {} at iteration {iteration}",
                shard.owner, shard.iteration, client.user
            )));
        }
    }
    let label_count = prev_global.scores.cols();

    let local_started = Instant::now();
    let results = map_indexed(mode, clients.len(), |k| {
        client_round_step(public, &clients[k], &shards[k], prev_global, iteration, cfg)
    });
    let mut submissions = Vec::with_capacity(results.len());
    for r in results {
        submissions.push(r?);
    }
    let local_update_secs = local_started.elapsed().as_secs_f64();

    // Server side: everything below consumes only ScoreSubmission values.
    let aggregate_started = Instant::now();
    let overlap = OverlapMap::new(
        &clients.iter().map(|c| (c.user, c.labels.clone())).collect::<Vec<_>>(),
        label_count,
    )?;
    let csms: Vec<ClientScoreMatrix> =
        submissions.iter().map(ScoreSubmission::to_score_matrix).collect::<Result<_>>()?;

    let mut accuracies: BTreeMap<(UserId, LabelId), f64> = BTreeMap::new();
    match cfg.beta_granularity {
        BetaGranularity::UserLabel => {
            for sub in &submissions {
                for (j, &l) in sub.label_ids.iter().enumerate() {
                    accuracies.insert((sub.user_id, l), sub.per_label_accuracy[j]);
                }
            }
        }
        BetaGranularity::User => {
            for csm in &csms {
                let overall = client_accuracy(csm, &public.y0, true)?;
                for l in csm.labels.iter() {
                    accuracies.insert((csm.user, l), overall);
                }
            }
        }
    }
    let beta = compute_beta(&overlap, &accuracies)?;
    let global = global_update(&csms, &beta, &overlap)?;

    let mut per_user = Vec::with_capacity(clients.len());
    for csm in &csms {
        let local = client_accuracy(csm, &public.y0, cfg.restrict_accuracy)?;
        let cols: Vec<usize> = csm.labels.iter().map(|l| l as usize).collect();
        let global_view = global.scores.select_cols(&cols);
        let global_acc =
            scores_accuracy(&csm.labels, &global_view, &public.y0, cfg.restrict_accuracy)?;
        per_user.push(UserRoundMetrics {
            user: csm.user,
            local_accuracy: local,
            global_accuracy: global_acc,
        });
    }
    let global_average_accuracy =
        per_user.iter().map(|u| u.global_accuracy).sum::<f64>() / per_user.len() as f64;
    let table_accuracy = global_accuracy(&global, &public.y0)?;
    let aggregate_secs = aggregate_started.elapsed().as_secs_f64();

    Ok(RoundOutput {
        global,
        metrics: RoundMetrics {
            iteration,
            per_user,
            global_average_accuracy,
            table_accuracy,
            timings: PhaseTimings { local_update_secs, aggregate_secs },
        },
        submissions,
    })
}

/// Everything a client does in one round. Only the returned submission
/// crosses back to the server; the trained network is dropped here.
fn client_round_step(
    public: &PublicDataset,
    client: &ClientState,
    shard: &PrivateShard,
    prev_global: &GlobalScoreTable,
    iteration: usize,
    cfg: &ProtocolConfig,
) -> Result<ScoreSubmission> {
    let seed = mix_seed(cfg.base_seed, &[100, client.user as u64, iteration as u64]);
    let restricted = restrict_and_normalize(prev_global, &client.labels)?;
    let dcfg = DistillConfig::new(cfg.temperature, client.spec.clone(), cfg.train.clone())?;
    let net = match distill_student(&public.x0, &restricted, &dcfg, mix_seed(seed, &[2]))? {
        DistillOutcome::Student(n) => n,
        DistillOutcome::ColdStart => Network::new(client.spec.clone(), mix_seed(seed, &[3])),
    };
    let net = local_update(net, shard, &cfg.train.clone().with_seed(mix_seed(seed, &[4])))?;
    let csm = predict_public_scores(&net, &public.x0, &client.labels, client.user, iteration)?;
    let per_label = per_label_accuracy(&csm.labels, &csm.scores, &public.y0)?;
    Ok(ScoreSubmission::from_scores(&csm, per_label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::LabeledSet;
    use crate::data::labels::ActivityLabel;
    use crate::data::synth::{synth_generate, SynthParams};
    use crate::nn::spec::ModelSpec;

    fn ls(ids: &[u32]) -> LabelSet {
        LabelSet::new(ids.to_vec()).unwrap()
    }

    fn csm(user: UserId, labels: &[u32], rows: &[Vec<f64>]) -> ClientScoreMatrix {
        ClientScoreMatrix::new(user, 1, ls(labels), Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn zero_weight_model_predicts_uniform() {
        let spec = ModelSpec::ann(4, &[], ls(&[0, 1])).unwrap();
        let net = Network::zeroed(spec);
        let x = Matrix::from_rows(&[vec![1.0, -1.0, 0.5, 2.0], vec![0.0; 4]]).unwrap();
        let out = predict_public_scores(&net, &x, &ls(&[0, 1]), 1, 1).unwrap();
        for r in 0..2 {
            assert!((out.scores.get(r, 0) - 0.5).abs() < 1e-12);
            assert!((out.scores.get(r, 1) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_is_a_thin_wrapper_over_forward() {
        let spec = ModelSpec::ann(4, &[3], ls(&[2, 5])).unwrap();
        let net = Network::new(spec, 8);
        let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3, 0.4]]).unwrap();
        let direct = net.forward(&x).unwrap();
        let wrapped = predict_public_scores(&net, &x, &ls(&[2, 5]), 1, 1).unwrap();
        assert_eq!(direct, wrapped.scores);
    }

    #[test]
    fn predict_rejects_mismatched_labels() {
        let spec = ModelSpec::ann(4, &[], ls(&[0, 1])).unwrap();
        let net = Network::zeroed(spec);
        let x = Matrix::zeros(1, 4);
        assert!(predict_public_scores(&net, &x, &ls(&[0, 2]), 1, 1).is_err());
    }

    #[test]
    fn perfect_model_scores_accuracy_one() {
        let sub = csm(1, &[0, 1], &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        let acc = client_accuracy(&sub, &[0, 1, 0], true).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn uniform_scores_tiebreak_to_lowest_label_id() {
        // Balanced restricted subset: ties always predict label 0, so
        // exactly the label-0 rows are correct.
        let sub = csm(1, &[0, 1], &vec![vec![0.5, 0.5]; 4]);
        let acc = client_accuracy(&sub, &[0, 1, 0, 1], true).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn restriction_flag_changes_denominator() {
        // 4 public rows, client owns {0, 1}, truth (0, 1, 2, 3). The model
        // nails its own two rows; foreign rows can never be right.
        let sub = csm(
            1,
            &[0, 1],
            &[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4], vec![0.3, 0.7]],
        );
        let y0 = [0, 1, 2, 3];
        assert_eq!(client_accuracy(&sub, &y0, true).unwrap(), 1.0);
        assert_eq!(client_accuracy(&sub, &y0, false).unwrap(), 0.5);
    }

    #[test]
    fn empty_evaluation_set_is_undefined() {
        let sub = csm(1, &[0, 1], &vec![vec![0.5, 0.5]; 2]);
        match client_accuracy(&sub, &[2, 3], true) {
            Err(Error::UndefinedAccuracy(_)) => {}
            other => panic!("expected undefined accuracy, got {other:?}"),
        }
    }

    #[test]
    fn per_label_accuracy_restricts_rows_per_label() {
        let sub = csm(
            1,
            &[0, 1],
            &[vec![0.9, 0.1], vec![0.8, 0.2], vec![0.2, 0.8], vec![0.6, 0.4]],
        );
        // truth: 0, 0, 1, 1 -> label 0 rows both right, label 1 rows 1 of 2.
        let acc = per_label_accuracy(&sub.labels, &sub.scores, &[0, 0, 1, 1]).unwrap();
        assert_eq!(acc, vec![1.0, 0.5]);
    }

    fn table1_overlap() -> OverlapMap {
        // {Sit, Walk}, {Walk, Stand}, {Stand, StairsUp}
        OverlapMap::new(
            &[(1, ls(&[0, 1])), (2, ls(&[1, 2])), (3, ls(&[2, 3]))],
            4,
        )
        .unwrap()
    }

    #[test]
    fn beta_is_one_for_unique_labels() {
        let overlap = table1_overlap();
        let mut acc = BTreeMap::new();
        acc.insert((1, 1), 0.7);
        acc.insert((2, 1), 0.6);
        acc.insert((2, 2), 0.5);
        acc.insert((3, 2), 0.9);
        let beta = compute_beta(&overlap, &acc).unwrap();
        assert_eq!(beta.get(1, 0), Some(1.0)); // Sit unique to user 1
        assert_eq!(beta.get(3, 3), Some(1.0)); // StairsUp unique to user 3
        assert_eq!(beta.get(1, 1), Some(0.7));
        assert_eq!(beta.get(2, 1), Some(0.6));
        assert_eq!(beta.get(2, 2), Some(0.5));
        assert_eq!(beta.get(3, 2), Some(0.9));
        assert_eq!(beta.get(2, 0), None); // undefined off the label set
    }

    #[test]
    fn all_perfect_accuracies_reduce_to_unweighted() {
        let overlap = table1_overlap();
        let mut acc = BTreeMap::new();
        for (m, l) in [(1u32, 1u32), (2, 1), (2, 2), (3, 2)] {
            acc.insert((m, l), 1.0);
        }
        let beta = compute_beta(&overlap, &acc).unwrap();
        for (_, &b) in beta.iter() {
            assert_eq!(b, 1.0);
        }
    }

    #[test]
    fn missing_overlap_accuracy_is_a_protocol_error() {
        let overlap = table1_overlap();
        let acc = BTreeMap::new();
        assert!(matches!(compute_beta(&overlap, &acc), Err(Error::Protocol(_))));
    }

    #[test]
    fn single_owner_aggregation_is_identity() {
        let sub = csm(
            1,
            &[0, 1, 2],
            &[vec![0.2, 0.3, 0.5], vec![0.6, 0.1, 0.3]],
        );
        let overlap = OverlapMap::new(&[(1, ls(&[0, 1, 2]))], 3).unwrap();
        let mut acc = BTreeMap::new();
        acc.insert((1, 0), 0.4);
        let beta = compute_beta(&overlap, &acc).unwrap();
        let g = global_update(std::slice::from_ref(&sub), &beta, &overlap).unwrap();
        assert_eq!(g.scores, sub.scores);
    }

    #[test]
    fn weighted_average_matches_hand_arithmetic() {
        // 2 users share label 1; beta 0.5 and 1.0, scores 0.8 and 0.2:
        // (0.5*0.8 + 1.0*0.2) / 1.5 = 0.4.
        let a = csm(1, &[0, 1], &[vec![0.2, 0.8]]);
        let b = csm(2, &[1, 2], &[vec![0.2, 0.8]]);
        let overlap = OverlapMap::new(&[(1, ls(&[0, 1])), (2, ls(&[1, 2]))], 3).unwrap();
        let mut acc = BTreeMap::new();
        acc.insert((1, 1), 0.5);
        acc.insert((2, 1), 1.0);
        let beta = compute_beta(&overlap, &acc).unwrap();
        let g = global_update(&[a, b], &beta, &overlap).unwrap();
        assert!((g.scores.get(0, 1) - 0.4).abs() < 1e-12);
        // Unique labels pass through their single owner's scores.
        assert!((g.scores.get(0, 0) - 0.2).abs() < 1e-12);
        assert!((g.scores.get(0, 2) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn aggregation_is_invariant_to_submission_order() {
        let a = csm(1, &[0, 1], &[vec![0.3, 0.7], vec![0.9, 0.1]]);
        let b = csm(2, &[1, 2], &[vec![0.4, 0.6], vec![0.5, 0.5]]);
        let overlap = OverlapMap::new(&[(1, ls(&[0, 1])), (2, ls(&[1, 2]))], 3).unwrap();
        let mut acc = BTreeMap::new();
        acc.insert((1, 1), 0.8);
        acc.insert((2, 1), 0.3);
        let beta = compute_beta(&overlap, &acc).unwrap();
        let g1 = global_update(&[a.clone(), b.clone()], &beta, &overlap).unwrap();
        let g2 = global_update(&[b, a], &beta, &overlap).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert!((g1.scores.get(r, c) - g2.scores.get(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_beta_sum_falls_back_to_unweighted_mean() {
        let a = csm(1, &[0, 1], &[vec![0.3, 0.7]]);
        let b = csm(2, &[1, 0], &[vec![0.4, 0.6]]);
        let overlap = OverlapMap::new(&[(1, ls(&[0, 1])), (2, ls(&[1, 0]))], 2).unwrap();
        let mut acc = BTreeMap::new();
        for (m, l) in [(1u32, 0u32), (1, 1), (2, 0), (2, 1)] {
            acc.insert((m, l), 0.0);
        }
        let beta = compute_beta(&overlap, &acc).unwrap();
        let g = global_update(&[a, b], &beta, &overlap).unwrap();
        // label 0: mean(0.3, 0.6); label 1: mean(0.7, 0.4)
        assert!((g.scores.get(0, 0) - 0.45).abs() < 1e-12);
        assert!((g.scores.get(0, 1) - 0.55).abs() < 1e-12);
    }

    #[test]
    fn uncovered_label_is_a_protocol_error() {
        let a = csm(1, &[0, 1], &[vec![0.3, 0.7]]);
        let overlap = OverlapMap::new(&[(1, ls(&[0, 1]))], 3).unwrap();
        assert_eq!(overlap.uncovered(), vec![2]);
        let mut acc = BTreeMap::new();
        acc.insert((1, 0), 1.0);
        let beta = compute_beta(&overlap, &acc).unwrap();
        assert!(matches!(
            global_update(&[a], &beta, &overlap),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn global_accuracy_examples() {
        // One-hot at the true label -> 1.0.
        let onehot = GlobalScoreTable {
            iteration: 1,
            scores: Matrix::from_rows(&[
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
            ])
            .unwrap(),
        };
        assert_eq!(global_accuracy(&onehot, &[0, 2]).unwrap(), 1.0);

        // Uniform table, balanced labels, ties to label 0 -> 0.25.
        let uniform = GlobalScoreTable {
            iteration: 1,
            scores: Matrix::from_rows(&vec![vec![0.25; 4]; 4]).unwrap(),
        };
        assert_eq!(global_accuracy(&uniform, &[0, 1, 2, 3]).unwrap(), 0.25);

        // Zero table is undefined.
        let zero = GlobalScoreTable::zeros(4, 4);
        assert!(matches!(
            global_accuracy(&zero, &[0, 1, 2, 3]),
            Err(Error::UndefinedAccuracy(_))
        ));
    }

    #[test]
    fn global_accuracy_is_permutation_invariant() {
        let rows = vec![
            vec![0.7, 0.1, 0.2],
            vec![0.2, 0.5, 0.3],
            vec![0.1, 0.1, 0.8],
            vec![0.4, 0.4, 0.2],
        ];
        let y0 = [0u32, 1, 2, 1];
        let g1 = GlobalScoreTable { iteration: 1, scores: Matrix::from_rows(&rows).unwrap() };
        let perm = [2usize, 0, 3, 1];
        let prows: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let py0: Vec<u32> = perm.iter().map(|&i| y0[i]).collect();
        let g2 = GlobalScoreTable { iteration: 1, scores: Matrix::from_rows(&prows).unwrap() };
        assert_eq!(
            global_accuracy(&g1, &y0).unwrap(),
            global_accuracy(&g2, &py0).unwrap()
        );
    }

    #[test]
    fn submission_roundtrips_through_wire_form() {
        let sub = csm(7, &[2, 0], &[vec![0.25, 0.75], vec![0.5, 0.5]]);
        let wire = ScoreSubmission::from_scores(&sub, vec![0.9, 0.8]);
        let back = wire.to_score_matrix().unwrap();
        assert_eq!(back.user, 7);
        assert_eq!(back.labels.ids(), &[2, 0]);
        assert_eq!(back.scores, sub.scores);
    }

    // ---- round driver ----

    fn round_fixture(
        seed: u64,
    ) -> (PublicDataset, Vec<ClientState>, Vec<PrivateShard>, GlobalScoreTable) {
        let universe: Vec<ActivityLabel> = ["Sit", "Walk", "Stand", "StairsUp"]
            .iter()
            .enumerate()
            .map(|(i, n)| ActivityLabel::new(i as u32, *n))
            .collect();
        let params = SynthParams::new(12, 3.0, 0.3, seed).unwrap();
        let public_set = synth_generate(&params, &universe, 20, 0, 0.0, mix_seed(seed, &[0])).unwrap();
        let public = PublicDataset::new(public_set, &universe).unwrap();

        let subsets = [ls(&[0, 1]), ls(&[1, 2]), ls(&[2, 3])];
        let mut clients = Vec::new();
        let mut shards = Vec::new();
        for (u, subset) in subsets.iter().enumerate() {
            let user = u as UserId + 1;
            let spec = ModelSpec::ann(12, &[8], subset.clone()).unwrap();
            clients.push(ClientState { user, labels: subset.clone(), spec });
            let members: Vec<ActivityLabel> =
                subset.iter().map(|l| universe[l as usize].clone()).collect();
            let set: LabeledSet =
                synth_generate(&params, &members, 15, 1, 0.0, mix_seed(seed, &[2, user as u64]))
                    .unwrap();
            shards.push(PrivateShard::new(user, 1, set, subset.clone()).unwrap());
        }
        let global = GlobalScoreTable::zeros(public.rows(), 4);
        (public, clients, shards, global)
    }

    fn round_cfg(seed: u64) -> ProtocolConfig {
        ProtocolConfig {
            temperature: 1.0,
            train: TrainConfig::standard(0),
            beta_granularity: BetaGranularity::UserLabel,
            restrict_accuracy: true,
            base_seed: seed,
        }
    }

    #[test]
    fn first_round_takes_the_cold_start_path_and_fills_the_table() {
        let (public, clients, shards, global) = round_fixture(77);
        let out = run_round(
            &public,
            &clients,
            &shards,
            &global,
            1,
            &round_cfg(77),
            &ExecMode::Sequential,
        )
        .unwrap();
        assert_eq!(out.metrics.per_user.len(), 3);
        assert_eq!(out.global.iteration, 1);
        assert!(!out.global.is_zero());
        for u in &out.metrics.per_user {
            assert!((0.0..=1.0).contains(&u.local_accuracy));
            assert!((0.0..=1.0).contains(&u.global_accuracy));
        }
        assert_eq!(out.submissions.len(), 3);
    }

    #[test]
    fn rounds_are_deterministic() {
        let (public, clients, shards, global) = round_fixture(78);
        let cfg = round_cfg(78);
        let a =
            run_round(&public, &clients, &shards, &global, 1, &cfg, &ExecMode::Sequential).unwrap();
        let b =
            run_round(&public, &clients, &shards, &global, 1, &cfg, &ExecMode::Sequential).unwrap();
        assert_eq!(a.global.scores, b.global.scores);
        assert_eq!(a.metrics.per_user, b.metrics.per_user);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_round_matches_sequential() {
        let (public, clients, shards, global) = round_fixture(79);
        let cfg = round_cfg(79);
        let seq =
            run_round(&public, &clients, &shards, &global, 1, &cfg, &ExecMode::Sequential).unwrap();
        let par = run_round(
            &public,
            &clients,
            &shards,
            &global,
            1,
            &cfg,
            &ExecMode::parallel_with_threads(2),
        )
        .unwrap();
        assert_eq!(seq.global.scores, par.global.scores);
        assert_eq!(seq.metrics.per_user, par.metrics.per_user);
    }

    #[test]
    fn single_client_owning_all_labels_degenerates_to_identity() {
        let universe: Vec<ActivityLabel> = ["A", "B", "C"]
            .iter()
            .enumerate()
            .map(|(i, n)| ActivityLabel::new(i as u32, *n))
            .collect();
        let params = SynthParams::new(10, 3.0, 0.0, 5).unwrap();
        let public_set = synth_generate(&params, &universe, 15, 0, 0.0, 1).unwrap();
        let public = PublicDataset::new(public_set, &universe).unwrap();
        let subset = ls(&[0, 1, 2]);
        let spec = ModelSpec::ann(10, &[8], subset.clone()).unwrap();
        let clients =
            vec![ClientState { user: 1, labels: subset.clone(), spec }];
        let set = synth_generate(&params, &universe, 10, 1, 0.0, 2).unwrap();
        let shards = vec![PrivateShard::new(1, 1, set, subset).unwrap()];
        let global = GlobalScoreTable::zeros(public.rows(), 3);

        let mut cfg = round_cfg(5);
        cfg.restrict_accuracy = false;
        let out =
            run_round(&public, &clients, &shards, &global, 1, &cfg, &ExecMode::Sequential).unwrap();
        // Aggregation over one owner is the identity, so the table accuracy
        // equals the client's unrestricted accuracy exactly.
        let client = out.submissions[0].to_score_matrix().unwrap();
        let client_acc = client_accuracy(&client, &public.y0, false).unwrap();
        assert_eq!(out.metrics.table_accuracy, client_acc);
        assert_eq!(out.metrics.per_user[0].local_accuracy, client_acc);
    }
}
