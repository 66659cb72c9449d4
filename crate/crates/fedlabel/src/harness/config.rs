//! Experiment configuration: a flat key/value file with dotted section
//! paths. Unknown keys are rejected; semantic violations report the key
//! path. The full schema is documented in the repository README.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::dataset::UserId;
use crate::data::features::feature_len;
use crate::data::ingest::{CsvSchema, TimeUnit};
use crate::data::labels::{ActivityLabel, LabelSet};
use crate::error::{Error, Result};
use crate::federation::BetaGranularity;
use crate::nn::spec::ModelSpec;
use crate::nn::train::TrainConfig;

pub const DEFAULT_KERNEL: usize = 3;

/// An architecture description as written in config files: `ann(8, 16)`,
/// `cnn(16, 32)`, `cnn(16, 32)@5` (trailing `@k` sets the kernel width).
/// The hidden stack is listed; a softmax classification head sized to the
/// user's label subset is implied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub kind: ArchKind,
    pub widths: Vec<usize>,
    pub kernel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    Ann,
    Cnn,
}

impl Architecture {
    pub fn parse(text: &str) -> Result<Architecture> {
        let err = Error::InvalidInput;
        let s = text.trim();
        let (body, kernel) = match s.split_once('@') {
            Some((body, k)) => {
                let kernel: usize = k
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad kernel width `{k}` in `{text}`")))?;
                (body.trim(), kernel)
            }
            None => (s, DEFAULT_KERNEL),
        };
        let (kind, rest) = if let Some(rest) = body.strip_prefix("ann") {
            (ArchKind::Ann, rest)
        } else if let Some(rest) = body.strip_prefix("cnn") {
            (ArchKind::Cnn, rest)
        } else {
            return Err(err(format!("architecture `{text}` must start with `ann` or `cnn`")));
        };
        let rest = rest.trim();
        let inner = rest
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| err(format!("architecture `{text}` needs a `(w1, w2, ...)` list")))?;
        let widths: Vec<usize> = inner
            .split(',')
            .map(|w| {
                w.trim()
                    .parse::<usize>()
                    .map_err(|_| err(format!("bad layer width `{}` in `{text}`", w.trim())))
            })
            .collect::<Result<_>>()?;
        if widths.is_empty() || widths.iter().any(|&w| w == 0) {
            return Err(err(format!("architecture `{text}` needs positive layer widths")));
        }
        if kernel == 0 {
            return Err(err(format!("kernel width must be positive in `{text}`")));
        }
        Ok(Architecture { kind, widths, kernel })
    }

    pub fn to_model_spec(&self, input_dim: usize, labels: LabelSet) -> Result<ModelSpec> {
        match self.kind {
            ArchKind::Ann => ModelSpec::ann(input_dim, &self.widths, labels),
            ArchKind::Cnn => ModelSpec::cnn(input_dim, &self.widths, self.kernel, labels),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScheduledChange {
    pub at_iteration: usize,
    pub spec: ModelSpec,
}

/// A user's initial architecture plus mid-run replacements.
#[derive(Debug, Clone)]
pub struct ModelSchedule {
    pub initial: ModelSpec,
    pub changes: Vec<ScheduledChange>,
}

impl ModelSchedule {
    /// The architecture in force at `iteration` (changes apply from their
    /// scheduled iteration onward).
    pub fn spec_at(&self, iteration: usize) -> &ModelSpec {
        self.changes
            .iter()
            .rev()
            .find(|c| c.at_iteration <= iteration)
            .map(|c| &c.spec)
            .unwrap_or(&self.initial)
    }
}

#[derive(Debug, Clone)]
pub struct UserConfig {
    pub labels: LabelSet,
    pub schedule: ModelSchedule,
}

#[derive(Debug, Clone)]
pub struct DipConfig {
    pub user: UserId,
    pub iteration: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub dim: usize,
    pub separation: f64,
    pub drift_magnitude: f64,
    /// Optional acute distribution shift for one (user, iteration).
    pub dip: Option<DipConfig>,
}

#[derive(Debug, Clone)]
pub struct CsvSource {
    pub path: PathBuf,
    pub schema: CsvSchema,
    pub window_seconds: f64,
    pub target_rate: u32,
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(SyntheticSource),
    Csv(CsvSource),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub labels: Vec<ActivityLabel>,
    pub iterations: usize,
    pub seed: u64,
    pub users: Vec<UserConfig>,
    pub source: DataSource,
    pub public_per_label: usize,
    pub per_label_per_iteration: usize,
    /// Template; per-client seeds are derived at run time.
    pub train: TrainConfig,
    pub temperature: f64,
    pub beta_granularity: BetaGranularity,
    pub restrict_accuracy: bool,
    /// Serialize score submissions per round for audit.
    pub audit: bool,
}

impl ExperimentConfig {
    pub fn feature_dim(&self) -> usize {
        match &self.source {
            DataSource::Synthetic(s) => s.dim,
            DataSource::Csv(c) => feature_len(c.window_seconds, c.target_rate),
        }
    }
}

// ---- flat key/value parsing ----

struct Entry {
    line: usize,
    value: String,
}

struct ConfigMap {
    entries: BTreeMap<String, Entry>,
}

impl ConfigMap {
    fn parse(text: &str) -> Result<ConfigMap> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::ConfigParse {
                line: line_no,
                detail: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::ConfigParse { line: line_no, detail: "empty key".into() });
            }
            if let Some(prev) = entries.insert(key.clone(), Entry { line: line_no, value }) {
                return Err(Error::ConfigParse {
                    line: line_no,
                    detail: format!("duplicate key `{key}` (first set at line {})", prev.line),
                });
            }
        }
        if entries.is_empty() {
            return Err(Error::ConfigParse { line: 0, detail: "config file is empty".into() });
        }
        Ok(ConfigMap { entries })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|e| e.value)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::config(key, format!("cannot parse `{v}` as {}", std::any::type_name::<T>()))
            }),
        }
    }

    fn take_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::config(key, format!("expected true/false, got `{v}`"))),
        }
    }

    fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.entries.keys().filter(|k| k.starts_with(prefix)).cloned().collect()
    }

    fn reject_leftovers(&self) -> Result<()> {
        if let Some((key, entry)) = self.entries.iter().next() {
            return Err(Error::ConfigParse {
                line: entry.line,
                detail: format!("unknown key `{key}`"),
            });
        }
        Ok(())
    }
}

fn comma_list(value: &str) -> Vec<String> {
    value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut map = ConfigMap::parse(text)?;

    // experiment.*
    let label_names = map
        .take("experiment.labels")
        .ok_or_else(|| Error::config("experiment.labels", "required key is missing"))?;
    let label_names = comma_list(&label_names);
    if label_names.is_empty() {
        return Err(Error::config("experiment.labels", "at least one label is required"));
    }
    for (i, name) in label_names.iter().enumerate() {
        if label_names[..i].contains(name) {
            return Err(Error::config("experiment.labels", format!("duplicate label `{name}`")));
        }
    }
    let labels: Vec<ActivityLabel> = label_names
        .iter()
        .enumerate()
        .map(|(i, n)| ActivityLabel::new(i as u32, n.clone()))
        .collect();
    let iterations = map.take_parsed::<usize>("experiment.iterations")?.unwrap_or(15);
    if iterations < 1 {
        return Err(Error::config("experiment.iterations", "must be >= 1"));
    }
    let seed = map.take_parsed::<u64>("experiment.seed")?.unwrap_or(0);

    // data.*
    let public_per_label = map.take_parsed::<usize>("data.public_per_label")?.unwrap_or(200);
    let per_label_per_iteration =
        map.take_parsed::<usize>("data.per_label_per_iteration")?.unwrap_or(200);
    if public_per_label < 1 {
        return Err(Error::config("data.public_per_label", "must be >= 1"));
    }
    if per_label_per_iteration < 1 {
        return Err(Error::config("data.per_label_per_iteration", "must be >= 1"));
    }
    let source_kind = map.take("data.source").unwrap_or_else(|| "synthetic".into());
    let source = match source_kind.as_str() {
        "synthetic" => {
            let dim = map.take_parsed::<usize>("data.dim")?.unwrap_or(150);
            let separation = map.take_parsed::<f64>("data.separation")?.unwrap_or(2.0);
            let drift_magnitude = map.take_parsed::<f64>("data.drift_magnitude")?.unwrap_or(0.3);
            if dim < 2 {
                return Err(Error::config("data.dim", "must be >= 2"));
            }
            if separation < 0.0 {
                return Err(Error::config("data.separation", "must be >= 0"));
            }
            if drift_magnitude < 0.0 {
                return Err(Error::config("data.drift_magnitude", "must be >= 0"));
            }
            let dip_user = map.take_parsed::<UserId>("data.dip.user")?;
            let dip_iter = map.take_parsed::<usize>("data.dip.iteration")?;
            let dip_mag = map.take_parsed::<f64>("data.dip.magnitude")?;
            let dip = match (dip_user, dip_iter, dip_mag) {
                (None, None, None) => None,
                (Some(user), Some(iteration), Some(magnitude)) => {
                    if !(1..=iterations).contains(&iteration) {
                        return Err(Error::config(
                            "data.dip.iteration",
                            format!("must be within 1..={iterations}"),
                        ));
                    }
                    if magnitude < 0.0 {
                        return Err(Error::config("data.dip.magnitude", "must be >= 0"));
                    }
                    Some(DipConfig { user, iteration, magnitude })
                }
                _ => {
                    return Err(Error::config(
                        "data.dip",
                        "set all of data.dip.{user, iteration, magnitude} or none",
                    ))
                }
            };
            DataSource::Synthetic(SyntheticSource { dim, separation, drift_magnitude, dip })
        }
        "csv" => {
            let path = map
                .take("data.csv.path")
                .ok_or_else(|| Error::config("data.csv.path", "required for csv source"))?;
            let delimiter = match map.take("data.csv.delimiter") {
                None => b',',
                Some(d) if d.len() == 1 => d.as_bytes()[0],
                Some(d) => {
                    return Err(Error::config(
                        "data.csv.delimiter",
                        format!("expected a single character, got `{d}`"),
                    ))
                }
            };
            let unit = match map.take("data.csv.timestamp_unit") {
                None => TimeUnit::Seconds,
                Some(u) => TimeUnit::parse(&u)
                    .map_err(|e| Error::config("data.csv.timestamp_unit", e.to_string()))?,
            };
            let schema = CsvSchema {
                timestamp: map.take("data.csv.timestamp").unwrap_or_else(|| "timestamp".into()),
                x: map.take("data.csv.x").unwrap_or_else(|| "x".into()),
                y: map.take("data.csv.y").unwrap_or_else(|| "y".into()),
                z: map.take("data.csv.z").unwrap_or_else(|| "z".into()),
                label: map.take("data.csv.label").unwrap_or_else(|| "label".into()),
                rate: map.take("data.csv.rate"),
                delimiter,
                timestamp_unit: unit,
            };
            let window_seconds = map.take_parsed::<f64>("data.csv.window_seconds")?.unwrap_or(2.0);
            let target_rate = map.take_parsed::<u32>("data.csv.target_rate")?.unwrap_or(50);
            if !(window_seconds > 0.0) {
                return Err(Error::config("data.csv.window_seconds", "must be > 0"));
            }
            if target_rate == 0 {
                return Err(Error::config("data.csv.target_rate", "must be > 0"));
            }
            DataSource::Csv(CsvSource {
                path: PathBuf::from(path),
                schema,
                window_seconds,
                target_rate,
            })
        }
        other => {
            return Err(Error::config(
                "data.source",
                format!("expected `synthetic` or `csv`, got `{other}`"),
            ))
        }
    };

    // train.*
    let train = TrainConfig::new(
        map.take_parsed::<usize>("train.max_epochs")?.unwrap_or(5),
        map.take_parsed::<usize>("train.batch_size")?.unwrap_or(32),
        map.take_parsed::<f64>("train.learning_rate")?.unwrap_or(1e-3),
        map.take_parsed::<usize>("train.early_stop_patience")?.unwrap_or(1),
        map.take_parsed::<f64>("train.validation_fraction")?.unwrap_or(0.1),
        0,
    )
    .map_err(|e| Error::config("train", e.to_string()))?;

    // distill.*
    let temperature = map.take_parsed::<f64>("distill.temperature")?.unwrap_or(1.0);
    if !(temperature > 0.0) {
        return Err(Error::config("distill.temperature", "must be > 0"));
    }
    let default_student = match map.take("distill.student") {
        None => Architecture { kind: ArchKind::Ann, widths: vec![8, 16], kernel: DEFAULT_KERNEL },
        Some(text) => Architecture::parse(&text)
            .map_err(|e| Error::config("distill.student", e.to_string()))?,
    };

    // federation.*
    let beta_granularity = match map.take("federation.beta_granularity").as_deref() {
        None | Some("user-label") => BetaGranularity::UserLabel,
        Some("user") => BetaGranularity::User,
        Some(v) => {
            return Err(Error::config(
                "federation.beta_granularity",
                format!("expected `user` or `user-label`, got `{v}`"),
            ))
        }
    };
    let restrict_accuracy = map.take_bool("federation.restrict_local_accuracy", true)?;

    // output.*
    let audit = map.take_bool("output.audit", false)?;

    // user.N.*
    let user_count = {
        let mut max = 0usize;
        for key in map.keys_with_prefix("user.") {
            let rest = &key["user.".len()..];
            let n: usize = rest
                .split('.')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::config(&key, "expected `user.<number>.<field>`"))?;
            max = max.max(n);
        }
        max
    };
    if user_count == 0 {
        return Err(Error::config("user.1.labels", "at least one user is required"));
    }

    let feature_dim = match &source {
        DataSource::Synthetic(s) => s.dim,
        DataSource::Csv(c) => feature_len(c.window_seconds, c.target_rate),
    };

    let name_to_id = |key: &str, name: &str| -> Result<u32> {
        labels
            .iter()
            .find(|l| l.name == name)
            .map(|l| l.id)
            .ok_or_else(|| Error::config(key, format!("unknown label `{name}`")))
    };

    let mut users = Vec::with_capacity(user_count);
    for n in 1..=user_count {
        let labels_key = format!("user.{n}.labels");
        let raw = map
            .take(&labels_key)
            .ok_or_else(|| Error::config(&labels_key, "required key is missing"))?;
        let ids = comma_list(&raw)
            .iter()
            .map(|name| name_to_id(&labels_key, name))
            .collect::<Result<Vec<_>>>()?;
        let label_set =
            LabelSet::new(ids).map_err(|e| Error::config(&labels_key, e.to_string()))?;

        let arch_key = format!("user.{n}.model");
        let arch = match map.take(&arch_key) {
            None => default_student.clone(),
            Some(text) => {
                Architecture::parse(&text).map_err(|e| Error::config(&arch_key, e.to_string()))?
            }
        };
        let initial = arch
            .to_model_spec(feature_dim, label_set.clone())
            .map_err(|e| Error::config(&arch_key, e.to_string()))?;

        let mut changes = Vec::new();
        for key in map.keys_with_prefix(&format!("user.{n}.swap.")) {
            let at: usize = key[format!("user.{n}.swap.").len()..]
                .parse()
                .map_err(|_| Error::config(&key, "expected `user.<n>.swap.<iteration>`"))?;
            let text = map.take(&key).expect("key listed");
            let arch =
                Architecture::parse(&text).map_err(|e| Error::config(&key, e.to_string()))?;
            let spec = arch
                .to_model_spec(feature_dim, label_set.clone())
                .map_err(|e| Error::config(&key, e.to_string()))?;
            changes.push(ScheduledChange { at_iteration: at, spec });
        }
        changes.sort_by_key(|c| c.at_iteration);
        for (i, c) in changes.iter().enumerate() {
            if !(1..=iterations).contains(&c.at_iteration) {
                return Err(Error::config(
                    format!("user.{n}.swap.{}", c.at_iteration),
                    format!("iteration must be within 1..={iterations}"),
                ));
            }
            if i > 0 && changes[i - 1].at_iteration == c.at_iteration {
                return Err(Error::config(
                    format!("user.{n}.swap.{}", c.at_iteration),
                    "duplicate swap iteration",
                ));
            }
        }
        users.push(UserConfig { labels: label_set, schedule: ModelSchedule { initial, changes } });
    }

    // Coverage: every global label owned by at least one user.
    for label in &labels {
        if !users.iter().any(|u| u.labels.contains(label.id)) {
            return Err(Error::config(
                "experiment.labels",
                format!("label `{}` is owned by no user", label.name),
            ));
        }
    }

    // Dip must reference a real user.
    if let DataSource::Synthetic(SyntheticSource { dip: Some(dip), .. }) = &source {
        if dip.user == 0 || dip.user as usize > users.len() {
            return Err(Error::config("data.dip.user", format!("user {} does not exist", dip.user)));
        }
    }

    map.reject_leftovers()?;

    Ok(ExperimentConfig {
        labels,
        iterations,
        seed,
        users,
        source,
        public_per_label,
        per_label_per_iteration,
        train,
        temperature,
        beta_granularity,
        restrict_accuracy,
        audit,
    })
}

/// Schema file for the `preprocess` subcommand: `csv.*` keys only.
pub fn load_preprocess_schema(path: &Path) -> Result<(CsvSchema, f64, u32)> {
    let text = std::fs::read_to_string(path)?;
    let mut map = ConfigMap::parse(&text)?;
    let delimiter = match map.take("csv.delimiter") {
        None => b',',
        Some(d) if d.len() == 1 => d.as_bytes()[0],
        Some(d) => {
            return Err(Error::config(
                "csv.delimiter",
                format!("expected a single character, got `{d}`"),
            ))
        }
    };
    let unit = match map.take("csv.timestamp_unit") {
        None => TimeUnit::Seconds,
        Some(u) => {
            TimeUnit::parse(&u).map_err(|e| Error::config("csv.timestamp_unit", e.to_string()))?
        }
    };
    let schema = CsvSchema {
        timestamp: map.take("csv.timestamp").unwrap_or_else(|| "timestamp".into()),
        x: map.take("csv.x").unwrap_or_else(|| "x".into()),
        y: map.take("csv.y").unwrap_or_else(|| "y".into()),
        z: map.take("csv.z").unwrap_or_else(|| "z".into()),
        label: map.take("csv.label").unwrap_or_else(|| "label".into()),
        rate: map.take("csv.rate"),
        delimiter,
        timestamp_unit: unit,
    };
    let window_seconds = map.take_parsed::<f64>("csv.window_seconds")?.unwrap_or(2.0);
    let target_rate = map.take_parsed::<u32>("csv.target_rate")?.unwrap_or(50);
    map.reject_leftovers()?;
    Ok((schema, window_seconds, target_rate))
}
