//! Datasets, model and region files, reports, and random model generation.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HyperRectangle;
use crate::metrics::{MeasureReport, StableRegion, CSV_HEADER};
use crate::model::{Dataset, DecisionTree, Ensemble, Label, LabeledInstance, ThreatModel};
use crate::tree_analysis::SymbolicAttack;

/// Schema version written into and required from every JSON artifact.
pub const FORMAT_VERSION: u32 = 1;

/// Parses LIBSVM text: `label idx:value ...` with 1-based indices; absent
/// features are 0. The dimension is the largest index seen.
pub fn parse_libsvm(text: &str) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut d = 0;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let err = |reason: String| Error::Libsvm {
            line: line_no,
            reason,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label = parse_label(tokens.next().unwrap_or("")).map_err(&err)?;
        let mut pairs: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected `index:value`, got `{tok}`")))?;
            if idx == "qid" {
                continue;
            }
            let idx: usize = idx.parse().map_err(|_| err(format!("bad feature index `{idx}`")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            let val: f64 = val.parse().map_err(|_| err(format!("bad feature value `{val}`")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value `{val}`")));
            }
            if pairs.iter().any(|&(i, _)| i == idx) {
                return Err(err(format!("duplicate feature index {idx}")));
            }
            d = d.max(idx);
            pairs.push((idx, val));
        }
        rows.push((pairs, label));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let instances = rows
        .into_iter()
        .map(|(pairs, y)| {
            let mut x = vec![0.0; d];
            for (i, v) in pairs {
                x[i - 1] = v;
            }
            LabeledInstance::new(x, y)
        })
        .collect();
    Dataset::new(instances, d)
}

fn parse_label(tok: &str) -> std::result::Result<Label, String> {
    if let Ok(v) = tok.parse::<i64>() {
        return Ok(Label(v));
    }
    match tok.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 2f64.powi(53) => Ok(Label(v as i64)),
        _ => Err(format!("bad label `{tok}`")),
    }
}

pub fn load_dataset_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm(&text)
}

pub fn write_libsvm(data: &Dataset) -> String {
    let mut out = String::new();
    for i in data.iter() {
        out.push_str(&i.y.to_string());
        for (f, v) in i.x.iter().enumerate() {
            if *v != 0.0 {
                out.push_str(&format!(" {}:{}", f + 1, v));
            }
        }
        out.push('\n');
    }
    out
}

/// Per-feature min-max scaling parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaling {
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = data.n_features();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for i in data.iter() {
            for (f, &v) in i.x.iter().enumerate() {
                min[f] = min[f].min(v);
                max[f] = max[f].max(v);
            }
        }
        Ok(Scaling { min, max })
    }

    /// Maps each feature to `[0,1]` on the fitted range. Constant features map to 0.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        self.check(data)?;
        self.map(data, |v, lo, hi| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
    }

    pub fn invert(&self, data: &Dataset) -> Result<Dataset> {
        self.check(data)?;
        self.map(data, |s, lo, hi| if hi > lo { lo + s * (hi - lo) } else { lo })
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if data.n_features() != self.min.len() {
            return Err(Error::DimensionMismatch {
                expected: self.min.len(),
                found: data.n_features(),
            });
        }
        Ok(())
    }

    fn map(&self, data: &Dataset, f: impl Fn(f64, f64, f64) -> f64) -> Result<Dataset> {
        let instances = data
            .iter()
            .map(|i| {
                let x = i
                    .x
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| f(v, self.min[j], self.max[j]))
                    .collect();
                LabeledInstance::new(x, i.y)
            })
            .collect();
        Dataset::new(instances, data.n_features())
    }
}

pub fn normalize(data: &Dataset) -> Result<(Dataset, Scaling)> {
    let scaling = Scaling::fit(data)?;
    Ok((scaling.apply(data)?, scaling))
}

/// Splits each class `ratio : 1 - ratio` after a seeded shuffle. Both parts keep
/// the original instance order.
pub fn stratified_split(data: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0,1), got {ratio}")));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut by_label: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, inst) in data.iter().enumerate() {
        by_label.entry(inst.y).or_default().push(i);
    }
    let mut in_train = vec![false; data.len()];
    for (stream, (label, mut idx)) in by_label.into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::SingletonClass(label));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64 * ratio).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = data.iter().cloned().zip(in_train).partition(|(_, t)| *t);
    let strip = |v: Vec<(LabeledInstance, bool)>| Dataset::new(v.into_iter().map(|(i, _)| i).collect(), data.n_features());
    Ok((strip(train)?, strip(test)?))
}

// Model JSON.

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TreeJson {
    Leaf {
        label: Label,
    },
    Node {
        feature: usize,
        threshold: f64,
        left: Box<TreeJson>,
        right: Box<TreeJson>,
    },
}

impl From<&DecisionTree> for TreeJson {
    fn from(t: &DecisionTree) -> Self {
        match t {
            DecisionTree::Leaf { label } => TreeJson::Leaf { label: *label },
            DecisionTree::Node {
                feature,
                threshold,
                left,
                right,
            } => TreeJson::Node {
                feature: *feature,
                threshold: *threshold,
                left: Box::new(left.as_ref().into()),
                right: Box::new(right.as_ref().into()),
            },
        }
    }
}

impl From<TreeJson> for DecisionTree {
    fn from(t: TreeJson) -> Self {
        match t {
            TreeJson::Leaf { label } => DecisionTree::leaf(label),
            TreeJson::Node {
                feature,
                threshold,
                left,
                right,
            } => DecisionTree::node(feature, threshold, (*left).into(), (*right).into()),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_features: Option<usize>,
    labels: Vec<Label>,
    trees: Vec<TreeJson>,
}

pub fn model_to_json(model: &Ensemble) -> Result<String> {
    let json = ModelJson {
        version: FORMAT_VERSION,
        n_features: Some(model.n_features()),
        labels: model.labels().iter().collect(),
        trees: model.trees().iter().map(TreeJson::from).collect(),
    };
    Ok(serde_json::to_string_pretty(&json)?)
}

/// Parses a model. Without `n_features` the dimension is inferred from the
/// largest feature index used.
pub fn model_from_json(text: &str, origin: &str) -> Result<Ensemble> {
    let raw: ModelJson = from_json(text, origin)?;
    check_version(raw.version)?;
    let trees: Vec<DecisionTree> = raw.trees.into_iter().map(DecisionTree::from).collect();
    let inferred = trees.iter().map(DecisionTree::required_features).max().unwrap_or(0);
    Ensemble::new(trees, raw.labels, raw.n_features.unwrap_or(inferred))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Ensemble> {
    let path = path.as_ref();
    model_from_json(&read(path)?, &path.display().to_string())
}

pub fn save_model(path: impl AsRef<Path>, model: &Ensemble) -> Result<()> {
    write_atomic(path, model_to_json(model)?.as_bytes())
}

pub fn load_threat(path: impl AsRef<Path>) -> Result<ThreatModel> {
    let path = path.as_ref();
    from_json(&read(path)?, &path.display().to_string())
}

pub fn save_threat(path: impl AsRef<Path>, threat: &ThreatModel) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(threat)?.as_bytes())
}

// Region and attack JSON.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionJson {
    version: u32,
    dim: usize,
    unstable_pres: Vec<HyperRectangle>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttacksJson {
    version: u32,
    dim: usize,
    attacks: Vec<SymbolicAttack>,
}

pub fn save_region(path: impl AsRef<Path>, region: &StableRegion) -> Result<()> {
    let json = RegionJson {
        version: FORMAT_VERSION,
        dim: region.dim(),
        unstable_pres: region.unstable_pres().to_vec(),
    };
    write_atomic(path, serde_json::to_string_pretty(&json)?.as_bytes())
}

pub fn load_region(path: impl AsRef<Path>) -> Result<StableRegion> {
    let path = path.as_ref();
    let raw: RegionJson = from_json(&read(path)?, &path.display().to_string())?;
    check_version(raw.version)?;
    StableRegion::from_pres(raw.unstable_pres, raw.dim)
}

pub fn attacks_to_json(attacks: &[SymbolicAttack], dim: usize) -> Result<String> {
    let json = AttacksJson {
        version: FORMAT_VERSION,
        dim,
        attacks: attacks.to_vec(),
    };
    Ok(serde_json::to_string_pretty(&json)?)
}

pub fn attacks_from_json(text: &str, origin: &str) -> Result<(Vec<SymbolicAttack>, usize)> {
    let raw: AttacksJson = from_json(text, origin)?;
    check_version(raw.version)?;
    for s in &raw.attacks {
        if s.pre.dim() != raw.dim || s.post.dim() != raw.dim {
            return Err(Error::DimensionMismatch {
                expected: raw.dim,
                found: s.pre.dim().max(s.post.dim()),
            });
        }
    }
    Ok((raw.attacks, raw.dim))
}

pub fn save_attacks(path: impl AsRef<Path>, attacks: &[SymbolicAttack], dim: usize) -> Result<()> {
    write_atomic(path, attacks_to_json(attacks, dim)?.as_bytes())
}

pub fn load_attacks(path: impl AsRef<Path>) -> Result<(Vec<SymbolicAttack>, usize)> {
    let path = path.as_ref();
    attacks_from_json(&read(path)?, &path.display().to_string())
}

// Reports.

/// Writes `reports` as CSV (fixed column order) and as a pretty JSON array.
pub fn save_report(csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>, reports: &[MeasureReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record(r.csv_row())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(csv_path, &bytes)?;
    save_json(json_path, &reports)
}

pub fn save_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn from_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        file: origin.to_string(),
        json_path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })
}

fn check_version(found: u32) -> Result<()> {
    if found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(Error::Version {
            expected: FORMAT_VERSION,
            found,
        })
    }
}

/// Parameters of a random forest of full trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n_trees: usize,
    pub depth: usize,
    pub n_features: usize,
    pub threshold_lo: f64,
    pub threshold_hi: f64,
    /// Snap thresholds to multiples of this step.
    #[serde(default)]
    pub threshold_step: Option<f64>,
    pub labels: Vec<Label>,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_trees % 2 == 0 {
            return bad(format!("tree count must be odd, got {}", self.n_trees));
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.n_features == 0 {
            return bad("at least one feature is required".into());
        }
        if !(self.threshold_lo.is_finite() && self.threshold_hi.is_finite() && self.threshold_lo <= self.threshold_hi) {
            return bad(format!(
                "threshold bounds [{}, {}] must be finite and ordered",
                self.threshold_lo, self.threshold_hi
            ));
        }
        if let Some(step) = self.threshold_step {
            if !(step > 0.0 && step.is_finite()) {
                return bad(format!("threshold step must be positive, got {step}"));
            }
        }
        if self.labels.is_empty() {
            return bad("label alphabet is empty".into());
        }
        Ok(())
    }
}

/// Tree `i` draws from the ChaCha stream `i` of the seed.
pub fn random_ensemble(spec: &GenSpec) -> Result<Ensemble> {
    spec.validate()?;
    let trees = (0..spec.n_trees)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            random_tree(spec, spec.depth, &mut rng)
        })
        .collect();
    Ensemble::new(trees, spec.labels.clone(), spec.n_features)
}

fn random_tree(spec: &GenSpec, depth: usize, rng: &mut ChaCha8Rng) -> DecisionTree {
    if depth == 0 {
        return DecisionTree::leaf(*spec.labels.choose(rng).expect("validated alphabet"));
    }
    let feature = rng.gen_range(0..spec.n_features);
    let mut threshold = rng.gen_range(spec.threshold_lo..=spec.threshold_hi);
    if let Some(step) = spec.threshold_step {
        threshold = ((threshold / step).round() * step).clamp(spec.threshold_lo, spec.threshold_hi);
    }
    let left = random_tree(spec, depth - 1, rng);
    let right = random_tree(spec, depth - 1, rng);
    DecisionTree::node(feature, threshold, left, right)
}
