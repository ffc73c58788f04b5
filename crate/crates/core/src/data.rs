//! Seeded synthetic long-tailed relationship datasets.
//!
//! Each class owns a unit-length prototype feature; a sample's context is its
//! class prototype plus isotropic Gaussian noise. Labels follow a Zipf law so
//! class id equals frequency rank (0 is the head class).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::Rng;

/// How much context surrounds each pair feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Only the pair's own feature.
    Union,
    /// The pair feature followed by `ctx_dim` label-independent distractor dims.
    Entire,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub m_classes: usize,
    pub ctx_dim: usize,
    pub zipf_s: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub group_size: usize,
    pub noise_sigma: f64,
    pub scope: Scope,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            m_classes: 20,
            ctx_dim: 16,
            zipf_s: 1.5,
            n_train: 20_000,
            n_test: 5_000,
            group_size: 8,
            noise_sigma: 0.1,
            scope: Scope::Union,
            seed: 1,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Validation(format!("dataset.{field}: {why}")));
        if self.m_classes < 2 {
            return bad("m_classes", format!("need at least 2 classes, got {}", self.m_classes));
        }
        if self.ctx_dim == 0 {
            return bad("ctx_dim", "must be positive".into());
        }
        if !(self.zipf_s >= 0.0 && self.zipf_s.is_finite()) {
            return bad("zipf_s", format!("must be finite and >= 0, got {}", self.zipf_s));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma", format!("must be finite and >= 0, got {}", self.noise_sigma));
        }
        if self.n_train == 0 {
            return bad("n_train", "must be positive".into());
        }
        if self.group_size == 0 {
            return bad("group_size", "must be positive".into());
        }
        if self.n_test == 0 || self.n_test % self.group_size != 0 {
            return bad(
                "n_test",
                format!("{} must be positive and divisible by group_size {}", self.n_test, self.group_size),
            );
        }
        Ok(())
    }

    /// Length of every sample's context vector.
    pub fn feature_dim(&self) -> usize {
        match self.scope {
            Scope::Union => self.ctx_dim,
            Scope::Entire => 2 * self.ctx_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub ctx: Vec<f64>,
    pub group_id: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub class_weights: Vec<f64>,
    pub prototypes: Vec<Vec<f64>>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Zipf weights `1/(j+1)^s`, normalized, in descending order.
pub fn make_class_weights(m: usize, s: f64) -> Result<Vec<f64>> {
    ensure!(m >= 2, "need at least 2 classes, got {m}");
    ensure!(s >= 0.0 && s.is_finite(), "zipf exponent must be finite and >= 0, got {s}");
    let raw: Vec<f64> = (0..m).map(|j| ((j + 1) as f64).powf(-s)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Generates a dataset whose labels follow the configured Zipf weights.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let weights = make_class_weights(spec.m_classes, spec.zipf_s)?;
    generate_with_weights(spec, weights)
}

/// Generates a dataset with an explicit label distribution.
///
/// Draw order is fixed: prototypes, train samples and test samples each come
/// from their own substream of `spec.seed`.
pub fn generate_with_weights(spec: &DatasetSpec, class_weights: Vec<f64>) -> Result<Dataset> {
    spec.validate()?;
    check_weights(&class_weights, spec.m_classes)?;
    let root = Rng::new(spec.seed);

    let mut rng = root.fork(1);
    let prototypes: Vec<Vec<f64>> = (0..spec.m_classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.ctx_dim).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let draw = |rng: &mut Rng, n: usize| -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let label = rng.categorical(&class_weights);
                let mut ctx: Vec<f64> = prototypes[label]
                    .iter()
                    .map(|&p| p + spec.noise_sigma * rng.normal())
                    .collect();
                if spec.scope == Scope::Entire {
                    // same per-coordinate scale as a unit-length prototype
                    let scale = 1.0 / (spec.ctx_dim as f64).sqrt();
                    ctx.extend((0..spec.ctx_dim).map(|_| scale * rng.normal()));
                }
                Sample {
                    ctx,
                    group_id: i / spec.group_size,
                    label,
                }
            })
            .collect()
    };
    let train = draw(&mut root.fork(2), spec.n_train);
    let test = draw(&mut root.fork(3), spec.n_test);

    Ok(Dataset {
        spec: spec.clone(),
        class_weights,
        prototypes,
        train,
        test,
    })
}

fn check_weights(w: &[f64], m: usize) -> Result<()> {
    let bad = |why: String| Err(Error::Validation(format!("class_weights: {why}")));
    if w.len() != m {
        return bad(format!("expected {m} entries, got {}", w.len()));
    }
    if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return bad("entries must be finite and non-negative".into());
    }
    if w.windows(2).any(|p| p[1] > p[0]) {
        return bad("entries must be non-increasing (head to tail)".into());
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return bad(format!("entries sum to {total}, expected 1"));
    }
    Ok(())
}

impl Dataset {
    pub fn m_classes(&self) -> usize {
        self.spec.m_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    /// Checks every structural invariant of a (possibly decoded) dataset.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        check_weights(&self.class_weights, self.spec.m_classes)?;
        let m = self.spec.m_classes;
        if self.prototypes.len() != m
            || self.prototypes.iter().any(|p| p.len() != self.spec.ctx_dim)
        {
            return Err(Error::Validation(format!(
                "prototypes: expected {m} vectors of length {}",
                self.spec.ctx_dim
            )));
        }
        if self.train.len() != self.spec.n_train || self.test.len() != self.spec.n_test {
            return Err(Error::Validation(format!(
                "train/test: expected {}/{} samples, got {}/{}",
                self.spec.n_train,
                self.spec.n_test,
                self.train.len(),
                self.test.len()
            )));
        }
        let dim = self.feature_dim();
        for (split, samples) in [("train", &self.train), ("test", &self.test)] {
            for (i, s) in samples.iter().enumerate() {
                if s.label >= m {
                    return Err(Error::Validation(format!(
                        "{split}[{i}].label: {} is not below m_classes {m}",
                        s.label
                    )));
                }
                if s.ctx.len() != dim || s.ctx.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!(
                        "{split}[{i}].ctx: expected {dim} finite values"
                    )));
                }
                if s.group_id != i / self.spec.group_size {
                    return Err(Error::Validation(format!(
                        "{split}[{i}].group_id: {} breaks consecutive groups of {}",
                        s.group_id, self.spec.group_size
                    )));
                }
            }
        }
        Ok(())
    }

    /// Test samples split into their ranking groups.
    pub fn test_groups(&self) -> impl Iterator<Item = &[Sample]> {
        self.test.chunks(self.spec.group_size)
    }

    /// Label frequencies of the training split.
    pub fn train_frequencies(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.m_classes()];
        for s in &self.train {
            counts[s.label] += 1.0;
        }
        let n = self.train.len() as f64;
        counts.into_iter().map(|c| c / n).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Internal(format!("dataset encode: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Dataset = serde_json::from_str(text).map_err(|e| Error::Parse {
            field: field_hint(&e.to_string()),
            message: e.to_string(),
        })?;
        ds.validate()?;
        Ok(ds)
    }
}

/// Pulls the backticked field name out of a serde message when there is one.
fn field_hint(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("<document>").to_string()
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, ds.to_json()?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_json(&std::fs::read_to_string(path)?)
}


/// Epoch-based shuffled mini-batch index stream.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, rng: Rng) -> Self {
        assert!(n > 0 && batch > 0, "batch sampler needs samples and a positive batch size");
        let mut s = Self {
            order: (0..n).collect(),
            pos: n,
            batch,
            rng,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.rng.shuffle(&mut self.order);
        self.pos = 0;
    }

    /// Next `batch` indices, wrapping into a fresh permutation when needed.
    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}
