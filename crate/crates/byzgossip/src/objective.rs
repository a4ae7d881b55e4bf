//! Synthetic local objectives with controllable smoothness, gradient noise,
//! and inter-worker heterogeneity, plus their gradient oracles.
//!
//! Two families are provided:
//!
//! * **Quadratics** `f_i(x) = ½ (x − c_i)ᵀ H (x − c_i)` with a diagonal
//!   Hessian shared by all workers and per-worker centers `c_i` placed
//!   either on a deterministic signed-axis lattice or in a two-group split,
//!   so the heterogeneity level is known in closed form.  Stochastic
//!   gradients add Gaussian noise with total variance `noise_sigma²`.
//! * **Logistic regression** on synthetic two-class Gaussian blobs,
//!   optionally label-partitioned across workers (the non-IID regime).
//!   Stochastic gradients average a uniformly subsampled minibatch.
//!
//! Every quantity that the simulation engine reports or that the theory
//! bounds reference — the smoothness constant `L`, the gradient-noise level
//! `σ²`, the heterogeneity level `ζ²`, and the global optimum — is either
//! specified exactly or measurable through the helpers in this module.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{self, stream};

/// Default minibatch size for logistic objectives when none is configured.
pub const DEFAULT_BATCH_SIZE: usize = 1;

/// Eigenvalue spectrum of the shared diagonal Hessian of a quadratic family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumSpec {
    /// All eigenvalues equal to one (`H = I`).
    Identity,
    /// An explicit eigenvalue list; its length must equal the dimension.
    Explicit { values: Vec<f64> },
    /// `d` evenly spaced eigenvalues from `min` to `max` inclusive.
    Linspace { min: f64, max: f64 },
}

impl SpectrumSpec {
    /// Materializes the eigenvalue list for dimension `d`.
    ///
    /// All eigenvalues must be positive and finite.
    pub fn eigenvalues(&self, d: usize) -> Result<Vec<f64>> {
        let values = match self {
            SpectrumSpec::Identity => vec![1.0; d],
            SpectrumSpec::Explicit { values } => {
                if values.len() != d {
                    return Err(Error::InvalidSpec(format!(
                        "explicit spectrum has {} eigenvalues but the dimension is {d}",
                        values.len()
                    )));
                }
                values.clone()
            }
            SpectrumSpec::Linspace { min, max } => {
                if !(min.is_finite() && max.is_finite()) || max < min {
                    return Err(Error::InvalidSpec(format!(
                        "linspace spectrum requires finite min <= max, got [{min}, {max}]"
                    )));
                }
                if d == 1 {
                    vec![*min]
                } else {
                    (0..d)
                        .map(|i| min + (max - min) * i as f64 / (d - 1) as f64)
                        .collect()
                }
            }
        };
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidSpec(format!(
                "Hessian eigenvalues must be positive and finite, got {bad}"
            )));
        }
        Ok(values)
    }
}

/// Placement rule for quadratic centers across the regular workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterLayout {
    /// Worker `k` (in ascending id order) gets `±spread · e_axis` with
    /// alternating sign and `axis = ⌊k/2⌋ mod d`.  Centers come in exact
    /// `±` pairs, so for an even worker count the mean center is the origin
    /// and the heterogeneity level equals `spread²·λ²` per Hessian direction.
    #[default]
    Lattice,
    /// The first `⌈r/2⌉` workers (ascending id order) get `−spread·e_0` and
    /// the rest `+spread·e_0`: two internally homogeneous groups.  On a
    /// two-clique topology whose cliques occupy contiguous id ranges this
    /// aligns the data split with the cliques.
    Split,
}

/// Which synthetic objective family to instantiate, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// `f_i(x) = ½ (x − c_i)ᵀ H (x − c_i)` with shared diagonal `H`.
    Quadratic {
        d: usize,
        hessian_eigs: SpectrumSpec,
        center_spread: f64,
        #[serde(default)]
        center_layout: CenterLayout,
        /// Reserved override of the run seed for objective construction.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Binary logistic regression on two Gaussian blobs in `R^d`, classes
    /// centered at `±(class_separation/2)·e_0`.
    Logistic {
        d: usize,
        samples_per_worker: usize,
        class_separation: f64,
        /// When true each worker holds samples of a single class: the first
        /// `⌈r/2⌉` workers (ascending id) the negative class, the rest the
        /// positive class.  When false every worker holds a balanced mix.
        noniid_split: bool,
        #[serde(default)]
        l2_reg: f64,
        /// Minibatch size for stochastic gradients (default 1).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        batch_size: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

/// Specification of the family of local objectives `f_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    #[serde(flatten)]
    pub kind: ObjectiveKind,
    /// Total gradient-noise level: stochastic quadratic gradients satisfy
    /// `E‖g − ∇f‖² = noise_sigma²`.  Must be 0 for logistic objectives,
    /// whose noise comes from minibatch subsampling instead.
    #[serde(default)]
    pub noise_sigma: f64,
}

impl ObjectiveSpec {
    /// Dimension of the model vectors this family operates on.
    pub fn dimension(&self) -> usize {
        match &self.kind {
            ObjectiveKind::Quadratic { d, .. } => *d,
            ObjectiveKind::Logistic { d, .. } => *d,
        }
    }

    /// Validates every field without building anything.
    pub fn validate(&self) -> Result<()> {
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.dimension() == 0 {
            return Err(Error::InvalidSpec("dimension must be positive".into()));
        }
        match &self.kind {
            ObjectiveKind::Quadratic {
                d,
                hessian_eigs,
                center_spread,
                ..
            } => {
                hessian_eigs.eigenvalues(*d)?;
                if !center_spread.is_finite() || *center_spread < 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "center_spread must be finite and >= 0, got {center_spread}"
                    )));
                }
            }
            ObjectiveKind::Logistic {
                samples_per_worker,
                class_separation,
                l2_reg,
                batch_size,
                ..
            } => {
                if *samples_per_worker == 0 {
                    return Err(Error::InvalidSpec(
                        "samples_per_worker must be positive".into(),
                    ));
                }
                if !class_separation.is_finite() || *class_separation < 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "class_separation must be finite and >= 0, got {class_separation}"
                    )));
                }
                if !l2_reg.is_finite() || *l2_reg < 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "l2_reg must be finite and >= 0, got {l2_reg}"
                    )));
                }
                if batch_size == &Some(0) {
                    return Err(Error::InvalidSpec("batch_size must be positive".into()));
                }
                if self.noise_sigma != 0.0 {
                    return Err(Error::InvalidSpec(
                        "noise_sigma must be 0 for logistic objectives; \
                         minibatch subsampling provides the gradient noise"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn seed_override(&self) -> Option<u64> {
        match &self.kind {
            ObjectiveKind::Quadratic { seed, .. } => *seed,
            ObjectiveKind::Logistic { seed, .. } => *seed,
        }
    }
}

/// One worker's local objective together with its smoothness information.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerObjective {
    worker_id: usize,
    noise_sigma: f64,
    kind: WorkerObjectiveKind,
}

#[derive(Debug, Clone, PartialEq)]
enum WorkerObjectiveKind {
    Quadratic {
        hessian_diag: Array1<f64>,
        center: Array1<f64>,
    },
    Logistic {
        /// `samples × d` feature matrix.
        features: Array2<f64>,
        /// Signed labels in `{−1, +1}`, one per feature row.
        labels: Vec<f64>,
        l2_reg: f64,
        batch_size: usize,
    },
}

/// One realization of the per-round gradient randomness `ξ`.
///
/// Drawing the sample once and reusing it lets a caller evaluate the *same*
/// stochastic loss `F(·; ξ)` and its gradient at several points — required by
/// screening rules that compare candidate models under a common sample.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSample {
    /// Additive gradient noise `ξ`: `F(x; ξ) = f(x) + ξᵀx`, `∇F = ∇f + ξ`.
    Additive(Array1<f64>),
    /// Minibatch row indices into the local dataset (drawn with replacement).
    Batch(Vec<usize>),
}

impl WorkerObjective {
    /// Builds a quadratic objective `½ (x − c)ᵀ diag(h) (x − c)`.
    pub fn quadratic(
        worker_id: usize,
        hessian_diag: Array1<f64>,
        center: Array1<f64>,
        noise_sigma: f64,
    ) -> Result<Self> {
        if hessian_diag.len() != center.len() {
            return Err(Error::DimensionMismatch {
                expected: hessian_diag.len(),
                got: center.len(),
            });
        }
        if hessian_diag.is_empty() {
            return Err(Error::InvalidSpec("dimension must be positive".into()));
        }
        if let Some(bad) = hessian_diag.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidSpec(format!(
                "Hessian eigenvalues must be positive and finite, got {bad}"
            )));
        }
        if !noise_sigma.is_finite() || noise_sigma < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "noise_sigma must be finite and >= 0, got {noise_sigma}"
            )));
        }
        Ok(Self {
            worker_id,
            noise_sigma,
            kind: WorkerObjectiveKind::Quadratic {
                hessian_diag,
                center,
            },
        })
    }

    /// Builds a logistic-regression objective over an explicit dataset with
    /// signed labels in `{−1, +1}`.
    pub fn logistic(
        worker_id: usize,
        features: Array2<f64>,
        labels: Vec<f64>,
        l2_reg: f64,
        batch_size: usize,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::InvalidSpec(format!(
                "feature rows ({}) and labels ({}) disagree",
                features.nrows(),
                labels.len()
            )));
        }
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::InvalidSpec(
                "logistic dataset must be non-empty with positive dimension".into(),
            ));
        }
        if labels.iter().any(|y| *y != 1.0 && *y != -1.0) {
            return Err(Error::InvalidSpec(
                "logistic labels must be +1 or -1".into(),
            ));
        }
        if batch_size == 0 {
            return Err(Error::InvalidSpec("batch_size must be positive".into()));
        }
        if !l2_reg.is_finite() || l2_reg < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "l2_reg must be finite and >= 0, got {l2_reg}"
            )));
        }
        Ok(Self {
            worker_id,
            noise_sigma: 0.0,
            kind: WorkerObjectiveKind::Logistic {
                features,
                labels,
                l2_reg,
                batch_size,
            },
        })
    }

    pub fn worker_id(&self) -> usize {
        self.worker_id
    }

    /// Dimension of the model vector.
    pub fn dim(&self) -> usize {
        match &self.kind {
            WorkerObjectiveKind::Quadratic { center, .. } => center.len(),
            WorkerObjectiveKind::Logistic { features, .. } => features.ncols(),
        }
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// The quadratic center `c_i`, if this is a quadratic objective.
    pub fn center(&self) -> Option<&Array1<f64>> {
        match &self.kind {
            WorkerObjectiveKind::Quadratic { center, .. } => Some(center),
            WorkerObjectiveKind::Logistic { .. } => None,
        }
    }

    /// Local objective value `f_i(x)` (exact, noise-free).
    pub fn value(&self, x: &Array1<f64>) -> f64 {
        self.check_dim(x);
        match &self.kind {
            WorkerObjectiveKind::Quadratic {
                hessian_diag,
                center,
            } => {
                let diff = x - center;
                0.5 * diff
                    .iter()
                    .zip(hessian_diag)
                    .map(|(z, h)| h * z * z)
                    .sum::<f64>()
            }
            WorkerObjectiveKind::Logistic {
                features,
                labels,
                l2_reg,
                ..
            } => {
                let n = labels.len();
                let data: f64 = (0..n)
                    .map(|s| logistic_loss(&features.row(s), labels[s], x))
                    .sum::<f64>()
                    / n as f64;
                data + 0.5 * l2_reg * x.iter().map(|v| v * v).sum::<f64>()
            }
        }
    }

    /// Exact local gradient `∇f_i(x)` (full batch, no noise).
    pub fn exact_gradient(&self, x: &Array1<f64>) -> Array1<f64> {
        self.check_dim(x);
        match &self.kind {
            WorkerObjectiveKind::Quadratic {
                hessian_diag,
                center,
            } => (x - center) * hessian_diag,
            WorkerObjectiveKind::Logistic {
                features,
                labels,
                l2_reg,
                ..
            } => {
                let n = labels.len();
                let mut grad = Array1::zeros(x.len());
                for (s, &label) in labels.iter().enumerate() {
                    add_logistic_gradient(&mut grad, &features.row(s), label, x, 1.0 / n as f64);
                }
                grad.scaled_add(*l2_reg, x);
                grad
            }
        }
    }

    /// Draws one realization `ξ` of the gradient randomness.
    ///
    /// Quadratic objectives with `noise_sigma = 0` return a zero sample
    /// without consuming the generator, so noise-free runs are exact.
    pub fn draw_noise(&self, rng: &mut ChaCha8Rng) -> NoiseSample {
        match &self.kind {
            WorkerObjectiveKind::Quadratic { center, .. } => {
                let d = center.len();
                if self.noise_sigma == 0.0 {
                    return NoiseSample::Additive(Array1::zeros(d));
                }
                // Per-coordinate variance σ²/d makes the total E‖ξ‖² = σ².
                let scale = self.noise_sigma / (d as f64).sqrt();
                NoiseSample::Additive(Array1::from_shape_fn(d, |_| {
                    scale * rng.sample::<f64, _>(StandardNormal)
                }))
            }
            WorkerObjectiveKind::Logistic {
                labels, batch_size, ..
            } => {
                let n = labels.len();
                NoiseSample::Batch((0..*batch_size).map(|_| rng.gen_range(0..n)).collect())
            }
        }
    }

    /// Stochastic loss `F(x; ξ)` under a previously drawn sample.
    pub fn sampled_value(&self, x: &Array1<f64>, sample: &NoiseSample) -> f64 {
        self.check_dim(x);
        match (&self.kind, sample) {
            (WorkerObjectiveKind::Quadratic { .. }, NoiseSample::Additive(xi)) => {
                self.value(x) + xi.dot(x)
            }
            (
                WorkerObjectiveKind::Logistic {
                    features,
                    labels,
                    l2_reg,
                    ..
                },
                NoiseSample::Batch(batch),
            ) => {
                assert!(!batch.is_empty(), "empty minibatch");
                let data: f64 = batch
                    .iter()
                    .map(|&s| logistic_loss(&features.row(s), labels[s], x))
                    .sum::<f64>()
                    / batch.len() as f64;
                data + 0.5 * l2_reg * x.iter().map(|v| v * v).sum::<f64>()
            }
            _ => panic!("noise sample kind does not match the objective kind"),
        }
    }

    /// Stochastic gradient `∇F(x; ξ)` under a previously drawn sample.
    pub fn sampled_gradient(&self, x: &Array1<f64>, sample: &NoiseSample) -> Array1<f64> {
        self.check_dim(x);
        match (&self.kind, sample) {
            (WorkerObjectiveKind::Quadratic { .. }, NoiseSample::Additive(xi)) => {
                self.exact_gradient(x) + xi
            }
            (
                WorkerObjectiveKind::Logistic {
                    features,
                    labels,
                    l2_reg,
                    ..
                },
                NoiseSample::Batch(batch),
            ) => {
                assert!(!batch.is_empty(), "empty minibatch");
                let mut grad = Array1::zeros(x.len());
                for &s in batch {
                    add_logistic_gradient(
                        &mut grad,
                        &features.row(s),
                        labels[s],
                        x,
                        1.0 / batch.len() as f64,
                    );
                }
                grad.scaled_add(*l2_reg, x);
                grad
            }
            _ => panic!("noise sample kind does not match the objective kind"),
        }
    }

    /// Draws a fresh sample and returns the stochastic gradient at `x`:
    /// quadratic `∇f(x) + ξ` with `E‖ξ‖² = noise_sigma²`, logistic a
    /// uniformly drawn minibatch gradient.
    pub fn stochastic_gradient(&self, x: &Array1<f64>, rng: &mut ChaCha8Rng) -> Array1<f64> {
        let sample = self.draw_noise(rng);
        self.sampled_gradient(x, &sample)
    }

    /// The label-flipped counterpart of this objective: the quadratic target
    /// is negated; logistic labels are complemented.
    pub fn flipped(&self) -> Self {
        let kind = match &self.kind {
            WorkerObjectiveKind::Quadratic {
                hessian_diag,
                center,
            } => WorkerObjectiveKind::Quadratic {
                hessian_diag: hessian_diag.clone(),
                center: -center,
            },
            WorkerObjectiveKind::Logistic {
                features,
                labels,
                l2_reg,
                batch_size,
            } => WorkerObjectiveKind::Logistic {
                features: features.clone(),
                labels: labels.iter().map(|y| -y).collect(),
                l2_reg: *l2_reg,
                batch_size: *batch_size,
            },
        };
        Self {
            worker_id: self.worker_id,
            noise_sigma: self.noise_sigma,
            kind,
        }
    }

    /// Smoothness constant of this local objective: the largest Hessian
    /// eigenvalue for quadratics; the standard bound
    /// `max_s ‖a_s‖²/4 + l2_reg` for logistic regression.
    pub fn smoothness(&self) -> f64 {
        match &self.kind {
            WorkerObjectiveKind::Quadratic { hessian_diag, .. } => {
                hessian_diag.iter().cloned().fold(0.0, f64::max)
            }
            WorkerObjectiveKind::Logistic {
                features, l2_reg, ..
            } => {
                let max_sq_norm = features
                    .rows()
                    .into_iter()
                    .map(|row| row.iter().map(|v| v * v).sum::<f64>())
                    .fold(0.0, f64::max);
                max_sq_norm / 4.0 + l2_reg
            }
        }
    }

    fn check_dim(&self, x: &Array1<f64>) {
        assert_eq!(
            x.len(),
            self.dim(),
            "model vector dimension {} does not match objective dimension {}",
            x.len(),
            self.dim()
        );
    }
}

/// Stable `ln(1 + exp(−y·aᵀx))` for a signed label `y ∈ {−1, +1}`.
fn logistic_loss(a: &ndarray::ArrayView1<f64>, y: f64, x: &Array1<f64>) -> f64 {
    let margin = y * a.dot(x);
    if margin >= 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

/// Adds `scale · ∇ℓ(x; a, y)` to `acc`, where `∇ℓ = −y·σ(−y·aᵀx)·a`.
fn add_logistic_gradient(
    acc: &mut Array1<f64>,
    a: &ndarray::ArrayView1<f64>,
    y: f64,
    x: &Array1<f64>,
    scale: f64,
) {
    let margin = y * a.dot(x);
    // σ(−margin), evaluated without overflow on either sign.
    let s = if margin >= 0.0 {
        let e = (-margin).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + margin.exp())
    };
    acc.scaled_add(-y * s * scale, a);
}

/// Instantiates one local objective per regular worker.
///
/// Quadratic centers are placed deterministically by the configured layout;
/// logistic datasets are drawn from per-worker seeded streams.  A `seed`
/// field inside the spec overrides the run seed passed here.
pub fn build_objectives(
    spec: &ObjectiveSpec,
    regular_ids: &BTreeSet<usize>,
    seed: u64,
) -> Result<BTreeMap<usize, WorkerObjective>> {
    build_objectives_positioned(spec, regular_ids, seed, 0, regular_ids.len())
}

/// [`build_objectives`] with explicit enumeration positions: worker `k` of
/// `ids` (ascending order) takes lattice/split position `position_offset + k`
/// while the split/class boundary stays at `⌈split_cohort/2⌉`.
///
/// This lets additional nodes (e.g. Byzantine workers that train honestly on
/// flipped data) continue the enumeration of an existing cohort without
/// shifting the cohort's own center or class assignments.
pub fn build_objectives_positioned(
    spec: &ObjectiveSpec,
    ids: &BTreeSet<usize>,
    seed: u64,
    position_offset: usize,
    split_cohort: usize,
) -> Result<BTreeMap<usize, WorkerObjective>> {
    spec.validate()?;
    let seed = spec.seed_override().unwrap_or(seed);
    let boundary = split_cohort.div_ceil(2);
    let mut objectives = BTreeMap::new();
    match &spec.kind {
        ObjectiveKind::Quadratic {
            d,
            hessian_eigs,
            center_spread,
            center_layout,
            ..
        } => {
            let hessian = Array1::from(hessian_eigs.eigenvalues(*d)?);
            for (k, &id) in ids.iter().enumerate() {
                let pos = position_offset + k;
                let mut center = Array1::zeros(*d);
                match center_layout {
                    CenterLayout::Lattice => {
                        let sign = if pos.is_multiple_of(2) { 1.0 } else { -1.0 };
                        center[(pos / 2) % d] = sign * center_spread;
                    }
                    CenterLayout::Split => {
                        let sign = if pos < boundary { -1.0 } else { 1.0 };
                        center[0] = sign * center_spread;
                    }
                }
                objectives.insert(
                    id,
                    WorkerObjective::quadratic(id, hessian.clone(), center, spec.noise_sigma)?,
                );
            }
        }
        ObjectiveKind::Logistic {
            d,
            samples_per_worker,
            class_separation,
            noniid_split,
            l2_reg,
            batch_size,
            ..
        } => {
            for (k, &id) in ids.iter().enumerate() {
                let pos = position_offset + k;
                let mut rng = seeding::stream_rng(seed, &[stream::OBJECTIVE, id as u64]);
                let mut features = Array2::zeros((*samples_per_worker, *d));
                let mut labels = Vec::with_capacity(*samples_per_worker);
                for s in 0..*samples_per_worker {
                    let y = if *noniid_split {
                        if pos < boundary {
                            -1.0
                        } else {
                            1.0
                        }
                    } else if s % 2 == 0 {
                        -1.0
                    } else {
                        1.0
                    };
                    for j in 0..*d {
                        features[[s, j]] = rng.sample::<f64, _>(StandardNormal);
                    }
                    features[[s, 0]] += y * class_separation / 2.0;
                    labels.push(y);
                }
                objectives.insert(
                    id,
                    WorkerObjective::logistic(
                        id,
                        features,
                        labels,
                        *l2_reg,
                        batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
                    )?,
                );
            }
        }
    }
    Ok(objectives)
}

/// Mean of the exact local gradients: `∇f(x) = (1/r) Σ_i ∇f_i(x)`.
pub fn global_gradient(
    objectives: &BTreeMap<usize, WorkerObjective>,
    x: &Array1<f64>,
) -> Array1<f64> {
    assert!(!objectives.is_empty(), "no objectives");
    let mut grad = Array1::zeros(x.len());
    for obj in objectives.values() {
        grad += &obj.exact_gradient(x);
    }
    grad / objectives.len() as f64
}

/// Mean of the local objective values: `f(x) = (1/r) Σ_i f_i(x)`.
pub fn global_value(objectives: &BTreeMap<usize, WorkerObjective>, x: &Array1<f64>) -> f64 {
    assert!(!objectives.is_empty(), "no objectives");
    objectives.values().map(|obj| obj.value(x)).sum::<f64>() / objectives.len() as f64
}

/// Closed-form minimizer and optimal value of the global quadratic objective:
/// per coordinate, the Hessian-weighted mean of the centers.  Returns `None`
/// when any objective is non-quadratic (no closed form).
pub fn global_optimum(objectives: &BTreeMap<usize, WorkerObjective>) -> Option<(Array1<f64>, f64)> {
    if objectives.is_empty() {
        return None;
    }
    let d = objectives.values().next().unwrap().dim();
    let mut weighted_centers = Array1::<f64>::zeros(d);
    let mut weights = Array1::<f64>::zeros(d);
    for obj in objectives.values() {
        match &obj.kind {
            WorkerObjectiveKind::Quadratic {
                hessian_diag,
                center,
            } => {
                weighted_centers += &(center * hessian_diag);
                weights += hessian_diag;
            }
            WorkerObjectiveKind::Logistic { .. } => return None,
        }
    }
    let x_star = weighted_centers / &weights;
    let f_star = global_value(objectives, &x_star);
    Some((x_star, f_star))
}

/// Smoothness constant `L` of the family: the maximum over workers of the
/// local smoothness constants.
pub fn smoothness_constant(objectives: &BTreeMap<usize, WorkerObjective>) -> f64 {
    objectives
        .values()
        .map(WorkerObjective::smoothness)
        .fold(0.0, f64::max)
}

/// Empirical heterogeneity level `ζ²`: the maximum over probe points of the
/// mean squared deviation of the exact local gradients from the global
/// gradient.
pub fn measure_heterogeneity(
    objectives: &BTreeMap<usize, WorkerObjective>,
    probe_points: &[Array1<f64>],
) -> f64 {
    assert!(!probe_points.is_empty(), "need at least one probe point");
    let r = objectives.len() as f64;
    probe_points
        .iter()
        .map(|x| {
            let mean = global_gradient(objectives, x);
            objectives
                .values()
                .map(|obj| {
                    let diff = obj.exact_gradient(x) - &mean;
                    diff.iter().map(|v| v * v).sum::<f64>()
                })
                .sum::<f64>()
                / r
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn ids(n: usize) -> BTreeSet<usize> {
        (0..n).collect()
    }

    fn quadratic_spec(d: usize, spread: f64, layout: CenterLayout, sigma: f64) -> ObjectiveSpec {
        ObjectiveSpec {
            kind: ObjectiveKind::Quadratic {
                d,
                hessian_eigs: SpectrumSpec::Identity,
                center_spread: spread,
                center_layout: layout,
                seed: None,
            },
            noise_sigma: sigma,
        }
    }

    fn logistic_spec(noniid: bool) -> ObjectiveSpec {
        ObjectiveSpec {
            kind: ObjectiveKind::Logistic {
                d: 3,
                samples_per_worker: 40,
                class_separation: 4.0,
                noniid_split: noniid,
                l2_reg: 0.1,
                batch_size: Some(4),
                seed: None,
            },
            noise_sigma: 0.0,
        }
    }

    #[test]
    fn spectrum_materialization() {
        assert_eq!(
            SpectrumSpec::Identity.eigenvalues(3).unwrap(),
            vec![1.0, 1.0, 1.0]
        );
        assert_eq!(
            SpectrumSpec::Linspace { min: 1.0, max: 4.0 }
                .eigenvalues(4)
                .unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            SpectrumSpec::Linspace { min: 2.0, max: 9.0 }
                .eigenvalues(1)
                .unwrap(),
            vec![2.0]
        );
        let wrong_len = SpectrumSpec::Explicit {
            values: vec![1.0, 2.0],
        }
        .eigenvalues(3);
        assert!(matches!(wrong_len, Err(Error::InvalidSpec(_))));
        let nonpositive = SpectrumSpec::Explicit {
            values: vec![1.0, 0.0],
        }
        .eigenvalues(2);
        assert!(matches!(nonpositive, Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn lattice_centers_come_in_signed_axis_pairs() {
        let spec = quadratic_spec(2, 3.0, CenterLayout::Lattice, 0.0);
        let objs = build_objectives(&spec, &ids(4), 7).unwrap();
        assert_eq!(objs[&0].center().unwrap(), &array![3.0, 0.0]);
        assert_eq!(objs[&1].center().unwrap(), &array![-3.0, 0.0]);
        assert_eq!(objs[&2].center().unwrap(), &array![0.0, 3.0]);
        assert_eq!(objs[&3].center().unwrap(), &array![0.0, -3.0]);
        // Mean center is the origin, so with H = I the heterogeneity at any
        // probe is the mean squared center norm: spread².
        let zeta_sq = measure_heterogeneity(&objs, &[array![0.5, -0.2]]);
        assert_abs_diff_eq!(zeta_sq, 9.0, epsilon = 1e-12);
    }

    #[test]
    fn split_centers_form_two_groups() {
        let spec = quadratic_spec(2, 2.0, CenterLayout::Split, 0.0);
        let objs = build_objectives(&spec, &ids(6), 7).unwrap();
        for k in 0..3 {
            assert_eq!(objs[&k].center().unwrap(), &array![-2.0, 0.0]);
        }
        for k in 3..6 {
            assert_eq!(objs[&k].center().unwrap(), &array![2.0, 0.0]);
        }
        let zeta_sq = measure_heterogeneity(&objs, &[Array1::zeros(2)]);
        assert_abs_diff_eq!(zeta_sq, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_spread_means_zero_heterogeneity() {
        let spec = quadratic_spec(3, 0.0, CenterLayout::Lattice, 0.0);
        let objs = build_objectives(&spec, &ids(5), 1).unwrap();
        let probes = [Array1::zeros(3), array![1.0, -2.0, 0.5]];
        assert_eq!(measure_heterogeneity(&objs, &probes), 0.0);
    }

    #[test]
    fn heterogeneity_hand_cases() {
        // Centers {−a, +a} in 1D with H = I: deviations ∓a, so ζ² = a².
        let h = array![1.0];
        let mk =
            |id: usize, c: f64| WorkerObjective::quadratic(id, h.clone(), array![c], 0.0).unwrap();
        let two: BTreeMap<_, _> = [(0, mk(0, -1.5)), (1, mk(1, 1.5))].into();
        assert_abs_diff_eq!(
            measure_heterogeneity(&two, &[array![0.7]]),
            2.25,
            epsilon = 1e-12
        );
        // Centers {0, 0, 3}: deviations {−1, −1, 2}, mean square 2.
        let three: BTreeMap<_, _> = [(0, mk(0, 0.0)), (1, mk(1, 0.0)), (2, mk(2, 3.0))].into();
        assert_abs_diff_eq!(
            measure_heterogeneity(&three, &[array![0.0]]),
            2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn identity_quadratic_gradient_is_displacement() {
        let obj = WorkerObjective::quadratic(0, Array1::ones(2), Array1::zeros(2), 0.0).unwrap();
        let x = array![1.0, 2.0];
        assert_eq!(obj.exact_gradient(&x), x);
        // σ = 0 ⇒ the stochastic gradient is exact.
        let mut rng = seeding::stream_rng(1, &[stream::GRADIENT, 0, 0]);
        assert_eq!(obj.stochastic_gradient(&x, &mut rng), x);
    }

    #[test]
    fn gradient_noise_has_configured_variance() {
        let sigma = 0.7;
        let d = 4;
        let obj = WorkerObjective::quadratic(0, Array1::ones(d), Array1::zeros(d), sigma).unwrap();
        let x = array![0.3, -1.0, 2.0, 0.0];
        let exact = obj.exact_gradient(&x);
        let n = 100_000;
        let mut rng = seeding::stream_rng(11, &[stream::GRADIENT, 0, 0]);
        let mut mean_dev = Array1::<f64>::zeros(d);
        let mut mean_sq = 0.0;
        for _ in 0..n {
            let dev = obj.stochastic_gradient(&x, &mut rng) - &exact;
            mean_sq += dev.iter().map(|v| v * v).sum::<f64>();
            mean_dev += &dev;
        }
        mean_sq /= n as f64;
        mean_dev /= n as f64;
        // Total noise power within 5% of σ².
        assert!(
            (mean_sq - sigma * sigma).abs() <= 0.05 * sigma * sigma,
            "E‖g − ∇f‖² = {mean_sq}, want ≈ {}",
            sigma * sigma
        );
        // Per-coordinate bias within 3·σ/√(n·d).
        let tol = 3.0 * sigma / ((n * d) as f64).sqrt();
        for dev in &mean_dev {
            assert!(dev.abs() <= tol, "per-coordinate bias {dev} exceeds {tol}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let quad =
            WorkerObjective::quadratic(0, array![1.0, 4.0, 2.5], array![0.5, -1.0, 2.0], 0.0)
                .unwrap();
        let logi = build_objectives(&logistic_spec(false), &ids(2), 3)
            .unwrap()
            .remove(&0)
            .unwrap();
        let mut rng = seeding::stream_rng(5, &[99]);
        for obj in [&quad, &logi] {
            for _ in 0..20 {
                let x = Array1::from_shape_fn(3, |_| rng.sample::<f64, _>(StandardNormal));
                let grad = obj.exact_gradient(&x);
                let h = 1e-5;
                for j in 0..3 {
                    let mut plus = x.clone();
                    plus[j] += h;
                    let mut minus = x.clone();
                    minus[j] -= h;
                    let fd = (obj.value(&plus) - obj.value(&minus)) / (2.0 * h);
                    let scale = grad[j].abs().max(1.0);
                    assert!(
                        (fd - grad[j]).abs() <= 1e-5 * scale,
                        "coordinate {j}: fd {fd} vs analytic {}",
                        grad[j]
                    );
                }
            }
        }
    }

    #[test]
    fn quadratic_optimum_is_hessian_weighted_center_mean() {
        let spec = ObjectiveSpec {
            kind: ObjectiveKind::Quadratic {
                d: 2,
                hessian_eigs: SpectrumSpec::Explicit {
                    values: vec![1.0, 4.0],
                },
                center_spread: 5.0,
                center_layout: CenterLayout::Lattice,
                seed: None,
            },
            noise_sigma: 0.0,
        };
        let objs = build_objectives(&spec, &ids(4), 9).unwrap();
        let (x_star, f_star) = global_optimum(&objs).unwrap();
        // Shared Hessian ⇒ minimizer is the plain mean of centers (origin).
        assert_abs_diff_eq!(x_star[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x_star[1], 0.0, epsilon = 1e-12);
        let grad = global_gradient(&objs, &x_star);
        assert!(grad.iter().all(|g| g.abs() <= 1e-10));
        // f* = mean_i ½ (c_i)ᵀ H (c_i) = ½·(25·1 + 25·1 + 25·4 + 25·4)/4.
        assert_abs_diff_eq!(f_star, 31.25, epsilon = 1e-12);

        // Distinct Hessians: x* = (Σ H_i c_i)/(Σ H_i) per coordinate.
        let a = WorkerObjective::quadratic(0, array![1.0], array![0.0], 0.0).unwrap();
        let b = WorkerObjective::quadratic(1, array![3.0], array![4.0], 0.0).unwrap();
        let mixed: BTreeMap<_, _> = [(0, a), (1, b)].into();
        let (x_star, _) = global_optimum(&mixed).unwrap();
        assert_abs_diff_eq!(x_star[0], 3.0, epsilon = 1e-12);
        assert!(global_gradient(&mixed, &x_star)[0].abs() <= 1e-12);
    }

    #[test]
    fn logistic_descent_reaches_stationary_point() {
        let objs = build_objectives(&logistic_spec(false), &ids(4), 21).unwrap();
        let step = 1.0 / smoothness_constant(&objs);
        let mut x = Array1::zeros(3);
        for _ in 0..2000 {
            let g = global_gradient(&objs, &x);
            x.scaled_add(-step, &g);
        }
        let grad_norm = global_gradient(&objs, &x)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(grad_norm <= 1e-8, "gradient norm {grad_norm} at optimum");
        // The separating direction is e_0, so its coefficient dominates.
        assert!(x[0] > 0.0);
        assert!(x[0].abs() > x[1].abs() && x[0].abs() > x[2].abs());
    }

    #[test]
    fn noniid_split_gives_single_class_workers() {
        let objs = build_objectives(&logistic_spec(true), &ids(4), 21).unwrap();
        let class_of = |id: usize| match &objs[&id].kind {
            WorkerObjectiveKind::Logistic { labels, .. } => {
                assert!(labels.windows(2).all(|w| w[0] == w[1]));
                labels[0]
            }
            _ => unreachable!(),
        };
        assert_eq!(class_of(0), -1.0);
        assert_eq!(class_of(1), -1.0);
        assert_eq!(class_of(2), 1.0);
        assert_eq!(class_of(3), 1.0);
        // Mixed-split workers hold both classes.
        let iid = build_objectives(&logistic_spec(false), &ids(2), 21).unwrap();
        match &iid[&0].kind {
            WorkerObjectiveKind::Logistic { labels, .. } => {
                assert!(labels.contains(&1.0) && labels.contains(&-1.0));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let spec = logistic_spec(true);
        let a = build_objectives(&spec, &ids(4), 33).unwrap();
        let b = build_objectives(&spec, &ids(4), 33).unwrap();
        assert_eq!(a, b);
        let c = build_objectives(&spec, &ids(4), 34).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn flipped_objectives() {
        // Quadratic: the flipped gradient points toward −c.
        let obj = WorkerObjective::quadratic(0, array![1.0], array![2.0], 0.0).unwrap();
        let flipped = obj.flipped();
        assert_eq!(flipped.exact_gradient(&array![0.0]), array![2.0]);
        assert_eq!(obj.exact_gradient(&array![0.0]), array![-2.0]);

        // Logistic: complemented labels negate the data part of the gradient
        // only for asymmetric datasets …
        let feats = Array2::from_shape_vec((2, 1), vec![1.0, 1.0]).unwrap();
        let asym = WorkerObjective::logistic(0, feats.clone(), vec![1.0, 1.0], 0.0, 1).unwrap();
        let x = array![0.3];
        assert_ne!(asym.exact_gradient(&x), asym.flipped().exact_gradient(&x));

        // … while a label-balanced dataset on identical features is
        // flip-invariant: the flipped multiset of (feature, label) pairs is
        // the original one.
        let sym = WorkerObjective::logistic(0, feats, vec![1.0, -1.0], 0.0, 1).unwrap();
        assert_eq!(sym.exact_gradient(&x), sym.flipped().exact_gradient(&x));
    }

    #[test]
    fn shared_sample_evaluates_consistent_surrogate() {
        // Additive sample: F(x;ξ) = f(x) + ξᵀx, ∇F = ∇f + ξ.
        let obj = WorkerObjective::quadratic(0, array![2.0], array![1.0], 0.5).unwrap();
        let mut rng = seeding::stream_rng(3, &[stream::GRADIENT, 0, 4]);
        let sample = obj.draw_noise(&mut rng);
        let NoiseSample::Additive(xi) = &sample else {
            panic!("expected additive sample")
        };
        let x = array![0.25];
        assert_abs_diff_eq!(
            obj.sampled_value(&x, &sample),
            obj.value(&x) + xi[0] * x[0],
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            obj.sampled_gradient(&x, &sample)[0],
            obj.exact_gradient(&x)[0] + xi[0],
            epsilon = 1e-15
        );

        // A batch covering each row exactly once reproduces the full-batch
        // loss and gradient.
        let objs = build_objectives(&logistic_spec(false), &ids(1), 8).unwrap();
        let logi = &objs[&0];
        let full = NoiseSample::Batch((0..40).collect());
        let x = array![0.1, -0.4, 0.2];
        assert_abs_diff_eq!(
            logi.sampled_value(&x, &full),
            logi.value(&x),
            epsilon = 1e-12
        );
        let g_full = logi.sampled_gradient(&x, &full);
        let g_exact = logi.exact_gradient(&x);
        for j in 0..3 {
            assert_abs_diff_eq!(g_full[j], g_exact[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn smoothness_constants() {
        let two_eigs = ObjectiveSpec {
            kind: ObjectiveKind::Quadratic {
                d: 2,
                hessian_eigs: SpectrumSpec::Explicit {
                    values: vec![1.0, 4.0],
                },
                center_spread: 1.0,
                center_layout: CenterLayout::Lattice,
                seed: None,
            },
            noise_sigma: 0.0,
        };
        let objs = build_objectives(&two_eigs, &ids(3), 2).unwrap();
        assert_eq!(smoothness_constant(&objs), 4.0);

        let identity = build_objectives(
            &quadratic_spec(5, 1.0, CenterLayout::Lattice, 0.0),
            &ids(3),
            2,
        )
        .unwrap();
        assert_eq!(smoothness_constant(&identity), 1.0);

        // Logistic: L = max‖a‖²/4 + λ exactly, on a handmade dataset.
        let feats = Array2::from_shape_vec((2, 2), vec![3.0, 4.0, 1.0, 0.0]).unwrap();
        let logi = WorkerObjective::logistic(0, feats, vec![1.0, -1.0], 0.25, 1).unwrap();
        assert_abs_diff_eq!(logi.smoothness(), 25.0 / 4.0 + 0.25, epsilon = 1e-12);
    }

    #[test]
    fn spec_validation_rejects_bad_fields() {
        let mut spec = quadratic_spec(3, 1.0, CenterLayout::Lattice, -0.1);
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
        spec.noise_sigma = 0.0;
        assert!(spec.validate().is_ok());

        let mut logi = logistic_spec(false);
        logi.noise_sigma = 0.5;
        assert!(matches!(logi.validate(), Err(Error::InvalidSpec(_))));

        let zero_batch = ObjectiveSpec {
            kind: ObjectiveKind::Logistic {
                d: 2,
                samples_per_worker: 4,
                class_separation: 1.0,
                noniid_split: false,
                l2_reg: 0.0,
                batch_size: Some(0),
                seed: None,
            },
            noise_sigma: 0.0,
        };
        assert!(matches!(zero_batch.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn spec_serialization_round_trips() {
        let quad = ObjectiveSpec {
            kind: ObjectiveKind::Quadratic {
                d: 4,
                hessian_eigs: SpectrumSpec::Linspace { min: 1.0, max: 2.0 },
                center_spread: 0.5,
                center_layout: CenterLayout::Split,
                seed: Some(5),
            },
            noise_sigma: 1.25,
        };
        let json = serde_json::to_string(&quad).unwrap();
        assert_eq!(serde_json::from_str::<ObjectiveSpec>(&json).unwrap(), quad);

        let parsed: ObjectiveSpec = serde_json::from_str(
            r#"{
                "kind": "logistic",
                "params": {
                    "d": 2,
                    "samples_per_worker": 10,
                    "class_separation": 3.0,
                    "noniid_split": true
                }
            }"#,
        )
        .unwrap();
        assert_eq!(parsed.noise_sigma, 0.0);
        match parsed.kind {
            ObjectiveKind::Logistic {
                l2_reg, batch_size, ..
            } => {
                assert_eq!(l2_reg, 0.0);
                assert_eq!(batch_size, None);
            }
            _ => panic!("wrong kind"),
        }
    }
}
