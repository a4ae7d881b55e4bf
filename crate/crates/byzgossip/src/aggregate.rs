//! Aggregation rules applied by a regular node to its neighborhood.
//!
//! All functions here are pure: they consume a [`NeighborView`] (the
//! node's own value, the values received on each incident edge, and the
//! node's mixing-weight row) and produce the node's next value or a
//! clipping radius. Byzantine influence enters only through the received
//! values; the rules never see who is Byzantine, except the two
//! ground-truth radius rules ([`oracle_tau`], [`adaptive_tau`]) which are
//! explicitly oracles parameterized by delta.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array1;

use crate::error::{Error, Result};

/// What a regular node sees in one communication round.
#[derive(Clone, Debug)]
pub struct NeighborView {
    pub self_id: usize,
    pub self_value: Array1<f64>,
    /// Value received from each neighbor (keys are exactly the incident
    /// edges; Byzantine senders may have put anything here).
    pub received: BTreeMap<usize, Array1<f64>>,
    /// Mixing weight on each incident edge, same keys as `received`.
    pub weights: BTreeMap<usize, f64>,
    /// Self mixing weight W_ii.
    pub self_weight: f64,
}

impl NeighborView {
    pub fn new(
        self_id: usize,
        self_value: Array1<f64>,
        received: BTreeMap<usize, Array1<f64>>,
        weights: BTreeMap<usize, f64>,
        self_weight: f64,
    ) -> Self {
        debug_assert!(
            received.keys().eq(weights.keys()),
            "received values and weights must cover the same neighbors"
        );
        Self {
            self_id,
            self_value,
            received,
            weights,
            self_weight,
        }
    }

    pub fn dim(&self) -> usize {
        self.self_value.len()
    }

    /// Candidate multiset for the unweighted robust rules: self + received.
    fn candidates(&self) -> Vec<&Array1<f64>> {
        let mut c = Vec::with_capacity(1 + self.received.len());
        c.push(&self.self_value);
        c.extend(self.received.values());
        c
    }

    fn check_dims(&self) -> Result<()> {
        let d = self.dim();
        for v in self.received.values() {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }
}

fn norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Gossip and clipped gossip
// ---------------------------------------------------------------------------

/// Clip(z, tau) := min(1, tau/‖z‖)·z. The zero vector and any vector
/// within the radius pass through unchanged (including tau = +infinity).
pub fn clip(z: &Array1<f64>, tau: f64) -> Array1<f64> {
    debug_assert!(tau >= 0.0, "clipping radius must be non-negative");
    let n = norm(z);
    if n <= tau {
        z.clone()
    } else {
        z * (tau / n)
    }
}

/// Plain gossip: the weighted average Σ_j W_ij x_j over the closed
/// neighborhood. Computed in displacement form so it is bit-identical to
/// `clipped_gossip_step` with an infinite radius.
pub fn gossip_step(view: &NeighborView) -> Result<Array1<f64>> {
    clipped_gossip_step(view, f64::INFINITY)
}

/// Clipped gossip: x_i + Σ_j W_ij·Clip(x_j − x_i, tau). Differences from
/// the node's own value are clipped to radius `tau` before averaging, so
/// ‖output − x_i‖ ≤ (1 − W_ii)·tau.
pub fn clipped_gossip_step(view: &NeighborView, tau: f64) -> Result<Array1<f64>> {
    view.check_dims()?;
    let mut out = view.self_value.clone();
    for (j, x_j) in &view.received {
        let w = view.weights[j];
        let delta = clip(&(x_j - &view.self_value), tau);
        out.scaled_add(w, &delta);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Clipping-radius rules
// ---------------------------------------------------------------------------

/// How a node chooses its clipping radius each round.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClipRule {
    /// A constant radius (use `Infinite` for no clipping; JSON has no
    /// infinity literal).
    Fixed {
        tau: f64,
    },
    Infinite,
    /// Ground-truth radius from the regular-neighbor distances and the
    /// node's Byzantine edge weight delta_i.
    Oracle,
    /// Distance-screening radius that only assumes a bound delta_max on
    /// Byzantine edge weight.
    Adaptive,
}

/// Reference clipping radius: sqrt((1/delta_i)·Σ_{j regular} W_ij‖x_i − x_j‖²),
/// with the expectation replaced by the single realized value per round.
pub fn oracle_tau(view: &NeighborView, regular_ids: &BTreeSet<usize>, delta_i: f64) -> Result<f64> {
    if delta_i <= 0.0 {
        return Err(Error::ZeroDelta { node: view.self_id });
    }
    let mut total = 0.0;
    for (j, x_j) in &view.received {
        if regular_ids.contains(j) {
            let d = x_j - &view.self_value;
            total += view.weights[j] * d.iter().map(|v| v * v).sum::<f64>();
        }
    }
    Ok((total / delta_i).sqrt())
}

/// Adaptive clipping radius: sort neighbors by distance to self
/// (ascending, ties by id), admit the longest prefix whose total weight
/// stays ≤ 1 − delta_max, and return the weighted RMS distance of the
/// admitted set.
pub fn adaptive_tau(view: &NeighborView, delta_max: f64) -> f64 {
    assert!(
        (0.0..1.0).contains(&delta_max),
        "delta_max must lie in [0, 1)"
    );
    let mut order: Vec<(f64, usize)> = view
        .received
        .iter()
        .map(|(j, x_j)| (norm(&(x_j - &view.self_value)), *j))
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let limit = 1.0 - delta_max;
    let mut admitted_weight = 0.0;
    let mut total = 0.0;
    for (dist, j) in order {
        let w = view.weights[&j];
        // Tolerance so that delta_max = 0 admits a full neighborhood whose
        // float weights sum to 1 ± epsilon.
        if admitted_weight + w > limit + 1e-12 {
            break;
        }
        admitted_weight += w;
        total += w * dist * dist;
    }
    total.sqrt()
}

// ---------------------------------------------------------------------------
// Robust baselines
// ---------------------------------------------------------------------------

/// Coordinate-wise trimmed mean over self + received: drops the
/// ⌊beta·m⌋ smallest and largest values per coordinate.
pub fn trimmed_mean(view: &NeighborView, beta: f64) -> Result<Array1<f64>> {
    if !(0.0..0.5).contains(&beta) {
        return Err(Error::InvalidSpec(format!(
            "trim fraction {beta} must lie in [0, 0.5)"
        )));
    }
    let m = view.received.len() + 1;
    trimmed_mean_count(view, (beta * m as f64).floor() as usize)
}

/// Coordinate-wise trimmed mean dropping an explicit count per end.
pub fn trimmed_mean_count(view: &NeighborView, trim: usize) -> Result<Array1<f64>> {
    view.check_dims()?;
    let candidates = view.candidates();
    let m = candidates.len();
    if 2 * trim >= m {
        return Err(Error::EmptyAfterTrim { m, trim });
    }
    let d = view.dim();
    let mut out = Array1::zeros(d);
    let mut column = vec![0.0; m];
    for k in 0..d {
        for (i, c) in candidates.iter().enumerate() {
            column[i] = c[k];
        }
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        let kept = &column[trim..m - trim];
        out[k] = kept.iter().sum::<f64>() / kept.len() as f64;
    }
    Ok(out)
}

/// Coordinate-wise median over self + received (midpoint on even counts).
pub fn coordinate_median(view: &NeighborView) -> Result<Array1<f64>> {
    view.check_dims()?;
    let candidates = view.candidates();
    let m = candidates.len();
    let d = view.dim();
    let mut out = Array1::zeros(d);
    let mut column = vec![0.0; m];
    for k in 0..d {
        for (i, c) in candidates.iter().enumerate() {
            column[i] = c[k];
        }
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        out[k] = if m % 2 == 1 {
            column[m / 2]
        } else {
            0.5 * (column[m / 2 - 1] + column[m / 2])
        };
    }
    Ok(out)
}

/// Smoothing added to Weiszfeld denominators so anchor points (iterate
/// exactly on a candidate) stay finite.
const WEISZFELD_SMOOTHING: f64 = 1e-8;

pub const GEOMETRIC_MEDIAN_DEFAULT_ITERS: usize = 8;
pub const GEOMETRIC_MEDIAN_DEFAULT_TOL: f64 = 1e-10;

/// Geometric median of self + received via Weiszfeld iteration started at
/// the coordinate-wise mean. Stops after `max_iters` or when the iterate
/// moves less than `tol`.
pub fn geometric_median(view: &NeighborView, max_iters: usize, tol: f64) -> Result<Array1<f64>> {
    view.check_dims()?;
    assert!(max_iters >= 1, "need at least one iteration");
    let candidates = view.candidates();
    let m = candidates.len() as f64;
    let mut v: Array1<f64> = candidates
        .iter()
        .fold(Array1::zeros(view.dim()), |acc, c| acc + *c)
        / m;
    for _ in 0..max_iters {
        let mut numerator = Array1::zeros(view.dim());
        let mut denominator = 0.0;
        for c in &candidates {
            let weight = 1.0 / (norm(&(*c - &v)) + WEISZFELD_SMOOTHING);
            numerator.scaled_add(weight, c);
            denominator += weight;
        }
        let next = numerator / denominator;
        let moved = norm(&(&next - &v));
        v = next;
        if moved < tol {
            break;
        }
    }
    Ok(v)
}

/// Two-stage screening: keep the ⌈keep_ratio·|N_i|⌉ nearest neighbors,
/// then keep those whose loss does not exceed the node's own; if that
/// empties the set, fall back to the single loss-argmin among the kept
/// neighbors. Ties (distance or loss) break by ascending node id.
pub fn mozi_select(
    view: &NeighborView,
    keep_ratio: f64,
    mut loss_eval: impl FnMut(&Array1<f64>) -> f64,
) -> BTreeSet<usize> {
    assert!(
        keep_ratio > 0.0 && keep_ratio <= 1.0,
        "keep_ratio must lie in (0, 1]"
    );
    if view.received.is_empty() {
        return BTreeSet::new();
    }
    let keep = ((keep_ratio * view.received.len() as f64).ceil() as usize).max(1);
    let mut order: Vec<(f64, usize)> = view
        .received
        .iter()
        .map(|(j, x_j)| (norm(&(x_j - &view.self_value)), *j))
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let mut kept: Vec<usize> = order.into_iter().take(keep).map(|(_, j)| j).collect();
    kept.sort_unstable();

    let self_loss = loss_eval(&view.self_value);
    let losses: Vec<(usize, f64)> = kept
        .iter()
        .map(|&j| (j, loss_eval(&view.received[&j])))
        .collect();
    let screened: BTreeSet<usize> = losses
        .iter()
        .filter(|(_, l)| *l <= self_loss)
        .map(|(j, _)| *j)
        .collect();
    if !screened.is_empty() {
        return screened;
    }
    let (best, _) = losses
        .into_iter()
        .min_by(|(ja, la), (jb, lb)| la.partial_cmp(lb).expect("finite loss").then(ja.cmp(jb)))
        .expect("kept set is non-empty");
    BTreeSet::from([best])
}

// ---------------------------------------------------------------------------
