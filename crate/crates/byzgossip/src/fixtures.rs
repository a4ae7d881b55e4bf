//! The canonical 6-node consensus stress fixture and its edge-weight solver.
//!
//! Four regular workers form the path `0 – 1 – 2 – 3`; workers 0 and 1 hold
//! the value 0, workers 2 and 3 hold 200, so the target average is 100 and
//! the initial mean squared error is exactly 10000.  One Byzantine worker is
//! attached to each of the two middle nodes (4 ↔ 1 and 5 ↔ 2).
//!
//! Edge weights are not fixed: the solver below tunes the regular cut weight
//! so the effective mixing matrix hits a requested spectral-gap level `p`
//! while each middle node grants its Byzantine neighbor weight `delta`.
//! Sweeping `p` and `delta` on this fixture is the standard way to probe how
//! clipping degrades as `delta/γ²` grows.

use std::collections::BTreeMap;

use ndarray::{array, Array1};

use crate::error::{Error, Result};
use crate::graph::{
    custom_weights, effective_mixing, ByzAttachment, MixingMatrix, Topology, TopologyKind,
    TopologySpec,
};

/// Weight of the two outer path edges (0,1) and (2,3).  Fixing it leaves the
/// cut weight as the single knob controlling the spectral gap.
pub const FIXTURE_OUTER_WEIGHT: f64 = 1.0 / 3.0;

/// Absolute tolerance on the achieved spectral gap of a solved fixture.
pub const FIXTURE_GAP_TOLERANCE: f64 = 1e-9;

const FIXTURE_EDGES: [(usize, usize); 5] = [(0, 1), (1, 2), (2, 3), (1, 4), (2, 5)];

/// Topology spec of the fixture (4 regular path nodes, Byzantine 4 ↔ 1 and
/// 5 ↔ 2).
pub fn consensus_fixture_topology() -> TopologySpec {
    TopologySpec::new(TopologyKind::Custom {
        n: 4,
        edges: vec![(0, 1), (1, 2), (2, 3)],
    })
    .with_byzantine(ByzAttachment::List(vec![(4, vec![1]), (5, vec![2])]))
}

/// Initial regular values {0, 0, 200, 200}: average 100, MSE exactly 10000.
pub fn consensus_fixture_init() -> BTreeMap<usize, Array1<f64>> {
    [
        (0, array![0.0]),
        (1, array![0.0]),
        (2, array![200.0]),
        (3, array![200.0]),
    ]
    .into()
}

fn is_fixture_topology(topo: &Topology) -> bool {
    topo.n_total() == 6
        && topo.byzantine_nodes().eq([4, 5])
        && topo.edges().iter().copied().eq(FIXTURE_EDGES
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect::<std::collections::BTreeSet<_>>())
}

fn fixture_edge_map(cut: f64, delta: f64) -> BTreeMap<(usize, usize), f64> {
    [
        ((0, 1), FIXTURE_OUTER_WEIGHT),
        ((1, 2), cut),
        ((2, 3), FIXTURE_OUTER_WEIGHT),
        ((1, 4), delta),
        ((2, 5), delta),
    ]
    .into()
}

/// Second-largest (signed) eigenvalue of the effective mixing matrix for a
/// given cut weight.  The Byzantine weight cancels out of the effective
/// matrix, so it does not appear here.
fn second_eigenvalue(topo: &Topology, cut: f64) -> Result<f64> {
    let w = custom_weights(topo, &fixture_edge_map(cut, 0.0))?;
    let eff = effective_mixing(&w, topo);
    let mut eigs = crate::graph::symmetric_eigenvalues(eff.matrix());
    eigs.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    Ok(eigs[1])
}

/// Solves for fixture edge weights achieving `p = 1 − (1−γ)²` with Byzantine
/// edge weight `delta`, or reports the combination as infeasible.
///
/// The cut weight is found by bisection: raising it only lowers every
/// eigenvalue of the effective matrix (its derivative is the negative
/// semidefinite `−(e₁−e₂)(e₁−e₂)ᵀ`), so the second eigenvalue is monotone
/// and the solution unique.  A combination is infeasible when the middle
/// nodes' self-weight `1 − outer − cut − delta` would need to go negative
/// to reach the requested gap.
pub fn consensus_fixture_weights(topo: &Topology, p: f64, delta: f64) -> Result<MixingMatrix> {
    if !is_fixture_topology(topo) {
        return Err(Error::InvalidSpec(
            "consensus_fixture mixing requires the 6-node fixture topology \
             (path 0-1-2-3 with Byzantine nodes 4 on 1 and 5 on 2)"
                .into(),
        ));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidSpec(format!(
            "target p must lie in (0, 1], got {p}"
        )));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidSpec(format!(
            "delta must lie in [0, 1), got {delta}"
        )));
    }
    let gamma_target = 1.0 - (1.0 - p).sqrt();
    let lambda_target = 1.0 - gamma_target;
    let cut_max = 1.0 - FIXTURE_OUTER_WEIGHT - delta;
    if cut_max <= 0.0 {
        return Err(Error::Infeasible {
            p,
            delta,
            reason: "Byzantine weight leaves no room for a positive cut weight".into(),
        });
    }
    if second_eigenvalue(topo, cut_max)? > lambda_target {
        return Err(Error::Infeasible {
            p,
            delta,
            reason: format!(
                "even the maximum cut weight {cut_max:.6} cannot reach the target spectral gap"
            ),
        });
    }
    // λ₂ is monotone non-increasing in the cut weight, with λ₂(0) = 1.
    let (mut lo, mut hi) = (0.0_f64, cut_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if second_eigenvalue(topo, mid)? > lambda_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * cut_max {
            break;
        }
    }
    let cut = 0.5 * (lo + hi);
    let weights = custom_weights(topo, &fixture_edge_map(cut, delta))?;
    let achieved = effective_mixing(&weights, topo).gamma();
    if (achieved - gamma_target).abs() > FIXTURE_GAP_TOLERANCE {
        return Err(Error::Infeasible {
            p,
            delta,
            reason: format!("solver reached gamma {achieved:.3e} instead of {gamma_target:.3e}"),
        });
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, check_assumptions};
    use approx::assert_abs_diff_eq;

    fn fixture() -> Topology {
        build_topology(&consensus_fixture_topology(), 0).unwrap()
    }

    #[test]
    fn fixture_shape_and_init() {
        let topo = fixture();
        assert_eq!(topo.n_regular(), 4);
        assert_eq!(topo.n_byzantine(), 2);
        let init = consensus_fixture_init();
        let mean = init.values().map(|v| v[0]).sum::<f64>() / 4.0;
        assert_eq!(mean, 100.0);
        let mse = init.values().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / 4.0;
        assert_eq!(mse, 10000.0);
    }

    #[test]
    fn solver_hits_requested_gap_and_delta() {
        let topo = fixture();
        for &p in &[0.06, 0.01, 1e-3, 1e-5] {
            for &delta in &[0.05, 0.2, 0.5] {
                let weights = match consensus_fixture_weights(&topo, p, delta) {
                    Ok(w) => w,
                    Err(Error::Infeasible { .. }) => continue,
                    Err(e) => panic!("unexpected error: {e}"),
                };
                let eff = effective_mixing(&weights, &topo);
                let gamma_target = 1.0 - (1.0 - p).sqrt();
                assert_abs_diff_eq!(eff.gamma(), gamma_target, epsilon = 1e-9);
                assert_abs_diff_eq!(eff.p(), p, epsilon = 1e-8);
                assert_abs_diff_eq!(eff.delta_max(), delta, epsilon = 1e-12);
                assert_abs_diff_eq!(eff.delta_of(1), delta, epsilon = 1e-12);
                assert_eq!(eff.delta_of(0), 0.0);
                let report = check_assumptions(&weights, &topo);
                assert!(report.all_passed(), "{report:?}");
            }
        }
    }

    #[test]
    fn full_paper_grid_feasibility() {
        let topo = fixture();
        let p_grid = [
            0.06, 0.05, 0.04, 0.03, 0.02, 0.01, 0.005, 0.0014, 3.7e-4, 1e-4, 1e-5,
        ];
        let delta_grid = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5];
        let mut feasible = 0usize;
        for &p in &p_grid {
            for &delta in &delta_grid {
                match consensus_fixture_weights(&topo, p, delta) {
                    Ok(_) => feasible += 1,
                    Err(Error::Infeasible { .. }) => {}
                    Err(e) => panic!("unexpected error at (p={p}, delta={delta}): {e}"),
                }
            }
        }
        // The grid must be usable: most points solvable, and a healthy
        // spread of them for the correlation experiment.
        assert!(feasible >= 30, "only {feasible} feasible grid points");
    }

    #[test]
    fn wrong_topology_is_rejected() {
        let ring = build_topology(&TopologySpec::new(TopologyKind::Ring { n: 6 }), 0).unwrap();
        let err = consensus_fixture_weights(&ring, 0.01, 0.1).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)));
    }

    #[test]
    fn out_of_range_targets_are_rejected() {
        let topo = fixture();
        assert!(matches!(
            consensus_fixture_weights(&topo, 0.0, 0.1),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            consensus_fixture_weights(&topo, 0.5, 1.0),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn cut_weight_monotonicity_sampled() {
        // Empirical spot-check of the monotonicity the bisection relies on.
        let topo = fixture();
        let mut last = f64::INFINITY;
        for i in 0..20 {
            let cut = (1.0 - FIXTURE_OUTER_WEIGHT) * (i as f64 + 1.0) / 21.0;
            let lambda = second_eigenvalue(&topo, cut).unwrap();
            assert!(
                lambda <= last + 1e-12,
                "second eigenvalue rose from {last} to {lambda} at cut {cut}"
            );
            last = lambda;
        }
    }
}
