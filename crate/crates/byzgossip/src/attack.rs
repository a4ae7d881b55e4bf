//! Omniscient Byzantine message forging.
//!
//! The threat model gives attackers full knowledge of the network: every
//! state, every weight, the topology, and who is regular. Each round the
//! configured strategy produces one forged vector per directed Byzantine →
//! regular edge; different receivers may get different vectors. Regular →
//! regular messages are never touched.

use std::collections::BTreeMap;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::config::RunMode;
use crate::error::{Error, Result};
use crate::graph::{MixingMatrix, Topology};

// ---------------------------------------------------------------------------
// Specification and resolution
// ---------------------------------------------------------------------------

/// Serializable attack description. Optional parameters take
/// mode-dependent defaults at resolution time.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    /// Byzantine nodes echo their regular neighbors' mean: the honest
    /// control arm for delta > 0.
    #[default]
    None,
    /// Each targeted node receives the message that cancels (epsilon = 1)
    /// or reverses (epsilon > 1) its gossip displacement.
    Dissensus {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
        /// Per-target epsilon overrides, keyed by regular node id.
        #[serde(
            default,
            skip_serializing_if = "Option::is_none",
            with = "node_keyed_map"
        )]
        per_target: Option<BTreeMap<usize, f64>>,
    },
    /// The targeted node's Byzantine neighbors send the vector that makes
    /// the plain neighbor sum vanish.
    ZeroSum,
    /// "A little is enough": mean minus z standard deviations of the
    /// target's regular neighborhood, z chosen from the honest-majority
    /// quantile (or overridden).
    Alie {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        z_override: Option<f64>,
    },
    /// Inner-product manipulation, gossip form: the target's model minus
    /// epsilon times its weight-normalized regular displacement.
    Ipm { epsilon: f64 },
    /// Sign-flipped mean of the sender's regular neighbors.
    BitFlip,
    /// Byzantine nodes train honestly on label-complemented data
    /// (negated quadratic centers / complemented logistic labels); the
    /// engine maintains their states and this module routes their
    /// half-steps.
    LabelFlip,
}

/// JSON object keys are strings; this codec maps them to node ids. (The
/// tagged-enum representation buffers values, which defeats serde_json's
/// built-in integer-key handling.)
mod node_keyed_map {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        map: &Option<BTreeMap<usize, f64>>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        map.as_ref()
            .map(|m| {
                m.iter()
                    .map(|(k, v)| (k.to_string(), *v))
                    .collect::<BTreeMap<String, f64>>()
            })
            .serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<Option<BTreeMap<usize, f64>>, D::Error> {
        let raw: Option<BTreeMap<String, f64>> = Option::deserialize(deserializer)?;
        raw.map(|m| {
            m.into_iter()
                .map(|(k, v)| {
                    k.parse::<usize>()
                        .map(|k| (k, v))
                        .map_err(|_| D::Error::custom(format!("bad node id key `{k}`")))
                })
                .collect()
        })
        .transpose()
    }
}

/// Dissensus epsilon defaults: small perturbations suffice in pure
/// consensus, a stronger push is needed against training runs.
pub const DISSENSUS_EPSILON_CONSENSUS: f64 = 0.05;
pub const DISSENSUS_EPSILON_TRAINING: f64 = 1.5;

/// An attack with every parameter made concrete.
#[derive(Clone, Debug, PartialEq)]
pub enum Attack {
    None,
    Dissensus {
        epsilon: f64,
        per_target: BTreeMap<usize, f64>,
    },
    ZeroSum,
    Alie {
        z_override: Option<f64>,
    },
    Ipm {
        epsilon: f64,
    },
    BitFlip,
    LabelFlip,
}

impl AttackSpec {
    /// Fills mode-dependent defaults and rejects attacks that cannot run
    /// in `mode` (gradient-based attacks need objectives).
    pub fn resolve(&self, mode: RunMode) -> Result<Attack> {
        let check_epsilon = |e: f64| -> Result<f64> {
            if e > 0.0 && e.is_finite() {
                Ok(e)
            } else {
                Err(Error::InvalidSpec(format!("epsilon {e} must be positive")))
            }
        };
        Ok(match self {
            AttackSpec::None => Attack::None,
            AttackSpec::Dissensus {
                epsilon,
                per_target,
            } => {
                let default = match mode {
                    RunMode::Consensus => DISSENSUS_EPSILON_CONSENSUS,
                    RunMode::Training => DISSENSUS_EPSILON_TRAINING,
                };
                let per_target = per_target.clone().unwrap_or_default();
                for &e in per_target.values() {
                    check_epsilon(e)?;
                }
                Attack::Dissensus {
                    epsilon: check_epsilon(epsilon.unwrap_or(default))?,
                    per_target,
                }
            }
            AttackSpec::ZeroSum => Attack::ZeroSum,
            AttackSpec::Alie { z_override } => Attack::Alie {
                z_override: *z_override,
            },
            AttackSpec::Ipm { epsilon } => Attack::Ipm {
                epsilon: check_epsilon(*epsilon)?,
            },
            AttackSpec::BitFlip => Attack::BitFlip,
            AttackSpec::LabelFlip => {
                if mode == RunMode::Consensus {
                    return Err(Error::UnsupportedAttackForMode {
                        attack: "label_flip".into(),
                        mode: mode.to_string(),
                    });
                }
                Attack::LabelFlip
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Omniscient state and forged messages
// ---------------------------------------------------------------------------

/// Everything an omniscient adversary sees in one round. `half_step`
/// covers every regular node; for the label-flip attack the engine also
/// fills in the Byzantine nodes' own (flipped-data) half-steps.
#[derive(Clone, Copy, Debug)]
pub struct OmniscientState<'a> {
    pub round: usize,
    pub half_step: &'a BTreeMap<usize, Array1<f64>>,
    pub weights: &'a MixingMatrix,
    pub topology: &'a Topology,
    pub regular_momenta: &'a BTreeMap<usize, Array1<f64>>,
}

impl OmniscientState<'_> {
    fn value(&self, node: usize) -> &Array1<f64> {
        self.half_step
            .get(&node)
            .unwrap_or_else(|| panic!("omniscient state is missing node {node}"))
    }
}

/// Messages on Byzantine → regular directed edges, keyed (sender, receiver).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundMessages {
    map: BTreeMap<(usize, usize), Array1<f64>>,
}

impl RoundMessages {
    pub fn insert(&mut self, sender: usize, receiver: usize, message: Array1<f64>) {
        self.map.insert((sender, receiver), message);
    }

    pub fn get(&self, sender: usize, receiver: usize) -> Option<&Array1<f64>> {
        self.map.get(&(sender, receiver))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &Array1<f64>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Produces the forged message for every Byzantine → regular edge.
///
/// Target-centric attacks (dissensus, zero-sum, ALIE, IPM) compute one
/// vector per targeted regular node, delivered identically by each of its
/// Byzantine neighbors; sender-centric attacks (none, bit-flip,
/// label-flip) compute one vector per Byzantine sender.
pub fn forge_messages(attack: &Attack, state: &OmniscientState) -> Result<RoundMessages> {
    let topo = state.topology;
    let mut out = RoundMessages::default();
    match attack {
        Attack::None | Attack::BitFlip => {
            let sign = if matches!(attack, Attack::BitFlip) {
                -1.0
            } else {
                1.0
            };
            for j in topo.byzantine_nodes() {
                let message = regular_neighbor_mean(j, state).map(|m| m * sign);
                if let Some(message) = message {
                    for i in topo.regular_neighbors(j) {
                        out.insert(j, i, message.clone());
                    }
                }
            }
        }
        Attack::LabelFlip => {
            for j in topo.byzantine_nodes() {
                let message = state.half_step.get(&j).ok_or_else(|| {
                    Error::InvalidSpec(format!(
                        "label_flip requires a half-step for Byzantine node {j}"
                    ))
                })?;
                for i in topo.regular_neighbors(j) {
                    out.insert(j, i, message.clone());
                }
            }
        }
        Attack::Dissensus {
            epsilon,
            per_target,
        } => {
            for i in topo.regular_nodes() {
                if topo.byzantine_neighbors(i).next().is_none() {
                    continue;
                }
                let eps = per_target.get(&i).copied().unwrap_or(*epsilon);
                let message = dissensus_message(i, eps, state)?;
                for j in topo.byzantine_neighbors(i) {
                    out.insert(j, i, message.clone());
                }
            }
        }
        Attack::ZeroSum => {
            for i in topo.regular_nodes() {
                let b = topo.byzantine_neighbors(i).count();
                if b == 0 {
                    continue;
                }
                let mut total = Array1::zeros(state.value(i).len());
                for k in topo.regular_neighbors(i) {
                    total += state.value(k);
                }
                let message = total * (-1.0 / b as f64);
                for j in topo.byzantine_neighbors(i) {
                    out.insert(j, i, message.clone());
                }
            }
        }
        Attack::Alie { z_override } => {
            let z = match z_override {
                Some(z) => *z,
                None => alie_z(topo.n_total(), topo.n_byzantine())?,
            };
            for i in topo.regular_nodes() {
                if topo.byzantine_neighbors(i).next().is_none() {
                    continue;
                }
                let message = alie_message(i, z, state);
                for j in topo.byzantine_neighbors(i) {
                    out.insert(j, i, message.clone());
                }
            }
        }
        Attack::Ipm { epsilon } => {
            for i in topo.regular_nodes() {
                if topo.byzantine_neighbors(i).next().is_none() {
                    continue;
                }
                let message = ipm_message(i, *epsilon, state)?;
                for j in topo.byzantine_neighbors(i) {
                    out.insert(j, i, message.clone());
                }
            }
        }
    }
    Ok(out)
}

/// Mean of a node's regular neighbors' half-steps; `None` if it has none.
fn regular_neighbor_mean(node: usize, state: &OmniscientState) -> Option<Array1<f64>> {
    let mut count = 0usize;
    let mut total: Option<Array1<f64>> = None;
    for k in state.topology.regular_neighbors(node) {
        let x = state.value(k);
        total = Some(match total {
            Some(t) => t + x,
            None => x.clone(),
        });
        count += 1;
    }
    total.map(|t| t / count as f64)
}

// ---------------------------------------------------------------------------
// Individual message formulas
// ---------------------------------------------------------------------------

/// Message all Byzantine neighbors of `i` send under dissensus:
/// x_i − epsilon·(Σ_{k∈N_i∩V_R} W_ik (x_k − x_i)) / (Σ_{j∈N_i∩V_B} W_ij).
/// With epsilon = 1 the subsequent plain-gossip step at `i` returns x_i
/// exactly: the forged term cancels the regular displacement.
pub fn dissensus_message(i: usize, epsilon: f64, state: &OmniscientState) -> Result<Array1<f64>> {
    let topo = state.topology;
    let x_i = state.value(i);
    let byz_weight: f64 = topo
        .byzantine_neighbors(i)
        .map(|j| state.weights.weight(i, j))
        .sum();
    if byz_weight <= 0.0 {
        return Err(Error::NoByzantineNeighbor { node: i });
    }
    let mut displacement = Array1::zeros(x_i.len());
    for k in topo.regular_neighbors(i) {
        displacement.scaled_add(state.weights.weight(i, k), &(state.value(k) - x_i));
    }
    Ok(x_i - &(displacement * (epsilon / byz_weight)))
}

/// The honest-majority quantile for "a little is enough":
/// z = Φ⁻¹((n−b−s)/(n−b)) with s = ⌊n/2 + 1⌋ − b.
///
/// The initial estimate from the closed-form inverse CDF is polished with
/// Newton steps on Φ so the result is limited only by erf's precision.
pub fn alie_z(n: usize, b: usize) -> Result<f64> {
    if b >= n {
        return Err(Error::InvalidSpec(format!(
            "need more nodes ({n}) than Byzantine nodes ({b})"
        )));
    }
    let s = (n as f64 / 2.0 + 1.0).floor() - b as f64;
    let target = (n as f64 - b as f64 - s) / (n as f64 - b as f64);
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::DegenerateQuantile { target });
    }
    let normal = Normal::standard();
    let mut z = normal.inverse_cdf(target);
    for _ in 0..3 {
        let density = normal.pdf(z);
        if density <= f64::MIN_POSITIVE {
            break;
        }
        z -= (normal.cdf(z) - target) / density;
    }
    Ok(z)
}

/// ALIE message for target `i`: coordinate-wise mean minus z standard
/// deviations (population convention) over the target's regular
/// neighborhood including itself.
pub fn alie_message(i: usize, z: f64, state: &OmniscientState) -> Array1<f64> {
    let topo = state.topology;
    let members: Vec<&Array1<f64>> = std::iter::once(state.value(i))
        .chain(topo.regular_neighbors(i).map(|k| state.value(k)))
        .collect();
    let m = members.len() as f64;
    let d = members[0].len();
    let mut mean = Array1::zeros(d);
    for x in &members {
        mean += *x;
    }
    mean /= m;
    let mut variance = Array1::zeros(d);
    for x in &members {
        variance += &(*x - &mean).mapv(|v| v * v);
    }
    variance /= m;
    &mean - &(variance.mapv(f64::sqrt) * z)
}

/// IPM message for target `i`: its model pushed against the
/// weight-normalized displacement of its regular neighborhood,
/// x_i − epsilon·(Σ_k W_ik (x_k − x_i)) / (Σ_k W_ik).
pub fn ipm_message(i: usize, epsilon: f64, state: &OmniscientState) -> Result<Array1<f64>> {
    let topo = state.topology;
    let x_i = state.value(i);
    let regular_weight: f64 = topo
        .regular_neighbors(i)
        .map(|k| state.weights.weight(i, k))
        .sum();
    if regular_weight <= 0.0 {
        return Err(Error::NoRegularNeighbor { node: i });
    }
    let mut displacement = Array1::zeros(x_i.len());
    for k in topo.regular_neighbors(i) {
        displacement.scaled_add(state.weights.weight(i, k), &(state.value(k) - x_i));
    }
    Ok(x_i - &(displacement * (epsilon / regular_weight)))
}

/// Bit-flip message of Byzantine sender `j`: the sign-negated mean of its
/// regular neighbors' half-steps (its stand-in for an honestly computed
/// update). An empty neighborhood yields the zero vector.
pub fn bit_flip_message(j: usize, state: &OmniscientState) -> Array1<f64> {
    match regular_neighbor_mean(j, state) {
        Some(mean) => -mean,
        None => {
            let d = state
                .half_step
                .values()
                .next()
                .map(|v| v.len())
                .unwrap_or(0);
            Array1::zeros(d)
        }
    }
}

// ---------------------------------------------------------------------------
