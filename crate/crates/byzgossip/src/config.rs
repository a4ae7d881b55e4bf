//! Run configuration documents and output formats.
//!
//! Everything that crosses the process boundary lives here: the
//! `ExperimentConfig` JSON document, the per-round metrics CSV, and the
//! float formatting shared by both (17 significant digits, enough to
//! round-trip any f64 exactly).

use std::collections::BTreeMap;

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{ClipRule, GEOMETRIC_MEDIAN_DEFAULT_ITERS, GEOMETRIC_MEDIAN_DEFAULT_TOL};
use crate::attack::AttackSpec;
use crate::error::{Error, Result};
use crate::graph::{self, MixingMatrix, Topology, TopologySpec};
use crate::objective::ObjectiveSpec;
use crate::seeding::{self, stream};

/// Whether a run exchanges raw states (consensus) or momentum-SGD
/// half-steps driven by local objectives (training).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Consensus,
    Training,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunMode::Consensus => write!(f, "consensus"),
            RunMode::Training => write!(f, "training"),
        }
    }
}

/// One output row per round. `None` fields render as empty CSV cells:
/// gradient metrics exist only in training mode, the consensus MSE only in
/// consensus mode, suboptimality only when the optimum is known in closed
/// form, and mean_tau only when clipping was applied this round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: usize,
    /// Squared norm of the exact global gradient at the regular average.
    pub grad_norm_sq: Option<f64>,
    /// Mean squared distance of regular nodes from their average.
    pub consensus_dist: f64,
    /// Mean squared distance from the round-0 regular average.
    pub mse_to_true_avg: Option<f64>,
    /// f(mean regular state) minus the known optimal value.
    pub suboptimality: Option<f64>,
    /// Mean clipping radius applied by regular nodes this round.
    pub mean_tau: Option<f64>,
}

pub const CSV_HEADER: &str =
    "run_id,round,grad_norm_sq,consensus_dist,mse_to_true_avg,suboptimality,mean_tau";

/// Formats a float with 17 significant digits. Values that cannot appear
/// in a finite metric (NaN, infinities) are rendered literally; callers
/// decide whether they are legal.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        // `+ 0.0` canonicalizes -0.0 so zeros always print identically.
        format!("{:.16e}", x + 0.0)
    } else {
        format!("{x}")
    }
}

fn format_optional(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

/// Renders `records` as a complete CSV document with the fixed header.
pub fn metrics_csv(run_id: &str, records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&metrics_csv_row(run_id, r));
        out.push('\n');
    }
    out
}

pub fn metrics_csv_row(run_id: &str, r: &MetricsRecord) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        run_id,
        r.round,
        format_optional(r.grad_norm_sq),
        format_float(r.consensus_dist),
        format_optional(r.mse_to_true_avg),
        format_optional(r.suboptimality),
        format_optional(r.mean_tau),
    )
}

/// The row appended after the last completed round when a run aborts on a
/// non-finite state: all metric columns read `nan` at the failing round.
pub fn error_csv_row(run_id: &str, round: usize) -> String {
    format!("{run_id},{round},nan,nan,nan,nan,nan")
}

// ---------------------------------------------------------------------------
// Mixing, aggregator, and initialization specs
// ---------------------------------------------------------------------------

/// How mixing weights are constructed from the topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum MixingSpec {
    /// `W_ij = 1 / (max(d_i, d_j) + 1)`.  With `byz_report_degree_one`,
    /// Byzantine nodes lie that their degree is 1 to grab more weight.
    MetropolisHastings {
        #[serde(default)]
        byz_report_degree_one: bool,
    },
    /// `W_ij = 1 / (d_max + 1)` on every edge; errors if any degree
    /// exceeds `d_max`.
    Equal { d_max: usize },
    /// Explicit per-edge weights as `[a, b, weight]` triples covering every
    /// edge exactly once.
    Custom {
        edge_weights: Vec<(usize, usize, f64)>,
    },
    /// Solved weights for the 6-node consensus fixture hitting
    /// `p = 1 − (1−γ)²` with Byzantine edge weight `delta`.
    ConsensusFixture { p: f64, delta: f64 },
}

impl MixingSpec {
    /// Builds the mixing matrix for `topo`.
    pub fn build(&self, topo: &Topology) -> Result<MixingMatrix> {
        match self {
            MixingSpec::MetropolisHastings {
                byz_report_degree_one,
            } => Ok(graph::metropolis_hastings_weights_reported(
                topo,
                *byz_report_degree_one,
            )),
            MixingSpec::Equal { d_max } => graph::equal_weights(topo, *d_max),
            MixingSpec::Custom { edge_weights } => {
                let mut map = BTreeMap::new();
                for &(a, b, w) in edge_weights {
                    let key = (a.min(b), a.max(b));
                    if map.insert(key, w).is_some() {
                        return Err(Error::InvalidSpec(format!(
                            "edge ({a}, {b}) has more than one weight"
                        )));
                    }
                }
                graph::custom_weights(topo, &map)
            }
            MixingSpec::ConsensusFixture { p, delta } => {
                crate::fixtures::consensus_fixture_weights(topo, *p, *delta)
            }
        }
    }
}

/// How the trim count of the trimmed mean is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrimRule {
    /// Drop `⌊beta · m⌋` values at each end, `m` = candidate count.
    Fraction { beta: f64 },
    /// Drop as many values at each end as the node has Byzantine
    /// neighbors (ground-truth-informed baseline).
    ByzCount,
}

/// Default fraction of nearest neighbors Mozi keeps for loss screening.
pub const MOZI_DEFAULT_KEEP_RATIO: f64 = 0.99;
/// Mozi self-mixing weight defaults: lean on neighbors when nobody
/// attacks, trust only the screened gradient direction under attack.
pub const MOZI_ALPHA_BENIGN: f64 = 0.5;
pub const MOZI_ALPHA_ADVERSARIAL: f64 = 1.0;

fn default_gm_iters() -> usize {
    GEOMETRIC_MEDIAN_DEFAULT_ITERS
}

fn default_gm_tol() -> f64 {
    GEOMETRIC_MEDIAN_DEFAULT_TOL
}

fn default_keep_ratio() -> f64 {
    MOZI_DEFAULT_KEEP_RATIO
}

/// Which aggregation rule regular nodes apply each round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum AggregatorSpec {
    /// Plain weighted gossip averaging.
    Gossip,
    /// Gossip with per-neighbor displacement clipping.
    ClippedGossip { tau_rule: ClipRule },
    /// Coordinate-wise trimmed mean over self + received values.
    TrimmedMean { trim: TrimRule },
    /// Coordinate-wise median over self + received values.
    CoordinateMedian,
    /// Geometric median of self + received values (Weiszfeld).
    GeometricMedian {
        #[serde(default = "default_gm_iters")]
        iters: usize,
        #[serde(default = "default_gm_tol")]
        tol: f64,
    },
    /// Distance screening + loss screening + fused uniform update;
    /// requires an objective (training mode).
    Mozi {
        #[serde(default = "default_keep_ratio")]
        keep_ratio: f64,
        /// Self-mixing weight; defaults to 0.5 without an attack and 1.0
        /// under one.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
    },
}

/// JSON object keys are strings; this codec maps them to node ids.
mod node_keyed_vectors {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<usize, Vec<f64>>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        map.iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect::<BTreeMap<String, Vec<f64>>>()
            .serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<BTreeMap<usize, Vec<f64>>, D::Error> {
        BTreeMap::<String, Vec<f64>>::deserialize(deserializer)?
            .into_iter()
            .map(|(k, v)| {
                k.parse::<usize>()
                    .map(|k| (k, v))
                    .map_err(|_| D::Error::custom(format!("bad node id key `{k}`")))
            })
            .collect()
    }
}

/// Initial regular values for a consensus run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ConsensusInit {
    /// Explicit value per regular node, keyed by node id.
    Values {
        #[serde(with = "node_keyed_vectors")]
        values: BTreeMap<usize, Vec<f64>>,
    },
    /// Independent `N(0, scale² I_d)` per regular node from seeded streams.
    Gaussian { d: usize, scale: f64 },
}

/// Materializes the initial state map for the regular nodes.
pub fn build_consensus_init(
    init: &ConsensusInit,
    topo: &Topology,
    seed: u64,
) -> Result<BTreeMap<usize, Array1<f64>>> {
    match init {
        ConsensusInit::Values { values } => {
            let mut out = BTreeMap::new();
            let mut dim = None;
            for (&id, v) in values {
                if topo.is_byzantine(id) || id >= topo.n_total() {
                    return Err(Error::InvalidSpec(format!(
                        "initial value given for non-regular node {id}"
                    )));
                }
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidSpec(format!(
                        "initial value for node {id} must be non-empty and finite"
                    )));
                }
                let d = *dim.get_or_insert(v.len());
                if v.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: v.len(),
                    });
                }
                out.insert(id, Array1::from(v.clone()));
            }
            if !out.keys().copied().eq(topo.regular_nodes()) {
                return Err(Error::InvalidSpec(
                    "initial values must cover exactly the regular nodes".into(),
                ));
            }
            Ok(out)
        }
        ConsensusInit::Gaussian { d, scale } => {
            if *d == 0 {
                return Err(Error::InvalidSpec("dimension must be positive".into()));
            }
            if !scale.is_finite() || *scale < 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "init scale must be finite and >= 0, got {scale}"
                )));
            }
            Ok(topo
                .regular_nodes()
                .map(|id| {
                    let mut rng = seeding::stream_rng(seed, &[stream::CONSENSUS_INIT, id as u64]);
                    let v =
                        Array1::from_shape_fn(*d, |_| scale * rng.sample::<f64, _>(StandardNormal));
                    (id, v)
                })
                .collect())
        }
    }
}

// ---------------------------------------------------------------------------
// The experiment document
// ---------------------------------------------------------------------------

/// One experiment as a single JSON document.  The mode is inferred: a
/// config with an `objective` runs training (Algorithm-style momentum
/// SGD), one without runs pure consensus and must carry `consensus_init`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    pub mixing: MixingSpec,
    pub aggregator: AggregatorSpec,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveSpec>,
    /// Step size (training mode; required there, must be > 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Momentum parameter in (0, 1]; defaults to min(1, 3·eta·L).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Optional pre-aggregation bucket size (≥ 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucketing: Option<usize>,
    pub rounds: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_init: Option<ConsensusInit>,
    /// Common initial model for training runs (defaults to the origin).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn mode(&self) -> RunMode {
        if self.objective.is_some() {
            RunMode::Training
        } else {
            RunMode::Consensus
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Canonical single-line JSON form: deterministic field order (struct
    /// declaration order, BTreeMap key order), no insignificant whitespace.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn canonical_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }

    /// Short run identifier used in the CSV `run_id` column: the first 12
    /// hex digits of the canonical hash.
    pub fn run_id(&self) -> String {
        self.canonical_hash()[..12].to_string()
    }
}
