//! The two simulation loops: pure consensus rounds and momentum-SGD
//! training rounds, with per-round metrics collection.
//!
//! Both loops are synchronous and deterministic.  Each round takes a
//! snapshot of every broadcast value, lets the attack forge the Byzantine
//! messages from that snapshot, and only then applies the configured
//! aggregator at every regular node — so message order can never influence
//! the result.  All randomness comes from seeded streams keyed by purpose,
//! node, and round, making runs reproducible and independent of evaluation
//! order.
//!
//! The training loop runs the momentum algorithm line for line: worker `i`
//! updates `m_i ← (1−α)·m_i + α·g_i(x_i)`, takes the half-step
//! `x_i − η·m_i`, exchanges half-steps, and aggregates.  The screening
//! aggregator (Mozi) instead uses its fused update on raw states.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{self, ClipRule, NeighborView};
use crate::attack::{forge_messages, Attack, AttackSpec, OmniscientState, RoundMessages};
pub use crate::config::MetricsRecord;
use crate::config::{
    build_consensus_init, AggregatorSpec, ExperimentConfig, RunMode, TrimRule,
    MOZI_ALPHA_ADVERSARIAL, MOZI_ALPHA_BENIGN,
};
use crate::error::{Error, Result};
use crate::graph::{build_topology, effective_mixing, EffectiveMixing, MixingMatrix, Topology};
use crate::objective::{self, WorkerObjective};
use crate::seeding::{self, stream};

/// One worker's model vector and momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerState {
    pub x: Array1<f64>,
    pub m: Array1<f64>,
}

/// Aggregator with every parameter made concrete.
#[derive(Clone, Debug)]
enum Aggregator {
    Gossip,
    Clipped(ClipRule),
    Trimmed(TrimRule),
    CoordinateMedian,
    GeometricMedian { iters: usize, tol: f64 },
    Mozi { keep_ratio: f64, alpha: f64 },
}

/// Everything a run needs, resolved and validated once up front.
struct RunContext {
    topology: Topology,
    weights: MixingMatrix,
    effective: EffectiveMixing,
    regular_ids: BTreeSet<usize>,
    attack: Attack,
    aggregator: Aggregator,
    bucket_size: Option<usize>,
    rounds: usize,
    seed: u64,
}

fn resolve(cfg: &ExperimentConfig) -> Result<RunContext> {
    let topology = build_topology(&cfg.topology, cfg.seed)?;
    let weights = cfg.mixing.build(&topology)?;
    let effective = effective_mixing(&weights, &topology);
    let regular_ids: BTreeSet<usize> = topology.regular_nodes().collect();
    let mode = cfg.mode();
    let attack = cfg.attack.resolve(mode)?;

    let aggregator = match &cfg.aggregator {
        AggregatorSpec::Gossip => Aggregator::Gossip,
        AggregatorSpec::ClippedGossip { tau_rule } => {
            if let ClipRule::Fixed { tau } = tau_rule {
                if tau.is_nan() || *tau < 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "fixed clipping radius must be >= 0, got {tau}"
                    )));
                }
            }
            Aggregator::Clipped(*tau_rule)
        }
        AggregatorSpec::TrimmedMean { trim } => {
            if let TrimRule::Fraction { beta } = trim {
                if !(0.0..0.5).contains(beta) {
                    return Err(Error::InvalidSpec(format!(
                        "trim fraction {beta} must lie in [0, 0.5)"
                    )));
                }
            }
            Aggregator::Trimmed(trim.clone())
        }
        AggregatorSpec::CoordinateMedian => Aggregator::CoordinateMedian,
        AggregatorSpec::GeometricMedian { iters, tol } => {
            if *iters == 0 {
                return Err(Error::InvalidSpec(
                    "geometric median needs at least one iteration".into(),
                ));
            }
            Aggregator::GeometricMedian {
                iters: *iters,
                tol: *tol,
            }
        }
        AggregatorSpec::Mozi { keep_ratio, alpha } => {
            if mode != RunMode::Training {
                return Err(Error::InvalidSpec(
                    "the mozi aggregator screens by loss and therefore requires an \
                     objective (training mode)"
                        .into(),
                ));
            }
            if !(*keep_ratio > 0.0 && *keep_ratio <= 1.0) {
                return Err(Error::InvalidSpec(format!(
                    "keep_ratio must lie in (0, 1], got {keep_ratio}"
                )));
            }
            let alpha = alpha.unwrap_or(if cfg.attack == AttackSpec::None {
                MOZI_ALPHA_BENIGN
            } else {
                MOZI_ALPHA_ADVERSARIAL
            });
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::InvalidSpec(format!(
                    "mozi alpha must lie in (0, 1], got {alpha}"
                )));
            }
            Aggregator::Mozi {
                keep_ratio: *keep_ratio,
                alpha,
            }
        }
    };

    if cfg.bucketing == Some(0) {
        return Err(Error::InvalidSpec("bucket size must be >= 1".into()));
    }

    Ok(RunContext {
        topology,
        weights,
        effective,
        regular_ids,
        attack,
        aggregator,
        bucket_size: cfg.bucketing,
        rounds: cfg.rounds,
        seed: cfg.seed,
    })
}

// ---------------------------------------------------------------------------
// Shared round machinery
// ---------------------------------------------------------------------------

/// Collects what regular node `node` sees this round: its own broadcast
/// value, every neighbor's message, and the matching mixing weights.  A
/// Byzantine neighbor that sent nothing (an attack that skips untargeted
/// nodes) contributes the receiver's own value, i.e. zero displacement.
fn build_view(
    ctx: &RunContext,
    node: usize,
    broadcast: &BTreeMap<usize, Array1<f64>>,
    forged: &RoundMessages,
) -> NeighborView {
    let self_value = broadcast[&node].clone();
    let mut received = BTreeMap::new();
    for &j in ctx.topology.neighbors(node) {
        let value = if ctx.topology.is_byzantine(j) {
            forged
                .get(j, node)
                .cloned()
                .unwrap_or_else(|| self_value.clone())
        } else {
            broadcast[&j].clone()
        };
        received.insert(j, value);
    }
    let weights = ctx.weights.neighbor_weights(&ctx.topology, node);
    NeighborView::new(
        node,
        self_value,
        received,
        weights,
        ctx.weights.weight(node, node),
    )
}

/// Pre-aggregation bucketing: shuffles the received values with a seeded
/// generator, partitions them into groups of at most `s`, and replaces each
/// group by its plain mean carrying the group's total weight.  The self
/// value stays unbucketed.  `s = 1` is the identity.
pub fn apply_bucketing(view: NeighborView, s: usize, rng: &mut ChaCha8Rng) -> NeighborView {
    assert!(s >= 1, "bucket size must be >= 1");
    if s == 1 || view.received.is_empty() {
        return view;
    }
    let mut items: Vec<(Array1<f64>, f64)> = view
        .received
        .iter()
        .map(|(j, v)| (v.clone(), view.weights[j]))
        .collect();
    items.shuffle(rng);
    let mut received = BTreeMap::new();
    let mut weights = BTreeMap::new();
    for (bucket_id, group) in items.chunks(s).enumerate() {
        let mut value = Array1::zeros(view.dim());
        let mut weight = 0.0;
        for (v, w) in group {
            value += v;
            weight += w;
        }
        value /= group.len() as f64;
        received.insert(bucket_id, value);
        weights.insert(bucket_id, weight);
    }
    NeighborView::new(
        view.self_id,
        view.self_value,
        received,
        weights,
        view.self_weight,
    )
}

fn maybe_bucket(ctx: &RunContext, node: usize, round: usize, view: NeighborView) -> NeighborView {
    match ctx.bucket_size {
        Some(s) => {
            let mut rng =
                seeding::stream_rng(ctx.seed, &[stream::BUCKETING, node as u64, round as u64]);
            apply_bucketing(view, s, &mut rng)
        }
        None => view,
    }
}

/// Applies the configured non-Mozi aggregator at one node.  Returns the new
/// state and the clipping radius applied, if one was.
fn apply_aggregator(
    ctx: &RunContext,
    node: usize,
    round: usize,
    view: NeighborView,
) -> Result<(Array1<f64>, Option<f64>)> {
    // The oracle radius reads ground-truth regular distances, so it is
    // computed from the raw view before any bucketing obscures senders.
    let oracle_tau = if matches!(ctx.aggregator, Aggregator::Clipped(ClipRule::Oracle)) {
        match aggregate::oracle_tau(&view, &ctx.regular_ids, ctx.effective.delta_of(node)) {
            Ok(tau) => Some(tau),
            // No Byzantine edge weight: nothing to defend against, no clipping.
            Err(Error::ZeroDelta { .. }) => Some(f64::INFINITY),
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let view = maybe_bucket(ctx, node, round, view);
    match &ctx.aggregator {
        Aggregator::Gossip => Ok((aggregate::gossip_step(&view)?, None)),
        Aggregator::Clipped(rule) => {
            let tau = match rule {
                ClipRule::Fixed { tau } => *tau,
                ClipRule::Infinite => f64::INFINITY,
                ClipRule::Oracle => oracle_tau.expect("computed above"),
                ClipRule::Adaptive => aggregate::adaptive_tau(&view, ctx.effective.delta_max()),
            };
            let x = aggregate::clipped_gossip_step(&view, tau)?;
            Ok((x, tau.is_finite().then_some(tau)))
        }
        Aggregator::Trimmed(rule) => {
            let x = match rule {
                TrimRule::Fraction { beta } => aggregate::trimmed_mean(&view, *beta)?,
                TrimRule::ByzCount => {
                    let b = ctx.topology.byzantine_neighbors(node).count();
                    aggregate::trimmed_mean_count(&view, b)?
                }
            };
            Ok((x, None))
        }
        Aggregator::CoordinateMedian => Ok((aggregate::coordinate_median(&view)?, None)),
        Aggregator::GeometricMedian { iters, tol } => {
            Ok((aggregate::geometric_median(&view, *iters, *tol)?, None))
        }
        Aggregator::Mozi { .. } => unreachable!("mozi runs through its own round path"),
    }
}

/// Regular states after one aggregation round, plus the mean applied
/// clipping radius (over nodes that clipped at a finite radius).
type AggregatedStates = (BTreeMap<usize, Array1<f64>>, Option<f64>);

/// One aggregation round over all regular nodes from a completed broadcast
/// snapshot.
fn aggregate_regulars(
    ctx: &RunContext,
    round: usize,
    broadcast: &BTreeMap<usize, Array1<f64>>,
    forged: &RoundMessages,
) -> Result<AggregatedStates> {
    let mut next = BTreeMap::new();
    let mut tau_sum = 0.0;
    let mut tau_count = 0usize;
    for &node in &ctx.regular_ids {
        let view = build_view(ctx, node, broadcast, forged);
        let (x, tau) = apply_aggregator(ctx, node, round, view)?;
        if let Some(t) = tau {
            tau_sum += t;
            tau_count += 1;
        }
        next.insert(node, x);
    }
    let mean_tau = (tau_count > 0).then(|| tau_sum / tau_count as f64);
    Ok((next, mean_tau))
}

fn regular_average(xs: &BTreeMap<usize, Array1<f64>>) -> Array1<f64> {
    let mut sum = Array1::zeros(xs.values().next().expect("non-empty").len());
    for x in xs.values() {
        sum += x;
    }
    sum / xs.len() as f64
}

fn mean_sq_dist(xs: &BTreeMap<usize, Array1<f64>>, center: &Array1<f64>) -> f64 {
    xs.values()
        .map(|x| (x - center).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / xs.len() as f64
}

/// Errors out with the partial metrics if any regular vector went non-finite.
fn check_finite(
    round: usize,
    vectors: impl Iterator<Item = (usize, bool)>,
    records: &[MetricsRecord],
) -> Result<()> {
    for (node, finite) in vectors {
        if !finite {
            return Err(Error::NonFiniteState {
                round,
                node,
                partial: records.to_vec(),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Consensus loop
// ---------------------------------------------------------------------------

/// Iterated consensus rounds from explicit initial regular values.
///
/// Produces `rounds + 1` records; `mse_to_true_avg` is measured against the
/// round-0 regular average throughout.
pub fn run_consensus(
    cfg: &ExperimentConfig,
    init: &BTreeMap<usize, Array1<f64>>,
) -> Result<Vec<MetricsRecord>> {
    if cfg.objective.is_some() {
        return Err(Error::InvalidSpec(
            "consensus runs must not define an objective (that would be training mode)".into(),
        ));
    }
    let ctx = resolve(cfg)?;
    if !init.keys().copied().eq(ctx.regular_ids.iter().copied()) {
        return Err(Error::InvalidSpec(
            "initial values must cover exactly the regular nodes".into(),
        ));
    }
    let dim = init.values().next().expect("non-empty").len();
    for (node, x) in init {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "initial value for node {node} is not finite"
            )));
        }
    }

    let mut xs = init.clone();
    let true_avg = regular_average(&xs);
    let empty_momenta = BTreeMap::new();
    let record = |round: usize, xs: &BTreeMap<usize, Array1<f64>>, mean_tau: Option<f64>| {
        let avg = regular_average(xs);
        MetricsRecord {
            round,
            grad_norm_sq: None,
            consensus_dist: mean_sq_dist(xs, &avg),
            mse_to_true_avg: Some(mean_sq_dist(xs, &true_avg)),
            suboptimality: None,
            mean_tau,
        }
    };
    let mut records = vec![record(0, &xs, None)];
    for t in 0..ctx.rounds {
        let state = OmniscientState {
            round: t,
            half_step: &xs,
            weights: &ctx.weights,
            topology: &ctx.topology,
            regular_momenta: &empty_momenta,
        };
        let forged = forge_messages(&ctx.attack, &state)?;
        let (next, mean_tau) = aggregate_regulars(&ctx, t, &xs, &forged)?;
        check_finite(
            t + 1,
            next.iter()
                .map(|(&n, x)| (n, x.iter().all(|v| v.is_finite()))),
            &records,
        )?;
        xs = next;
        records.push(record(t + 1, &xs, mean_tau));
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainingRun {
    ctx: RunContext,
    objectives: BTreeMap<usize, WorkerObjective>,
    /// Flipped objectives for Byzantine nodes that "train honestly on
    /// flipped data" (label-flip attack only).
    byz_objectives: Option<BTreeMap<usize, WorkerObjective>>,
    eta: f64,
    alpha: f64,
    mozi: Option<(f64, f64)>, // (keep_ratio, alpha)
}

fn resolve_training(cfg: &ExperimentConfig) -> Result<TrainingRun> {
    let ctx = resolve(cfg)?;
    let spec = cfg
        .objective
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("training runs require an objective".into()))?;
    let eta = cfg
        .eta
        .ok_or_else(|| Error::InvalidSpec("training runs require a step size eta".into()))?;
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::InvalidSpec(format!(
            "eta must be finite and >= 0, got {eta}"
        )));
    }
    let objectives = objective::build_objectives(spec, &ctx.regular_ids, cfg.seed)?;
    let smoothness = objective::smoothness_constant(&objectives);
    let alpha = cfg.alpha.unwrap_or((3.0 * eta * smoothness).min(1.0));
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidSpec(format!(
            "momentum alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let byz_objectives = if matches!(ctx.attack, Attack::LabelFlip) {
        let byz_ids: BTreeSet<usize> = ctx.topology.byzantine_nodes().collect();
        let r = ctx.regular_ids.len();
        let built = objective::build_objectives_positioned(spec, &byz_ids, cfg.seed, r, r)?;
        Some(built.into_iter().map(|(id, o)| (id, o.flipped())).collect())
    } else {
        None
    };
    let mozi = match ctx.aggregator {
        Aggregator::Mozi { keep_ratio, alpha } => Some((keep_ratio, alpha)),
        _ => None,
    };
    Ok(TrainingRun {
        ctx,
        objectives,
        byz_objectives,
        eta,
        alpha,
        mozi,
    })
}

/// Momentum-SGD training with Byzantine-robust aggregation, run line for
/// line: momentum update, half-step, exchange, aggregate.  Produces
/// `rounds + 1` records with the exact global gradient measured at the
/// regular average each round.
pub fn run_training(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let run = resolve_training(cfg)?;
    let ctx = &run.ctx;
    let dim = cfg
        .objective
        .as_ref()
        .expect("checked in resolve_training")
        .dimension();
    let x0 = match &cfg.x0 {
        Some(v) => {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidSpec("x0 must be finite".into()));
            }
            Array1::from(v.clone())
        }
        None => Array1::zeros(dim),
    };
    let optimum = objective::global_optimum(&run.objectives);

    let init_state = |id: usize, obj: &WorkerObjective| -> WorkerState {
        let mut rng = seeding::stream_rng(ctx.seed, &[stream::INIT_MOMENTUM, id as u64]);
        WorkerState {
            x: x0.clone(),
            m: obj.stochastic_gradient(&x0, &mut rng),
        }
    };
    let mut states: BTreeMap<usize, WorkerState> = run
        .objectives
        .iter()
        .map(|(&id, obj)| (id, init_state(id, obj)))
        .collect();
    let mut byz_states: BTreeMap<usize, WorkerState> = run
        .byz_objectives
        .iter()
        .flat_map(|objs| objs.iter())
        .map(|(&id, obj)| (id, init_state(id, obj)))
        .collect();

    let record = |round: usize, states: &BTreeMap<usize, WorkerState>, mean_tau: Option<f64>| {
        let xs: BTreeMap<usize, Array1<f64>> =
            states.iter().map(|(&i, s)| (i, s.x.clone())).collect();
        let avg = regular_average(&xs);
        let grad = objective::global_gradient(&run.objectives, &avg);
        MetricsRecord {
            round,
            grad_norm_sq: Some(grad.iter().map(|v| v * v).sum()),
            consensus_dist: mean_sq_dist(&xs, &avg),
            mse_to_true_avg: None,
            suboptimality: optimum
                .as_ref()
                .map(|(_, f_star)| objective::global_value(&run.objectives, &avg) - f_star),
            mean_tau,
        }
    };

    let mut records = vec![record(0, &states, None)];
    for t in 0..ctx.rounds {
        let mean_tau = if run.mozi.is_some() {
            mozi_round(&run, t, &mut states, &mut byz_states)?
        } else {
            momentum_round(&run, t, &mut states, &mut byz_states)?
        };
        check_finite(
            t + 1,
            states.iter().map(|(&n, s)| {
                (
                    n,
                    s.x.iter().all(|v| v.is_finite()) && s.m.iter().all(|v| v.is_finite()),
                )
            }),
            &records,
        )?;
        records.push(record(t + 1, &states, mean_tau));
    }
    Ok(records)
}

/// Advances momentum and returns the half-step `x − η·m`.
fn half_step(state: &mut WorkerState, g: &Array1<f64>, alpha: f64, eta: f64) -> Array1<f64> {
    state.m = &state.m * (1.0 - alpha) + g * alpha;
    &state.x - &(&state.m * eta)
}

fn momentum_round(
    run: &TrainingRun,
    t: usize,
    states: &mut BTreeMap<usize, WorkerState>,
    byz_states: &mut BTreeMap<usize, WorkerState>,
) -> Result<Option<f64>> {
    let ctx = &run.ctx;
    let mut half: BTreeMap<usize, Array1<f64>> = BTreeMap::new();
    for (&i, state) in states.iter_mut() {
        let mut rng = seeding::stream_rng(ctx.seed, &[stream::GRADIENT, i as u64, t as u64]);
        let g = run.objectives[&i].stochastic_gradient(&state.x, &mut rng);
        half.insert(i, half_step(state, &g, run.alpha, run.eta));
    }
    if let Some(byz_objs) = &run.byz_objectives {
        for (&b, state) in byz_states.iter_mut() {
            let mut rng = seeding::stream_rng(ctx.seed, &[stream::GRADIENT, b as u64, t as u64]);
            let g = byz_objs[&b].stochastic_gradient(&state.x, &mut rng);
            half.insert(b, half_step(state, &g, run.alpha, run.eta));
        }
    }

    let momenta: BTreeMap<usize, Array1<f64>> =
        states.iter().map(|(&i, s)| (i, s.m.clone())).collect();
    let omniscient = OmniscientState {
        round: t,
        half_step: &half,
        weights: &ctx.weights,
        topology: &ctx.topology,
        regular_momenta: &momenta,
    };
    let forged = forge_messages(&ctx.attack, &omniscient)?;

    let (next, mean_tau) = aggregate_regulars(ctx, t, &half, &forged)?;
    for (i, x) in next {
        states.get_mut(&i).expect("regular node").x = x;
    }

    // Label-flip Byzantine nodes finish their honest round with plain
    // gossip over the half-steps of their (all regular) neighborhood.
    for (&b, state) in byz_states.iter_mut() {
        let mut x = half[&b].clone();
        for &j in ctx.topology.neighbors(b) {
            let w = ctx.weights.weight(b, j);
            x += &((&half[&j] - &half[&b]) * w);
        }
        state.x = x;
    }
    Ok(mean_tau)
}

fn mozi_round(
    run: &TrainingRun,
    t: usize,
    states: &mut BTreeMap<usize, WorkerState>,
    byz_states: &mut BTreeMap<usize, WorkerState>,
) -> Result<Option<f64>> {
    let ctx = &run.ctx;
    let (keep_ratio, mix_alpha) = run.mozi.expect("mozi round requires mozi parameters");
    // Screening exchanges raw states, not half-steps.
    let mut broadcast: BTreeMap<usize, Array1<f64>> =
        states.iter().map(|(&i, s)| (i, s.x.clone())).collect();
    for (&b, s) in byz_states.iter() {
        broadcast.insert(b, s.x.clone());
    }
    let momenta: BTreeMap<usize, Array1<f64>> =
        states.iter().map(|(&i, s)| (i, s.m.clone())).collect();
    let omniscient = OmniscientState {
        round: t,
        half_step: &broadcast,
        weights: &ctx.weights,
        topology: &ctx.topology,
        regular_momenta: &momenta,
    };
    let forged = forge_messages(&ctx.attack, &omniscient)?;

    let mut next: BTreeMap<usize, Array1<f64>> = BTreeMap::new();
    for &i in &ctx.regular_ids {
        let obj = &run.objectives[&i];
        let mut rng = seeding::stream_rng(ctx.seed, &[stream::GRADIENT, i as u64, t as u64]);
        // One sample per worker per round, shared by the loss screen and
        // the gradient step.
        let sample = obj.draw_noise(&mut rng);
        let view = build_view(ctx, i, &broadcast, &forged);
        let view = maybe_bucket(ctx, i, t, view);
        let selected = aggregate::mozi_select(&view, keep_ratio, |v| obj.sampled_value(v, &sample));
        let mix = if selected.is_empty() {
            view.self_value.clone()
        } else {
            let mut sum = Array1::zeros(view.dim());
            for j in &selected {
                sum += &view.received[j];
            }
            sum / selected.len() as f64
        };
        let g = obj.sampled_gradient(&view.self_value, &sample);
        next.insert(
            i,
            &(&view.self_value * mix_alpha) + &(&mix * (1.0 - mix_alpha)) - &(&g * run.eta),
        );
    }
    for (i, x) in next {
        states.get_mut(&i).expect("regular node").x = x;
    }

    // Label-flip Byzantine nodes run the fused update unscreened.
    if let Some(byz_objs) = &run.byz_objectives {
        for (&b, state) in byz_states.iter_mut() {
            let mut rng = seeding::stream_rng(ctx.seed, &[stream::GRADIENT, b as u64, t as u64]);
            let sample = byz_objs[&b].draw_noise(&mut rng);
            let neighbors: Vec<&Array1<f64>> = ctx
                .topology
                .neighbors(b)
                .iter()
                .map(|j| &broadcast[j])
                .collect();
            let mix = if neighbors.is_empty() {
                state.x.clone()
            } else {
                let mut sum = Array1::zeros(state.x.len());
                for v in &neighbors {
                    sum += *v;
                }
                sum / neighbors.len() as f64
            };
            let g = byz_objs[&b].sampled_gradient(&state.x, &sample);
            state.x = &(&state.x * mix_alpha) + &(&mix * (1.0 - mix_alpha)) - &(&g * run.eta);
        }
    }
    Ok(None)
}

/// Runs the experiment a config describes: training when an objective is
/// present, otherwise consensus from `consensus_init`.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    match cfg.mode() {
        RunMode::Training => run_training(cfg),
        RunMode::Consensus => {
            let topology = build_topology(&cfg.topology, cfg.seed)?;
            let init_spec = cfg.consensus_init.as_ref().ok_or_else(|| {
                Error::InvalidSpec(
                    "consensus mode requires consensus_init (add an objective for training)".into(),
                )
            })?;
            let init = build_consensus_init(init_spec, &topology, cfg.seed)?;
            run_consensus(cfg, &init)
        }
    }
}
