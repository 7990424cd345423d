//! Numerical ground truth for validating abstractions.
//!
//! Flows are exact matrix exponentials for linear fields and fixed-step RK4
//! for polynomial fields. On top of them: Monte-Carlo soundness checks
//! (simulated states must land in concretized reach sets at every query
//! time), exact-time completeness checks (level-set to level-set crossings
//! under `ψ = αψ̇`), refinement experiments (reach volumes against a
//! simulated floor), and a time-discretized explicit-state reachability
//! oracle for cross-checking the zone engine on small automata.
//!
//! Every randomized check takes an explicit seed and reports it; reports are
//! deterministic for a fixed seed.

use crate::automaton::{AbstractionMap, Cmp, TimedAutomaton};
use crate::bounds::{compute_bounds, Mode, DEFAULT_SAMPLE_PADDING};
use crate::error::{Error, Result};
use crate::partition::{build_partition, Partition, Refinement, RegionId, SliceFamily};
use crate::rat::{denominator_lcm, Rat};
use crate::reach::{reach, InitMode};
use crate::system::{completeness_ratio, Box, Orientation, QuadraticLyapunov, VectorField};
use nalgebra::{DMatrix, DVector};
use num::ToPrimitive;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Abort integration when the state norm passes this.
const DIVERGENCE_LIMIT: f64 = 1e9;

fn rk4_step(field: &VectorField, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let k1 = field.eval(x)?;
    let k2 = field.eval(&(x + &k1 * (h / 2.0)))?;
    let k3 = field.eval(&(x + &k2 * (h / 2.0)))?;
    let k4 = field.eval(&(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Fixed-step RK4 over `[0, t]` (final partial step shortened).
pub fn rk4_flow(field: &VectorField, x0: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>> {
    if t < 0.0 || dt <= 0.0 {
        return Err(Error::Spec("rk4_flow: need t >= 0 and dt > 0".into()));
    }
    let mut x = x0.clone();
    let mut elapsed = 0.0;
    while elapsed < t {
        let h = dt.min(t - elapsed);
        x = rk4_step(field, &x, h)?;
        elapsed += h;
        if x.norm() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                limit: DIVERGENCE_LIMIT,
                t: elapsed,
            });
        }
    }
    Ok(x)
}

/// Flow of the system: exact `e^{At}x₀` for linear fields, RK4 otherwise.
pub fn flow(field: &VectorField, x0: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>> {
    if t < 0.0 {
        return Err(Error::Spec("flow: need t >= 0".into()));
    }
    match field.linear_part() {
        Some(a) => {
            let x = (a * t).exp() * x0;
            if x.norm() > DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    limit: DIVERGENCE_LIMIT,
                    t,
                });
            }
            Ok(x)
        }
        None => rk4_flow(field, x0, t, dt),
    }
}

/// Sampled trajectory with region labels per sample.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// `None` where the state left the domain box while inside all levels.
    pub regions: Vec<Option<RegionId>>,
    /// Sample indices where consecutive regions are not grid-adjacent
    /// (dt too coarse: the trajectory skipped over a cell).
    pub skipped_cell_events: Vec<usize>,
}

/// Sample the flow at uniform steps and label each state.
pub fn simulate(
    field: &VectorField,
    partition: &Partition,
    x0: &DVector<f64>,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    let steps = (horizon / dt).ceil() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut regions = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    for s in 0..=steps {
        let t = (s as f64 * dt).min(horizon);
        if s > 0 {
            let h = t - times[s - 1];
            x = match field.linear_part() {
                Some(a) => {
                    let m: DMatrix<f64> = a * h;
                    m.exp() * &x
                }
                None => rk4_step(field, &x, h)?,
            };
            if x.norm() > DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    limit: DIVERGENCE_LIMIT,
                    t,
                });
            }
        }
        times.push(t);
        states.push(x.clone());
        regions.push(partition.classify(&x)?);
    }
    let mut skipped = Vec::new();
    for i in 1..regions.len() {
        if let (Some(a), Some(b)) = (&regions[i - 1], &regions[i]) {
            if a != b {
                let (Some(ai), Some(bi)) =
                    (partition.region_index_of(a), partition.region_index_of(b))
                else {
                    continue;
                };
                if !partition.adjacent(ai, bi) {
                    skipped.push(i);
                }
            }
        }
    }
    Ok(Trajectory {
        times,
        states,
        regions,
        skipped_cell_events: skipped,
    })
}

/// Time for the flow from `x0` to first cross `ψ = target`, found by dense
/// stepping plus bisection on the exact flow. Errors if no crossing happens
/// within `t_max`.
pub fn simulated_transit(
    field: &VectorField,
    lyap: &QuadraticLyapunov,
    x0: &DVector<f64>,
    target: f64,
    t_max: f64,
    dt: f64,
) -> Result<f64> {
    let psi0 = lyap.eval_psi(x0)?;
    let start_sign = (psi0 - target).signum();
    let value = |t: f64| -> Result<f64> {
        let x = flow(field, x0, t, dt)?;
        Ok(lyap.eval_psi(&x)? - target)
    };
    let coarse = dt.max(t_max / 4096.0);
    let mut t_prev = 0.0;
    let mut t = coarse;
    while t <= t_max + 1e-12 {
        if value(t)?.signum() != start_sign {
            // Bisection refine on [t_prev, t].
            let (mut lo, mut hi) = (t_prev, t);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if value(mid)?.signum() == start_sign {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        t_prev = t;
        t += coarse;
    }
    Err(Error::Spec(format!(
        "no crossing of level {target} within t_max = {t_max}"
    )))
}

/// One soundness violation: a simulated state in a region the abstraction
/// says is unreachable at that time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub sample: usize,
    pub time: f64,
    pub state: Vec<f64>,
    pub region: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoundnessReport {
    pub seed: u64,
    pub samples: usize,
    pub checks: usize,
    pub violations: usize,
    /// Samples that left the domain box while inside all level ranges;
    /// counted separately as a modeling gap, not a soundness violation.
    pub modeling_gaps: usize,
    pub witnesses: Vec<Violation>,
    pub query_times: Vec<f64>,
}

impl SoundnessReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Uniform samples from the union mask of the given regions, by rejection
/// from the mask's bounding box.
fn sample_mask_points(
    partition: &Partition,
    regions: &BTreeSet<RegionId>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DVector<f64>>> {
    let grid = partition.grid();
    let dim = grid.dim();
    let step = grid.step();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for id in regions {
        let idx = partition
            .region_index_of(id)
            .ok_or_else(|| Error::UnknownLocation(id.to_string()))?;
        for &flat in &partition.region(idx).mask {
            let p = grid.point(flat);
            for d in 0..dim {
                lo[d] = lo[d].min(p[d] - step / 2.0);
                hi[d] = hi[d].max(p[d] + step / 2.0);
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > n * 10_000 {
            return Err(Error::Spec("rejection sampling starved".into()));
        }
        let x = DVector::from_iterator(dim, (0..dim).map(|d| rng.random_range(lo[d]..hi[d])));
        match partition.locate(&x) {
            Ok(region) if regions.contains(&region) => out.push(x),
            _ => {}
        }
    }
    Ok(out)
}

/// Earliest possible arrival time per location (sum of guard lower bounds
/// along the cheapest path from the initial set). Used to place query times
/// at the instants where the abstract reach set changes.
fn guard_opening_times(ta: &TimedAutomaton, l0: &BTreeSet<usize>) -> Vec<f64> {
    let mut best: BTreeMap<usize, f64> = l0.iter().map(|&l| (l, 0.0)).collect();
    let mut queue: VecDeque<usize> = l0.iter().copied().collect();
    while let Some(l) = queue.pop_front() {
        let here = best[&l];
        for tr in ta.outgoing(l) {
            let open: f64 = tr
                .guard
                .atoms
                .iter()
                .filter(|a| matches!(a.cmp, Cmp::Ge | Cmp::Gt) && a.minus.is_none())
                .map(|a| a.constant.to_f64())
                .fold(0.0, f64::max);
            let cand = here + open;
            if best.get(&tr.target).is_none_or(|&b| cand < b) {
                best.insert(tr.target, cand);
                queue.push_back(tr.target);
            }
        }
    }
    best.into_values().collect()
}

/// Monte-Carlo soundness check: draw `n` uniform starts in the union of the
/// initial cells, and for stratified query times `t` in `[0, horizon]`
/// assert that the simulated state's region is among the locations the
/// abstraction can occupy at time `t`.
///
/// Reach sets are computed with [`InitMode::PhaseUnknown`]: the time a
/// trajectory has already spent inside its initial cell is unknown, so the
/// sound abstract semantics lets the initial clocks start anywhere the
/// invariant allows.
#[allow(clippy::too_many_arguments)]
pub fn mc_soundness_check(
    field: &VectorField,
    partition: &Partition,
    ta: &TimedAutomaton,
    map: &AbstractionMap,
    x0_regions: &BTreeSet<RegionId>,
    horizon: f64,
    n: usize,
    dt: f64,
    times_per_traj: usize,
    seed: u64,
) -> Result<SoundnessReport> {
    // X0 must match the automaton's initial locations.
    let l0: BTreeSet<usize> = x0_regions
        .iter()
        .map(|id| {
            map.location_of(id)
                .ok_or_else(|| Error::UnknownLocation(id.to_string()))
        })
        .collect::<Result<_>>()?;
    if l0 != ta.initial {
        return Err(Error::Spec(
            "initial regions do not match the automaton's initial locations".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = if n == 0 {
        Vec::new()
    } else {
        sample_mask_points(partition, x0_regions, n, &mut rng)?
    };

    // Stratified query grid plus guard-opening instants ± eps.
    let mut times: Vec<f64> = (0..times_per_traj)
        .map(|j| horizon * (j + 1) as f64 / times_per_traj as f64)
        .collect();
    const EPS: f64 = 1e-3;
    for t in guard_opening_times(ta, &l0) {
        for probe in [t - EPS, t + EPS] {
            if probe > 0.0 && probe <= horizon {
                times.push(probe);
            }
        }
    }
    times.sort_by(f64::total_cmp);
    times.dedup();

    // Allowed region set per query time.
    let mut allowed: Vec<BTreeSet<RegionId>> = Vec::with_capacity(times.len());
    for &t in &times {
        let tr = Rat::from_f64(t).unwrap();
        let res = reach(ta, &l0, &tr, &tr, InitMode::PhaseUnknown)?;
        allowed.push(
            res.locations
                .iter()
                .filter_map(|&l| map.region_of(l).cloned())
                .collect(),
        );
    }

    let mut checks = 0usize;
    let mut violations = 0usize;
    let mut gaps = 0usize;
    let mut witnesses = Vec::new();

    match field.linear_part() {
        Some(a) => {
            for (ti, &t) in times.iter().enumerate() {
                let m = (a * t).exp();
                for (si, x0) in samples.iter().enumerate() {
                    let x = &m * x0;
                    record_check(
                        partition, &x, &allowed[ti], si, t, &mut checks, &mut violations,
                        &mut gaps, &mut witnesses,
                    )?;
                }
            }
        }
        None => {
            for (si, x0) in samples.iter().enumerate() {
                let mut x = x0.clone();
                let mut t_prev = 0.0;
                for (ti, &t) in times.iter().enumerate() {
                    x = rk4_flow(field, &x, t - t_prev, dt)?;
                    t_prev = t;
                    record_check(
                        partition, &x, &allowed[ti], si, t, &mut checks, &mut violations,
                        &mut gaps, &mut witnesses,
                    )?;
                }
            }
        }
    }

    witnesses.sort_by(|a, b| a.sample.cmp(&b.sample).then(a.time.total_cmp(&b.time)));
    witnesses.truncate(32);
    Ok(SoundnessReport {
        seed,
        samples: samples.len(),
        checks,
        violations,
        modeling_gaps: gaps,
        witnesses,
        query_times: times,
    })
}

#[allow(clippy::too_many_arguments)]
fn record_check(
    partition: &Partition,
    x: &DVector<f64>,
    allowed: &BTreeSet<RegionId>,
    sample: usize,
    time: f64,
    checks: &mut usize,
    violations: &mut usize,
    gaps: &mut usize,
    witnesses: &mut Vec<Violation>,
) -> Result<()> {
    *checks += 1;
    match partition.classify(x)? {
        None => *gaps += 1,
        Some(region) => {
            if !allowed.contains(&region) {
                *violations += 1;
                witnesses.push(Violation {
                    sample,
                    time,
                    state: x.iter().copied().collect(),
                    region: region.to_string(),
                });
            }
        }
    }
    Ok(())
}

/// Mutation helper: halve the invariant upper bound of one location (and
/// nothing else). The result deliberately breaks the soundness bracket so
/// validation checks can prove they would catch it.
pub fn halve_one_t_upper(ta: &TimedAutomaton, location: usize) -> TimedAutomaton {
    let mut out = ta.clone();
    if let Some(atom) = out.locations[location]
        .invariant
        .atoms
        .iter_mut()
        .find(|a| matches!(a.cmp, Cmp::Le | Cmp::Lt))
    {
        atom.constant = atom.constant.mul(&Rat::new(1, 2));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub alpha: f64,
    pub samples_per_level: usize,
    pub max_relative_deviation: f64,
    pub levels_checked: usize,
    pub seed: u64,
}

impl CompletenessReport {
    pub fn passed(&self) -> bool {
        self.max_relative_deviation < 1e-6
    }
}

/// Exact-time completeness: sample points on each entering level set, flow
/// them for the exact transit time, and measure how far from the target
/// level they land. Requires `ψ = αψ̇` (refuses to run otherwise).
pub fn completeness_check(
    field: &VectorField,
    lyap: &QuadraticLyapunov,
    levels: &[f64],
    orientation: Orientation,
    m: usize,
    seed: u64,
) -> Result<CompletenessReport> {
    let alpha = completeness_ratio(lyap, field).ok_or(Error::NotCompleteForm {
        family: lyap.id(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let support = lyap.support();
    let dim = lyap.dim();
    let mut max_dev = 0.0f64;
    let mut levels_checked = 0usize;
    for w in levels.windows(2) {
        let (a_from, a_to) = match orientation {
            Orientation::Decreasing => (w[1], w[0]),
            Orientation::Increasing => (w[0], w[1]),
        };
        let t = crate::bounds::exact_transit_time(alpha, a_from, a_to)?;
        for _ in 0..m {
            // Random point on the entering level set, inside the support
            // subspace.
            let x = loop {
                let mut d = DVector::zeros(dim);
                for &c in support {
                    d[c] = rng.random_range(-1.0..1.0);
                }
                let q = (d.transpose() * lyap.matrix() * &d)[(0, 0)];
                if q > 1e-9 {
                    break d * (a_from / q).sqrt();
                }
            };
            let end = flow(field, &x, t, 1e-4)?;
            let psi_end = lyap.eval_psi(&end)?;
            max_dev = max_dev.max((psi_end - a_to).abs() / a_to);
        }
        levels_checked += 1;
    }
    Ok(CompletenessReport {
        alpha,
        samples_per_level: m,
        max_relative_deviation: max_dev,
        levels_checked,
        seed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementRow {
    pub depth: usize,
    pub levels_per_family: Vec<usize>,
    pub locations_reached: usize,
    pub volume: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementReport {
    pub rows: Vec<RefinementRow>,
    /// Simulation-estimated volume of the true reach set; every abstract
    /// volume must stay at or above it.
    pub mc_floor: f64,
    pub seed: u64,
}

impl RefinementReport {
    pub fn non_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].volume <= w[0].volume + 1e-12)
    }

    pub fn above_floor(&self) -> bool {
        self.rows.iter().all(|r| r.volume >= self.mc_floor - 1e-12)
    }
}

/// Rebuild the pipeline at increasing refinement depths and record the
/// concretized reach volume over `[0, horizon]`, next to a Monte-Carlo
/// estimate of the true reach volume.
#[allow(clippy::too_many_arguments)]
pub fn refinement_experiment(
    field: &VectorField,
    base_families: &[SliceFamily],
    domain: &Box,
    grid_step: f64,
    x0_box: &Box,
    horizon: f64,
    depths: &[usize],
    mode: Mode,
    n_mc: usize,
    dt: f64,
    seed: u64,
) -> Result<RefinementReport> {
    if base_families.len() != domain.dim() {
        return Err(Error::Spec(
            "refinement requires as many slice families as dimensions".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut mc_floor = 0.0;
    for (i, &depth) in depths.iter().enumerate() {
        let mut families = base_families.to_vec();
        for _ in 0..depth {
            families = families
                .iter()
                .map(|f| f.refine(&Refinement::BisectAll))
                .collect::<Result<Vec<_>>>()?;
        }
        let partition = build_partition(families, domain.clone(), grid_step)?;
        let bounds = compute_bounds(&partition, field, mode, DEFAULT_SAMPLE_PADDING)?;
        let cell = crate::automaton::build_cell_automaton(&partition, &bounds, None)?;
        let l0 = crate::automaton::initial_locations(&partition, &cell.map, x0_box)?;
        let mut ta = cell.ta;
        ta.set_initial(l0.iter().copied());
        let res = reach(
            &ta,
            &l0,
            &Rat::zero(),
            &Rat::from_f64(horizon).unwrap(),
            InitMode::PhaseUnknown,
        )?;
        let conc = crate::reach::concretize(&res, &partition, &cell.map, partition.fingerprint())?;
        rows.push(RefinementRow {
            depth,
            levels_per_family: partition
                .families()
                .iter()
                .map(|f| f.levels().len())
                .collect(),
            locations_reached: res.locations.len(),
            volume: conc.volume,
        });

        // Estimate the true reach volume once, on the base partition's grid.
        if i == 0 {
            let x0_regions: BTreeSet<RegionId> = l0
                .iter()
                .filter_map(|&l| cell.map.region_of(l).cloned())
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let starts = if n_mc == 0 || horizon == 0.0 {
                Vec::new()
            } else {
                sample_mask_points(&partition, &x0_regions, n_mc, &mut rng)?
            };
            let grid = partition.grid();
            let mut visited: BTreeSet<usize> = BTreeSet::new();
            // Include the initial masks: reach over [0, horizon] contains X0.
            for id in &x0_regions {
                if let Some(idx) = partition.region_index_of(id) {
                    visited.extend(partition.region(idx).mask.iter().copied());
                }
            }
            let time_samples = 200usize;
            for x0 in &starts {
                for j in 0..=time_samples {
                    let t = horizon * j as f64 / time_samples as f64;
                    let x = flow(field, x0, t, dt)?;
                    if partition.domain().contains(&x) {
                        visited.insert(grid.nearest(&x));
                    }
                }
            }
            mc_floor = visited.len() as f64 * partition.node_volume();
        }
    }
    Ok(RefinementReport {
        rows,
        mc_floor,
        seed,
    })
}

/// Explicit-state reachability on the time-discretized automaton: clocks and
/// total time advance in steps of `1/(2d)` where `d` is the least common
/// denominator of all constants. Exact for closed (non-strict) constraints.
///
/// This is the independent oracle for the zone engine; it shares no zone
/// code. Constants and window endpoints must be non-strict rationals with
/// denominators dividing `d ≤ 4096`.
pub fn discretized_reach(
    ta: &TimedAutomaton,
    l0: &BTreeSet<usize>,
    t1: &Rat,
    t2: &Rat,
) -> Result<BTreeSet<usize>> {
    if t1.is_negative() || t1 > t2 {
        return Err(Error::InvalidWindow);
    }
    for l in &ta.locations {
        for a in &l.invariant.atoms {
            if matches!(a.cmp, Cmp::Lt | Cmp::Gt) {
                return Err(Error::Spec("discretized oracle needs closed constraints".into()));
            }
        }
    }
    for t in &ta.transitions {
        for a in &t.guard.atoms {
            if matches!(a.cmp, Cmp::Lt | Cmp::Gt) {
                return Err(Error::Spec("discretized oracle needs closed constraints".into()));
            }
        }
    }
    let constants = ta.constants();
    let d = denominator_lcm(constants.iter().copied().chain([t1, t2]));
    let d: u64 = d
        .to_u64()
        .filter(|&d| d <= 4096)
        .ok_or_else(|| Error::Spec("constants too fine for the discretized oracle".into()))?;
    // Work in units of 1/(2d).
    let units = |r: &Rat| -> i64 {
        let scaled = r.mul(&Rat::from_int(2 * d as i64));
        debug_assert!(scaled.is_integer());
        scaled.numer().to_i64().expect("constant fits i64")
    };
    let t1u = units(t1);
    let t2u = units(t2);
    let max_const = ta
        .constants()
        .iter()
        .map(|c| units(c))
        .max()
        .unwrap_or(0)
        .max(0);
    let cap = max_const + 2 * d as i64; // beyond every constant

    let k = ta.clocks.len();
    let satisfies = |cc: &crate::automaton::ClockConstraint, clocks: &[i64]| -> bool {
        cc.atoms.iter().all(|a| {
            let lhs = match a.minus {
                None => clocks[a.clock],
                Some(m) => clocks[a.clock] - clocks[m],
            };
            let rhs = units(&a.constant);
            match a.cmp {
                Cmp::Le => lhs <= rhs,
                Cmp::Lt => lhs < rhs,
                Cmp::Ge => lhs >= rhs,
                Cmp::Gt => lhs > rhs,
                Cmp::Eq => lhs == rhs,
            }
        })
    };

    type State = (usize, Vec<i64>, i64);
    let mut visited: BTreeSet<State> = BTreeSet::new();
    let mut queue: VecDeque<State> = VecDeque::new();
    let mut reached = BTreeSet::new();
    for &start in l0 {
        let s = (start, vec![0i64; k], 0i64);
        if satisfies(&ta.locations[start].invariant, &s.1) {
            visited.insert(s.clone());
            queue.push_back(s);
        }
    }
    while let Some((loc, clocks, elapsed)) = queue.pop_front() {
        if elapsed >= t1u && elapsed <= t2u {
            reached.insert(loc);
        }
        // Time step.
        if elapsed < t2u {
            let bumped: Vec<i64> = clocks.iter().map(|&c| (c + 1).min(cap)).collect();
            if satisfies(&ta.locations[loc].invariant, &bumped) {
                let s = (loc, bumped, elapsed + 1);
                if visited.insert(s.clone()) {
                    queue.push_back(s);
                }
            }
        }
        // Discrete steps.
        for tr in ta.outgoing(loc) {
            if !satisfies(&tr.guard, &clocks) {
                continue;
            }
            let mut reset = clocks.clone();
            for &c in &tr.resets {
                reset[c] = 0;
            }
            if satisfies(&ta.locations[tr.target].invariant, &reset) {
                let s = (tr.target, reset, elapsed);
                if visited.insert(s.clone()) {
                    queue.push_back(s);
                }
            }
        }
    }
    Ok(reached)
}

/// Relative error of RK4 against the exact linear flow, maximized over a
/// time grid. Used by accuracy tests.
pub fn rk4_vs_exact_max_error(
    a: &DMatrix<f64>,
    x0: &DVector<f64>,
    horizon: f64,
    dt: f64,
    probes: usize,
) -> Result<f64> {
    let field = VectorField::linear(a.clone())?;
    let mut worst = 0.0f64;
    for j in 1..=probes {
        let t = horizon * j as f64 / probes as f64;
        let exact = (a * t).exp() * x0;
        let approx = rk4_flow(&field, x0, t, dt)?;
        let err = (&approx - &exact).norm() / exact.norm().max(1e-300);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::{build_cell_automaton, initial_locations};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn field_1d(a: f64) -> VectorField {
        VectorField::linear(DMatrix::from_row_slice(1, 1, &[a])).unwrap()
    }

    #[test]
    fn flow_examples() {
        let x0 = DVector::from_vec(vec![2.0]);
        let x = flow(&field_1d(-1.0), &x0, 2f64.ln(), 1e-3).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-9);
        let x = flow(&field_1d(-1.0), &x0, 0.0, 1e-3).unwrap();
        assert_eq!(x[0], 2.0);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0]));
        let f = VectorField::linear(a).unwrap();
        let t = 0.5 * 2f64.ln();
        let x = flow(&f, &DVector::from_vec(vec![1.0, 1.0]), t, 1e-3).unwrap();
        assert_relative_eq!(x[0], 1.0 / 2f64.sqrt(), max_relative = 1e-9);
        assert_relative_eq!(x[1], 2.0, max_relative = 1e-9);
    }

    #[test]
    fn divergence_guard_trips() {
        let err = flow(&field_1d(5.0), &DVector::from_vec(vec![1.0]), 10.0, 1e-2);
        assert!(matches!(err, Err(Error::Divergence { .. })));
    }

    #[test]
    fn rk4_matches_exact_linear_flow() {
        let mut rng = crate::test_rng();
        for n in 1..=4usize {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0f64..1.0));
            // Scale so eigenvalues stay moderate.
            let scale = 2.5 / a.norm().max(1.0);
            let a = a * scale;
            let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let err = rk4_vs_exact_max_error(&a, &x0, 1.0, 1e-3, 7).unwrap();
            assert!(err < 1e-8, "n = {n}: err = {err:.3e}");
        }
    }

    #[test]
    fn psidot_matches_flow_derivative() {
        // d/dt psi(phi(t,x)) at t=0 by central differences on the RK4 flow.
        let mut rng = crate::test_rng();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let field = VectorField::linear(a.clone()).unwrap();
        let lyap = crate::system::solve_lyapunov_equation(&a, &(-DMatrix::identity(2, 2))).unwrap();
        for _ in 0..100 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let h = 1e-5;
            let fwd = rk4_flow(&field, &x, h, h / 10.0).unwrap();
            // Central difference needs the backward flow; integrate -f.
            let neg = VectorField::linear(-a.clone()).unwrap();
            let bwd = rk4_flow(&neg, &x, h, h / 10.0).unwrap();
            let dpsi = (lyap.eval_psi(&fwd).unwrap() - lyap.eval_psi(&bwd).unwrap()) / (2.0 * h);
            let direct = lyap.eval_psi_dot(&field, &x).unwrap();
            if direct.abs() > 1e-6 {
                assert_relative_eq!(dpsi, direct, max_relative = 1e-6);
            }
        }
    }

    fn pipeline_1d() -> (
        VectorField,
        Partition,
        crate::automaton::CellAutomaton,
        BTreeSet<usize>,
        BTreeSet<RegionId>,
    ) {
        let field = field_1d(-1.0);
        let lyap = QuadraticLyapunov::new(0, DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let fam = SliceFamily::new(0, lyap, vec![1.0, 2.0, 4.0], Orientation::Decreasing).unwrap();
        let p = build_partition(vec![fam], Box::new(vec![-2.5], vec![2.5]).unwrap(), 0.01).unwrap();
        let b = compute_bounds(&p, &field, Mode::Sound, 0.1).unwrap();
        let mut cell = build_cell_automaton(&p, &b, None).unwrap();
        let l0 = initial_locations(&p, &cell.map, &Box::new(vec![1.415], vec![1.995]).unwrap())
            .unwrap();
        cell.ta.set_initial(l0.iter().copied());
        let x0: BTreeSet<RegionId> = l0
            .iter()
            .filter_map(|&l| cell.map.region_of(l).cloned())
            .collect();
        (field, p, cell, l0, x0)
    }

    #[test]
    fn soundness_clean_run_has_no_violations() {
        let (field, p, cell, _l0, x0) = pipeline_1d();
        let report = mc_soundness_check(
            &field, &p, &cell.ta, &cell.map, &x0, 1.0, 200, 1e-3, 20, 42,
        )
        .unwrap();
        assert_eq!(report.violations, 0, "witnesses: {:?}", report.witnesses);
        assert!(report.checks > 0);
    }

    #[test]
    fn soundness_zero_samples_trivially_passes() {
        let (field, p, cell, _l0, x0) = pipeline_1d();
        let report =
            mc_soundness_check(&field, &p, &cell.ta, &cell.map, &x0, 1.0, 0, 1e-3, 5, 42).unwrap();
        assert_eq!(report.checks, 0);
        assert!(report.passed());
    }

    #[test]
    fn soundness_detects_halved_t_upper() {
        let (field, p, cell, l0, x0) = pipeline_1d();
        let mutated = halve_one_t_upper(&cell.ta, *l0.iter().next().unwrap());
        let report = mc_soundness_check(
            &field, &p, &mutated, &cell.map, &x0, 1.0, 200, 1e-3, 20, 42,
        )
        .unwrap();
        assert!(report.violations > 0);
        assert!(!report.witnesses.is_empty());
    }

    #[test]
    fn completeness_check_1d() {
        let field = field_1d(-1.0);
        let lyap = QuadraticLyapunov::new(0, DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let report = completeness_check(
            &field,
            &lyap,
            &[1.0, 2.0, 4.0],
            Orientation::Decreasing,
            50,
            7,
        )
        .unwrap();
        assert!(report.passed(), "max dev {}", report.max_relative_deviation);
        assert_relative_eq!(report.alpha, -0.5);
    }

    #[test]
    fn completeness_check_unstable_subspace() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0]));
        let field = VectorField::linear(a).unwrap();
        let lyap = QuadraticLyapunov::embedded(
            1,
            DMatrix::from_row_slice(1, 1, &[1.0]),
            vec![1],
            2,
        )
        .unwrap();
        let report =
            completeness_check(&field, &lyap, &[1.0, 2.0], Orientation::Increasing, 50, 7)
                .unwrap();
        assert!(report.passed());
        assert_relative_eq!(report.alpha, 0.25);
    }

    #[test]
    fn completeness_check_refuses_nonproportional() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let field = VectorField::linear(a.clone()).unwrap();
        let lyap = crate::system::solve_lyapunov_equation(&a, &(-DMatrix::identity(2, 2))).unwrap();
        assert!(matches!(
            completeness_check(&field, &lyap, &[1.0, 2.0], Orientation::Decreasing, 10, 7),
            Err(Error::NotCompleteForm { .. })
        ));
    }

    #[test]
    fn simulated_transit_brackets() {
        let field = field_1d(-1.0);
        let lyap = QuadraticLyapunov::new(0, DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let x0 = DVector::from_vec(vec![2.0]);
        let t = simulated_transit(&field, &lyap, &x0, 2.0, 2.0, 1e-3).unwrap();
        assert!((t - 0.5 * 2f64.ln()).abs() < 1e-9);
        assert!(t > 0.25 && t < 0.5);
    }

    #[test]
    fn rk4_one_step_residual_is_small() {
        // One full step against two half steps: the Richardson residual of a
        // fourth-order method at dt = 1e-3 sits far below 1e-10.
        let field = VectorField::polynomial(
            1,
            vec![vec![crate::system::Monomial {
                coeff: -1.0,
                exps: vec![3],
            }]],
        )
        .unwrap();
        let mut x = DVector::from_vec(vec![1.9]);
        for _ in 0..200 {
            let full = rk4_flow(&field, &x, 1e-3, 1e-3).unwrap();
            let halves = rk4_flow(&field, &x, 1e-3, 5e-4).unwrap();
            assert!((&full - &halves).norm() < 1e-10);
            x = full;
        }
    }

    #[test]
    fn trajectory_labels_change_between_adjacent_regions() {
        let (field, p, _cell, _l0, _x0) = pipeline_1d();
        let traj = simulate(&field, &p, &DVector::from_vec(vec![1.9]), 1.5, 1e-3).unwrap();
        assert!(traj.skipped_cell_events.is_empty());
        assert_eq!(
            traj.regions.first().unwrap().as_ref().unwrap(),
            &RegionId::Cell { ext: vec![2], comp: 1 }
        );
        assert_eq!(traj.regions.last().unwrap().as_ref().unwrap(), &RegionId::Core);
    }

    #[test]
    fn discretized_oracle_agrees_on_1d_chain() {
        let (_field, _p, cell, l0, _x0) = pipeline_1d();
        for (t1, t2) in [(0, 0), (0, 2), (0, 4), (2, 5), (0, 8), (3, 3)] {
            let t1 = Rat::new(t1, 8);
            let t2 = Rat::new(t2, 8);
            let zone = reach(&cell.ta, &l0, &t1, &t2, InitMode::ZeroClocks)
                .unwrap()
                .locations;
            let brute = discretized_reach(&cell.ta, &l0, &t1, &t2).unwrap();
            assert_eq!(zone, brute, "window [{t1}, {t2}]");
        }
    }

    #[test]
    fn refinement_shrinks_volumes() {
        let field = field_1d(-1.0);
        let lyap = QuadraticLyapunov::new(0, DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let fam = SliceFamily::new(0, lyap, vec![1.0, 2.0, 4.0], Orientation::Decreasing).unwrap();
        let report = refinement_experiment(
            &field,
            &[fam],
            &Box::new(vec![-2.5], vec![2.5]).unwrap(),
            0.01,
            &Box::new(vec![1.415], vec![1.995]).unwrap(),
            0.27,
            &[0, 1, 2],
            Mode::Sound,
            200,
            1e-3,
            11,
        )
        .unwrap();
        assert!(report.non_increasing(), "{:?}", report.rows);
        assert!(report.above_floor(), "floor {} rows {:?}", report.mc_floor, report.rows);
        assert!(report.rows[0].volume > report.rows[1].volume);
    }

    #[test]
    fn refinement_depth_beyond_grid_resolution_errors() {
        let field = field_1d(-1.0);
        let lyap = QuadraticLyapunov::new(0, DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let fam = SliceFamily::new(0, lyap, vec![1.0, 2.0, 4.0], Orientation::Decreasing).unwrap();
        let err = refinement_experiment(
            &field,
            &[fam],
            &Box::new(vec![-2.5], vec![2.5]).unwrap(),
            0.01,
            &Box::new(vec![1.415], vec![1.995]).unwrap(),
            0.2,
            &[7],
            Mode::Sound,
            10,
            1e-3,
            11,
        );
        assert!(matches!(err, Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn refinement_zero_horizon_keeps_initial_volume() {
        let field = field_1d(-1.0);
        let lyap = QuadraticLyapunov::new(0, DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let fam = SliceFamily::new(0, lyap, vec![1.0, 2.0, 4.0], Orientation::Decreasing).unwrap();
        let report = refinement_experiment(
            &field,
            &[fam],
            &Box::new(vec![-2.5], vec![2.5]).unwrap(),
            0.01,
            &Box::new(vec![1.415], vec![1.995]).unwrap(),
            0.0,
            &[0, 1],
            Mode::Sound,
            50,
            1e-3,
            11,
        )
        .unwrap();
        // |X0| at every depth: the right cell of the outer slice, volume ~0.58.
        for row in &report.rows {
            assert!((row.volume - 0.58).abs() < 0.03, "{row:?}");
        }
    }
}
