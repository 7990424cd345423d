//! Zone-based reachability over bounded time windows.
//!
//! A zone is a difference-bound matrix over the automaton clocks plus two
//! auxiliary variables: the constant zero clock at index 0 and a never-reset
//! reference clock at the last index. The reference clock participates in
//! zones but never in guards or invariants; its value is the total elapsed
//! time, which makes window queries (`t₁ ≤ ref ≤ t₂`) direct zone
//! intersections. Entries are exact rationals, so results are reproducible
//! bit for bit.
//!
//! Exploration is a breadth-first walk of the symbolic state graph with zone
//! inclusion subsumption; states whose reference clock can no longer reach
//! the window are pruned, which bounds the search.

use crate::automaton::{Atom, ClockConstraint, Cmp, TimedAutomaton};
use crate::error::{Error, Result};
use crate::partition::{Partition, RegionId};
use crate::rat::Rat;
use crate::automaton::AbstractionMap;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

/// Upper bound on a clock difference: a rational with strictness, or +∞.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneBound {
    /// `None` is +∞.
    pub value: Option<Rat>,
    pub strict: bool,
}

impl ZoneBound {
    pub fn infinite() -> Self {
        ZoneBound {
            value: None,
            strict: true,
        }
    }

    pub fn le(v: Rat) -> Self {
        ZoneBound {
            value: Some(v),
            strict: false,
        }
    }

    pub fn lt(v: Rat) -> Self {
        ZoneBound {
            value: Some(v),
            strict: true,
        }
    }

    fn zero() -> Self {
        ZoneBound::le(Rat::zero())
    }

    /// Bound order: smaller admits fewer valuations. (v, <) beats (v, ≤).
    fn tighter_than(&self, other: &ZoneBound) -> bool {
        match (&self.value, &other.value) {
            (None, _) => false,
            (Some(_), None) => true,
            (Some(a), Some(b)) => a < b || (a == b && self.strict && !other.strict),
        }
    }

    fn add(&self, other: &ZoneBound) -> ZoneBound {
        match (&self.value, &other.value) {
            (Some(a), Some(b)) => ZoneBound {
                value: Some(a + b),
                strict: self.strict || other.strict,
            },
            _ => ZoneBound::infinite(),
        }
    }
}

impl fmt::Display for ZoneBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.value {
            None => write!(f, "inf"),
            Some(v) => write!(f, "{}{}", if self.strict { "<" } else { "<=" }, v),
        }
    }
}

/// Difference-bound matrix over `clocks + {zero, ref}`.
///
/// Variable layout: 0 is the zero clock, `1..=k` are the automaton clocks,
/// `k+1` is the reference clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    clock_count: usize,
    bounds: Vec<ZoneBound>,
    empty: bool,
}

impl Zone {
    fn dim(&self) -> usize {
        self.clock_count + 2
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.dim() + j
    }

    pub fn get(&self, i: usize, j: usize) -> &ZoneBound {
        &self.bounds[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, b: ZoneBound) {
        let at = self.idx(i, j);
        self.bounds[at] = b;
    }

    fn tighten(&mut self, i: usize, j: usize, b: ZoneBound) {
        let at = self.idx(i, j);
        if b.tighter_than(&self.bounds[at]) {
            self.bounds[at] = b;
        }
    }

    pub fn ref_index(&self) -> usize {
        self.clock_count + 1
    }

    /// DBM variable of an automaton clock.
    fn var(clock: usize) -> usize {
        clock + 1
    }

    /// All clocks and the reference clock at zero.
    pub fn all_zero(clock_count: usize) -> Zone {
        let dim = clock_count + 2;
        Zone {
            clock_count,
            bounds: vec![ZoneBound::zero(); dim * dim],
            empty: false,
        }
    }

    /// Every variable nonnegative and otherwise unconstrained.
    pub fn nonnegative(clock_count: usize) -> Zone {
        let dim = clock_count + 2;
        let mut z = Zone {
            clock_count,
            bounds: vec![ZoneBound::infinite(); dim * dim],
            empty: false,
        };
        for i in 0..dim {
            z.set(i, i, ZoneBound::zero());
            z.set(0, i, ZoneBound::zero()); // every variable >= 0
        }
        z
    }

    /// Reference clock at zero, every automaton clock unconstrained above
    /// (nonnegative, independent of the others). Used when the time already
    /// spent in the initial location is unknown.
    pub fn free_clocks(clock_count: usize) -> Zone {
        let mut z = Zone::nonnegative(clock_count);
        let r = z.ref_index();
        z.set(r, 0, ZoneBound::zero()); // ref <= 0
        z.canonicalize();
        z
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    /// All-pairs shortest-path closure (Floyd–Warshall over the bound
    /// semiring); detects emptiness as a negative self-loop.
    pub fn canonicalize(&mut self) {
        if self.empty {
            return;
        }
        let n = self.dim();
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = self.get(i, k).add(self.get(k, j));
                    self.tighten(i, j, via);
                }
            }
        }
        for i in 0..n {
            if self.get(i, i).tighter_than(&ZoneBound::zero()) {
                self.empty = true;
                return;
            }
        }
    }

    /// Intersect one constraint atom (clock indices are automaton clocks).
    fn and_atom(&mut self, atom: &Atom) {
        let i = Zone::var(atom.clock);
        let j = atom.minus.map(Zone::var).unwrap_or(0);
        let k = atom.constant.clone();
        match atom.cmp {
            Cmp::Le => self.tighten(i, j, ZoneBound::le(k)),
            Cmp::Lt => self.tighten(i, j, ZoneBound::lt(k)),
            Cmp::Ge => self.tighten(j, i, ZoneBound::le(-&k)),
            Cmp::Gt => self.tighten(j, i, ZoneBound::lt(-&k)),
            Cmp::Eq => {
                self.tighten(i, j, ZoneBound::le(k.clone()));
                self.tighten(j, i, ZoneBound::le(-&k));
            }
        }
    }

    pub fn intersect(&self, cc: &ClockConstraint) -> Zone {
        let mut z = self.clone();
        for atom in &cc.atoms {
            z.and_atom(atom);
        }
        z.canonicalize();
        z
    }

    /// Delay: drop upper bounds of all variables against zero (clocks and the
    /// reference clock advance together; differences persist).
    fn up(&mut self) {
        for i in 1..self.dim() {
            self.set(i, 0, ZoneBound::infinite());
        }
    }

    fn reset(&mut self, clock: usize) {
        let c = Zone::var(clock);
        for j in 0..self.dim() {
            if j != c {
                self.set(c, j, self.get(0, j).clone());
                self.set(j, c, self.get(j, 0).clone());
            }
        }
        self.set(c, c, ZoneBound::zero());
    }

    /// Tighten one difference bound directly (variable indices: 0 is the
    /// zero clock, `1..=k` the automaton clocks, `k+1` the reference clock).
    /// Call [`Zone::canonicalize`] afterwards.
    pub fn constrain(&mut self, i: usize, j: usize, bound: ZoneBound) {
        if i < self.dim() && j < self.dim() && i != j {
            self.tighten(i, j, bound);
        }
    }

    /// Zone inclusion; both sides canonical.
    pub fn subset_of(&self, other: &Zone) -> bool {
        if self.empty {
            return true;
        }
        if other.empty {
            return false;
        }
        self.bounds
            .iter()
            .zip(&other.bounds)
            .all(|(a, b)| a == b || a.tighter_than(b))
    }

    /// Intersection with `t1 <= ref <= t2`.
    pub fn window(&self, t1: &Rat, t2: &Rat) -> Zone {
        let mut z = self.clone();
        let r = z.ref_index();
        z.tighten(r, 0, ZoneBound::le(t2.clone()));
        z.tighten(0, r, ZoneBound::le(-t1));
        z.canonicalize();
        z
    }

    /// Intersection with `ref > 0`.
    fn positive_time(&self) -> Zone {
        let mut z = self.clone();
        let r = z.ref_index();
        z.tighten(0, r, ZoneBound::lt(Rat::zero()));
        z.canonicalize();
        z
    }

    /// Smallest possible reference-clock value (zone must be canonical).
    pub fn ref_lower(&self) -> Rat {
        match &self.get(0, self.ref_index()).value {
            Some(v) => -v,
            None => Rat::zero(),
        }
    }

    /// Membership of a concrete valuation (clock values then ref).
    pub fn contains_valuation(&self, values: &[Rat]) -> bool {
        if self.empty || values.len() != self.clock_count + 1 {
            return false;
        }
        let value_of = |i: usize| -> Rat {
            if i == 0 {
                Rat::zero()
            } else {
                values[i - 1].clone()
            }
        };
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let diff = &value_of(i) - &value_of(j);
                match &self.get(i, j).value {
                    None => {}
                    Some(b) => {
                        if self.get(i, j).strict {
                            if !(diff < *b) {
                                return false;
                            }
                        } else if !(diff <= *b) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    pub fn display(&self, clocks: &[String]) -> String {
        let name = |i: usize| -> String {
            if i == 0 {
                "0".into()
            } else if i == self.ref_index() {
                "ref".into()
            } else {
                clocks.get(i - 1).cloned().unwrap_or(format!("x{i}"))
            }
        };
        if self.empty {
            return "empty".into();
        }
        let mut parts = Vec::new();
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if i == j {
                    continue;
                }
                let b = self.get(i, j);
                if b.value.is_some() {
                    parts.push(format!("{} - {} {}", name(i), name(j), b));
                }
            }
        }
        parts.join(", ")
    }
}

/// Delay within the location invariant: the time-step of a run.
pub fn zone_successor(zone: &Zone, invariant: &ClockConstraint) -> Zone {
    let mut z = zone.clone();
    z.up();
    z.intersect(invariant)
}

/// Guard, resets, then the target invariant: the discrete step of a run.
pub fn zone_transition(
    zone: &Zone,
    guard: &ClockConstraint,
    resets: &BTreeSet<usize>,
    target_invariant: &ClockConstraint,
) -> Zone {
    let mut z = zone.intersect(guard);
    if z.is_empty() {
        return z;
    }
    for &c in resets {
        z.reset(c);
    }
    z.canonicalize();
    z.intersect(target_invariant)
}

/// How initial clock valuations are seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Definition-style runs: every clock starts at zero.
    ZeroClocks,
    /// Clocks start anywhere allowed by the initial invariant: the time
    /// already spent inside the initial region is unknown. This is the sound
    /// reading when initial states fill whole cells rather than entering
    /// level sets. Non-initial locations then count as reached only at
    /// strictly positive times (leaving a cell takes time).
    PhaseUnknown,
}

/// Locations reachable within a time window, with witness zones.
#[derive(Debug, Clone)]
pub struct ReachResult {
    pub locations: BTreeSet<usize>,
    pub witnesses: BTreeMap<usize, Zone>,
    pub window: (Rat, Rat),
}

/// Breadth-first zone-graph reachability from the given initial locations:
/// a location is reported iff some visited zone meets `t1 ≤ ref ≤ t2`.
pub fn reach(
    ta: &TimedAutomaton,
    l0: &BTreeSet<usize>,
    t1: &Rat,
    t2: &Rat,
    init: InitMode,
) -> Result<ReachResult> {
    if t1.is_negative() || t1 > t2 {
        return Err(Error::InvalidWindow);
    }
    let k = ta.clocks.len();
    let mut visited: Vec<Vec<Zone>> = vec![Vec::new(); ta.locations.len()];
    let mut queue: VecDeque<(usize, Zone)> = VecDeque::new();
    let mut result = ReachResult {
        locations: BTreeSet::new(),
        witnesses: BTreeMap::new(),
        window: (t1.clone(), t2.clone()),
    };

    let push = |loc: usize,
                    zone: Zone,
                    visited: &mut Vec<Vec<Zone>>,
                    queue: &mut VecDeque<(usize, Zone)>| {
        if zone.is_empty() {
            return;
        }
        if visited[loc].iter().any(|v| zone.subset_of(v)) {
            return;
        }
        visited[loc].retain(|v| !v.subset_of(&zone));
        visited[loc].push(zone.clone());
        queue.push_back((loc, zone));
    };

    for &start in l0 {
        if start >= ta.locations.len() {
            return Err(Error::Spec("initial location out of range".into()));
        }
        let seed = match init {
            InitMode::ZeroClocks => Zone::all_zero(k),
            InitMode::PhaseUnknown => Zone::free_clocks(k),
        };
        let seed = seed.intersect(&ta.locations[start].invariant);
        let delayed = zone_successor(&seed, &ta.locations[start].invariant);
        push(start, delayed, &mut visited, &mut queue);
    }

    while let Some((loc, zone)) = queue.pop_front() {
        let mut met = zone.window(t1, t2);
        if init == InitMode::PhaseUnknown && !l0.contains(&loc) {
            met = met.positive_time();
        }
        if !met.is_empty() {
            result.locations.insert(loc);
            result.witnesses.entry(loc).or_insert(met);
        }
        // Anything downstream only increases the reference clock.
        if &zone.ref_lower() > t2 {
            continue;
        }
        for tr in ta.outgoing(loc) {
            let stepped = zone_transition(
                &zone,
                &tr.guard,
                &tr.resets,
                &ta.locations[tr.target].invariant,
            );
            if stepped.is_empty() {
                continue;
            }
            let delayed = zone_successor(&stepped, &ta.locations[tr.target].invariant);
            push(tr.target, delayed, &mut visited, &mut queue);
        }
    }
    Ok(result)
}

/// Concretization of a reach result: the state-space region covered by the
/// reached locations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Concretization {
    pub regions: Vec<RegionId>,
    /// Number of grid nodes in the union of the reached masks.
    pub grid_points: usize,
    pub volume: f64,
}

/// Map reached locations back to grid masks via the abstraction map. The
/// `fingerprint` must match the partition the automaton was built from.
pub fn concretize(
    result: &ReachResult,
    partition: &Partition,
    map: &AbstractionMap,
    fingerprint: &str,
) -> Result<Concretization> {
    if fingerprint != partition.fingerprint() {
        return Err(Error::FingerprintMismatch {
            expected: fingerprint.into(),
            got: partition.fingerprint().into(),
        });
    }
    let mut regions = Vec::new();
    let mut grid_points = 0usize;
    for &loc in &result.locations {
        let id = map
            .region_of(loc)
            .ok_or_else(|| Error::UnknownLocation(format!("location {loc}")))?;
        let idx = partition
            .region_index_of(id)
            .ok_or_else(|| Error::UnknownLocation(id.to_string()))?;
        grid_points += partition.region(idx).mask.len();
        regions.push(id.clone());
    }
    regions.sort();
    Ok(Concretization {
        regions,
        grid_points,
        volume: grid_points as f64 * partition.node_volume(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::{
        build_cell_automaton, initial_locations, Atom, Location, LocationMeta, Transition,
    };
    use crate::bounds::{compute_bounds, Mode};
    use crate::partition::{build_partition, SliceFamily};
    use crate::system::{Box, Orientation, QuadraticLyapunov, VectorField};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> Rat {
        Rat::new(n, d)
    }

    #[test]
    fn contradictory_bounds_are_empty() {
        // c <= 5 and c >= 7
        let mut z = Zone::nonnegative(1);
        z.tighten(1, 0, ZoneBound::le(r(5, 1)));
        z.tighten(0, 1, ZoneBound::le(r(-7, 1)));
        z.canonicalize();
        assert!(z.is_empty());
    }

    #[test]
    fn closure_is_idempotent() {
        let mut z = Zone::nonnegative(2);
        z.tighten(1, 0, ZoneBound::le(r(3, 1)));
        z.tighten(2, 1, ZoneBound::le(r(1, 2)));
        z.canonicalize();
        let once = z.clone();
        z.canonicalize();
        assert_eq!(once, z);
    }

    #[test]
    fn closure_derives_transitive_bound() {
        // c <= 3 and ref - c <= 2 implies ref <= 5.
        let mut z = Zone::nonnegative(1);
        z.tighten(1, 0, ZoneBound::le(r(3, 1)));
        let ref_i = z.ref_index();
        z.tighten(ref_i, 1, ZoneBound::le(r(2, 1)));
        z.canonicalize();
        assert_eq!(z.get(ref_i, 0), &ZoneBound::le(r(5, 1)));
    }

    #[test]
    fn successor_delays_under_invariant() {
        let z = Zone::all_zero(1);
        let inv = ClockConstraint::single(Atom::upper(0, r(1, 2)));
        let s = zone_successor(&z, &inv);
        // 0 <= c = ref <= 1/2
        assert_eq!(s.get(1, 0), &ZoneBound::le(r(1, 2)));
        let ref_i = s.ref_index();
        assert_eq!(s.get(ref_i, 0), &ZoneBound::le(r(1, 2)));
        assert_eq!(s.get(1, ref_i), &ZoneBound::le(r(0, 1)));
        assert_eq!(s.get(ref_i, 1), &ZoneBound::le(r(0, 1)));

        let free = zone_successor(&Zone::all_zero(1), &ClockConstraint::always());
        assert_eq!(free.get(1, 0), &ZoneBound::infinite());
        assert_eq!(free.get(1, free.ref_index()), &ZoneBound::le(r(0, 1)));
    }

    #[test]
    fn successor_of_violating_zone_is_empty() {
        let mut z = Zone::all_zero(1);
        z.tighten(0, 1, ZoneBound::le(r(-2, 1))); // c >= 2
        z.canonicalize();
        assert!(z.is_empty() || {
            let s = zone_successor(&z, &ClockConstraint::single(Atom::upper(0, r(1, 1))));
            s.is_empty()
        });
    }

    #[test]
    fn transition_resets_clock_keeps_ref() {
        // From 0 <= c = ref <= 1/2, fire guard c >= 1/4 with reset {c}.
        let s = zone_successor(
            &Zone::all_zero(1),
            &ClockConstraint::single(Atom::upper(0, r(1, 2))),
        );
        let guard = ClockConstraint::single(Atom::lower(0, r(1, 4)));
        let inv = ClockConstraint::single(Atom::upper(0, r(1, 2)));
        let t = zone_transition(&s, &guard, &BTreeSet::from([0]), &inv);
        assert!(!t.is_empty());
        // c = 0, 1/4 <= ref <= 1/2
        assert_eq!(t.get(1, 0), &ZoneBound::le(r(0, 1)));
        assert_eq!(t.get(0, 1), &ZoneBound::le(r(0, 1)));
        let ref_i = t.ref_index();
        assert_eq!(t.get(ref_i, 0), &ZoneBound::le(r(1, 2)));
        assert_eq!(t.get(0, ref_i), &ZoneBound::le(r(-1, 4)));

        // Disjoint guard gives the empty zone.
        let none = zone_transition(
            &s,
            &ClockConstraint::single(Atom::lower(0, r(3, 5))),
            &BTreeSet::from([0]),
            &inv,
        );
        assert!(none.is_empty());

        // Empty reset set keeps ref - c pinned.
        let keep = zone_transition(&s, &guard, &BTreeSet::new(), &inv);
        assert_eq!(keep.get(ref_i, 1), &ZoneBound::le(r(0, 1)));
    }

    fn cell_automaton_1d(mode: Mode) -> (crate::automaton::CellAutomaton, Partition) {
        let lyap = QuadraticLyapunov::new(0, DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let field = VectorField::linear(DMatrix::from_row_slice(1, 1, &[-1.0])).unwrap();
        let fam = SliceFamily::new(0, lyap, vec![1.0, 2.0, 4.0], Orientation::Decreasing).unwrap();
        let p = build_partition(vec![fam], Box::new(vec![-2.5], vec![2.5]).unwrap(), 0.01).unwrap();
        let b = compute_bounds(&p, &field, mode, 0.1).unwrap();
        let cell = build_cell_automaton(&p, &b, None).unwrap();
        (cell, p)
    }

    fn right_start(
        cell: &crate::automaton::CellAutomaton,
        p: &Partition,
    ) -> BTreeSet<usize> {
        initial_locations(p, &cell.map, &Box::new(vec![1.415], vec![1.995]).unwrap()).unwrap()
    }

    #[test]
    fn reach_1d_windows() {
        let (cell, p) = cell_automaton_1d(Mode::Sound);
        let l0 = right_start(&cell, &p);
        let names = |res: &ReachResult| -> BTreeSet<String> {
            res.locations
                .iter()
                .map(|&l| cell.ta.locations[l].name.clone())
                .collect()
        };
        let res = reach(&cell.ta, &l0, &Rat::zero(), &r(2, 5), InitMode::ZeroClocks).unwrap();
        assert_eq!(
            names(&res),
            BTreeSet::from(["e(2)#1".to_string(), "e(1)#1".to_string()])
        );
        let res = reach(&cell.ta, &l0, &Rat::zero(), &r(1, 2), InitMode::ZeroClocks).unwrap();
        assert_eq!(
            names(&res),
            BTreeSet::from([
                "e(2)#1".to_string(),
                "e(1)#1".to_string(),
                "core".to_string()
            ])
        );
        // [0, 0] is exactly L0.
        let res = reach(&cell.ta, &l0, &Rat::zero(), &Rat::zero(), InitMode::ZeroClocks).unwrap();
        assert_eq!(res.locations, l0);
    }

    #[test]
    fn reach_complete_mode_window() {
        let (cell, p) = cell_automaton_1d(Mode::Complete);
        let l0 = right_start(&cell, &p);
        let res = reach(&cell.ta, &l0, &Rat::zero(), &r(3, 5), InitMode::ZeroClocks).unwrap();
        // Core needs 2 * 0.5 ln 2 = 0.693 > 0.6.
        assert_eq!(res.locations.len(), 2);
    }

    #[test]
    fn reach_monotone_in_time() {
        let (cell, p) = cell_automaton_1d(Mode::Sound);
        let l0 = right_start(&cell, &p);
        let mut prev: Option<BTreeSet<usize>> = None;
        for t2 in [r(1, 10), r(1, 4), r(2, 5), r(1, 2), r(2, 1)] {
            let res = reach(&cell.ta, &l0, &Rat::zero(), &t2, InitMode::ZeroClocks).unwrap();
            if let Some(p) = prev {
                assert!(p.is_subset(&res.locations));
            }
            prev = Some(res.locations);
        }
    }

    #[test]
    fn reach_monotone_under_bound_widening() {
        let (cell, p) = cell_automaton_1d(Mode::Sound);
        let l0 = right_start(&cell, &p);
        let base = reach(&cell.ta, &l0, &Rat::zero(), &r(1, 2), InitMode::ZeroClocks).unwrap();
        // Widen every slice bracket by 10% on both sides.
        let mut widened = cell.ta.clone();
        for loc in &mut widened.locations {
            for a in &mut loc.invariant.atoms {
                a.constant = a.constant.mul(&r(11, 10));
            }
        }
        for tr in &mut widened.transitions {
            for a in &mut tr.guard.atoms {
                a.constant = a.constant.mul(&r(9, 10));
            }
        }
        let wide = reach(&widened, &l0, &Rat::zero(), &r(1, 2), InitMode::ZeroClocks).unwrap();
        assert!(base.locations.is_subset(&wide.locations));
    }

    #[test]
    fn phase_unknown_opens_guards_early() {
        let (cell, p) = cell_automaton_1d(Mode::Sound);
        let l0 = right_start(&cell, &p);
        let early = reach(&cell.ta, &l0, &Rat::zero(), &r(3, 10), InitMode::PhaseUnknown).unwrap();
        // With unknown phase the first exit can happen immediately, so the
        // chain below the initial cell opens after one full t_lower.
        let names: BTreeSet<String> = early
            .locations
            .iter()
            .map(|&l| cell.ta.locations[l].name.clone())
            .collect();
        assert!(names.contains("core"), "{names:?}");
    }

    #[test]
    fn concretize_masks() {
        let (cell, p) = cell_automaton_1d(Mode::Sound);
        let l0 = right_start(&cell, &p);
        let res = reach(&cell.ta, &l0, &Rat::zero(), &r(2, 5), InitMode::ZeroClocks).unwrap();
        let c = concretize(&res, &p, &cell.map, p.fingerprint()).unwrap();
        // Masks of x in [1, 2): volume about 1.
        assert!((c.volume - 1.0).abs() < 0.05, "volume {}", c.volume);
        assert!(matches!(
            concretize(&res, &p, &cell.map, "deadbeef"),
            Err(Error::FingerprintMismatch { .. })
        ));
        let empty = ReachResult {
            locations: BTreeSet::new(),
            witnesses: BTreeMap::new(),
            window: (Rat::zero(), Rat::zero()),
        };
        let c = concretize(&empty, &p, &cell.map, p.fingerprint()).unwrap();
        assert_eq!(c.grid_points, 0);
    }

    #[test]
    fn core_concretizes_to_inner_mask() {
        let (cell, p) = cell_automaton_1d(Mode::Sound);
        let core = cell.ta.location_index("core").unwrap();
        let res = ReachResult {
            locations: BTreeSet::from([core]),
            witnesses: BTreeMap::new(),
            window: (Rat::zero(), Rat::zero()),
        };
        let c = concretize(&res, &p, &cell.map, p.fingerprint()).unwrap();
        assert!((c.volume - 2.0).abs() < 0.05, "volume {}", c.volume);
    }

    fn arb_zone() -> impl Strategy<Value = Zone> {
        // Random conjunctions of atoms over up to 4 clocks.
        let atom = (0usize..4, 0usize..5, -16i64..16, 1i64..8, any::<bool>());
        proptest::collection::vec(atom, 0..10).prop_map(|atoms| {
            let mut z = Zone::nonnegative(4);
            for (c, kind, num, den, strict) in atoms {
                let b = if strict {
                    ZoneBound::lt(Rat::new(num, den))
                } else {
                    ZoneBound::le(Rat::new(num, den))
                };
                let r = z.ref_index();
                match kind {
                    0 => z.constrain(c + 1, 0, b),
                    1 => z.constrain(0, c + 1, b),
                    2 => z.constrain(c + 1, (c + 1) % 4 + 1, b),
                    3 => z.constrain((c + 2) % 4 + 1, c + 1, b),
                    _ => z.constrain(r, c + 1, b),
                }
            }
            z.canonicalize();
            z
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn canonicalize_idempotent(z in arb_zone()) {
            let mut again = z.clone();
            again.canonicalize();
            prop_assert_eq!(z, again);
        }

        #[test]
        fn delay_contains_original(z in arb_zone(), vals in proptest::collection::vec((0i64..12, 1i64..4), 5)) {
            prop_assume!(!z.is_empty());
            let delayed = zone_successor(&z, &ClockConstraint::always());
            let valuation: Vec<Rat> = vals.iter().map(|(n, d)| Rat::new(*n, *d)).collect();
            if z.contains_valuation(&valuation) {
                prop_assert!(delayed.contains_valuation(&valuation));
            }
        }
    }

    #[test]
    fn reach_rejects_bad_window() {
        let cc = ClockConstraint::always();
        let ta = TimedAutomaton {
            clocks: vec![],
            alphabet: vec![],
            locations: vec![Location {
                name: "l".into(),
                meta: LocationMeta::FamilyIndex { family: 0, idx: 0 },
                invariant: cc,
            }],
            initial: BTreeSet::from([0]),
            transitions: vec![],
        };
        assert!(matches!(
            reach(&ta, &BTreeSet::from([0]), &r(2, 1), &r(1, 1), InitMode::ZeroClocks),
            Err(Error::InvalidWindow)
        ));
        let _ = Transition {
            source: 0,
            guard: ClockConstraint::always(),
            symbol: "s".into(),
            resets: BTreeSet::new(),
            target: 0,
        };
    }
}
