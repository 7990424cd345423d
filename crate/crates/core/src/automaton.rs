//! Timed automata over the level-set partition.
//!
//! Three construction paths share the same per-slice clock discipline: one
//! clock `cᵢ` per slice family measuring time-in-current-slice, one symbol
//! `σᵢ` per family, transitions that step family `i`'s index by one in flow
//! direction with guard `cᵢ ≥ t_lower`, reset `{cᵢ}`, and invariants
//! `cᵢ ≤ t_upper` on slice locations.
//!
//! * [`build_slice_automaton`] — one family in isolation: locations are its
//!   slices plus per-family core and exterior sinks.
//! * [`build_extended_automaton`] — locations are full per-family index
//!   vectors (the extended cells, including inner/outer indices); built
//!   directly, and isomorphic to the parallel composition of the slice
//!   automata by construction of both.
//! * [`build_cell_automaton`] — locations are the connected cells of the
//!   partition plus one core and one exterior; transitions follow grid
//!   adjacency, so disconnected targets stay separate.
//!
//! Guard and invariant constants are exact rationals converted from the
//! computed bounds. Core and exterior absorb: no outgoing transitions,
//! invariant true.

use crate::bounds::{BoundsTable, SliceBounds};
use crate::error::{Error, Result};
use crate::partition::{Partition, RegionId};
use crate::rat::Rat;
use crate::system::Orientation;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Comparison operator of a clock-constraint atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cmp {
    Le,
    Lt,
    Eq,
    Gt,
    Ge,
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Cmp::Le => "<=",
            Cmp::Lt => "<",
            Cmp::Eq => "==",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
        };
        f.write_str(s)
    }
}

/// `clock ⋈ k` or `clock − clock₂ ⋈ k`, with rational `k`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub clock: usize,
    pub minus: Option<usize>,
    pub cmp: Cmp,
    pub constant: Rat,
}

impl Atom {
    pub fn upper(clock: usize, constant: Rat) -> Self {
        Atom {
            clock,
            minus: None,
            cmp: Cmp::Le,
            constant,
        }
    }

    pub fn lower(clock: usize, constant: Rat) -> Self {
        Atom {
            clock,
            minus: None,
            cmp: Cmp::Ge,
            constant,
        }
    }
}

/// Duplicate-free conjunction of atoms; the empty conjunction is `true`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClockConstraint {
    pub atoms: Vec<Atom>,
}

impl ClockConstraint {
    pub fn always() -> Self {
        ClockConstraint { atoms: Vec::new() }
    }

    pub fn single(atom: Atom) -> Self {
        ClockConstraint { atoms: vec![atom] }
    }

    pub fn and(&self, other: &ClockConstraint) -> ClockConstraint {
        let mut atoms = self.atoms.clone();
        for a in &other.atoms {
            if !atoms.contains(a) {
                atoms.push(a.clone());
            }
        }
        ClockConstraint { atoms }
    }

    pub fn is_true(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Tightest upper-bound constant for a clock, if one is present.
    pub fn upper_for(&self, clock: usize) -> Option<&Rat> {
        self.atoms
            .iter()
            .filter(|a| a.clock == clock && a.minus.is_none())
            .filter(|a| matches!(a.cmp, Cmp::Le | Cmp::Lt | Cmp::Eq))
            .map(|a| &a.constant)
            .min()
    }

    pub fn display(&self, clocks: &[String]) -> String {
        if self.atoms.is_empty() {
            return "true".into();
        }
        self.atoms
            .iter()
            .map(|a| match a.minus {
                None => format!("{} {} {}", clocks[a.clock], a.cmp, a.constant),
                Some(m) => format!(
                    "{} - {} {} {}",
                    clocks[a.clock], clocks[m], a.cmp, a.constant
                ),
            })
            .collect::<Vec<_>>()
            .join(" && ")
    }
}

/// What a location stands for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocationMeta {
    /// A partition region of the cell automaton.
    Region(RegionId),
    /// Per-family index in a slice automaton: 0 = core side, `m+1` = exterior
    /// side, otherwise the slice number.
    FamilyIndex { family: usize, idx: usize },
    /// Full index vector of an extended cell.
    ExtVector(Vec<u16>),
    /// Product location of a parallel composition.
    Product(Vec<LocationMeta>),
}

impl LocationMeta {
    /// Flatten to a per-family index vector when the location is an extended
    /// cell or a product of per-family locations.
    pub fn index_vector(&self) -> Option<Vec<u16>> {
        match self {
            LocationMeta::ExtVector(v) => Some(v.clone()),
            LocationMeta::Product(parts) => {
                let mut v = Vec::with_capacity(parts.len());
                for p in parts {
                    match p {
                        LocationMeta::FamilyIndex { idx, .. } => v.push(*idx as u16),
                        _ => return None,
                    }
                }
                Some(v)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub name: String,
    pub meta: LocationMeta,
    pub invariant: ClockConstraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub source: usize,
    pub guard: ClockConstraint,
    pub symbol: String,
    pub resets: BTreeSet<usize>,
    pub target: usize,
}

/// Timed automaton `(L, L₀, C, Σ, I, Δ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedAutomaton {
    pub clocks: Vec<String>,
    pub alphabet: Vec<String>,
    pub locations: Vec<Location>,
    pub initial: BTreeSet<usize>,
    pub transitions: Vec<Transition>,
}

impl TimedAutomaton {
    pub fn location_index(&self, name: &str) -> Option<usize> {
        self.locations.iter().position(|l| l.name == name)
    }

    pub fn outgoing(&self, source: usize) -> impl Iterator<Item = &Transition> {
        self.transitions.iter().filter(move |t| t.source == source)
    }

    pub fn set_initial(&mut self, initial: impl IntoIterator<Item = usize>) {
        self.initial = initial.into_iter().collect();
    }

    /// No location may have two outgoing transitions with the same symbol.
    pub fn is_deterministic(&self) -> bool {
        let mut seen = BTreeSet::new();
        for t in &self.transitions {
            if !seen.insert((t.source, t.symbol.clone())) {
                return false;
            }
        }
        true
    }

    /// Structural checks run by every builder: all clock references and
    /// location indices are declared, and no guard opens after its source
    /// invariant closes (complete-mode equality allowed).
    pub fn validate(&self) -> Result<()> {
        let n_clocks = self.clocks.len();
        let n_locs = self.locations.len();
        let check_cc = |cc: &ClockConstraint| -> Result<()> {
            for a in &cc.atoms {
                if a.clock >= n_clocks || a.minus.is_some_and(|m| m >= n_clocks) {
                    return Err(Error::Spec("constraint references undeclared clock".into()));
                }
            }
            Ok(())
        };
        for l in &self.locations {
            check_cc(&l.invariant)?;
        }
        for &l0 in &self.initial {
            if l0 >= n_locs {
                return Err(Error::Spec("initial location out of range".into()));
            }
        }
        for t in &self.transitions {
            if t.source >= n_locs || t.target >= n_locs {
                return Err(Error::Spec("transition endpoint out of range".into()));
            }
            check_cc(&t.guard)?;
            if t.resets.iter().any(|&c| c >= n_clocks) {
                return Err(Error::Spec("reset references undeclared clock".into()));
            }
            if !self.alphabet.contains(&t.symbol) {
                return Err(Error::Spec(format!("symbol `{}` not in alphabet", t.symbol)));
            }
            let inv = &self.locations[t.source].invariant;
            for a in &t.guard.atoms {
                if matches!(a.cmp, Cmp::Ge | Cmp::Gt) && a.minus.is_none() {
                    if let Some(upper) = inv.upper_for(a.clock) {
                        if &a.constant > upper {
                            return Err(Error::GuardExceedsInvariant {
                                location: self.locations[t.source].name.clone(),
                                guard: a.constant.to_string(),
                                invariant: upper.to_string(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Every guard/invariant constant multiplied by `factor` (used for the
    /// lossless integer rescale on export).
    pub fn scale_constants(&self, factor: &Rat) -> TimedAutomaton {
        let scale_cc = |cc: &ClockConstraint| ClockConstraint {
            atoms: cc
                .atoms
                .iter()
                .map(|a| Atom {
                    constant: a.constant.mul(factor),
                    ..a.clone()
                })
                .collect(),
        };
        TimedAutomaton {
            clocks: self.clocks.clone(),
            alphabet: self.alphabet.clone(),
            locations: self
                .locations
                .iter()
                .map(|l| Location {
                    name: l.name.clone(),
                    meta: l.meta.clone(),
                    invariant: scale_cc(&l.invariant),
                })
                .collect(),
            initial: self.initial.clone(),
            transitions: self
                .transitions
                .iter()
                .map(|t| Transition {
                    source: t.source,
                    guard: scale_cc(&t.guard),
                    symbol: t.symbol.clone(),
                    resets: t.resets.clone(),
                    target: t.target,
                })
                .collect(),
        }
    }

    /// All guard/invariant constants.
    pub fn constants(&self) -> Vec<&Rat> {
        let mut out = Vec::new();
        for l in &self.locations {
            out.extend(l.invariant.atoms.iter().map(|a| &a.constant));
        }
        for t in &self.transitions {
            out.extend(t.guard.atoms.iter().map(|a| &a.constant));
        }
        out
    }
}

/// Guard/invariant constants for one slice, as exact rationals. Snapping
/// rounds outward to multiples of `1/denom` (lower down, upper up), which
/// keeps the bracket sound; exact complete-mode bounds are never snapped.
fn rat_bounds(b: &SliceBounds, snap: Option<u64>) -> (Rat, Rat) {
    let lo = Rat::from_f64(b.t_lower).expect("finite bound");
    let hi = Rat::from_f64(b.t_upper).expect("finite bound");
    match snap {
        Some(d) if !b.exact => (lo.floor_to_denom(d), hi.ceil_to_denom(d)),
        _ => (lo, hi),
    }
}

pub fn clock_name(family: usize) -> String {
    format!("c{}", family + 1)
}

pub fn symbol_name(family: usize) -> String {
    format!("s{}", family + 1)
}

/// Data one family contributes to any of the builders.
struct FamilyPlan {
    slices: usize,
    orientation: Orientation,
    /// (guard, invariant) constants per slice, 1-based.
    consts: Vec<(Rat, Rat)>,
}

fn family_plans(
    partition: &Partition,
    bounds: &BoundsTable,
    snap: Option<u64>,
) -> Result<Vec<FamilyPlan>> {
    partition
        .families()
        .iter()
        .enumerate()
        .map(|(i, fam)| {
            let mut consts = Vec::with_capacity(fam.slice_count() + 1);
            consts.push((Rat::zero(), Rat::zero())); // slice indices are 1-based
            for g in 1..=fam.slice_count() {
                let b = bounds
                    .get(i, g)
                    .ok_or(Error::MissingBounds { family: i, slice: g })?;
                consts.push(rat_bounds(b, snap));
            }
            Ok(FamilyPlan {
                slices: fam.slice_count(),
                orientation: fam.orientation(),
                consts,
            })
        })
        .collect()
}

/// Automaton of a single slice family: a chain through its slices in flow
/// direction, between an absorbing core side and an absorbing exterior side.
pub fn build_slice_automaton(
    partition: &Partition,
    bounds: &BoundsTable,
    family: usize,
    snap: Option<u64>,
) -> Result<TimedAutomaton> {
    let plans = family_plans(partition, bounds, snap)?;
    let plan = plans
        .get(family)
        .ok_or(Error::Spec(format!("no family {family}")))?;
    let m = plan.slices;
    let mut locations = Vec::with_capacity(m + 2);
    // Location order: per-family index 0 (core side), slices 1..=m, exterior.
    for idx in 0..=m + 1 {
        let name = match idx {
            0 => format!("f{}:core", family + 1),
            i if i == m + 1 => format!("f{}:ext", family + 1),
            i => format!("f{}:s{}", family + 1, i),
        };
        let invariant = if (1..=m).contains(&idx) {
            ClockConstraint::single(Atom::upper(0, plan.consts[idx].1.clone()))
        } else {
            ClockConstraint::always()
        };
        locations.push(Location {
            name,
            meta: LocationMeta::FamilyIndex { family, idx },
            invariant,
        });
    }
    let mut transitions = Vec::new();
    for g in 1..=m {
        let target = match plan.orientation {
            Orientation::Decreasing => g - 1,
            Orientation::Increasing => g + 1,
        };
        transitions.push(Transition {
            source: g,
            guard: ClockConstraint::single(Atom::lower(0, plan.consts[g].0.clone())),
            symbol: symbol_name(family),
            resets: BTreeSet::from([0]),
            target,
        });
    }
    let ta = TimedAutomaton {
        clocks: vec![clock_name(family)],
        alphabet: vec![symbol_name(family)],
        locations,
        initial: BTreeSet::new(),
        transitions,
    };
    ta.validate()?;
    Ok(ta)
}

/// Interleaving product of timed automata with pairwise disjoint alphabets
/// and clocks. Locations are tuples, invariants conjoin, and each component
/// transition becomes a product transition changing only its coordinate.
pub fn parallel_compose(parts: &[TimedAutomaton]) -> Result<TimedAutomaton> {
    if parts.is_empty() {
        return Err(Error::Spec("parallel composition of zero automata".into()));
    }
    let mut clocks = Vec::new();
    let mut alphabet = Vec::new();
    let mut clock_offset = Vec::with_capacity(parts.len());
    for p in parts {
        clock_offset.push(clocks.len());
        for c in &p.clocks {
            if clocks.contains(c) {
                return Err(Error::ClockCollision { clock: c.clone() });
            }
            clocks.push(c.clone());
        }
        for s in &p.alphabet {
            if alphabet.contains(s) {
                return Err(Error::AlphabetCollision { symbol: s.clone() });
            }
            alphabet.push(s.clone());
        }
    }
    let remap = |cc: &ClockConstraint, off: usize| ClockConstraint {
        atoms: cc
            .atoms
            .iter()
            .map(|a| Atom {
                clock: a.clock + off,
                minus: a.minus.map(|m| m + off),
                ..a.clone()
            })
            .collect(),
    };

    // Enumerate tuples with component 0 most significant, so product order
    // matches the lexicographic order of index vectors.
    let sizes: Vec<usize> = parts.iter().map(|p| p.locations.len()).collect();
    let total: usize = sizes.iter().product();
    let tuple_of = |mut flat: usize| -> Vec<usize> {
        let mut t = vec![0usize; parts.len()];
        for j in (0..parts.len()).rev() {
            t[j] = flat % sizes[j];
            flat /= sizes[j];
        }
        t
    };
    let flat_of = |t: &[usize]| -> usize {
        let mut acc = 0usize;
        for j in 0..parts.len() {
            acc = acc * sizes[j] + t[j];
        }
        acc
    };

    let mut locations = Vec::with_capacity(total);
    for flat in 0..total {
        let t = tuple_of(flat);
        let mut invariant = ClockConstraint::always();
        let mut names = Vec::new();
        let mut metas = Vec::new();
        for (j, &lj) in t.iter().enumerate() {
            let loc = &parts[j].locations[lj];
            invariant = invariant.and(&remap(&loc.invariant, clock_offset[j]));
            names.push(loc.name.clone());
            metas.push(loc.meta.clone());
        }
        locations.push(Location {
            name: format!("({})", names.join("|")),
            meta: LocationMeta::Product(metas),
            invariant,
        });
    }

    let mut transitions = Vec::new();
    for flat in 0..total {
        let t = tuple_of(flat);
        for (j, part) in parts.iter().enumerate() {
            for tr in part.outgoing(t[j]) {
                let mut t2 = t.clone();
                t2[j] = tr.target;
                transitions.push(Transition {
                    source: flat,
                    guard: remap(&tr.guard, clock_offset[j]),
                    symbol: tr.symbol.clone(),
                    resets: tr.resets.iter().map(|c| c + clock_offset[j]).collect(),
                    target: flat_of(&t2),
                });
            }
        }
    }

    let mut initial = BTreeSet::new();
    let init_lists: Vec<Vec<usize>> = parts
        .iter()
        .map(|p| p.initial.iter().copied().collect())
        .collect();
    if init_lists.iter().all(|l| !l.is_empty()) {
        let mut idx = vec![0usize; parts.len()];
        loop {
            let t: Vec<usize> = idx
                .iter()
                .enumerate()
                .map(|(j, &i)| init_lists[j][i])
                .collect();
            initial.insert(flat_of(&t));
            let mut j = 0;
            loop {
                if j == idx.len() {
                    break;
                }
                idx[j] += 1;
                if idx[j] < init_lists[j].len() {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == idx.len() {
                break;
            }
        }
    }

    let ta = TimedAutomaton {
        clocks,
        alphabet,
        locations,
        initial,
        transitions,
    };
    ta.validate()?;
    Ok(ta)
}

/// Extended-cell automaton built directly from the partition data: one
/// location per per-family index vector over `{0, …, mᵢ+1}`, invariants
/// conjoined per family, transitions stepping one family at a time in flow
/// direction. Index 0 and `mᵢ+1` are absorbing for their family.
pub fn build_extended_automaton(
    partition: &Partition,
    bounds: &BoundsTable,
    snap: Option<u64>,
) -> Result<TimedAutomaton> {
    let plans = family_plans(partition, bounds, snap)?;
    let k = plans.len();
    let sizes: Vec<usize> = plans.iter().map(|p| p.slices + 2).collect();
    let total: usize = sizes.iter().product();
    let vec_of = |mut flat: usize| -> Vec<u16> {
        let mut v = vec![0u16; k];
        for j in (0..k).rev() {
            v[j] = (flat % sizes[j]) as u16;
            flat /= sizes[j];
        }
        v
    };
    let flat_of = |v: &[u16]| -> usize {
        let mut acc = 0usize;
        for j in 0..k {
            acc = acc * sizes[j] + v[j] as usize;
        }
        acc
    };

    let mut locations = Vec::with_capacity(total);
    for flat in 0..total {
        let v = vec_of(flat);
        let mut invariant = ClockConstraint::always();
        for (i, plan) in plans.iter().enumerate() {
            let g = v[i] as usize;
            if (1..=plan.slices).contains(&g) {
                invariant = invariant.and(&ClockConstraint::single(Atom::upper(
                    i,
                    plan.consts[g].1.clone(),
                )));
            }
        }
        let names: Vec<String> = v.iter().map(|g| g.to_string()).collect();
        locations.push(Location {
            name: format!("ex({})", names.join(",")),
            meta: LocationMeta::ExtVector(v),
            invariant,
        });
    }

    let mut transitions = Vec::new();
    for flat in 0..total {
        let v = vec_of(flat);
        for (i, plan) in plans.iter().enumerate() {
            let g = v[i] as usize;
            if !(1..=plan.slices).contains(&g) {
                continue;
            }
            let mut v2 = v.clone();
            v2[i] = match plan.orientation {
                Orientation::Decreasing => (g - 1) as u16,
                Orientation::Increasing => (g + 1) as u16,
            };
            transitions.push(Transition {
                source: flat,
                guard: ClockConstraint::single(Atom::lower(i, plan.consts[g].0.clone())),
                symbol: symbol_name(i),
                resets: BTreeSet::from([i]),
                target: flat_of(&v2),
            });
        }
    }

    let ta = TimedAutomaton {
        clocks: (0..k).map(clock_name).collect(),
        alphabet: (0..k).map(symbol_name).collect(),
        locations,
        initial: BTreeSet::new(),
        transitions,
    };
    ta.validate()?;
    Ok(ta)
}

/// Bijection between partition regions and automaton locations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbstractionMap {
    regions: Vec<RegionId>,
}

impl AbstractionMap {
    pub fn new(regions: Vec<RegionId>) -> Result<Self> {
        let unique: BTreeSet<&RegionId> = regions.iter().collect();
        if unique.len() != regions.len() {
            return Err(Error::Spec("abstraction map is not injective".into()));
        }
        Ok(AbstractionMap { regions })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn region_of(&self, location: usize) -> Option<&RegionId> {
        self.regions.get(location)
    }

    pub fn location_of(&self, region: &RegionId) -> Option<usize> {
        self.regions.iter().position(|r| r == region)
    }

    pub fn regions(&self) -> &[RegionId] {
        &self.regions
    }
}

/// Cell-level automaton plus the region↔location bijection.
pub struct CellAutomaton {
    pub ta: TimedAutomaton,
    pub map: AbstractionMap,
}

/// Build the cell automaton: one location per partition region (cells in
/// region order, with the core first and the exterior last). A σᵢ-transition
/// leads from a cell to every grid-adjacent region one index step away in
/// family `i`'s flow direction; steps into the all-inner vector target the
/// core, steps past the outermost level target the exterior.
pub fn build_cell_automaton(
    partition: &Partition,
    bounds: &BoundsTable,
    snap: Option<u64>,
) -> Result<CellAutomaton> {
    let plans = family_plans(partition, bounds, snap)?;
    let k = plans.len();
    let regions = partition.regions();
    let map = AbstractionMap::new(regions.iter().map(|r| r.id.clone()).collect())?;

    let mut locations = Vec::with_capacity(regions.len());
    for region in regions {
        let invariant = match &region.id {
            RegionId::Cell { ext, .. } => {
                let mut inv = ClockConstraint::always();
                for (i, plan) in plans.iter().enumerate() {
                    let g = ext[i] as usize;
                    if (1..=plan.slices).contains(&g) {
                        inv = inv.and(&ClockConstraint::single(Atom::upper(
                            i,
                            plan.consts[g].1.clone(),
                        )));
                    }
                }
                inv
            }
            _ => ClockConstraint::always(),
        };
        locations.push(Location {
            name: region.id.to_string(),
            meta: LocationMeta::Region(region.id.clone()),
            invariant,
        });
    }

    let core_loc = map.location_of(&RegionId::Core).expect("core present");
    let ext_loc = map.location_of(&RegionId::Exterior).expect("exterior present");

    let mut transitions = Vec::new();
    for (src, region) in regions.iter().enumerate() {
        let RegionId::Cell { ext, .. } = &region.id else {
            continue; // core and exterior absorb
        };
        for (i, plan) in plans.iter().enumerate() {
            let g = ext[i] as usize;
            if !(1..=plan.slices).contains(&g) {
                continue;
            }
            let guard = ClockConstraint::single(Atom::lower(i, plans[i].consts[g].0.clone()));
            let resets = BTreeSet::from([i]);
            let stepped = match plan.orientation {
                Orientation::Decreasing => g - 1,
                Orientation::Increasing => g + 1,
            };
            if stepped == plan.slices + 1 {
                // Past the outermost level of family i: exterior.
                transitions.push(Transition {
                    source: src,
                    guard,
                    symbol: symbol_name(i),
                    resets,
                    target: ext_loc,
                });
                continue;
            }
            let mut target_ext = ext.clone();
            target_ext[i] = stepped as u16;
            if target_ext.iter().all(|&g| g == 0) {
                transitions.push(Transition {
                    source: src,
                    guard,
                    symbol: symbol_name(i),
                    resets,
                    target: core_loc,
                });
                continue;
            }
            // Grid-adjacent cells carrying the stepped index vector.
            let mut targets: Vec<usize> = regions
                .iter()
                .enumerate()
                .filter(|(ti, r)| {
                    matches!(&r.id, RegionId::Cell { ext: e, .. } if e == &target_ext)
                        && partition.adjacent(src, *ti)
                })
                .map(|(ti, _)| ti)
                .collect();
            if targets.is_empty() {
                // No adjacency resolved on the grid; fall back to every cell
                // of the stepped vector rather than dropping the continuation.
                targets = regions
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| {
                        matches!(&r.id, RegionId::Cell { ext: e, .. } if e == &target_ext)
                    })
                    .map(|(ti, _)| ti)
                    .collect();
            }
            if targets.is_empty() {
                return Err(Error::GridTooCoarse {
                    family: i,
                    slice: stepped,
                });
            }
            for target in targets {
                transitions.push(Transition {
                    source: src,
                    guard: guard.clone(),
                    symbol: symbol_name(i),
                    resets: resets.clone(),
                    target,
                });
            }
        }
    }

    let ta = TimedAutomaton {
        clocks: (0..k).map(clock_name).collect(),
        alphabet: (0..k).map(symbol_name).collect(),
        locations,
        initial: BTreeSet::new(),
        transitions,
    };
    ta.validate()?;
    Ok(CellAutomaton { ta, map })
}

/// Initial locations from an initial box: the box's grid mask must cover
/// every region it touches (a union of cells).
pub fn initial_locations(
    partition: &Partition,
    map: &AbstractionMap,
    initial_box: &crate::system::Box,
) -> Result<BTreeSet<usize>> {
    let grid = partition.grid();
    let mut touched: BTreeMap<usize, usize> = BTreeMap::new(); // region idx -> points in box
    for flat in 0..grid.len() {
        let x = grid.point(flat);
        if initial_box.contains(&x) {
            let region_idx = partition
                .region_index_of(partition.label_at(flat))
                .expect("label indexes region table");
            *touched.entry(region_idx).or_default() += 1;
        }
    }
    if touched.is_empty() {
        return Err(Error::EmptyInitialBox);
    }
    let mut initial = BTreeSet::new();
    for (region_idx, count) in touched {
        let region = partition.region(region_idx);
        if count != region.mask.len() {
            return Err(Error::InitialBoxNotCellUnion {
                region: region.id.to_string(),
            });
        }
        let loc = map
            .location_of(&region.id)
            .ok_or_else(|| Error::UnknownLocation(region.id.to_string()))?;
        initial.insert(loc);
    }
    Ok(initial)
}
