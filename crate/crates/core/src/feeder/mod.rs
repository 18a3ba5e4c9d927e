//! Unbalanced multiphase radial feeder model.
//!
//! A [`Feeder`] is built from raw [`FeederParts`] (buses, line segments,
//! loads, DER units and the source definition), validated once, and is
//! immutable afterwards. Construction also compiles the radial topology:
//! breadth-first order from the source, the upstream line of every bus and
//! the canonical phase-node flattening used by every vectorized operation.

mod format;
mod synthetic;

use std::collections::{HashMap, VecDeque};
use std::fmt;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::Scalar;

pub use format::{emit_feeder, load_feeder};
pub use synthetic::{generate_synthetic_feeder, PhaseMix, SyntheticSpec};

/// Text of the bundled 123-bus, mixed-phase test feeder.
pub const IEEE123_STYLE: &str = include_str!("../../data/ieee123_style.feeder");

/// The bundled 123-bus test feeder, parsed.
pub fn ieee123_style<T: Scalar>() -> Feeder<T> {
    load_feeder(IEEE123_STYLE).expect("bundled feeder parses")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeederError {
    #[error("line {line}: {field}: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("not radial: {0}")]
    NotRadial(String),
    #[error("unreachable bus `{0}` (not connected to the source)")]
    Unreachable(String),
    #[error("phase mismatch: {0}")]
    PhaseMismatch(String),
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("duplicate bus `{0}`")]
    DuplicateBus(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid synthetic feeder spec: {0}")]
    InvalidSpec(String),
}

/// One of the three conductors. Ordering `A < B < C` fixes every flattening.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        Phase::ALL.get(i).copied()
    }

    pub fn label(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }

    pub fn from_label(c: char) -> Option<Phase> {
        match c.to_ascii_lowercase() {
            'a' => Some(Phase::A),
            'b' => Some(Phase::B),
            'c' => Some(Phase::C),
            _ => None,
        }
    }

    /// Nominal source angle in radians: 0, -120 and +120 degrees.
    pub fn nominal_angle<T: Scalar>(self) -> T {
        let third = T::lit(2.0 * std::f64::consts::PI / 3.0);
        match self {
            Phase::A => T::zero(),
            Phase::B => -third,
            Phase::C => third,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Subset of `{a, b, c}` stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const EMPTY: PhaseSet = PhaseSet(0);
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn single(p: Phase) -> Self {
        PhaseSet(1 << p.index())
    }

    pub fn from_phases(phases: impl IntoIterator<Item = Phase>) -> Self {
        phases
            .into_iter()
            .fold(PhaseSet(0), |acc, p| PhaseSet(acc.0 | (1 << p.index())))
    }

    /// Parses strings such as `abc`, `ac` or `b`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut mask = 0u8;
        for c in s.chars() {
            let p = Phase::from_label(c)?;
            let bit = 1 << p.index();
            if mask & bit != 0 {
                return None;
            }
            mask |= bit;
        }
        (mask != 0).then_some(PhaseSet(mask))
    }

    #[inline]
    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersection(self, other: PhaseSet) -> PhaseSet {
        PhaseSet(self.0 & other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    /// Position of `p` among the present phases, e.g. `c` in `ac` is 1.
    pub fn position(self, p: Phase) -> Option<usize> {
        self.contains(p)
            .then(|| (self.0 & ((1 << p.index()) - 1)).count_ones() as usize)
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{}", p.label())?;
        }
        Ok(())
    }
}

impl fmt::Debug for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhaseSet({self})")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus<T> {
    pub id: String,
    pub phases: PhaseSet,
    /// Lower voltage bound, p.u.
    pub v_min: T,
    /// Upper voltage bound, p.u.
    pub v_max: T,
}

impl<T: Scalar> Bus<T> {
    pub fn new(id: impl Into<String>, phases: PhaseSet) -> Self {
        Bus {
            id: id.into(),
            phases,
            v_min: T::lit(0.95),
            v_max: T::lit(1.05),
        }
    }
}

/// Square complex series-impedance matrix over the phases present on a segment, ohms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceMatrix<T> {
    dim: usize,
    /// Row-major entries.
    entries: Vec<Complex<T>>,
}

impl<T: Scalar> ImpedanceMatrix<T> {
    pub fn new(dim: usize, entries: Vec<Complex<T>>) -> Result<Self, FeederError> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(FeederError::InvalidValue(format!(
                "impedance matrix needs {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        Ok(ImpedanceMatrix { dim, entries })
    }

    pub fn diagonal(diag: Vec<Complex<T>>) -> Self {
        let dim = diag.len();
        let mut entries = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        for (i, z) in diag.into_iter().enumerate() {
            entries[i * dim + i] = z;
        }
        ImpedanceMatrix { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        self.entries[row * self.dim + col]
    }

    pub fn entries(&self) -> &[Complex<T>] {
        &self.entries
    }

    pub fn is_diagonal(&self) -> bool {
        let zero = Complex::new(T::zero(), T::zero());
        (0..self.dim).all(|r| (0..self.dim).all(|c| r == c || self.get(r, c) == zero))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSegment<T> {
    pub from_bus: String,
    pub to_bus: String,
    pub phases: PhaseSet,
    pub impedance: ImpedanceMatrix<T>,
}

/// Wye-connected constant-power load on a single phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadPoint<T> {
    pub bus: String,
    pub phase: Phase,
    pub base_kw: T,
    pub base_kvar: T,
    pub loadshape: String,
}

/// Photovoltaic unit. Three-phase units split their rating evenly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerUnit<T> {
    pub bus: String,
    pub phases: PhaseSet,
    pub rated_kw: T,
    /// Reactive injection at full output, kvar. `None` means unity power factor.
    pub q_setpoint_kvar: Option<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec<T> {
    pub bus: String,
    /// Per-phase magnitude, p.u.
    pub voltage: [T; 3],
    /// Line-to-line voltage base, kV.
    pub base_kv: T,
    /// Three-phase power base, kVA.
    pub base_kva: T,
}

/// Unvalidated feeder content, as read from a document or produced by a generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeederParts<T> {
    pub source: SourceSpec<T>,
    pub buses: Vec<Bus<T>>,
    pub lines: Vec<LineSegment<T>>,
    pub loads: Vec<LoadPoint<T>>,
    pub ders: Vec<DerUnit<T>>,
}

/// Canonical ordering of non-source phase-nodes.
///
/// Buses appear in breadth-first order from the source (children in document
/// order) and phases `a, b, c` within a bus.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatIndex {
    nodes: Vec<(usize, Phase)>,
    slots: Vec<[Option<usize>; 3]>,
}

impl FlatIndex {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(bus index, phase)` pairs in flattened order.
    pub fn nodes(&self) -> &[(usize, Phase)] {
        &self.nodes
    }

    pub fn position(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.slots.get(bus).and_then(|s| s[phase.index()])
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Topology {
    bus_index: HashMap<String, usize>,
    source: usize,
    bfs_order: Vec<usize>,
    /// Upstream line of each bus (`None` for the source).
    parent_line: Vec<Option<usize>>,
    /// Upstream/downstream bus of each line after orientation from the source.
    line_ends: Vec<(usize, usize)>,
    child_lines: Vec<Vec<usize>>,
    depth: Vec<usize>,
    flat: FlatIndex,
}

/// Validated radial feeder.
#[derive(Clone, Debug, PartialEq)]
pub struct Feeder<T> {
    parts: FeederParts<T>,
    topo: Topology,
}

impl<T: Scalar> Feeder<T> {
    /// Validates `parts` and compiles the radial topology.
    pub fn new(parts: FeederParts<T>) -> Result<Self, FeederError> {
        validate_values(&parts)?;
        let topo = build_topology(&parts)?;
        validate_electrical(&parts, &topo)?;
        Ok(Feeder { parts, topo })
    }

    pub fn parts(&self) -> &FeederParts<T> {
        &self.parts
    }

    pub fn into_parts(self) -> FeederParts<T> {
        self.parts
    }

    pub fn source(&self) -> &SourceSpec<T> {
        &self.parts.source
    }

    pub fn buses(&self) -> &[Bus<T>] {
        &self.parts.buses
    }

    pub fn lines(&self) -> &[LineSegment<T>] {
        &self.parts.lines
    }

    pub fn loads(&self) -> &[LoadPoint<T>] {
        &self.parts.loads
    }

    pub fn ders(&self) -> &[DerUnit<T>] {
        &self.parts.ders
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.topo.bus_index.get(id).copied()
    }

    pub fn source_index(&self) -> usize {
        self.topo.source
    }

    /// Bus indices in breadth-first order from the source, source first.
    pub fn bfs_order(&self) -> &[usize] {
        &self.topo.bfs_order
    }

    pub fn parent_line(&self, bus: usize) -> Option<usize> {
        self.topo.parent_line[bus]
    }

    /// `(upstream bus, downstream bus)` of a line.
    pub fn line_ends(&self, line: usize) -> (usize, usize) {
        self.topo.line_ends[line]
    }

    pub fn child_lines(&self, bus: usize) -> &[usize] {
        &self.topo.child_lines[bus]
    }

    /// Number of segments between the source and `bus`.
    pub fn depth(&self, bus: usize) -> usize {
        self.topo.depth[bus]
    }

    pub fn flat(&self) -> &FlatIndex {
        &self.topo.flat
    }

    /// Number of non-source phase-nodes, the output dimension `D`.
    pub fn dim(&self) -> usize {
        self.topo.flat.len()
    }

    /// Net-load vector length, `2D`.
    pub fn input_dim(&self) -> usize {
        2 * self.dim()
    }

    /// Canonical `(bus id, phase)` ordering of all non-source phase-nodes.
    pub fn flatten_index(&self) -> Vec<(String, Phase)> {
        self.topo
            .flat
            .nodes()
            .iter()
            .map(|&(b, p)| (self.parts.buses[b].id.clone(), p))
            .collect()
    }

    /// Impedance base in ohms.
    pub fn z_base(&self) -> T {
        let kv = self.parts.source.base_kv;
        kv * kv * T::lit(1000.0) / self.parts.source.base_kva
    }

    /// Per-phase power base in kW (one third of the three-phase base).
    pub fn s_base_phase(&self) -> T {
        self.parts.source.base_kva / T::lit(3.0)
    }

    /// Per-unit impedance of a line, embedded into a full 3x3 phase frame.
    pub fn line_z_pu(&self, line: usize) -> [[Complex<T>; 3]; 3] {
        let seg = &self.parts.lines[line];
        let zb = self.z_base();
        let mut out = [[Complex::new(T::zero(), T::zero()); 3]; 3];
        let present: Vec<Phase> = seg.phases.iter().collect();
        for (r, pr) in present.iter().enumerate() {
            for (c, pc) in present.iter().enumerate() {
                out[pr.index()][pc.index()] = seg.impedance.get(r, c) / zb;
            }
        }
        out
    }

    /// Source phasor of phase `p`: configured magnitude at nominal angle.
    pub fn source_phasor(&self, p: Phase) -> Complex<T> {
        Complex::from_polar(self.parts.source.voltage[p.index()], p.nominal_angle())
    }

    /// SHA-256 of the emitted document, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(emit_feeder(self).as_bytes()))
    }
}

fn invalid(msg: impl Into<String>) -> FeederError {
    FeederError::InvalidValue(msg.into())
}

fn validate_values<T: Scalar>(parts: &FeederParts<T>) -> Result<(), FeederError> {
    let src = &parts.source;
    if !(src.base_kv > T::zero() && src.base_kv.is_finite()) {
        return Err(invalid("base_kv must be positive"));
    }
    if !(src.base_kva > T::zero() && src.base_kva.is_finite()) {
        return Err(invalid("base_kva must be positive"));
    }
    if src.voltage.iter().any(|v| !(*v > T::zero() && v.is_finite())) {
        return Err(invalid("source voltage magnitudes must be positive"));
    }
    for bus in &parts.buses {
        if bus.phases.is_empty() {
            return Err(invalid(format!("bus `{}` has no phases", bus.id)));
        }
        if !(T::zero() < bus.v_min && bus.v_min < bus.v_max && bus.v_max.is_finite()) {
            return Err(invalid(format!(
                "bus `{}` needs 0 < v_min < v_max",
                bus.id
            )));
        }
    }
    for load in &parts.loads {
        if !(load.base_kw >= T::zero() && load.base_kw.is_finite() && load.base_kvar.is_finite()) {
            return Err(invalid(format!(
                "load at `{}` needs finite base_kw >= 0",
                load.bus
            )));
        }
    }
    for der in &parts.ders {
        if !(der.rated_kw > T::zero() && der.rated_kw.is_finite()) {
            return Err(invalid(format!("DER at `{}` needs rated_kw > 0", der.bus)));
        }
        if der.phases.len() != 1 && der.phases.len() != 3 {
            return Err(invalid(format!(
                "DER at `{}` must be single- or three-phase",
                der.bus
            )));
        }
        if der.q_setpoint_kvar.is_some_and(|q| !q.is_finite()) {
            return Err(invalid(format!("DER at `{}` has a non-finite kvar", der.bus)));
        }
    }
    Ok(())
}

fn build_topology<T: Scalar>(parts: &FeederParts<T>) -> Result<Topology, FeederError> {
    let n = parts.buses.len();
    let mut bus_index = HashMap::with_capacity(n);
    for (i, bus) in parts.buses.iter().enumerate() {
        if bus_index.insert(bus.id.clone(), i).is_some() {
            return Err(FeederError::DuplicateBus(bus.id.clone()));
        }
    }
    let lookup = |id: &str| {
        bus_index
            .get(id)
            .copied()
            .ok_or_else(|| FeederError::UnknownBus(id.to_string()))
    };
    let source = lookup(&parts.source.bus)?;

    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (li, line) in parts.lines.iter().enumerate() {
        let a = lookup(&line.from_bus)?;
        let b = lookup(&line.to_bus)?;
        if a == b {
            return Err(FeederError::NotRadial(format!(
                "line {li} connects bus `{}` to itself",
                line.from_bus
            )));
        }
        adjacency[a].push((li, b));
        adjacency[b].push((li, a));
    }
    if parts.lines.len() + 1 != n {
        return Err(FeederError::NotRadial(format!(
            "{} lines for {} buses (a radial feeder has exactly buses - 1)",
            parts.lines.len(),
            n
        )));
    }

    let mut parent_line = vec![None; n];
    let mut visited = vec![false; n];
    let mut depth = vec![0; n];
    let mut line_ends = vec![(usize::MAX, usize::MAX); parts.lines.len()];
    let mut child_lines = vec![Vec::new(); n];
    let mut bfs_order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([source]);
    visited[source] = true;
    while let Some(u) = queue.pop_front() {
        bfs_order.push(u);
        for &(li, v) in &adjacency[u] {
            if parent_line[u] == Some(li) {
                continue;
            }
            if visited[v] {
                return Err(FeederError::NotRadial(format!(
                    "cycle found through line `{}`-`{}`",
                    parts.lines[li].from_bus, parts.lines[li].to_bus
                )));
            }
            visited[v] = true;
            parent_line[v] = Some(li);
            depth[v] = depth[u] + 1;
            line_ends[li] = (u, v);
            child_lines[u].push(li);
            queue.push_back(v);
        }
    }
    if let Some(i) = visited.iter().position(|v| !v) {
        return Err(FeederError::Unreachable(parts.buses[i].id.clone()));
    }

    let mut nodes = Vec::new();
    let mut slots = vec![[None; 3]; n];
    for &b in bfs_order.iter().filter(|&&b| b != source) {
        for p in parts.buses[b].phases.iter() {
            slots[b][p.index()] = Some(nodes.len());
            nodes.push((b, p));
        }
    }

    Ok(Topology {
        bus_index,
        source,
        bfs_order,
        parent_line,
        line_ends,
        child_lines,
        depth,
        flat: FlatIndex { nodes, slots },
    })
}

fn validate_electrical<T: Scalar>(
    parts: &FeederParts<T>,
    topo: &Topology,
) -> Result<(), FeederError> {
    for (li, line) in parts.lines.iter().enumerate() {
        let (up, down) = topo.line_ends[li];
        let shared = parts.buses[up].phases.intersection(parts.buses[down].phases);
        if line.phases.is_empty() || !line.phases.is_subset(shared) {
            return Err(FeederError::PhaseMismatch(format!(
                "line `{}`-`{}` carries phases {} but the buses share only {}",
                line.from_bus, line.to_bus, line.phases, shared
            )));
        }
        if line.phases != parts.buses[down].phases {
            return Err(FeederError::PhaseMismatch(format!(
                "bus `{}` has phases {} but is fed by a segment carrying {}",
                parts.buses[down].id, parts.buses[down].phases, line.phases
            )));
        }
        let z = &line.impedance;
        if z.dim() != line.phases.len() {
            return Err(FeederError::PhaseMismatch(format!(
                "line `{}`-`{}` has a {}x{} impedance for {} phases",
                line.from_bus,
                line.to_bus,
                z.dim(),
                z.dim(),
                line.phases.len()
            )));
        }
        if z.entries().iter().any(|e| !(e.re.is_finite() && e.im.is_finite())) {
            return Err(invalid(format!(
                "line `{}`-`{}` has a non-finite impedance",
                line.from_bus, line.to_bus
            )));
        }
        if (0..z.dim()).any(|k| z.get(k, k).re <= T::zero()) {
            return Err(invalid(format!(
                "line `{}`-`{}` needs positive self resistance",
                line.from_bus, line.to_bus
            )));
        }
    }
    for load in &parts.loads {
        let b = *topo
            .bus_index
            .get(&load.bus)
            .ok_or_else(|| FeederError::UnknownBus(load.bus.clone()))?;
        if !parts.buses[b].phases.contains(load.phase) {
            return Err(FeederError::PhaseMismatch(format!(
                "load on phase {} of bus `{}` which has phases {}",
                load.phase, load.bus, parts.buses[b].phases
            )));
        }
    }
    for der in &parts.ders {
        let b = *topo
            .bus_index
            .get(&der.bus)
            .ok_or_else(|| FeederError::UnknownBus(der.bus.clone()))?;
        if !der.phases.is_subset(parts.buses[b].phases) {
            return Err(FeederError::PhaseMismatch(format!(
                "DER on phases {} of bus `{}` which has phases {}",
                der.phases, der.bus, parts.buses[b].phases
            )));
        }
    }
    Ok(())
}
