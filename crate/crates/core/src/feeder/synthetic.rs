//! Seeded random radial feeders for desk-scale and scalability experiments.

use num_complex::Complex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::format::round_sig;
use super::{
    Bus, DerUnit, Feeder, FeederError, FeederParts, ImpedanceMatrix, LineSegment, LoadPoint,
    Phase, PhaseSet, SourceSpec,
};
use crate::powerflow::{NetLoadVector, PowerFlowSolver, SolverOptions};
use crate::scalar::Scalar;

pub const LOADSHAPE_CLASSES: [&str; 3] = ["residential", "commercial", "industrial"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMix {
    /// Every bus on phase `a`.
    Single,
    /// Every bus three-phase.
    Three,
    /// Three-phase trunk with one- and two-phase laterals.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Total bus count including the source.
    pub buses: usize,
    pub phase_mix: PhaseMix,
    pub ders: usize,
    pub seed: u64,
    /// Probability that a phase of a non-source bus carries a load.
    pub load_fraction: f64,
    /// Base loads are scaled so the lowest base-load voltage lands here.
    pub target_min_voltage: f64,
    /// Probability that a new bus extends the most recent one rather than a random bus.
    pub chain_bias: f64,
}

impl SyntheticSpec {
    pub fn new(buses: usize, phase_mix: PhaseMix, ders: usize, seed: u64) -> Self {
        SyntheticSpec {
            buses,
            phase_mix,
            ders,
            seed,
            load_fraction: 1.0,
            target_min_voltage: 0.96,
            chain_bias: 0.7,
        }
    }
}

fn spec_err(msg: impl Into<String>) -> FeederError {
    FeederError::InvalidSpec(msg.into())
}

fn random_subset(rng: &mut ChaCha8Rng, within: PhaseSet) -> PhaseSet {
    let phases: Vec<Phase> = within.iter().collect();
    loop {
        let pick = PhaseSet::from_phases(phases.iter().copied().filter(|_| rng.random_bool(0.5)));
        if !pick.is_empty() {
            return pick;
        }
    }
}

fn child_phases(rng: &mut ChaCha8Rng, mix: PhaseMix, parent: PhaseSet) -> PhaseSet {
    match mix {
        PhaseMix::Single => PhaseSet::single(Phase::A),
        PhaseMix::Three => PhaseSet::ABC,
        PhaseMix::Mixed => {
            if parent.len() == 3 && rng.random_bool(0.6) {
                PhaseSet::ABC
            } else if parent.len() > 1 && rng.random_bool(0.5) {
                parent
            } else {
                let single = random_subset(rng, parent);
                if single.len() == parent.len() && parent.len() == 3 {
                    // keep laterals genuinely partial
                    PhaseSet::single(parent.iter().nth(rng.random_range(0..3)).unwrap())
                } else {
                    single
                }
            }
        }
    }
}

fn segment_impedance<T: Scalar>(rng: &mut ChaCha8Rng, k: usize) -> ImpedanceMatrix<T> {
    let r_self: f64 = rng.random_range(0.02..0.3);
    let x_self = r_self * rng.random_range(1.0..2.5);
    let mut entries = Vec::with_capacity(k * k);
    for row in 0..k {
        for col in 0..k {
            let (r, x) = if row == col {
                (r_self, x_self)
            } else {
                (0.3 * r_self, 0.4 * x_self)
            };
            entries.push(Complex::new(round_sig(T::lit(r)), round_sig(T::lit(x))));
        }
    }
    ImpedanceMatrix::new(k, entries).expect("square by construction")
}

/// Random radial feeder reproducible from `spec.seed`.
///
/// Segment impedances fall in 0.01..1.0 ohm. Base loads are rescaled so the
/// minimum voltage with every load at base and DERs off equals
/// `spec.target_min_voltage`, then rounded to nine significant digits so the
/// emitted document reloads to the identical feeder.
pub fn generate_synthetic_feeder<T: Scalar>(spec: &SyntheticSpec) -> Result<Feeder<T>, FeederError> {
    if spec.buses < 2 {
        return Err(spec_err("bus count must be at least 2"));
    }
    if !(0.0..=1.0).contains(&spec.load_fraction) {
        return Err(spec_err("load_fraction must lie in [0, 1]"));
    }
    if !(0.5..1.0).contains(&spec.target_min_voltage) {
        return Err(spec_err("target_min_voltage must lie in [0.5, 1)"));
    }
    if !(0.0..=1.0).contains(&spec.chain_bias) {
        return Err(spec_err("chain_bias must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let source_phases = match spec.phase_mix {
        PhaseMix::Single => PhaseSet::single(Phase::A),
        _ => PhaseSet::ABC,
    };
    let mut buses = vec![Bus::<T>::new("src", source_phases)];
    let mut lines = Vec::new();
    for k in 1..spec.buses {
        let parent = if k == 1 || rng.random_bool(spec.chain_bias) {
            k - 1
        } else {
            rng.random_range(0..k)
        };
        let phases = child_phases(&mut rng, spec.phase_mix, buses[parent].phases);
        let id = format!("n{k}");
        lines.push(LineSegment {
            from_bus: buses[parent].id.clone(),
            to_bus: id.clone(),
            phases,
            impedance: segment_impedance(&mut rng, phases.len()),
        });
        buses.push(Bus::new(id, phases));
    }

    let mut loads = Vec::new();
    for bus in buses.iter().skip(1) {
        for p in bus.phases.iter() {
            if rng.random_bool(spec.load_fraction) {
                let kw: f64 = rng.random_range(10.0..50.0);
                let pf: f64 = rng.random_range(0.85..0.98);
                let kvar = kw * pf.acos().tan();
                loads.push(LoadPoint {
                    bus: bus.id.clone(),
                    phase: p,
                    base_kw: T::lit(kw),
                    base_kvar: T::lit(kvar),
                    loadshape: LOADSHAPE_CLASSES[rng.random_range(0..3)].to_string(),
                });
            }
        }
    }

    let mut candidates: Vec<usize> = (1..buses.len()).collect();
    candidates.shuffle(&mut rng);
    if spec.ders > candidates.len() {
        return Err(spec_err(format!(
            "{} DERs requested but only {} non-source buses",
            spec.ders,
            candidates.len()
        )));
    }
    let mut der_sites: Vec<(usize, PhaseSet, f64)> = Vec::new();
    for &b in candidates.iter().take(spec.ders) {
        let bus = &buses[b];
        let phases = if bus.phases.len() == 3 && rng.random_bool(0.3) {
            PhaseSet::ABC
        } else {
            let ps: Vec<Phase> = bus.phases.iter().collect();
            PhaseSet::single(ps[rng.random_range(0..ps.len())])
        };
        let sizing: f64 = rng.random_range(0.6..1.2);
        der_sites.push((b, phases, sizing));
    }

    let source = SourceSpec {
        bus: "src".into(),
        voltage: [T::one(); 3],
        base_kv: T::lit(4.16),
        base_kva: T::lit(1000.0),
    };
    let mut parts = FeederParts {
        source,
        buses,
        lines,
        loads,
        ders: Vec::new(),
    };

    let scale = calibrate_load_scale(&parts, T::lit(spec.target_min_voltage))?;
    for load in &mut parts.loads {
        load.base_kw = round_sig(load.base_kw * scale);
        load.base_kvar = round_sig(load.base_kvar * scale);
    }
    for (b, phases, sizing) in der_sites {
        let id = &parts.buses[b].id;
        let local: T = parts
            .loads
            .iter()
            .filter(|l| &l.bus == id)
            .fold(T::zero(), |acc, l| acc + l.base_kw);
        let rated = if local > T::zero() {
            local * T::lit(sizing)
        } else {
            T::lit(20.0 * sizing) * scale
        };
        parts.ders.push(DerUnit {
            bus: id.clone(),
            phases,
            rated_kw: round_sig(rated),
            q_setpoint_kvar: None,
        });
    }
    Feeder::new(parts)
}

/// Bisection on a global load multiplier so the base-load minimum voltage hits `target`.
fn calibrate_load_scale<T: Scalar>(parts: &FeederParts<T>, target: T) -> Result<T, FeederError> {
    if parts.loads.is_empty() {
        return Ok(T::one());
    }
    let feeder = Feeder::new(parts.clone())?;
    let solver = PowerFlowSolver::new(&feeder).map_err(|e| spec_err(e.to_string()))?;
    let base = NetLoadVector::from_base_loads(&feeder);
    let opts = SolverOptions::default();
    let min_v = |s: T| -> Option<T> {
        solver
            .solve(&base.scaled(s), &opts)
            .ok()
            .map(|sol| sol.min_magnitude())
    };
    let (mut lo, mut hi) = (T::zero(), T::one());
    while min_v(hi).is_some_and(|v| v > target) {
        lo = hi;
        hi = hi * T::lit(2.0);
        if hi > T::lit(1e12) {
            return Err(spec_err("could not calibrate load level"));
        }
    }
    for _ in 0..60 {
        let mid = (lo + hi) / T::lit(2.0);
        match min_v(mid) {
            Some(v) if v > target => lo = mid,
            _ => hi = mid,
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::{emit_feeder, load_feeder};

    #[test]
    fn smallest_feeder() {
        let f: Feeder<f64> =
            generate_synthetic_feeder(&SyntheticSpec::new(2, PhaseMix::Single, 0, 0)).unwrap();
        assert_eq!(f.buses().len(), 2);
        assert_eq!(f.lines().len(), 1);
        assert_eq!(f.dim(), 1);
    }

    #[test]
    fn mixed_feeder_with_ders_is_valid_and_reproducible() {
        let spec = SyntheticSpec::new(25, PhaseMix::Mixed, 10, 7);
        let a: Feeder<f64> = generate_synthetic_feeder(&spec).unwrap();
        let b: Feeder<f64> = generate_synthetic_feeder(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.ders().len(), 10);
        assert_eq!(a.lines().len(), 24);
        let lens: Vec<usize> = a.buses().iter().map(|b| b.phases.len()).collect();
        assert!(lens.contains(&3) && lens.iter().any(|&l| l < 3));
        for line in a.lines() {
            for z in line.impedance.entries() {
                let m = z.norm();
                assert!(m == 0.0 || (0.005..=1.0).contains(&m), "{m}");
            }
        }
    }

    #[test]
    fn generated_documents_reload_identically() {
        let f: Feeder<f64> =
            generate_synthetic_feeder(&SyntheticSpec::new(40, PhaseMix::Mixed, 5, 3)).unwrap();
        let g: Feeder<f64> = load_feeder(&emit_feeder(&f)).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn calibration_hits_target_voltage() {
        let spec = SyntheticSpec::new(30, PhaseMix::Three, 0, 11);
        let f: Feeder<f64> = generate_synthetic_feeder(&spec).unwrap();
        let sol = crate::powerflow::solve_nonlinear(
            &f,
            &NetLoadVector::from_base_loads(&f),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((sol.min_magnitude() - 0.96).abs() < 1e-4, "{}", sol.min_magnitude());
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(generate_synthetic_feeder::<f64>(&SyntheticSpec::new(1, PhaseMix::Single, 0, 0)).is_err());
        assert!(generate_synthetic_feeder::<f64>(&SyntheticSpec::new(3, PhaseMix::Single, 5, 0)).is_err());
        let mut s = SyntheticSpec::new(5, PhaseMix::Single, 0, 0);
        s.load_fraction = 2.0;
        assert!(generate_synthetic_feeder::<f64>(&s).is_err());
    }
}
