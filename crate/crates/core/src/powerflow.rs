//! Nonlinear unbalanced power flow by backward/forward sweep.
//!
//! Loads are constant-power and wye-connected. The source bus is an infinite
//! bus at its configured magnitudes with angles 0, -120 and +120 degrees.
//! Convergence is certified by the complex power mismatch computed from the
//! candidate voltages alone ([`mismatch`]), not by the voltage update size.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{Feeder, Phase, PhaseSet};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("no convergence after {iterations} iterations; worst mismatch {worst_mismatch:.3e} p.u. at node {node}")]
    NotConverged {
        iterations: usize,
        worst_mismatch: f64,
        node: usize,
    },
    #[error("voltage collapse: |V| = {magnitude:.4} p.u. at bus `{bus}` phase {phase}")]
    Collapse {
        bus: String,
        phase: Phase,
        magnitude: f64,
    },
    #[error("non-finite entry in net-load vector at position {0}")]
    NonFinite(usize),
    #[error("singular impedance on line {0}")]
    SingularImpedance(usize),
}

/// Net injections `[p_1..p_D, q_1..q_D]` in per-unit, ordered by the feeder's flattening.
///
/// Positive values are consumption (load minus local generation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetLoadVector<T>(Vec<T>);

impl<T: Scalar> NetLoadVector<T> {
    pub fn new(values: Vec<T>, dim: usize) -> Result<Self, PfError> {
        if values.len() != 2 * dim {
            return Err(PfError::Dimension {
                expected: 2 * dim,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(PfError::NonFinite(i));
        }
        Ok(NetLoadVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        NetLoadVector(vec![T::zero(); 2 * dim])
    }

    /// Every load at its base kW/kvar, DERs off.
    pub fn from_base_loads(feeder: &Feeder<T>) -> Self {
        let d = feeder.dim();
        let mut v = vec![T::zero(); 2 * d];
        let s_base = feeder.s_base_phase();
        for load in feeder.loads() {
            let b = feeder.bus_index(&load.bus).expect("validated feeder");
            if let Some(i) = feeder.flat().position(b, load.phase) {
                v[i] += load.base_kw / s_base;
                v[d + i] += load.base_kvar / s_base;
            }
        }
        NetLoadVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len() / 2
    }

    pub fn p(&self) -> &[T] {
        &self.0[..self.dim()]
    }

    pub fn q(&self) -> &[T] {
        &self.0[self.dim()..]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn scaled(&self, factor: T) -> Self {
        NetLoadVector(self.0.iter().map(|&v| v * factor).collect())
    }

    #[inline]
    fn complex(&self, i: usize) -> Complex<T> {
        let d = self.dim();
        Complex::new(self.0[i], self.0[d + i])
    }
}

/// Per-phase-node voltage magnitudes (p.u.) and angles (rad), flattened order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PfSolution<T> {
    pub v_mag: Vec<T>,
    pub v_ang: Vec<T>,
    pub iterations: usize,
}

impl<T: Scalar> PfSolution<T> {
    pub fn dim(&self) -> usize {
        self.v_mag.len()
    }

    pub fn min_magnitude(&self) -> T {
        self.v_mag.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn phasor(&self, i: usize) -> Complex<T> {
        Complex::from_polar(self.v_mag[i], self.v_ang[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions<T> {
    /// Maximum apparent-power mismatch at any phase-node, p.u.
    pub tolerance: T,
    pub max_iterations: usize,
    /// Any magnitude below this is reported as voltage collapse.
    pub collapse_voltage: T,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        // f32 cannot resolve 1e-8 mismatches through the V_up - V_down cancellation.
        let floor = T::epsilon() * T::lit(1e4);
        SolverOptions {
            tolerance: T::lit(1e-8).max(floor),
            max_iterations: 100,
            collapse_voltage: T::lit(0.5),
        }
    }
}

type Phasors<T> = [Complex<T>; 3];
type PhaseMatrix<T> = [[Complex<T>; 3]; 3];

fn czero<T: Scalar>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Inverts the sub-block of `z` over `phases`, embedded back into a 3x3 frame.
fn invert_phase_block<T: Scalar>(z: &PhaseMatrix<T>, phases: PhaseSet) -> Option<PhaseMatrix<T>> {
    let idx: Vec<usize> = phases.iter().map(Phase::index).collect();
    let k = idx.len();
    let mut a = vec![vec![czero::<T>(); 2 * k]; k];
    for r in 0..k {
        for c in 0..k {
            a[r][c] = z[idx[r]][idx[c]];
        }
        a[r][k + r] = Complex::new(T::one(), T::zero());
    }
    for col in 0..k {
        let pivot = (col..k).max_by(|&i, &j| {
            a[i][col]
                .norm()
                .partial_cmp(&a[j][col].norm())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].norm() <= T::min_positive_value() {
            return None;
        }
        a.swap(col, pivot);
        let inv = Complex::new(T::one(), T::zero()) / a[col][col];
        for e in a[col].iter_mut() {
            *e = *e * inv;
        }
        for r in 0..k {
            if r != col {
                let f = a[r][col];
                if f != czero() {
                    for c in 0..2 * k {
                        let sub = f * a[col][c];
                        a[r][c] = a[r][c] - sub;
                    }
                }
            }
        }
    }
    let mut out = [[czero(); 3]; 3];
    for r in 0..k {
        for c in 0..k {
            out[idx[r]][idx[c]] = a[r][k + c];
        }
    }
    Some(out)
}

/// Per-unit network data compiled once per feeder and reused across solves.
#[derive(Clone, Debug)]
pub struct PowerFlowSolver<'a, T> {
    feeder: &'a Feeder<T>,
    z: Vec<PhaseMatrix<T>>,
    y: Vec<PhaseMatrix<T>>,
}

impl<'a, T: Scalar> PowerFlowSolver<'a, T> {
    pub fn new(feeder: &'a Feeder<T>) -> Result<Self, PfError> {
        let n = feeder.lines().len();
        let mut z = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for li in 0..n {
            let zl = feeder.line_z_pu(li);
            let yl = invert_phase_block(&zl, feeder.lines()[li].phases)
                .ok_or(PfError::SingularImpedance(li))?;
            z.push(zl);
            y.push(yl);
        }
        Ok(PowerFlowSolver { feeder, z, y })
    }

    pub fn feeder(&self) -> &'a Feeder<T> {
        self.feeder
    }

    fn check_dim(&self, load: &NetLoadVector<T>) -> Result<(), PfError> {
        let d = self.feeder.dim();
        if load.dim() != d || load.as_slice().len() != 2 * d {
            return Err(PfError::Dimension {
                expected: 2 * d,
                got: load.as_slice().len(),
            });
        }
        Ok(())
    }

    fn flat_start(&self) -> Vec<Phasors<T>> {
        let f = self.feeder;
        let src: Phasors<T> = [
            f.source_phasor(Phase::A),
            f.source_phasor(Phase::B),
            f.source_phasor(Phase::C),
        ];
        f.buses()
            .iter()
            .map(|b| {
                let mut v = [czero(); 3];
                for p in b.phases.iter() {
                    v[p.index()] = src[p.index()];
                }
                v
            })
            .collect()
    }

    /// Apparent-power mismatch per phase-node for bus phasors `v`.
    fn residual(&self, load: &NetLoadVector<T>, v: &[Phasors<T>]) -> Vec<T> {
        let f = self.feeder;
        let n_bus = f.buses().len();
        // Net current delivered into each bus through the network.
        let mut injected = vec![[czero::<T>(); 3]; n_bus];
        for (li, line) in f.lines().iter().enumerate() {
            let (up, down) = f.line_ends(li);
            let mut dv = [czero::<T>(); 3];
            for p in line.phases.iter() {
                dv[p.index()] = v[up][p.index()] - v[down][p.index()];
            }
            for p in line.phases.iter() {
                let r = p.index();
                let mut current = czero::<T>();
                for q in line.phases.iter() {
                    current = current + self.y[li][r][q.index()] * dv[q.index()];
                }
                injected[down][r] = injected[down][r] + current;
                injected[up][r] = injected[up][r] - current;
            }
        }
        f.flat()
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &(b, p))| {
                let consumed = v[b][p.index()] * injected[b][p.index()].conj();
                (consumed - load.complex(i)).norm()
            })
            .collect()
    }

    fn to_solution(&self, v: &[Phasors<T>], iterations: usize) -> PfSolution<T> {
        let nodes = self.feeder.flat().nodes();
        PfSolution {
            v_mag: nodes.iter().map(|&(b, p)| v[b][p.index()].norm()).collect(),
            v_ang: nodes.iter().map(|&(b, p)| v[b][p.index()].arg()).collect(),
            iterations,
        }
    }

    /// Backward/forward sweep from a flat start.
    pub fn solve(
        &self,
        load: &NetLoadVector<T>,
        opts: &SolverOptions<T>,
    ) -> Result<PfSolution<T>, PfError> {
        self.check_dim(load)?;
        let f = self.feeder;
        let flat = f.flat();
        let mut v = self.flat_start();
        let mut line_current = vec![[czero::<T>(); 3]; f.lines().len()];
        let mut node_current = vec![[czero::<T>(); 3]; f.buses().len()];
        let order = f.bfs_order();

        for iter in 0..=opts.max_iterations {
            let res = self.residual(load, &v);
            let (worst_node, worst) = res
                .iter()
                .copied()
                .enumerate()
                .fold((0, T::zero()), |acc, (i, r)| {
                    if r > acc.1 || r.is_nan() {
                        (i, r)
                    } else {
                        acc
                    }
                });
            if worst < opts.tolerance {
                return Ok(self.to_solution(&v, iter));
            }
            if iter == opts.max_iterations || worst.is_nan() {
                return Err(PfError::NotConverged {
                    iterations: iter,
                    worst_mismatch: worst.as_f64(),
                    node: worst_node,
                });
            }

            for (i, &(b, p)) in flat.nodes().iter().enumerate() {
                node_current[b][p.index()] = (load.complex(i) / v[b][p.index()]).conj();
            }
            for &b in order.iter().rev() {
                let Some(li) = f.parent_line(b) else { continue };
                let mut j = node_current[b];
                for &child in f.child_lines(b) {
                    for k in 0..3 {
                        j[k] = j[k] + line_current[child][k];
                    }
                }
                line_current[li] = j;
            }
            for &b in order {
                let Some(li) = f.parent_line(b) else { continue };
                let (up, _) = f.line_ends(li);
                let phases = f.lines()[li].phases;
                for p in phases.iter() {
                    let r = p.index();
                    let mut drop = czero::<T>();
                    for q in phases.iter() {
                        drop = drop + self.z[li][r][q.index()] * line_current[li][q.index()];
                    }
                    let vb = v[up][r] - drop;
                    let mag = vb.norm();
                    if !(mag >= opts.collapse_voltage) {
                        return Err(PfError::Collapse {
                            bus: f.buses()[b].id.clone(),
                            phase: p,
                            magnitude: mag.as_f64(),
                        });
                    }
                    v[b][r] = vb;
                }
            }
        }
        unreachable!("loop returns on its final iteration")
    }

    /// Kirchhoff residual of a candidate solution.
    pub fn mismatch(
        &self,
        load: &NetLoadVector<T>,
        candidate: &PfSolution<T>,
    ) -> Result<Vec<T>, PfError> {
        self.check_dim(load)?;
        let d = self.feeder.dim();
        if candidate.v_mag.len() != d || candidate.v_ang.len() != d {
            return Err(PfError::Dimension {
                expected: d,
                got: candidate.v_mag.len().min(candidate.v_ang.len()),
            });
        }
        let mut v = self.flat_start();
        for (i, &(b, p)) in self.feeder.flat().nodes().iter().enumerate() {
            v[b][p.index()] = candidate.phasor(i);
        }
        Ok(self.residual(load, &v))
    }
}

/// Solves `z = F(s)` for one net-load vector.
pub fn solve_nonlinear<T: Scalar>(
    feeder: &Feeder<T>,
    load: &NetLoadVector<T>,
    opts: &SolverOptions<T>,
) -> Result<PfSolution<T>, PfError> {
    PowerFlowSolver::new(feeder)?.solve(load, opts)
}

/// Per-phase-node apparent-power mismatch `|V conj(I_net) - s|` of `candidate`.
pub fn mismatch<T: Scalar>(
    feeder: &Feeder<T>,
    load: &NetLoadVector<T>,
    candidate: &PfSolution<T>,
) -> Result<Vec<T>, PfError> {
    PowerFlowSolver::new(feeder)?.mismatch(load, candidate)
}
