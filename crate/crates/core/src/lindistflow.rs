//! Linearized multiphase branch-flow model (LinDistFlow).
//!
//! Flows are accumulated leaf-to-source without losses, per phase. Squared
//! voltage magnitudes then follow from the source outward with the full
//! phase-coupled drop `2 Re[S^{pq} conj(z^{pq})]`, where the off-diagonal flow
//! terms are the same-phase flows rotated by the nominal angle difference
//! between the two phases.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{Feeder, Phase};
use crate::powerflow::NetLoadVector;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdfError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("squared voltage {value:.4e} at node {node} is not positive; the linear model broke down")]
    Breakdown { node: usize, value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdfSolution<T> {
    /// Squared voltage magnitude per phase-node, p.u.^2, flattened order.
    pub v_sq: Vec<T>,
    /// Real power flow per line, indexed `[line][phase]`, p.u.
    pub p_flow: Vec<[T; 3]>,
    /// Reactive power flow per line, indexed `[line][phase]`, p.u.
    pub q_flow: Vec<[T; 3]>,
}

/// Phase-coupled squared-voltage drop across `line` for the given diagonal flows.
fn voltage_drop<T: Scalar>(feeder: &Feeder<T>, line: usize, p: &[T; 3], q: &[T; 3]) -> [T; 3] {
    let z = feeder.line_z_pu(line);
    let phases = feeder.lines()[line].phases;
    let two = T::lit(2.0);
    let mut out = [T::zero(); 3];
    for rho in phases.iter() {
        let mut acc = T::zero();
        for sigma in phases.iter() {
            let rot = rho.nominal_angle::<T>() - sigma.nominal_angle::<T>();
            let s = Complex::from_polar(T::one(), rot)
                * Complex::new(p[sigma.index()], q[sigma.index()]);
            acc += two * (s * z[rho.index()][sigma.index()].conj()).re;
        }
        out[rho.index()] = acc;
    }
    out
}

fn check_dim<T: Scalar>(feeder: &Feeder<T>, load: &NetLoadVector<T>) -> Result<(), LdfError> {
    if load.as_slice().len() != feeder.input_dim() {
        return Err(LdfError::Dimension {
            expected: feeder.input_dim(),
            got: load.as_slice().len(),
        });
    }
    Ok(())
}

fn node_load<T: Scalar>(feeder: &Feeder<T>, load: &NetLoadVector<T>, bus: usize) -> ([T; 3], [T; 3]) {
    let mut p = [T::zero(); 3];
    let mut q = [T::zero(); 3];
    for ph in Phase::ALL {
        if let Some(i) = feeder.flat().position(bus, ph) {
            p[ph.index()] = load.p()[i];
            q[ph.index()] = load.q()[i];
        }
    }
    (p, q)
}

pub fn solve_ldf<T: Scalar>(
    feeder: &Feeder<T>,
    load: &NetLoadVector<T>,
) -> Result<LdfSolution<T>, LdfError> {
    check_dim(feeder, load)?;
    let n_lines = feeder.lines().len();
    let mut p_flow = vec![[T::zero(); 3]; n_lines];
    let mut q_flow = vec![[T::zero(); 3]; n_lines];
    let order = feeder.bfs_order();

    for &b in order.iter().rev() {
        let Some(li) = feeder.parent_line(b) else { continue };
        let (mut p, mut q) = node_load(feeder, load, b);
        for &child in feeder.child_lines(b) {
            for k in 0..3 {
                p[k] += p_flow[child][k];
                q[k] += q_flow[child][k];
            }
        }
        p_flow[li] = p;
        q_flow[li] = q;
    }

    let n_bus = feeder.buses().len();
    let mut bus_v_sq = vec![[T::zero(); 3]; n_bus];
    let src = feeder.source_index();
    for ph in feeder.buses()[src].phases.iter() {
        let v = feeder.source().voltage[ph.index()];
        bus_v_sq[src][ph.index()] = v * v;
    }
    for &b in order {
        let Some(li) = feeder.parent_line(b) else { continue };
        let (up, _) = feeder.line_ends(li);
        let drop = voltage_drop(feeder, li, &p_flow[li], &q_flow[li]);
        for ph in feeder.lines()[li].phases.iter() {
            bus_v_sq[b][ph.index()] = bus_v_sq[up][ph.index()] - drop[ph.index()];
        }
    }
    let v_sq = feeder
        .flat()
        .nodes()
        .iter()
        .map(|&(b, ph)| bus_v_sq[b][ph.index()])
        .collect();
    Ok(LdfSolution {
        v_sq,
        p_flow,
        q_flow,
    })
}

/// Voltage magnitudes from squared magnitudes.
pub fn ldf_voltage_mag<T: Scalar>(sol: &LdfSolution<T>) -> Result<Vec<T>, LdfError> {
    sol.v_sq
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v > T::zero() {
                Ok(v.sqrt())
            } else {
                Err(LdfError::Breakdown {
                    node: i,
                    value: v.as_f64(),
                })
            }
        })
        .collect()
}

/// Largest absolute residual of the power-balance and voltage-drop equations.
pub fn ldf_residual<T: Scalar>(
    feeder: &Feeder<T>,
    load: &NetLoadVector<T>,
    sol: &LdfSolution<T>,
) -> Result<T, LdfError> {
    check_dim(feeder, load)?;
    if sol.v_sq.len() != feeder.dim() || sol.p_flow.len() != feeder.lines().len() {
        return Err(LdfError::Dimension {
            expected: feeder.dim(),
            got: sol.v_sq.len(),
        });
    }
    let mut worst = T::zero();
    let flat = feeder.flat();
    for (li, line) in feeder.lines().iter().enumerate() {
        let (up, down) = feeder.line_ends(li);
        let (pl, ql) = node_load(feeder, load, down);
        let drop = voltage_drop(feeder, li, &sol.p_flow[li], &sol.q_flow[li]);
        for ph in line.phases.iter() {
            let k = ph.index();
            let (mut p_out, mut q_out) = (T::zero(), T::zero());
            for &child in feeder.child_lines(down) {
                p_out += sol.p_flow[child][k];
                q_out += sol.q_flow[child][k];
            }
            worst = worst.max((sol.p_flow[li][k] - pl[k] - p_out).abs());
            worst = worst.max((sol.q_flow[li][k] - ql[k] - q_out).abs());

            let v_up = match flat.position(up, ph) {
                Some(i) => sol.v_sq[i],
                None => {
                    let v = feeder.source().voltage[k];
                    v * v
                }
            };
            let v_down = sol.v_sq[flat.position(down, ph).expect("line phase exists at bus")];
            worst = worst.max((v_up - v_down - drop[k]).abs());
        }
    }
    Ok(worst)
}
