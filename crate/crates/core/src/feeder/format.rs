//! Plain-text feeder description.
//!
//! ```text
//! # comment
//! [source]
//! bus = 150
//! voltage = 1.0 1.0 1.0      # one value, or one per phase (p.u.)
//! base_kv = 4.16             # line-to-line
//! base_kva = 1000            # three-phase
//!
//! [bus]
//! # id  phases  [v_min v_max]
//! 150  abc
//! 1    a   0.95 1.05
//!
//! [line]
//! # from  to  phases  impedance (ohms): k diagonal entries or k*k row-major
//! 150  1  a  0.2+j0.4
//!
//! [load]
//! # bus  phase  kw  kvar  loadshape
//! 1  a  40  20  residential
//!
//! [der]
//! # bus  phases  kw  [kvar]
//! 1  a  30
//! ```
//!
//! Complex numbers are written `r+jx` or `r-jx`. [`emit_feeder`] prints every
//! numeric field in scientific notation with nine significant digits, so a
//! document it produced parses back to bit-identical values.

use std::fmt::Write as _;
use std::str::FromStr;

use num_complex::Complex;

use super::{
    Bus, DerUnit, Feeder, FeederError, FeederParts, ImpedanceMatrix, LineSegment, LoadPoint,
    Phase, PhaseSet, SourceSpec,
};
use crate::scalar::Scalar;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Section {
    None,
    Source,
    Bus,
    Line,
    Load,
    Der,
}

fn perr(line: usize, field: &str, message: impl Into<String>) -> FeederError {
    FeederError::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_num<T: Scalar>(tok: &str, line: usize, field: &str) -> Result<T, FeederError> {
    let v = T::from_str(tok).map_err(|_| perr(line, field, format!("`{tok}` is not a number")))?;
    if !v.is_finite() {
        return Err(perr(line, field, format!("`{tok}` is not finite")));
    }
    Ok(v)
}

fn parse_complex<T: Scalar>(tok: &str, line: usize, field: &str) -> Result<Complex<T>, FeederError> {
    let Some(j) = tok.find(['j', 'J']) else {
        return Ok(Complex::new(parse_num(tok, line, field)?, T::zero()));
    };
    if j == 0 {
        return Err(perr(line, field, format!("`{tok}` lacks a real part")));
    }
    let sign = &tok[j - 1..j];
    let re_part = &tok[..j - 1];
    let im_part = &tok[j + 1..];
    let im: T = match sign {
        "+" => parse_num(im_part, line, field)?,
        "-" => -parse_num::<T>(im_part, line, field)?,
        _ => return Err(perr(line, field, format!("`{tok}` is not of the form r+jx"))),
    };
    Ok(Complex::new(parse_num(re_part, line, field)?, im))
}

fn parse_phases(tok: &str, line: usize, field: &str) -> Result<PhaseSet, FeederError> {
    PhaseSet::parse(tok).ok_or_else(|| perr(line, field, format!("`{tok}` is not a phase set")))
}

#[derive(Default)]
struct SourceDraft<T> {
    bus: Option<String>,
    voltage: Option<[T; 3]>,
    base_kv: Option<T>,
    base_kva: Option<T>,
}

/// Parses and validates a feeder description.
pub fn load_feeder<T: Scalar>(text: &str) -> Result<Feeder<T>, FeederError> {
    let mut section = Section::None;
    let mut src = SourceDraft::<T>::default();
    let mut buses = Vec::new();
    let mut lines = Vec::new();
    let mut loads = Vec::new();
    let mut ders = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let ln = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = match name.trim() {
                "source" => Section::Source,
                "bus" => Section::Bus,
                "line" => Section::Line,
                "load" => Section::Load,
                "der" => Section::Der,
                other => return Err(perr(ln, "section", format!("unknown section `[{other}]`"))),
            };
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        match section {
            Section::None => return Err(perr(ln, "section", "record before any section header")),
            Section::Source => {
                let (key, value) = content
                    .split_once('=')
                    .ok_or_else(|| perr(ln, "source", "expected `key = value`"))?;
                let key = key.trim();
                let vals: Vec<&str> = value.split_whitespace().collect();
                let single = |field: &str| -> Result<&str, FeederError> {
                    match vals.as_slice() {
                        [v] => Ok(*v),
                        _ => Err(perr(ln, field, "expected exactly one value")),
                    }
                };
                match key {
                    "bus" => src.bus = Some(single("bus")?.to_string()),
                    "voltage" => {
                        let v = match vals.as_slice() {
                            [a] => {
                                let a = parse_num(a, ln, "voltage")?;
                                [a, a, a]
                            }
                            [a, b, c] => [
                                parse_num(a, ln, "voltage")?,
                                parse_num(b, ln, "voltage")?,
                                parse_num(c, ln, "voltage")?,
                            ],
                            _ => return Err(perr(ln, "voltage", "expected 1 or 3 values")),
                        };
                        src.voltage = Some(v);
                    }
                    "base_kv" => src.base_kv = Some(parse_num(single("base_kv")?, ln, "base_kv")?),
                    "base_kva" => {
                        src.base_kva = Some(parse_num(single("base_kva")?, ln, "base_kva")?)
                    }
                    other => return Err(perr(ln, "source", format!("unknown key `{other}`"))),
                }
            }
            Section::Bus => {
                let mut bus = match toks.as_slice() {
                    [id, ph, ..] => Bus::new(*id, parse_phases(ph, ln, "phases")?),
                    _ => return Err(perr(ln, "bus", "expected `id phases [v_min v_max]`")),
                };
                match &toks[2..] {
                    [] => {}
                    [lo, hi] => {
                        bus.v_min = parse_num(lo, ln, "v_min")?;
                        bus.v_max = parse_num(hi, ln, "v_max")?;
                    }
                    _ => return Err(perr(ln, "bus", "expected `id phases [v_min v_max]`")),
                }
                buses.push(bus);
            }
            Section::Line => {
                let [from, to, ph, zs @ ..] = toks.as_slice() else {
                    return Err(perr(ln, "line", "expected `from to phases z...`"));
                };
                let phases = parse_phases(ph, ln, "phases")?;
                let k = phases.len();
                let entries = zs
                    .iter()
                    .map(|t| parse_complex(t, ln, "impedance"))
                    .collect::<Result<Vec<_>, _>>()?;
                let impedance = if entries.len() == k {
                    ImpedanceMatrix::diagonal(entries)
                } else if entries.len() == k * k {
                    ImpedanceMatrix::new(k, entries)?
                } else {
                    return Err(perr(
                        ln,
                        "impedance",
                        format!(
                            "{k} phases need {k} or {} impedance entries, got {}",
                            k * k,
                            entries.len()
                        ),
                    ));
                };
                lines.push(LineSegment {
                    from_bus: from.to_string(),
                    to_bus: to.to_string(),
                    phases,
                    impedance,
                });
            }
            Section::Load => {
                let [bus, ph, kw, kvar, shape] = toks.as_slice() else {
                    return Err(perr(ln, "load", "expected `bus phase kw kvar loadshape`"));
                };
                let mut chars = ph.chars();
                let phase = match (chars.next().and_then(Phase::from_label), chars.next()) {
                    (Some(p), None) => p,
                    _ => return Err(perr(ln, "phase", format!("`{ph}` is not a single phase"))),
                };
                loads.push(LoadPoint {
                    bus: bus.to_string(),
                    phase,
                    base_kw: parse_num(kw, ln, "kw")?,
                    base_kvar: parse_num(kvar, ln, "kvar")?,
                    loadshape: shape.to_string(),
                });
            }
            Section::Der => {
                let (bus, ph, kw, kvar) = match toks.as_slice() {
                    [bus, ph, kw] => (bus, ph, kw, None),
                    [bus, ph, kw, kvar] => (bus, ph, kw, Some(kvar)),
                    _ => return Err(perr(ln, "der", "expected `bus phases kw [kvar]`")),
                };
                ders.push(DerUnit {
                    bus: bus.to_string(),
                    phases: parse_phases(ph, ln, "phases")?,
                    rated_kw: parse_num(kw, ln, "kw")?,
                    q_setpoint_kvar: kvar.map(|q| parse_num(q, ln, "kvar")).transpose()?,
                });
            }
        }
    }

    let missing = |field: &str| perr(0, field, "missing from [source]");
    let source = SourceSpec {
        bus: src.bus.ok_or_else(|| missing("bus"))?,
        voltage: src.voltage.unwrap_or([T::one(); 3]),
        base_kv: src.base_kv.ok_or_else(|| missing("base_kv"))?,
        base_kva: src.base_kva.ok_or_else(|| missing("base_kva"))?,
    };
    Feeder::new(FeederParts {
        source,
        buses,
        lines,
        loads,
        ders,
    })
}

/// Nine significant digits in scientific notation.
pub(crate) fn fmt_num<T: Scalar>(x: T) -> String {
    format!("{x:.8e}")
}

/// Rounds to the nine significant digits used by [`emit_feeder`].
pub(crate) fn round_sig<T: Scalar>(x: T) -> T {
    T::from_str(&fmt_num(x)).unwrap_or(x)
}

fn fmt_complex<T: Scalar>(z: Complex<T>) -> String {
    let sign = if z.im.is_sign_negative() { '-' } else { '+' };
    format!("{}{}j{}", fmt_num(z.re), sign, fmt_num(z.im.abs()))
}

/// Writes a feeder description that [`load_feeder`] reads back losslessly.
pub fn emit_feeder<T: Scalar>(feeder: &Feeder<T>) -> String {
    let p = feeder.parts();
    let mut out = String::new();
    let s = &p.source;
    let _ = writeln!(out, "[source]");
    let _ = writeln!(out, "bus = {}", s.bus);
    let _ = writeln!(
        out,
        "voltage = {} {} {}",
        fmt_num(s.voltage[0]),
        fmt_num(s.voltage[1]),
        fmt_num(s.voltage[2])
    );
    let _ = writeln!(out, "base_kv = {}", fmt_num(s.base_kv));
    let _ = writeln!(out, "base_kva = {}", fmt_num(s.base_kva));

    let _ = writeln!(out, "\n[bus]");
    for b in &p.buses {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            b.id,
            b.phases,
            fmt_num(b.v_min),
            fmt_num(b.v_max)
        );
    }

    let _ = writeln!(out, "\n[line]");
    for l in &p.lines {
        let z = &l.impedance;
        let entries: Vec<String> = if z.is_diagonal() {
            (0..z.dim()).map(|k| fmt_complex(z.get(k, k))).collect()
        } else {
            z.entries().iter().map(|e| fmt_complex(*e)).collect()
        };
        let _ = writeln!(
            out,
            "{} {} {} {}",
            l.from_bus,
            l.to_bus,
            l.phases,
            entries.join(" ")
        );
    }

    let _ = writeln!(out, "\n[load]");
    for l in &p.loads {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            l.bus,
            l.phase,
            fmt_num(l.base_kw),
            fmt_num(l.base_kvar),
            l.loadshape
        );
    }

    let _ = writeln!(out, "\n[der]");
    for d in &p.ders {
        match d.q_setpoint_kvar {
            Some(q) => {
                let _ = writeln!(
                    out,
                    "{} {} {} {}",
                    d.bus,
                    d.phases,
                    fmt_num(d.rated_kw),
                    fmt_num(q)
                );
            }
            None => {
                let _ = writeln!(out, "{} {} {}", d.bus, d.phases, fmt_num(d.rated_kw));
            }
        }
    }
    out
}

impl<T: Scalar> FromStr for Feeder<T> {
    type Err = FeederError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        load_feeder(s)
    }
}
