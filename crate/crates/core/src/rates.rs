//! Closed-form separation rates.
//!
//! Upper bounds come with either the explicit constants of the proofs or
//! with every constant set to one ([`Constants::Normalized`]). Lower bounds
//! and the per-family expressions always use unit constants. `log` is the
//! natural logarithm.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::distributions::{descending_order, make_family, tail_mass, FamilyKind, FamilySpec, ProbVector};
use crate::error::{Error, Result};
use crate::privacy::PrivacyParams;
use crate::teststats::{sorted_tail_sums, Mode, Norm, SupportSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Upper,
    Lower,
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundKind::Upper => "upper",
            BoundKind::Lower => "lower",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub value: f64,
    pub kind: BoundKind,
    pub mode: Mode,
    pub norm: Norm,
    pub source: String,
    pub j_achieving: Option<usize>,
}

/// How the constants of the upper bounds are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constants {
    /// The constants of the proofs. `c` is the constant in the lower bound
    /// on the mean of `D_n`; it only enters the interactive bounds.
    Explicit { c: f64 },
    /// Every constant set to one and `γ` dropped.
    Normalized,
}

impl Constants {
    fn label(&self) -> String {
        match self {
            Constants::Explicit { c } => format!("explicit constants, c = {c}"),
            Constants::Normalized => "rate, constants normalized".to_string(),
        }
    }
}

/// `max{(4/γ)^{1/2} 2(e+1)/((e−1)c), 2560/(e^{1/2} c² γ)}`.
pub fn interactive_constant(gamma: f64, c: f64) -> f64 {
    let e = std::f64::consts::E;
    let first = (4.0 / gamma).sqrt() * 2.0 * (e + 1.0) / ((e - 1.0) * c);
    let second = 2560.0 / (e.sqrt() * c * c * gamma);
    first.max(second)
}

fn check_n_alpha(n: usize, alpha: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha = {alpha} must lie in (0, 1]")));
    }
    Ok(())
}

/// Right-hand side of the upper bound for a support of size `b_size` with
/// tail mass `tail`.
fn upper_value(
    b_size: usize,
    tail: f64,
    n: usize,
    params: &PrivacyParams,
    norm: Norm,
    mode: Mode,
    constants: Constants,
) -> Result<f64> {
    let nf = n as f64;
    let a2 = params.alpha * params.alpha;
    let g = params.gamma;
    let b = b_size as f64;
    let root = (nf * a2).sqrt();
    let v = match (constants, mode, norm) {
        (Constants::Explicit { .. }, Mode::Noninteractive, _) => {
            if n < 2 {
                return Err(Error::invalid("the non-interactive bound needs n >= 2"));
            }
            let power = if norm == Norm::L1 { b.powi(3) } else { b };
            let main = 12.0 * (power / (nf * (nf - 1.0) * a2 * a2 * g * g)).powf(0.25);
            8.0 * main.max(tail)
        }
        (Constants::Explicit { c }, Mode::Interactive, Norm::L1) => {
            let k = interactive_constant(g, c);
            8.0 * ((b / (nf * a2)).sqrt() * k).max(tail)
        }
        (Constants::Explicit { c }, Mode::Interactive, Norm::L2) => interactive_constant(g, c) / root,
        (Constants::Normalized, Mode::Noninteractive, Norm::L1) => (b.powf(0.75) / root).max(tail),
        (Constants::Normalized, Mode::Noninteractive, Norm::L2) => (b.powf(0.25) / root).max(tail),
        (Constants::Normalized, Mode::Interactive, Norm::L1) => (b.sqrt() / root).max(tail),
        (Constants::Normalized, Mode::Interactive, Norm::L2) => 1.0 / root,
    };
    Ok(v)
}

/// Upper bound on the separation radius.
///
/// With `b = None` the bound is minimized over the top-`j` supports of the
/// descending reordering of `p0`, and `j_achieving` records the minimizer.
pub fn upper_bound(
    p0: &ProbVector,
    n: usize,
    params: &PrivacyParams,
    norm: Norm,
    mode: Mode,
    b: Option<&SupportSet>,
    constants: Constants,
) -> Result<RateBound> {
    params.validate()?;
    check_n_alpha(n, params.alpha)?;
    if let Constants::Explicit { c } = constants {
        if !(c > 0.0 && c < 1.0) && mode == Mode::Interactive {
            return Err(Error::invalid(format!("c = {c} must lie in (0, 1)")));
        }
    }
    let source = match mode {
        Mode::Noninteractive => "non-interactive upper bound",
        Mode::Interactive => "interactive upper bound",
    };
    let make = |value: f64, j: Option<usize>| RateBound {
        value,
        kind: BoundKind::Upper,
        mode,
        norm,
        source: format!("{source}; {}", constants.label()),
        j_achieving: j,
    };
    if let Some(b) = b {
        let tail = tail_mass(p0, b)?;
        let v = upper_value(b.len(), tail, n, params, norm, mode, constants)?;
        return Ok(make(v, None));
    }
    let (_, tails) = sorted_tail_sums(p0);
    let mut best = (f64::INFINITY, 1);
    for j in 1..=p0.d() {
        let v = upper_value(j, tails[j], n, params, norm, mode, constants)?;
        if v < best.0 {
            best = (v, j);
        }
    }
    Ok(make(best.0, Some(best.1)))
}

/// The exponent pair `(a, b)` in `min{j^a/√(nα²), j^b p_0(j)/√log(2j)}`.
fn lower_exponents(norm: Norm, mode: Mode) -> Option<(f64, f64)> {
    match (mode, norm) {
        (Mode::Noninteractive, Norm::L1) => Some((0.75, 1.0)),
        (Mode::Noninteractive, Norm::L2) => Some((0.25, 0.5)),
        (Mode::Interactive, Norm::L1) => Some((0.5, 0.0)),
        (Mode::Interactive, Norm::L2) => None,
    }
}

/// Lower bound on the separation radius with unit constants, scanned over
/// `j = 1..d` on the descending reordering of `p0`.
pub fn lower_bound(p0: &ProbVector, n: usize, alpha: f64, norm: Norm, mode: Mode) -> Result<RateBound> {
    check_n_alpha(n, alpha)?;
    let root = (n as f64 * alpha * alpha).sqrt();
    let source = match mode {
        Mode::Noninteractive => "non-interactive lower bound; rate, constants normalized",
        Mode::Interactive => "interactive lower bound; rate, constants normalized",
    };
    let Some((a, b)) = lower_exponents(norm, mode) else {
        return Ok(RateBound {
            value: 1.0 / root,
            kind: BoundKind::Lower,
            mode,
            norm,
            source: source.to_string(),
            j_achieving: None,
        });
    };
    let order = descending_order(p0);
    let mut best = (f64::NEG_INFINITY, 1);
    for (k, &idx) in order.iter().enumerate() {
        let j = (k + 1) as f64;
        let first = j.powf(a) / root;
        let second = j.powf(b) * p0.get(idx) / (2.0 * j).ln().sqrt();
        let v = first.min(second);
        if v > best.0 {
            best = (v, k + 1);
        }
    }
    Ok(RateBound {
        value: best.0,
        kind: BoundKind::Lower,
        mode,
        norm,
        source: source.to_string(),
        j_achieving: Some(best.1),
    })
}

/// The indices `ℓ_*`, `ℓ_**` and `ℓ̃`; `None` when no `j` qualifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorollaryIndices {
    pub l_star: Option<usize>,
    pub l_starstar: Option<usize>,
    pub l_tilde: Option<usize>,
}

pub fn corollary_indices(p0: &ProbVector, n: usize, alpha: f64) -> Result<CorollaryIndices> {
    check_n_alpha(n, alpha)?;
    let root = (n as f64 * alpha * alpha).sqrt();
    let order = descending_order(p0);
    let last = |a: f64, b: f64| {
        order
            .iter()
            .enumerate()
            .filter(|(k, &idx)| {
                let j = (k + 1) as f64;
                j.powf(a) / root <= j.powf(b) * p0.get(idx) / (2.0 * j).ln().sqrt()
            })
            .map(|(k, _)| k + 1)
            .last()
    };
    Ok(CorollaryIndices {
        l_star: last(0.75, 1.0),
        l_starstar: last(0.25, 0.5),
        l_tilde: last(0.5, 0.0),
    })
}

/// The per-family rate with unit constants.
pub fn table1_rate(family: &FamilySpec, n: usize, alpha: f64, norm: Norm, mode: Mode) -> Result<f64> {
    check_n_alpha(n, alpha)?;
    family.kind.validate()?;
    let na2 = n as f64 * alpha * alpha;
    let root = na2.sqrt();
    let d = family.d as f64;
    // power of d (and of the log factor) in units of 1/4
    let quarters = match (mode, norm) {
        (Mode::Noninteractive, Norm::L1) => 3.0,
        (Mode::Noninteractive, Norm::L2) => 1.0,
        (Mode::Interactive, Norm::L1) => 2.0,
        (Mode::Interactive, Norm::L2) => return Ok(1.0 / root),
    };
    match family.kind {
        FamilyKind::Uniform => Ok(d.powf(quarters / 4.0) / root),
        FamilyKind::Polynomial { beta } => {
            let poly = na2.powf(-2.0 * beta / (4.0 * beta + quarters));
            Ok(poly.min(d.powf(quarters / 4.0) / root))
        }
        FamilyKind::Exponential { beta, .. } => {
            if na2 <= 1.0 {
                return Err(Error::invalid(
                    "the exponential-family rate needs n*alpha^2 > 1",
                ));
            }
            let logf = na2.ln().powf(quarters / (4.0 * beta));
            Ok(logf.min(d.powf(quarters / 4.0)) / root)
        }
        FamilyKind::NearlyUniform { .. } => Err(Error::Unsupported(format!(
            "no closed-form {mode} {norm} rate for the nearly_uniform family"
        ))),
    }
}

/// One row of a rate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub family: String,
    pub params: String,
    pub n: usize,
    pub alpha: f64,
    pub norm: Norm,
    pub mode: Mode,
    pub kind: String,
    pub value: String,
    pub j_achieving: String,
}

/// Grid over which rate tables are tabulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateGrid {
    pub families: Vec<FamilySpec>,
    pub n: Vec<usize>,
    pub alpha: Vec<f64>,
}

impl RateGrid {
    /// The grid behind the checked-in golden table.
    pub fn standard() -> Self {
        let kinds = [
            FamilyKind::Uniform,
            FamilyKind::Polynomial { beta: 0.5 },
            FamilyKind::Polynomial { beta: 1.0 },
            FamilyKind::Exponential {
                eta: 0.0,
                c: 1.0,
                beta: 1.0,
            },
            FamilyKind::Exponential {
                eta: 0.0,
                c: 0.5,
                beta: 0.5,
            },
        ];
        let mut families = Vec::new();
        for kind in kinds {
            for d in [10, 100, 1000] {
                families.push(FamilySpec { kind, d });
            }
        }
        Self {
            families,
            n: vec![1000, 100_000],
            alpha: vec![0.5, 1.0],
        }
    }
}

/// Number formatting shared by every rate table.
pub fn format_value(v: f64) -> String {
    format!("{v:.10e}")
}

const MODES: [(Mode, Norm); 4] = [
    (Mode::Noninteractive, Norm::L1),
    (Mode::Noninteractive, Norm::L2),
    (Mode::Interactive, Norm::L1),
    (Mode::Interactive, Norm::L2),
];

/// Per-family rates, lower bounds and explicit non-interactive upper
/// bounds (at `γ = gamma`) over the grid.
///
/// Unsupported per-family cells are skipped.
pub fn rate_table(grid: &RateGrid, gamma: f64) -> Result<Vec<RateRow>> {
    if grid.families.is_empty() || grid.n.is_empty() || grid.alpha.is_empty() {
        return Err(Error::invalid("rate grid has an empty axis"));
    }
    let mut rows = Vec::new();
    for fam in &grid.families {
        let p0 = make_family(fam)?;
        let params_str = if fam.kind.params().is_empty() {
            format!("d={}", fam.d)
        } else {
            format!("d={};{}", fam.d, fam.kind.params())
        };
        for &n in &grid.n {
            for &alpha in &grid.alpha {
                let row = |mode: Mode, norm: Norm, kind: &str, value: f64, j: Option<usize>| RateRow {
                    family: fam.kind.name().to_string(),
                    params: params_str.clone(),
                    n,
                    alpha,
                    norm,
                    mode,
                    kind: kind.to_string(),
                    value: format_value(value),
                    j_achieving: j.map(|j| j.to_string()).unwrap_or_default(),
                };
                for (mode, norm) in MODES {
                    match table1_rate(fam, n, alpha, norm, mode) {
                        Ok(v) => rows.push(row(mode, norm, "rate", v, None)),
                        Err(Error::Unsupported(_)) => {}
                        Err(e) => return Err(e),
                    }
                    let lb = lower_bound(&p0, n, alpha, norm, mode)?;
                    rows.push(row(mode, norm, "lower", lb.value, lb.j_achieving));
                    if mode == Mode::Noninteractive {
                        let params = PrivacyParams::new(alpha, gamma, n)?;
                        let ub = upper_bound(
                            &p0,
                            n,
                            &params,
                            norm,
                            mode,
                            None,
                            Constants::Explicit { c: 0.5 },
                        )?;
                        rows.push(row(mode, norm, "upper", ub.value, ub.j_achieving));
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Writes rate rows as CSV with a header.
pub fn write_rate_csv<W: std::io::Write>(rows: &[RateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<rate table>", e))?;
    Ok(())
}
