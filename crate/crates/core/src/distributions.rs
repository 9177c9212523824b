//! Probability vectors over a finite alphabet `{1, …, d}`.
//!
//! Categories are 1-based everywhere in the public API; storage is a plain
//! 0-based `Vec<f64>`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::teststats::SupportSet;

/// Allowed deviation of the total mass from one.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// A probability vector `p = (p(1), …, p(d))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVector {
    mass: Vec<f64>,
}

impl ProbVector {
    /// Wraps `mass` after checking nonnegativity and unit total mass.
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::invalid("probability vector must have d >= 1"));
        }
        if let Some((i, x)) = mass
            .iter()
            .enumerate()
            .find(|(_, x)| !x.is_finite() || **x < 0.0)
        {
            return Err(Error::invalid(format!(
                "entry {} is {x}; probabilities must be finite and >= 0",
                i + 1
            )));
        }
        let total = compensated_sum(mass.iter().copied());
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::invalid(format!(
                "entries sum to {total}, not 1 (tolerance {MASS_TOLERANCE:e})"
            )));
        }
        Ok(Self { mass })
    }

    /// Accepts user-supplied probabilities that sum to one within `tol`, then
    /// renormalizes so the stored vector meets [`MASS_TOLERANCE`].
    pub fn from_approximate(mass: Vec<f64>, tol: f64) -> Result<Self> {
        let total = compensated_sum(mass.iter().copied());
        if !((total - 1.0).abs() <= tol) {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, expected 1 within {tol:e}"
            )));
        }
        normalize(&mass)
    }

    pub fn uniform(d: usize) -> Result<Self> {
        normalize(&vec![1.0; d])
    }

    /// Point mass at category `j` (1-based).
    pub fn point_mass(d: usize, j: usize) -> Result<Self> {
        if j == 0 || j > d {
            return Err(Error::invalid(format!("category {j} outside [1, {d}]")));
        }
        let mut mass = vec![0.0; d];
        mass[j - 1] = 1.0;
        Self::new(mass)
    }

    pub fn d(&self) -> usize {
        self.mass.len()
    }

    /// `p(j)` for 1-based `j`.
    pub fn get(&self, j: usize) -> f64 {
        self.mass[j - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.mass
    }
}

impl<'de> Deserialize<'de> for ProbVector {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let mass = Vec::<f64>::deserialize(de)?;
        ProbVector::new(mass).map_err(serde::de::Error::custom)
    }
}

/// Divides every weight by the total.
pub fn normalize(weights: &[f64]) -> Result<ProbVector> {
    if weights.is_empty() {
        return Err(Error::invalid("cannot normalize an empty weight sequence"));
    }
    if let Some((i, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(Error::invalid(format!(
            "weight {} is {w}; weights must be finite and >= 0",
            i + 1
        )));
    }
    let total = compensated_sum(weights.iter().copied());
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::invalid("weights must have a positive finite sum"));
    }
    ProbVector::new(weights.iter().map(|w| w / total).collect())
}

/// Parametric shape of a null distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyKind {
    Uniform,
    /// `p(j) ∝ j^{-β}`, `β ∈ [0, 1)`.
    NearlyUniform { beta: f64 },
    /// `p(j) ∝ j^{-1-β}`, `β > 0`.
    Polynomial { beta: f64 },
    /// `p(j) ∝ j^η exp(-c j^β)`, `c, β > 0`.
    Exponential { eta: f64, c: f64, beta: f64 },
}

impl FamilyKind {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            FamilyKind::Uniform => true,
            FamilyKind::NearlyUniform { beta } => (0.0..1.0).contains(&beta),
            FamilyKind::Polynomial { beta } => beta > 0.0 && beta.is_finite(),
            FamilyKind::Exponential { eta, c, beta } => {
                eta.is_finite() && c > 0.0 && c.is_finite() && beta > 0.0 && beta.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("family parameters out of range: {self}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::Uniform => "uniform",
            FamilyKind::NearlyUniform { .. } => "nearly_uniform",
            FamilyKind::Polynomial { .. } => "polynomial",
            FamilyKind::Exponential { .. } => "exponential",
        }
    }

    /// Parameters as `key=value` pairs joined by `;` (empty for uniform).
    pub fn params(&self) -> String {
        match *self {
            FamilyKind::Uniform => String::new(),
            FamilyKind::NearlyUniform { beta } | FamilyKind::Polynomial { beta } => {
                format!("beta={beta}")
            }
            FamilyKind::Exponential { eta, c, beta } => format!("eta={eta};c={c};beta={beta}"),
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilyKind::Uniform => f.write_str("uniform"),
            _ => write!(f, "{}:{}", self.name(), self.params().replace(';', ",")),
        }
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    /// Parses `uniform`, `nearly_uniform:beta=0.5`, `polynomial:beta=1`,
    /// `exponential:eta=0,c=1,beta=1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) = match s.split_once(':') {
            Some((n, r)) => (n.trim(), r.trim()),
            None => (s, ""),
        };
        let mut beta = None;
        let mut eta = None;
        let mut c = None;
        if !rest.is_empty() {
            for part in rest.split(',') {
                let (k, v) = part
                    .split_once('=')
                    .ok_or_else(|| Error::invalid(format!("expected key=value, got {part:?}")))?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("not a number: {:?}", v.trim())))?;
                let slot = match k.trim() {
                    "beta" => &mut beta,
                    "eta" => &mut eta,
                    "c" => &mut c,
                    other => return Err(Error::invalid(format!("unknown family parameter {other:?}"))),
                };
                if slot.replace(v).is_some() {
                    return Err(Error::invalid(format!("parameter {:?} given twice", k.trim())));
                }
            }
        }
        let need = |slot: Option<f64>, key: &str| {
            slot.ok_or_else(|| Error::invalid(format!("family {name:?} requires {key}")))
        };
        let kind = match name {
            "uniform" => {
                if beta.or(eta).or(c).is_some() {
                    return Err(Error::invalid("uniform takes no parameters"));
                }
                FamilyKind::Uniform
            }
            "nearly_uniform" | "polynomial" => {
                if eta.or(c).is_some() {
                    return Err(Error::invalid(format!("{name} only takes beta")));
                }
                let beta = need(beta, "beta")?;
                if name == "polynomial" {
                    FamilyKind::Polynomial { beta }
                } else {
                    FamilyKind::NearlyUniform { beta }
                }
            }
            "exponential" => FamilyKind::Exponential {
                eta: eta.unwrap_or(0.0),
                c: c.unwrap_or(1.0),
                beta: need(beta, "beta")?,
            },
            other => return Err(Error::invalid(format!("unknown family {other:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// A family together with its alphabet size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilySpecRepr", into = "FamilySpecRepr")]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub d: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum FamilySpecRepr {
    Uniform { d: usize },
    NearlyUniform { d: usize, beta: f64 },
    Polynomial { d: usize, beta: f64 },
    Exponential { d: usize, eta: f64, c: f64, beta: f64 },
}

impl TryFrom<FamilySpecRepr> for FamilySpec {
    type Error = Error;

    fn try_from(r: FamilySpecRepr) -> Result<Self> {
        let (kind, d) = match r {
            FamilySpecRepr::Uniform { d } => (FamilyKind::Uniform, d),
            FamilySpecRepr::NearlyUniform { d, beta } => (FamilyKind::NearlyUniform { beta }, d),
            FamilySpecRepr::Polynomial { d, beta } => (FamilyKind::Polynomial { beta }, d),
            FamilySpecRepr::Exponential { d, eta, c, beta } => {
                (FamilyKind::Exponential { eta, c, beta }, d)
            }
        };
        FamilySpec::new(kind, d)
    }
}

impl From<FamilySpec> for FamilySpecRepr {
    fn from(s: FamilySpec) -> Self {
        let d = s.d;
        match s.kind {
            FamilyKind::Uniform => FamilySpecRepr::Uniform { d },
            FamilyKind::NearlyUniform { beta } => FamilySpecRepr::NearlyUniform { d, beta },
            FamilyKind::Polynomial { beta } => FamilySpecRepr::Polynomial { d, beta },
            FamilyKind::Exponential { eta, c, beta } => FamilySpecRepr::Exponential { d, eta, c, beta },
        }
    }
}

impl FamilySpec {
    pub fn new(kind: FamilyKind, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("alphabet size d must be >= 1"));
        }
        kind.validate()?;
        Ok(Self { kind, d })
    }

    pub fn uniform(d: usize) -> Result<Self> {
        Self::new(FamilyKind::Uniform, d)
    }
}

/// Builds the family's probability vector.
///
/// Exponential weights are formed in log space relative to their maximum so
/// that far tails underflow to zero instead of poisoning the total.
pub fn make_family(spec: &FamilySpec) -> Result<ProbVector> {
    spec.kind.validate()?;
    let d = spec.d;
    let js = (1..=d).map(|j| j as f64);
    let weights: Vec<f64> = match spec.kind {
        FamilyKind::Uniform => vec![1.0; d],
        FamilyKind::NearlyUniform { beta } => js.map(|j| j.powf(-beta)).collect(),
        FamilyKind::Polynomial { beta } => js.map(|j| j.powf(-1.0 - beta)).collect(),
        FamilyKind::Exponential { eta, c, beta } => {
            let logw: Vec<f64> = js.map(|j| eta * j.ln() - c * j.powf(beta)).collect();
            let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            logw.iter().map(|lw| (lw - top).exp()).collect()
        }
    };
    normalize(&weights)
}

fn check_same_d(p: &ProbVector, q: &ProbVector) -> Result<()> {
    if p.d() != q.d() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            p.d(),
            q.d()
        )));
    }
    Ok(())
}

pub fn l1_distance(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_same_d(p, q)?;
    Ok(compensated_sum(
        p.mass.iter().zip(&q.mass).map(|(a, b)| (a - b).abs()),
    ))
}

pub fn l2_distance(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_same_d(p, q)?;
    Ok(compensated_sum(p.mass.iter().zip(&q.mass).map(|(a, b)| (a - b) * (a - b))).sqrt())
}

/// `Σ_{j ∉ B} p(j)`.
pub fn tail_mass(p: &ProbVector, b: &SupportSet) -> Result<f64> {
    if b.d() != p.d() {
        return Err(Error::invalid(format!(
            "support set is over [1, {}] but p has d = {}",
            b.d(),
            p.d()
        )));
    }
    let mut in_b = vec![false; p.d()];
    for &j in b.members() {
        in_b[j - 1] = true;
    }
    let tail = compensated_sum(
        p.mass
            .iter()
            .zip(&in_b)
            .filter(|(_, &inside)| !inside)
            .map(|(m, _)| *m),
    );
    Ok(tail.clamp(0.0, 1.0))
}

/// Permutation `π` (1-based) with `p(π(1)) ≥ p(π(2)) ≥ …`; ties keep the
/// smaller original index first.
pub fn descending_order(p: &ProbVector) -> Vec<usize> {
    let mut idx: Vec<usize> = (1..=p.d()).collect();
    // sort_by is stable, so equal masses stay in index order
    idx.sort_by(|&a, &b| p.get(b).total_cmp(&p.get(a)));
    idx
}

/// Inverse-CDF sampler over a precomputed cumulative table.
#[derive(Debug, Clone)]
pub struct CategorySampler {
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl CategorySampler {
    pub fn new(p: &ProbVector) -> Self {
        let mut acc = 0.0;
        let cumulative = p
            .as_slice()
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        let last_positive = p
            .as_slice()
            .iter()
            .rposition(|&m| m > 0.0)
            .expect("a probability vector has positive mass somewhere");
        Self {
            cumulative,
            last_positive,
        }
    }

    /// One draw, 1-based.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c <= u);
        // u can exceed the rounded final cumulative value
        i.min(self.last_positive) + 1
    }
}

/// `n` i.i.d. draws from `p` (1-based categories).
pub fn sample<R: Rng + ?Sized>(p: &ProbVector, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("sample size must be >= 1"));
    }
    let sampler = CategorySampler::new(p);
    Ok((0..n).map(|_| sampler.draw(rng)).collect())
}

/// Multinomial category counts for `n` draws, via conditional binomials.
pub fn multinomial_counts<R: Rng + ?Sized>(p: &ProbVector, n: u64, rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; p.d()];
    let mut remaining_n = n;
    let mut remaining_mass = 1.0_f64;
    for (j, &m) in p.as_slice().iter().enumerate() {
        if remaining_n == 0 {
            break;
        }
        if j + 1 == p.d() || remaining_mass <= m {
            counts[j] = remaining_n;
            break;
        }
        let q = (m / remaining_mass).clamp(0.0, 1.0);
        let c = Binomial::new(remaining_n, q)
            .expect("conditional probability lies in [0, 1]")
            .sample(rng);
        counts[j] = c;
        remaining_n -= c;
        remaining_mass -= m;
    }
    counts
}
