//! Alternatives at a prescribed distance from `p_0`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::{descending_order, l1_distance, l2_distance, normalize, ProbVector};
use crate::error::{Error, Result};
use crate::teststats::Norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlternativeKind {
    MassShift,
    PairedSigns,
    RandomDirection,
}

impl AlternativeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlternativeKind::MassShift => "mass_shift",
            AlternativeKind::PairedSigns => "paired_signs",
            AlternativeKind::RandomDirection => "random_direction",
        }
    }
}

impl fmt::Display for AlternativeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlternativeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mass_shift" => Ok(AlternativeKind::MassShift),
            "paired_signs" => Ok(AlternativeKind::PairedSigns),
            "random_direction" => Ok(AlternativeKind::RandomDirection),
            other => Err(Error::invalid(format!("unknown alternative '{other}'"))),
        }
    }
}

pub fn distance(p: &ProbVector, q: &ProbVector, norm: Norm) -> Result<f64> {
    match norm {
        Norm::L1 => l1_distance(p, q),
        Norm::L2 => l2_distance(p, q),
    }
}

/// `(1 − ε) p_0 + ε e_d`.
pub fn mass_shift_alternative(p0: &ProbVector, epsilon: f64) -> Result<ProbVector> {
    let d = p0.d();
    let top = 1.0 - 1.0 / d as f64;
    if !(epsilon >= 0.0 && epsilon <= top) {
        return Err(Error::invalid(format!(
            "epsilon = {epsilon} outside [0, {top}]"
        )));
    }
    let mut mass: Vec<f64> = p0.as_slice().iter().map(|q| (1.0 - epsilon) * q).collect();
    mass[d - 1] += epsilon;
    ProbVector::new(mass)
}

/// `‖e_d − p_0‖` in the given norm; the distance of a mass shift is `ε`
/// times this.
fn mass_shift_unit(p0: &ProbVector, norm: Norm) -> f64 {
    let d = p0.d();
    match norm {
        Norm::L1 => 2.0 * (1.0 - p0.get(d)),
        Norm::L2 => {
            let s: f64 = (1..=d)
                .map(|j| {
                    let e = if j == d { 1.0 } else { 0.0 };
                    (e - p0.get(j)).powi(2)
                })
                .sum();
            s.sqrt()
        }
    }
}

fn check_pairs(p0: &ProbVector, b_size: usize, epsilon: f64) -> Result<Vec<usize>> {
    if b_size < 2 || b_size % 2 != 0 || b_size > p0.d() {
        return Err(Error::invalid(format!(
            "B_size = {b_size} must be even, >= 2 and <= d = {}",
            p0.d()
        )));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon = {epsilon} must be >= 0")));
    }
    let order = descending_order(p0);
    for &j in &order[..b_size] {
        if epsilon > p0.get(j) {
            return Err(Error::invalid(format!(
                "epsilon = {epsilon} exceeds p0({j}) = {}, category {j} would go negative",
                p0.get(j)
            )));
        }
    }
    Ok(order)
}

/// Paired perturbation with explicit signs, one per pair.
pub fn paired_signs_with(
    p0: &ProbVector,
    b_size: usize,
    epsilon: f64,
    signs: &[bool],
) -> Result<ProbVector> {
    let order = check_pairs(p0, b_size, epsilon)?;
    if signs.len() != b_size / 2 {
        return Err(Error::invalid(format!(
            "{} signs given for {} pairs",
            signs.len(),
            b_size / 2
        )));
    }
    let mut mass = p0.as_slice().to_vec();
    for (k, &plus) in signs.iter().enumerate() {
        let s = if plus { epsilon } else { -epsilon };
        mass[order[2 * k] - 1] += s;
        mass[order[2 * k + 1] - 1] -= s;
    }
    for m in &mut mass {
        // p0(j) − ε can land a hair below zero when ε = p0(j)
        if *m < 0.0 {
            *m = 0.0;
        }
    }
    ProbVector::new(mass)
}

/// Paired perturbation on the top `b_size` categories with random signs.
pub fn paired_signs_alternative<R: Rng + ?Sized>(
    p0: &ProbVector,
    b_size: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<ProbVector> {
    check_pairs(p0, b_size, epsilon)?;
    let signs: Vec<bool> = (0..b_size / 2).map(|_| rng.random()).collect();
    paired_signs_with(p0, b_size, epsilon, &signs)
}

/// Largest usable `ε` for a paired perturbation of the top `b_size`.
pub fn paired_signs_max_epsilon(p0: &ProbVector, b_size: usize) -> Result<f64> {
    let order = check_pairs(p0, b_size, 0.0)?;
    Ok(order[..b_size]
        .iter()
        .map(|&j| p0.get(j))
        .fold(f64::INFINITY, f64::min))
}

fn paired_unit(b_size: usize, norm: Norm) -> f64 {
    match norm {
        Norm::L1 => b_size as f64,
        Norm::L2 => (b_size as f64).sqrt(),
    }
}

fn repair(p0: &ProbVector, v: &[f64], s: f64) -> Result<ProbVector> {
    let w: Vec<f64> = p0
        .as_slice()
        .iter()
        .zip(v)
        .map(|(q, vi)| (q + s * vi).max(0.0))
        .collect();
    normalize(&w)
}

/// A random mean-zero direction added to `p_0` and rescaled so the distance
/// equals `target`.
///
/// Negative entries are clamped to zero and the vector renormalized; the
/// scale is then adjusted by bisection so the repaired vector sits at the
/// target. Fails if the repaired distance is off by more than 1%.
pub fn random_direction_alternative<R: Rng + ?Sized>(
    p0: &ProbVector,
    target: f64,
    norm: Norm,
    rng: &mut R,
) -> Result<ProbVector> {
    if !(target >= 0.0 && target <= norm.diameter()) {
        return Err(Error::invalid(format!(
            "target {target} outside [0, {}]",
            norm.diameter()
        )));
    }
    if target == 0.0 {
        return Ok(p0.clone());
    }
    let d = p0.d();
    if d < 2 {
        return Err(Error::invalid("a one-point alphabet admits no alternative"));
    }
    let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mean = v.iter().sum::<f64>() / d as f64;
    for x in &mut v {
        *x -= mean;
    }
    let len = match norm {
        Norm::L1 => v.iter().map(|x| x.abs()).sum::<f64>(),
        Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    };
    if !(len > 0.0) {
        return Err(Error::invalid("degenerate random direction"));
    }
    for x in &mut v {
        *x /= len;
    }
    let dist_at = |s: f64| -> Result<f64> { distance(&repair(p0, &v, s)?, p0, norm) };

    let first = repair(p0, &v, target)?;
    let got = distance(&first, p0, norm)?;
    if (got - target).abs() <= 1e-9 * target {
        return Ok(first);
    }
    // clamping moved the distance; search for the scale that restores it
    let mut lo = 0.0;
    let mut hi = target;
    let mut grow = 0;
    while dist_at(hi)? < target {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::invalid(format!(
                "target {target} not reachable along the sampled direction"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dist_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let p = repair(p0, &v, hi)?;
    let got = distance(&p, p0, norm)?;
    if (got - target).abs() > 0.01 * target {
        return Err(Error::invalid(format!(
            "positivity repair left distance {got} for target {target}"
        )));
    }
    Ok(p)
}

/// Description of an alternative as it appears in experiment configs.
///
/// Exactly one of `epsilon` and `target_distance` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlternativeSpec {
    pub kind: AlternativeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_distance: Option<f64>,
    pub norm: Norm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Size of the perturbed support for paired signs; defaults to the
    /// largest even number `<= d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_size: Option<usize>,
}

impl AlternativeSpec {
    pub fn validate(&self) -> Result<()> {
        match (self.epsilon, self.target_distance) {
            (Some(e), None) if e >= 0.0 && e.is_finite() => {}
            (None, Some(t)) if t >= 0.0 && t.is_finite() => {}
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::invalid(
                    "give exactly one of epsilon and target_distance",
                ))
            }
            _ => return Err(Error::invalid("epsilon / target_distance must be finite and >= 0")),
        }
        if self.kind == AlternativeKind::RandomDirection && self.epsilon.is_some() {
            return Err(Error::invalid("random_direction takes target_distance"));
        }
        Ok(())
    }

    fn resolved_b(&self, p0: &ProbVector) -> usize {
        self.b_size.unwrap_or(p0.d() - p0.d() % 2)
    }

    /// Build the alternative around `p0`.
    pub fn build<R: Rng + ?Sized>(&self, p0: &ProbVector, rng: &mut R) -> Result<ProbVector> {
        self.validate()?;
        match self.kind {
            AlternativeKind::MassShift => {
                let eps = match (self.epsilon, self.target_distance) {
                    (Some(e), _) => e,
                    (None, Some(t)) => t / mass_shift_unit(p0, self.norm),
                    _ => unreachable!(),
                };
                mass_shift_alternative(p0, eps)
            }
            AlternativeKind::PairedSigns => {
                let b = self.resolved_b(p0);
                let eps = match (self.epsilon, self.target_distance) {
                    (Some(e), _) => e,
                    (None, Some(t)) => t / paired_unit(b, self.norm),
                    _ => unreachable!(),
                };
                paired_signs_alternative(p0, b, eps, rng)
            }
            AlternativeKind::RandomDirection => random_direction_alternative(
                p0,
                self.target_distance.unwrap_or_default(),
                self.norm,
                rng,
            ),
        }
    }
}

/// A deterministic alternative family indexed by its distance from `p_0`,
/// used by the radius search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelMember {
    pub kind: AlternativeKind,
    /// Perturbed support size for paired signs.
    pub b_size: Option<usize>,
}

impl PanelMember {
    pub fn mass_shift() -> Self {
        Self {
            kind: AlternativeKind::MassShift,
            b_size: None,
        }
    }

    pub fn paired_signs(b_size: usize) -> Self {
        Self {
            kind: AlternativeKind::PairedSigns,
            b_size: Some(b_size),
        }
    }

    pub fn label(&self) -> String {
        match self.b_size {
            Some(b) => format!("{}(B={b})", self.kind),
            None => self.kind.to_string(),
        }
    }

    /// Largest distance from `p0` this member can produce.
    pub fn max_distance(&self, p0: &ProbVector, norm: Norm) -> Result<f64> {
        match self.kind {
            AlternativeKind::MassShift => {
                Ok((1.0 - 1.0 / p0.d() as f64) * mass_shift_unit(p0, norm))
            }
            AlternativeKind::PairedSigns => {
                let b = self.b_size.unwrap_or(p0.d() - p0.d() % 2);
                Ok(paired_signs_max_epsilon(p0, b)? * paired_unit(b, norm))
            }
            AlternativeKind::RandomDirection => Ok(norm.diameter()),
        }
    }

    /// The member at distance `delta`; paired signs alternate `+,−,+,…`.
    pub fn at_distance<R: Rng + ?Sized>(
        &self,
        p0: &ProbVector,
        delta: f64,
        norm: Norm,
        rng: &mut R,
    ) -> Result<ProbVector> {
        match self.kind {
            AlternativeKind::MassShift => {
                let eps = delta / mass_shift_unit(p0, norm);
                mass_shift_alternative(p0, eps.min(1.0 - 1.0 / p0.d() as f64))
            }
            AlternativeKind::PairedSigns => {
                let b = self.b_size.unwrap_or(p0.d() - p0.d() % 2);
                let eps = (delta / paired_unit(b, norm)).min(paired_signs_max_epsilon(p0, b)?);
                let signs: Vec<bool> = (0..b / 2).map(|k| k % 2 == 0).collect();
                paired_signs_with(p0, b, eps, &signs)
            }
            AlternativeKind::RandomDirection => random_direction_alternative(p0, delta, norm, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mass_shift_uniform_four() {
        let p0 = ProbVector::uniform(4).unwrap();
        let p = mass_shift_alternative(&p0, 0.2).unwrap();
        let expect = [0.2, 0.2, 0.2, 0.4];
        for (a, b) in p.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((l1_distance(&p, &p0).unwrap() - 0.3).abs() < 1e-12);
        assert!((l2_distance(&p, &p0).unwrap() - 0.03_f64.sqrt()).abs() < 1e-12);
        assert!(l2_distance(&p, &p0).unwrap() >= 0.2 * 0.75 - 1e-15);
        assert_eq!(mass_shift_alternative(&p0, 0.0).unwrap(), p0);
        assert!(mass_shift_alternative(&p0, 0.75).is_ok());
        assert!(mass_shift_alternative(&p0, 0.7500001).is_err());
        assert!(mass_shift_alternative(&p0, -0.1).is_err());
    }

    #[test]
    fn paired_signs_example() {
        let p0 = ProbVector::uniform(4).unwrap();
        let p = paired_signs_with(&p0, 4, 0.05, &[true, false]).unwrap();
        let expect = [0.30, 0.20, 0.20, 0.30];
        for (a, b) in p.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((l1_distance(&p, &p0).unwrap() - 0.2).abs() < 1e-12);
        let same = paired_signs_with(&p0, 4, 0.05, &[true, true]).unwrap();
        assert!((l1_distance(&same, &p0).unwrap() - 0.2).abs() < 1e-12);
        assert!(
            (l2_distance(&same, &p0).unwrap() - l2_distance(&p, &p0).unwrap()).abs() < 1e-15
        );
        assert_eq!(paired_signs_with(&p0, 4, 0.0, &[true, false]).unwrap(), p0);
    }

    #[test]
    fn paired_signs_errors() {
        let p0 = ProbVector::new(vec![0.5, 0.3, 0.15, 0.05]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(paired_signs_alternative(&p0, 3, 0.01, &mut rng).is_err());
        assert!(paired_signs_alternative(&p0, 6, 0.01, &mut rng).is_err());
        let err = paired_signs_alternative(&p0, 4, 0.1, &mut rng).unwrap_err();
        assert!(err.to_string().contains("p0(4)"), "{err}");
        assert!(paired_signs_alternative(&p0, 2, 0.1, &mut rng).is_ok());
        assert_eq!(paired_signs_max_epsilon(&p0, 4).unwrap(), 0.05);
    }

    #[test]
    fn random_direction_contract() {
        let p0 = ProbVector::uniform(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(random_direction_alternative(&p0, 0.0, Norm::L1, &mut rng).unwrap(), p0);
        for _ in 0..1000 {
            let p = random_direction_alternative(&p0, 0.1, Norm::L1, &mut rng).unwrap();
            let got = l1_distance(&p, &p0).unwrap();
            assert!((got - 0.1).abs() <= 0.001, "{got}");
        }
        assert!(random_direction_alternative(&p0, 2.5, Norm::L1, &mut rng).is_err());
        assert!(random_direction_alternative(&p0, 1.5, Norm::L2, &mut rng).is_err());
        // large targets force clamping
        let p = random_direction_alternative(&p0, 1.2, Norm::L1, &mut rng).unwrap();
        assert!((l1_distance(&p, &p0).unwrap() - 1.2).abs() <= 0.012);
    }

    #[test]
    fn spec_build() {
        let p0 = ProbVector::uniform(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = AlternativeSpec {
            kind: AlternativeKind::PairedSigns,
            epsilon: None,
            target_distance: Some(0.3),
            norm: Norm::L1,
            seed: None,
            b_size: None,
        };
        let p = spec.build(&p0, &mut rng).unwrap();
        assert!((l1_distance(&p, &p0).unwrap() - 0.3).abs() < 1e-12);
        let spec = AlternativeSpec {
            kind: AlternativeKind::MassShift,
            target_distance: Some(0.25),
            norm: Norm::L2,
            ..spec
        };
        let p = spec.build(&p0, &mut rng).unwrap();
        assert!((l2_distance(&p, &p0).unwrap() - 0.25).abs() < 1e-12);
        let bad = AlternativeSpec {
            epsilon: Some(0.1),
            ..spec.clone()
        };
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<AlternativeSpec>(&json).unwrap(), spec);
    }

    #[test]
    fn panel_members_reach_their_distances() {
        let p0 = ProbVector::uniform(20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for m in [PanelMember::mass_shift(), PanelMember::paired_signs(20), PanelMember::paired_signs(10)] {
            for norm in [Norm::L1, Norm::L2] {
                let top = m.max_distance(&p0, norm).unwrap();
                for frac in [0.1, 0.5, 1.0] {
                    let p = m.at_distance(&p0, frac * top, norm, &mut rng).unwrap();
                    let got = distance(&p, &p0, norm).unwrap();
                    assert!((got - frac * top).abs() < 1e-12, "{} {norm} {got}", m.label());
                }
            }
        }
    }
}
