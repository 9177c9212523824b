//! Test statistics, critical values and the two composite tests.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{compensated_sum, descending_order, ProbVector};
use crate::error::{Error, Result};
use crate::privacy::{
    estimate_frequencies, privatize_indicator_vector_with, privatize_tail_indicator_with, tau_of,
    LaplaceNoise, PrivacyParams, RngNoise, Stage2Mechanism, Stage2Record,
};

/// A nonempty set of categories, kept in insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SupportSetRepr", into = "SupportSetRepr")]
pub struct SupportSet {
    members: Vec<usize>,
    d: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SupportSetRepr {
    members: Vec<usize>,
    d: usize,
}

impl TryFrom<SupportSetRepr> for SupportSet {
    type Error = Error;
    fn try_from(r: SupportSetRepr) -> Result<Self> {
        SupportSet::new(r.members, r.d)
    }
}

impl From<SupportSet> for SupportSetRepr {
    fn from(s: SupportSet) -> Self {
        SupportSetRepr {
            members: s.members,
            d: s.d,
        }
    }
}

impl SupportSet {
    pub fn new(members: Vec<usize>, d: usize) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("support set is empty"));
        }
        if let Some(&j) = members.iter().find(|&&j| j == 0 || j > d) {
            return Err(Error::invalid(format!("support index {j} outside [1, {d}]")));
        }
        // sorting a copy keeps the check independent of d
        let mut sorted = members.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("support index {} repeated", w[0])));
        }
        Ok(Self { members, d })
    }

    /// `B = [d]`.
    pub fn full(d: usize) -> Self {
        assert!(d >= 1, "alphabet must be nonempty");
        Self {
            members: (1..=d).collect(),
            d,
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    /// Always false; kept for the usual `len`/`is_empty` pairing.
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.members.contains(&j)
    }

    /// Indices of `B^c` in increasing order.
    pub fn complement(&self) -> Vec<usize> {
        let mut inside = vec![false; self.d + 1];
        for &j in &self.members {
            inside[j] = true;
        }
        (1..=self.d).filter(|&j| !inside[j]).collect()
    }

    /// Membership mask indexed by category (position 0 unused).
    pub fn mask(&self) -> Vec<bool> {
        let mut inside = vec![false; self.d + 1];
        for &j in &self.members {
            inside[j] = true;
        }
        inside
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[serde(alias = "ni")]
    Noninteractive,
    Interactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[serde(alias = "l1")]
    L1,
    #[serde(alias = "l2")]
    L2,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Noninteractive => "noninteractive",
            Mode::Interactive => "interactive",
        }
    }
}

impl Norm {
    pub fn as_str(self) -> &'static str {
        match self {
            Norm::L1 => "L1",
            Norm::L2 => "L2",
        }
    }

    /// Diameter of the probability simplex in this norm.
    pub fn diameter(self) -> f64 {
        match self {
            Norm::L1 => 2.0,
            Norm::L2 => std::f64::consts::SQRT_2,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ni" | "noninteractive" | "non-interactive" => Ok(Mode::Noninteractive),
            "interactive" | "int" => Ok(Mode::Interactive),
            other => Err(Error::invalid(format!("unknown mode '{other}'"))),
        }
    }
}

impl FromStr for Norm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(Error::invalid(format!("unknown norm '{other}'"))),
        }
    }
}

/// Outcome of one run of either composite test.
///
/// `s_b` is absent for interactive runs, `d_n` and `c3` for
/// non-interactive ones. Deserialization re-checks the decision rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TestReportRepr", into = "TestReportRepr")]
pub struct TestReport {
    pub s_b: Option<f64>,
    pub t_b: f64,
    pub d_n: Option<f64>,
    pub c1: f64,
    pub c2: f64,
    pub c3: Option<f64>,
    pub reject: bool,
    pub b_used: SupportSet,
    pub mode: Mode,
    pub norm: Norm,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestReportRepr {
    s_b: Option<f64>,
    t_b: f64,
    d_n: Option<f64>,
    c1: f64,
    c2: f64,
    c3: Option<f64>,
    reject: bool,
    b_used: SupportSet,
    mode: Mode,
    norm: Norm,
}

impl TestReport {
    /// The decision implied by the statistics and thresholds.
    pub fn decision(&self) -> Result<bool> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must be positive and finite")))
            }
        };
        pos("c1", self.c1)?;
        pos("c2", self.c2)?;
        let tail = self.t_b >= self.c2;
        match self.mode {
            Mode::Noninteractive => {
                let s = self
                    .s_b
                    .ok_or_else(|| Error::invalid("non-interactive report lacks s_b"))?;
                if self.d_n.is_some() || self.c3.is_some() {
                    return Err(Error::invalid("non-interactive report carries d_n or c3"));
                }
                Ok(s >= self.c1 || tail)
            }
            Mode::Interactive => {
                let (dn, c3) = match (self.d_n, self.c3) {
                    (Some(dn), Some(c3)) => (dn, c3),
                    _ => return Err(Error::invalid("interactive report lacks d_n or c3")),
                };
                pos("c3", c3)?;
                if self.s_b.is_some() {
                    return Err(Error::invalid("interactive report carries s_b"));
                }
                Ok(dn >= c3 || tail)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.decision()? != self.reject {
            return Err(Error::invalid(
                "reject flag disagrees with the statistics and critical values",
            ));
        }
        Ok(())
    }
}

impl TryFrom<TestReportRepr> for TestReport {
    type Error = Error;
    fn try_from(r: TestReportRepr) -> Result<Self> {
        let rep = TestReport {
            s_b: r.s_b,
            t_b: r.t_b,
            d_n: r.d_n,
            c1: r.c1,
            c2: r.c2,
            c3: r.c3,
            reject: r.reject,
            b_used: r.b_used,
            mode: r.mode,
            norm: r.norm,
        };
        rep.validate()?;
        Ok(rep)
    }
}

impl From<TestReport> for TestReportRepr {
    fn from(r: TestReport) -> Self {
        TestReportRepr {
            s_b: r.s_b,
            t_b: r.t_b,
            d_n: r.d_n,
            c1: r.c1,
            c2: r.c2,
            c3: r.c3,
            reject: r.reject,
            b_used: r.b_used,
            mode: r.mode,
            norm: r.norm,
        }
    }
}

/// `S_B` from its per-coordinate sums.
///
/// `sums[k] = Σ_i a_ik` and `sq_sums[k] = Σ_i a_ik²` where `a_ik` is the
/// centred privatized coordinate for the `k`-th member of `B`.
pub fn statistic_s_from_sums(sums: &[f64], sq_sums: &[f64], n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("S_B needs at least two users"));
    }
    let pairs = n as f64 * (n as f64 - 1.0);
    let terms: Vec<f64> = sums
        .iter()
        .zip(sq_sums)
        .map(|(s, q)| (s * s - q) / pairs)
        .collect();
    Ok(compensated_sum(terms))
}

/// The U-statistic `S_B`; rows are users, columns follow the order of `B`.
pub fn statistic_s(z: &[Vec<f64>], p0: &ProbVector, b: &SupportSet) -> Result<f64> {
    let n = z.len();
    if n < 2 {
        return Err(Error::invalid("S_B needs at least two users"));
    }
    check_support(p0, b)?;
    let k = b.len();
    let centre: Vec<f64> = b.members().iter().map(|&j| p0.get(j)).collect();
    let mut sums = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for (i, row) in z.iter().enumerate() {
        if row.len() != k {
            return Err(Error::invalid(format!(
                "row {} has {} entries, expected |B| = {k}",
                i + 1,
                row.len()
            )));
        }
        for c in 0..k {
            let a = row[c] - centre[c];
            sums[c] += a;
            sq[c] += a * a;
        }
    }
    statistic_s_from_sums(&sums, &sq, n)
}

/// Direct `O(n² |B|)` evaluation of the double sum defining `S_B`.
pub fn statistic_s_pairwise(z: &[Vec<f64>], p0: &ProbVector, b: &SupportSet) -> Result<f64> {
    let n = z.len();
    if n < 2 {
        return Err(Error::invalid("S_B needs at least two users"));
    }
    check_support(p0, b)?;
    let mut total = 0.0;
    for (c, &j) in b.members().iter().enumerate() {
        let q = p0.get(j);
        for i1 in 0..n {
            for i2 in 0..n {
                if i1 != i2 {
                    total += (z[i1][c] - q) * (z[i2][c] - q);
                }
            }
        }
    }
    Ok(total / (n as f64 * (n as f64 - 1.0)))
}

/// `T_B`: the mean of `z_i − p_0(B^c)`.
pub fn statistic_t(z: &[f64], p0_tail: f64) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::invalid("T_B needs at least one user"));
    }
    let centred: Vec<f64> = z.iter().map(|v| v - p0_tail).collect();
    Ok(compensated_sum(centred) / z.len() as f64)
}

/// `D_n = mean(Z) − Σ_j p_0(j) [p̂_j − p_0(j)]_{−τ}^{τ}`.
pub fn statistic_d(z2: &[Stage2Record], p_hat: &[f64], p0: &ProbVector, tau: f64) -> Result<f64> {
    if z2.is_empty() {
        return Err(Error::invalid("D_n needs at least one stage-two user"));
    }
    if p_hat.len() != p0.d() {
        return Err(Error::invalid(format!(
            "p_hat has length {} but d = {}",
            p_hat.len(),
            p0.d()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau = {tau} must be positive")));
    }
    let zs: Vec<f64> = z2.iter().map(|r| r.z).collect();
    let mean = compensated_sum(zs.iter().copied()) / zs.len() as f64;
    Ok(mean - centring_term(p_hat, p0, tau))
}

/// `Σ_j p_0(j) [p̂_j − p_0(j)]_{−τ}^{τ}`.
pub fn centring_term(p_hat: &[f64], p0: &ProbVector, tau: f64) -> f64 {
    let terms: Vec<f64> = p_hat
        .iter()
        .zip(p0.as_slice())
        .map(|(ph, q)| q * crate::privacy::censor(ph - q, tau))
        .collect();
    compensated_sum(terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValues {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// The three thresholds for a block of `n` users and `|B| = b_size`.
///
/// `c3` carries the literal factor `(e+1)/(e−1)` for every `α`.
pub fn critical_values(n: usize, b_size: usize, params: &PrivacyParams) -> Result<CriticalValues> {
    if n < 2 {
        return Err(Error::invalid("critical values need n >= 2"));
    }
    if b_size == 0 {
        return Err(Error::invalid("|B| must be >= 1"));
    }
    let nf = n as f64;
    let a2 = params.alpha * params.alpha;
    let g = params.gamma;
    let c1 = (656.0 * b_size as f64 / (nf * (nf - 1.0) * a2 * a2 * g)).sqrt();
    let c2 = 6.0 / (nf * a2 * g).sqrt();
    let e = std::f64::consts::E;
    let c3 = (e + 1.0) / (e - 1.0) * (4.0 / g).sqrt() / (nf * a2);
    Ok(CriticalValues { c1, c2, c3 })
}

/// Exponent of `j` in the selection rule, `None` for interactive L2.
pub fn selection_exponent(norm: Norm, mode: Mode) -> Option<f64> {
    match (mode, norm) {
        (Mode::Noninteractive, Norm::L1) => Some(0.75),
        (Mode::Noninteractive, Norm::L2) => Some(0.25),
        (Mode::Interactive, Norm::L1) => Some(0.5),
        (Mode::Interactive, Norm::L2) => None,
    }
}

/// Tail sums of the descending reordering: entry `j` (0-based `j`) is the
/// mass outside the top `j` categories; entry `d` is 0.
pub fn sorted_tail_sums(p0: &ProbVector) -> (Vec<usize>, Vec<f64>) {
    let order = descending_order(p0);
    let d = order.len();
    let mut tails = vec![0.0; d + 1];
    // accumulate from the smallest mass upward
    let mut acc = 0.0_f64;
    let mut comp = 0.0_f64;
    for j in (0..d).rev() {
        let v = p0.get(order[j]);
        let t = acc + v;
        if acc.abs() >= v.abs() {
            comp += (acc - t) + v;
        } else {
            comp += (v - t) + acc;
        }
        acc = t;
        tails[j] = (acc + comp).max(0.0);
    }
    (order, tails)
}

/// The smallest `j` with `j^e / √(nα²) ≥ Σ_{j' > j} p_0(j')` on the
/// descending order, and the corresponding top-`j` support.
pub fn select_b(
    p0: &ProbVector,
    n: usize,
    alpha: f64,
    norm: Norm,
    mode: Mode,
) -> Result<(usize, SupportSet)> {
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha = {alpha} must lie in (0, 1]")));
    }
    let d = p0.d();
    let Some(expo) = selection_exponent(norm, mode) else {
        return Ok((d, SupportSet::full(d)));
    };
    let root = (n as f64 * alpha * alpha).sqrt();
    let (order, tails) = sorted_tail_sums(p0);
    let j = (1..=d)
        .find(|&j| (j as f64).powf(expo) / root >= tails[j])
        .unwrap_or(d);
    let b = SupportSet::new(order[..j].to_vec(), d)?;
    Ok((j, b))
}

fn check_support(p0: &ProbVector, b: &SupportSet) -> Result<()> {
    if p0.d() != b.d() {
        return Err(Error::invalid(format!(
            "support set is over [{}] but p0 has d = {}",
            b.d(),
            p0.d()
        )));
    }
    Ok(())
}

fn check_block(params: &PrivacyParams, len: usize, parts: usize) -> Result<usize> {
    if len % parts != 0 {
        return Err(Error::invalid(format!(
            "sample length {len} is not divisible by {parts}"
        )));
    }
    let n = len / parts;
    if n < 2 {
        return Err(Error::invalid(format!(
            "each of the {parts} blocks needs at least 2 users, got {n}"
        )));
    }
    if params.n_block != n {
        return Err(Error::invalid(format!(
            "n_block = {} but the sample gives blocks of {n}",
            params.n_block
        )));
    }
    Ok(n)
}

/// Assemble a non-interactive report from already privatized blocks.
pub fn noninteractive_report(
    z: &[Vec<f64>],
    tail_z: &[f64],
    p0: &ProbVector,
    b: &SupportSet,
    params: &PrivacyParams,
    norm: Norm,
) -> Result<TestReport> {
    let s_b = statistic_s(z, p0, b)?;
    let t_b = statistic_t(tail_z, crate::distributions::tail_mass(p0, b)?)?;
    let cv = critical_values(z.len(), b.len(), params)?;
    Ok(TestReport {
        s_b: Some(s_b),
        t_b,
        d_n: None,
        c1: cv.c1,
        c2: cv.c2,
        c3: None,
        reject: s_b >= cv.c1 || t_b >= cv.c2,
        b_used: b.clone(),
        mode: Mode::Noninteractive,
        norm,
    })
}

/// Assemble an interactive report from a stage-one estimate, stage-two
/// outputs and tail outputs.
pub fn interactive_report(
    p_hat: &[f64],
    z2: &[Stage2Record],
    tail_z: &[f64],
    p0: &ProbVector,
    b: &SupportSet,
    params: &PrivacyParams,
    norm: Norm,
) -> Result<TestReport> {
    check_support(p0, b)?;
    let n = z2.len();
    let tau = tau_of(n, params.alpha);
    let d_n = statistic_d(z2, p_hat, p0, tau)?;
    let t_b = statistic_t(tail_z, crate::distributions::tail_mass(p0, b)?)?;
    let cv = critical_values(n, b.len(), params)?;
    Ok(TestReport {
        s_b: None,
        t_b,
        d_n: Some(d_n),
        c1: cv.c1,
        c2: cv.c2,
        c3: Some(cv.c3),
        reject: d_n >= cv.c3 || t_b >= cv.c2,
        b_used: b.clone(),
        mode: Mode::Interactive,
        norm,
    })
}

/// `φ_B` on a sample of `2n` raw categories, with `B` from [`select_b`].
pub fn run_test_noninteractive<R: Rng + ?Sized>(
    x: &[usize],
    p0: &ProbVector,
    params: &PrivacyParams,
    norm: Norm,
    rng: &mut R,
) -> Result<TestReport> {
    params.validate()?;
    let n = check_block(params, x.len(), 2)?;
    let (_, b) = select_b(p0, n, params.alpha, norm, Mode::Noninteractive)?;
    run_test_noninteractive_with(x, p0, &b, params, norm, &mut RngNoise(rng))
}

/// `φ_B` with an explicit `B` and noise source.
pub fn run_test_noninteractive_with<N: LaplaceNoise + ?Sized>(
    x: &[usize],
    p0: &ProbVector,
    b: &SupportSet,
    params: &PrivacyParams,
    norm: Norm,
    noise: &mut N,
) -> Result<TestReport> {
    params.validate()?;
    let n = check_block(params, x.len(), 2)?;
    check_support(p0, b)?;
    let z = x[..n]
        .iter()
        .map(|&xi| privatize_indicator_vector_with(xi, b, params, noise).map(|r| r.z))
        .collect::<Result<Vec<_>>>()?;
    let tail = x[n..]
        .iter()
        .map(|&xi| privatize_tail_indicator_with(xi, b, params, noise))
        .collect::<Result<Vec<_>>>()?;
    noninteractive_report(&z, &tail, p0, b, params, norm)
}

/// `ψ_B` on a sample of `3n` raw categories.
pub fn run_test_interactive<R: Rng + ?Sized>(
    x: &[usize],
    p0: &ProbVector,
    params: &PrivacyParams,
    norm: Norm,
    rng: &mut R,
) -> Result<TestReport> {
    params.validate()?;
    let n = check_block(params, x.len(), 3)?;
    let (_, b) = select_b(p0, n, params.alpha, norm, Mode::Interactive)?;
    let d = p0.d();
    let p_hat = estimate_frequencies(&x[..n], d, params, &mut RngNoise(&mut *rng))?;
    let mech = Stage2Mechanism::new(&p_hat, p0, params)?;
    let z2 = x[n..2 * n]
        .iter()
        .map(|&xi| mech.privatize(xi, rng))
        .collect::<Result<Vec<_>>>()?;
    let tail = x[2 * n..]
        .iter()
        .map(|&xi| privatize_tail_indicator_with(xi, &b, params, &mut RngNoise(&mut *rng)))
        .collect::<Result<Vec<_>>>()?;
    interactive_report(&p_hat, &z2, &tail, p0, &b, params, norm)
}
