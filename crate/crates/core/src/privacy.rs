//! Local privacy mechanisms.
//!
//! * Laplace-perturbed indicator vectors `Z_j = 1{x = j} + (2/α) W_j`,
//! * a Laplace-perturbed tail indicator `1{x ∉ B} + (2/α) W`,
//! * the stage-two randomized response on `{−c_α τ, +c_α τ}` whose
//!   conditional mean given `x = j` is the censored deviation
//!   `[p̂_j − p_0(j)]_{−τ}^{τ}`.
//!
//! All noise flows through [`LaplaceNoise`], so tests can swap in
//! [`ZeroNoise`] and observe the noiseless outputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::ProbVector;
use crate::error::{Error, Result};
use crate::teststats::SupportSet;

/// Privacy level, risk level and per-block sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub alpha: f64,
    pub gamma: f64,
    pub n_block: usize,
}

impl PrivacyParams {
    pub fn new(alpha: f64, gamma: f64, n_block: usize) -> Result<Self> {
        let p = Self {
            alpha,
            gamma,
            n_block,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "alpha = {} must lie in (0, 1]",
                self.alpha
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!(
                "gamma = {} must lie in (0, 1)",
                self.gamma
            )));
        }
        if self.n_block == 0 {
            return Err(Error::invalid("n_block must be >= 1"));
        }
        Ok(())
    }

    /// `n α²`, the effective private sample size.
    pub fn n_alpha2(&self) -> f64 {
        self.n_block as f64 * self.alpha * self.alpha
    }

    /// Scale `2/α` of the Laplace noise added to indicators.
    pub fn noise_scale(&self) -> f64 {
        2.0 / self.alpha
    }
}

/// Source of standard Laplace(1) variates.
pub trait LaplaceNoise {
    fn next_unit(&mut self) -> f64;
}

/// Laplace(1) draws from a random generator.
pub struct RngNoise<'a, R: Rng + ?Sized>(pub &'a mut R);

impl<R: Rng + ?Sized> LaplaceNoise for RngNoise<'_, R> {
    #[inline]
    fn next_unit(&mut self) -> f64 {
        laplace_unit(self.0)
    }
}

/// Always zero; gives the noiseless limit of every mechanism.
#[derive(Debug, Default, Clone, Copy)]
pub struct ZeroNoise;

impl LaplaceNoise for ZeroNoise {
    fn next_unit(&mut self) -> f64 {
        0.0
    }
}

/// Standard Laplace draw by inversion.
///
/// With `u` uniform on `(−½, ½)` the draw is `−sgn(u) ln(1 − 2|u|)`. The top
/// 53 bits of one `u64` give `1 − 2|u|` on the grid `(0, 1]` and the lowest
/// bit gives the sign, so the logarithm is always finite.
#[inline]
pub fn laplace_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let r = rng.next_u64();
    let w = ((r >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let e = -w.ln();
    if r & 1 == 1 {
        e
    } else {
        -e
    }
}

/// A Laplace draw with density `exp(−|x|/scale) / (2 scale)`.
pub fn laplace_draw<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("Laplace scale {scale} must be > 0")));
    }
    Ok(scale * laplace_unit(rng))
}

/// One user's privatized indicator vector, one coordinate per member of `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateVectorRecord {
    pub z: Vec<f64>,
}

fn check_category(x: usize, d: usize) -> Result<()> {
    if x == 0 || x > d {
        return Err(Error::invalid(format!("category {x} outside [1, {d}]")));
    }
    Ok(())
}

pub fn privatize_indicator_vector<R: Rng + ?Sized>(
    x: usize,
    b: &SupportSet,
    params: &PrivacyParams,
    rng: &mut R,
) -> Result<PrivateVectorRecord> {
    privatize_indicator_vector_with(x, b, params, &mut RngNoise(rng))
}

pub fn privatize_indicator_vector_with<N: LaplaceNoise + ?Sized>(
    x: usize,
    b: &SupportSet,
    params: &PrivacyParams,
    noise: &mut N,
) -> Result<PrivateVectorRecord> {
    check_category(x, b.d())?;
    let scale = params.noise_scale();
    let z = b
        .members()
        .iter()
        .map(|&j| f64::from(u8::from(j == x)) + scale * noise.next_unit())
        .collect();
    Ok(PrivateVectorRecord { z })
}

pub fn privatize_tail_indicator<R: Rng + ?Sized>(
    x: usize,
    b: &SupportSet,
    params: &PrivacyParams,
    rng: &mut R,
) -> Result<f64> {
    privatize_tail_indicator_with(x, b, params, &mut RngNoise(rng))
}

pub fn privatize_tail_indicator_with<N: LaplaceNoise + ?Sized>(
    x: usize,
    b: &SupportSet,
    params: &PrivacyParams,
    noise: &mut N,
) -> Result<f64> {
    check_category(x, b.d())?;
    let outside = f64::from(u8::from(!b.contains(x)));
    Ok(outside + params.noise_scale() * noise.next_unit())
}

/// `(−τ) ∨ v ∧ τ`.
#[inline]
pub fn censor(v: f64, tau: f64) -> f64 {
    debug_assert!(tau > 0.0);
    v.clamp(-tau, tau)
}

/// `(e^α + 1) / (e^α − 1)`.
pub fn c_alpha(alpha: f64) -> f64 {
    // expm1 keeps the denominator accurate for small α
    let m = alpha.exp_m1();
    (m + 2.0) / m
}

/// `τ = (n α²)^{−1/2}`.
pub fn tau_of(n: usize, alpha: f64) -> f64 {
    (n as f64 * alpha * alpha).sqrt().recip()
}

/// Stage-two output, one of `±c_α τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage2Record {
    pub z: f64,
}

impl Stage2Record {
    pub fn new(positive: bool, magnitude: f64) -> Self {
        Self {
            z: if positive { magnitude } else { -magnitude },
        }
    }
}

/// The stage-two randomizer for a fixed stage-one estimate `p̂`.
///
/// Stores, per category, the censored deviation and the probability of
/// emitting `+c_α τ`.
#[derive(Debug, Clone)]
pub struct Stage2Mechanism {
    magnitude: f64,
    tau: f64,
    censored: Vec<f64>,
    prob_plus: Vec<f64>,
}

impl Stage2Mechanism {
    pub fn new(p_hat: &[f64], p0: &ProbVector, params: &PrivacyParams) -> Result<Self> {
        if p_hat.len() != p0.d() {
            return Err(Error::invalid(format!(
                "p_hat has length {} but d = {}",
                p_hat.len(),
                p0.d()
            )));
        }
        if let Some(v) = p_hat.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("p_hat entry {v} is not finite")));
        }
        let tau = tau_of(params.n_block, params.alpha);
        let magnitude = c_alpha(params.alpha) * tau;
        let censored: Vec<f64> = p_hat
            .iter()
            .zip(p0.as_slice())
            .map(|(ph, q)| censor(ph - q, tau))
            .collect();
        let prob_plus: Vec<f64> = censored
            .iter()
            .map(|a| 0.5 + a / (2.0 * magnitude))
            .collect();
        // |a| <= τ < c_α τ keeps every probability strictly inside (0, 1)
        assert!(
            prob_plus.iter().all(|&q| q > 0.0 && q < 1.0),
            "stage-two probabilities left (0, 1)"
        );
        Ok(Self {
            magnitude,
            tau,
            censored,
            prob_plus,
        })
    }

    /// `c_α τ`.
    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `[p̂_j − p_0(j)]_{−τ}^{τ}` for 1-based `j`.
    pub fn censored(&self, j: usize) -> f64 {
        self.censored[j - 1]
    }

    pub fn censored_all(&self) -> &[f64] {
        &self.censored
    }

    /// `P(Z = +c_α τ | X = j)` for 1-based `j`.
    pub fn prob_plus(&self, j: usize) -> f64 {
        self.prob_plus[j - 1]
    }

    pub fn prob_plus_all(&self) -> &[f64] {
        &self.prob_plus
    }

    pub fn privatize<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> Result<Stage2Record> {
        check_category(x, self.prob_plus.len())?;
        let u: f64 = rng.random();
        Ok(Stage2Record::new(u < self.prob_plus[x - 1], self.magnitude))
    }

    /// Conditional output distribution: row `j−1` is `[P(−|j), P(+|j)]`.
    pub fn table(&self) -> Vec<Vec<f64>> {
        self.prob_plus.iter().map(|&q| vec![1.0 - q, q]).collect()
    }
}

pub fn privatize_stage2<R: Rng + ?Sized>(
    x: usize,
    p_hat: &[f64],
    p0: &ProbVector,
    params: &PrivacyParams,
    rng: &mut R,
) -> Result<Stage2Record> {
    Stage2Mechanism::new(p_hat, p0, params)?.privatize(x, rng)
}

/// Outcome of [`verify_ldp_finite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpCheck {
    pub ok: bool,
    /// `max_z max_{x,x'} log(P(z|x)/P(z|x'))`; `+∞` if some output has
    /// zero probability under one input and positive under another.
    pub max_log_ratio: f64,
}

/// Exact α-LDP check for a finite-output mechanism given as a table of
/// conditional distributions (one row per input).
pub fn verify_ldp_finite(table: &[Vec<f64>], alpha: f64) -> Result<LdpCheck> {
    let Some(first) = table.first() else {
        return Err(Error::invalid("mechanism table has no rows"));
    };
    let width = first.len();
    for (i, row) in table.iter().enumerate() {
        if row.len() != width {
            return Err(Error::invalid(format!("row {} has a different width", i + 1)));
        }
        if row.iter().any(|&q| !(q >= 0.0 && q.is_finite())) {
            return Err(Error::invalid(format!("row {} has an invalid probability", i + 1)));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("row {} sums to {s}", i + 1)));
        }
    }
    let mut worst = 0.0_f64;
    for z in 0..width {
        let (lo, hi) = table
            .iter()
            .map(|row| row[z])
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), q| (lo.min(q), hi.max(q)));
        if hi == 0.0 {
            continue;
        }
        let r = if lo == 0.0 {
            f64::INFINITY
        } else {
            hi.ln() - lo.ln()
        };
        worst = worst.max(r);
    }
    Ok(LdpCheck {
        ok: worst <= alpha + 1e-12,
        max_log_ratio: worst,
    })
}

/// Log density of the indicator-vector output `z` (indexed like `B`) given
/// input `x`.
pub fn laplace_vector_log_density(z: &[f64], x: usize, b: &SupportSet, alpha: f64) -> f64 {
    let scale = 2.0 / alpha;
    b.members()
        .iter()
        .zip(z)
        .map(|(&j, &zj)| {
            let e = f64::from(u8::from(j == x));
            -(zj - e).abs() / scale - (2.0 * scale).ln()
        })
        .sum()
}

/// Largest log-density ratio of the indicator-vector mechanism over input
/// pairs, each pair evaluated at the output that puts every coordinate on
/// the first input's indicator.
pub fn laplace_vector_max_log_ratio(b: &SupportSet, alpha: f64) -> f64 {
    let d = b.d();
    // inputs outside B all produce the same output law
    let mut inputs: Vec<usize> = b.members().to_vec();
    if let Some(out) = (1..=d).find(|&j| !b.contains(j)) {
        inputs.push(out);
    }
    let mut worst = 0.0_f64;
    for &x in &inputs {
        let z: Vec<f64> = b
            .members()
            .iter()
            .map(|&j| f64::from(u8::from(j == x)))
            .collect();
        let top = laplace_vector_log_density(&z, x, b, alpha);
        for &xp in &inputs {
            worst = worst.max(top - laplace_vector_log_density(&z, xp, b, alpha));
        }
    }
    worst
}

/// Average of stage-one indicator vectors over the whole alphabet.
pub fn estimate_frequencies<N: LaplaceNoise + ?Sized>(
    xs: &[usize],
    d: usize,
    params: &PrivacyParams,
    noise: &mut N,
) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::invalid("stage-one block is empty"));
    }
    let scale = params.noise_scale();
    let mut sums = vec![0.0_f64; d];
    for &x in xs {
        check_category(x, d)?;
        for (j, s) in sums.iter_mut().enumerate() {
            *s += f64::from(u8::from(j + 1 == x)) + scale * noise.next_unit();
        }
    }
    let n = xs.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}
