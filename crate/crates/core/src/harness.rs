//! Monte Carlo estimation of risks and separation radii.
//!
//! Every replication draws from its own ChaCha stream whose seed is a hash
//! of the master seed, a purpose tag, a panel index and the replication
//! index. Replications run on the rayon pool and only integer rejection
//! counts are combined, so results do not depend on the number of threads.
//!
//! Two simulation engines are available. [`Engine::PerUser`] samples every
//! user and runs the mechanisms exactly as deployed. [`Engine::Aggregate`]
//! draws the test statistics from sufficient quantities: category counts
//! from a multinomial, sums of `m` Laplace variables as a difference of two
//! Gamma(m, 1) variables, and the stage-two count of `+c_α τ` outputs from
//! a binomial. This is exact for `D_n` and `T_B`. For `S_B` the sum of
//! squared noise variables `Σ_i W_ij²` is replaced by a normal variable
//! with the same mean `2n` and variance `20n`, drawn independently of the
//! noise sums (the two are uncorrelated). Its spread is a fraction of order
//! `n^{-1/2}` of that of `S_B`.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alternatives::{
    distance, random_direction_alternative, AlternativeKind, AlternativeSpec, PanelMember,
};
use crate::distributions::{make_family, multinomial_counts, normalize, tail_mass, CategorySampler, FamilySpec, ProbVector};
use crate::error::{Error, Result};
use crate::privacy::{c_alpha, tau_of, PrivacyParams, Stage2Mechanism};
use crate::rates::{lower_bound, table1_rate};
use crate::teststats::{
    centring_term, critical_values, run_test_interactive, run_test_noninteractive, select_b,
    statistic_s_from_sums, CriticalValues, Mode, Norm, SupportSet,
};

/// `z_{0.975}` for 95% intervals.
pub const WILSON_Z95: f64 = 1.959_963_984_540_054;

const TAG_TYPE1: u64 = 1;
const TAG_TYPE2: u64 = 2;
const TAG_ALTERNATIVE: u64 = 3;
const TAG_CALIBRATION: u64 = 4;

/// Replications are processed in chunks of this size so a probe can stop
/// as soon as its decision is settled.
const CHUNK: u64 = 50;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream identified by `parts` under `master`.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(master), |h, &p| {
            splitmix(h.wrapping_mul(0xD6E8_FEB8_6659_FD93).wrapping_add(splitmix(p)))
        })
}

pub fn stream(master: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, parts))
}

/// 95% Wilson interval for `k` successes in `m` trials.
pub fn wilson_interval(k: u64, m: u64) -> (f64, f64) {
    assert!(m > 0 && k <= m);
    let mf = m as f64;
    let p = k as f64 / mf;
    let z2 = WILSON_Z95 * WILSON_Z95;
    let denom = 1.0 + z2 / mf;
    let centre = (p + z2 / (2.0 * mf)) / denom;
    let half = WILSON_Z95 / denom * (p * (1.0 - p) / mf + z2 / (4.0 * mf * mf)).sqrt();
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k == m { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    PerUser,
    #[default]
    Aggregate,
}

/// A fully specified test: `p_0`, privacy parameters, norm and mode, with
/// the support set and thresholds resolved once.
#[derive(Debug, Clone)]
pub struct TestSetup {
    pub p0: ProbVector,
    pub params: PrivacyParams,
    pub norm: Norm,
    pub mode: Mode,
    pub b: SupportSet,
    pub cv: CriticalValues,
    p0_tail: f64,
    b_mask: Vec<bool>,
}

/// The statistics of one simulated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedRun {
    /// `S_B` (non-interactive) or `D_n` (interactive).
    pub main: f64,
    pub t_b: f64,
    pub reject: bool,
}

#[inline]
fn laplace_sum<R: Rng + ?Sized>(n: u64, rng: &mut R) -> f64 {
    let g = Gamma::new(n as f64, 1.0).expect("shape is positive");
    g.sample(rng) - g.sample(rng)
}

impl TestSetup {
    pub fn new(p0: ProbVector, params: PrivacyParams, norm: Norm, mode: Mode) -> Result<Self> {
        params.validate()?;
        if params.n_block < 2 {
            return Err(Error::invalid("n_block must be >= 2"));
        }
        let (_, b) = select_b(&p0, params.n_block, params.alpha, norm, mode)?;
        let cv = critical_values(params.n_block, b.len(), &params)?;
        let p0_tail = tail_mass(&p0, &b)?;
        let b_mask = b.mask();
        Ok(Self {
            p0,
            params,
            norm,
            mode,
            b,
            cv,
            p0_tail,
            b_mask,
        })
    }

    fn tail_statistic<R: Rng + ?Sized>(&self, p: &ProbVector, rng: &mut R) -> f64 {
        let n = self.params.n_block as u64;
        let q: f64 = (1..=p.d())
            .filter(|&j| !self.b_mask[j])
            .map(|j| p.get(j))
            .sum::<f64>()
            .clamp(0.0, 1.0);
        let k = Binomial::new(n, q).expect("tail mass lies in [0, 1]").sample(rng);
        let noise = self.params.noise_scale() * laplace_sum(n, rng);
        (k as f64 + noise) / n as f64 - self.p0_tail
    }

    /// One run through the aggregate engine.
    pub fn simulate_aggregate<R: Rng + ?Sized>(&self, p: &ProbVector, rng: &mut R) -> SimulatedRun {
        match self.mode {
            Mode::Noninteractive => self.simulate_ni(p, rng),
            Mode::Interactive => self.simulate_int(p, rng),
        }
    }

    fn simulate_ni<R: Rng + ?Sized>(&self, p: &ProbVector, rng: &mut R) -> SimulatedRun {
        let n = self.params.n_block;
        let nf = n as f64;
        let s = self.params.noise_scale();
        let counts = multinomial_counts(p, n as u64, rng);
        // Σ_i W_i² over n users: mean 2n, variance 20n
        let sq_noise = Normal::new(2.0 * nf, (20.0 * nf).sqrt()).expect("positive sd");
        let k = self.b.len();
        let mut sums = Vec::with_capacity(k);
        let mut sq = Vec::with_capacity(k);
        for &j in self.b.members() {
            let q = self.p0.get(j);
            let hits = counts[j - 1];
            let (c1, c0) = (1.0 - q, -q);
            let (h, rest) = (hits as f64, nf - hits as f64);
            let g1 = if hits > 0 { laplace_sum(hits, rng) } else { 0.0 };
            let g0 = if hits < n as u64 { laplace_sum(n as u64 - hits, rng) } else { 0.0 };
            let w2: f64 = sq_noise.sample(rng);
            sums.push(h * c1 + rest * c0 + s * (g1 + g0));
            sq.push(h * c1 * c1 + rest * c0 * c0 + 2.0 * s * (c1 * g1 + c0 * g0) + s * s * w2);
        }
        let s_b = statistic_s_from_sums(&sums, &sq, n).expect("n >= 2");
        let t_b = self.tail_statistic(p, rng);
        SimulatedRun {
            main: s_b,
            t_b,
            reject: s_b >= self.cv.c1 || t_b >= self.cv.c2,
        }
    }

    fn simulate_int<R: Rng + ?Sized>(&self, p: &ProbVector, rng: &mut R) -> SimulatedRun {
        let n = self.params.n_block;
        let nf = n as f64;
        let s = self.params.noise_scale();
        let counts = multinomial_counts(p, n as u64, rng);
        let p_hat: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64 + s * laplace_sum(n as u64, rng)) / nf)
            .collect();
        let mech = Stage2Mechanism::new(&p_hat, &self.p0, &self.params)
            .expect("p_hat has length d and finite entries");
        let plus: f64 = p
            .as_slice()
            .iter()
            .zip(mech.prob_plus_all())
            .map(|(pj, qj)| pj * qj)
            .sum::<f64>()
            .clamp(0.0, 1.0);
        let k = Binomial::new(n as u64, plus).expect("probability in [0, 1]").sample(rng);
        let mean_z = mech.magnitude() * (2.0 * k as f64 - nf) / nf;
        let d_n = mean_z - centring_term(&p_hat, &self.p0, mech.tau());
        let t_b = self.tail_statistic(p, rng);
        SimulatedRun {
            main: d_n,
            t_b,
            reject: d_n >= self.cv.c3 || t_b >= self.cv.c2,
        }
    }

    /// One run with every user sampled and privatized.
    pub fn simulate_per_user<R: Rng + ?Sized>(
        &self,
        sampler: &CategorySampler,
        rng: &mut R,
    ) -> Result<SimulatedRun> {
        let blocks = match self.mode {
            Mode::Noninteractive => 2,
            Mode::Interactive => 3,
        };
        let x: Vec<usize> = (0..blocks * self.params.n_block)
            .map(|_| sampler.draw(rng))
            .collect();
        let rep = match self.mode {
            Mode::Noninteractive => run_test_noninteractive(&x, &self.p0, &self.params, self.norm, rng)?,
            Mode::Interactive => run_test_interactive(&x, &self.p0, &self.params, self.norm, rng)?,
        };
        Ok(SimulatedRun {
            main: rep.s_b.or(rep.d_n).unwrap_or(f64::NAN),
            t_b: rep.t_b,
            reject: rep.reject,
        })
    }

    /// Number of rejections among replications `reps` of the stream
    /// `(master, parts..)`, data drawn from `p`.
    pub fn count_rejections(
        &self,
        p: &ProbVector,
        engine: Engine,
        master: u64,
        parts: &[u64],
        reps: std::ops::Range<u64>,
    ) -> Result<u64> {
        let sampler = CategorySampler::new(p);
        reps.into_par_iter()
            .map(|r| {
                let mut key = parts.to_vec();
                key.push(r);
                let mut rng = stream(master, &key);
                let run = match engine {
                    Engine::Aggregate => self.simulate_aggregate(p, &mut rng),
                    Engine::PerUser => self.simulate_per_user(&sampler, &mut rng)?,
                };
                Ok(u64::from(run.reject))
            })
            .sum()
    }

    /// Count of non-rejections over `m` replications, stopping early once
    /// it exceeds `limit`. Returns `(count, completed)`.
    fn count_failures_until(
        &self,
        p: &ProbVector,
        engine: Engine,
        master: u64,
        parts: &[u64],
        m: u64,
        limit: Option<u64>,
    ) -> Result<(u64, bool)> {
        let mut fails = 0;
        let mut start = 0;
        while start < m {
            let end = (start + CHUNK).min(m);
            let rej = self.count_rejections(p, engine, master, parts, start..end)?;
            fails += (end - start) - rej;
            start = end;
            if let Some(l) = limit {
                if fails > l {
                    return Ok((fails, start == m));
                }
            }
        }
        Ok((fails, true))
    }
}

/// Rejection frequencies under `p_0` and, optionally, an alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub type1: f64,
    pub type2: Option<f64>,
    /// Largest half-width of the 95% Wilson intervals of the reported
    /// frequencies.
    pub ci_halfwidth: f64,
    #[serde(rename = "M")]
    pub m: u64,
}

impl RiskEstimate {
    pub fn from_counts(type1_count: u64, type2_count: Option<u64>, m: u64) -> Self {
        let half = |k: u64| {
            let (lo, hi) = wilson_interval(k, m);
            0.5 * (hi - lo)
        };
        let mut ci = half(type1_count);
        if let Some(k) = type2_count {
            ci = ci.max(half(k));
        }
        Self {
            type1: type1_count as f64 / m as f64,
            type2: type2_count.map(|k| k as f64 / m as f64),
            ci_halfwidth: ci,
            m,
        }
    }

    /// `type1 + type2` (or `type1` alone without an alternative).
    pub fn risk(&self) -> f64 {
        self.type1 + self.type2.unwrap_or(0.0)
    }

    /// Recompute the half-width from `M` and the point estimates.
    pub fn check_consistent(&self) -> bool {
        let k1 = (self.type1 * self.m as f64).round() as u64;
        let k2 = self.type2.map(|t| (t * self.m as f64).round() as u64);
        let again = RiskEstimate::from_counts(k1, k2, self.m);
        (again.ci_halfwidth - self.ci_halfwidth).abs() < 1e-12
    }
}

/// One point of an experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: FamilySpec,
    pub n_block: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub norm: Norm,
    pub mode: Mode,
    #[serde(alias = "M")]
    pub replications: u64,
    #[serde(default)]
    pub alternative: Option<AlternativeSpec>,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.family.kind.validate()?;
        PrivacyParams::new(self.alpha, self.gamma, self.n_block)?;
        if self.n_block < 2 {
            return Err(Error::invalid("n_block must be >= 2"));
        }
        if self.replications < 100 {
            return Err(Error::invalid(format!(
                "replications = {} must be >= 100",
                self.replications
            )));
        }
        if let Some(a) = &self.alternative {
            a.validate()?;
        }
        Ok(())
    }

    pub fn params(&self) -> Result<PrivacyParams> {
        PrivacyParams::new(self.alpha, self.gamma, self.n_block)
    }

    pub fn setup(&self) -> Result<TestSetup> {
        self.validate()?;
        TestSetup::new(make_family(&self.family)?, self.params()?, self.norm, self.mode)
    }
}

pub fn estimate_risk(cfg: &ExperimentConfig) -> Result<RiskEstimate> {
    estimate_risk_with(cfg, Engine::Aggregate)
}

pub fn estimate_risk_with(cfg: &ExperimentConfig, engine: Engine) -> Result<RiskEstimate> {
    let setup = cfg.setup()?;
    let m = cfg.replications;
    let master = cfg.master_seed;
    let t1 = setup.count_rejections(&setup.p0, engine, master, &[TAG_TYPE1], 0..m)?;
    let t2 = match &cfg.alternative {
        None => None,
        Some(alt) => {
            let seed = alt.seed.unwrap_or_else(|| derive_seed(master, &[TAG_ALTERNATIVE]));
            let p = alt.build(&setup.p0, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let rej = setup.count_rejections(&p, engine, master, &[TAG_TYPE2], 0..m)?;
            Some(m - rej)
        }
    };
    Ok(RiskEstimate::from_counts(t1, t2, m))
}

/// The default panel: paired signs on the largest even support, paired
/// signs on about half of it, and the mass shift.
pub fn default_panel(d: usize) -> Vec<PanelMember> {
    let mut panel = Vec::new();
    let full = d - d % 2;
    if full >= 2 {
        panel.push(PanelMember::paired_signs(full));
        let half = (d / 2) - (d / 2) % 2;
        if half >= 2 && half != full {
            panel.push(PanelMember::paired_signs(half));
        }
    }
    if d >= 2 {
        panel.push(PanelMember::mass_shift());
    }
    panel
}

/// Bisection for the smallest `δ` in `[0, δ_max]` accepted by `accept`,
/// assuming acceptance is monotone. Stops when the bracket is no wider
/// than `tol · δ_max` and returns it.
pub fn bisect_crossing(
    delta_max: f64,
    tol: f64,
    mut accept: impl FnMut(f64) -> Result<bool>,
) -> Result<(f64, f64)> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::invalid(format!("tol = {tol} must lie in (0, 1)")));
    }
    if !accept(delta_max)? {
        return Err(Error::Saturated { delta_max });
    }
    let (mut lo, mut hi) = (0.0, delta_max);
    while hi - lo > tol * delta_max {
        let mid = 0.5 * (lo + hi);
        if accept(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone)]
pub struct SeparationSetup {
    pub p0: ProbVector,
    pub params: PrivacyParams,
    pub norm: Norm,
    pub mode: Mode,
    pub panel: Vec<PanelMember>,
    pub m: u64,
    pub tol: f64,
    pub master_seed: u64,
    pub engine: Engine,
}

/// Result of a radius search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationResult {
    /// Midpoint of the final bracket.
    pub radius: f64,
    /// Final bracket of the point-estimate bisection.
    pub bracket: (f64, f64),
    /// Largest `δ` at which the 95% lower confidence bound on the risk
    /// still exceeds `γ`, and smallest `δ` at which the upper bound has
    /// fallen to `γ` (both up to the bisection tolerance).
    pub ci: (f64, f64),
    /// The upper confidence bound never falls to `γ` below `δ_max`.
    pub indeterminate: bool,
    pub delta_max: f64,
    pub type1: f64,
    pub probes: usize,
}

/// Largest count `k` such that `type1 + wilson_hi(k/m) <= γ`, if any.
fn max_count_upper_ok(type1: f64, m: u64, gamma: f64) -> Option<u64> {
    (0..=m).take_while(|&k| type1 + wilson_interval(k, m).1 <= gamma).last()
}

/// Smallest count `k` with `type1 + wilson_lo(k/m) > γ`.
fn min_count_surely_above(type1: f64, m: u64, gamma: f64) -> Option<u64> {
    (0..=m).find(|&k| type1 + wilson_interval(k, m).0 > gamma)
}

/// Empirical separation radius: the `δ` at which
/// `type1 + max_panel type2(δ)` crosses `γ`.
///
/// The type I frequency is estimated once. Every probe reuses the same
/// replication streams (per panel member), so the estimated risk curve is
/// driven by `δ` alone.
pub fn empirical_separation(s: &SeparationSetup) -> Result<SeparationResult> {
    if s.panel.is_empty() {
        return Err(Error::invalid("alternative panel is empty"));
    }
    if s.m < 100 {
        return Err(Error::invalid("at least 100 replications per probe"));
    }
    let setup = TestSetup::new(s.p0.clone(), s.params, s.norm, s.mode)?;
    let gamma = s.params.gamma;
    let m = s.m;
    let t1c = setup.count_rejections(&setup.p0, s.engine, s.master_seed, &[TAG_TYPE1], 0..m)?;
    let type1 = t1c as f64 / m as f64;

    let reach: Vec<f64> = s
        .panel
        .iter()
        .map(|mem| mem.max_distance(&s.p0, s.norm))
        .collect::<Result<_>>()?;
    let delta_max = reach.iter().copied().fold(0.0, f64::max).min(s.norm.diameter());

    // largest admissible max-panel failure count for each decision
    let point_limit = ((gamma * m as f64).floor() as i64 - t1c as i64).max(-1);
    let upper_limit = max_count_upper_ok(type1, m, gamma).map_or(-1, |k| k as i64);
    let above_from = min_count_surely_above(type1, m, gamma);

    let mut probes = 0usize;
    let mut rng_alt = stream(s.master_seed, &[TAG_ALTERNATIVE]);
    // max failure count over the panel, stopping once it exceeds `limit`
    let mut worst_failures = |delta: f64, limit: i64| -> Result<u64> {
        probes += 1;
        let mut worst = 0;
        for (idx, mem) in s.panel.iter().enumerate() {
            if reach[idx] < delta * (1.0 - 1e-12) {
                continue;
            }
            let p = mem.at_distance(&s.p0, delta.min(reach[idx]), s.norm, &mut rng_alt)?;
            let lim = if limit < 0 { Some(0) } else { Some(limit as u64) };
            let (f, _) = setup.count_failures_until(
                &p,
                s.engine,
                s.master_seed,
                &[TAG_TYPE2, idx as u64],
                m,
                lim,
            )?;
            worst = worst.max(f);
            if worst as i64 > limit {
                break;
            }
        }
        Ok(worst)
    };

    if point_limit < 0 {
        return Err(Error::Saturated { delta_max });
    }
    let (lo, hi) = bisect_crossing(delta_max, s.tol, |d| {
        Ok(worst_failures(d, point_limit)? as i64 <= point_limit)
    })?;

    // smallest δ whose upper confidence bound is at most γ
    let (ci_hi, indeterminate) = if upper_limit < 0 {
        (delta_max, true)
    } else {
        match bisect_crossing(delta_max, s.tol, |d| {
            Ok(worst_failures(d, upper_limit)? as i64 <= upper_limit)
        }) {
            Ok((_, h)) => (h, false),
            Err(Error::Saturated { .. }) => (delta_max, true),
            Err(e) => return Err(e),
        }
    };
    // largest δ whose lower confidence bound exceeds γ
    let ci_lo = match above_from {
        None => 0.0,
        Some(k) => {
            let k = k as i64;
            // "accept" here means the risk is no longer surely above γ
            match bisect_crossing(delta_max, s.tol, |d| Ok((worst_failures(d, k - 1)? as i64) < k)) {
                Ok((l, _)) => l,
                Err(Error::Saturated { .. }) => delta_max,
                Err(e) => return Err(e),
            }
        }
    };
    Ok(SeparationResult {
        radius: 0.5 * (lo + hi),
        bracket: (lo, hi),
        ci: (ci_lo, ci_hi),
        indeterminate,
        delta_max,
        type1,
        probes,
    })
}

/// `D_τ(p) = Σ_j |p(j) − p_0(j)| min(τ, |p(j) − p_0(j)|)`.
pub fn d_tau(p: &ProbVector, p0: &ProbVector, tau: f64) -> f64 {
    p.as_slice()
        .iter()
        .zip(p0.as_slice())
        .map(|(a, b)| {
            let g = (a - b).abs();
            g * g.min(tau)
        })
        .sum()
}

/// One calibration case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCase {
    pub d: usize,
    pub n_block: usize,
    pub alpha: f64,
    pub d_tau: f64,
    pub mean_d_n: f64,
    pub ratio: f64,
    pub ratio_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub c: f64,
    pub cases: Vec<CalibrationCase>,
}

/// Largest standard error of `mean(D_n)/D_τ(p)` for a calibration case to
/// be kept.
pub const MAX_RATIO_SE: f64 = 0.05;

/// Estimate of the constant `c` in `E D_n ≥ c D_τ(p)`: the smallest
/// observed `mean(D_n)/D_τ(p)` minus three standard errors over `cases`
/// random pairs `(p, p_0)`, clipped into `(0, 1)`. Pairs whose ratio has a
/// standard error above [`MAX_RATIO_SE`] are redrawn.
pub fn calibrate_c<R: Rng + ?Sized>(m: u64, cases: usize, rng: &mut R) -> Result<f64> {
    Ok(calibrate_c_detailed(m, cases, rng)?.c)
}

pub fn calibrate_c_detailed<R: Rng + ?Sized>(
    m: u64,
    cases: usize,
    rng: &mut R,
) -> Result<Calibration> {
    if m < 10_000 {
        return Err(Error::invalid(format!("M = {m} must be >= 10000")));
    }
    if cases == 0 {
        return Err(Error::invalid("at least one calibration case"));
    }
    let master = rng.next_u64();
    let mut out = Vec::with_capacity(cases);
    let mut attempt = 0u64;
    while out.len() < cases {
        attempt += 1;
        if attempt > 100 * cases as u64 {
            return Err(Error::invalid("could not draw enough calibration cases"));
        }
        let d = rng.random_range(2..=20);
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
        let p0 = normalize(&w)?;
        let target = rng.random_range(0.1..1.0);
        let Ok(p) = random_direction_alternative(&p0, target, Norm::L1, rng) else {
            continue;
        };
        let n_block = [200, 1000, 5000][rng.random_range(0..3)];
        let alpha = [0.5, 1.0][rng.random_range(0..2)];
        let params = PrivacyParams::new(alpha, 0.1, n_block)?;
        let tau = tau_of(n_block, alpha);
        let dt = d_tau(&p, &p0, tau);
        if !(dt > 0.0) || distance(&p, &p0, Norm::L1)? == 0.0 {
            continue;
        }
        let setup = TestSetup::new(p0, params, Norm::L1, Mode::Interactive)?;
        let idx = out.len() as u64;
        let draws: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|r| {
                let mut g = stream(master, &[TAG_CALIBRATION, idx, r]);
                setup.simulate_aggregate(&p, &mut g).main
            })
            .collect();
        let mf = m as f64;
        let mean = draws.iter().sum::<f64>() / mf;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (mf - 1.0);
        let ratio_se = (var / mf).sqrt() / dt;
        // D_τ(p) buried in the noise of D_n says nothing about c
        if ratio_se > MAX_RATIO_SE {
            continue;
        }
        out.push(CalibrationCase {
            d,
            n_block,
            alpha,
            d_tau: dt,
            mean_d_n: mean,
            ratio: mean / dt,
            ratio_se,
        });
    }
    let raw = out
        .iter()
        .map(|c| c.ratio - 3.0 * c.ratio_se)
        .fold(f64::INFINITY, f64::min);
    let c = raw.clamp(1e-6, 1.0 - 1e-6);
    Ok(Calibration { c, cases: out })
}

/// A radius sweep: one search per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: Vec<ExperimentConfig>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub engine: Engine,
}

fn default_tol() -> f64 {
    0.01
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::invalid("sweep grid is empty"));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::invalid(format!("tol = {} must lie in (0, 1)", self.tol)));
        }
        for (i, cfg) in self.grid.iter().enumerate() {
            cfg.validate()
                .map_err(|e| Error::invalid(format!("grid point {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub family: String,
    pub params: String,
    pub d: usize,
    pub n_block: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub norm: Norm,
    pub mode: Mode,
    #[serde(rename = "M")]
    pub m: u64,
    pub master_seed: u64,
    pub radius: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub indeterminate: bool,
    pub delta_max: f64,
    pub type1: f64,
    pub rate_upper: Option<f64>,
    pub rate_lower: f64,
    /// Log-log slope of the radius against `d` (or against `nα²` when `d`
    /// is fixed) over the rows sharing everything else.
    pub slope: Option<f64>,
}

fn panel_for(cfg: &ExperimentConfig) -> Vec<PanelMember> {
    match &cfg.alternative {
        Some(a) if a.kind != AlternativeKind::RandomDirection => vec![PanelMember {
            kind: a.kind,
            b_size: a.b_size,
        }],
        _ => default_panel(cfg.family.d),
    }
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Run every grid point and fill in the slopes.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.grid.len());
    for point in &cfg.grid {
        let p0 = make_family(&point.family)?;
        let params = point.params()?;
        let res = empirical_separation(&SeparationSetup {
            p0: p0.clone(),
            params,
            norm: point.norm,
            mode: point.mode,
            panel: panel_for(point),
            m: point.replications,
            tol: cfg.tol,
            master_seed: point.master_seed,
            engine: cfg.engine,
        })?;
        let upper = match table1_rate(&point.family, point.n_block, point.alpha, point.norm, point.mode) {
            Ok(v) => Some(v),
            Err(Error::Unsupported(_)) => None,
            Err(e) => return Err(e),
        };
        let lower = lower_bound(&p0, point.n_block, point.alpha, point.norm, point.mode)?.value;
        rows.push(SweepRow {
            family: point.family.kind.name().to_string(),
            params: point.family.kind.params(),
            d: point.family.d,
            n_block: point.n_block,
            alpha: point.alpha,
            gamma: point.gamma,
            norm: point.norm,
            mode: point.mode,
            m: point.replications,
            master_seed: point.master_seed,
            radius: res.radius,
            bracket_lo: res.bracket.0,
            bracket_hi: res.bracket.1,
            ci_lo: res.ci.0,
            ci_hi: res.ci.1,
            indeterminate: res.indeterminate,
            delta_max: res.delta_max,
            type1: res.type1,
            rate_upper: upper,
            rate_lower: lower,
            slope: None,
        });
    }
    fill_slopes(&mut rows);
    Ok(rows)
}

fn fill_slopes(rows: &mut [SweepRow]) {
    let key = |r: &SweepRow| {
        format!(
            "{}|{}|{}|{}|{}|{}",
            r.family, r.params, r.alpha, r.gamma, r.norm, r.mode
        )
    };
    let keys: Vec<String> = rows.iter().map(key).collect();
    let mut seen: Vec<&String> = Vec::new();
    for k in &keys {
        if seen.contains(&k) {
            continue;
        }
        seen.push(k);
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| &keys[i] == k).collect();
        let same_n = idx.iter().all(|&i| rows[i].n_block == rows[idx[0]].n_block);
        let same_d = idx.iter().all(|&i| rows[i].d == rows[idx[0]].d);
        let xs: Vec<f64> = if same_n {
            idx.iter().map(|&i| rows[i].d as f64).collect()
        } else if same_d {
            idx.iter()
                .map(|&i| rows[i].n_block as f64 * rows[i].alpha * rows[i].alpha)
                .collect()
        } else {
            continue;
        };
        let ys: Vec<f64> = idx.iter().map(|&i| rows[i].radius).collect();
        let slope = loglog_slope(&xs, &ys);
        for &i in &idx {
            rows[i].slope = slope;
        }
    }
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance record written next to every generated table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub version: String,
    pub master_seeds: Vec<u64>,
    pub rows: usize,
    pub output: String,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, manifest)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<sweep table>", e))?;
    Ok(())
}

/// Run the sweep, write the CSV to `output_path` and the manifest next to
/// it.
pub fn scaling_sweep(cfg: &SweepConfig, output_path: &Path) -> Result<Vec<SweepRow>> {
    let rows = run_sweep(cfg)?;
    let f = std::fs::File::create(output_path).map_err(|e| Error::io(output_path, e))?;
    write_sweep_csv(&rows, f).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(output_path, source),
        other => other,
    })?;
    let manifest = Manifest {
        config_sha256: cfg.hash(),
        version: crate::VERSION.to_string(),
        master_seeds: cfg.grid.iter().map(|g| g.master_seed).collect(),
        rows: rows.len(),
        output: output_path.display().to_string(),
    };
    write_manifest(&manifest_path(output_path), &manifest)?;
    Ok(rows)
}

/// `c_α τ` for a block of `n` users; exposed for diagnostics.
pub fn stage2_magnitude(n: usize, alpha: f64) -> f64 {
    c_alpha(alpha) * tau_of(n, alpha)
}
