//! Distributional checks on the samplers and on the simulation engines.

use ldp_gof::alternatives::PanelMember;
use ldp_gof::distributions::{make_family, multinomial_counts, sample, FamilyKind, FamilySpec, ProbVector};
use ldp_gof::harness::{
    default_panel, run_sweep, stream, wilson_interval, write_sweep_csv, Engine, ExperimentConfig,
    SimulatedRun, SweepConfig, TestSetup,
};
use ldp_gof::privacy::{laplace_draw, PrivacyParams};
use ldp_gof::teststats::{Mode, Norm};
use rand_distr::{Binomial, Distribution};
use statrs::distribution::{ChiSquared, ContinuousCDF, Laplace};

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[test]
fn laplace_draws_pass_ks() {
    // 99.9% asymptotic KS critical value is 1.949 / sqrt(n)
    let n = 200_000;
    for (seed, scale) in [(1u64, 0.5), (2, 2.0), (3, 40.0)] {
        let mut rng = stream(seed, &[]);
        let xs: Vec<f64> = (0..n).map(|_| laplace_draw(&mut rng, scale).unwrap()).collect();
        let law = Laplace::new(0.0, scale).unwrap();
        let ks = ks_statistic(xs, |x| law.cdf(x));
        assert!(ks < 1.949 / (n as f64).sqrt(), "scale {scale}: KS {ks}");
    }
}

fn chi_square(counts: &[u64], p: &ProbVector, n: u64) -> f64 {
    counts
        .iter()
        .zip(p.as_slice())
        .map(|(&c, &q)| {
            let e = q * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

#[test]
fn category_sampling_matches_pmf() {
    let spec = FamilySpec::new(FamilyKind::Polynomial { beta: 1.0 }, 12).unwrap();
    let p = make_family(&spec).unwrap();
    let n = 200_000;
    let q999 = ChiSquared::new((p.d() - 1) as f64).unwrap().inverse_cdf(0.999);
    let mut below = 0;
    let mut below_multinomial = 0;
    for run in 0..100u64 {
        let mut rng = stream(77, &[run]);
        let x = sample(&p, n, &mut rng).unwrap();
        let mut counts = vec![0u64; p.d()];
        for j in x {
            counts[j - 1] += 1;
        }
        if chi_square(&counts, &p, n as u64) < q999 {
            below += 1;
        }
        let counts = multinomial_counts(&p, n as u64, &mut rng);
        if chi_square(&counts, &p, n as u64) < q999 {
            below_multinomial += 1;
        }
    }
    assert!(below >= 95, "{below}/100 below the 99.9% quantile");
    assert!(below_multinomial >= 95, "{below_multinomial}/100 below the 99.9% quantile");
}

#[test]
fn wilson_interval_covers() {
    let m = 200u64;
    for (k, p) in [0.02f64, 0.3, 0.5].into_iter().enumerate() {
        let mut rng = stream(5, &[k as u64]);
        let law = Binomial::new(m, p).unwrap();
        let covered = (0..1000)
            .filter(|_| {
                let hits = law.sample(&mut rng);
                let (lo, hi) = wilson_interval(hits, m);
                lo <= p && p <= hi
            })
            .count();
        assert!(covered >= 930, "p = {p}: coverage {covered}/1000");
    }
}

fn setup(d: usize, n: usize, alpha: f64, gamma: f64, norm: Norm, mode: Mode) -> TestSetup {
    let p0 = make_family(&FamilySpec::uniform(d).unwrap()).unwrap();
    TestSetup::new(p0, PrivacyParams::new(alpha, gamma, n).unwrap(), norm, mode).unwrap()
}

fn rate(setup: &TestSetup, p: &ProbVector, engine: Engine, seed: u64, m: u64) -> f64 {
    setup.count_rejections(p, engine, seed, &[], 0..m).unwrap() as f64 / m as f64
}

#[test]
fn risk_falls_with_distance() {
    let s = setup(10, 1000, 1.0, 0.5, Norm::L1, Mode::Noninteractive);
    let member = PanelMember::paired_signs(10);
    let reach = member.max_distance(&s.p0, Norm::L1).unwrap();
    let m = 2000;
    for (k, frac) in [0.1, 0.2, 0.3, 0.4, 0.5].into_iter().enumerate() {
        let delta = frac * reach;
        let mut rng = stream(9, &[k as u64]);
        let near = member.at_distance(&s.p0, delta, Norm::L1, &mut rng).unwrap();
        let far = member.at_distance(&s.p0, 2.0 * delta, Norm::L1, &mut rng).unwrap();
        let miss_near = 1.0 - rate(&s, &near, Engine::Aggregate, 11, m);
        let miss_far = 1.0 - rate(&s, &far, Engine::Aggregate, 12, m);
        let half = |q: f64| {
            let (lo, hi) = wilson_interval((q * m as f64).round() as u64, m);
            0.5 * (hi - lo)
        };
        assert!(
            miss_near >= miss_far - 2.0 * (half(miss_near) + half(miss_far)),
            "delta {delta}: {miss_near} < {miss_far}"
        );
    }
}

#[test]
fn sweep_output_ignores_thread_count() {
    let grid: Vec<ExperimentConfig> = [(8usize, Mode::Noninteractive), (8, Mode::Interactive)]
        .into_iter()
        .map(|(d, mode)| ExperimentConfig {
            family: FamilySpec::uniform(d).unwrap(),
            n_block: 500,
            alpha: 1.0,
            gamma: 0.5,
            norm: Norm::L1,
            mode,
            replications: 300,
            alternative: None,
            master_seed: 4242,
        })
        .collect();
    let cfg = SweepConfig {
        grid,
        tol: 0.01,
        engine: Engine::Aggregate,
    };
    let csv_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let rows = pool.install(|| run_sweep(&cfg)).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        buf
    };
    let one = csv_with(1);
    assert_eq!(one, csv_with(4));
    assert!(one.len() > 100);
}

struct Moments {
    mean: f64,
    var: f64,
    reject: f64,
}

fn moments(runs: &[SimulatedRun]) -> Moments {
    let m = runs.len() as f64;
    let mean = runs.iter().map(|r| r.main).sum::<f64>() / m;
    let var = runs.iter().map(|r| (r.main - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let reject = runs.iter().filter(|r| r.reject).count() as f64 / m;
    Moments { mean, var, reject }
}

/// Runs both engines on the same `p` and checks means, variances and
/// rejection rates agree within sampling error.
fn engines_agree(s: &TestSetup, p: &ProbVector, seed: u64, m: u64) {
    use ldp_gof::distributions::CategorySampler;
    let sampler = CategorySampler::new(p);
    let per_user: Vec<SimulatedRun> = (0..m)
        .map(|r| s.simulate_per_user(&sampler, &mut stream(seed, &[1, r])).unwrap())
        .collect();
    let aggregate: Vec<SimulatedRun> = (0..m)
        .map(|r| s.simulate_aggregate(p, &mut stream(seed, &[2, r])))
        .collect();
    let (a, b) = (moments(&per_user), moments(&aggregate));
    let mf = m as f64;
    let z_mean = (a.mean - b.mean) / ((a.var + b.var) / mf).sqrt();
    assert!(z_mean.abs() < 4.0, "{} {}: means {} vs {} (z {z_mean})", s.mode, s.norm, a.mean, b.mean);
    // log variance ratio has sd about sqrt(4/m) for near-normal statistics
    let z_var = (a.var / b.var).ln() / (4.0 / mf).sqrt();
    assert!(z_var.abs() < 4.0, "{} {}: variances {} vs {} (z {z_var})", s.mode, s.norm, a.var, b.var);
    let pooled = 0.5 * (a.reject + b.reject);
    let se = (2.0 * pooled * (1.0 - pooled) / mf).sqrt().max(1.0 / mf);
    let z_rej = (a.reject - b.reject) / se;
    assert!(z_rej.abs() < 4.0, "{} {}: rejection {} vs {} (z {z_rej})", s.mode, s.norm, a.reject, b.reject);
}

/// A paired-signs alternative whose aggregate rejection rate is moderate.
fn midpower_alternative(s: &TestSetup) -> ProbVector {
    let d = s.p0.d();
    let member = default_panel(d)[0];
    let reach = member.max_distance(&s.p0, s.norm).unwrap();
    let mut rng = stream(3, &[]);
    let (mut lo, mut hi) = (0.0, reach);
    for _ in 0..25 {
        let mid = 0.5 * (lo + hi);
        let p = member.at_distance(&s.p0, mid, s.norm, &mut rng).unwrap();
        let r = rate(s, &p, Engine::Aggregate, 17, 400);
        if (0.35..=0.65).contains(&r) {
            return p;
        }
        if r < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    panic!("no moderate-power alternative within reach {reach}");
}

#[test]
fn engines_agree_noninteractive() {
    let s = setup(10, 1000, 1.0, 0.5, Norm::L1, Mode::Noninteractive);
    let p0 = s.p0.clone();
    engines_agree(&s, &p0, 100, 2000);
    let alt = midpower_alternative(&s);
    engines_agree(&s, &alt, 101, 2000);
}

#[test]
fn engines_agree_interactive() {
    for norm in [Norm::L1, Norm::L2] {
        let s = setup(10, 1000, 1.0, 0.5, norm, Mode::Interactive);
        let p0 = s.p0.clone();
        engines_agree(&s, &p0, 200, 2000);
        let alt = midpower_alternative(&s);
        engines_agree(&s, &alt, 201, 2000);
    }
}
