use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use ldp_gof::distributions::{make_family, ProbVector};
use ldp_gof::harness::{
    calibrate_c_detailed, config_hash, derive_seed, manifest_path, scaling_sweep, stream,
    write_manifest, Manifest,
};
use ldp_gof::io::{parse_categories, parse_family_spec, parse_prob_vector, parse_sweep_config, read_text};
use ldp_gof::privacy::{
    privatize_indicator_vector, privatize_tail_indicator, PrivacyParams, Stage2Mechanism,
};
use ldp_gof::rates::{rate_table, write_rate_csv, RateGrid};
use ldp_gof::teststats::{run_test_interactive, run_test_noninteractive, select_b, Mode, Norm, SupportSet};

use crate::{CalibrateArgs, ModeArg, NormArg, NullArgs, PrivatizeArgs, RatesArgs, SweepArgs, TestArgs};

// stream tags, kept apart from the harness tags
const STREAM_PRIVATIZE: u64 = 101;
const STREAM_TEST: u64 = 102;

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ni => Mode::Noninteractive,
            ModeArg::Interactive => Mode::Interactive,
        }
    }
}

impl From<NormArg> for Norm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::L1 => Norm::L1,
            NormArg::L2 => Norm::L2,
        }
    }
}

fn load_null(null: &NullArgs, d: Option<usize>) -> Result<ProbVector> {
    let p0 = match (&null.family, &null.p0_file) {
        (Some(spec), None) => make_family(&parse_family_spec(spec, d)?)?,
        (None, Some(path)) => {
            parse_prob_vector(&read_text(path)?).with_context(|| format!("reading {}", path.display()))?
        }
        _ => bail!("the null needs exactly one of --family or --p0-file"),
    };
    if let Some(d) = d {
        if p0.d() != d {
            bail!("the null has {} categories but --d is {d}", p0.d());
        }
    }
    Ok(p0)
}

fn blocks(mode: Mode) -> usize {
    match mode {
        Mode::Noninteractive => 2,
        Mode::Interactive => 3,
    }
}

/// Drops trailing users so the sample splits into equal blocks.
fn truncate_to_blocks(x: &mut Vec<usize>, parts: usize) -> Result<usize> {
    let keep = x.len() - x.len() % parts;
    if keep != x.len() {
        eprintln!(
            "warning: {} users do not split into {parts} equal blocks; dropping the last {}",
            x.len(),
            x.len() - keep
        );
        x.truncate(keep);
    }
    let n = keep / parts;
    if n < 2 {
        bail!("need at least {} users for {parts} blocks of 2, got {}", 2 * parts, x.len());
    }
    Ok(n)
}

fn parse_b(text: &str, d: usize) -> Result<SupportSet> {
    let members = text
        .split(',')
        .map(|t| t.trim().parse::<usize>().with_context(|| format!("bad category {t:?} in --b")))
        .collect::<Result<Vec<_>>>()?;
    Ok(SupportSet::new(members, d)?)
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn privatize(a: PrivatizeArgs) -> Result<ExitCode> {
    let mode = Mode::from(a.mode);
    let norm = Norm::from(a.norm);
    let text = read_text(&a.input)?;
    let mut x = parse_categories(&text, a.d).with_context(|| format!("reading {}", a.input.display()))?;
    let n = truncate_to_blocks(&mut x, blocks(mode))?;
    let params = PrivacyParams::new(a.privacy.alpha, a.privacy.gamma, n)?;
    let have_null = a.null.family.is_some() || a.null.p0_file.is_some();
    let p0 = if have_null { Some(load_null(&a.null, Some(a.d))?) } else { None };
    let b = if a.b.trim() == "auto" {
        let Some(p0) = &p0 else {
            bail!("--b auto needs the null (--family or --p0-file)");
        };
        select_b(p0, n, params.alpha, norm, mode)?.1
    } else {
        parse_b(&a.b, a.d)?
    };
    let mut rng = stream(a.seed, &[STREAM_PRIVATIZE]);
    let mut w = csv::Writer::from_writer(open_out(a.out.as_deref())?);

    match mode {
        Mode::Noninteractive => {
            let mut header = vec!["user".to_string(), "block".to_string()];
            header.extend(b.members().iter().map(|j| format!("z{j}")));
            header.push("tail".to_string());
            w.write_record(&header)?;
            let k = b.len();
            for (i, &xi) in x.iter().enumerate() {
                let mut row = vec![(i + 1).to_string()];
                if i < n {
                    row.push("vector".into());
                    let z = privatize_indicator_vector(xi, &b, &params, &mut rng)?.z;
                    row.extend(z.into_iter().map(fmt));
                    row.push(String::new());
                } else {
                    row.push("tail".into());
                    row.extend(std::iter::repeat_n(String::new(), k));
                    row.push(fmt(privatize_tail_indicator(xi, &b, &params, &mut rng)?));
                }
                w.write_record(&row)?;
            }
        }
        Mode::Interactive => {
            let Some(p0) = &p0 else {
                bail!("interactive privatization needs the null (--family or --p0-file)");
            };
            let d = a.d;
            let full = SupportSet::full(d);
            let mut header = vec!["user".to_string(), "block".to_string()];
            header.extend((1..=d).map(|j| format!("z{j}")));
            header.push("stage2".to_string());
            header.push("tail".to_string());
            w.write_record(&header)?;
            let stage1 = x[..n]
                .iter()
                .map(|&xi| privatize_indicator_vector(xi, &full, &params, &mut rng).map(|r| r.z))
                .collect::<Result<Vec<_>, _>>()?;
            let p_hat: Vec<f64> = (0..d)
                .map(|c| stage1.iter().map(|z| z[c]).sum::<f64>() / n as f64)
                .collect();
            let mech = Stage2Mechanism::new(&p_hat, p0, &params)?;
            for (i, z) in stage1.into_iter().enumerate() {
                let mut row = vec![(i + 1).to_string(), "stage1".into()];
                row.extend(z.into_iter().map(fmt));
                row.extend([String::new(), String::new()]);
                w.write_record(&row)?;
            }
            for (i, &xi) in x.iter().enumerate().skip(n) {
                let mut row = vec![(i + 1).to_string()];
                let (label, s2, tail) = if i < 2 * n {
                    ("stage2", fmt(mech.privatize(xi, &mut rng)?.z), String::new())
                } else {
                    ("tail", String::new(), fmt(privatize_tail_indicator(xi, &b, &params, &mut rng)?))
                };
                row.push(label.into());
                row.extend(std::iter::repeat_n(String::new(), d));
                row.extend([s2, tail]);
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

pub fn test(a: TestArgs) -> Result<ExitCode> {
    let mode = Mode::from(a.mode);
    let norm = Norm::from(a.norm);
    let p0 = load_null(&a.null, a.d)?;
    let text = read_text(&a.data)?;
    let mut x = parse_categories(&text, p0.d()).with_context(|| format!("reading {}", a.data.display()))?;
    let n = truncate_to_blocks(&mut x, blocks(mode))?;
    let params = PrivacyParams::new(a.privacy.alpha, a.privacy.gamma, n)?;
    let mut rng = stream(a.seed, &[STREAM_TEST]);
    let report = match mode {
        Mode::Noninteractive => run_test_noninteractive(&x, &p0, &params, norm, &mut rng)?,
        Mode::Interactive => run_test_interactive(&x, &p0, &params, norm, &mut rng)?,
    };
    writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(if report.reject {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn finish_table(out: &Path, hash: String, seeds: Vec<u64>, rows: usize) -> Result<()> {
    let manifest = Manifest {
        config_sha256: hash,
        version: ldp_gof::VERSION.to_string(),
        master_seeds: seeds,
        rows,
        output: out.display().to_string(),
    };
    write_manifest(&manifest_path(out), &manifest)?;
    Ok(())
}

pub fn rates(a: RatesArgs) -> Result<ExitCode> {
    let grid: RateGrid = match &a.config {
        Some(path) => serde_json::from_str(&read_text(path)?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => RateGrid::standard(),
    };
    if !(a.gamma > 0.0 && a.gamma < 1.0) {
        bail!("gamma = {} must lie in (0, 1)", a.gamma);
    }
    let rows = rate_table(&grid, a.gamma)?;
    write_rate_csv(&rows, open_out(a.out.as_deref())?)?;
    if let Some(out) = &a.out {
        finish_table(out, config_hash(&(&grid, a.gamma)), Vec::new(), rows.len())?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn sweep(a: SweepArgs) -> Result<ExitCode> {
    let text = read_text(&a.config)?;
    let mut cfg = parse_sweep_config(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    for (i, point) in cfg.grid.iter_mut().enumerate() {
        point.master_seed = derive_seed(a.seed, &[i as u64]);
    }
    let rows = scaling_sweep(&cfg, &a.out)?;
    for r in &rows {
        eprintln!(
            "{} {} d={} n={} {} {}: radius {:.4} [{:.4}, {:.4}]{}",
            r.family,
            r.params,
            r.d,
            r.n_block,
            r.mode,
            r.norm,
            r.radius,
            r.ci_lo,
            r.ci_hi,
            if r.indeterminate { " (indeterminate)" } else { "" }
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn calibrate(a: CalibrateArgs) -> Result<ExitCode> {
    let mut rng = stream(a.seed, &[]);
    let cal = calibrate_c_detailed(a.m, a.cases, &mut rng)?;
    if let Some(out) = &a.out {
        let f = File::create(out).with_context(|| format!("creating {}", out.display()))?;
        let mut w = csv::Writer::from_writer(f);
        for c in &cal.cases {
            w.serialize(c)?;
        }
        w.flush()?;
        let key = serde_json::json!({ "m": a.m, "cases": a.cases, "seed": a.seed });
        finish_table(out, config_hash(&key), vec![a.seed], cal.cases.len())?;
    }
    writeln!(io::stdout().lock(), "{}", cal.c)?;
    Ok(ExitCode::SUCCESS)
}
