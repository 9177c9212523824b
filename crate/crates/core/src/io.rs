//! Parsers for the text formats accepted from users.
//!
//! Every entry point takes the raw text and returns a validated value or an
//! [`Error::InvalidInput`] that names the offending line where there is one.

use std::path::Path;

use crate::distributions::{FamilyKind, FamilySpec, ProbVector};
use crate::error::{Error, Result};
use crate::harness::{ExperimentConfig, SweepConfig};
use crate::teststats::TestReport;

/// Probability files may deviate from total mass one by this much before
/// being renormalized.
pub const PROB_FILE_TOLERANCE: f64 = 1e-9;

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Newline-delimited category indices in `[1, d]`. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_categories(text: &str, d: usize) -> Result<Vec<usize>> {
    if d == 0 {
        return Err(Error::invalid("alphabet size d must be >= 1"));
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let x: usize = t
            .parse()
            .map_err(|_| Error::invalid(format!("line {}: not a category index: {t:?}", i + 1)))?;
        if x == 0 || x > d {
            return Err(Error::invalid(format!(
                "line {}: category {x} outside [1, {d}]",
                i + 1
            )));
        }
        out.push(x);
    }
    if out.is_empty() {
        return Err(Error::invalid("no categories in input"));
    }
    Ok(out)
}

/// Probabilities separated by whitespace, commas or newlines.
pub fn parse_prob_vector(text: &str) -> Result<ProbVector> {
    let mut mass = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        for tok in t.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()) {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::invalid(format!("line {}: not a number: {tok:?}", i + 1)))?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "line {}: probability {tok} must be finite and >= 0",
                    i + 1
                )));
            }
            mass.push(v);
        }
    }
    if mass.is_empty() {
        return Err(Error::invalid("no probabilities in input"));
    }
    ProbVector::from_approximate(mass, PROB_FILE_TOLERANCE)
}

/// A family either as a JSON object (`{"kind":"polynomial","d":7,"beta":1}`)
/// or as `kind[:k=v,...]` together with `d`.
pub fn parse_family_spec(text: &str, d: Option<usize>) -> Result<FamilySpec> {
    let t = text.trim();
    if t.starts_with('{') {
        let spec: FamilySpec = serde_json::from_str(t)?;
        if let Some(d) = d {
            if d != spec.d {
                return Err(Error::invalid(format!(
                    "family has d = {} but d = {d} was requested",
                    spec.d
                )));
            }
        }
        return Ok(spec);
    }
    let kind: FamilyKind = t.parse()?;
    let d = d.ok_or_else(|| Error::invalid("the alphabet size d is required"))?;
    FamilySpec::new(kind, d)
}

pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_sweep_config(text: &str) -> Result<SweepConfig> {
    let cfg: SweepConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_test_report(text: &str) -> Result<TestReport> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories() {
        assert_eq!(parse_categories("1\n2\n\n3\n# note\n", 3).unwrap(), vec![1, 2, 3]);
        let e = parse_categories("1\n4\n", 3).unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        let e = parse_categories("1\nx\n", 3).unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        assert!(parse_categories("", 3).is_err());
        assert!(parse_categories("0\n", 3).is_err());
    }

    #[test]
    fn probabilities() {
        let p = parse_prob_vector("0.5, 0.25\n0.25\n").unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.25, 0.25]);
        let p = parse_prob_vector("0.3333333333 0.3333333333 0.3333333334").unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(parse_prob_vector("0.5 0.4").is_err());
        assert!(parse_prob_vector("0.5 -0.1 0.6").is_err());
        assert!(parse_prob_vector("0.5 nan 0.5").is_err());
        assert!(parse_prob_vector("").is_err());
    }

    #[test]
    fn families() {
        let f = parse_family_spec("polynomial:beta=1", Some(7)).unwrap();
        assert_eq!(f.kind, FamilyKind::Polynomial { beta: 1.0 });
        let g = parse_family_spec(r#"{"kind":"polynomial","d":7,"beta":1.0}"#, None).unwrap();
        assert_eq!(f, g);
        assert!(parse_family_spec("uniform", None).is_err());
        assert!(parse_family_spec(r#"{"kind":"uniform","d":3}"#, Some(4)).is_err());
        assert!(parse_family_spec(r#"{"kind":"uniform","d":3,"beta":1}"#, None).is_err());
    }

    #[test]
    fn huge_support_index_is_rejected_cheaply() {
        let text = r#"{"s_b":0.0,"t_b":0.0,"d_n":null,"c1":1.0,"c2":1.0,"c3":null,"reject":false,
            "b_used":{"members":[1,1],"d":18446744073709551615},"mode":"noninteractive","norm":"L1"}"#;
        assert!(parse_test_report(text).is_err());
    }
}
