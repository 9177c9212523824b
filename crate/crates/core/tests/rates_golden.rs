//! Hand-checked cells of the golden rate table.
//!
//! Each expected string was worked out by hand:
//! - uniform, d=10, n=1000, α=0.5, NI L1 rate: 10^{3/4}/√250 = 5.6234133/15.8113883 = 0.35565588.
//! - same point, explicit NI L1 upper bound at γ=0.1, |B|=1 (tail 0.9 is below the main
//!   term): 8·12·(1/(1000·999·0.5⁴·0.1²))^{1/4} = 96/624.375^{1/4} = 96/4.998750 = 19.204803.
//! - polynomial β=1, d=100, n=1e5, α=1, interactive L1 rate:
//!   min{(nα²)^{-2β/(4β+2)}, √d/√(nα²)} = min{1e5^{-1/3}, 10/316.23} = 0.021544347.

use ldp_gof::rates::{rate_table, RateGrid};

const GOLDEN: &str = include_str!("golden/rates.csv");

fn cell(prefix: &str) -> (String, String) {
    let line = GOLDEN
        .lines()
        .find(|l| l.starts_with(prefix))
        .unwrap_or_else(|| panic!("no row {prefix}"));
    let f: Vec<&str> = line.split(',').collect();
    (f[7].to_string(), f[8].to_string())
}

#[test]
fn spot_cells() {
    let (v, j) = cell("uniform,d=10,1000,0.5,L1,noninteractive,rate,");
    assert_eq!((v.as_str(), j.as_str()), ("3.5565588201e-1", ""));
    assert!((v.parse::<f64>().unwrap() - 0.355_655_882).abs() < 1e-9);

    let (v, j) = cell("uniform,d=10,1000,0.5,L1,noninteractive,upper,");
    assert_eq!((v.as_str(), j.as_str()), ("1.9204803002e1", "1"));
    assert!((v.parse::<f64>().unwrap() - 19.204_803).abs() < 1e-6);

    let (v, _) = cell("polynomial,d=100;beta=1,100000,1.0,L1,interactive,rate,");
    assert_eq!(v, "2.1544346900e-2");
    assert!((v.parse::<f64>().unwrap() - 0.021_544_347).abs() < 1e-9);
}

#[test]
fn golden_shape() {
    let mut lines = GOLDEN.lines();
    assert_eq!(
        lines.next().unwrap(),
        "family,params,n,alpha,norm,mode,kind,value,j_achieving"
    );
    let rows: Vec<&str> = lines.collect();
    // 15 families × 2 n × 2 α × (4 rates + 4 lower + 2 upper)
    assert_eq!(rows.len(), 15 * 2 * 2 * 10);
    assert_eq!(rows.len(), rate_table(&RateGrid::standard(), 0.1).unwrap().len());
}
