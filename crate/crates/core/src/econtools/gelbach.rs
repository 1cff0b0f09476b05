use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ols::{ols, CovarianceKind};
use super::Dataset;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GelbachResult {
    pub coef_base: f64,
    pub se_base: f64,
    pub coef_full: f64,
    pub se_full: f64,
    /// Part of `coef_base - coef_full` attributable to each covariate group.
    pub contributions: BTreeMap<String, f64>,
}

impl GelbachResult {
    pub fn total_change(&self) -> f64 {
        self.coef_base - self.coef_full
    }
}

/// Splits the change in the focal coefficient between the short regression
/// (intercept and focal) and the long regression (all groups added).
///
/// For each added column c, `gamma_c` is its slope on the focal variable in
/// an auxiliary regression with intercept, and the group contribution is
/// `sum_c gamma_c * beta_c` over the group's columns, with `beta_c` taken
/// from the long regression. The contributions add up to the total change.
pub fn gelbach_decompose(d: &Dataset, kind: CovarianceKind) -> Result<GelbachResult> {
    let n = d.len();
    let focal = d.focal();
    let base_x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { focal[i] });
    let base_names = vec!["(intercept)".to_string(), "focal".to_string()];
    let base = ols(d.outcome(), &base_x, &base_names, kind)?;

    let cols: Vec<(&str, &[f64])> = d.covariates().collect();
    let k = 2 + cols.len();
    let full_x = DMatrix::from_fn(n, k, |i, j| match j {
        0 => 1.0,
        1 => focal[i],
        _ => cols[j - 2].1[i],
    });
    let mut full_names = base_names.clone();
    full_names.extend(cols.iter().map(|(name, _)| name.to_string()));
    let full = ols(d.outcome(), &full_x, &full_names, kind)?;

    // Auxiliary slope of each column on the focal variable; with a single
    // regressor and intercept this is cov(c, focal) / var(focal).
    let mean_f = focal.iter().sum::<f64>() / n as f64;
    let sxx: f64 = focal.iter().map(|f| (f - mean_f).powi(2)).sum();
    let slope = |c: &[f64]| {
        let mean_c = c.iter().sum::<f64>() / n as f64;
        let sxy: f64 = focal.iter().zip(c).map(|(f, v)| (f - mean_f) * (v - mean_c)).sum();
        sxy / sxx
    };

    let mut contributions = BTreeMap::new();
    let mut j = 2;
    for g in d.groups() {
        let mut total = 0.0;
        for (_, values) in &g.columns {
            total += slope(values) * full.coefficients[j];
            j += 1;
        }
        contributions.insert(g.name.clone(), total);
    }
    Ok(GelbachResult {
        coef_base: base.coefficients[1],
        se_base: base.se(1),
        coef_full: full.coefficients[1],
        se_full: full.se(1),
        contributions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::econtools::CovariateGroup;
    use crate::error::Error;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn group(name: &str, cols: Vec<(&str, Vec<f64>)>) -> CovariateGroup {
        CovariateGroup {
            name: name.into(),
            columns: cols.into_iter().map(|(n, v)| (n.to_string(), v)).collect(),
        }
    }

    fn random_dataset(seed: u64) -> Dataset {
        let mut rng = seeded(seed);
        let n = rng.random_range(40..200);
        let focal: Vec<f64> = (0..n).map(|_| rng.random_bool(0.4) as u8 as f64).collect();
        let mut groups = Vec::new();
        let mut y: Vec<f64> = focal
            .iter()
            .map(|f| 0.5 * f + rng.sample::<f64, _>(StandardNormal))
            .collect();
        for g in 0..rng.random_range(1..4) {
            let mut cols = Vec::new();
            for c in 0..rng.random_range(1..3) {
                let load: f64 = rng.random_range(-2.0..2.0);
                let col: Vec<f64> = focal
                    .iter()
                    .map(|f| load * f + rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let effect: f64 = rng.random_range(-1.0..1.0);
                for (yi, ci) in y.iter_mut().zip(&col) {
                    *yi += effect * ci;
                }
                cols.push((format!("g{g}c{c}"), col));
            }
            groups.push(CovariateGroup {
                name: format!("group{g}"),
                columns: cols,
            });
        }
        Dataset::new(y, focal, groups).unwrap()
    }

    #[test]
    fn contributions_add_up_exactly() {
        for seed in 0..100 {
            let r = gelbach_decompose(&random_dataset(seed), CovarianceKind::Classical).unwrap();
            let sum: f64 = r.contributions.values().sum();
            assert!((r.total_change() - sum).abs() < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn group_order_does_not_matter() {
        for seed in 0..20 {
            let d = random_dataset(seed);
            let r = gelbach_decompose(&d, CovarianceKind::Classical).unwrap();
            let mut groups = d.groups().to_vec();
            groups.reverse();
            let d2 = Dataset::new(d.outcome().to_vec(), d.focal().to_vec(), groups).unwrap();
            let r2 = gelbach_decompose(&d2, CovarianceKind::Classical).unwrap();
            for (name, c) in &r.contributions {
                assert!((c - r2.contributions[name]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn orthogonal_covariate_contributes_nothing() {
        // z has identical means in both focal arms
        let focal = vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let z = vec![1.0, -1.0, 2.0, -2.0, 0.0, 0.0];
        let y = vec![0.3, 1.1, 2.0, 0.2, 0.9, 1.7];
        let d = Dataset::new(y, focal, vec![group("z", vec![("z", z)])]).unwrap();
        let r = gelbach_decompose(&d, CovarianceKind::Classical).unwrap();
        assert!(r.contributions["z"].abs() < 1e-12);
        assert!((r.coef_base - r.coef_full).abs() < 1e-12);
    }

    #[test]
    fn constructed_mediator_contributes_two() {
        let mut rng = seeded(5);
        let n = 20_000;
        let focal: Vec<f64> = (0..n).map(|_| rng.random_bool(0.5) as u8 as f64).collect();
        let z: Vec<f64> = focal
            .iter()
            .map(|f| 2.0 * f + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y: Vec<f64> = focal
            .iter()
            .zip(&z)
            .map(|(f, z)| f + z + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let d = Dataset::new(y, focal, vec![group("z", vec![("z", z)])]).unwrap();
        let r = gelbach_decompose(&d, CovarianceKind::Hc1).unwrap();
        assert!((r.contributions["z"] - 2.0).abs() < 0.05);
        assert!((r.contributions["z"] - r.total_change()).abs() < 1e-10);
        assert!((r.coef_full - 1.0).abs() < 0.05);
    }

    #[test]
    fn collinear_group_is_rejected() {
        let focal = vec![0.0, 1.0, 0.0, 1.0, 1.0];
        let d = Dataset::new(
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            focal.clone(),
            vec![group("copy", vec![("dup", focal)])],
        )
        .unwrap();
        assert_eq!(
            gelbach_decompose(&d, CovarianceKind::Classical).unwrap_err(),
            Error::RankDeficient(vec!["dup".into()])
        );
    }
}
