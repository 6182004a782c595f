//! K-fold cross-validation: fold k tests, fold k+1 validates, the rest train.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::gbdt::{train_gbdt, GbdtConfig, GbdtModel};
use super::table::FeatureTable;
use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 10;

/// Row indices of each fold after a seeded shuffle. Folds partition the rows
/// and differ in size by at most one.
pub fn fold_plan(rows: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x666f_6c64));
    let mut out = vec![Vec::new(); folds];
    for (i, r) in order.into_iter().enumerate() {
        out[i % folds].push(r);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldModel {
    pub fold: usize,
    pub test_rows: Vec<usize>,
    pub accuracy: f64,
    pub model: GbdtModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldModel>,
    /// Folds whose training or validation split lacked a class.
    pub skipped: Vec<usize>,
    pub mean: f64,
    /// Half-width of the 95% Student-t interval; `None` with fewer than two folds.
    pub ci95: Option<f64>,
}

impl CvReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.accuracy).collect()
    }

    pub fn render(&self) -> String {
        match self.ci95 {
            Some(h) => format!("{:.1}% ± {:.1}% over {} folds", 100.0 * self.mean, 100.0 * h, self.folds.len()),
            None => format!("{:.1}% over {} folds", 100.0 * self.mean, self.folds.len()),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,accuracy,trees\n");
        for f in &self.folds {
            out.push_str(&format!("{},{:.6},{}\n", f.fold, f.accuracy, f.model.trees.len()));
        }
        out
    }
}

/// Mean and 95% confidence half-width of fold accuracies.
pub fn mean_ci(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive dof").inverse_cdf(0.975);
    (mean, Some(t * (var / n as f64).sqrt()))
}

fn single_label(t: &FeatureTable) -> bool {
    let p = t.positives();
    p == 0 || p == t.rows()
}

pub fn cross_validate(table: &FeatureTable, config: &GbdtConfig, folds: usize) -> Result<CvReport> {
    config.validate()?;
    if folds < 3 {
        return Err(Error::Config(format!("need at least 3 folds, got {folds}")));
    }
    if table.rows() < folds {
        return Err(Error::Data(format!("{} rows for {folds} folds", table.rows())));
    }
    if single_label(table) {
        return Err(Error::Data("table carries a single label".into()));
    }
    let plan = fold_plan(table.rows(), folds, config.seed);
    let results: Vec<(usize, Option<FoldModel>)> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let test = table.subset(&plan[k]);
            let valid = table.subset(&plan[(k + 1) % folds]);
            let mut train_rows: Vec<usize> = (0..folds)
                .filter(|&j| j != k && j != (k + 1) % folds)
                .flat_map(|j| plan[j].iter().copied())
                .collect();
            train_rows.sort_unstable();
            let train = table.subset(&train_rows);
            if single_label(&train) || single_label(&valid) {
                return Ok((k, None));
            }
            let cfg = GbdtConfig {
                seed: config.seed.wrapping_add(k as u64),
                ..config.clone()
            };
            let model = train_gbdt(&train, &valid, &cfg)?;
            let accuracy = model.accuracy(&test)?;
            Ok((
                k,
                Some(FoldModel {
                    fold: k,
                    test_rows: plan[k].clone(),
                    accuracy,
                    model,
                }),
            ))
        })
        .collect::<Result<_>>()?;
    let mut done = Vec::new();
    let mut skipped = Vec::new();
    for (k, r) in results {
        match r {
            Some(f) => done.push(f),
            None => skipped.push(k),
        }
    }
    let (mean, ci95) = mean_ci(&done.iter().map(|f| f.accuracy).collect::<Vec<_>>());
    Ok(CvReport {
        folds: done,
        skipped,
        mean,
        ci95,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::HeadKey;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn folds_partition_rows(rows in 3usize..400, folds in 3usize..12, seed in any::<u64>()) {
            prop_assume!(rows >= folds);
            let plan = fold_plan(rows, folds, seed);
            let mut all: Vec<usize> = plan.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..rows).collect::<Vec<_>>());
            let sizes: Vec<usize> = plan.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn interval_matches_reference_quantile() {
        // t(0.975, 9) = 2.262157 from standard tables.
        let v = [0.7, 0.72, 0.74, 0.76, 0.78, 0.7, 0.72, 0.74, 0.76, 0.78];
        let (m, h) = mean_ci(&v);
        assert!((m - 0.74).abs() < 1e-12);
        let sd = (0.008 / 9.0f64 / 10.0).sqrt();
        assert!((h.unwrap() - 2.262157 * sd).abs() < 1e-6);
        assert_eq!(mean_ci(&[0.5]).1, None);
    }

    #[test]
    fn skips_folds_without_both_classes() {
        // Positives are rare enough that some validation folds see none.
        let labels: Vec<bool> = (0..40).map(|i| i < 3).collect();
        let column: Vec<i32> = (0..40).map(|i| (i < 3) as i32).collect();
        let t = FeatureTable::new(vec![HeadKey::new(0, 0)], (0..40).collect(), vec![column], labels).unwrap();
        let r = cross_validate(&t, &GbdtConfig::default(), 10).unwrap();
        assert!(!r.skipped.is_empty());
        assert_eq!(r.folds.len() + r.skipped.len(), 10);
        let mut tested: Vec<usize> = r.folds.iter().flat_map(|f| f.test_rows.clone()).collect();
        let before = tested.len();
        tested.sort_unstable();
        tested.dedup();
        assert_eq!(before, tested.len());
    }

    #[test]
    fn rejects_degenerate_tables() {
        let t = FeatureTable::new(vec![HeadKey::new(0, 0)], (0..20).collect(), vec![vec![0; 20]], vec![true; 20]).unwrap();
        assert!(matches!(cross_validate(&t, &GbdtConfig::default(), 10), Err(Error::Data(_))));
        assert!(matches!(cross_validate(&t, &GbdtConfig::default(), 2), Err(Error::Config(_))));
    }
}
