use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::fit_logistic_from;
use super::{fit_logistic, FitOptions};
use crate::error::{Error, Result};
use crate::panel::{expand_features, FeatureSpec, PanelDataset, MAX_POWER_ORDER};

/// Cross-validation scheme for order selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvScheme {
    Loocv,
    /// Unit i is held out in fold i mod k.
    KFold(usize),
}

impl CvScheme {
    /// Leave-one-out up to 5000 units, 10-fold beyond.
    pub fn default_for(n: usize) -> Self {
        if n <= 5000 {
            CvScheme::Loocv
        } else {
            CvScheme::KFold(10)
        }
    }

    fn folds(self, n: usize) -> Result<usize> {
        match self {
            CvScheme::Loocv => Ok(n),
            CvScheme::KFold(k) if k >= 2 && k <= n => Ok(k),
            CvScheme::KFold(k) => Err(Error::InvalidArgument(format!(
                "{k}-fold cross-validation needs 2 <= k <= {n}"
            ))),
        }
    }
}

/// CV score of one candidate order; `cv_mse` is `None` when a fit separated
/// or had singular information and the order was ruled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderScore {
    pub order: u32,
    pub cv_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerOrderSelection {
    pub order: u32,
    pub spec: FeatureSpec,
    pub scores: Vec<OrderScore>,
}

/// Chooses one shared power-series order for the propensity model by
/// cross-validated squared error of the predicted probability against the
/// treatment label. Ties go to the smaller order.
pub fn select_power_order(
    data: &PanelDataset,
    base_spec: &FeatureSpec,
    orders: &[u32],
    cv: CvScheme,
    options: &FitOptions,
) -> Result<PowerOrderSelection> {
    if orders.is_empty() {
        return Err(Error::InvalidArgument("no candidate orders".into()));
    }
    if let Some(bad) = orders.iter().find(|o| !(1..=MAX_POWER_ORDER).contains(*o)) {
        return Err(Error::InvalidSpec(format!(
            "candidate order {bad} outside 1..=5"
        )));
    }
    let mut orders = orders.to_vec();
    orders.sort_unstable();
    orders.dedup();
    if orders.len() == 1 {
        let order = orders[0];
        return Ok(PowerOrderSelection {
            order,
            spec: base_spec.with_shared_order(order),
            scores: vec![OrderScore {
                order,
                cv_mse: None,
            }],
        });
    }

    let n = data.len();
    let k = cv.folds(n)?;
    let labels = data.treatment_labels();
    let mut scores = Vec::with_capacity(orders.len());
    for &order in &orders {
        let spec = base_spec.with_shared_order(order);
        let design = expand_features(data, &spec)?;
        let full = match fit_logistic(&design, &labels, options) {
            Ok(fit) => fit,
            Err(Error::SingularInformation(_)) => {
                scores.push(OrderScore {
                    order,
                    cv_mse: None,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let start = full.coefficients.clone();

        let fold_results: Vec<Result<Option<f64>>> = (0..k)
            .into_par_iter()
            .map(|fold| {
                let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| i % k != fold);
                let train_design = design.select_rows(&train);
                let train_labels: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
                let fit =
                    match fit_logistic_from(&train_design, &train_labels, options, Some(&start)) {
                        Ok(fit) => fit,
                        Err(Error::SingularInformation(_)) => return Ok(None),
                        Err(e) => return Err(e),
                    };
                if fit.separation_detected {
                    return Ok(None);
                }
                let probs = fit.predict(&design.select_rows(&test))?;
                Ok(Some(
                    test.iter()
                        .zip(&probs)
                        .map(|(&i, p)| (labels[i] - p).powi(2))
                        .sum::<f64>(),
                ))
            })
            .collect();
        let mut sse = 0.0;
        let mut eligible = true;
        for r in fold_results {
            match r? {
                Some(v) => sse += v,
                None => eligible = false,
            }
        }
        scores.push(OrderScore {
            order,
            cv_mse: eligible.then(|| sse / n as f64),
        });
    }

    let best = scores
        .iter()
        .filter_map(|s| s.cv_mse.map(|m| (s.order, m)))
        .fold(None::<(u32, f64)>, |acc, (o, m)| match acc {
            Some((_, bm)) if bm <= m => acc,
            _ => Some((o, m)),
        })
        .ok_or(Error::SeparationDetected)?;
    Ok(PowerOrderSelection {
        order: best.0,
        spec: base_spec.with_shared_order(best.0),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::OutcomeFamily;

    #[test]
    fn singleton_order_returned_unconditionally() {
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let g: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let data = PanelDataset::from_columns(
            &[0.0; 10],
            &[0.0; 10],
            &g,
            &[("v", &v)],
            OutcomeFamily::Count,
        )
        .unwrap();
        let spec = FeatureSpec::intercept_only().with_power("v", 1);
        let sel = select_power_order(&data, &spec, &[3], CvScheme::Loocv, &FitOptions::default())
            .unwrap();
        assert_eq!(sel.order, 3);
        assert_eq!(sel.spec.power_orders[0].order, 3);
    }

    #[test]
    fn rejects_out_of_range_orders() {
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let g: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let data = PanelDataset::from_columns(
            &[0.0; 10],
            &[0.0; 10],
            &g,
            &[("v", &v)],
            OutcomeFamily::Count,
        )
        .unwrap();
        let spec = FeatureSpec::intercept_only().with_power("v", 1);
        assert!(select_power_order(
            &data,
            &spec,
            &[1, 6],
            CvScheme::Loocv,
            &FitOptions::default()
        )
        .is_err());
        assert!(select_power_order(
            &data,
            &spec,
            &[1, 2],
            CvScheme::KFold(1),
            &FitOptions::default()
        )
        .is_err());
    }
}
