//! Views of a fitted model: tidy and glance projections, dataset
//! augmentation, and deterministic text rendering. All views are pure
//! projections of `IpdFit` — nothing is recomputed, so every number matches
//! the fit's fields exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, StackedDataset};
use crate::error::{IpdError, Result};
use crate::methods::{Estimand, IpdFit, Method};
use crate::stat_core::glm::expit;
use crate::stat_core::Real;

/// One coefficient of a fit, in output order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub conf_low: f64,
    pub conf_high: f64,
}

/// One-row summary of a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlanceRow {
    pub method: String,
    pub estimand: String,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub alpha: f64,
    pub n_terms: usize,
    /// False only for the classic benchmark, which ignores the unlabeled
    /// rows (their count is still reported as data context).
    pub uses_unlabeled: bool,
    /// Intermediates compressed to scalars: single values keep their key,
    /// vectors are averaged under "<key>_mean".
    pub intermediate_summary: BTreeMap<String, f64>,
}

/// One row per coefficient, order matching `fit.terms`.
pub fn tidy<F: Real>(fit: &IpdFit<F>) -> Vec<TidyRow> {
    (0..fit.terms.len())
        .map(|j| TidyRow {
            term: fit.terms[j].clone(),
            estimate: fit.estimates[j].as_f64(),
            std_error: fit.std_errors[j].as_f64(),
            conf_low: fit.ci_lower[j].as_f64(),
            conf_high: fit.ci_upper[j].as_f64(),
        })
        .collect()
}

/// Single-row summary of the fit.
pub fn glance<F: Real>(fit: &IpdFit<F>) -> GlanceRow {
    let mut intermediate_summary = BTreeMap::new();
    for (key, values) in &fit.intermediates {
        if values.len() == 1 {
            intermediate_summary.insert(key.clone(), values[0].as_f64());
        } else if !values.is_empty() {
            let sum: f64 = values.iter().map(|v| v.as_f64()).sum();
            intermediate_summary.insert(format!("{key}_mean"), sum / values.len() as f64);
        }
    }
    GlanceRow {
        method: fit.method.as_str().to_string(),
        estimand: fit.estimand.as_str().to_string(),
        n_labeled: fit.n_labeled,
        n_unlabeled: fit.n_unlabeled,
        alpha: fit.alpha,
        n_terms: fit.terms.len(),
        uses_unlabeled: fit.method != Method::Classic,
        intermediate_summary,
    }
}

/// Copy of the dataset with ".fitted" and ".resid" columns: xᵀθ̂ (ols) or
/// expit(xᵀθ̂) (logistic) on labeled and unlabeled rows, the response
/// residual where the outcome is observed. Training rows stay missing.
///
/// The fitted values use the covariates named by `covariates` (the formula's
/// right-hand side, matching the fit's non-intercept terms in order).
pub fn augment<F: Real>(
    fit: &IpdFit<F>,
    data: &StackedDataset,
    covariates: &[String],
    observed: &str,
) -> Result<StackedDataset> {
    if !fit.estimand.is_regression() {
        return Err(IpdError::Unsupported(format!(
            "augment needs fitted values, which only regression estimands have; got {:?}",
            fit.estimand.as_str()
        )));
    }
    assert_eq!(
        covariates.len() + 1,
        fit.estimates.len(),
        "covariate list does not match the fitted coefficients"
    );
    let y_col = data
        .column(observed)
        .ok_or_else(|| IpdError::Schema(format!("missing outcome column {observed:?}")))?
        .to_vec();
    let mut cov_cols = Vec::with_capacity(covariates.len());
    for name in covariates {
        let col = data
            .column(name)
            .ok_or_else(|| IpdError::Schema(format!("missing covariate column {name:?}")))?;
        cov_cols.push(col.to_vec());
    }
    let theta: Vec<f64> = fit.estimates.iter().map(|e| e.as_f64()).collect();
    let rows = data.labels().len();
    let mut fitted: Vec<Option<f64>> = Vec::with_capacity(rows);
    let mut resid: Vec<Option<f64>> = Vec::with_capacity(rows);
    for r in 0..rows {
        if data.labels()[r] == Label::Training {
            fitted.push(None);
            resid.push(None);
            continue;
        }
        let mut eta = theta[0];
        let mut complete = true;
        for (j, col) in cov_cols.iter().enumerate() {
            match col[r] {
                Some(v) if v.is_finite() => eta += theta[j + 1] * v,
                _ => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            fitted.push(None);
            resid.push(None);
            continue;
        }
        let value = if fit.estimand == Estimand::Logistic {
            expit(eta)
        } else {
            eta
        };
        fitted.push(Some(value));
        resid.push(y_col[r].map(|y| y - value));
    }
    let mut out = data.clone();
    out.add_column(".fitted", fitted)?;
    out.add_column(".resid", resid)?;
    Ok(out)
}

/// Render a value to 6 significant digits: fixed-point notation for
/// magnitudes between 1e-4 and 1e6, scientific otherwise.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 {
        return "0.00000".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..=5).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.5e}")
    }
}

/// Fixed-layout coefficient table: a header with the fit's metadata, then
/// one line per term with estimate, standard error, and confidence limits
/// at 6 significant digits. Byte-deterministic for a given fit.
pub fn render_summary<F: Real>(fit: &IpdFit<F>) -> String {
    let rows = tidy(fit);
    let mut out = String::new();
    out.push_str(&format!(
        "method: {}    estimand: {}\n",
        fit.method.as_str(),
        fit.estimand.as_str()
    ));
    out.push_str(&format!(
        "labeled n: {}    unlabeled N: {}    alpha: {}\n\n",
        fit.n_labeled, fit.n_unlabeled, fit.alpha
    ));
    let term_width = rows
        .iter()
        .map(|r| r.term.len())
        .chain(std::iter::once("term".len()))
        .max()
        .unwrap_or(4)
        + 2;
    out.push_str(&format!(
        "{:<term_width$}{:<14}{:<14}{:<14}{:<14}\n",
        "term", "estimate", "std_error", "conf_low", "conf_high"
    ));
    for r in &rows {
        out.push_str(&format!(
            "{:<term_width$}{:<14}{:<14}{:<14}{:<14}\n",
            r.term,
            format_sig(r.estimate),
            format_sig(r.std_error),
            format_sig(r.conf_low),
            format_sig(r.conf_high)
        ));
    }
    if !fit.intermediates.is_empty() {
        out.push('\n');
        for (key, values) in &fit.intermediates {
            let rendered: Vec<String> =
                values.iter().map(|v| format_sig(v.as_f64())).collect();
            out.push_str(&format!("{key}: {}\n", rendered.join(", ")));
        }
    }
    out
}

/// Abbreviated view: method, estimand, and point estimates only.
pub fn print_fit<F: Real>(fit: &IpdFit<F>) -> String {
    let mut out = format!(
        "ipd fit: method {}, estimand {}\n",
        fit.method.as_str(),
        fit.estimand.as_str()
    );
    for (term, est) in fit.terms.iter().zip(&fit.estimates) {
        out.push_str(&format!("  {term}: {}\n", format_sig(est.as_f64())));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::formula::parse_formula;
    use crate::dataset::load_stacked;
    use crate::methods::{fit_ipd, MethodConfig};

    fn regression_csv() -> &'static str {
        "set,Y,f,X1\n\
         training,0.5,NA,0.1\n\
         labeled,1.2,1.0,0.4\n\
         labeled,0.8,0.7,-0.3\n\
         labeled,2.1,1.9,1.1\n\
         labeled,-0.4,-0.2,-1.0\n\
         labeled,1.5,1.3,0.6\n\
         labeled,0.2,0.3,-0.6\n\
         labeled,1.9,1.8,0.9\n\
         labeled,0.6,0.4,-0.1\n\
         labeled,1.1,1.2,0.3\n\
         labeled,0.9,0.8,0.2\n\
         unlabeled,NA,1.4,0.7\n\
         unlabeled,NA,0.2,-0.8\n\
         unlabeled,NA,0.9,0.1\n\
         unlabeled,NA,1.7,1.0\n\
         unlabeled,NA,0.5,-0.4\n\
         unlabeled,NA,1.1,0.5\n\
         unlabeled,NA,0.0,-1.1\n\
         unlabeled,NA,1.3,0.8\n\
         unlabeled,NA,0.7,-0.2\n\
         unlabeled,NA,1.0,0.35\n\
         unlabeled,NA,1.6,0.95\n\
         unlabeled,NA,0.3,-0.55\n"
    }

    fn ols_fit() -> (IpdFit<f64>, StackedDataset) {
        let fml = parse_formula("Y - f ~ X1").unwrap();
        let data = load_stacked(regression_csv().as_bytes(), "set", &fml).unwrap();
        let config = MethodConfig::new(Method::PpiPlusplus, Estimand::Ols, 3);
        let fit = fit_ipd(&fml, &data, &config).unwrap();
        (fit, data)
    }

    #[test]
    fn tidy_is_a_bit_exact_projection() {
        let (fit, _) = ols_fit();
        let rows = tidy(&fit);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].term, "(Intercept)");
        assert_eq!(rows[1].term, "X1");
        for (j, r) in rows.iter().enumerate() {
            assert_eq!(r.estimate.to_bits(), fit.estimates[j].to_bits());
            assert_eq!(r.std_error.to_bits(), fit.std_errors[j].to_bits());
            assert_eq!(r.conf_low.to_bits(), fit.ci_lower[j].to_bits());
            assert_eq!(r.conf_high.to_bits(), fit.ci_upper[j].to_bits());
            assert!(r.conf_low < r.estimate && r.estimate < r.conf_high);
        }
    }

    #[test]
    fn glance_summarizes_the_fit() {
        let (fit, _) = ols_fit();
        let g = glance(&fit);
        assert_eq!(g.method, "ppi_plusplus");
        assert_eq!(g.estimand, "ols");
        assert_eq!((g.n_labeled, g.n_unlabeled), (10, 12));
        assert_eq!(g.n_terms, 2);
        assert!(g.uses_unlabeled);
        let lambda = g.intermediate_summary["lambda_hat"];
        assert!((0.0..=1.0).contains(&lambda), "lambda {lambda}");

        // the classic benchmark is flagged as ignoring the unlabeled rows
        let fml = parse_formula("Y - f ~ X1").unwrap();
        let data = load_stacked(regression_csv().as_bytes(), "set", &fml).unwrap();
        let config = MethodConfig::new(Method::Classic, Estimand::Ols, 3);
        let classic: IpdFit<f64> = fit_ipd(&fml, &data, &config).unwrap();
        let g = glance(&classic);
        assert!(!g.uses_unlabeled);
        assert_eq!(g.n_unlabeled, 12);

        // vector-valued intermediates collapse to a mean
        let config = MethodConfig::new(Method::Pspa, Estimand::Ols, 3);
        let pspa: IpdFit<f64> = fit_ipd(&fml, &data, &config).unwrap();
        let g = glance(&pspa);
        let mean = g.intermediate_summary["omega_hat_mean"];
        let omega = &pspa.intermediates["omega_hat"];
        assert_eq!(mean, (omega[0] + omega[1]) / 2.0);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let row = TidyRow {
            term: "X1".into(),
            estimate: std::f64::consts::PI,
            std_error: 1.0 / 3.0,
            conf_low: -2.5e17,
            conf_high: 5e-324,
        };
        let text = serde_json::to_string(&row).unwrap();
        assert!(text.contains("\"conf_low\""), "{text}");
        let back: TidyRow = serde_json::from_str(&text).unwrap();
        assert_eq!(back.estimate.to_bits(), row.estimate.to_bits());
        assert_eq!(back.std_error.to_bits(), row.std_error.to_bits());
        assert_eq!(back.conf_low.to_bits(), row.conf_low.to_bits());
        assert_eq!(back.conf_high.to_bits(), row.conf_high.to_bits());

        let (fit, _) = ols_fit();
        let g = glance(&fit);
        let text = serde_json::to_string(&g).unwrap();
        let back: GlanceRow = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn augment_adds_fitted_and_residual_columns() {
        let (fit, data) = ols_fit();
        let out = augment(&fit, &data, &["X1".to_string()], "Y").unwrap();
        let fitted = out.column(".fitted").unwrap();
        let resid = out.column(".resid").unwrap();
        // training row: both missing
        assert!(fitted[0].is_none() && resid[0].is_none());
        // labeled rows: both present, residual = Y − fitted
        let y = out.column("Y").unwrap();
        let x1 = out.column("X1").unwrap();
        for r in 1..11 {
            let want = fit.estimates[0] + fit.estimates[1] * x1[r].unwrap();
            assert_eq!(fitted[r], Some(want));
            assert_eq!(resid[r], Some(y[r].unwrap() - want));
        }
        // unlabeled rows: fitted present, residual missing (no outcome)
        for r in 11..23 {
            assert!(fitted[r].is_some());
            assert!(resid[r].is_none());
        }
        // source dataset untouched
        assert!(data.column(".fitted").is_none());

        let fml = parse_formula("Y - f ~ 1").unwrap();
        let csv = "set,Y,f\nlabeled,1,2\nlabeled,2,1\nunlabeled,NA,2\nunlabeled,NA,3\n";
        let scalar_data = load_stacked(csv.as_bytes(), "set", &fml).unwrap();
        let config = MethodConfig::new(Method::Ppi, Estimand::Mean, 1);
        let mean_fit: IpdFit<f64> = fit_ipd(&fml, &scalar_data, &config).unwrap();
        assert!(matches!(
            augment(&mean_fit, &scalar_data, &[], "Y"),
            Err(IpdError::Unsupported(_))
        ));
    }

    #[test]
    fn six_significant_digit_rendering() {
        assert_eq!(format_sig(1.2345678), "1.23457");
        assert_eq!(format_sig(0.000123456789), "0.000123457");
        assert_eq!(format_sig(123456.7), "123457");
        assert_eq!(format_sig(1234567.0), "1.23457e6");
        assert_eq!(format_sig(0.00001234567), "1.23457e-5");
        assert_eq!(format_sig(0.0), "0.00000");
        assert_eq!(format_sig(-9.87654321), "-9.87654");
        assert_eq!(format_sig(1.0), "1.00000");
    }

    #[test]
    fn summary_layout_and_abbreviated_print() {
        let (fit, _) = ols_fit();
        let text = render_summary(&fit);
        assert_eq!(text, render_summary(&fit), "rendering must be deterministic");
        let coefficient_lines: Vec<&str> = text
            .lines()
            .filter(|l| l.starts_with("(Intercept)") || l.starts_with("X1"))
            .collect();
        assert_eq!(coefficient_lines.len(), 2, "{text}");
        assert!(text.contains("method: ppi_plusplus"));
        assert!(text.contains("std_error"));
        assert!(text.contains("lambda_hat:"), "{text}");

        let brief = print_fit(&fit);
        assert!(brief.contains("method ppi_plusplus"));
        assert!(brief.contains("(Intercept):"));
        // abbreviated output carries point estimates only
        assert!(!brief.contains("std_error"));
        assert!(!brief.contains(&format_sig(tidy(&fit)[0].std_error)));
    }
}
