//! The `Y - f ~ X1 + X2` formula mini-grammar.
//!
//! Left of the separator: observed outcome minus predicted outcome. Right:
//! covariate names joined by `+`, or `1` (or nothing) for an
//! intercept-only model. `~` and `=` both work as the separator; `~` is the
//! canonical form on output.

use crate::error::{IpdError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Formula {
    /// Column holding the observed outcome (the Y symbol).
    pub observed: String,
    /// Column holding the model predictions (the f symbol).
    pub predicted: String,
    /// Covariate columns, in the order written.
    pub covariates: Vec<String>,
    /// Always true in this version; kept explicit so downstream code does
    /// not bake the assumption in silently.
    pub intercept: bool,
}

const SHAPE_HINT: &str = "expected a formula shaped like \"Y - f ~ X1 + X2\"";

fn check_name(tok: &str) -> Result<&str> {
    if tok.is_empty() {
        return Err(IpdError::Parse(format!("empty name in formula; {SHAPE_HINT}")));
    }
    if tok
        .chars()
        .any(|c| c.is_whitespace() || matches!(c, '+' | '-' | '~' | '='))
    {
        return Err(IpdError::Parse(format!(
            "invalid name {tok:?} in formula; {SHAPE_HINT}"
        )));
    }
    Ok(tok)
}

pub fn parse_formula(text: &str) -> Result<Formula> {
    let text = text.trim();
    if text.is_empty() {
        return Err(IpdError::Parse(format!("empty formula; {SHAPE_HINT}")));
    }
    let (lhs, rhs) = match text.find(['~', '=']) {
        Some(pos) => (&text[..pos], &text[pos + 1..]),
        // no separator: intercept-only right-hand side
        None => (text, ""),
    };
    if rhs.contains(['~', '=']) {
        return Err(IpdError::Parse(format!(
            "more than one `~`/`=` separator; {SHAPE_HINT}"
        )));
    }
    let mut sides = lhs.split('-');
    let observed = check_name(sides.next().unwrap_or("").trim())?.to_string();
    let predicted = match sides.next() {
        Some(tok) => check_name(tok.trim())?.to_string(),
        None => {
            return Err(IpdError::Parse(format!(
                "left-hand side {lhs:?} names no predicted outcome; {SHAPE_HINT}"
            )))
        }
    };
    if sides.next().is_some() {
        return Err(IpdError::Parse(format!(
            "left-hand side {lhs:?} has more than one `-`; {SHAPE_HINT}"
        )));
    }
    if observed == predicted {
        return Err(IpdError::Validation(format!(
            "observed and predicted outcomes are both named {observed:?}"
        )));
    }
    let mut covariates = Vec::new();
    let rhs = rhs.trim();
    if !rhs.is_empty() {
        for tok in rhs.split('+') {
            let tok = tok.trim();
            if tok == "1" {
                // explicit intercept marker; the intercept is always present
                continue;
            }
            if tok == "0" {
                return Err(IpdError::Unsupported(
                    "intercept removal (`0` in a formula) is not supported".into(),
                ));
            }
            let name = check_name(tok)?.to_string();
            if name == observed || name == predicted {
                return Err(IpdError::Validation(format!(
                    "covariate {name:?} collides with an outcome column"
                )));
            }
            if covariates.contains(&name) {
                return Err(IpdError::Validation(format!(
                    "duplicate covariate {name:?} in formula"
                )));
            }
            covariates.push(name);
        }
    }
    Ok(Formula {
        observed,
        predicted,
        covariates,
        intercept: true,
    })
}

impl Formula {
    /// Canonical text form; `parse_formula(render(f)) == f`.
    pub fn render(&self) -> String {
        let rhs = if self.covariates.is_empty() {
            "1".to_string()
        } else {
            self.covariates.join(" + ")
        };
        format!("{} - {} ~ {}", self.observed, self.predicted, rhs)
    }

    /// Every column name the formula mentions, outcomes first.
    pub fn column_names(&self) -> Vec<&str> {
        let mut names = vec![self.observed.as_str(), self.predicted.as_str()];
        names.extend(self.covariates.iter().map(|s| s.as_str()));
        names
    }
}
