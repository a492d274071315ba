//! Problem files.
//!
//! A small line-oriented format:
//!
//! ```text
//! # comment
//! name: motzkin_ball
//! vars: x1 x2 x3
//! min: x1^4*x2^2 + x1^2*x2^4 + x3^6 - 3*x1^2*x2^2*x3^2
//! ge: 1 - x1^2 - x2^2 - x3^2
//! eq: ...
//! optimum: 0
//! order: 4
//! minimizer: 0, 0, 0
//! ```
//!
//! `vars` must come before any expression and `min` must appear exactly
//! once. `eq:` and `ge:` lines may repeat and keep their order. `optimum`,
//! `order` and `minimizer` are optional metadata used by test harnesses.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::detvar::{DetvarError, OptProblem};
use crate::poly::{parse_poly, PolyError, Polynomial};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Expression { line: usize, source: PolyError },
    #[error("{0}")]
    Missing(&'static str),
    #[error(transparent)]
    Problem(#[from] DetvarError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFile {
    pub name: String,
    pub variables: Vec<String>,
    pub objective: Polynomial,
    pub equalities: Vec<Polynomial>,
    pub inequalities: Vec<Polynomial>,
    /// Known global minimum.
    pub optimum: Option<f64>,
    /// Relaxation order at which the problem is known to be solved exactly.
    pub order: Option<u32>,
    pub minimizers: Vec<Vec<f64>>,
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<ProblemFile, ProblemError> {
        let mut name = None;
        let mut variables: Option<Vec<String>> = None;
        let mut objective = None;
        let mut equalities = Vec::new();
        let mut inequalities = Vec::new();
        let mut optimum = None;
        let mut order = None;
        let mut minimizers = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let syntax = |message: String| ProblemError::Syntax { line, message };
            let (key, value) = body
                .split_once(':')
                .ok_or_else(|| syntax(format!("expected 'key: value', got '{body}'")))?;
            let value = value.trim();
            let expr = |vars: &Option<Vec<String>>| -> Result<Polynomial, ProblemError> {
                let vars = vars
                    .as_ref()
                    .ok_or_else(|| syntax("'vars' must come before expressions".into()))?;
                parse_poly(value, vars).map_err(|source| ProblemError::Expression { line, source })
            };
            match key.trim() {
                "name" => name = Some(value.to_string()),
                "vars" => {
                    if variables.is_some() {
                        return Err(syntax("duplicate 'vars'".into()));
                    }
                    let names: Vec<String> = value.split_whitespace().map(str::to_string).collect();
                    if names.is_empty() {
                        return Err(syntax("empty variable list".into()));
                    }
                    if let Some(bad) = names.iter().find(|v| !is_identifier(v)) {
                        return Err(syntax(format!("invalid variable name '{bad}'")));
                    }
                    if (1..names.len()).any(|i| names[..i].contains(&names[i])) {
                        return Err(syntax("repeated variable name".into()));
                    }
                    variables = Some(names);
                }
                "min" => {
                    if objective.is_some() {
                        return Err(syntax("duplicate 'min'".into()));
                    }
                    objective = Some(expr(&variables)?);
                }
                "eq" => equalities.push(expr(&variables)?),
                "ge" => inequalities.push(expr(&variables)?),
                "optimum" => {
                    optimum = Some(value.parse().map_err(|_| syntax(format!("bad number '{value}'")))?)
                }
                "order" => {
                    order = Some(value.parse().map_err(|_| syntax(format!("bad order '{value}'")))?)
                }
                "minimizer" => {
                    let point = value
                        .split(',')
                        .map(|t| t.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| syntax(format!("bad point '{value}'")))?;
                    minimizers.push(point);
                }
                other => return Err(syntax(format!("unknown key '{other}'"))),
            }
        }
        let variables = variables.ok_or(ProblemError::Missing("missing 'vars' line"))?;
        let objective = objective.ok_or(ProblemError::Missing("missing 'min' line"))?;
        if let Some(p) = minimizers.iter().find(|p| p.len() != variables.len()) {
            return Err(ProblemError::Syntax {
                line: 0,
                message: format!("minimizer {p:?} has the wrong dimension"),
            });
        }
        Ok(ProblemFile {
            name: name.unwrap_or_else(|| "unnamed".into()),
            variables,
            objective,
            equalities,
            inequalities,
            optimum,
            order,
            minimizers,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<ProblemFile, ProblemError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut file = ProblemFile::parse(&text)?;
        if file.name == "unnamed" {
            if let Some(stem) = path.file_stem() {
                file.name = stem.to_string_lossy().into_owned();
            }
        }
        Ok(file)
    }

    pub fn problem(&self) -> Result<OptProblem, ProblemError> {
        Ok(OptProblem::new(
            self.objective.clone(),
            self.equalities.clone(),
            self.inequalities.clone(),
        )?)
    }

    /// Canonical text; parsing it yields an equal `ProblemFile`.
    pub fn to_text(&self) -> String {
        let v = &self.variables;
        let mut out = String::new();
        let _ = writeln!(out, "name: {}", self.name);
        let _ = writeln!(out, "vars: {}", v.join(" "));
        let _ = writeln!(out, "min: {}", self.objective.to_text(v));
        for h in &self.equalities {
            let _ = writeln!(out, "eq: {}", h.to_text(v));
        }
        for g in &self.inequalities {
            let _ = writeln!(out, "ge: {}", g.to_text(v));
        }
        if let Some(f) = self.optimum {
            let _ = writeln!(out, "optimum: {f}");
        }
        if let Some(n) = self.order {
            let _ = writeln!(out, "order: {n}");
        }
        for p in &self.minimizers {
            let coords: Vec<String> = p.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "minimizer: {}", coords.join(", "));
        }
        out
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
