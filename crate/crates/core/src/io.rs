//! JSON input schemas and loaders.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::constructor::{Lift, Monomial, OdProblem, Polynomial};
use crate::error::InputError;
use crate::expr::{Expr, Scope};
use crate::flatzoomer::{
    make_curvature_functional, make_leaf_functional, make_sff_functional, CertificateTerm,
    ExhaustionModel, FlatzoomerBound, Functional,
};
use crate::geometry::MetricField;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, InputError> {
    let text = std::fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| InputError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn parse_in(scope: &Scope, src: &str, context: &str) -> Result<Expr, InputError> {
    scope.parse(src).map_err(|source| InputError::Parse {
        context: context.to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoliationFile {
    pub leaf_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFile {
    pub dimension: usize,
    pub variables: Vec<String>,
    pub signature: Vec<i8>,
    pub components: Vec<Vec<String>>,
    pub domain: Vec<[f64; 2]>,
    #[serde(default)]
    pub periods: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub foliation: Option<FoliationFile>,
}

impl MetricFile {
    pub fn build(&self) -> Result<MetricField, InputError> {
        let n = self.dimension;
        if self.variables.len() != n || self.signature.len() != n || self.domain.len() != n {
            return Err(InputError::Invalid(format!(
                "metric of dimension {n} needs {n} variables, signs and domain intervals"
            )));
        }
        if self.components.len() != n || self.components.iter().any(|r| r.len() != n) {
            return Err(InputError::Invalid(format!(
                "components must be a {n}×{n} array"
            )));
        }
        let vars: Vec<&str> = self.variables.iter().map(String::as_str).collect();
        let rows: Vec<Vec<&str>> = self
            .components
            .iter()
            .map(|r| r.iter().map(String::as_str).collect())
            .collect();
        let rows: Vec<&[&str]> = rows.iter().map(|r| r.as_slice()).collect();
        let mut g = MetricField::parse(
            &vars,
            &rows,
            self.signature.clone(),
            self.domain.iter().map(|d| (d[0], d[1])).collect(),
        )?;
        if let Some(p) = &self.periods {
            if p.len() != n {
                return Err(InputError::Invalid(
                    "periods must have one entry per variable".into(),
                ));
            }
            g = g.with_periods(p.clone());
        }
        if let Some(f) = &self.foliation {
            g = g.with_leaf_dim(Some(f.leaf_dim));
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermFile {
    pub powers: Vec<u32>,
    pub coeff: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub k: usize,
    pub d: u32,
    pub alpha: f64,
    pub u0: String,
    #[serde(rename = "P")]
    pub p: Vec<TermFile>,
}

impl CertificateFile {
    pub fn build(&self, scope: &Scope) -> Result<FlatzoomerBound, InputError> {
        let floor = parse_in(scope, &self.u0, "certificate u0")?;
        let mut terms = Vec::with_capacity(self.p.len());
        for (i, t) in self.p.iter().enumerate() {
            terms.push(CertificateTerm {
                powers: t.powers.clone(),
                coeff: parse_in(scope, &t.coeff, &format!("certificate term {i}"))?,
            });
        }
        Ok(FlatzoomerBound::new(
            self.k, self.d, self.alpha, floor, terms,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FunctionalFile {
    Zero,
    Curvature { order: usize },
    LeafCurvature { order: usize, leaf_dim: usize },
    Sff { order: usize, leaf_dim: usize },
}

impl FunctionalFile {
    /// With `h₀ = g₀`.
    pub fn build(&self, g: &MetricField) -> Result<Functional, InputError> {
        Ok(match *self {
            FunctionalFile::Zero => Functional::Zero,
            FunctionalFile::Curvature { order } => {
                make_curvature_functional(g.clone(), g.clone(), order)?
            }
            FunctionalFile::LeafCurvature { order, leaf_dim } => {
                make_leaf_functional(g.clone(), g.clone(), leaf_dim, order)?
            }
            FunctionalFile::Sff { order, leaf_dim } => {
                make_sff_functional(g.clone(), g.clone(), leaf_dim, order)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsFile {
    Formula(String),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialFile {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdFile {
    /// A formula in `i` or one value per block (the last repeats).
    pub eps: EpsFile,
    pub alpha: Vec<f64>,
    /// One polynomial per block (the last repeats); variable `j` stands for `u^{(j)}`.
    #[serde(rename = "P")]
    pub p: Vec<Vec<MonomialFile>>,
    /// Floor `w(x)`; `None` means no floor.
    #[serde(default)]
    pub w: Option<String>,
    pub horizon: usize,
}

impl OdFile {
    pub fn build(&self) -> Result<OdProblem, InputError> {
        let blocks = self.horizon + 5;
        let eps = match &self.eps {
            EpsFile::Values(v) => v.clone(),
            EpsFile::Formula(src) => {
                let e = parse_in(&Scope::new(["i"]), src, "eps")?;
                (0..blocks)
                    .map(|i| e.eval(&[i as f64]))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| InputError::Invalid(format!("eps: {e}")))?
            }
        };
        let polys = self
            .p
            .iter()
            .map(|ms| Polynomial {
                terms: ms
                    .iter()
                    .map(|m| Monomial {
                        coeff: m.coeff,
                        powers: m.powers.clone(),
                    })
                    .collect(),
            })
            .collect();
        let w = match &self.w {
            Some(src) => Some(parse_in(&Scope::new(["x"]), src, "w")?),
            None => None,
        };
        OdProblem::new(eps, self.alpha.clone(), polys, w, self.horizon)
            .map_err(|e| InputError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LiftFile {
    Line,
    Radial { angles: usize },
}

fn default_fraction() -> f64 {
    0.5
}

/// End-to-end construction on a radial chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructFile {
    pub metric: MetricFile,
    pub targets: Vec<TargetFile>,
    /// Exhaustion radii; `None` means `r_i = i + 1`.
    #[serde(default)]
    pub radii: Option<Vec<f64>>,
    #[serde(default = "default_fraction")]
    pub collar_fraction: f64,
    pub horizon: usize,
    pub lift: LiftFile,
    /// Floor in `r`.
    #[serde(default)]
    pub w: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFile {
    pub functional: FunctionalFile,
    pub certificate: CertificateFile,
    /// Tolerance as a formula in `r`.
    pub eps: String,
}

impl ConstructFile {
    pub fn exhaustion(&self) -> Result<ExhaustionModel, InputError> {
        match &self.radii {
            Some(r) => Ok(ExhaustionModel::new(r.clone())?),
            None => Ok(ExhaustionModel::unit(self.horizon + 5)),
        }
    }

    pub fn lift(&self) -> Lift {
        match self.lift {
            LiftFile::Line => Lift::Line,
            LiftFile::Radial { angles } => Lift::Radial {
                dim: self.metric.dimension,
                angles,
            },
        }
    }
}

/// Certificate verification over a family of factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatzoomFile {
    pub metric: MetricFile,
    pub functional: FunctionalFile,
    pub certificate: CertificateFile,
    /// Factors `u` as formulas in the metric variables.
    pub family: Vec<String>,
    /// Sample points; random interior points when absent.
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
}

/// Radius estimate at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiiFile {
    pub metric: MetricFile,
    pub center: Vec<f64>,
    pub radius: f64,
    /// Known injectivity and convexity radii, checked as upper limits for the bounds.
    #[serde(default)]
    pub true_inj: Option<f64>,
    #[serde(default)]
    pub true_conv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzFile {
    /// 1-periodic `w(y)`.
    pub w: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn od_file_roundtrip() {
        let src = r#"{"eps": "exp(-i)", "alpha": [1], "P": [[{"coeff": 1, "powers": [0, 2]}]], "horizon": 12}"#;
        let f: OdFile = serde_json::from_str(src).unwrap();
        let p = f.build().unwrap();
        assert!((p.eps_at(3) - (-3f64).exp()).abs() < 1e-15);
        assert_eq!(p.poly_at(20).eval(&[5.0, 2.0]), 4.0);
    }

    #[test]
    fn metric_file_builds() {
        let src = r#"{"dimension": 2, "variables": ["x", "y"], "signature": [1, 1],
            "components": [["1/y^2", "0"], ["0", "1/y^2"]], "domain": [[-5, 5], [0.1, 10]]}"#;
        let f: MetricFile = serde_json::from_str(src).unwrap();
        let g = f.build().unwrap();
        assert_eq!(g.dim(), 2);
        let bad = r#"{"dimension": 2, "variables": ["x"], "signature": [1, 1], "components": [], "domain": []}"#;
        let f: MetricFile = serde_json::from_str(bad).unwrap();
        assert!(f.build().is_err());
    }
}
