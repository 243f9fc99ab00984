//! Latent codes conditioning the field: shape, appearance and expression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Length of the appearance code produced by the texture encoder.
pub const APPEARANCE_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeKind {
    Shape,
    Appearance,
    Expression,
}

impl std::str::FromStr for CodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shape" | "beta" => Ok(CodeKind::Shape),
            "appearance" | "alpha" => Ok(CodeKind::Appearance),
            "expression" | "eps" => Ok(CodeKind::Expression),
            other => Err(Error::InvalidInput(format!("unknown code component '{other}'"))),
        }
    }
}

/// The (shape, appearance, expression) triple for one rendered face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceCodes<T = f32> {
    pub beta: Vec<T>,
    pub alpha: Vec<T>,
    pub eps: Vec<T>,
}

impl<T: Real> FaceCodes<T> {
    pub fn zeros(shape_dim: usize, expr_dim: usize) -> Self {
        Self {
            beta: vec![T::zero(); shape_dim],
            alpha: vec![T::zero(); APPEARANCE_DIM],
            eps: vec![T::zero(); expr_dim],
        }
    }

    pub fn component(&self, kind: CodeKind) -> &[T] {
        match kind {
            CodeKind::Shape => &self.beta,
            CodeKind::Appearance => &self.alpha,
            CodeKind::Expression => &self.eps,
        }
    }

    pub fn component_mut(&mut self, kind: CodeKind) -> &mut Vec<T> {
        match kind {
            CodeKind::Shape => &mut self.beta,
            CodeKind::Appearance => &mut self.alpha,
            CodeKind::Expression => &mut self.eps,
        }
    }

    /// Checks lengths against the model dims and that every entry is finite.
    pub fn validate(&self, shape_dim: usize, expr_dim: usize) -> Result<()> {
        let check = |name: &str, v: &[T], want: usize| -> Result<()> {
            if v.len() != want {
                return Err(Error::Config(format!(
                    "{name} code has length {}, model expects {want}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} code has non-finite entries")));
            }
            Ok(())
        };
        check("shape", &self.beta, shape_dim)?;
        check("appearance", &self.alpha, APPEARANCE_DIM)?;
        check("expression", &self.eps, expr_dim)
    }

    pub fn cast<U: Real>(&self) -> FaceCodes<U> {
        let f = |v: &[T]| v.iter().map(|x| U::c(x.f64())).collect();
        FaceCodes {
            beta: f(&self.beta),
            alpha: f(&self.alpha),
            eps: f(&self.eps),
        }
    }
}
