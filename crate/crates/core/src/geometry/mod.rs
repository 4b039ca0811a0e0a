//! Poincaré-ball geometry: exponential and logarithmic maps at the origin,
//! Möbius addition and scaling, and the L1 Möbius-difference distance used
//! for alignment.
//!
//! The typed API ([`BallPoint`], [`TangentVector`]) checks dimensions and
//! curvatures. The [`kernels`] module exposes the same maps on raw slices
//! together with their vector-Jacobian products; the model and training
//! code work on those directly.
//!
//! Numerical guards:
//! - every ball point is kept at norm `< (1 − 1e-5)/√c` by rescaling;
//! - artanh arguments are clamped to `[0, 1 − 1e-7]`;
//! - vectors with norm `< 1e-15` map to the origin / zero vector.

pub mod kernels;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Curvature parameter `c > 0` of the ball `P^(d,c)`, whose sectional
/// curvature is `−c` and whose radius is `1/√c`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub const ONE: Curvature = Curvature(1.0);

    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && c > 0.0 {
            Ok(Curvature(c))
        } else {
            Err(Error::InvalidInput(format!(
                "curvature must be finite and > 0, got {c}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Radius `1/√c` of the open ball.
    pub fn radius(self) -> f64 {
        1.0 / self.0.sqrt()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature::ONE
    }
}

impl TryFrom<f64> for Curvature {
    type Error = Error;
    fn try_from(c: f64) -> Result<Self> {
        Curvature::new(c)
    }
}

impl From<Curvature> for f64 {
    fn from(c: Curvature) -> f64 {
        c.0
    }
}

fn check_finite(coords: &[f64]) -> Result<()> {
    if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "coordinate {i} is not finite ({})",
            coords[i]
        )));
    }
    Ok(())
}

/// A point of the Poincaré ball, always within the ε-margin shell.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl BallPoint {
    /// Accepts finite coordinates strictly inside the open ball and applies
    /// the ε-margin projection.
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        check_finite(&coords)?;
        let sq: f64 = kernels::dot(&coords, &coords);
        if sq * curvature.value() >= 1.0 {
            return Err(Error::InvalidInput(format!(
                "point with squared norm {sq} is outside the ball of curvature {}",
                curvature.value()
            )));
        }
        Ok(Self::projected(coords, curvature))
    }

    /// Rescales arbitrary finite coordinates onto the ε-margin ball.
    pub fn projected(mut coords: Vec<f64>, curvature: Curvature) -> Self {
        kernels::project(&mut coords, curvature.value());
        BallPoint { coords, curvature }
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        BallPoint {
            coords: vec![0.0; dim],
            curvature,
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    /// Möbius inverse `−a` (coordinate negation).
    pub fn neg(&self) -> BallPoint {
        BallPoint {
            coords: self.coords.iter().map(|v| -v).collect(),
            curvature: self.curvature,
        }
    }

    fn check_same_ball(&self, other: &BallPoint) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
                context: "ball points",
            });
        }
        if self.curvature != other.curvature {
            return Err(Error::CurvatureMismatch {
                left: self.curvature.value(),
                right: other.curvature.value(),
            });
        }
        Ok(())
    }
}

/// A vector in the tangent space at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl TangentVector {
    /// Fails with [`Error::InvalidInput`] on non-finite entries.
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        check_finite(&coords)?;
        Ok(TangentVector { coords, curvature })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }
}

/// Exponential map at the origin.
pub fn exp_map(v: &TangentVector) -> BallPoint {
    let mut out = vec![0.0; v.dim()];
    kernels::exp0(&v.coords, v.curvature.value(), &mut out);
    BallPoint {
        coords: out,
        curvature: v.curvature,
    }
}

/// Logarithmic map at the origin.
pub fn log_map(y: &BallPoint) -> TangentVector {
    let mut out = vec![0.0; y.dim()];
    kernels::log0(&y.coords, y.curvature.value(), &mut out);
    TangentVector {
        coords: out,
        curvature: y.curvature,
    }
}

/// Möbius addition `a ⊕_c b`.
pub fn mobius_add(a: &BallPoint, b: &BallPoint) -> Result<BallPoint> {
    a.check_same_ball(b)?;
    let mut out = vec![0.0; a.dim()];
    kernels::mobius_add(&a.coords, &b.coords, a.curvature.value(), &mut out);
    Ok(BallPoint {
        coords: out,
        curvature: a.curvature,
    })
}

/// Möbius scalar multiplication `r ⊗_c a`.
pub fn mobius_scale(r: f64, a: &BallPoint) -> Result<BallPoint> {
    if !r.is_finite() {
        return Err(Error::InvalidInput(format!("scale factor {r} is not finite")));
    }
    let mut out = vec![0.0; a.dim()];
    kernels::mobius_scale(r, &a.coords, a.curvature.value(), &mut out);
    Ok(BallPoint {
        coords: out,
        curvature: a.curvature,
    })
}

/// Alignment distance `‖(−a) ⊕_c b‖₁`.
///
/// Not assumed symmetric; callers fix the direction (query first).
pub fn hyp_distance(a: &BallPoint, b: &BallPoint) -> Result<f64> {
    a.check_same_ball(b)?;
    Ok(kernels::distance(
        &a.coords,
        &b.coords,
        a.curvature.value(),
    ))
}
