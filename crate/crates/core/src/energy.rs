//! Free-energy functionals: the quadratic relaxation energy `∫ ½k u²` and the
//! Ginzburg–Landau energy `∫ f(u)/ε² + ½|∇u|²` with the double well
//! `f(u) = (u² − 1)²/4`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{dirichlet_energy, integrate, laplacian_neumann, Field};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnergySpec {
    Quadratic { k: f64 },
    GinzburgLandau { epsilon: f64 },
}

impl EnergySpec {
    pub fn quadratic(k: f64) -> Result<Self> {
        let s = EnergySpec::Quadratic { k };
        s.validate()?;
        Ok(s)
    }

    pub fn ginzburg_landau(epsilon: f64) -> Result<Self> {
        let s = EnergySpec::GinzburgLandau { epsilon };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            EnergySpec::Quadratic { k } => ("k", k),
            EnergySpec::GinzburgLandau { epsilon } => ("epsilon", epsilon),
        };
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{name} must be positive, got {v}"
            )));
        }
        Ok(())
    }

    /// Gradient-energy coefficient: the `½` in `½|∇u|²`, or 0 when absent.
    pub fn kappa(&self) -> f64 {
        match self {
            EnergySpec::Quadratic { .. } => 0.0,
            EnergySpec::GinzburgLandau { .. } => 0.5,
        }
    }

    /// Multiplier applied to the bulk density inside the integral.
    pub fn bulk_scale(&self) -> f64 {
        match *self {
            EnergySpec::Quadratic { .. } => 1.0,
            EnergySpec::GinzburgLandau { epsilon } => 1.0 / (epsilon * epsilon),
        }
    }

    pub fn bulk_density(&self, u: f64) -> f64 {
        match *self {
            EnergySpec::Quadratic { k } => 0.5 * k * u * u,
            EnergySpec::GinzburgLandau { .. } => {
                let s = u * u - 1.0;
                0.25 * s * s
            }
        }
    }

    pub fn bulk_density_deriv(&self, u: f64) -> f64 {
        match *self {
            EnergySpec::Quadratic { k } => k * u,
            EnergySpec::GinzburgLandau { .. } => u * u * u - u,
        }
    }

    pub fn bulk_density_second_deriv(&self, u: f64) -> f64 {
        match *self {
            EnergySpec::Quadratic { k } => k,
            EnergySpec::GinzburgLandau { .. } => 3.0 * u * u - 1.0,
        }
    }

    /// Discrete free energy. Bulk terms use trapezoid quadrature; the
    /// gradient term uses [`dirichlet_energy`], whose exact derivative is the
    /// reflected-ghost Laplacian used by [`EnergySpec::functional_derivative`].
    pub fn total_energy(&self, u: &Field) -> f64 {
        let scale = self.bulk_scale();
        let bulk = integrate(&u.map(|v| scale * self.bulk_density(v)));
        match self {
            EnergySpec::Quadratic { .. } => bulk,
            EnergySpec::GinzburgLandau { .. } => bulk + dirichlet_energy(u),
        }
    }

    /// `δF/δu = ∂F/∂u − ∇·(∂F/∂∇u)`.
    pub fn functional_derivative(&self, u: &Field) -> Field {
        let scale = self.bulk_scale();
        let bulk = u.map(|v| scale * self.bulk_density_deriv(v));
        match self {
            EnergySpec::Quadratic { .. } => bulk,
            EnergySpec::GinzburgLandau { .. } => {
                let lap = laplacian_neumann(u);
                bulk.zip_with(&lap, |a, b| a - b).expect("same grid")
            }
        }
    }
}
