//! Physical constants carried explicitly through every computation.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum UnitError {
    #[error("unit constant {0} must be strictly positive, got {1}")]
    NonPositiveConstant(&'static str, f64),
}

/// Gravitational constant, speed of light, and reduced Planck constant.
///
/// Scenarios may override the CODATA values, e.g. to run desk-scale test
/// problems where phases and potentials are resolvable in `f64`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct UnitSystem {
    /// m^3 kg^-1 s^-2
    pub g: f64,
    /// m/s
    pub c: f64,
    /// J s
    pub hbar: f64,
}

/// CODATA 2018 values.
pub const CODATA: UnitSystem = UnitSystem {
    g: 6.674_30e-11,
    c: 299_792_458.0,
    hbar: 1.054_571_817e-34,
};

impl UnitSystem {
    pub fn new(g: f64, c: f64, hbar: f64) -> Result<Self, UnitError> {
        if !(g > 0.0) {
            return Err(UnitError::NonPositiveConstant("G", g));
        }
        if !(c > 0.0) {
            return Err(UnitError::NonPositiveConstant("c", c));
        }
        if !(hbar > 0.0) {
            return Err(UnitError::NonPositiveConstant("hbar", hbar));
        }
        Ok(Self { g, c, hbar })
    }

    pub fn c_squared(&self) -> f64 {
        self.c * self.c
    }
}

impl Default for UnitSystem {
    fn default() -> Self {
        CODATA
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_constants() {
        assert!(UnitSystem::new(0.0, 1.0, 1.0).is_err());
        assert!(UnitSystem::new(1.0, -2.0, 1.0).is_err());
        assert!(UnitSystem::new(1.0, 1.0, f64::NAN).is_err());
        assert!(UnitSystem::new(1.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn codata_values() {
        let u = UnitSystem::default();
        assert_eq!(u.c, 299_792_458.0);
        assert!(u.g > 6.6e-11 && u.g < 6.7e-11);
    }
}
