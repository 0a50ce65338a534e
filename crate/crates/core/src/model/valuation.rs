use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A strictly concave, twice differentiable valuation on the nonnegative
/// reals. Parameters are positive reals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Valuation {
    /// `a * ln(1 + b x)`
    LogShift { a: f64, b: f64 },
    /// `a * x^b` with `0 < b < 1`
    Power { a: f64, b: f64 },
    /// `a * (m x - x^2 / 2)`; increasing below `m`, decreasing above.
    QuadCap { a: f64, m: f64 },
}

impl Valuation {
    /// Parameter check for strict concavity. Returns the reason on failure.
    pub fn admissible(&self) -> std::result::Result<(), String> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} = {v} must be a positive finite real"))
            }
        };
        match *self {
            Valuation::LogShift { a, b } => positive("a", a).and(positive("b", b)),
            Valuation::Power { a, b } => {
                positive("a", a)?;
                if b > 0.0 && b < 1.0 {
                    Ok(())
                } else {
                    Err(format!("power exponent b = {b} must lie in (0, 1)"))
                }
            }
            Valuation::QuadCap { a, m } => positive("a", a).and(positive("m", m)),
        }
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        check_domain(x)?;
        Ok(self.value_unchecked(x))
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        check_domain(x)?;
        Ok(self.derivative_unchecked(x))
    }

    pub fn second_derivative(&self, x: f64) -> Result<f64> {
        check_domain(x)?;
        Ok(self.second_derivative_unchecked(x))
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, x: f64) -> f64 {
        match *self {
            Valuation::LogShift { a, b } => a * (b * x).ln_1p(),
            Valuation::Power { a, b } => a * x.powf(b),
            Valuation::QuadCap { a, m } => a * (m * x - 0.5 * x * x),
        }
    }

    #[inline]
    pub(crate) fn derivative_unchecked(&self, x: f64) -> f64 {
        match *self {
            Valuation::LogShift { a, b } => a * b / (1.0 + b * x),
            // +inf at the origin
            Valuation::Power { a, b } => a * b * x.powf(b - 1.0),
            Valuation::QuadCap { a, m } => a * (m - x),
        }
    }

    #[inline]
    pub(crate) fn second_derivative_unchecked(&self, x: f64) -> f64 {
        match *self {
            Valuation::LogShift { a, b } => {
                let s = 1.0 + b * x;
                -a * b * b / (s * s)
            }
            Valuation::Power { a, b } => a * b * (b - 1.0) * x.powf(b - 2.0),
            Valuation::QuadCap { a, .. } => -a,
        }
    }
}

fn check_domain(x: f64) -> Result<()> {
    if x >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_shift_values() {
        let v = Valuation::LogShift { a: 1.0, b: 1.0 };
        assert_eq!(v.value(0.0).unwrap(), 0.0);
        assert_eq!(v.derivative(0.0).unwrap(), 1.0);
        assert!((v.derivative(0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn power_values() {
        let v = Valuation::Power { a: 2.0, b: 0.5 };
        assert!((v.value(4.0).unwrap() - 4.0).abs() < 1e-15);
        assert!((v.derivative(4.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(v.derivative(0.0).unwrap().is_infinite());
    }

    #[test]
    fn quad_cap_is_not_monotone() {
        let v = Valuation::QuadCap { a: 1.0, m: 2.0 };
        assert!(v.derivative(1.0).unwrap() > 0.0);
        assert_eq!(v.derivative(2.0).unwrap(), 0.0);
        assert!(v.derivative(3.0).unwrap() < 0.0);
    }

    #[test]
    fn negative_argument_is_a_domain_error() {
        let v = Valuation::LogShift { a: 1.0, b: 1.0 };
        assert!(matches!(v.value(-1e-9), Err(Error::Domain(_))));
        assert!(matches!(v.derivative(-1.0), Err(Error::Domain(_))));
        assert!(matches!(v.second_derivative(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn admissibility() {
        assert!(Valuation::Power { a: 1.0, b: 1.0 }.admissible().is_err());
        assert!(Valuation::LogShift { a: -1.0, b: 1.0 }.admissible().is_err());
        assert!(Valuation::QuadCap { a: 1.0, m: 0.5 }.admissible().is_ok());
    }

    #[test]
    fn json_shape() {
        let v: Valuation =
            serde_json::from_str(r#"{"family": "log_shift", "a": 1.0, "b": 2.0}"#).unwrap();
        assert_eq!(v, Valuation::LogShift { a: 1.0, b: 2.0 });
        let s = serde_json::to_string(&Valuation::QuadCap { a: 1.0, m: 2.0 }).unwrap();
        assert_eq!(s, r#"{"family":"quad_cap","a":1.0,"m":2.0}"#);
    }
}
