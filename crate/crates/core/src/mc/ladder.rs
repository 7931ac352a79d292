use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Geometric,
    Explicit,
}

impl std::str::FromStr for Spacing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Spacing::Linear),
            "geometric" => Ok(Spacing::Geometric),
            other => Err(Error::Domain(format!("unknown spacing '{other}' (linear|geometric)"))),
        }
    }
}

/// Strictly increasing positive temperatures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureLadder {
    temperatures: Vec<f64>,
    spacing: Spacing,
}

impl TemperatureLadder {
    pub fn new(t_min: f64, t_max: f64, n: usize, spacing: Spacing) -> Result<Self> {
        if !(t_min > 0.0 && t_min < t_max && t_max.is_finite()) {
            return Err(Error::Domain(format!(
                "ladder needs 0 < T_min < T_max (got {t_min}, {t_max})"
            )));
        }
        if n < 2 {
            return Err(Error::Domain(format!("ladder needs at least 2 temperatures (got {n})")));
        }
        let last = (n - 1) as f64;
        let temperatures = (0..n)
            .map(|i| {
                let f = i as f64 / last;
                match spacing {
                    Spacing::Linear | Spacing::Explicit => t_min + (t_max - t_min) * f,
                    Spacing::Geometric => t_min * (t_max / t_min).powf(f),
                }
            })
            .collect();
        Self::explicit_with(temperatures, spacing)
    }

    pub fn linear(t_min: f64, t_max: f64, n: usize) -> Result<Self> {
        Self::new(t_min, t_max, n, Spacing::Linear)
    }

    pub fn explicit(temperatures: Vec<f64>) -> Result<Self> {
        Self::explicit_with(temperatures, Spacing::Explicit)
    }

    fn explicit_with(temperatures: Vec<f64>, spacing: Spacing) -> Result<Self> {
        if temperatures.len() < 2 {
            return Err(Error::Domain("ladder needs at least 2 temperatures".into()));
        }
        if temperatures[0] <= 0.0 || temperatures.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("temperatures must be positive and strictly increasing".into()));
        }
        Ok(Self {
            temperatures,
            spacing,
        })
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn betas(&self) -> Vec<f64> {
        self.temperatures.iter().map(|t| 1.0 / t).collect()
    }

    pub fn len(&self) -> usize {
        self.temperatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperatures.is_empty()
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }
}
