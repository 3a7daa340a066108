use serde::{Deserialize, Serialize};

use super::{default_noise_sd, dot, gaussian_log_pdf, obs_shape};
use crate::domain::{argmax, Action, Observation};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MabParams {
    pub means: Vec<f64>,
    pub noise_sd: f64,
}

impl MabParams {
    pub fn sample(arms: usize, rng: &mut RngStream) -> Self {
        Self {
            means: (0..arms).map(|_| rng.normal(0.0, 1.0)).collect(),
            noise_sd: default_noise_sd(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.len() < 2 {
            return Err(Error::Config("a bandit needs at least two arms".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config("noise_sd must be non-negative".into()));
        }
        Ok(())
    }

    fn arm(&self, a: &Action) -> Result<usize> {
        match a {
            Action::Index(i) if *i < self.means.len() => Ok(*i),
            _ => Err(Error::InvalidAction(format!("{a:?} is not one of {} arms", self.means.len()))),
        }
    }

    pub fn expected_reward(&self, a: &Action) -> Result<f64> {
        Ok(self.means[self.arm(a)?])
    }

    pub fn observe(&self, a: &Action, rng: &mut RngStream) -> Result<Observation> {
        let m = self.expected_reward(a)?;
        Ok(Observation(vec![rng.normal(m, self.noise_sd)]))
    }

    pub fn optimal_action(&self) -> Action {
        Action::Index(argmax(&self.means))
    }

    pub fn log_likelihood(&self, a: &Action, o: &Observation) -> Result<f64> {
        let r = *o.values().first().ok_or_else(|| obs_shape(o, 1))?;
        Ok(gaussian_log_pdf(r, self.expected_reward(a)?, self.noise_sd))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinBanditParams {
    pub w: Vec<f64>,
    pub noise_sd: f64,
}

impl LinBanditParams {
    /// `w` uniform on the unit sphere (normalized standard Gaussian).
    pub fn sample(dim: usize, rng: &mut RngStream) -> Self {
        loop {
            let g: Vec<f64> = (0..dim).map(|_| rng.normal(0.0, 1.0)).collect();
            let norm = dot(&g, &g).sqrt();
            if norm > 1e-12 {
                return Self {
                    w: g.iter().map(|v| v / norm).collect(),
                    noise_sd: default_noise_sd(),
                };
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.is_empty() {
            return Err(Error::Config("linear bandit dimension must be positive".into()));
        }
        if (dot(&self.w, &self.w).sqrt() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("w must lie on the unit sphere".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config("noise_sd must be non-negative".into()));
        }
        Ok(())
    }

    fn coords(&self, a: &Action) -> Result<Vec<f64>> {
        match a.coords() {
            Some(v) if v.len() == self.w.len() => Ok(v),
            _ => Err(Error::InvalidAction(format!("{a:?} is not a {}-vector", self.w.len()))),
        }
    }

    pub fn expected_reward(&self, a: &Action) -> Result<f64> {
        Ok(dot(&self.w, &self.coords(a)?))
    }

    pub fn observe(&self, a: &Action, rng: &mut RngStream) -> Result<Observation> {
        let m = self.expected_reward(a)?;
        Ok(Observation(vec![rng.normal(m, self.noise_sd)]))
    }

    pub fn optimal_action(&self) -> Action {
        Action::Vector(self.w.clone())
    }

    pub fn log_likelihood(&self, a: &Action, o: &Observation) -> Result<f64> {
        let r = *o.values().first().ok_or_else(|| obs_shape(o, 1))?;
        Ok(gaussian_log_pdf(r, self.expected_reward(a)?, self.noise_sd))
    }
}
