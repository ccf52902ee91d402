//! Linear-beta noise schedule, forward diffusion and DDIM step subsets.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

/// Steps are 1-based: `beta(k)`, `alpha_bar(k)` for `k` in `1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::new(ScheduleConfig {
        steps,
        beta_start,
        beta_end,
    })
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        let ScheduleConfig {
            steps,
            beta_start,
            beta_end,
        } = config;
        if steps == 0 {
            return Err(Error::Invalid("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Invalid(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule {
            config,
            betas,
            alpha_bars,
        })
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        1.0 - self.betas[k - 1]
    }

    /// `alpha_bar(0)` is 1 by convention.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bars[k - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.steps() {
            return Err(Error::Invalid(format!("step {k} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// `sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps`.
    pub fn forward_diffuse(&self, x0: &[f64], k: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_step(k)?;
        if x0.len() != eps.len() {
            return Err(Error::Invalid(format!(
                "noise has {} values, image has {}",
                eps.len(),
                x0.len()
            )));
        }
        let ab = self.alpha_bar(k);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
    }

    /// Evenly spaced subset of `1..=K` of length `count`, ascending. A
    /// single step samples only `K`.
    pub fn ddim_steps(&self, count: usize) -> Result<Vec<usize>> {
        let k = self.steps();
        if count == 0 || count > k {
            return Err(Error::Invalid(format!(
                "sampling steps must be in 1..={k}, got {count}"
            )));
        }
        if count == 1 {
            return Ok(vec![k]);
        }
        Ok((0..count)
            .map(|i| 1 + ((i * (k - 1)) as f64 / (count - 1) as f64).round() as usize)
            .collect())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::new(ScheduleConfig::default()).expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_schedules() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        let s = make_schedule(2, 0.1, 0.2).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(3, 0.3, 0.2).is_err());
        assert!(make_schedule(3, 0.0, 0.2).is_err());
        assert!(make_schedule(3, 0.1, 1.0).is_err());
    }

    #[test]
    fn default_schedule_is_decreasing() {
        let s = NoiseSchedule::default();
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(1000) > 0.0);
        // compensated recomputation through logs
        let log_sum: f64 = s.betas().iter().map(|b| (-b).ln_1p()).sum();
        assert!((s.alpha_bar(1000) - log_sum.exp()).abs() < 1e-10);
    }

    #[test]
    fn forward_diffuse_edges() {
        let s = NoiseSchedule::default();
        let x0 = [0.1, -0.2, 0.3];
        let zero = [0.0; 3];
        let e = [1.0, -1.0, 0.5];
        let a = s.forward_diffuse(&x0, 10, &zero).unwrap();
        for i in 0..3 {
            assert!((a[i] - s.alpha_bar(10).sqrt() * x0[i]).abs() < 1e-15);
        }
        let b = s.forward_diffuse(&zero, 10, &e).unwrap();
        for i in 0..3 {
            assert!((b[i] - (1.0 - s.alpha_bar(10)).sqrt() * e[i]).abs() < 1e-15);
        }
        assert!(s.forward_diffuse(&x0, 0, &e).is_err());
        assert!(s.forward_diffuse(&x0, 1001, &e).is_err());
    }

    #[test]
    fn step_subsets() {
        let s = NoiseSchedule::default();
        let t = s.ddim_steps(25).unwrap();
        assert_eq!(t.len(), 25);
        assert_eq!((t[0], t[24]), (1, 1000));
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.ddim_steps(1).unwrap(), vec![1000]);
        assert_eq!(s.ddim_steps(1000).unwrap(), (1..=1000).collect::<Vec<_>>());
        assert!(s.ddim_steps(0).is_err());
        assert!(s.ddim_steps(1001).is_err());
    }
}
