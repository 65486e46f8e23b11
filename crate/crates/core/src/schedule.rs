//! Discrete variance-preserving noise schedule.
//!
//! `alpha_bar[t]` is the cumulative product of `1 - beta` over the first `t`
//! steps, so `t = 0` is the clean point: `alpha(0) = 1`, `sigma(0) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    #[serde(rename = "N")]
    pub n: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma_data: f64,
    pub kappa: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            n: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sigma_data: 0.5,
            kappa: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear `beta` from `beta_start` to `beta_end` over `n` steps.
    pub fn new(params: ScheduleParams) -> Result<Self> {
        let ScheduleParams {
            n,
            beta_start,
            beta_end,
            sigma_data,
            kappa,
        } = params;
        if n < 2 {
            return Err(Error::InvalidArgument(format!("schedule needs N >= 2, got {n}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        if !(sigma_data > 0.0 && kappa > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma_data and kappa must be positive, got {sigma_data}, {kappa}"
            )));
        }
        let beta: Vec<f64> = (0..n)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (n - 1) as f64)
            .collect();
        let mut alpha_bar = Vec::with_capacity(n + 1);
        alpha_bar.push(1.0);
        for b in &beta {
            let last = *alpha_bar.last().unwrap();
            alpha_bar.push(last * (1.0 - b));
        }
        Ok(NoiseSchedule {
            params,
            beta,
            alpha_bar,
        })
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    /// Number of discrete steps; valid timesteps are `0..=n`.
    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t > self.n() {
            return Err(Error::TimestepOutOfRange { t, max: self.n() });
        }
        Ok(())
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    /// `(c_skip, c_out)` at timestep `t`; exactly `(1, 0)` at `t = 0`.
    pub fn boundary_coeffs(&self, t: usize) -> (f64, f64) {
        let sd = self.params.sigma_data;
        let u = t as f64 / self.params.kappa;
        let denom = u * u + sd * sd;
        (sd * sd / denom, sd * u / denom.sqrt())
    }

    /// `steps` timesteps evenly spaced on `[1, N]`, largest first, starting at `N`.
    pub fn sampling_grid(&self, steps: usize) -> Result<TimestepGrid> {
        let n = self.n();
        if steps == 0 || steps > n {
            return Err(Error::InvalidArgument(format!(
                "sampling steps must lie in [1, {n}], got {steps}"
            )));
        }
        let indices = (0..steps)
            .map(|i| n - (i as f64 * n as f64 / steps as f64).round() as usize)
            .collect();
        Ok(TimestepGrid { indices })
    }

    /// `alpha(t) * z0 + sigma(t) * noise`; returns `z0` itself at `t = 0`.
    pub fn perturb<T: Element>(&self, z0: &Tensor<T>, t: usize, noise: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(t)?;
        if z0.shape() != noise.shape() {
            return Err(Error::shape(z0.shape(), noise.shape()));
        }
        if t == 0 {
            return Ok(z0.clone());
        }
        let (a, s) = (T::of(self.alpha(t)), T::of(self.sigma(t)));
        let data = z0
            .data()
            .iter()
            .zip(noise.data())
            .map(|(&z, &e)| a * z + s * e)
            .collect();
        Tensor::new(data, z0.shape())
    }

    /// Per-item [`perturb`](Self::perturb) over the leading batch axis.
    pub fn perturb_items<T: Element>(&self, z0: &Tensor<T>, ts: &[usize], noise: &Tensor<T>) -> Result<Tensor<T>> {
        if z0.shape() != noise.shape() {
            return Err(Error::shape(z0.shape(), noise.shape()));
        }
        let per = per_item(z0, ts.len())?;
        let mut data = Vec::with_capacity(z0.numel());
        for (i, &t) in ts.iter().enumerate() {
            self.check(t)?;
            let (a, s) = (T::of(self.alpha(t)), T::of(self.sigma(t)));
            let zs = &z0.data()[i * per..(i + 1) * per];
            let es = &noise.data()[i * per..(i + 1) * per];
            if t == 0 {
                data.extend_from_slice(zs);
            } else {
                data.extend(zs.iter().zip(es).map(|(&z, &e)| a * z + s * e));
            }
        }
        Tensor::new(data, z0.shape())
    }
}

/// Elements per batch item, checking the leading axis against `items`.
pub(crate) fn per_item<T: Element>(x: &Tensor<T>, items: usize) -> Result<usize> {
    match x.shape().first() {
        Some(&b) if b == items => Ok(if b == 0 { 0 } else { x.numel() / b }),
        _ => Err(Error::InvalidArgument(format!(
            "expected {items} batch items, tensor has shape {:?}",
            x.shape()
        ))),
    }
}

/// Strictly decreasing timesteps for multi-step sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepGrid {
    indices: Vec<usize>,
}

impl TimestepGrid {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}
