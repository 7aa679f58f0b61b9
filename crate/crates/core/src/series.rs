//! Power-series coefficient extraction from generating-function values on a circle.
//!
//! The coefficient of `x^n` of a function analytic in the unit disc is
//! `(1/M) sum_j F(r w^j) w^{-jn} / r^n` with `w = e^{2 pi i / M}`, up to an
//! aliasing error of order `r^M` times the total coefficient mass.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const MIN_SERIES_LEN: usize = 64;
pub const MAX_SERIES_LEN: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionPlan {
    len: usize,
    radius: f64,
}

impl ExtractionPlan {
    pub fn new(len: usize, radius: f64) -> Result<Self> {
        if !(MIN_SERIES_LEN..=MAX_SERIES_LEN).contains(&len) {
            return Err(Error::Config(format!(
                "series length {len} outside [{MIN_SERIES_LEN}, {MAX_SERIES_LEN}]"
            )));
        }
        if !(radius > 0.0 && radius < 1.0) {
            return Err(Error::Config(format!("series radius must be in (0,1), got {radius}")));
        }
        Ok(Self { len, radius })
    }

    /// Plan for coefficients up to `max_degree` with aliasing below `aliasing_tol`.
    ///
    /// The length is at least four times the largest degree, so dividing by
    /// `r^n` amplifies round-off by at most `aliasing_tol^{-1/4}`.
    pub fn for_degree(max_degree: usize, aliasing_tol: f64) -> Result<Self> {
        let len = (4 * (max_degree + 1)).max(MIN_SERIES_LEN).next_power_of_two();
        if len > MAX_SERIES_LEN {
            return Err(Error::Config(format!(
                "coefficient extraction up to degree {max_degree} needs a series longer than {MAX_SERIES_LEN}"
            )));
        }
        Self::new(len, aliasing_tol.powf(1.0 / len as f64))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `r^M`, the relative aliasing error.
    pub fn aliasing_bound(&self) -> f64 {
        self.radius.powi(self.len as i32)
    }

    /// Largest degree extracted without overlap with the aliased copy.
    pub fn max_degree(&self) -> usize {
        self.len - 1
    }

    /// Evaluation points `r w^j`, `j = 0..M`.
    pub fn points(&self) -> Vec<Complex64> {
        (0..self.len)
            .map(|j| {
                Complex64::from_polar(self.radius, 2.0 * std::f64::consts::PI * j as f64 / self.len as f64)
            })
            .collect()
    }

    /// Coefficients `0..=max_degree` from values at [`points`](Self::points).
    pub fn extract(&self, mut values: Vec<Complex64>, max_degree: usize) -> Vec<f64> {
        assert_eq!(values.len(), self.len);
        let fft = FftPlanner::new().plan_fft_forward(self.len);
        fft.process(&mut values);
        let scale = 1.0 / self.len as f64;
        let mut rpow = 1.0;
        values
            .iter()
            .take(max_degree.min(self.len - 1) + 1)
            .map(|c| {
                let v = c.re * scale / rpow;
                rpow *= self.radius;
                v
            })
            .collect()
    }

    /// Two-variable extraction; `values[j * M + k]` holds `F(r w^j, r w^k)`.
    ///
    /// Returns `coef[n][z]` for `n, z <= max_degree`.
    pub fn extract_2d(&self, mut values: Vec<Complex64>, max_degree: usize) -> Vec<Vec<f64>> {
        let m = self.len;
        assert_eq!(values.len(), m * m);
        let fft = FftPlanner::new().plan_fft_forward(m);
        for row in values.chunks_mut(m) {
            fft.process(row);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); m];
        for k in 0..m {
            for j in 0..m {
                column[j] = values[j * m + k];
            }
            fft.process(&mut column);
            for j in 0..m {
                values[j * m + k] = column[j];
            }
        }
        let d = max_degree.min(m - 1);
        let scale = 1.0 / (m * m) as f64;
        let rpow: Vec<f64> = (0..=d).map(|n| self.radius.powi(n as i32)).collect();
        (0..=d)
            .map(|n| (0..=d).map(|z| values[n * m + z].re * scale / (rpow[n] * rpow[z])).collect())
            .collect()
    }
}
