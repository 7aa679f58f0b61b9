//! Scale functions of the contour process.
//!
//! `W` is characterized by `int_0^inf e^{-xt} W(t) dt = 1 / psi(x)`. Writing
//! `1/psi(x) = (1/x) / (1 - b(1 - E e^{-xV})/x)` shows that `W` solves the
//! renewal equation `W = 1 + W * (b P(V > .))`, which is marched here with the
//! trapezoidal rule. The clonal scale function `W_theta` is the same equation
//! with the survival function replaced by `e^{-theta s} P(V > s)`.

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Largest number of grid cells accepted by [`ScaleGrid::build`].
pub const MAX_GRID_CELLS: f64 = 1e7;

/// Tabulated scale function on a uniform grid, with an exponential tail.
#[derive(Debug, Clone)]
pub struct ScaleGrid {
    step: f64,
    horizon: f64,
    values: Vec<f64>,
    /// Exponential growth rate used beyond the horizon (`alpha`, or `alpha - theta` for the clonal tree).
    growth_rate: f64,
    /// Derivative of the Laplace exponent at `growth_rate`.
    psi_prime_growth: f64,
    /// `W(T) e^{-growth_rate T}`.
    tail_coefficient: f64,
    clonal: bool,
}

/// Solves `f_n = g_n + h (K_0 f_n / 2 + sum_{j=1}^{n-1} K_j f_{n-j} + K_n f_0 / 2)`.
pub fn solve_renewal(forcing: &[f64], kernel: &[f64], h: f64) -> Vec<f64> {
    assert_eq!(forcing.len(), kernel.len());
    let m = forcing.len();
    let mut f = Vec::with_capacity(m);
    if m == 0 {
        return f;
    }
    f.push(forcing[0]);
    let denom = 1.0 - 0.5 * h * kernel[0];
    for n in 1..m {
        let conv: f64 = kernel[1..n]
            .iter()
            .zip(f[1..n].iter().rev())
            .map(|(k, v)| k * v)
            .sum();
        let rhs = forcing[n] + h * (conv + 0.5 * kernel[n] * f[0]);
        f.push(rhs / denom);
    }
    f
}

fn cell_count(h: f64, horizon: f64) -> Result<usize> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Grid(format!("step must be > 0, got {h}")));
    }
    if !(horizon.is_finite() && horizon >= h) {
        return Err(Error::Grid(format!("horizon {horizon} must be >= step {h}")));
    }
    let cells = horizon / h;
    if cells > MAX_GRID_CELLS {
        return Err(Error::Grid(format!("grid too large: {cells:.3e} cells")));
    }
    Ok((cells - 1e-9).ceil() as usize)
}

fn renewal_kernel(params: &ModelParams, h: f64, m: usize, clonal: bool) -> Vec<f64> {
    (0..=m)
        .map(|j| {
            let s = j as f64 * h;
            let damp = if clonal { (-params.theta * s).exp() } else { 1.0 };
            params.b * params.lifespan.survival_midpoint(s) * damp
        })
        .collect()
}

impl ScaleGrid {
    /// Solves for `W` (or `W_theta` when `clonal`) on `[0, horizon]` with step `h`.
    ///
    /// The horizon is rounded up to a whole number of cells.
    pub fn build(params: &ModelParams, h: f64, horizon: f64, clonal: bool) -> Result<Self> {
        let m = cell_count(h, horizon)?;
        let kernel = renewal_kernel(params, h, m, clonal);
        let values = solve_renewal(&vec![1.0; m + 1], &kernel, h);
        let horizon = m as f64 * h;
        let (growth_rate, psi_prime_growth) = if clonal {
            let r = params.clonal_alpha();
            (r, params.psi_theta_derivative(r))
        } else {
            let r = params.malthusian_alpha();
            (r, params.psi_derivative(r))
        };
        let tail_coefficient = values[m] * (-growth_rate * horizon).exp();
        Ok(Self { step: h, horizon, values, growth_rate, psi_prime_growth, tail_coefficient, clonal })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn growth_rate(&self) -> f64 {
        self.growth_rate
    }

    pub fn psi_prime_growth(&self) -> f64 {
        self.psi_prime_growth
    }

    /// `e^{-r T} W(T)` at the grid horizon `T`; tends to `1 / psi'(r)` as `T` grows.
    pub fn tail_coefficient(&self) -> f64 {
        self.tail_coefficient
    }

    pub fn is_clonal(&self) -> bool {
        self.clonal
    }

    /// Time of grid node `k`.
    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    pub fn cells(&self) -> usize {
        self.values.len() - 1
    }

    /// Linear interpolation on the grid, exponential extension beyond the horizon.
    pub fn eval(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::Domain(format!("scale function evaluated at s = {s}")));
        }
        let m = self.cells();
        let x = s / self.step;
        let nearest = x.round();
        if (x - nearest).abs() < 1e-9 && nearest as usize <= m {
            return Ok(self.values[nearest as usize]);
        }
        if s <= self.horizon {
            let k = (x.floor() as usize).min(m - 1);
            let frac = x - k as f64;
            return Ok(self.values[k] + frac * (self.values[k + 1] - self.values[k]));
        }
        if self.growth_rate > 0.0 {
            Ok(self.values[m] * (self.growth_rate * (s - self.horizon)).exp())
        } else {
            Err(Error::Domain("tail extension requires supercritical growth".into()))
        }
    }

    /// Inverse of [`eval`](Self::eval): the `s` with `W(s) = y`.
    pub fn invert(&self, y: f64) -> Result<f64> {
        if !(y >= 1.0) {
            return Err(Error::Domain(format!("scale function inverse needs y >= 1, got {y}")));
        }
        let m = self.cells();
        let top = self.values[m];
        if y > top {
            return if self.growth_rate > 0.0 {
                Ok(self.horizon + (y / top).ln() / self.growth_rate)
            } else {
                Err(Error::Domain("tail inversion requires supercritical growth".into()))
            };
        }
        Ok(self.invert_within(y))
    }

    // y must lie in [1, W(T)].
    #[inline]
    pub(crate) fn invert_within(&self, y: f64) -> f64 {
        let m = self.cells();
        // first index with values[k] > y
        let upper = self.values.partition_point(|&v| v <= y).clamp(1, m);
        let k = upper - 1;
        let (lo, hi) = (self.values[k], self.values[k + 1]);
        let frac = if hi > lo { ((y - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
        (k as f64 + frac) * self.step
    }

    /// Sanity ratio `e^{-r s} psi'(r) W(s)` with `r` the growth rate.
    pub fn asymptotic_ratio(&self, s: f64) -> Result<f64> {
        Ok((-self.growth_rate * s).exp() * self.psi_prime_growth * self.eval(s)?)
    }
}

/// `E[N_t]` tabulated on the grid of a companion `W` grid.
///
/// Solves `f(t) = P(V > t) + b int_0^t f(t - s) P(V > s) ds`.
#[derive(Debug, Clone)]
pub struct MeanPopulationGrid {
    step: f64,
    values: Vec<f64>,
}

impl MeanPopulationGrid {
    pub fn build(params: &ModelParams, grid_w: &ScaleGrid) -> Self {
        let m = grid_w.cells();
        let h = grid_w.step();
        let kernel = renewal_kernel(params, h, m, false);
        let forcing: Vec<f64> = (0..=m).map(|j| params.lifespan.survival(j as f64 * h)).collect();
        Self { step: h, values: solve_renewal(&forcing, &kernel, h) }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        interp(&self.values, self.step, t)
    }

    /// `P(N_t > 0) = E[N_t] / W(t)`, since `E[N_t | N_t > 0] = W(t)`.
    pub fn survival_prob(&self, grid_w: &ScaleGrid, t: f64) -> Result<f64> {
        Ok(self.eval(t)? / grid_w.eval(t)?)
    }
}

/// Probability that the population started from one root is alive at `t`.
pub fn survival_prob(params: &ModelParams, grid_w: &ScaleGrid, t: f64) -> Result<f64> {
    MeanPopulationGrid::build(params, grid_w).survival_prob(grid_w, t)
}

fn interp(values: &[f64], step: f64, t: f64) -> Result<f64> {
    let m = values.len() - 1;
    let horizon = m as f64 * step;
    if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!("t = {t} outside grid [0, {horizon}]")));
    }
    let x = t / step;
    let k = (x.floor() as usize).min(m.saturating_sub(1));
    if m == 0 {
        return Ok(values[0]);
    }
    let frac = (x - k as f64).clamp(0.0, 1.0);
    Ok(values[k] + frac * (values[k + 1] - values[k]))
}

/// Limit constants `c_k = int_0^inf theta e^{-theta s} / W_theta(s)^2 (1 - 1/W_theta(s))^{k-1} ds`.
#[derive(Debug, Clone)]
pub struct ClonalConstants {
    /// `c_1, ..., c_K`.
    pub values: Vec<f64>,
    /// Quadrature of `sum_{k > K} k c_k`, from the geometric tail in closed form.
    pub weighted_tail: f64,
    /// Integration is truncated at this time.
    pub truncation: f64,
    /// Upper bound on the neglected mass beyond the truncation, `e^{-theta T}`.
    pub truncation_bound: f64,
}

impl ClonalConstants {
    pub fn get(&self, k: usize) -> f64 {
        self.values[k - 1]
    }

    /// `sum_{k <= K} k c_k` plus the closed-form tail; equals 1 up to truncation.
    pub fn weighted_sum(&self) -> f64 {
        self.values.iter().enumerate().map(|(i, c)| (i + 1) as f64 * c).sum::<f64>()
            + self.weighted_tail
    }
}

/// Computes `c_1..c_K` with the neglected tail beyond the truncation below `tol`.
pub fn clonal_constants(params: &ModelParams, k_max: usize, tol: f64) -> Result<ClonalConstants> {
    if params.theta <= 0.0 {
        return Err(Error::Domain("c_k undefined without mutations".into()));
    }
    if k_max == 0 {
        return Err(Error::InvalidParameter("need at least one constant".into()));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be in (0,1), got {tol}")));
    }
    let truncation = (1.0 / tol).ln() / params.theta;
    let h = (truncation / 40_000.0).min(1e-3);
    let grid = ScaleGrid::build(params, h, truncation, true)?;
    Ok(constants_from_grid(params.theta, &grid, k_max))
}

/// Trapezoidal `c_k` on an existing clonal grid, truncated at its horizon.
pub fn constants_from_grid(theta: f64, grid: &ScaleGrid, k_max: usize) -> ClonalConstants {
    let h = grid.step();
    let m = grid.cells();
    let mut values = vec![0.0; k_max];
    let mut weighted_tail = 0.0;
    let kf = k_max as f64;
    for (j, &w) in grid.values().iter().enumerate() {
        let weight = if j == 0 || j == m { 0.5 * h } else { h };
        let s = grid.node(j);
        let base = theta * (-theta * s).exp() / (w * w);
        let x = 1.0 - 1.0 / w;
        let mut pow = 1.0;
        for c in values.iter_mut() {
            *c += weight * base * pow;
            pow *= x;
        }
        // pow = x^K here; sum_{k>K} k x^{k-1} = ((K+1) x^K - K x^{K+1}) / (1-x)^2 and (1-x)^{-2} = w^2
        weighted_tail += weight * theta * (-theta * s).exp() * ((kf + 1.0) * pow - kf * pow * x);
    }
    let truncation = grid.horizon();
    ClonalConstants {
        values,
        weighted_tail,
        truncation,
        truncation_bound: (-theta * truncation).exp(),
    }
}
