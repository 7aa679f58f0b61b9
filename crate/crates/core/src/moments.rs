//! Distributions and factorial moments of the frequency spectrum.
//!
//! Notation: for `0 <= a <= t`, the lower tree of height `s = t - a` has the
//! scale function `W~(x) = W(x + a) / W(a)`. Its leaf count `N` is geometric
//! with mean `w = W(t) / W(a)`, and `Z` counts leaves whose lineage in the lower
//! tree carries no mutation. At `u = 1` the joint pgf reduces to closed forms in
//! `D(v) = v + Y (1 - v)`:
//!
//! ```text
//! E[v^Z]     = 1 - e w (1 - v) / D
//! E[N v^Z]   = w E[v^Z] - e w ((w - 1)(1 - v) / D - Y' (1 - v)^2 / D^2)
//! ```
//!
//! with `e = e^{-theta s}`, `Y = e w + theta int_0^s W~ e^{-theta r} dr` and
//! `Y' = e w (w - 1) + theta int_0^s W~ (W~ - 1) e^{-theta r} dr`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scale::{clonal_constants, ClonalConstants, ScaleGrid};
use crate::series::ExtractionPlan;

pub const DEFAULT_QUADRATURE_NODES: usize = 400;
pub const DEFAULT_SERIES_TOL: f64 = 1e-14;
pub const DEFAULT_TAIL_MASS: f64 = 1e-10;
/// Negative extracted probabilities above this are treated as round-off.
pub const NEGATIVE_ROUNDOFF: f64 = -1e-10;

#[derive(Debug, Clone)]
pub struct MomentContext {
    params: ModelParams,
    grid_w: ScaleGrid,
    grid_wt: ScaleGrid,
    quadrature_nodes: usize,
    series_tol: f64,
    tail_mass: f64,
    /// Cumulative `int_0^x W e^{-theta r} dr` and `int_0^x W^2 e^{-theta r} dr` on the grid nodes.
    cum_w: Vec<f64>,
    cum_w2: Vec<f64>,
}

fn cumulative(grid: &ScaleGrid, theta: f64, power: i32) -> Vec<f64> {
    let h = grid.step();
    let f: Vec<f64> = grid
        .values()
        .iter()
        .enumerate()
        .map(|(j, w)| w.powi(power) * (-theta * grid.node(j)).exp())
        .collect();
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for pair in f.windows(2) {
        acc += 0.5 * h * (pair[0] + pair[1]);
        out.push(acc);
    }
    out
}

fn lookup(table: &[f64], h: f64, x: f64) -> f64 {
    let pos = x / h;
    let k = (pos.floor() as usize).min(table.len() - 2);
    let frac = pos - k as f64;
    table[k] + frac * (table[k + 1] - table[k])
}

/// Closed-form lower-tree quantities at `u = 1`.
#[derive(Debug, Clone, Copy)]
struct LowerTree {
    e: f64,
    w: f64,
    y: f64,
    dy: f64,
}

impl LowerTree {
    fn d(&self, v: Complex64) -> Complex64 {
        v + self.y * (1.0 - v)
    }

    /// `E[v^Z]`.
    fn pgf(&self, v: Complex64) -> Complex64 {
        1.0 - self.e * self.w * (1.0 - v) / self.d(v)
    }

    /// `d/dv E[v^Z]`.
    fn pgf_derivative(&self, v: Complex64) -> Complex64 {
        let d = self.d(v);
        self.e * self.w / (d * d)
    }

    /// `E[N v^Z]`.
    fn weighted(&self, v: Complex64) -> Complex64 {
        let d = self.d(v);
        let q = (1.0 - v) / d;
        self.w * self.pgf(v) - self.e * self.w * ((self.w - 1.0) * q - self.dy * q * q)
    }

    /// `sum_z (E[N 1_{Z=z}] - z P(Z=z)) q^z + z P(Z=z) q^{z-1}`.
    fn mixed(&self, q: Complex64) -> Complex64 {
        self.weighted(q) + (1.0 - q) * self.pgf_derivative(q)
    }

    /// `v* = Y / (Y - 1)`, the nearest singularity in `v`.
    fn singularity(&self) -> f64 {
        if self.y > 1.0 {
            self.y / (self.y - 1.0)
        } else {
            f64::INFINITY
        }
    }
}

/// `P(Z = z)` and `E[N 1_{Z = z}]` for the lower tree.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerMarginals {
    pub prob: Vec<f64>,
    pub weighted: Vec<f64>,
}

/// Joint law `p[n][z]` of `(N, Z)`, `n, z <= n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    pub table: Vec<Vec<f64>>,
}

impl JointPmf {
    pub fn n_max(&self) -> usize {
        self.table.len() - 1
    }

    pub fn get(&self, n: usize, z: usize) -> f64 {
        self.table.get(n).and_then(|r| r.get(z)).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.table.iter().flatten().sum()
    }

    pub fn marginal_n(&self, n: usize) -> f64 {
        self.table.get(n).map_or(0.0, |r| r.iter().sum())
    }

    /// Total variation distance to an empirical law given as `(n, z) -> count`.
    pub fn total_variation(&self, samples: &[(u64, u64)]) -> f64 {
        let mut counts = std::collections::HashMap::<(u64, u64), f64>::new();
        for &s in samples {
            *counts.entry(s).or_default() += 1.0;
        }
        let total = samples.len() as f64;
        let mut dist = 0.0;
        let mut seen = 0.0;
        for (n, row) in self.table.iter().enumerate() {
            for (z, &p) in row.iter().enumerate() {
                let q = counts.remove(&(n as u64, z as u64)).unwrap_or(0.0) / total;
                dist += (p - q).abs();
                seen += p;
            }
        }
        let leftover: f64 = counts.values().sum::<f64>() / total;
        0.5 * (dist + leftover + (1.0 - seen).max(0.0))
    }
}

#[derive(Debug, Clone)]
pub struct LlnDescriptor {
    pub alpha: f64,
    pub psi_prime_alpha: f64,
    /// `c_k / psi'(alpha)` for `k = 1..=K`.
    pub scaled_constants: Vec<f64>,
    /// `sum_k k c_k / psi'(alpha)` over all `k`, tail included.
    pub weighted_sum: f64,
}

impl MomentContext {
    /// Builds the `W` and `W_theta` grids on `[0, horizon]` with step `h`.
    pub fn new(params: ModelParams, h: f64, horizon: f64) -> Result<Self> {
        let grid_w = ScaleGrid::build(&params, h, horizon, false)?;
        let grid_wt = ScaleGrid::build(&params, h, horizon, true)?;
        let cum_w = cumulative(&grid_w, params.theta, 1);
        let cum_w2 = cumulative(&grid_w, params.theta, 2);
        Ok(Self {
            params,
            grid_w,
            grid_wt,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
            series_tol: DEFAULT_SERIES_TOL,
            tail_mass: DEFAULT_TAIL_MASS,
            cum_w,
            cum_w2,
        })
    }

    pub fn with_quadrature_nodes(mut self, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::Config("need at least two quadrature intervals".into()));
        }
        self.quadrature_nodes = nodes;
        Ok(self)
    }

    /// Aliasing tolerance for coefficient extraction and tail mass for table truncation.
    pub fn with_truncation(mut self, series_tol: f64, tail_mass: f64) -> Result<Self> {
        if !(series_tol > 0.0 && series_tol < 1e-6 && tail_mass > 0.0 && tail_mass < 1e-3) {
            return Err(Error::Config(format!(
                "truncation controls out of range: series {series_tol}, tail {tail_mass}"
            )));
        }
        self.series_tol = series_tol;
        self.tail_mass = tail_mass;
        Ok(self)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grid_w(&self) -> &ScaleGrid {
        &self.grid_w
    }

    pub fn grid_wtheta(&self) -> &ScaleGrid {
        &self.grid_wt
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.quadrature_nodes
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.grid_w.horizon()) {
            return Err(Error::Domain(format!(
                "time {t} outside the grid horizon {}",
                self.grid_w.horizon()
            )));
        }
        Ok(())
    }

    fn w(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        self.grid_w.eval(t)
    }

    fn wt(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        self.grid_wt.eval(t)
    }

    /// `P_t(N_t = k)`, geometric with parameter `1 / W(t)`.
    pub fn pmf_population(&self, k: u64, t: f64) -> Result<f64> {
        if k < 1 {
            return Err(Error::InvalidParameter("population size must be at least 1".into()));
        }
        let p = 1.0 / self.w(t)?;
        Ok(p * (1.0 - p).powf((k - 1) as f64))
    }

    /// `P_t(Z_0(t) = k)`.
    pub fn pmf_clonal(&self, k: u64, t: f64) -> Result<f64> {
        let (w, wt) = (self.w(t)?, self.wt(t)?);
        let e = (-self.params.theta * t).exp();
        Ok(if k == 0 {
            1.0 - e * w / wt
        } else {
            e * w / (wt * wt) * (1.0 - 1.0 / wt).powf((k - 1) as f64)
        })
    }

    /// Trapezoid nodes and weights on the fine grid up to `t`, including `t` itself.
    fn fine_nodes(&self, t: f64) -> Vec<(usize, f64, f64)> {
        let h = self.grid_w.step();
        let full = ((t / h) * (1.0 + 1e-12)).floor() as usize;
        let rest = t - full as f64 * h;
        let mut out: Vec<(usize, f64, f64)> = (0..=full)
            .map(|j| {
                let weight = if full == 0 || j == 0 || j == full { 0.5 * h } else { h };
                (j, self.grid_w.node(j), if full == 0 { 0.0 } else { weight })
            })
            .collect();
        if rest > 1e-12 * h {
            out.last_mut().unwrap().2 += 0.5 * rest;
            out.push((usize::MAX, t, 0.5 * rest));
        }
        out
    }

    fn wt_at(&self, node: usize, a: f64) -> f64 {
        if node == usize::MAX {
            self.grid_wt.eval(a).expect("checked time")
        } else {
            self.grid_wt.values()[node]
        }
    }

    /// `E_t[A(k, t)]` for `k = 1..=k_max`.
    pub fn mean_spectrum_row(&self, k_max: usize, t: f64) -> Result<Vec<f64>> {
        let w = self.w(t)?;
        let theta = self.params.theta;
        let mut out = vec![0.0; k_max];
        if theta == 0.0 {
            return Ok(out);
        }
        for (j, a, weight) in self.fine_nodes(t) {
            let wt = self.wt_at(j, a);
            let x = 1.0 - 1.0 / wt;
            let mut term = weight * theta * (-theta * a).exp() / (wt * wt);
            for o in out.iter_mut() {
                *o += term;
                term *= x;
            }
        }
        Ok(out.into_iter().map(|v| v * w).collect())
    }

    pub fn mean_spectrum(&self, k: usize, t: f64) -> Result<f64> {
        if k < 1 {
            return Err(Error::InvalidParameter("family size must be at least 1".into()));
        }
        Ok(self.mean_spectrum_row(k, t)?[k - 1])
    }

    /// `sum_{k <= K} k E_t[A(k,t)]` plus the geometric tail, which collapses to `W(t)(1 - e^{-theta t})`.
    pub fn weighted_mean_sum(&self, k_max: usize, t: f64) -> Result<f64> {
        let w = self.w(t)?;
        let theta = self.params.theta;
        let kf = k_max as f64;
        let mut tail = 0.0;
        for (j, a, weight) in self.fine_nodes(t) {
            let wt = self.wt_at(j, a);
            let x = 1.0 - 1.0 / wt;
            let xk = x.powf(kf);
            tail += weight * theta * (-theta * a).exp() * ((kf + 1.0) * xk - kf * xk * x);
        }
        let row = self.mean_spectrum_row(k_max, t)?;
        Ok(row.iter().enumerate().map(|(i, m)| (i + 1) as f64 * m).sum::<f64>() + w * tail)
    }

    fn lower_tree(&self, a: f64, t: f64) -> Result<LowerTree> {
        if !(a >= 0.0 && a <= t) {
            return Err(Error::Domain(format!("lower tree needs 0 <= a <= t, got a = {a}, t = {t}")));
        }
        let (wa, wt) = (self.w(a)?, self.w(t)?);
        let theta = self.params.theta;
        let s = t - a;
        let e = (-theta * s).exp();
        let w = wt / wa;
        let h = self.grid_w.step();
        let scale = (theta * a).exp() / wa;
        let j1 = scale * (lookup(&self.cum_w, h, t) - lookup(&self.cum_w, h, a));
        let jsq = scale / wa * (lookup(&self.cum_w2, h, t) - lookup(&self.cum_w2, h, a));
        Ok(LowerTree {
            e,
            w,
            y: e * w + theta * j1,
            dy: e * w * (w - 1.0) + theta * (jsq - j1),
        })
    }

    /// `W~(s)`, `W~(s, u)` and `W~_theta(s, u)` by trapezoid on `[0, s]`.
    fn shifted_scale(&self, base: f64, span: f64, u: Complex64) -> Result<(f64, Complex64, Complex64)> {
        let wa = self.w(base)?;
        let wts = self.w(base + span)? / wa;
        if wts > 1.0 && u.norm() >= wts / (wts - 1.0) {
            return Err(Error::Domain(format!("u = {u} at or beyond the pole {}", wts / (wts - 1.0))));
        }
        let theta = self.params.theta;
        let ws = |x: f64| x / (x - u * (x - 1.0));
        let cells = ((span / self.grid_w.step()).ceil() as usize).max(1);
        let dr = span / cells as f64;
        let mut integral = Complex64::new(0.0, 0.0);
        for j in 0..=cells {
            let r = j as f64 * dr;
            let wr = self.grid_w.eval(base + r)? / wa;
            let weight = if j == 0 || j == cells { 0.5 * dr } else { dr };
            integral += weight * ws(wr) * (-theta * r).exp();
        }
        let wsu = ws(wts);
        let wtheta = (-theta * span).exp() * wsu + theta * integral;
        Ok((wts, wsu, wtheta))
    }

    fn pgf_from_parts(&self, span: f64, u: Complex64, v: Complex64, parts: (f64, Complex64, Complex64)) -> Complex64 {
        let (wts, wsu, wtheta) = parts;
        let head = u * wsu / wts;
        if v == Complex64::new(1.0, 0.0) {
            return head;
        }
        let e = (-self.params.theta * span).exp();
        // v / (1 - v) + W~_theta, multiplied through by (1 - v)
        head * (1.0 - e * wsu * (1.0 - v) / (v + wtheta * (1.0 - v)))
    }

    /// Joint pgf `E[u^N v^Z]` of the lower tree with base `base` and height `span`.
    ///
    /// `base = 0` gives the full tree of height `span`, conditioned on survival.
    pub fn joint_pgf(&self, base: f64, span: f64, u: Complex64, v: Complex64) -> Result<Complex64> {
        if !(base >= 0.0 && span > 0.0) {
            return Err(Error::Domain(format!("need base >= 0 and span > 0, got {base}, {span}")));
        }
        let parts = self.shifted_scale(base, span, u)?;
        Ok(self.pgf_from_parts(span, u, v, parts))
    }

    fn geometric_quantile(&self, p: f64) -> usize {
        if p >= 1.0 {
            return 1;
        }
        (self.tail_mass.ln() / (1.0 - p).ln()).ceil().max(1.0) as usize
    }

    /// Joint law of the lower tree `(N^{(t)}_{t-a}, Z_0^{(t)}(a))` by two-dimensional extraction.
    pub fn joint_pmf(&self, a: f64, t: f64) -> Result<JointPmf> {
        self.check_time(t)?;
        if !(a >= 0.0 && a <= t && t > 0.0) {
            return Err(Error::Domain(format!("joint law needs 0 <= a <= t, got a = {a}, t = {t}")));
        }
        if a == t {
            return Ok(JointPmf { table: vec![vec![0.0, 0.0], vec![0.0, 1.0]] });
        }
        let n_max = self.geometric_quantile(self.w(a)? / self.w(t)?);
        let plan = ExtractionPlan::for_degree(n_max, self.series_tol)?;
        if plan.aliasing_bound() > self.series_tol {
            return Err(Error::Config("aliasing bound exceeds the series tolerance".into()));
        }
        let pts = plan.points();
        let span = t - a;
        let mut values = Vec::with_capacity(pts.len() * pts.len());
        for &u in &pts {
            let parts = self.shifted_scale(a, span, u)?;
            values.extend(pts.iter().map(|&v| self.pgf_from_parts(span, u, v, parts)));
        }
        let mut table = plan.extract_2d(values, n_max);
        for (n, row) in table.iter_mut().enumerate() {
            row.truncate(n + 1);
            for p in row.iter_mut() {
                if *p < 0.0 && *p > NEGATIVE_ROUNDOFF {
                    *p = 0.0;
                }
            }
        }
        Ok(JointPmf { table })
    }

    /// `P(Z = z)` and `E[N 1_{Z = z}]` for the lower tree with base `a` at time `t`.
    pub fn lower_tree_marginals(&self, a: f64, t: f64) -> Result<LowerMarginals> {
        let lt = self.lower_tree(a, t)?;
        if a == t {
            return Ok(LowerMarginals { prob: vec![0.0, 1.0], weighted: vec![0.0, 1.0] });
        }
        let reach = lt.singularity();
        let z_max = if reach.is_finite() {
            ((1.0 / self.series_tol * lt.w * lt.y).ln() / reach.ln()).ceil() as usize
        } else {
            self.geometric_quantile(1.0 / lt.w)
        };
        let plan = ExtractionPlan::for_degree(z_max, self.series_tol)?;
        let pts = plan.points();
        let prob = plan.extract(pts.iter().map(|&v| lt.pgf(v)).collect(), z_max);
        let weighted = plan.extract(pts.iter().map(|&v| lt.weighted(v)).collect(), z_max);
        Ok(LowerMarginals { prob, weighted })
    }

    /// Outer trapezoid nodes on `[0, t]`.
    fn outer_nodes(&self, t: f64) -> Vec<(f64, f64)> {
        let n = self.quadrature_nodes;
        let h = t / n as f64;
        (0..=n).map(|i| (i as f64 * h, if i == 0 || i == n { 0.5 * h } else { h })).collect()
    }

    /// Clonal pgf coefficients at time `a`: `(P_a(Z_0 = 0), P_a(Z_0 = 1), ratio)`.
    fn clonal_law(&self, a: f64) -> Result<(f64, f64, f64)> {
        let (w, wt) = (self.w(a)?, self.wt(a)?);
        let e = (-self.params.theta * a).exp();
        Ok((1.0 - e * w / wt, e * w / (wt * wt), 1.0 - 1.0 / wt))
    }

    /// `[x^l]` of the mixed-moment integrand for `l = 0..=l_max`, lower tree `(a, t)`.
    fn mixed_coefficients(&self, a: f64, t: f64, plan: &ExtractionPlan, l_max: usize) -> Result<Vec<f64>> {
        let lt = self.lower_tree(a, t)?;
        let (p0, p1, rho) = self.clonal_law(a)?;
        let values = plan
            .points()
            .into_iter()
            .map(|x| lt.mixed(p0 + p1 * x / (1.0 - rho * x)))
            .collect();
        Ok(plan.extract(values, l_max))
    }

    /// `E_t[A(k,t) 1_{Z_0(t) = l}]` for `l = 0..=l_max`.
    pub fn mixed_mean_row(&self, k: usize, l_max: usize, t: f64) -> Result<Vec<f64>> {
        if k < 1 {
            return Err(Error::InvalidParameter("family size must be at least 1".into()));
        }
        self.check_time(t)?;
        let theta = self.params.theta;
        let mut out = vec![0.0; l_max + 1];
        if theta == 0.0 {
            return Ok(out);
        }
        let plan = ExtractionPlan::for_degree(l_max, self.series_tol)?;
        for (a, weight) in self.outer_nodes(t) {
            let pk = self.pmf_clonal(k as u64, a)?;
            let coef = self.mixed_coefficients(a, t, &plan, l_max)?;
            for (o, c) in out.iter_mut().zip(coef) {
                *o += weight * theta * pk * c;
            }
        }
        Ok(out)
    }

    pub fn mixed_mean(&self, k: usize, l: usize, t: f64) -> Result<f64> {
        Ok(self.mixed_mean_row(k, l, t)?[l])
    }

    /// `E_t[A(k)A(l)]` for `k != l` and `E_t[A(k)(A(k) - 1)]` on the diagonal,
    /// for all `k, l <= k_max`; entry `[k - 1][l - 1]`.
    pub fn second_order_matrix(&self, k_max: usize, t: f64) -> Result<Vec<Vec<f64>>> {
        if k_max < 1 {
            return Err(Error::InvalidParameter("family size must be at least 1".into()));
        }
        self.check_time(t)?;
        let theta = self.params.theta;
        let mut out = vec![vec![0.0; k_max]; k_max];
        if theta == 0.0 {
            return Ok(out);
        }
        let nodes = self.outer_nodes(t);
        let hq = t / self.quadrature_nodes as f64;
        let plan = ExtractionPlan::for_degree(k_max, self.series_tol)?;
        let pmf: Vec<Vec<f64>> = nodes
            .iter()
            .map(|&(a, _)| (1..=k_max).map(|k| self.pmf_clonal(k as u64, a)).collect())
            .collect::<Result<_>>()?;
        let wt = self.w(t)?;
        for (i, &(a, weight)) in nodes.iter().enumerate() {
            let mean = self.mean_spectrum_row(k_max, a)?;
            // mixed[k][l] = E_a[A(k,a) 1_{Z_0(a) = l}], inner trapezoid over nodes 0..=i
            let mut mixed = vec![vec![0.0; k_max + 1]; k_max];
            for j in 0..=i.min(nodes.len() - 1) {
                if i == 0 {
                    break;
                }
                let inner = if j == 0 || j == i { 0.5 * hq } else { hq };
                let coef = self.mixed_coefficients(nodes[j].0, a, &plan, k_max)?;
                for (k, row) in mixed.iter_mut().enumerate() {
                    let f = inner * theta * pmf[j][k];
                    for (m, c) in row.iter_mut().zip(&coef) {
                        *m += f * c;
                    }
                }
            }
            let en = wt / self.w(a)?;
            let en2 = 2.0 * en * en * (1.0 - 1.0 / en);
            for k in 0..k_max {
                for l in 0..k_max {
                    let first = pmf[i][k] * mean[l] + pmf[i][l] * mean[k];
                    let second = mixed[l][k + 1] + mixed[k][l + 1];
                    out[k][l] += weight * theta * (en2 * first + en * second);
                }
            }
        }
        Ok(out)
    }

    pub fn second_order(&self, k: usize, l: usize, t: f64) -> Result<f64> {
        if k < 1 || l < 1 {
            return Err(Error::InvalidParameter("family sizes must be at least 1".into()));
        }
        Ok(self.second_order_matrix(k.max(l), t)?[k - 1][l - 1])
    }

    /// `Cov_t(A(k), A(l))` from [`second_order_matrix`](Self::second_order_matrix).
    pub fn covariance(&self, k: usize, l: usize, t: f64) -> Result<f64> {
        let m = self.second_order(k, l, t)?;
        let (mk, ml) = (self.mean_spectrum(k, t)?, self.mean_spectrum(l, t)?);
        Ok(m - mk * ml + if k == l { mk } else { 0.0 })
    }

    /// The two integral terms of `E_t[A(k,t) N_t]`.
    pub fn product_with_population_terms(&self, k: usize, t: f64) -> Result<(f64, f64)> {
        if k < 1 {
            return Err(Error::InvalidParameter("family size must be at least 1".into()));
        }
        self.check_time(t)?;
        let theta = self.params.theta;
        if theta == 0.0 {
            return Ok((0.0, 0.0));
        }
        let wt = self.w(t)?;
        let plan = ExtractionPlan::for_degree(k, self.series_tol)?;
        let (mut first, mut second) = (0.0, 0.0);
        for (a, weight) in self.outer_nodes(t) {
            let wa = self.w(a)?;
            let en = wt / wa;
            let en2 = 2.0 * en * en * (1.0 - 1.0 / en);
            let pk = self.pmf_clonal(k as u64, a)?;
            let full = self.lower_tree(0.0, a)?;
            let m = plan.extract(plan.points().into_iter().map(|v| full.weighted(v)).collect(), k)[k];
            first += weight * theta * en2 * wa * pk;
            second += weight * theta * en * m;
        }
        Ok((first, second))
    }

    /// `E_t[A(k,t) N_t]`.
    pub fn product_with_population(&self, k: usize, t: f64) -> Result<f64> {
        let (a, b) = self.product_with_population_terms(k, t)?;
        Ok(a + b)
    }

    fn require_supercritical(&self) -> Result<()> {
        if self.grid_w.growth_rate() <= 0.0 {
            return Err(Error::Domain("requires supercritical parameters (alpha > 0)".into()));
        }
        Ok(())
    }

    /// `c_1..c_K` with truncation error below `tol`.
    pub fn clonal_constants(&self, k_max: usize, tol: f64) -> Result<ClonalConstants> {
        clonal_constants(&self.params, k_max, tol)
    }

    /// Leading-order `E_t[prod_i (A(k_i))_{n_i}]`: `W(t)^{|n|} |n|! / prod n_i! prod c_{k_i}^{n_i}`.
    pub fn asymptotic_factorial_moment(&self, ks: &[usize], ns: &[u32], t: f64) -> Result<f64> {
        self.require_supercritical()?;
        if ks.len() != ns.len() || ks.is_empty() || ns.contains(&0) || ks.contains(&0) {
            return Err(Error::InvalidParameter("need matching non-empty positive ks and ns".into()));
        }
        let c = self.clonal_constants(*ks.iter().max().unwrap(), 1e-10)?;
        let total: u32 = ns.iter().sum();
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        let mut v = self.grid_w.eval(t)?.powi(total as i32) * fact(total);
        for (&k, &n) in ks.iter().zip(ns) {
            v *= c.get(k).powi(n as i32) / fact(n);
        }
        Ok(v)
    }

    /// Limit descriptor: `e^{-alpha t} A(k,t) -> E c_k / psi'(alpha)` with `E ~ Exp(1)`.
    pub fn lln_descriptor(&self, k_max: usize) -> Result<LlnDescriptor> {
        self.require_supercritical()?;
        if self.params.theta <= 0.0 {
            return Err(Error::Domain("requires a positive mutation rate".into()));
        }
        let alpha = self.grid_w.growth_rate();
        let dpsi = self.grid_w.psi_prime_growth();
        let c = self.clonal_constants(k_max, 1e-10)?;
        Ok(LlnDescriptor {
            alpha,
            psi_prime_alpha: dpsi,
            scaled_constants: c.values.iter().map(|c| c / dpsi).collect(),
            weighted_sum: c.weighted_sum() / dpsi,
        })
    }
}

/// `E[N (N-1) ... (N-r+1)] = r! (1-p)^{r-1} / p^r` for `N` geometric on `{1, 2, ...}`.
pub fn geometric_factorial_moment(p: f64, r: u32) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!("geometric parameter must be in (0,1], got {p}")));
    }
    if r < 1 {
        return Err(Error::InvalidParameter("order must be at least 1".into()));
    }
    let fact: f64 = (1..=r).map(f64::from).product();
    Ok(fact * (1.0 - p).powi(r as i32 - 1) / p.powi(r as i32))
}
