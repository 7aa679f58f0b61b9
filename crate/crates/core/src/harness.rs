//! Validation battery, convergence study and CSV reports.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::cpp::{BranchLaw, CppSampler, SpectrumSample};
use crate::error::{Error, Result};
use crate::forward::{infinite_descent_counts, simulate_forward, DescentOutcome, ForwardOutcome};
use crate::mc::{fold, Histogram, IntMoments, Merge};
use crate::model::ModelParams;
use crate::moments::MomentContext;
use crate::scale::{clonal_constants, survival_prob, ScaleGrid};
use crate::stats::{chi_square_two_sample, gof_geometric, gof_pmf, ks_one_sample, welch_z};

pub const Z_LIMIT: f64 = 4.0;
pub const P_LIMIT: f64 = 0.001;
pub const TV_LIMIT: f64 = 0.02;
/// Fewest lower-tree samples behind a total variation check; the empirical
/// distance is biased upward at small sample sizes.
pub const TV_MIN_SAMPLES: u64 = 100_000;

/// Every check run by [`run_validation`], in order.
pub const CHECKS: [&str; 9] =
    ["geometric", "clonal", "means", "mixed", "second", "product", "joint", "forward", "limits"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Z(f64),
    P(f64),
    /// Total variation distance.
    Tv(f64),
    /// Informational row, never fails.
    Info,
    /// Dry-run row.
    Planned,
}

impl Score {
    fn kind(&self) -> &'static str {
        match self {
            Score::Z(_) => "z",
            Score::P(_) => "p",
            Score::Tv(_) => "tv",
            Score::Info => "info",
            Score::Planned => "planned",
        }
    }

    fn value(&self) -> Option<f64> {
        match *self {
            Score::Z(x) | Score::P(x) | Score::Tv(x) => Some(x),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub quantity: String,
    pub theory: Option<f64>,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub score: Score,
    pub reps: u64,
}

impl ComparisonReport {
    pub fn passed(&self) -> bool {
        match self.score {
            Score::Z(z) => z.abs() < Z_LIMIT,
            Score::P(p) => p > P_LIMIT,
            Score::Tv(d) => d < TV_LIMIT,
            Score::Info | Score::Planned => true,
        }
    }

    fn z(quantity: String, theory: f64, m: &IntMoments, scale: f64) -> Self {
        let (est, se) = (m.mean() * scale, m.se() * scale);
        Self { quantity, theory: Some(theory), estimate: Some(est), se: Some(se), score: Score::Z(welch_z(est, se, theory)), reps: m.count }
    }

    fn p(quantity: String, p: f64, reps: u64) -> Self {
        Self { quantity, theory: None, estimate: None, se: None, score: Score::P(p), reps }
    }
}

pub const REPORT_HEADER: &str = "quantity,theory,estimate,se,kind,score,reps,pass";

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

pub fn reports_to_csv(rows: &[ComparisonReport]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.quantity,
            opt(r.theory),
            opt(r.estimate),
            opt(r.se),
            r.score.kind(),
            opt(r.score.value()),
            r.reps,
            r.passed()
        );
    }
    s
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| Error::Parse(format!("bad number {field:?}")))
}

pub fn reports_from_csv(text: &str) -> Result<Vec<ComparisonReport>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::Parse("missing report header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Parse(format!("expected 8 fields: {line:?}")));
            }
            let value = parse_opt(f[5])?;
            let need = || value.ok_or_else(|| Error::Parse(format!("missing score: {line:?}")));
            let score = match f[4] {
                "z" => Score::Z(need()?),
                "p" => Score::P(need()?),
                "tv" => Score::Tv(need()?),
                "info" => Score::Info,
                "planned" => Score::Planned,
                other => return Err(Error::Parse(format!("unknown kind {other:?}"))),
            };
            let row = ComparisonReport {
                quantity: f[0].to_string(),
                theory: parse_opt(f[1])?,
                estimate: parse_opt(f[2])?,
                se: parse_opt(f[3])?,
                score,
                reps: f[6].parse().map_err(|_| Error::Parse(format!("bad reps {:?}", f[6])))?,
            };
            if f[7] != row.passed().to_string() {
                return Err(Error::Parse(format!("pass column disagrees with score: {line:?}")));
            }
            Ok(row)
        })
        .collect()
}

/// Writes `header` and `rows` as CSV, creating parent directories.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Growable vector of moments merged elementwise.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MomentVec(pub Vec<IntMoments>);

impl MomentVec {
    #[inline]
    pub fn push(&mut self, i: usize, x: i64) {
        if i >= self.0.len() {
            self.0.resize(i + 1, IntMoments::default());
        }
        self.0[i].push(x);
    }

    pub fn get(&self, i: usize) -> IntMoments {
        self.0.get(i).copied().unwrap_or_default()
    }
}

impl Merge for MomentVec {
    fn merge(&mut self, other: Self) {
        if other.0.len() > self.0.len() {
            self.0.resize(other.0.len(), IntMoments::default());
        }
        for (a, b) in self.0.iter_mut().zip(other.0) {
            a.merge(b);
        }
    }
}

impl Merge for u64 {
    fn merge(&mut self, other: Self) {
        *self += other;
    }
}

/// Largest family size used in mixed and second-order statistics.
pub const PAIR_MAX: usize = 2;

/// Statistics of CPP spectra under `P_t`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpectrumStats {
    pub n_hist: Histogram,
    pub z0_hist: Histogram,
    pub n: IntMoments,
    /// `A(k)` at index `k - 1`.
    pub a: MomentVec,
    /// `A(k) 1_{Z0 = l}` at `(k - 1) * PAIR_MAX + l - 1`.
    pub mixed: MomentVec,
    /// `A(k) A(l)` for `k < l`, `A(k)(A(k) - 1)` for `k = l`, same indexing.
    pub second: MomentVec,
    /// `A(k) N` at index `k - 1`.
    pub product: MomentVec,
}

impl SpectrumStats {
    pub fn record(&mut self, s: &SpectrumSample, k_max: usize) {
        assert!(s.is_conservative(), "spectrum violates conservation");
        self.n_hist.push(s.n);
        self.z0_hist.push(s.z0);
        self.n.push(s.n as i64);
        let a: Vec<i64> = (1..=k_max.max(PAIR_MAX)).map(|k| s.a(k as u64) as i64).collect();
        for k in 1..=k_max {
            self.a.push(k - 1, a[k - 1]);
            self.product.push(k - 1, a[k - 1] * s.n as i64);
        }
        for k in 1..=PAIR_MAX {
            for l in 1..=PAIR_MAX {
                let idx = (k - 1) * PAIR_MAX + l - 1;
                self.mixed.push(idx, if s.z0 == l as u64 { a[k - 1] } else { 0 });
                if k <= l {
                    let second = if k == l { a[k - 1] * (a[k - 1] - 1) } else { a[k - 1] * a[l - 1] };
                    self.second.push(idx, second);
                }
            }
        }
    }
}

impl Merge for SpectrumStats {
    fn merge(&mut self, o: Self) {
        self.n_hist.merge(o.n_hist);
        self.z0_hist.merge(o.z0_hist);
        self.n.merge(o.n);
        self.a.merge(o.a);
        self.mixed.merge(o.mixed);
        self.second.merge(o.second);
        self.product.merge(o.product);
    }
}

/// Samples `reps` CPP spectra at time `t`.
pub fn cpp_spectrum_stats(
    grid: &ScaleGrid,
    theta: f64,
    t: f64,
    k_max: usize,
    seed: u64,
    reps: u64,
    threads: usize,
) -> Result<SpectrumStats> {
    let law = BranchLaw::new(grid, 0.0, t)?;
    fold(seed, reps, threads, |acc: &mut SpectrumStats, rng, _| {
        let s = CppSampler::new().spectrum(&law, theta, rng);
        acc.record(&s, k_max);
    })
}

/// Forward runs: outcome counts and spectra of the surviving ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForwardStats {
    pub survived: u64,
    pub extinct: u64,
    pub overflow: u64,
    pub spectra: SpectrumStats,
}

impl Merge for ForwardStats {
    fn merge(&mut self, o: Self) {
        self.survived += o.survived;
        self.extinct += o.extinct;
        self.overflow += o.overflow;
        self.spectra.merge(o.spectra);
    }
}

#[allow(clippy::too_many_arguments)]
pub fn forward_stats(
    params: &ModelParams,
    t: f64,
    cap: u64,
    k_max: usize,
    seed: u64,
    reps: u64,
    threads: usize,
) -> Result<ForwardStats> {
    let failure = std::sync::Mutex::new(None);
    let stats = fold(seed, reps, threads, |acc: &mut ForwardStats, rng, _| {
        match simulate_forward(params, t, cap, rng) {
            Ok(ForwardOutcome::Survived(s)) => {
                acc.survived += 1;
                acc.spectra.record(&s, k_max);
            }
            Ok(ForwardOutcome::Extinct) => acc.extinct += 1,
            Ok(ForwardOutcome::Overflow) => acc.overflow += 1,
            Err(e) => *failure.lock().unwrap() = Some(e),
        }
    })?;
    match failure.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(stats),
    }
}

/// Descent counts at checkpoints over many forward runs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DescentStats {
    /// Runs with someone alive at the horizon.
    pub survived: u64,
    pub overflow: u64,
    /// `N^{(T)}_t` histograms among runs surviving to `T`, per checkpoint.
    pub descending: Vec<Histogram>,
    /// `N_t` among runs alive at `t`, per checkpoint.
    pub alive: MomentVec,
    /// Per checkpoint, `N^{(T)}_t` in replica order among runs surviving to `T`.
    pub descending_samples: Vec<Vec<u64>>,
    /// Per checkpoint, `(N^{(T)}_t - c N_t)` pieces: sums of `N^2`, `N N^{(T)}`, `N^{(T)}^2` on `P_t`.
    pub alive_sq: MomentVec,
    pub cross: MomentVec,
    pub descending_on_alive: MomentVec,
}

impl Merge for DescentStats {
    fn merge(&mut self, o: Self) {
        self.survived += o.survived;
        self.overflow += o.overflow;
        if o.descending.len() > self.descending.len() {
            self.descending.resize(o.descending.len(), Histogram::default());
            self.descending_samples.resize(o.descending.len(), Vec::new());
        }
        for (a, b) in self.descending.iter_mut().zip(o.descending) {
            a.merge(b);
        }
        for (a, b) in self.descending_samples.iter_mut().zip(o.descending_samples) {
            a.merge(b);
        }
        self.alive.merge(o.alive);
        self.alive_sq.merge(o.alive_sq);
        self.cross.merge(o.cross);
        self.descending_on_alive.merge(o.descending_on_alive);
    }
}

#[allow(clippy::too_many_arguments)]
pub fn descent_stats(
    params: &ModelParams,
    checkpoints: &[f64],
    horizon: f64,
    cap: u64,
    seed: u64,
    reps: u64,
    threads: usize,
) -> Result<DescentStats> {
    let failure = std::sync::Mutex::new(None);
    let stats = fold(seed, reps, threads, |acc: &mut DescentStats, rng, _| {
        let c = match infinite_descent_counts(params, checkpoints, horizon, cap, rng) {
            Ok(DescentOutcome::Counted(c)) => c,
            Ok(DescentOutcome::Overflow) => {
                acc.overflow += 1;
                return;
            }
            Err(e) => {
                *failure.lock().unwrap() = Some(e);
                return;
            }
        };
        if acc.descending.len() < checkpoints.len() {
            acc.descending.resize(checkpoints.len(), Histogram::default());
            acc.descending_samples.resize(checkpoints.len(), Vec::new());
        }
        if c.survives {
            acc.survived += 1;
            for (j, &d) in c.descending.iter().enumerate() {
                acc.descending[j].push(d);
                acc.descending_samples[j].push(d);
            }
        }
        for (j, (&n, &d)) in c.alive.iter().zip(&c.descending).enumerate() {
            if n > 0 {
                let (n, d) = (n as i64, d as i64);
                acc.alive.push(j, n);
                acc.alive_sq.push(j, n * n);
                acc.cross.push(j, n * d);
                acc.descending_on_alive.push(j, d * d);
            }
        }
    })?;
    match failure.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(stats),
    }
}

/// Probability of non-extinction, `alpha / b`.
pub fn non_extinction_prob(params: &ModelParams) -> f64 {
    params.malthusian_alpha() / params.b
}

fn sub_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label(t: f64) -> String {
    format!("t={t}")
}

/// Runs the configured checks; deterministic given the configuration.
#[allow(clippy::needless_range_loop)]
pub fn run_validation(cfg: &ExperimentConfig) -> Result<Vec<ComparisonReport>> {
    cfg.validate()?;
    if let Some(bad) = cfg.checks.iter().find(|c| !CHECKS.contains(&c.as_str())) {
        return Err(Error::Config(format!("unknown check {bad:?}")));
    }
    let params = cfg.params()?;
    let mut rows = Vec::new();
    if cfg.reps == 0 {
        for &t in &cfg.times {
            for check in CHECKS.iter().filter(|c| cfg.wants(c)) {
                rows.push(ComparisonReport {
                    quantity: format!("{check}[{}]", label(t)),
                    theory: None,
                    estimate: None,
                    se: None,
                    score: Score::Planned,
                    reps: 0,
                });
            }
        }
        return Ok(rows);
    }
    let ctx = MomentContext::new(params, cfg.grid_step, cfg.grid_horizon())?
        .with_quadrature_nodes(cfg.quadrature_nodes)?;
    for (ti, &t) in cfg.times.iter().enumerate() {
        let seed = |tag: u64| sub_seed(cfg.seed, 16 * ti as u64 + tag);
        let named = |check: &str, e: Error| Error::Config(format!("check {check} at {}: {e}", label(t)));
        let needs_cpp = ["geometric", "clonal", "means", "mixed", "second", "product", "forward"]
            .iter()
            .any(|c| cfg.wants(c));
        let cpp = if needs_cpp {
            Some(cpp_spectrum_stats(ctx.grid_w(), params.theta, t, cfg.k_max, seed(0), cfg.reps, cfg.threads)?)
        } else {
            None
        };
        let lt = label(t);
        if let Some(st) = &cpp {
            if cfg.wants("geometric") {
                let p = 1.0 / ctx.grid_w().eval(t)?;
                let pv = gof_geometric(&st.n_hist.samples(), p).map_err(|e| named("geometric", e))?;
                rows.push(ComparisonReport::p(format!("cpp.N.geometric[{lt}]"), pv, cfg.reps));
            }
            if cfg.wants("clonal") {
                let out = gof_pmf(&st.z0_hist.samples(), |k| ctx.pmf_clonal(k, t).unwrap_or(0.0))
                    .map_err(|e| named("clonal", e))?;
                rows.push(ComparisonReport::p(format!("cpp.Z0.clonal[{lt}]"), out.p_value, cfg.reps));
            }
            if cfg.wants("means") {
                let th = ctx.mean_spectrum_row(cfg.k_max, t).map_err(|e| named("means", e))?;
                for k in 1..=cfg.k_max {
                    rows.push(ComparisonReport::z(format!("mean.A({k})[{lt}]"), th[k - 1], &st.a.get(k - 1), 1.0));
                }
            }
            if cfg.wants("mixed") {
                for k in 1..=PAIR_MAX {
                    let th = ctx.mixed_mean_row(k, PAIR_MAX, t).map_err(|e| named("mixed", e))?;
                    for l in 1..=PAIR_MAX {
                        let m = st.mixed.get((k - 1) * PAIR_MAX + l - 1);
                        rows.push(ComparisonReport::z(format!("mixed.A({k})1{{Z0={l}}}[{lt}]"), th[l], &m, 1.0));
                    }
                }
            }
            if cfg.wants("second") {
                let th = ctx.second_order_matrix(PAIR_MAX, t).map_err(|e| named("second", e))?;
                for k in 1..=PAIR_MAX {
                    for l in k..=PAIR_MAX {
                        let name = if k == l { format!("second.A({k})(A({k})-1)[{lt}]") } else { format!("second.A({k})A({l})[{lt}]") };
                        let m = st.second.get((k - 1) * PAIR_MAX + l - 1);
                        rows.push(ComparisonReport::z(name, th[k - 1][l - 1], &m, 1.0));
                    }
                }
            }
            if cfg.wants("product") {
                for k in 1..=PAIR_MAX.min(cfg.k_max) {
                    let th = ctx.product_with_population(k, t).map_err(|e| named("product", e))?;
                    rows.push(ComparisonReport::z(format!("product.A({k})N[{lt}]"), th, &st.product.get(k - 1), 1.0));
                }
            }
        }
        if cfg.wants("joint") {
            let a = 0.5 * t;
            let table = ctx.joint_pmf(a, t).map_err(|e| named("joint", e))?;
            let law = BranchLaw::new(ctx.grid_w(), a, t - a)?;
            let reps = cfg.reps.max(TV_MIN_SAMPLES);
            let samples: Vec<(u64, u64)> = fold(seed(1), reps, cfg.threads, |acc: &mut Vec<(u64, u64)>, rng, _| {
                let s = CppSampler::new().spectrum(&law, params.theta, rng);
                acc.push((s.n, s.z0));
            })?;
            rows.push(ComparisonReport {
                quantity: format!("joint.tv[a={a};{lt}]"),
                theory: None,
                estimate: None,
                se: None,
                score: Score::Tv(table.total_variation(&samples)),
                reps,
            });
        }
        if cfg.wants("forward") {
            let fw = forward_stats(&params, t, cfg.cap, cfg.k_max, seed(2), cfg.reps, cfg.threads)
                .map_err(|e| named("forward", e))?;
            let runs = fw.survived + fw.extinct;
            let ps = survival_prob(&params, ctx.grid_w(), t)?;
            let frac = fw.survived as f64 / runs as f64;
            let se = (ps * (1.0 - ps) / runs as f64).sqrt();
            rows.push(ComparisonReport {
                quantity: format!("forward.survival[{lt}]"),
                theory: Some(ps),
                estimate: Some(frac),
                se: Some(se),
                score: Score::Z(welch_z(frac, se, ps)),
                reps: runs,
            });
            rows.push(ComparisonReport {
                quantity: format!("forward.overflow[{lt}]"),
                theory: None,
                estimate: Some(fw.overflow as f64),
                se: None,
                score: Score::Info,
                reps: cfg.reps,
            });
            let survivors = fw.spectra.n_hist.samples();
            let p = 1.0 / ctx.grid_w().eval(t)?;
            let pv = gof_geometric(&survivors, p).map_err(|e| named("forward", e))?;
            rows.push(ComparisonReport::p(format!("forward.N.geometric[{lt}]"), pv, fw.survived));
            if let Some(st) = &cpp {
                let two = chi_square_two_sample(&survivors, &st.n_hist.samples()).map_err(|e| named("forward", e))?;
                rows.push(ComparisonReport::p(format!("forward.vs.cpp.N[{lt}]"), two.p_value, fw.survived));
            }
            let th = ctx.mean_spectrum_row(cfg.k_max, t)?;
            for k in 1..=cfg.k_max.min(4) {
                rows.push(ComparisonReport::z(format!("forward.mean.A({k})[{lt}]"), th[k - 1], &fw.spectra.a.get(k - 1), 1.0));
            }
        }
        if cfg.wants("limits") {
            let alpha = params.malthusian_alpha();
            if alpha > 0.0 {
                let horizon = t + (5.0 / alpha).ceil();
                let gw = ScaleGrid::build(&params, cfg.grid_step, horizon, false)?;
                let ds = descent_stats(&params, &[t], horizon, cfg.cap, seed(3), cfg.reps, cfg.threads)
                    .map_err(|e| named("limits", e))?;
                let p = gw.eval(horizon - t)? / gw.eval(horizon)?;
                let pv = gof_geometric(&ds.descending[0].samples(), p).map_err(|e| named("limits", e))?;
                rows.push(ComparisonReport::p(format!("limits.descent.geometric[{lt};T={horizon}]"), pv, ds.survived));
                let scale = (-alpha * t).exp();
                let th = non_extinction_prob(&params) / (params.psi_derivative(alpha) * survival_prob(&params, &gw, t)?);
                rows.push(ComparisonReport::z(format!("limits.scaled.N.mean[{lt}]"), th, &ds.alive.get(0), scale));
            }
        }
    }
    Ok(rows)
}

/// One row of the convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub t: f64,
    pub reps: u64,
    /// Mean and standard error of `e^{-alpha t} N_t` under `P_t`.
    pub scaled_n: f64,
    pub scaled_n_se: f64,
    /// KS distance and p-value of `psi'(alpha) e^{-alpha t} N_t P(N_t>0)/P(Non-ex)` against Exp(1).
    pub ks_statistic: f64,
    pub ks_p: f64,
    /// `e^{-alpha t} E_t[A(k,t)]` estimates, `k = 1..=K`.
    pub scaled_a: Vec<f64>,
    /// `e^{-2 alpha t} E_t[(c_k N_t - A(k,t))^2]` estimates.
    pub l2_error: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ConvergenceStats {
    n: IntMoments,
    samples: Vec<u64>,
    a: MomentVec,
    na: MomentVec,
}

impl Merge for ConvergenceStats {
    fn merge(&mut self, o: Self) {
        self.n.merge(o.n);
        self.samples.merge(o.samples);
        self.a.merge(o.a);
        self.na.merge(o.na);
    }
}

/// Monte Carlo trends across `cfg.ladder` for the large-time limits.
pub fn convergence_study(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceRow>> {
    let params = cfg.params()?;
    let alpha = params.malthusian_alpha();
    if alpha <= 0.0 {
        return Err(Error::Domain("convergence study requires supercritical parameters".into()));
    }
    if cfg.ladder.is_empty() || cfg.ladder.iter().any(|&t| !(t > 0.0)) || cfg.reps < 2 {
        return Err(Error::Config("ladder times must be positive and reps >= 2".into()));
    }
    let k_max = if params.theta > 0.0 { cfg.k_max } else { 0 };
    let constants = if k_max > 0 { Some(clonal_constants(&params, k_max, 1e-10)?) } else { None };
    let t_max = cfg.ladder.iter().copied().fold(0.0, f64::max);
    let grid = ScaleGrid::build(&params, cfg.grid_step, t_max, false)?;
    let dpsi = params.psi_derivative(alpha);
    let non_ex = non_extinction_prob(&params);
    let mut rows = Vec::new();
    for (i, &t) in cfg.ladder.iter().enumerate() {
        let law = BranchLaw::new(&grid, 0.0, t)?;
        let st = fold(sub_seed(cfg.seed, 1000 + i as u64), cfg.reps, cfg.threads, |acc: &mut ConvergenceStats, rng, _| {
            let s = CppSampler::new().spectrum(&law, params.theta, rng);
            acc.n.push(s.n as i64);
            acc.samples.push(s.n);
            for k in 1..=k_max {
                let a = s.a(k as u64) as i64;
                acc.a.push(k - 1, a);
                acc.na.push(k - 1, a * s.n as i64);
            }
        })?;
        let scale = (-alpha * t).exp();
        let surv = survival_prob(&params, &grid, t)?;
        let factor = dpsi * scale * surv / non_ex;
        let x: Vec<f64> = st.samples.iter().map(|&n| n as f64 * factor).collect();
        let ks = ks_one_sample(&x, |v| if v <= 0.0 { 0.0 } else { -(-v).exp_m1() })?;
        let count = st.n.count as f64;
        let mut scaled_a = Vec::new();
        let mut l2_error = Vec::new();
        if let Some(c) = &constants {
            for k in 1..=k_max {
                let a = st.a.get(k - 1);
                let ck = c.get(k);
                scaled_a.push(a.mean() * scale);
                let e = (ck * ck * st.n.sum_sq as f64 - 2.0 * ck * st.na.get(k - 1).sum as f64 + a.sum_sq as f64) / count;
                l2_error.push(e * scale * scale);
            }
        }
        rows.push(ConvergenceRow {
            t,
            reps: cfg.reps,
            scaled_n: st.n.mean() * scale,
            scaled_n_se: st.n.se() * scale,
            ks_statistic: ks.statistic,
            ks_p: ks.p_value,
            scaled_a,
            l2_error,
        });
    }
    Ok(rows)
}

pub fn convergence_to_csv(rows: &[ConvergenceRow]) -> String {
    let k = rows.first().map_or(0, |r| r.scaled_a.len());
    let mut s = String::from("t,reps,scaled_n,scaled_n_se,ks_statistic,ks_p");
    for i in 1..=k {
        let _ = write!(s, ",scaled_a{i}");
    }
    for i in 1..=k {
        let _ = write!(s, ",l2_error{i}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{},{},{},{},{}", r.t, r.reps, r.scaled_n, r.scaled_n_se, r.ks_statistic, r.ks_p);
        for v in r.scaled_a.iter().chain(&r.l2_error) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(score: Score) -> ComparisonReport {
        ComparisonReport { quantity: "x[t=2]".into(), theory: Some(0.1), estimate: Some(1e-7), se: None, score, reps: 10 }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(Score::Z(-1.25)), row(Score::P(3.3e-5)), row(Score::Tv(0.01)), row(Score::Info), row(Score::Planned)];
        let text = reports_to_csv(&rows);
        let back = reports_from_csv(&text).unwrap();
        assert_eq!(back, rows);
        assert_eq!(reports_to_csv(&back), text);
        assert!(reports_from_csv("nope\n").is_err());
    }

    #[test]
    fn pass_rules() {
        assert!(row(Score::Z(3.9)).passed());
        assert!(!row(Score::Z(-4.0)).passed());
        assert!(!row(Score::P(0.001)).passed());
        assert!(row(Score::P(0.0011)).passed());
        assert!(!row(Score::Tv(0.03)).passed());
    }

    #[test]
    fn dry_run_lists_checks() {
        let cfg = ExperimentConfig { reps: 0, ..Default::default() };
        let rows = run_validation(&cfg).unwrap();
        assert_eq!(rows.len(), CHECKS.len());
        assert!(rows.iter().all(|r| r.score == Score::Planned && r.estimate.is_none()));
    }

    #[test]
    fn unknown_check_is_named() {
        let cfg = ExperimentConfig { checks: vec!["bogus".into()], ..Default::default() };
        assert!(matches!(run_validation(&cfg), Err(Error::Config(m)) if m.contains("bogus")));
    }
}
