//! Experiment configuration and the flat `key=value` file format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{LifespanDistribution, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub b: f64,
    pub theta: f64,
    pub lifespan: LifespanDistribution,
    pub times: Vec<f64>,
    /// Zero requests a dry run.
    pub reps: u64,
    pub seed: u64,
    /// Empty means every check.
    pub checks: Vec<String>,
    pub grid_step: f64,
    /// Defaults to 1.5 times the largest requested time.
    pub horizon: Option<f64>,
    pub quadrature_nodes: usize,
    pub k_max: usize,
    pub cap: u64,
    /// 0 uses every available core.
    pub threads: usize,
    pub ladder: Vec<f64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            b: 2.0,
            theta: 0.5,
            lifespan: LifespanDistribution::Exponential { rate: 1.0 },
            times: vec![2.0],
            reps: 200_000,
            seed: 1,
            checks: Vec::new(),
            grid_step: 1e-3,
            horizon: None,
            quadrature_nodes: 400,
            k_max: 6,
            cap: 1_000_000,
            threads: 0,
            ladder: vec![3.0, 5.0, 7.0],
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Sets one key; keys use the long flag names, with `_` accepted for `-`.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim().replace('_', "-").as_str() {
            "b" => self.b = parse(key, value)?,
            "theta" => self.theta = parse(key, value)?,
            "lifespan" => self.lifespan = value.trim().parse()?,
            "t" | "times" => self.times = parse_list(key, value)?,
            "reps" => self.reps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checks" => {
                self.checks = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            }
            "grid-step" => self.grid_step = parse(key, value)?,
            "horizon" => self.horizon = Some(parse(key, value)?),
            "nodes" => self.quadrature_nodes = parse(key, value)?,
            "kmax" => self.k_max = parse(key, value)?,
            "cap" => self.cap = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "ladder" => self.ladder = parse_list(key, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` document on top of `self`; `#` starts a comment.
    pub fn merge_str(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.apply(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_str(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "b={}", self.b);
        let _ = writeln!(s, "theta={}", self.theta);
        let _ = writeln!(s, "lifespan={}", self.lifespan);
        let _ = writeln!(s, "t={}", join(&self.times));
        let _ = writeln!(s, "reps={}", self.reps);
        let _ = writeln!(s, "seed={}", self.seed);
        if !self.checks.is_empty() {
            let _ = writeln!(s, "checks={}", self.checks.join(","));
        }
        let _ = writeln!(s, "grid-step={}", self.grid_step);
        if let Some(h) = self.horizon {
            let _ = writeln!(s, "horizon={h}");
        }
        let _ = writeln!(s, "nodes={}", self.quadrature_nodes);
        let _ = writeln!(s, "kmax={}", self.k_max);
        let _ = writeln!(s, "cap={}", self.cap);
        let _ = writeln!(s, "threads={}", self.threads);
        let _ = writeln!(s, "ladder={}", join(&self.ladder));
        let _ = writeln!(s, "out={}", self.out.display());
        s
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.b, self.theta, self.lifespan)
    }

    pub fn max_time(&self) -> f64 {
        self.times.iter().copied().fold(0.0, f64::max)
    }

    pub fn grid_horizon(&self) -> f64 {
        self.horizon.unwrap_or(1.5 * self.max_time())
    }

    pub fn wants(&self, check: &str) -> bool {
        self.checks.is_empty() || self.checks.iter().any(|c| c == check)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if self.times.is_empty() || self.times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Config("times must be positive and finite".into()));
        }
        if self.max_time() > self.grid_horizon() {
            return Err(Error::Config(format!(
                "time {} beyond grid horizon {}",
                self.max_time(),
                self.grid_horizon()
            )));
        }
        if !(self.grid_step > 0.0 && self.grid_step < self.grid_horizon()) {
            return Err(Error::Config(format!("bad grid step {}", self.grid_step)));
        }
        if self.quadrature_nodes < 2 || self.k_max < 1 || self.cap < 1 {
            return Err(Error::Config("nodes >= 2, kmax >= 1 and cap >= 1 required".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_serialize() {
        let mut c = ExperimentConfig::default();
        c.merge_str("# comment\nb = 3\ntheta=0.25\nlifespan=fixed:1.5\nt=1,2.5\ngrid_step=0.002\nchecks=means,clonal\n")
            .unwrap();
        assert_eq!(c.b, 3.0);
        assert_eq!(c.times, vec![1.0, 2.5]);
        assert_eq!(c.lifespan, LifespanDistribution::Deterministic { value: 1.5 });
        assert!(c.wants("means") && !c.wants("geometric"));
        let mut d = ExperimentConfig::default();
        d.merge_str(&c.to_key_values()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = ExperimentConfig::default();
        assert!(c.merge_str("nonsense").is_err());
        assert!(c.merge_str("colour=red").is_err());
        assert!(c.merge_str("reps=-1").is_err());
        c.horizon = Some(1.0);
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }
}
