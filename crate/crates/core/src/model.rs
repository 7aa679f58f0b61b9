//! Model parameters, lifespan laws and the Laplace exponents of the contour process.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

/// Law of the lifetime `V` of an individual, supported on `(0, inf]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LifespanDistribution {
    /// `V ~ Exp(rate)`; with constant birth rate this is the linear birth-death process.
    Exponential { rate: f64 },
    /// `V = value` almost surely.
    Deterministic { value: f64 },
    /// `V ~ Uniform(lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// `V = inf`; the population is a Yule process.
    Immortal,
}

// Below this value of x * hi the uniform transforms switch to Taylor series.
const UNIFORM_SERIES_CUTOFF: f64 = 1e-3;

impl LifespanDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Exponential { rate } => rate.is_finite() && rate > 0.0,
            Self::Deterministic { value } => value.is_finite() && value > 0.0,
            Self::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi > lo,
            Self::Immortal => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid lifespan {self}")))
        }
    }

    /// `P(V > s)`.
    pub fn survival(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 1.0;
        }
        match *self {
            Self::Exponential { rate } => (-rate * s).exp(),
            Self::Deterministic { value } => {
                if s < value {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Uniform { lo, hi } => {
                if s <= lo {
                    1.0
                } else if s >= hi {
                    0.0
                } else {
                    (hi - s) / (hi - lo)
                }
            }
            Self::Immortal => 1.0,
        }
    }

    /// Mean of the left and right limits of the survival function at `s`.
    ///
    /// Equal to [`survival`](Self::survival) except at an atom of `V`, where
    /// trapezoidal rules need the midpoint value to stay second order.
    pub fn survival_midpoint(&self, s: f64) -> f64 {
        match *self {
            Self::Deterministic { value } if s > 0.0 && s == value => 0.5,
            _ => self.survival(s),
        }
    }

    /// `E[exp(-x V)]`, with the convention `exp(-x * inf) = 0` for `x > 0`.
    pub fn laplace(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 1.0;
        }
        match *self {
            Self::Exponential { rate } => rate / (rate + x),
            Self::Deterministic { value } => (-x * value).exp(),
            Self::Uniform { lo, hi } => {
                if x * hi < UNIFORM_SERIES_CUTOFF {
                    let (m1, m2, m3) = (
                        uniform_moment(lo, hi, 1),
                        uniform_moment(lo, hi, 2),
                        uniform_moment(lo, hi, 3),
                    );
                    1.0 - x * m1 + x * x * m2 / 2.0 - x * x * x * m3 / 6.0
                } else {
                    ((-x * lo).exp() - (-x * hi).exp()) / (x * (hi - lo))
                }
            }
            Self::Immortal => 0.0,
        }
    }

    /// `E[V exp(-x V)]`, i.e. minus the derivative of [`laplace`](Self::laplace).
    ///
    /// Returns `inf` for the immortal law at `x = 0`.
    pub fn laplace_weighted_mean(&self, x: f64) -> f64 {
        match *self {
            Self::Exponential { rate } => rate / ((rate + x) * (rate + x)),
            Self::Deterministic { value } => value * (-x * value).exp(),
            Self::Uniform { lo, hi } => {
                if x * hi < UNIFORM_SERIES_CUTOFF {
                    let (m1, m2, m3) = (
                        uniform_moment(lo, hi, 1),
                        uniform_moment(lo, hi, 2),
                        uniform_moment(lo, hi, 3),
                    );
                    m1 - x * m2 + x * x * m3 / 2.0
                } else {
                    let (el, eh) = ((-x * lo).exp(), (-x * hi).exp());
                    ((lo * el - hi * eh) / x + (el - eh) / (x * x)) / (hi - lo)
                }
            }
            Self::Immortal => {
                if x > 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Deterministic { value } => value,
            Self::Uniform { lo, hi } => 0.5 * (lo + hi),
            Self::Immortal => f64::INFINITY,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Exponential { rate } => {
                let e: f64 = rng.sample(Exp1);
                e / rate
            }
            Self::Deterministic { value } => value,
            Self::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Self::Immortal => f64::INFINITY,
        }
    }
}

fn uniform_moment(lo: f64, hi: f64, n: i32) -> f64 {
    (hi.powi(n + 1) - lo.powi(n + 1)) / (f64::from(n + 1) * (hi - lo))
}

impl fmt::Display for LifespanDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Exponential { rate } => write!(f, "exp:{rate}"),
            Self::Deterministic { value } => write!(f, "fixed:{value}"),
            Self::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
            Self::Immortal => write!(f, "immortal"),
        }
    }
}

impl FromStr for LifespanDistribution {
    type Err = Error;

    /// Parses `exp:<d>`, `fixed:<v>`, `uniform:<lo>,<hi>` or `immortal`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |x: &str| -> Result<f64> {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number {x:?} in lifespan {s:?}")))
        };
        let dist = match s.split_once(':') {
            None if s == "immortal" => Self::Immortal,
            Some(("exp", d)) => Self::Exponential { rate: num(d)? },
            Some(("fixed", v)) => Self::Deterministic { value: num(v)? },
            Some(("uniform", rest)) => {
                let (lo, hi) = rest
                    .split_once(',')
                    .ok_or_else(|| Error::Parse(format!("uniform lifespan needs lo,hi: {s:?}")))?;
                Self::Uniform { lo: num(lo)?, hi: num(hi)? }
            }
            _ => return Err(Error::Parse(format!("unknown lifespan {s:?}"))),
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// Birth rate `b`, mutation rate `theta` and lifespan law; `Lambda = b P_V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub b: f64,
    pub theta: f64,
    pub lifespan: LifespanDistribution,
}

impl ModelParams {
    pub fn new(b: f64, theta: f64, lifespan: LifespanDistribution) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidParameter(format!("birth rate must be > 0, got {b}")));
        }
        if !(theta.is_finite() && theta >= 0.0) {
            return Err(Error::InvalidParameter(format!("mutation rate must be >= 0, got {theta}")));
        }
        lifespan.validate()?;
        Ok(Self { b, theta, lifespan })
    }

    /// Same model with a different mutation rate.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::new(self.b, theta, self.lifespan)
    }

    /// Mean offspring number `b E[V]`; the tree is supercritical iff it exceeds 1.
    pub fn mean_offspring(&self) -> f64 {
        self.b * self.lifespan.mean()
    }

    /// `psi(x) = x - b (1 - E[exp(-x V)])`.
    pub fn psi(&self, x: f64) -> f64 {
        x - self.b * (1.0 - self.lifespan.laplace(x))
    }

    /// `psi'(x) = 1 - b E[V exp(-x V)]`.
    pub fn psi_derivative(&self, x: f64) -> f64 {
        match self.lifespan {
            LifespanDistribution::Immortal => 1.0,
            _ => 1.0 - self.b * self.lifespan.laplace_weighted_mean(x),
        }
    }

    /// Laplace exponent of the clonal tree, `x psi(x + theta) / (x + theta)`.
    pub fn psi_theta(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        x * self.psi(x + self.theta) / (x + self.theta)
    }

    pub fn psi_theta_derivative(&self, x: f64) -> f64 {
        let y = x + self.theta;
        if y == 0.0 {
            // theta = 0 and x = 0: psi_theta = psi
            return self.psi_derivative(0.0);
        }
        let p = self.psi(y);
        p / y + x * self.psi_derivative(y) / y - x * p / (y * y)
    }

    /// Largest root of `psi` on `[0, inf)`; zero unless supercritical.
    pub fn malthusian_alpha(&self) -> f64 {
        if self.mean_offspring() <= 1.0 {
            return 0.0;
        }
        let mut lo = 1e-9;
        let mut hi = 1.0;
        while self.psi(hi) <= 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        // psi is convex with psi(0) = 0 and psi'(0) < 0, so psi < 0 on (0, alpha).
        while hi - lo > 1e-12 * hi {
            let mid = 0.5 * (lo + hi);
            if self.psi(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Malthusian parameter of the clonal tree, `max(alpha - theta, 0)`.
    pub fn clonal_alpha(&self) -> f64 {
        (self.malthusian_alpha() - self.theta).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bd(b: f64, d: f64, theta: f64) -> ModelParams {
        ModelParams::new(b, theta, LifespanDistribution::Exponential { rate: d }).unwrap()
    }

    #[test]
    fn survival_examples() {
        let e = LifespanDistribution::Exponential { rate: 1.0 };
        assert_eq!(e.survival(0.0), 1.0);
        assert!((e.survival(1.0) - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert_eq!(LifespanDistribution::Immortal.survival(100.0), 1.0);
        let u = LifespanDistribution::Uniform { lo: 1.0, hi: 3.0 };
        assert_eq!(u.survival(0.5), 1.0);
        assert_eq!(u.survival(2.0), 0.5);
        assert_eq!(u.survival(3.0), 0.0);
        let d = LifespanDistribution::Deterministic { value: 2.0 };
        assert_eq!(d.survival(1.999), 1.0);
        assert_eq!(d.survival(2.0), 0.0);
        assert_eq!(d.survival_midpoint(2.0), 0.5);
    }

    #[test]
    fn laplace_examples() {
        for d in [
            LifespanDistribution::Exponential { rate: 1.0 },
            LifespanDistribution::Deterministic { value: 2.0 },
            LifespanDistribution::Uniform { lo: 0.0, hi: 2.0 },
        ] {
            assert_eq!(d.laplace(0.0), 1.0);
        }
        assert_eq!(LifespanDistribution::Exponential { rate: 1.0 }.laplace(1.0), 0.5);
        let det = LifespanDistribution::Deterministic { value: 2.0 }.laplace(0.5);
        assert!((det - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(LifespanDistribution::Immortal.laplace(0.3), 0.0);
    }

    #[test]
    fn uniform_laplace_is_continuous_across_series_cutoff() {
        let u = LifespanDistribution::Uniform { lo: 0.5, hi: 2.0 };
        let below = UNIFORM_SERIES_CUTOFF / 2.0 * (1.0 - 1e-9);
        let above = UNIFORM_SERIES_CUTOFF / 2.0 * (1.0 + 1e-9);
        assert!((u.laplace(below) - u.laplace(above)).abs() < 1e-10);
        assert!((u.laplace_weighted_mean(below) - u.laplace_weighted_mean(above)).abs() < 1e-8);
    }

    #[test]
    fn psi_examples() {
        let p = bd(2.0, 1.0, 0.0);
        assert_eq!(p.psi(0.0), 0.0);
        assert!((p.psi(3.0) - 1.5).abs() < 1e-14);
        let yule = ModelParams::new(1.0, 0.0, LifespanDistribution::Immortal).unwrap();
        assert!((yule.psi(2.0) - 1.0).abs() < 1e-15);
        assert_eq!(yule.psi_derivative(0.7), 1.0);
    }

    #[test]
    fn psi_theta_examples() {
        let p = bd(2.0, 1.0, 0.5);
        assert!((p.psi_theta(1.0) - 0.2).abs() < 1e-14);
        assert_eq!(p.psi_theta(0.0), 0.0);
        let p0 = bd(2.0, 1.0, 0.0);
        for x in [0.1, 1.0, 4.0] {
            assert!((p0.psi_theta(x) - p0.psi(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn alpha_examples() {
        assert!((bd(2.0, 1.0, 0.0).malthusian_alpha() - 1.0).abs() < 1e-11);
        let yule = ModelParams::new(1.0, 0.0, LifespanDistribution::Immortal).unwrap();
        assert!((yule.malthusian_alpha() - 1.0).abs() < 1e-11);
        assert_eq!(bd(0.5, 1.0, 0.0).malthusian_alpha(), 0.0);
    }

    #[test]
    fn psi_derivative_examples() {
        let p = bd(2.0, 1.0, 0.0);
        assert!((p.psi_derivative(1.0) - 0.5).abs() < 1e-14);
        assert!((p.psi_derivative(0.0) - (1.0 - p.mean_offspring())).abs() < 1e-14);
    }

    #[test]
    fn psi_theta_matches_min_lifespan_for_fixed_lifetime() {
        // V_theta = min(v, Exp(theta)) has an explicit Laplace transform.
        let (b, v, theta) = (2.0, 1.0, 0.7);
        let p = ModelParams::new(b, theta, LifespanDistribution::Deterministic { value: v }).unwrap();
        for x in [0.1, 0.5, 2.0, 7.0] {
            let y = x + theta;
            let lap = theta * (1.0 - (-y * v).exp()) / y + (-y * v).exp();
            let direct = x - b * (1.0 - lap);
            assert!((p.psi_theta(x) - direct).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn parse_round_trip() {
        for s in ["exp:1", "fixed:2.5", "uniform:0.5,3", "immortal"] {
            let d: LifespanDistribution = s.parse().unwrap();
            let again: LifespanDistribution = d.to_string().parse().unwrap();
            assert_eq!(d, again);
        }
        assert!("exp:-1".parse::<LifespanDistribution>().is_err());
        assert!("uniform:2,1".parse::<LifespanDistribution>().is_err());
        assert!("gamma:1".parse::<LifespanDistribution>().is_err());
    }

    #[test]
    fn samplers_match_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [
            LifespanDistribution::Exponential { rate: 2.0 },
            LifespanDistribution::Uniform { lo: 1.0, hi: 2.0 },
            LifespanDistribution::Deterministic { value: 0.3 },
        ] {
            let n = 200_000;
            let m: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
            assert!((m - d.mean()).abs() < 0.01, "{d}: {m}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn lifespan() -> impl Strategy<Value = LifespanDistribution> {
            prop_oneof![
                (0.1f64..5.0).prop_map(|rate| LifespanDistribution::Exponential { rate }),
                (0.1f64..5.0).prop_map(|value| LifespanDistribution::Deterministic { value }),
                (0.0f64..2.0, 0.1f64..3.0)
                    .prop_map(|(lo, w)| LifespanDistribution::Uniform { lo, hi: lo + w }),
            ]
        }

        proptest! {
            #[test]
            fn clonal_exponent_identity(b in 0.2f64..5.0, theta in 0.0f64..3.0,
                                        d in lifespan(), x in 0.0f64..20.0) {
                let p = ModelParams::new(b, theta, d).unwrap();
                let lhs = p.psi_theta(x) * (x + theta);
                let rhs = x * p.psi(x + theta);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
            }

            #[test]
            fn alpha_is_a_root(b in 1.1f64..6.0, d in lifespan()) {
                let p = ModelParams::new(b, 0.0, d).unwrap();
                let a = p.malthusian_alpha();
                if p.mean_offspring() > 1.0 {
                    prop_assert!(a > 0.0);
                    prop_assert!(p.psi(a).abs() < 1e-10);
                } else {
                    prop_assert_eq!(a, 0.0);
                }
            }

            #[test]
            fn derivative_matches_finite_differences(b in 0.2f64..5.0, d in lifespan(),
                                                     x in 0.1f64..10.0) {
                let p = ModelParams::new(b, 0.0, d).unwrap();
                let eps = 1e-5 * x;
                let fd = (p.psi(x + eps) - p.psi(x - eps)) / (2.0 * eps);
                let an = p.psi_derivative(x);
                prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0));
            }

            #[test]
            fn survival_is_monotone(d in lifespan(), s in 0.0f64..10.0, ds in 0.0f64..3.0) {
                let a = d.survival(s);
                let c = d.survival(s + ds);
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!(c <= a);
            }
        }
    }
}
