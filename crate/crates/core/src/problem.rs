//! Parametrized problem data: admissible box, coefficients and source.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::composite_gauss;

/// Scalar coefficient as a function of the parameter.
pub type CoefficientFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Spatial factor `x ↦ s(x₁, x₂)`.
pub type SpatialFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Parameter factor `μ ↦ β(μ) ∈ R^{p_F}`.
pub type ParameterFactorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// Temporal factor `t ↦ γ(t)`.
pub type TemporalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Continuous source `(t, μ, x₁, x₂) ↦ f(t; μ)(x)`.
pub type SourceFn = Arc<dyn Fn(f64, &[f64], f64, f64) -> f64 + Send + Sync>;

/// A point of the parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter(Vec<f64>);

impl Parameter {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument(
                "parameter must have at least one component".into(),
            ));
        }
        Ok(Self(components))
    }

    pub fn scalar(value: f64) -> Self {
        Self(vec![value])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Parameter {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// Box-shaped admissible parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl AdmissibleSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidArgument(
                "admissible set bounds must be nonempty and of equal length".into(),
            ));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument(
                "lower bound exceeds upper bound".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim()
            && mu
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(m, (l, u))| *l <= *m && *m <= *u)
    }

    pub fn check(&self, mu: &[f64]) -> Result<()> {
        if self.contains(mu) {
            Ok(())
        } else {
            Err(Error::ParameterOutOfBounds { mu: mu.to_vec() })
        }
    }
}

/// Tensor grid over the box including endpoints, in lexicographic order
/// (first component varies slowest).
pub fn sample_grid(set: &AdmissibleSet, counts: &[usize]) -> Result<Vec<Parameter>> {
    if counts.len() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            found: counts.len(),
        });
    }
    if let Some(c) = counts.iter().find(|&&c| c < 2) {
        return Err(Error::InvalidArgument(format!("grid count {c} below 2")));
    }
    let axes: Vec<Vec<f64>> = counts
        .iter()
        .enumerate()
        .map(|(d, &c)| {
            let (l, u) = (set.lower[d], set.upper[d]);
            (0..c)
                .map(|i| {
                    if i == c - 1 {
                        u
                    } else {
                        l + (u - l) * i as f64 / (c - 1) as f64
                    }
                })
                .collect()
        })
        .collect();
    let total: usize = counts.iter().product();
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut comps = vec![0.0; counts.len()];
        for d in (0..counts.len()).rev() {
            comps[d] = axes[d][rem % counts[d]];
            rem /= counts[d];
        }
        out.push(Parameter(comps));
    }
    Ok(out)
}

/// Source of the form `f(t; μ)(x) = γ(t) Σᵢ βᵢ(μ) sᵢ(x)`.
#[derive(Clone)]
pub struct SeparableSource {
    pub spatial: Vec<SpatialFn>,
    pub beta: ParameterFactorFn,
    pub gamma: TemporalFn,
}

impl SeparableSource {
    pub fn n_terms(&self) -> usize {
        self.spatial.len()
    }

    pub fn evaluate(&self, t: f64, mu: &[f64], x1: f64, x2: f64) -> f64 {
        let beta = (self.beta)(mu);
        let s: f64 = beta
            .iter()
            .zip(&self.spatial)
            .map(|(b, s)| b * s(x1, x2))
            .sum();
        (self.gamma)(t) * s
    }
}

impl fmt::Debug for SeparableSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SeparableSource")
            .field("terms", &self.spatial.len())
            .finish()
    }
}

/// Complete problem description on the unit square.
#[derive(Clone)]
pub struct ProblemDefinition {
    pub name: String,
    pub set: AdmissibleSet,
    pub c: CoefficientFn,
    pub a: CoefficientFn,
    pub source: SeparableSource,
    /// Continuous source used for direct assembly and norms.
    pub f: SourceFn,
    pub final_time: f64,
    /// x₁-coordinates where the source may be discontinuous.
    pub breakpoints: Vec<f64>,
}

impl fmt::Debug for ProblemDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDefinition")
            .field("name", &self.name)
            .field("set", &self.set)
            .field("final_time", &self.final_time)
            .field("source", &self.source)
            .finish()
    }
}

impl ProblemDefinition {
    /// Builds a problem whose continuous source is the separable one.
    pub fn from_separable(
        name: impl Into<String>,
        set: AdmissibleSet,
        c: CoefficientFn,
        a: CoefficientFn,
        source: SeparableSource,
        final_time: f64,
    ) -> Result<Self> {
        if !(final_time > 0.0) {
            return Err(Error::InvalidArgument("final time must be positive".into()));
        }
        let src = source.clone();
        Ok(Self {
            name: name.into(),
            set,
            c,
            a,
            source,
            f: Arc::new(move |t, mu, x1, x2| src.evaluate(t, mu, x1, x2)),
            final_time,
            breakpoints: Vec::new(),
        })
    }

    pub fn c(&self, mu: &[f64]) -> f64 {
        (self.c)(mu)
    }

    pub fn a(&self, mu: &[f64]) -> f64 {
        (self.a)(mu)
    }

    pub fn beta(&self, mu: &[f64]) -> Vec<f64> {
        (self.source.beta)(mu)
    }

    pub fn gamma(&self, t: f64) -> f64 {
        (self.source.gamma)(t)
    }

    /// Verifies `c > 0` and `a ≥ 0` on the given parameters.
    pub fn check_coefficients(&self, samples: &[Parameter]) -> Result<()> {
        for mu in samples {
            let (c, a) = (self.c(mu), self.a(mu));
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "c({mu}) = {c} is not positive"
                )));
            }
            if !(a >= 0.0) || !a.is_finite() {
                return Err(Error::InvalidArgument(format!("a({mu}) = {a} is negative")));
            }
        }
        Ok(())
    }

    /// `(∫₀ᵀ ∫_Ω f(t; μ)² dx dt)^{1/2}` by composite Gauss quadrature.
    pub fn source_norm_h(&self, mu: &[f64]) -> f64 {
        let mut cuts = vec![0.0];
        cuts.extend(
            self.breakpoints
                .iter()
                .copied()
                .filter(|b| *b > 0.0 && *b < 1.0),
        );
        cuts.push(1.0);
        let mut xs = Vec::new();
        for w in cuts.windows(2) {
            xs.extend(composite_gauss(w[0], w[1], 4, 8));
        }
        let ys = composite_gauss(0.0, 1.0, 4, 8);
        let ts = composite_gauss(0.0, self.final_time, 64, 6);
        let mut total = 0.0;
        for &(t, wt) in &ts {
            let mut space = 0.0;
            for &(x1, w1) in &xs {
                for &(x2, w2) in &ys {
                    let v = (self.f)(t, mu, x1, x2);
                    space += w1 * w2 * v * v;
                }
            }
            total += wt * space;
        }
        total.sqrt()
    }
}

fn temporal_factor(final_time: f64) -> TemporalFn {
    Arc::new(move |t: f64| 10.0 * (4.0 * PI * t / final_time).sin() * (1.0 + t).sqrt())
}

/// Scalar-parameter example on `[-10, 10]` with final time 20.
pub fn make_example1() -> ProblemDefinition {
    example1_with_final_time(20.0)
}

/// First example on `(0, t_end)`; the temporal factor scales with `t_end`.
pub fn example1_with_final_time(t_end: f64) -> ProblemDefinition {
    let shape = |x1: f64, x2: f64| (0.5 - x1) * (PI * x1).sin() * (PI * x2).sin();
    let source = SeparableSource {
        spatial: vec![Arc::new(shape)],
        beta: Arc::new(|mu: &[f64]| vec![mu[0]]),
        gamma: temporal_factor(t_end),
    };
    ProblemDefinition {
        name: "example1".into(),
        set: AdmissibleSet::new(vec![-10.0], vec![10.0]).unwrap(),
        c: Arc::new(|mu: &[f64]| 5.0 / (5.0 + mu[0].abs())),
        a: Arc::new(|mu: &[f64]| 1.0 + 2.0 * mu[0].abs()),
        source,
        f: Arc::new(move |t, mu, x1, x2| {
            10.0 * (4.0 * PI * t / t_end).sin()
                * (1.0 + t).sqrt()
                * (0.5 - x1)
                * (PI * x1).sin()
                * (PI * x2).sin()
                * mu[0]
        }),
        final_time: t_end,
        breakpoints: Vec::new(),
    }
}

/// Two-parameter example on `[-2, 2]²` with final time 10.
pub fn make_example2() -> ProblemDefinition {
    example2_with_final_time(10.0)
}

pub fn example2_with_final_time(t_end: f64) -> ProblemDefinition {
    let left = |x1: f64, x2: f64| if x1 <= 0.5 { x1 * x2 } else { 0.0 };
    let right = |x1: f64, x2: f64| if x1 > 0.5 { x1 * x1 * x2 * x2 } else { 0.0 };
    let source = SeparableSource {
        spatial: vec![Arc::new(left), Arc::new(right)],
        beta: Arc::new(|mu: &[f64]| vec![mu[0], mu[1]]),
        gamma: temporal_factor(t_end),
    };
    ProblemDefinition {
        name: "example2".into(),
        set: AdmissibleSet::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(),
        c: Arc::new(|mu: &[f64]| 3.0 / (1.0 + mu[0].abs())),
        a: Arc::new(|mu: &[f64]| 1.0 + 5.0 * mu[0].hypot(mu[1])),
        source,
        f: Arc::new(move |t, mu, x1, x2| {
            let space = if x1 <= 0.5 {
                x1 * x2 * mu[0]
            } else {
                x1 * x1 * x2 * x2 * mu[1]
            };
            10.0 * (4.0 * PI * t / t_end).sin() * (1.0 + t).sqrt() * space
        }),
        final_time: t_end,
        breakpoints: vec![0.5],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_coefficients() {
        let p = make_example1();
        assert_eq!(p.c(&[0.0]), 1.0);
        assert_eq!(p.a(&[-10.0]), 21.0);
        assert_eq!(p.final_time, 20.0);
        for &(t, x1, x2) in &[(0.3, 0.2, 0.7), (5.0, 0.9, 0.1), (19.0, 0.5, 0.5)] {
            assert_eq!((p.f)(t, &[0.0], x1, x2), 0.0);
        }
    }

    #[test]
    fn example2_coefficients() {
        let p = make_example2();
        assert_eq!(p.c(&[0.0, 2.0]), 3.0);
        assert_eq!(p.a(&[0.0, 0.0]), 1.0);
        assert_eq!(p.final_time, 10.0);
        assert_eq!((p.f)(2.0, &[0.0, 0.0], 0.3, 0.4), 0.0);
        assert_eq!((p.f)(2.0, &[0.0, 0.0], 0.8, 0.4), 0.0);
    }

    #[test]
    fn separable_matches_continuous() {
        for p in [make_example1(), make_example2()] {
            let mu: Vec<f64> = p.set.lower().iter().map(|l| 0.3 * l + 0.1).collect();
            for &(t, x1, x2) in &[(0.7, 0.25, 0.6), (3.3, 0.75, 0.2), (1.0, 0.5, 0.5)] {
                let a = (p.f)(t, &mu, x1, x2);
                let b = p.source.evaluate(t, &mu, x1, x2);
                assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn coefficients_valid_on_samples() {
        let p1 = make_example1();
        p1.check_coefficients(&sample_grid(&p1.set, &[100]).unwrap())
            .unwrap();
        let p2 = make_example2();
        p2.check_coefficients(&sample_grid(&p2.set, &[10, 10]).unwrap())
            .unwrap();
    }

    #[test]
    fn grid_examples() {
        let set = AdmissibleSet::new(vec![-1.0], vec![1.0]).unwrap();
        let g: Vec<f64> = sample_grid(&set, &[3])
            .unwrap()
            .iter()
            .map(|m| m[0])
            .collect();
        assert_eq!(g, vec![-1.0, 0.0, 1.0]);

        let set = AdmissibleSet::new(vec![-10.0], vec![10.0]).unwrap();
        let g = sample_grid(&set, &[60]).unwrap();
        assert_eq!(g.len(), 60);
        assert_eq!(g[0][0], -10.0);
        assert_eq!(g[59][0], 10.0);
        for w in g.windows(2) {
            assert!((w[1][0] - w[0][0] - 20.0 / 59.0).abs() < 1e-12);
        }

        let p2 = make_example2();
        let g = sample_grid(&p2.set, &[12, 12]).unwrap();
        assert_eq!(g.len(), 144);
        assert_eq!(g[1].as_slice(), &[-2.0, -2.0 + 4.0 / 11.0]);
        assert!(matches!(
            sample_grid(&set, &[1]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn source_norm_against_closed_form() {
        // Example 1: ‖f‖² = μ² ∫γ² dt · ∫∫ (½ − x)² sin²(πx) sin²(πy).
        let p = make_example1();
        let ts = composite_gauss(0.0, 20.0, 400, 8);
        let time: f64 = ts.iter().map(|(t, w)| w * p.gamma(*t).powi(2)).sum();
        // ∫₀¹ (½ − x)² sin²(πx) dx = 1/24 − 1/(4π²); ∫₀¹ sin²(πy) dy = ½.
        let space = (1.0 / 24.0 - 1.0 / (4.0 * PI * PI)) * 0.5;
        let exact = 3.0 * (time * space).sqrt();
        let got = p.source_norm_h(&[3.0]);
        assert!((got - exact).abs() <= 1e-10 * exact, "{got} vs {exact}");
    }

    #[test]
    fn out_of_bounds_rejected() {
        let p = make_example1();
        assert!(matches!(
            p.set.check(&[11.0]),
            Err(Error::ParameterOutOfBounds { .. })
        ));
        assert!(p.set.check(&[10.0]).is_ok());
    }
}
