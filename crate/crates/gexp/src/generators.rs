//! BSDE drivers and terminal functions with their analytic derivatives, plus
//! a sampling validator for the structural assumptions the solvers rely on
//! (quadratic growth, bounded `g_y`, Lipschitz derivatives, `g(t, y, 0) = 0`).
//!
//! Derivatives are supplied analytically per family; the validator
//! cross-checks them against central finite differences because the adjoint
//! recursion consumes `g_y`, `g_z` directly.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::pathspace::{AdaptedField, TerminalField};

/// Node coordinates at which a driver is evaluated. Needed for drivers with
/// an adapted (per-node) coefficient.
#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub struct Site {
    pub level: usize,
    pub node: usize,
}

impl Site {
    pub const ROOT: Site = Site { level: 0, node: 0 };
}

/// Drift coefficient of the linear-in-z family: a constant or a bounded
/// adapted process given per node.
#[derive(Debug, Clone, PartialEq)]
pub enum Drift {
    Constant(f64),
    Field(AdaptedField),
}

impl Drift {
    fn at(&self, site: Site) -> f64 {
        match self {
            Drift::Constant(c) => *c,
            Drift::Field(f) => f.at(site.level, site.node),
        }
    }

    fn max_abs(&self) -> f64 {
        match self {
            Drift::Constant(c) => c.abs(),
            Drift::Field(f) => f.max_abs(),
        }
    }
}

type DriverFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// A BSDE driver `(t, y, z) -> R` with partial derivatives in `y` and `z`.
#[derive(Clone)]
pub enum Generator {
    /// `g = gamma * z^2`
    Entropic { gamma: f64 },
    /// `g = mu_t * z`
    LinearDrift { mu: Drift },
    /// `g = a*y + b*z^2`; violates `g(t, y, 0) = 0` whenever `a != 0`
    AffineQuadratic { a: f64, b: f64 },
    /// Test hook for hand-built drivers.
    Custom {
        eval: DriverFn,
        dy: DriverFn,
        dz: DriverFn,
        growth_constant: f64,
        convex: bool,
    },
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Entropic { gamma } => write!(f, "Entropic(gamma={gamma})"),
            Generator::LinearDrift { mu } => write!(f, "LinearDrift(mu={mu:?})"),
            Generator::AffineQuadratic { a, b } => write!(f, "AffineQuadratic(a={a}, b={b})"),
            Generator::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// `g(t, y, z) = gamma * z^2`, the entropic family.
pub fn make_entropic(gamma: f64) -> Result<Generator> {
    if !(gamma > 0.0) {
        return Err(Error::NonPositiveParameter(gamma));
    }
    Ok(Generator::Entropic { gamma })
}

/// `g(t, y, z) = mu_t * z` for a bounded drift.
pub fn make_linear_drift(mu: impl Into<Drift>) -> Result<Generator> {
    let mu = mu.into();
    let cap = mu.max_abs();
    if cap > 1e6 {
        return Err(Error::UnboundedDrift(cap));
    }
    Ok(Generator::LinearDrift { mu })
}

/// `g(t, y, z) = a*y + b*z^2`.
pub fn make_affine_quadratic(a: f64, b: f64) -> Generator {
    Generator::AffineQuadratic { a, b }
}

impl From<f64> for Drift {
    fn from(c: f64) -> Self {
        Drift::Constant(c)
    }
}

impl From<AdaptedField> for Drift {
    fn from(f: AdaptedField) -> Self {
        Drift::Field(f)
    }
}

impl Generator {
    pub fn eval(&self, site: Site, t: f64, y: f64, z: f64) -> f64 {
        match self {
            Generator::Entropic { gamma } => gamma * z * z,
            Generator::LinearDrift { mu } => mu.at(site) * z,
            Generator::AffineQuadratic { a, b } => a * y + b * z * z,
            Generator::Custom { eval, .. } => eval(t, y, z),
        }
    }

    pub fn dy(&self, site: Site, t: f64, y: f64, z: f64) -> f64 {
        let _ = site;
        match self {
            Generator::Entropic { .. } => 0.0,
            Generator::LinearDrift { .. } => 0.0,
            Generator::AffineQuadratic { a, .. } => *a,
            Generator::Custom { dy, .. } => dy(t, y, z),
        }
    }

    pub fn dz(&self, site: Site, t: f64, y: f64, z: f64) -> f64 {
        match self {
            Generator::Entropic { gamma } => 2.0 * gamma * z,
            Generator::LinearDrift { mu } => mu.at(site),
            Generator::AffineQuadratic { b, .. } => 2.0 * b * z,
            Generator::Custom { dz, .. } => dz(t, y, z),
        }
    }

    /// Growth constant `C` in `|g| <= C(1 + |y| + z^2)`, `|g_y| <= C`,
    /// `|g_z| <= C(1 + |z|)`.
    pub fn growth_constant(&self) -> f64 {
        match self {
            Generator::Entropic { gamma } => 2.0 * gamma,
            Generator::LinearDrift { mu } => mu.max_abs(),
            Generator::AffineQuadratic { a, b } => a.abs().max(2.0 * b.abs()),
            Generator::Custom {
                growth_constant, ..
            } => *growth_constant,
        }
    }

    /// Whether `g(t, y, 0) = 0` holds structurally. Affine-quadratic drivers
    /// with `a != 0` fail this; the g-expectation normalization
    /// `E_g[c] = c` is then not asserted for them.
    pub fn zero_at_zero_z(&self) -> bool {
        match self {
            Generator::Entropic { .. } | Generator::LinearDrift { .. } => true,
            Generator::AffineQuadratic { a, .. } => *a == 0.0,
            Generator::Custom { .. } => false,
        }
    }

    /// True when the driver is known to violate the normalization assumption
    /// by construction and callers should not expect `E_g[c] = c`.
    pub fn normalization_exempt(&self) -> bool {
        !self.zero_at_zero_z()
    }

    pub fn is_convex(&self) -> bool {
        match self {
            Generator::Entropic { .. } | Generator::LinearDrift { .. } => true,
            Generator::AffineQuadratic { b, .. } => *b >= 0.0,
            Generator::Custom { convex, .. } => *convex,
        }
    }

    pub fn is_linear_in_z(&self) -> bool {
        matches!(self, Generator::LinearDrift { .. })
    }

    pub fn entropic_gamma(&self) -> Option<f64> {
        match self {
            Generator::Entropic { gamma } => Some(*gamma),
            Generator::AffineQuadratic { a, b } if *a == 0.0 && *b > 0.0 => Some(*b),
            _ => None,
        }
    }

    pub fn constant_drift(&self) -> Option<f64> {
        match self {
            Generator::LinearDrift {
                mu: Drift::Constant(c),
            } => Some(*c),
            _ => None,
        }
    }
}

/// One validated clause of the driver assumptions.
#[derive(Debug, Clone)]
pub struct ClauseResult {
    pub name: &'static str,
    pub pass: bool,
    /// Largest violation margin observed (0 when the clause holds).
    pub worst_margin: f64,
    /// Sample point `(t, y, z)` realizing the worst margin.
    pub witness: (f64, f64, f64),
}

/// Per-clause validation outcome for a driver.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub clauses: Vec<ClauseResult>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.clauses.iter().all(|c| c.pass)
    }

    pub fn clause(&self, name: &str) -> Option<&ClauseResult> {
        self.clauses.iter().find(|c| c.name == name)
    }
}

/// Deterministic low-discrepancy points in `[0,1]^3` (Kronecker sequence).
fn kronecker_points(count: usize) -> impl Iterator<Item = (f64, f64, f64)> {
    // plastic-number based additive recurrence
    const A1: f64 = 0.819_172_513_396_164_4;
    const A2: f64 = 0.671_043_606_703_789_2;
    const A3: f64 = 0.549_700_477_901_936;
    (0..count).map(|i| {
        let k = (i + 1) as f64;
        ((k * A1).fract(), (k * A2).fract(), (k * A3).fract())
    })
}

/// Sample the driver assumptions on `[0, T] x [-10, 10]^2` and report each
/// clause with its worst-case witness. Failures are report entries, not
/// errors.
pub fn validate_assumptions(gen: &Generator, sample_count: usize) -> ValidationReport {
    let sample_count = sample_count.max(100);
    let horizon = 1.0;
    let range = 10.0;
    let c = gen.growth_constant();
    let site = Site::ROOT;

    let mut growth = ClauseWorst::new("quadratic_growth");
    let mut gy_bound = ClauseWorst::new("gy_bound");
    let mut gy_lipschitz = ClauseWorst::new("gy_lipschitz");
    let mut gz_bound = ClauseWorst::new("gz_bound");
    let mut gz_lipschitz = ClauseWorst::new("gz_lipschitz");
    let mut zero_at_zero = ClauseWorst::new("zero_at_zero_z");
    let mut deriv_consistency = ClauseWorst::new("derivative_consistency");

    let mut prev: Option<(f64, f64, f64)> = None;
    for (u1, u2, u3) in kronecker_points(sample_count) {
        let t = u1 * horizon;
        let y = (2.0 * u2 - 1.0) * range;
        let z = (2.0 * u3 - 1.0) * range;

        let g = gen.eval(site, t, y, z);
        let gy = gen.dy(site, t, y, z);
        let gz = gen.dz(site, t, y, z);

        growth.observe(g.abs() - c * (1.0 + y.abs() + z * z), (t, y, z));
        gy_bound.observe(gy.abs() - c, (t, y, z));
        gz_bound.observe(gz.abs() - c * (1.0 + z.abs()), (t, y, z));
        zero_at_zero.observe(gen.eval(site, t, y, 0.0).abs(), (t, y, 0.0));

        if let Some((tp, yp, zp)) = prev {
            let dyp = gen.dy(site, tp, yp, zp);
            let dzp = gen.dz(site, tp, yp, zp);
            let dist = (y - yp).abs() + (z - zp).abs();
            gy_lipschitz.observe((gy - dyp).abs() - c * dist, (t, y, z));
            gz_lipschitz.observe((gz - dzp).abs() - c * dist, (t, y, z));
        }
        prev = Some((t, y, z));

        // central finite differences against the analytic partials
        let hstep = 1e-5;
        let fd_y =
            (gen.eval(site, t, y + hstep, z) - gen.eval(site, t, y - hstep, z)) / (2.0 * hstep);
        let fd_z =
            (gen.eval(site, t, y, z + hstep) - gen.eval(site, t, y, z - hstep)) / (2.0 * hstep);
        let scale_y = 1.0 + gy.abs();
        let scale_z = 1.0 + gz.abs();
        let err = ((fd_y - gy).abs() / scale_y).max((fd_z - gz).abs() / scale_z);
        deriv_consistency.observe(err - 1e-6, (t, y, z));
    }

    ValidationReport {
        clauses: vec![
            growth.finish(1e-9),
            gy_bound.finish(1e-9),
            gy_lipschitz.finish(1e-9),
            gz_bound.finish(1e-9),
            gz_lipschitz.finish(1e-9),
            zero_at_zero.finish(1e-12),
            deriv_consistency.finish(0.0),
        ],
    }
}

struct ClauseWorst {
    name: &'static str,
    worst: f64,
    witness: (f64, f64, f64),
}

impl ClauseWorst {
    fn new(name: &'static str) -> Self {
        ClauseWorst {
            name,
            worst: f64::NEG_INFINITY,
            witness: (0.0, 0.0, 0.0),
        }
    }

    fn observe(&mut self, margin: f64, point: (f64, f64, f64)) {
        if margin > self.worst {
            self.worst = margin;
            self.witness = point;
        }
    }

    fn finish(self, tol: f64) -> ClauseResult {
        ClauseResult {
            name: self.name,
            pass: self.worst <= tol,
            worst_margin: self.worst.max(0.0),
            witness: self.witness,
        }
    }
}

/// Terminal cost `h(leaf, x)` with derivative `h_x`.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalFunction {
    /// `h(leaf, x) = base + claim(leaf) - x`; `h_x = -1`.
    AffineDecreasing {
        base: f64,
        claim: Option<TerminalField>,
    },
    /// `h(x) = (e^{-a x} - 1)/a`, i.e. `-u(x)` for exponential utility
    /// `u(x) = (1 - e^{-a x})/a`.
    NegExpUtility { risk_aversion: f64 },
}

impl TerminalFunction {
    /// `h(x) = -x`.
    pub fn linear_decreasing() -> Self {
        TerminalFunction::AffineDecreasing {
            base: 0.0,
            claim: None,
        }
    }

    /// `h(leaf, x) = claim(leaf) - x`.
    pub fn claim_minus_x(claim: TerminalField) -> Self {
        TerminalFunction::AffineDecreasing {
            base: 0.0,
            claim: Some(claim),
        }
    }

    /// `h(x) = base - x` with constant `base` (e.g. `1 - x` for the
    /// randomized-test objective).
    pub fn constant_minus_x(base: f64) -> Self {
        TerminalFunction::AffineDecreasing { base, claim: None }
    }

    pub fn eval(&self, leaf: usize, x: f64) -> f64 {
        match self {
            TerminalFunction::AffineDecreasing { base, claim } => {
                base + claim.as_ref().map_or(0.0, |c| c.at(leaf)) - x
            }
            TerminalFunction::NegExpUtility { risk_aversion } => {
                ((-risk_aversion * x).exp() - 1.0) / risk_aversion
            }
        }
    }

    pub fn dx(&self, leaf: usize, x: f64) -> f64 {
        let _ = leaf;
        match self {
            TerminalFunction::AffineDecreasing { .. } => -1.0,
            TerminalFunction::NegExpUtility { risk_aversion } => -(-risk_aversion * x).exp(),
        }
    }

    /// Lipschitz constant for `h` and `h_x` on `|x| <= radius`.
    pub fn lipschitz_constant(&self, radius: f64) -> f64 {
        match self {
            TerminalFunction::AffineDecreasing { .. } => 1.0,
            TerminalFunction::NegExpUtility { risk_aversion } => {
                let edge = (risk_aversion * radius).exp();
                edge.max(risk_aversion * edge)
            }
        }
    }

    pub fn strictly_decreasing(&self) -> bool {
        true
    }

    pub fn is_convex(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic_z_generator() -> Generator {
        Generator::Custom {
            eval: Arc::new(|_, _, z| z * z * z),
            dy: Arc::new(|_, _, _| 0.0),
            dz: Arc::new(|_, _, z| 3.0 * z * z),
            growth_constant: 1.0,
            convex: false,
        }
    }

    #[test]
    fn entropic_algebra() {
        let g = make_entropic(1.0).unwrap();
        assert_eq!(g.eval(Site::ROOT, 0.3, 5.0, 0.0), 0.0);
        assert_eq!(g.eval(Site::ROOT, 0.0, 0.0, 2.0), 4.0);
        assert_eq!(g.dz(Site::ROOT, 0.0, 0.0, 2.0), 4.0);
        assert!(make_entropic(0.0).is_err());
        assert!(make_entropic(-1.0).is_err());
    }

    #[test]
    fn entropic_dz_matches_finite_difference() {
        let g = make_entropic(0.5).unwrap();
        let z = 1.3;
        let h = 1e-6;
        let fd = (g.eval(Site::ROOT, 0.0, 0.0, z + h) - g.eval(Site::ROOT, 0.0, 0.0, z - h))
            / (2.0 * h);
        assert!((fd - g.dz(Site::ROOT, 0.0, 0.0, z)).abs() < 1e-8);
    }

    #[test]
    fn linear_drift_algebra() {
        let g0 = make_linear_drift(0.0).unwrap();
        assert_eq!(g0.eval(Site::ROOT, 0.1, 2.0, 7.0), 0.0);
        let g = make_linear_drift(0.2).unwrap();
        assert!((g.eval(Site::ROOT, 0.0, 0.0, 3.0) - 0.6).abs() < 1e-15);
        assert!(make_linear_drift(2e6).is_err());
    }

    #[test]
    fn linear_drift_per_node_field() {
        use crate::pathspace::PathTree;
        let tree = PathTree::build(3, 1.0).unwrap();
        // mu = sign(W_t) at each node
        let mu = AdaptedField::from_fn(&tree, 0, 2, |k, i| tree.w_value(k, i).signum());
        let g = make_linear_drift(mu).unwrap();
        // node (1, 1) has W < 0
        let site = Site { level: 1, node: 1 };
        assert_eq!(g.eval(site, 0.0, 0.0, 1.0), -1.0);
    }

    #[test]
    fn affine_quadratic_matches_entropic_at_a_zero() {
        let aq = make_affine_quadratic(0.0, 0.7);
        let en = make_entropic(0.7).unwrap();
        for (t, y, z) in kronecker_points(200).map(|(a, b, c)| (a, 20.0 * b - 10.0, 20.0 * c - 10.0))
        {
            assert_eq!(aq.eval(Site::ROOT, t, y, z), en.eval(Site::ROOT, t, y, z));
            assert_eq!(aq.dy(Site::ROOT, t, y, z), en.dy(Site::ROOT, t, y, z));
            assert_eq!(aq.dz(Site::ROOT, t, y, z), en.dz(Site::ROOT, t, y, z));
        }
        assert!(aq.zero_at_zero_z());
    }

    #[test]
    fn affine_quadratic_breaks_normalization() {
        let g = make_affine_quadratic(0.1, 0.5);
        assert_eq!(g.dy(Site::ROOT, 0.0, 7.0, 7.0), 0.1);
        assert!((g.eval(Site::ROOT, 0.0, 2.0, 0.0) - 0.2).abs() < 1e-15);
        assert!(!g.zero_at_zero_z());
        assert!(g.normalization_exempt());
        let report = validate_assumptions(&g, 300);
        assert!(!report.clause("zero_at_zero_z").unwrap().pass);
        assert!(report.clause("quadratic_growth").unwrap().pass);
        assert!(report.clause("gy_bound").unwrap().pass);
    }

    #[test]
    fn entropic_validates_cleanly() {
        let g = make_entropic(1.0).unwrap();
        assert_eq!(g.growth_constant(), 2.0);
        let report = validate_assumptions(&g, 500);
        assert!(report.all_pass(), "{report:?}");
    }

    #[test]
    fn cubic_generator_fails_quadratic_growth() {
        let report = validate_assumptions(&cubic_z_generator(), 500);
        let clause = report.clause("quadratic_growth").unwrap();
        assert!(!clause.pass);
        assert!(clause.witness.2.abs() > 5.0, "witness {:?}", clause.witness);
    }

    #[test]
    fn derivative_consistency_across_families() {
        for gen in [
            make_entropic(0.3).unwrap(),
            make_entropic(2.0).unwrap(),
            make_linear_drift(-0.5).unwrap(),
            make_affine_quadratic(0.1, 1.0),
        ] {
            let report = validate_assumptions(&gen, 1000);
            assert!(
                report.clause("derivative_consistency").unwrap().pass,
                "{gen:?}"
            );
        }
    }

    #[test]
    fn terminal_functions() {
        let h = TerminalFunction::linear_decreasing();
        assert_eq!(h.eval(0, 2.0), -2.0);
        assert_eq!(h.dx(0, 2.0), -1.0);
        let hu = TerminalFunction::NegExpUtility { risk_aversion: 1.0 };
        assert!((hu.eval(0, 0.0)).abs() < 1e-15);
        assert!(hu.dx(0, 0.5) < 0.0);
        // h_x finite-difference check
        let fd = (hu.eval(0, 0.5 + 1e-6) - hu.eval(0, 0.5 - 1e-6)) / 2e-6;
        assert!((fd - hu.dx(0, 0.5)).abs() < 1e-8);
    }
}
