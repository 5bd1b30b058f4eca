//! Forward adjoint processes, the linear variational BSDE, and the
//! machine-checkable duality identity between them.
//!
//! The adjoint recursion is matched to the implicit backward scheme:
//!
//! ```text
//! m_{k+1} = m_k * (1 + B_k dW_{k+1}) / (1 - A_k dt)
//! ```
//!
//! with `A_k = g_y`, `B_k = g_z` frozen at the solved `(y*, z*)`. Dividing
//! by `(1 - A_k dt)` instead of multiplying by `(1 + A_k dt)` makes
//! `E[m_{k+1} yhat_{k+1} | F_k] = m_k yhat_k` hold exactly for the discrete
//! variational BSDE, which turns the continuous-time martingale argument of
//! the maximum principle into an identity the tests can assert at 1e-11.

use crate::bsde::BsdeSolution;
use crate::error::{Error, Result};
use crate::generators::{Generator, Site, TerminalFunction};
use crate::pathspace::{AdaptedField, PathTree, TerminalField};

/// A positive forward process with value 1 at the root.
#[derive(Debug, Clone)]
pub struct AdjointProcess {
    /// Values over levels `0..=N`.
    pub values: AdaptedField,
    pub positivity_ok: bool,
}

impl AdjointProcess {
    /// Terminal slice `m(T)` as a leaf field.
    pub fn terminal(&self, tree: &PathTree) -> TerminalField {
        let n = tree.n_steps();
        TerminalField::new(self.values.level(n).to_vec())
    }
}

/// Propagate the adjoint of a solved BSDE forward from `m(0) = 1`.
pub fn solve_adjoint(tree: &PathTree, gen: &Generator, sol: &BsdeSolution) -> Result<AdjointProcess> {
    forward_exponential(tree, gen, sol, true)
}

/// Like [`solve_adjoint`], but without the `|B| sqrt(dt) <= 0.9` positivity
/// precondition. The duality identity is purely algebraic and survives
/// sign changes of the one-step factors, so gradient computations inside the
/// optimizer and the oracle can use this variant on intermediate iterates
/// whose terminal jumps are large; `positivity_ok` still reports whether the
/// process stayed positive.
pub fn solve_adjoint_unchecked(
    tree: &PathTree,
    gen: &Generator,
    sol: &BsdeSolution,
) -> Result<AdjointProcess> {
    forward_exponential_inner(tree, gen, sol, true, false)
}

/// Naive multiplicative Euler variant `m_{k+1} = m_k (1 + A dt)(1 + B dW)`.
/// Diagnostic only: its duality gap is O(dt) rather than exact.
pub fn solve_adjoint_naive(
    tree: &PathTree,
    gen: &Generator,
    sol: &BsdeSolution,
) -> Result<AdjointProcess> {
    forward_exponential(tree, gen, sol, false)
}

fn forward_exponential(
    tree: &PathTree,
    gen: &Generator,
    sol: &BsdeSolution,
    implicit_drift: bool,
) -> Result<AdjointProcess> {
    forward_exponential_inner(tree, gen, sol, implicit_drift, true)
}

fn forward_exponential_inner(
    tree: &PathTree,
    gen: &Generator,
    sol: &BsdeSolution,
    implicit_drift: bool,
    check_positivity: bool,
) -> Result<AdjointProcess> {
    let dt = tree.dt();
    let sqrt_dt = tree.sqrt_dt();
    let n = tree.n_steps();
    let mut levels: Vec<Vec<f64>> = vec![vec![1.0]];
    for k in 0..n {
        let cur = &levels[k];
        let t = tree.time_at(k);
        let mut next = vec![0.0; tree.nodes_at(k + 1)];
        for i in 0..tree.nodes_at(k) {
            let site = Site { level: k, node: i };
            let y = sol.y.at(k, i);
            let z = sol.z.at(k, i);
            let a = gen.dy(site, t, y, z);
            let b = gen.dz(site, t, y, z);
            if check_positivity && (b * sqrt_dt).abs() > 0.9 {
                return Err(Error::PositivityViolated {
                    level: k,
                    node: i,
                    factor: b * sqrt_dt,
                });
            }
            let drift = if implicit_drift {
                let denom = 1.0 - a * dt;
                if denom.abs() < 0.1 {
                    return Err(Error::DenominatorNearZero(denom.abs()));
                }
                1.0 / denom
            } else {
                1.0 + a * dt
            };
            next[2 * i] = cur[i] * drift * (1.0 + b * sqrt_dt);
            next[2 * i + 1] = cur[i] * drift * (1.0 - b * sqrt_dt);
        }
        levels.push(next);
    }
    let values = AdaptedField::from_levels(0, levels);
    let positivity_ok = (0..=n).all(|k| values.level(k).iter().all(|&v| v > 0.0));
    Ok(AdjointProcess {
        values,
        positivity_ok,
    })
}

/// Solution of the variational system: linearizations of the two BSDEs of
/// the objective around `(y*, z*)` in the perturbation direction
/// `xi - xi*`.
#[derive(Debug, Clone)]
pub struct VariationalSolution {
    pub y1: AdaptedField,
    pub z1: AdaptedField,
    pub y2: AdaptedField,
    pub z2: AdaptedField,
    pub direction: TerminalField,
    pub alpha: f64,
}

impl VariationalSolution {
    pub fn y1_root(&self) -> f64 {
        self.y1.at(0, 0)
    }

    pub fn y2_root(&self) -> f64 {
        self.y2.at(0, 0)
    }
}

/// Linear BSDE with coefficients frozen at the base solution's `(y*, z*)`:
/// driver `A(t) yhat + B(t) zhat`, solved by the same implicit scheme.
pub fn solve_linear_frozen(
    tree: &PathTree,
    gen: &Generator,
    base: &BsdeSolution,
    terminal: &[f64],
) -> Result<(AdaptedField, AdaptedField)> {
    if terminal.len() != tree.n_leaves() {
        return Err(Error::ShapeMismatch {
            expected: tree.n_leaves(),
            got: terminal.len(),
        });
    }
    let dt = tree.dt();
    let sqrt_dt = tree.sqrt_dt();
    let n = tree.n_steps();
    let mut y_levels: Vec<Vec<f64>> = vec![terminal.to_vec()];
    let mut z_levels: Vec<Vec<f64>> = Vec::new();
    for k in (0..n).rev() {
        let child = &y_levels[0];
        let t = tree.time_at(k);
        let mut y_row = Vec::with_capacity(tree.nodes_at(k));
        let mut z_row = Vec::with_capacity(tree.nodes_at(k));
        for i in 0..tree.nodes_at(k) {
            let site = Site { level: k, node: i };
            let a = gen.dy(site, t, base.y.at(k, i), base.z.at(k, i));
            let b = gen.dz(site, t, base.y.at(k, i), base.z.at(k, i));
            let denom = 1.0 - a * dt;
            if denom.abs() < 0.1 {
                return Err(Error::DenominatorNearZero(denom.abs()));
            }
            let zhat = (child[2 * i] - child[2 * i + 1]) / (2.0 * sqrt_dt);
            let mean = 0.5 * (child[2 * i] + child[2 * i + 1]);
            y_row.push((mean + b * zhat * dt) / denom);
            z_row.push(zhat);
        }
        y_levels.insert(0, y_row);
        z_levels.insert(0, z_row);
    }
    Ok((
        AdaptedField::from_levels(0, y_levels),
        AdaptedField::from_levels(0, if n == 0 { vec![vec![0.0]] } else { z_levels }),
    ))
}

/// Solve the variational system at the perturbation `direction = xi - xi*`.
/// `sol1` is the f-system at terminal `h(xi*) + alpha E_g[xi*]`, `sol2` the
/// g-system at terminal `xi*`.
#[allow(clippy::too_many_arguments)]
pub fn solve_variational(
    tree: &PathTree,
    f: &Generator,
    g: &Generator,
    h: &TerminalFunction,
    sol1: &BsdeSolution,
    sol2: &BsdeSolution,
    direction: &TerminalField,
    alpha: f64,
) -> Result<VariationalSolution> {
    let (y2, z2) = solve_linear_frozen(tree, g, sol2, direction.values())?;
    let y2_root = y2.at(0, 0);
    let xi_star = &sol2.terminal;
    let terminal1: Vec<f64> = (0..tree.n_leaves())
        .map(|leaf| h.dx(leaf, xi_star.at(leaf)) * direction.at(leaf) + alpha * y2_root)
        .collect();
    let (y1, z1) = solve_linear_frozen(tree, f, sol1, &terminal1)?;
    Ok(VariationalSolution {
        y1,
        z1,
        y2,
        z2,
        direction: direction.clone(),
        alpha,
    })
}

/// `|E[m(T) * var_terminal] - var_root|`, the residual of the martingale
/// identity `yhat(0) = E[m(T) yhat(T)]`.
pub fn duality_gap(
    tree: &PathTree,
    adj: &AdjointProcess,
    var_terminal: &TerminalField,
    var_root: f64,
) -> Result<f64> {
    let m_t = adj.terminal(tree);
    let product = m_t.zip_map(var_terminal, |a, b| a * b);
    Ok((tree.expectation(&product)? - var_root).abs())
}

/// Numerical Gateaux-derivative check: finite-difference directional
/// derivatives of both value functionals against the variational roots.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rhos: Vec<f64>,
    /// `|(J1(xi* + rho d) - J1(xi*))/rho - yhat1(0)|` per rho.
    pub delta1: Vec<f64>,
    /// `|(E_g[xi* + rho d] - E_g[xi*])/rho - yhat2(0)|` per rho.
    pub delta2: Vec<f64>,
    /// Empirical order: slope of log|delta| vs log rho (None if all deltas
    /// are at noise level).
    pub slope1: Option<f64>,
    pub slope2: Option<f64>,
}

fn log_slope(rhos: &[f64], deltas: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rhos
        .iter()
        .zip(deltas)
        .filter(|(_, &d)| d > 1e-13)
        .map(|(&r, &d)| (r.ln(), d.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Composite objective `E_f[h(xi) + alpha E_g[xi]]`.
pub fn composite_objective(
    tree: &PathTree,
    f: &Generator,
    g: &Generator,
    h: &TerminalFunction,
    xi: &TerminalField,
    alpha: f64,
) -> Result<f64> {
    let eg = crate::bsde::g_expectation(tree, g, xi)?;
    let terminal1 =
        TerminalField::new((0..tree.n_leaves()).map(|l| h.eval(l, xi.at(l)) + alpha * eg).collect());
    crate::bsde::g_expectation(tree, f, &terminal1)
}

#[allow(clippy::too_many_arguments)]
pub fn gateaux_check(
    tree: &PathTree,
    f: &Generator,
    g: &Generator,
    h: &TerminalFunction,
    xi_star: &TerminalField,
    direction: &TerminalField,
    alpha: f64,
    rhos: &[f64],
) -> Result<ConvergenceReport> {
    let eg_star = crate::bsde::g_expectation(tree, g, xi_star)?;
    let sol2 = crate::bsde::solve_bsde(tree, g, xi_star)?;
    let terminal1 = TerminalField::new(
        (0..tree.n_leaves())
            .map(|l| h.eval(l, xi_star.at(l)) + alpha * eg_star)
            .collect(),
    );
    let sol1 = crate::bsde::solve_bsde(tree, f, &terminal1)?;
    let var = solve_variational(tree, f, g, h, &sol1, &sol2, direction, alpha)?;
    let j1_star = sol1.root();

    let mut delta1 = Vec::new();
    let mut delta2 = Vec::new();
    for &rho in rhos {
        let perturbed = xi_star.zip_map(direction, |x, d| x + rho * d);
        if let Some((lo, hi)) = xi_star.bounds() {
            let eps = 1e-12;
            if perturbed
                .values()
                .iter()
                .any(|&v| v < lo - eps || v > hi + eps)
            {
                return Err(Error::BoundViolation);
            }
        }
        let eg_rho = crate::bsde::g_expectation(tree, g, &perturbed)?;
        delta2.push(((eg_rho - eg_star) / rho - var.y2_root()).abs());
        let j1_rho = composite_objective(tree, f, g, h, &perturbed, alpha)?;
        delta1.push(((j1_rho - j1_star) / rho - var.y1_root()).abs());
    }
    let slope1 = log_slope(rhos, &delta1);
    let slope2 = log_slope(rhos, &delta2);
    Ok(ConvergenceReport {
        rhos: rhos.to_vec(),
        delta1,
        delta2,
        slope1,
        slope2,
    })
}
