//! Backward induction for quadratic BSDEs on the tree, g-expectations, and
//! their closed-form oracles.
//!
//! One step of the scheme, at node `(k, i)` with children `y_u`, `y_d`:
//!
//! ```text
//! z_k = (y_u - y_d) / (2 sqrt(dt))
//! y_k = (y_u + y_d)/2 + g(t_k, y_k, z_k) * dt     (implicit in y)
//! ```
//!
//! The scalar fixed point in `y` is a contraction because `|g_y| <= C` and
//! we require `C * dt < 0.5`. The scheme is exact for drivers that are
//! linear in `z` with `g_y = 0`, which is what makes the Girsanov
//! cross-check an equality rather than a convergence statement.

use crate::error::{Error, Result};
use crate::generators::{Generator, Site};
use crate::pathspace::{AdaptedField, PathTree, TerminalField};

/// Absolute tolerance of the per-node implicit fixed point.
pub const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_MAX_ITERS: usize = 100;

/// Solution `(y, z)` of a BSDE on the tree.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    /// Adapted value process over levels `0..=N`.
    pub y: AdaptedField,
    /// Adapted control process over levels `0..N` (empty range if N = 0).
    pub z: AdaptedField,
    /// The terminal data the sweep started from.
    pub terminal: TerminalField,
    /// Largest fixed-point residual encountered across nodes.
    pub residual_max: f64,
}

impl BsdeSolution {
    pub fn root(&self) -> f64 {
        self.y.at(0, 0)
    }
}

fn check_contraction(tree: &PathTree, gen: &Generator) -> Result<()> {
    let margin = gen.growth_constant() * tree.dt();
    if margin >= 0.5 {
        return Err(Error::ContractionViolated(margin));
    }
    Ok(())
}

/// Backward sweep from terminal data at level `N` down to the root.
pub fn solve_bsde(tree: &PathTree, gen: &Generator, terminal: &TerminalField) -> Result<BsdeSolution> {
    if terminal.len() != tree.n_leaves() {
        return Err(Error::ShapeMismatch {
            expected: tree.n_leaves(),
            got: terminal.len(),
        });
    }
    let (y, z, residual_max) = sweep(tree, gen, terminal.values(), tree.n_steps())?;
    Ok(BsdeSolution {
        y,
        z,
        terminal: terminal.clone(),
        residual_max,
    })
}

/// Backward sweep from given data at an arbitrary level (used by the flow
/// property and by conditional g-expectations of sub-horizons).
pub fn sweep(
    tree: &PathTree,
    gen: &Generator,
    top_values: &[f64],
    top_level: usize,
) -> Result<(AdaptedField, AdaptedField, f64)> {
    check_contraction(tree, gen)?;
    if top_values.len() != tree.nodes_at(top_level) {
        return Err(Error::ShapeMismatch {
            expected: tree.nodes_at(top_level),
            got: top_values.len(),
        });
    }
    let dt = tree.dt();
    let sqrt_dt = tree.sqrt_dt();
    let mut y_levels: Vec<Vec<f64>> = vec![top_values.to_vec()];
    let mut z_levels: Vec<Vec<f64>> = Vec::new();
    let mut residual_max = 0.0f64;

    for k in (0..top_level).rev() {
        let child = &y_levels[0];
        let t = tree.time_at(k);
        let n = tree.nodes_at(k);
        let mut y_row = Vec::with_capacity(n);
        let mut z_row = Vec::with_capacity(n);
        for i in 0..n {
            let y_u = child[2 * i];
            let y_d = child[2 * i + 1];
            let z = (y_u - y_d) / (2.0 * sqrt_dt);
            let mean = 0.5 * (y_u + y_d);
            let site = Site { level: k, node: i };
            let y = solve_node(gen, site, t, mean, z, dt)?;
            residual_max = residual_max.max((y - mean - gen.eval(site, t, y, z) * dt).abs());
            y_row.push(y);
            z_row.push(z);
        }
        y_levels.insert(0, y_row);
        z_levels.insert(0, z_row);
    }

    let y = AdaptedField::from_levels(0, y_levels);
    let z = if top_level == 0 {
        AdaptedField::from_levels(0, vec![vec![0.0]])
    } else {
        AdaptedField::from_levels(0, z_levels)
    };
    Ok((y, z, residual_max))
}

/// Scalar implicit step `y = mean + g(t, y, z) dt` by damped Picard
/// iteration.
fn solve_node(gen: &Generator, site: Site, t: f64, mean: f64, z: f64, dt: f64) -> Result<f64> {
    let mut y = mean;
    for _ in 0..FIXED_POINT_MAX_ITERS {
        let next = mean + gen.eval(site, t, y, z) * dt;
        if (next - y).abs() <= FIXED_POINT_TOL {
            return Ok(next);
        }
        y = next;
    }
    Err(Error::FixedPointDiverged(FIXED_POINT_MAX_ITERS))
}

/// `E_g[xi] := y(0)` of the BSDE with terminal `xi`.
pub fn g_expectation(tree: &PathTree, gen: &Generator, terminal: &TerminalField) -> Result<f64> {
    Ok(solve_bsde(tree, gen, terminal)?.root())
}

/// The process `E_g[xi | F_t]` truncated at the given level.
pub fn conditional_g_expectation(
    tree: &PathTree,
    gen: &Generator,
    terminal: &TerminalField,
    level: usize,
) -> Result<AdaptedField> {
    if level > tree.n_steps() {
        return Err(Error::LevelOutOfRange {
            level,
            lo: 0,
            hi: tree.n_steps(),
        });
    }
    let sol = solve_bsde(tree, gen, terminal)?;
    Ok(sol.y.truncated(level))
}

/// Exponential-transform value `(1/2 gamma) ln E[e^{2 gamma xi}]`, the
/// continuous-time closed form of the entropic g-expectation.
pub fn entropic_closed_form(
    tree: &PathTree,
    gamma: f64,
    terminal: &TerminalField,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::NonPositiveParameter(gamma));
    }
    let peak = terminal.values().iter().cloned().fold(f64::MIN, f64::max);
    if 2.0 * gamma * peak > 700.0 {
        return Err(Error::OverflowGuard(2.0 * gamma * peak));
    }
    let p = tree.leaf_probability();
    let sum: f64 = terminal
        .values()
        .iter()
        .map(|&x| p * (2.0 * gamma * x).exp())
        .sum();
    Ok(sum.ln() / (2.0 * gamma))
}

/// Expectation of a terminal field under the discrete drift-changed measure:
/// child weights `((1 + mu sqrt(dt))/2, (1 - mu sqrt(dt))/2)` on the up and
/// down branch. This is the measure under which the linear-driver
/// g-expectation with `g = mu z` is the plain expectation, so the two agree
/// exactly on the tree.
pub fn girsanov_expectation(tree: &PathTree, mu: f64, terminal: &TerminalField) -> Result<f64> {
    if terminal.len() != tree.n_leaves() {
        return Err(Error::ShapeMismatch {
            expected: tree.n_leaves(),
            got: terminal.len(),
        });
    }
    let step = mu * tree.sqrt_dt();
    if step.abs() >= 1.0 {
        return Err(Error::StepTooCoarse(step.abs()));
    }
    let w_up = 0.5 * (1.0 + step);
    let w_down = 0.5 * (1.0 - step);
    let mut values = terminal.values().to_vec();
    for k in (0..tree.n_steps()).rev() {
        values = (0..tree.nodes_at(k))
            .map(|i| w_up * values[2 * i] + w_down * values[2 * i + 1])
            .collect();
    }
    Ok(values[0])
}

/// Leafwise density `dQ/dP` of the drift-changed measure; mean one exactly.
pub fn girsanov_density(tree: &PathTree, mu: f64) -> Result<TerminalField> {
    let step = mu * tree.sqrt_dt();
    if step.abs() >= 1.0 {
        return Err(Error::StepTooCoarse(step.abs()));
    }
    let n = tree.n_steps();
    Ok(TerminalField::from_fn(tree, |leaf| {
        (0..n)
            .map(|j| 1.0 + step * tree.increment_sign(n, leaf, j))
            .product()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{make_affine_quadratic, make_entropic, make_linear_drift};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_terminal(tree: &PathTree, rng: &mut impl Rng, amplitude: f64) -> TerminalField {
        TerminalField::new(
            (0..tree.n_leaves())
                .map(|_| rng.gen_range(-amplitude..amplitude))
                .collect(),
        )
    }

    #[test]
    fn constant_terminal_is_fixed_point() {
        let tree = PathTree::build(6, 1.0).unwrap();
        for gen in [make_entropic(1.0).unwrap(), make_linear_drift(0.3).unwrap()] {
            let sol = solve_bsde(&tree, &gen, &TerminalField::constant(&tree, 2.5)).unwrap();
            for k in 0..=6 {
                for i in 0..tree.nodes_at(k) {
                    assert!((sol.y.at(k, i) - 2.5).abs() < 1e-12);
                }
            }
            for k in 0..6 {
                for i in 0..tree.nodes_at(k) {
                    assert_eq!(sol.z.at(k, i), 0.0);
                }
            }
        }
    }

    #[test]
    fn solution_invariants_hold() {
        let tree = PathTree::build(8, 1.0).unwrap();
        let gen = make_affine_quadratic(0.2, 0.5);
        let terminal = tree.w_terminal().map(|w| w.tanh());
        let sol = solve_bsde(&tree, &gen, &terminal).unwrap();
        // terminal level equals the data exactly
        for (i, &v) in terminal.values().iter().enumerate() {
            assert_eq!(sol.y.at(8, i), v);
        }
        // one-step relation and z definition
        let dt = tree.dt();
        for k in 0..8 {
            for i in 0..tree.nodes_at(k) {
                let y_u = sol.y.at(k + 1, 2 * i);
                let y_d = sol.y.at(k + 1, 2 * i + 1);
                let z = sol.z.at(k, i);
                assert_eq!(z, (y_u - y_d) / (2.0 * tree.sqrt_dt()));
                let site = Site { level: k, node: i };
                let res = sol.y.at(k, i)
                    - 0.5 * (y_u + y_d)
                    - gen.eval(site, tree.time_at(k), sol.y.at(k, i), z) * dt;
                assert!(res.abs() <= 1e-11);
            }
        }
        assert!(sol.residual_max <= 1e-11);
    }

    #[test]
    fn contraction_precondition_enforced() {
        let tree = PathTree::build(2, 1.0).unwrap();
        // C = 2 gamma = 2, dt = 0.5 -> C dt = 1 >= 0.5
        let gen = make_entropic(1.0).unwrap();
        assert!(matches!(
            solve_bsde(&tree, &gen, &TerminalField::constant(&tree, 0.0)),
            Err(Error::ContractionViolated(_))
        ));
    }

    #[test]
    fn entropic_matches_closed_form_at_first_order() {
        // discretization error O(dt), with order-1 convergence
        let gamma = 0.5;
        let gen = make_entropic(gamma).unwrap();
        let mut errors = Vec::new();
        for n in [10, 20] {
            let tree = PathTree::build(n, 1.0).unwrap();
            let xi = tree.w_terminal().map(|w| w.tanh());
            let num = g_expectation(&tree, &gen, &xi).unwrap();
            let exact = entropic_closed_form(&tree, gamma, &xi).unwrap();
            let bound = 5.0 * tree.dt() * (1.0 + xi.max_abs()).powi(2);
            assert!((num - exact).abs() <= bound, "n={n}: {}", (num - exact).abs());
            errors.push((num - exact).abs());
        }
        let ratio = errors[0] / errors[1];
        assert!((1.6..=2.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn linear_driver_matches_girsanov_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [4, 9, 12] {
            let tree = PathTree::build(n, 1.0).unwrap();
            let xi = random_terminal(&tree, &mut rng, 2.0);
            for mu in [-0.5, 0.0, 0.2, 0.8] {
                let gen = make_linear_drift(mu).unwrap();
                let via_bsde = g_expectation(&tree, &gen, &xi).unwrap();
                let via_q = girsanov_expectation(&tree, mu, &xi).unwrap();
                assert!(
                    (via_bsde - via_q).abs() <= 1e-10,
                    "n={n} mu={mu}: {}",
                    (via_bsde - via_q).abs()
                );
            }
        }
    }

    #[test]
    fn girsanov_of_wt_is_mu_t() {
        // with driver g = mu z the value of W_T is +mu*T, exactly, at any N
        let tree = PathTree::build(10, 1.0).unwrap();
        let wt = tree.w_terminal();
        let v = girsanov_expectation(&tree, 0.2, &wt).unwrap();
        assert!((v - 0.2).abs() <= 1e-13, "{v}");
        let gen = make_linear_drift(0.2).unwrap();
        let y0 = g_expectation(&tree, &gen, &wt).unwrap();
        assert!((y0 - 0.2).abs() <= 1e-12, "{y0}");
        // mu = 0 reduces to the plain expectation
        let plain = girsanov_expectation(&tree, 0.0, &wt).unwrap();
        assert!(plain.abs() < 1e-14);
    }

    #[test]
    fn girsanov_density_is_mean_one_and_consistent() {
        let tree = PathTree::build(7, 1.0).unwrap();
        let d = girsanov_density(&tree, 0.4).unwrap();
        assert!((tree.expectation(&d).unwrap() - 1.0).abs() <= 1e-13);
        let xi = tree.w_terminal().map(|w| w * w - w);
        let via_density = tree.expectation(&d.zip_map(&xi, |a, b| a * b)).unwrap();
        let via_sweep = girsanov_expectation(&tree, 0.4, &xi).unwrap();
        assert!((via_density - via_sweep).abs() <= 1e-12);
    }

    #[test]
    fn girsanov_step_too_coarse() {
        let tree = PathTree::build(2, 8.0).unwrap(); // sqrt(dt) = 2
        assert!(matches!(
            girsanov_expectation(&tree, 0.6, &TerminalField::constant(&tree, 1.0)),
            Err(Error::StepTooCoarse(_))
        ));
    }

    #[test]
    fn closed_form_values() {
        let tree = PathTree::build(9, 1.0).unwrap(); // odd depth: P(W_T > 0) = 1/2
        let xi = TerminalField::indicator_wt_positive(&tree);
        let v = entropic_closed_form(&tree, 1.0, &xi).unwrap();
        let expected = 0.5 * ((1f64.exp().powi(2) + 1.0) / 2.0).ln();
        assert!((v - expected).abs() <= 1e-13, "{v} vs {expected}");
        // constant passes through
        let c = entropic_closed_form(&tree, 2.0, &TerminalField::constant(&tree, 0.7)).unwrap();
        assert!((c - 0.7).abs() <= 1e-13);
        // Jensen
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let xi = random_terminal(&tree, &mut rng, 3.0);
            let cf = entropic_closed_form(&tree, 1.0, &xi).unwrap();
            assert!(cf >= tree.expectation(&xi).unwrap() - 1e-12);
        }
        // overflow guard
        let big = TerminalField::constant(&tree, 400.0);
        assert!(matches!(
            entropic_closed_form(&tree, 1.0, &big),
            Err(Error::OverflowGuard(_))
        ));
    }

    #[test]
    fn normalization_for_zero_at_zero_generators() {
        let tree = PathTree::build(10, 1.0).unwrap();
        for gen in [
            make_entropic(0.3).unwrap(),
            make_entropic(2.0).unwrap(),
            make_linear_drift(-0.4).unwrap(),
        ] {
            let v = g_expectation(&tree, &gen, &TerminalField::constant(&tree, -1.3)).unwrap();
            assert!((v - (-1.3)).abs() <= 1e-12, "{gen:?}");
        }
        // affine-quadratic with a != 0 loses the normalization
        let gen = make_affine_quadratic(0.3, 0.2);
        let v = g_expectation(&tree, &gen, &TerminalField::constant(&tree, 1.0)).unwrap();
        assert!((v - 1.0).abs() > 1e-3, "normalization unexpectedly held: {v}");
    }

    #[test]
    fn comparison_monotonicity() {
        let tree = PathTree::build(7, 1.0).unwrap();
        let gen = make_entropic(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let lo = random_terminal(&tree, &mut rng, 2.0);
            let bump = rng.gen_range(0.0..1.5);
            let hi = lo.map(|v| v + bump);
            let e_lo = g_expectation(&tree, &gen, &lo).unwrap();
            let e_hi = g_expectation(&tree, &gen, &hi).unwrap();
            assert!(e_lo <= e_hi + 1e-12);
        }
    }

    #[test]
    fn flow_property_is_exact() {
        let tree = PathTree::build(8, 1.0).unwrap();
        let gen = make_entropic(1.0).unwrap();
        let xi = tree.w_terminal().map(|w| (w * 0.9).cos());
        let full = solve_bsde(&tree, &gen, &xi).unwrap();
        for level in [2, 4] {
            let mid = conditional_g_expectation(&tree, &gen, &xi, level).unwrap();
            let (resolved, _, _) = sweep(&tree, &gen, mid.level(level), level).unwrap();
            for k in 0..=level {
                for i in 0..tree.nodes_at(k) {
                    assert!(
                        (resolved.at(k, i) - full.y.at(k, i)).abs() <= 1e-12,
                        "level {level} k {k}"
                    );
                }
            }
        }
        // level N returns the terminal itself; level 0 the g-expectation
        let at_n = conditional_g_expectation(&tree, &gen, &xi, 8).unwrap();
        for (i, &v) in xi.values().iter().enumerate() {
            assert_eq!(at_n.at(8, i), v);
        }
        let at_0 = conditional_g_expectation(&tree, &gen, &xi, 0).unwrap();
        assert_eq!(at_0.at(0, 0), full.root());
    }

    #[test]
    fn apriori_bound_on_y() {
        let tree = PathTree::build(10, 1.0).unwrap();
        let gen = make_affine_quadratic(0.4, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let xi = random_terminal(&tree, &mut rng, 1.5);
            let sol = solve_bsde(&tree, &gen, &xi).unwrap();
            let c = gen.growth_constant();
            let t = tree.horizon();
            let bound = (xi.max_abs() + c * t) * (c * t).exp();
            assert!(sol.y.max_abs() <= bound + 1e-9);
        }
    }
}
