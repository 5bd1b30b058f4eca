//! Randomized structural properties of the nonlinear expectation, checked
//! over generated terminal data.

use proptest::prelude::*;

use gexp::bsde::{entropic_closed_form, g_expectation, girsanov_expectation};
use gexp::generators::{make_affine_quadratic, make_entropic, make_linear_drift};
use gexp::pathspace::{PathTree, TerminalField};

fn leaf_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 1 << n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn comparison_theorem_entropic(values in leaf_values(6), bumps in prop::collection::vec(0.0..0.5f64, 1 << 6)) {
        let tree = PathTree::build(6, 1.0).unwrap();
        let gen = make_entropic(0.6).unwrap();
        let xi = TerminalField::new(values.clone());
        let xi_up = TerminalField::new(values.iter().zip(&bumps).map(|(x, b)| x + b).collect());
        let lo = g_expectation(&tree, &gen, &xi).unwrap();
        let hi = g_expectation(&tree, &gen, &xi_up).unwrap();
        prop_assert!(lo <= hi + 1e-12);
    }

    #[test]
    fn comparison_theorem_affine_quadratic(values in leaf_values(6), bumps in prop::collection::vec(0.0..0.5f64, 1 << 6)) {
        let tree = PathTree::build(6, 1.0).unwrap();
        let gen = make_affine_quadratic(0.3, 0.5);
        let xi = TerminalField::new(values.clone());
        let xi_up = TerminalField::new(values.iter().zip(&bumps).map(|(x, b)| x + b).collect());
        let lo = g_expectation(&tree, &gen, &xi).unwrap();
        let hi = g_expectation(&tree, &gen, &xi_up).unwrap();
        prop_assert!(lo <= hi + 1e-12);
    }

    #[test]
    fn entropic_cash_additivity(values in leaf_values(6), c in -1.0..1.0f64) {
        let tree = PathTree::build(6, 1.0).unwrap();
        let gen = make_entropic(0.8).unwrap();
        let xi = TerminalField::new(values);
        let base = g_expectation(&tree, &gen, &xi).unwrap();
        let shifted = g_expectation(&tree, &gen, &xi.map(|x| x + c)).unwrap();
        prop_assert!((shifted - base - c).abs() < 1e-9);
    }

    #[test]
    fn entropic_dominates_plain_expectation(values in leaf_values(6), gamma in 0.1..1.5f64) {
        let tree = PathTree::build(6, 1.0).unwrap();
        let xi = TerminalField::new(values);
        let plain = tree.expectation(&xi).unwrap();
        let cert = entropic_closed_form(&tree, gamma, &xi).unwrap();
        prop_assert!(cert >= plain - 1e-12);
    }

    #[test]
    fn linear_generator_expectation_is_affine(values in leaf_values(5), a in 0.0..2.0f64, b in -1.0..1.0f64, mu in -0.5..0.5f64) {
        let tree = PathTree::build(5, 1.0).unwrap();
        let gen = make_linear_drift(mu).unwrap();
        let xi = TerminalField::new(values);
        let base = g_expectation(&tree, &gen, &xi).unwrap();
        let scaled = g_expectation(&tree, &gen, &xi.map(|x| a * x + b)).unwrap();
        prop_assert!((scaled - (a * base + b)).abs() < 1e-9);
    }

    #[test]
    fn girsanov_weights_are_a_probability(values in leaf_values(6), mu in -1.0..1.0f64) {
        let tree = PathTree::build(6, 1.0).unwrap();
        let ones = TerminalField::constant(&tree, 1.0);
        let total = girsanov_expectation(&tree, mu, &ones).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let xi = TerminalField::new(values.clone());
        let bound = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(girsanov_expectation(&tree, mu, &xi).unwrap().abs() <= bound + 1e-12);
    }
}
