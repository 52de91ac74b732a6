//! Reference layouts shipped with the crate as data files.

use crate::env::{parse_layout, Layout};

/// 16x16 single-zone task: agents exit a bottom room one by one through a
/// one-cell door, fetch the goods on the right, and carry them to the
/// top-left zone. Joint-optimal solution: 33 steps.
pub const ORIGINAL: &str = include_str!("../layouts/original.txt");

/// 16x16 variant with two three-cell-wide passages between the goods and
/// the zone, forcing sustained coordination during the carry phase.
pub const NARROW: &str = include_str!("../layouts/narrow.txt");

/// 16x16 two-zone variant: zone A pays 0.8 deterministically, zone B pays
/// 1.0 on 60% of deliveries and 0.4 otherwise (expected 0.76), equidistant
/// from the goods.
pub const STOCHASTIC: &str = include_str!("../layouts/stochastic.txt");

/// 10x10 reduced task for desk-scale runs: agents start on the flanking
/// cells, the zone spans the top row.
pub const DESK: &str = include_str!("../layouts/desk.txt");

/// Resolves a built-in layout by name.
pub fn builtin(name: &str) -> Option<&'static str> {
    match name {
        "original" => Some(ORIGINAL),
        "narrow" => Some(NARROW),
        "stochastic" => Some(STOCHASTIC),
        "desk" => Some(DESK),
        _ => None,
    }
}

pub fn builtin_names() -> &'static [&'static str] {
    &["original", "narrow", "stochastic", "desk"]
}

/// Parses a built-in layout; panics only on a corrupted bundled file.
pub fn load_builtin(name: &str) -> Option<Layout> {
    builtin(name).map(|text| parse_layout(text).expect("bundled layout parses"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Cmotp;
    use crate::oracle::bfs_optimal_steps;

    #[test]
    fn all_builtins_parse() {
        for name in builtin_names() {
            let layout = load_builtin(name).unwrap();
            assert!(layout.width >= 10 && layout.height >= 10, "{name}");
        }
    }

    #[test]
    fn original_optimum_is_33() {
        let env = Cmotp::new(load_builtin("original").unwrap());
        assert_eq!(bfs_optimal_steps(&env), Some(33));
    }

    #[test]
    fn narrow_and_stochastic_are_solvable() {
        let narrow = Cmotp::new(load_builtin("narrow").unwrap());
        assert!(bfs_optimal_steps(&narrow).is_some());
        let stochastic = Cmotp::new(load_builtin("stochastic").unwrap());
        assert!(bfs_optimal_steps(&stochastic).is_some());
    }

    #[test]
    fn desk_layout_is_small_and_quick() {
        let env = Cmotp::new(load_builtin("desk").unwrap());
        let steps = bfs_optimal_steps(&env).unwrap();
        assert!(steps <= 10, "desk optimum {steps}");
    }

    #[test]
    fn stochastic_zone_expectations() {
        let layout = load_builtin("stochastic").unwrap();
        let a = &layout.dropzones[0];
        let b = &layout.dropzones[1];
        assert_eq!(a.id, 'A');
        assert_eq!(b.id, 'B');
        assert!((a.reward.expected_value() - 0.8).abs() < 1e-12);
        assert!((b.reward.expected_value() - 0.76).abs() < 1e-12);
        assert_eq!(layout.best_dropzone(), 0);
    }
}
