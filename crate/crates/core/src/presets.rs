//! Built-in worlds used by the experiments and the acceptance suite.
//!
//! Geometry is fixed and regression-tested:
//! - `two-mode-1d`: prompts A, B; A ~ N(-2, 0.25), B ~ N(2, 0.25),
//!   uniform prior, dim 1.
//! - `three-class-1d`: prompts target, near, far; target ~ N(2, 0.1),
//!   near ~ N(2.8, 0.1), far ~ N(-2, 0.1), uniform prior, dim 1.
//! - `grid-2d`: a 3x3 component grid at {-2, 0, 2}^2 in 2D, variance 0.1
//!   per dimension; three prompt classes top / middle / bottom, each owning
//!   one grid row (y = 2 / 0 / -2) as an equal-weight 3-component mixture,
//!   uniform prior.

use crate::world::{Mixture, World};
use crate::Result;

pub const PRESET_NAMES: [&str; 3] = ["two-mode-1d", "three-class-1d", "grid-2d"];

pub fn world_preset(name: &str) -> Option<World> {
    match name {
        "two-mode-1d" => Some(two_mode_1d()),
        "three-class-1d" => Some(three_class_1d()),
        "grid-2d" => Some(grid_2d()),
        _ => None,
    }
}

fn build(prompts: &[&str], mixtures: Vec<Result<Mixture>>) -> World {
    let mixtures: Vec<Mixture> = mixtures.into_iter().map(|m| m.expect("preset")).collect();
    World::uniform_prior(prompts.iter().map(|s| s.to_string()).collect(), mixtures)
        .expect("preset worlds are valid by construction")
}

pub fn two_mode_1d() -> World {
    build(
        &["A", "B"],
        vec![
            Mixture::single(vec![-2.0], vec![0.25]),
            Mixture::single(vec![2.0], vec![0.25]),
        ],
    )
}

pub fn three_class_1d() -> World {
    build(
        &["target", "near", "far"],
        vec![
            Mixture::single(vec![2.0], vec![0.1]),
            Mixture::single(vec![2.8], vec![0.1]),
            Mixture::single(vec![-2.0], vec![0.1]),
        ],
    )
}

pub fn grid_2d() -> World {
    let row = |y: f64| {
        let comps = [-2.0, 0.0, 2.0]
            .iter()
            .map(|&x| {
                crate::world::GaussianComponent::new(vec![x, y], vec![0.1, 0.1]).expect("preset")
            })
            .collect();
        Mixture::new(comps, vec![1.0 / 3.0; 3])
    };
    build(&["top", "middle", "bottom"], vec![row(2.0), row(0.0), row(-2.0)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_lookup() {
        for name in PRESET_NAMES {
            assert!(world_preset(name).is_some(), "{name}");
        }
        assert!(world_preset("no-such").is_none());
    }

    #[test]
    fn two_mode_geometry() {
        let w = two_mode_1d();
        assert_eq!(w.prompts(), &["A".to_string(), "B".to_string()]);
        assert_eq!(w.dim(), 1);
        let b = w.class_mixture("B").unwrap();
        assert_eq!(b.components()[0].mean, vec![2.0]);
        assert_eq!(b.components()[0].var, vec![0.25]);
        assert_eq!(w.prior(), &[0.5, 0.5]);
    }

    #[test]
    fn three_class_geometry() {
        let w = three_class_1d();
        assert_eq!(w.prompts().len(), 3);
        assert_eq!(w.class_mixture("near").unwrap().components()[0].mean, vec![2.8]);
        assert_eq!(w.class_mixture("far").unwrap().components()[0].var, vec![0.1]);
    }

    #[test]
    fn grid_geometry() {
        let w = grid_2d();
        assert_eq!(w.dim(), 2);
        assert_eq!(w.pooled().components().len(), 9);
        let top = w.class_mixture("top").unwrap();
        assert_eq!(top.components().len(), 3);
        for c in top.components() {
            assert_eq!(c.mean[1], 2.0);
        }
    }
}
