//! Differentiable parametric generators with fixed linear cameras and the
//! exact transposed-Jacobian pullback of render-space gradients.

use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::vecmath::{check_dim, dot};
use crate::{Error, Result};

/// A fixed affine view: render = matrix * theta + offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// d rows of p columns, render units per parameter unit.
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl Camera {
    pub fn new(matrix: Vec<Vec<f64>>, offset: Vec<f64>) -> Result<Self> {
        if matrix.is_empty() {
            return Err(Error::Config("camera matrix needs at least one row".into()));
        }
        let p = matrix[0].len();
        if p == 0 || matrix.iter().any(|row| row.len() != p) {
            return Err(Error::Config("camera matrix rows must share one nonzero width".into()));
        }
        if offset.len() != matrix.len() {
            return Err(Error::Config(format!(
                "camera offset dimension {} does not match matrix rows {}",
                offset.len(),
                matrix.len()
            )));
        }
        Ok(Self { matrix, offset })
    }

    fn dims(&self) -> (usize, usize) {
        (self.matrix.len(), self.matrix[0].len())
    }
}

/// g(theta; c). Identity renders theta itself through one implicit camera.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Identity { dim: usize },
    AffineMultiView { cameras: Vec<Camera> },
}

impl Generator {
    pub fn identity(dim: usize) -> Self {
        Generator::Identity { dim }
    }

    pub fn affine(cameras: Vec<Camera>) -> Result<Self> {
        let first = cameras
            .first()
            .ok_or_else(|| Error::Config("generator needs at least one camera".into()))?
            .dims();
        if cameras.iter().any(|c| c.dims() != first) {
            return Err(Error::Config("all cameras must share (d, p)".into()));
        }
        Ok(Generator::AffineMultiView { cameras })
    }

    pub fn n_cameras(&self) -> usize {
        match self {
            Generator::Identity { .. } => 1,
            Generator::AffineMultiView { cameras } => cameras.len(),
        }
    }

    /// Render-space dimension d.
    pub fn dim_render(&self) -> usize {
        match self {
            Generator::Identity { dim } => *dim,
            Generator::AffineMultiView { cameras } => cameras[0].dims().0,
        }
    }

    /// Parameter-space dimension p.
    pub fn dim_params(&self) -> usize {
        match self {
            Generator::Identity { dim } => *dim,
            Generator::AffineMultiView { cameras } => cameras[0].dims().1,
        }
    }

    fn camera(&self, index: usize) -> Result<&Camera> {
        match self {
            Generator::Identity { .. } => {
                Err(Error::Config("identity generator has no explicit cameras".into()))
            }
            Generator::AffineMultiView { cameras } => cameras
                .get(index)
                .ok_or_else(|| Error::Config(format!("camera index {index} out of range"))),
        }
    }

    /// x = g(theta; c).
    pub fn render(&self, theta: &[f64], camera_index: usize) -> Result<Vec<f64>> {
        check_dim(self.dim_params(), theta.len(), "render parameters")?;
        match self {
            Generator::Identity { .. } => {
                if camera_index != 0 {
                    return Err(Error::Config(format!(
                        "camera index {camera_index} out of range for identity generator"
                    )));
                }
                Ok(theta.to_vec())
            }
            Generator::AffineMultiView { .. } => {
                let cam = self.camera(camera_index)?;
                Ok(cam
                    .matrix
                    .iter()
                    .zip(&cam.offset)
                    .map(|(row, off)| dot(row, theta) + off)
                    .collect())
            }
        }
    }

    /// (dx/dtheta)^T delta_x for the given camera.
    pub fn pullback(&self, camera_index: usize, delta_x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim_render(), delta_x.len(), "pullback gradient")?;
        match self {
            Generator::Identity { .. } => {
                if camera_index != 0 {
                    return Err(Error::Config(format!(
                        "camera index {camera_index} out of range for identity generator"
                    )));
                }
                Ok(delta_x.to_vec())
            }
            Generator::AffineMultiView { .. } => {
                let cam = self.camera(camera_index)?;
                let p = self.dim_params();
                let mut out = vec![0.0; p];
                for (row, d) in cam.matrix.iter().zip(delta_x) {
                    for (o, m) in out.iter_mut().zip(row) {
                        *o += m * d;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Seeded generation of k square orthonormal cameras (offsets zero), via
/// Gram-Schmidt on standard-normal draws.
pub fn random_orthonormal_cameras(dim: usize, count: usize, seed: u64) -> Result<Vec<Camera>> {
    if dim == 0 || count == 0 {
        return Err(Error::Config("random-orthonormal preset needs dim > 0 and count > 0".into()));
    }
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut cameras = Vec::with_capacity(count);
    for _ in 0..count {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
        while rows.len() < dim {
            let mut v: Vec<f64> =
                (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            for r in &rows {
                let c = dot(&v, r);
                for (vi, ri) in v.iter_mut().zip(r) {
                    *vi -= c * ri;
                }
            }
            let n = dot(&v, &v).sqrt();
            if n < 1e-8 {
                continue;
            }
            for vi in &mut v {
                *vi /= n;
            }
            rows.push(v);
        }
        cameras.push(Camera::new(rows, vec![0.0; dim])?);
    }
    Ok(cameras)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn diag_cam() -> Camera {
        Camera::new(vec![vec![2.0, 0.0], vec![0.0, 0.5]], vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn identity_render_and_pullback() {
        let g = Generator::identity(2);
        assert_eq!(g.render(&[1.0, 2.0], 0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(g.pullback(0, &[0.3, -0.1]).unwrap(), vec![0.3, -0.1]);
        assert!(g.render(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn affine_degenerate_matches_identity() {
        let cam = Camera::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let g = Generator::affine(vec![cam]).unwrap();
        assert_eq!(g.render(&[3.0, -4.0], 0).unwrap(), vec![3.0, -4.0]);
    }

    #[test]
    fn affine_render_arithmetic() {
        let g = Generator::affine(vec![diag_cam()]).unwrap();
        assert_eq!(g.render(&[3.0, 4.0], 0).unwrap(), vec![7.0, 2.0]);
        assert_eq!(g.pullback(0, &[1.0, 1.0]).unwrap(), vec![2.0, 0.5]);
    }

    #[test]
    fn bad_camera_index_is_error() {
        let g = Generator::affine(vec![diag_cam()]).unwrap();
        assert!(g.render(&[0.0, 0.0], 1).is_err());
        assert!(g.pullback(3, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn pullback_dimension_mismatch() {
        let g = Generator::affine(vec![diag_cam()]).unwrap();
        assert!(matches!(g.pullback(0, &[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn adjoint_identity() {
        // <M u, v> == <u, M^T v> at random points.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let cams = random_orthonormal_cameras(3, 2, 11).unwrap();
        let mut all = cams;
        all.push(Camera::new(
            vec![vec![1.0, 2.0, 0.0], vec![-0.5, 0.3, 4.0], vec![0.0, 0.0, 1.0]],
            vec![0.5, -1.0, 0.0],
        )
        .unwrap());
        let g = Generator::affine(all.clone()).unwrap();
        for c in 0..all.len() {
            for _ in 0..20 {
                let u: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let v: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let mu: Vec<f64> =
                    all[c].matrix.iter().map(|row| dot(row, &u)).collect();
                let lhs = dot(&mu, &v);
                let rhs = dot(&u, &g.pullback(c, &v).unwrap());
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn render_is_affine() {
        let g = Generator::affine(vec![diag_cam()]).unwrap();
        let t1 = [1.5, -2.0];
        let t2 = [0.3, 0.9];
        let sum: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a + b).collect();
        let r_sum = g.render(&sum, 0).unwrap();
        let r1 = g.render(&t1, 0).unwrap();
        let r2 = g.render(&t2, 0).unwrap();
        let r0 = g.render(&[0.0, 0.0], 0).unwrap();
        for i in 0..2 {
            assert!(((r_sum[i] - r2[i]) - (r1[i] - r0[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn pullback_matches_directional_finite_difference() {
        // Oracle: <render(theta + h v) - render(theta), delta> / h
        // converges to <v, pullback(delta)>.
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let cams = random_orthonormal_cameras(3, 1, 5).unwrap();
        let g = Generator::affine(cams).unwrap();
        let h = 1e-6;
        for _ in 0..20 {
            let theta: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let v: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let delta: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let shifted: Vec<f64> =
                theta.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let ra = g.render(&shifted, 0).unwrap();
            let rb = g.render(&theta, 0).unwrap();
            let lhs =
                ra.iter().zip(&rb).zip(&delta).map(|((a, b), d)| (a - b) * d).sum::<f64>() / h;
            let rhs = dot(&v, &g.pullback(0, &delta).unwrap());
            let tol = 1e-5 * rhs.abs().max(1e-6);
            assert!((lhs - rhs).abs() < tol.max(1e-9), "lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn orthonormal_cameras_are_orthonormal_and_seeded() {
        let a = random_orthonormal_cameras(4, 3, 99).unwrap();
        let b = random_orthonormal_cameras(4, 3, 99).unwrap();
        assert_eq!(a, b);
        for cam in &a {
            for i in 0..4 {
                for j in 0..4 {
                    let d = dot(&cam.matrix[i], &cam.matrix[j]);
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((d - expect).abs() < 1e-10);
                }
            }
        }
    }
}
