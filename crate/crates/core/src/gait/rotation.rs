//! Continuous 6D rotation codec: the first two columns of a rotation matrix, decoded by
//! Gram–Schmidt plus a cross product.

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

pub type Rot6 = [f64; 6];

/// Relative length below which a column (or the orthogonal residual of the second column)
/// counts as degenerate.
const DEGENERATE_TOL: f64 = 1e-9;

/// Columns 0 and 1 of `r`, column-major: `(r00, r10, r20, r01, r11, r21)`.
pub fn rot_encode(r: &Matrix3<f64>) -> Rot6 {
    [
        r[(0, 0)],
        r[(1, 0)],
        r[(2, 0)],
        r[(0, 1)],
        r[(1, 1)],
        r[(2, 1)],
    ]
}

pub fn rot_decode(q: &[f64]) -> Result<Matrix3<f64>> {
    Ok(GramSchmidt::new(q)?.matrix())
}

/// Frobenius norm of the difference between the two decoded rotations.
pub fn d_rot(q: &[f64], q2: &[f64]) -> Result<f64> {
    Ok((rot_decode(q)? - rot_decode(q2)?).norm())
}

/// Rotation angle of `a · bᵀ` in radians, in `[0, π]`.
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let m = a * b.transpose();
    let cos = 0.5 * (m.trace() - 1.0);
    let sin = 0.5
        * Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        )
        .norm();
    sin.atan2(cos)
}

/// `Rx(flex) · Ry(abd) · Rz(rot)`, angles in radians.
pub fn joint_rotation(flex: f64, abd: f64, rot: f64) -> Matrix3<f64> {
    let (sx, cx) = flex.sin_cos();
    let (sy, cy) = abd.sin_cos();
    let (sz, cz) = rot.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    rx * ry * rz
}

/// Intermediate values of one decode, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct GramSchmidt {
    b: Vector3<f64>,
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    b3: Vector3<f64>,
    a_norm: f64,
    u_norm: f64,
}

impl GramSchmidt {
    pub(crate) fn new(q: &[f64]) -> Result<Self> {
        if q.len() != 6 {
            return Err(Error::Dimension {
                what: "6D rotation",
                expected: 6,
                got: q.len(),
            });
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("6D rotation".into()));
        }
        let a = Vector3::new(q[0], q[1], q[2]);
        let b = Vector3::new(q[3], q[4], q[5]);
        let a_norm = a.norm();
        let b_norm = b.norm();
        if a_norm <= f64::MIN_POSITIVE || b_norm <= f64::MIN_POSITIVE {
            return Err(Error::DegenerateRotation);
        }
        let b1 = a / a_norm;
        let u = b - b1 * b1.dot(&b);
        let u_norm = u.norm();
        if u_norm <= DEGENERATE_TOL * b_norm {
            return Err(Error::DegenerateRotation);
        }
        let b2 = u / u_norm;
        let b3 = b1.cross(&b2);
        Ok(Self {
            b,
            b1,
            b2,
            b3,
            a_norm,
            u_norm,
        })
    }

    pub(crate) fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.b1, self.b2, self.b3])
    }

    /// Pulls a gradient w.r.t. the decoded matrix back onto the 6D input.
    pub(crate) fn backward(&self, g: &Matrix3<f64>) -> Rot6 {
        let (b1, b2) = (self.b1, self.b2);
        let g3: Vector3<f64> = g.column(2).into();
        // b3 = b1 × b2
        let mut gb1: Vector3<f64> = g.column(0) + b2.cross(&g3);
        let gb2: Vector3<f64> = g.column(1) + g3.cross(&b1);
        // b2 = u / |u|
        let gu = (gb2 - b2 * b2.dot(&gb2)) / self.u_norm;
        // u = b − (b1·b) b1
        let s = b1.dot(&self.b);
        let b1_gu = b1.dot(&gu);
        let gb = gu - b1 * b1_gu;
        gb1 -= gu * s + self.b * b1_gu;
        // b1 = a / |a|
        let ga = (gb1 - b1 * b1.dot(&gb1)) / self.a_norm;
        [ga[0], ga[1], ga[2], gb[0], gb[1], gb[2]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(-3.1..3.1);
        Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
    }

    #[test]
    fn identity_encodes_to_unit_columns() {
        let q = rot_encode(&Matrix3::identity());
        assert_eq!(q, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(rot_decode(&q).unwrap(), Matrix3::identity());
    }

    #[test]
    fn round_trip_many_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let r = random_rotation(&mut rng);
            let back = rot_decode(&rot_encode(&r)).unwrap();
            assert!((back - r).norm() < 1e-12);
        }
    }

    #[test]
    fn scaled_columns_decode_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_rotation(&mut rng);
        let q = rot_encode(&r);
        let scaled: Vec<f64> = q.iter().map(|v| 2.0 * v).collect();
        assert!((rot_decode(&scaled).unwrap() - r).norm() < 1e-12);
    }

    #[test]
    fn parallel_columns_are_degenerate() {
        assert!(matches!(
            rot_decode(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]),
            Err(Error::DegenerateRotation)
        ));
        assert!(matches!(
            rot_decode(&[0.0; 6]),
            Err(Error::DegenerateRotation)
        ));
    }

    #[test]
    fn half_turn_about_z_is_two_root_two_away() {
        let half = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        let d = d_rot(&rot_encode(&Matrix3::identity()), &rot_encode(&half)).unwrap();
        assert!((d - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn geodesic_angle_of_known_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for deg in [0.0, 5.0, 45.0, 179.0] {
            let r = random_rotation(&mut rng);
            let off = r * joint_rotation(f64::to_radians(deg), 0.0, 0.0);
            assert!((geodesic_angle(&r, &off).to_degrees() - deg).abs() < 1e-9);
        }
    }

    #[test]
    fn decode_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let q: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let f = |q: &[f64]| rot_decode(q).unwrap().component_mul(&w).sum();
            let analytic = GramSchmidt::new(&q).unwrap().backward(&w);
            for i in 0..6 {
                let h = 1e-6;
                let mut p = q.clone();
                p[i] += h;
                let mut m = q.clone();
                m[i] -= h;
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                assert!(
                    (fd - analytic[i]).abs() <= 1e-6 * fd.abs().max(1.0),
                    "component {i}: fd {fd} vs {}",
                    analytic[i]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn d_rot_is_symmetric_and_nonnegative(a in any::<u64>(), b in any::<u64>()) {
            let qa = rot_encode(&random_rotation(&mut ChaCha8Rng::seed_from_u64(a)));
            let qb = rot_encode(&random_rotation(&mut ChaCha8Rng::seed_from_u64(b)));
            let ab = d_rot(&qa, &qb).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, d_rot(&qb, &qa).unwrap());
            prop_assert!(d_rot(&qa, &qa).unwrap() < 1e-12);
        }
    }
}
