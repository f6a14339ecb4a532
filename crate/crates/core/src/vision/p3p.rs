//! Direct P3P through intermediate frames.
//!
//! An intermediate camera frame is built from the first two bearings and an
//! intermediate target frame from the first two markers. The pose between
//! the two frames is parametrised by the angle of the plane through the
//! camera centre and the first two markers; its cosine is the root of a
//! quartic. Each real root yields rotation and camera position directly.
//!
//! Roots come from the eigenvalues of the companion matrix and are polished
//! by Newton's method; the marker depths of every solution are then refined
//! against the three inter-marker distances and the pose is rebuilt from the
//! two point triads, which brings noiseless round trips to machine precision.

use nalgebra::{linalg::Schur, Complex, DMatrix, Matrix3, Vector3};

use super::{Correspondence, PoseCandidate};
use crate::error::{Error, Result};

/// All real solutions of the three-point pose problem.
pub fn p3p_solve(corr: &[Correspondence; 3]) -> Result<Vec<PoseCandidate>> {
    let points = corr.map(|c| c.point);
    let bearings = corr.map(|c| c.bearing());
    if corr
        .iter()
        .any(|c| !c.feature.iter().chain(c.point.iter()).all(|v| v.is_finite()))
    {
        return Err(Error::InvalidArgument("non-finite correspondence".into()));
    }

    let scale = (points[1] - points[0])
        .norm()
        .max((points[2] - points[0]).norm());
    let area = (points[1] - points[0]).cross(&(points[2] - points[0])).norm();
    if scale == 0.0 || area <= 1e-10 * scale * scale {
        return Err(Error::DegenerateGeometry("markers are collinear"));
    }
    for i in 0..3 {
        for j in i + 1..3 {
            if bearings[i].cross(&bearings[j]).norm() < 1e-12 {
                return Err(Error::DegenerateGeometry("feature bearings coincide"));
            }
        }
    }

    let mut candidates = Vec::with_capacity(4);
    for (rotation, centre) in kneip(&points, &bearings)? {
        // camera-from-target
        let r_ct = rotation.transpose();
        let t = -r_ct * centre;
        let refined = refine(&points, &bearings, &r_ct, &t).unwrap_or((r_ct, t));
        let mut cand = PoseCandidate {
            rotation: refined.0,
            translation: refined.1,
            residual: 0.0,
        };
        cand.residual = cand.reprojection_rms(corr);
        if cand.rotation.iter().all(|v| v.is_finite()) && cand.translation.iter().all(|v| v.is_finite()) {
            candidates.push(cand);
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoSolution);
    }
    Ok(candidates)
}

fn frame_rows(a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> Matrix3<f64> {
    Matrix3::from_rows(&[a.transpose(), b.transpose(), c.transpose()])
}

/// Returns (world-from-camera rotation, camera centre in target frame) for
/// every real root.
fn kneip(
    points: &[Vector3<f64>; 3],
    bearings: &[Vector3<f64>; 3],
) -> Result<Vec<(Matrix3<f64>, Vector3<f64>)>> {
    let (mut p1, mut p2, p3) = (points[0], points[1], points[2]);
    let (mut f1, mut f2, f3) = (bearings[0], bearings[1], bearings[2]);

    let camera_frame = |f1: Vector3<f64>, f2: Vector3<f64>| {
        let e1 = f1;
        let e3 = f1.cross(&f2).normalize();
        let e2 = e3.cross(&e1);
        frame_rows(e1, e2, e3)
    };
    let mut t = camera_frame(f1, f2);
    let mut f3t = t * f3;
    // keep theta in [0, pi]
    if f3t.z > 0.0 {
        std::mem::swap(&mut f1, &mut f2);
        std::mem::swap(&mut p1, &mut p2);
        t = camera_frame(f1, f2);
        f3t = t * f3;
    }

    let n1 = (p2 - p1).normalize();
    let n3 = n1.cross(&(p3 - p1)).normalize();
    let n2 = n3.cross(&n1);
    let n = frame_rows(n1, n2, n3);
    let p3n = n * (p3 - p1);

    let d12 = (p2 - p1).norm();
    let g1 = f3t.x / f3t.z;
    let g2 = f3t.y / f3t.z;
    let (q1, q2) = (p3n.x, p3n.y);
    let cos_beta = f1.dot(&f2);
    let cot_beta = cos_beta / (1.0 - cos_beta * cos_beta).sqrt();

    // With c = cos(theta), the projection constraints of the third marker
    // give cot(alpha) = a(c) / b(c) with a, b linear in c, and
    //   (q1 b - q2 c a)^2 = g2^2 q2^2 (1 - c^2) (a^2 + b^2).
    let a = [g1 * q1 - g2 * d12 * cot_beta, g2 * q2];
    let b = [g2 * d12 - g2 * q1, g1 * q2];
    let l = [q1 * b[0], q1 * b[1] - q2 * a[0], -q2 * a[1]];
    let k = g2 * g2 * q2 * q2;
    let ab = [
        a[0] * a[0] + b[0] * b[0],
        2.0 * (a[0] * a[1] + b[0] * b[1]),
        a[1] * a[1] + b[1] * b[1],
    ];
    // ascending powers
    let poly = [
        l[0] * l[0] - k * ab[0],
        2.0 * l[0] * l[1] - k * ab[1],
        l[1] * l[1] + 2.0 * l[0] * l[2] - k * (ab[2] - ab[0]),
        2.0 * l[1] * l[2] + k * ab[1],
        l[2] * l[2] + k * ab[2],
    ];

    let mut out = Vec::with_capacity(4);
    for cos_theta in real_poly_roots(&poly) {
        if !(cos_theta.abs() <= 1.0 + 1e-9) {
            continue;
        }
        let cos_theta = cos_theta.clamp(-1.0, 1.0);
        let den = b[0] + b[1] * cos_theta;
        let num = a[0] + a[1] * cos_theta;
        // alpha lies in (0, pi), so sin(alpha) > 0 carries the sign of den
        let h = num.hypot(den);
        if h == 0.0 {
            continue;
        }
        let (sin_alpha, cos_alpha) = (den.abs() / h, num * den.signum() / h);
        let sin_theta = (1.0 - cos_theta * cos_theta).sqrt();
        let k = d12 * (sin_alpha * cot_beta + cos_alpha);
        let c = Vector3::new(
            k * cos_alpha,
            k * sin_alpha * cos_theta,
            k * sin_alpha * sin_theta,
        );
        let centre = p1 + n.transpose() * c;
        let r = Matrix3::new(
            -cos_alpha,
            -sin_alpha * cos_theta,
            -sin_alpha * sin_theta,
            sin_alpha,
            -cos_alpha * cos_theta,
            -cos_alpha * sin_theta,
            0.0,
            -sin_theta,
            cos_theta,
        );
        let rotation = n.transpose() * r.transpose() * t;
        if rotation.iter().chain(centre.iter()).all(|v| v.is_finite()) {
            out.push((rotation, centre));
        }
    }
    Ok(out)
}

/// Value and derivative of a polynomial with ascending coefficients.
fn eval_poly(c: &[f64], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for a in c.iter().rev() {
        dp = dp * x + p;
        p = p * x + a;
    }
    (p, dp)
}

/// Real roots of `c[0] + c[1] x + c[2] x^2 + ...`: eigenvalues of the
/// companion matrix, each polished with Newton steps.
pub fn real_poly_roots(c: &[f64]) -> Vec<f64> {
    if !c.iter().all(|v| v.is_finite()) {
        return Vec::new();
    }
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let Some(deg) = c.iter().rposition(|v| v.abs() > 1e-14 * scale) else {
        return Vec::new();
    };
    if deg == 0 {
        return Vec::new();
    }
    let poly = &c[..=deg];
    let Some(eigen) = companion_eigenvalues(poly) else {
        return Vec::new();
    };
    let mut roots = Vec::with_capacity(deg);
    for z in eigen {
        if z.im.abs() > 1e-6 * (1.0 + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..8 {
            let (p, dp) = eval_poly(poly, x);
            if dp == 0.0 {
                break;
            }
            let next = x - p / dp;
            if !next.is_finite() || eval_poly(poly, next).0.abs() >= p.abs() {
                break;
            }
            x = next;
        }
        roots.push(x);
    }
    roots
}

/// Eigenvalues of the companion matrix of `c` (ascending, non-zero leading
/// coefficient). The unshifted QR iteration can stall on highly symmetric
/// spectra such as that of `x^4 + 1`; in that case the polynomial is
/// re-expanded about a few fixed offsets, which breaks the symmetry.
fn companion_eigenvalues(c: &[f64]) -> Option<Vec<Complex<f64>>> {
    // arbitrary irrational-looking shifts, not the constants they resemble
    #[allow(clippy::approx_constant)]
    const OFFSETS: [f64; 4] = [0.0, 0.3183, -0.5772, 1.4142];
    let deg = c.len() - 1;
    for offset in OFFSETS {
        let shifted = taylor_shift(c, offset);
        let lead = shifted[deg];
        let mut m = DMatrix::<f64>::zeros(deg, deg);
        for j in 0..deg {
            m[(0, j)] = -shifted[deg - 1 - j] / lead;
        }
        for i in 1..deg {
            m[(i, i - 1)] = 1.0;
        }
        if let Some(schur) = Schur::try_new(m, f64::EPSILON, 500) {
            return Some(
                schur
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| z + Complex::new(offset, 0.0))
                    .collect(),
            );
        }
    }
    None
}

/// Coefficients of `p(y + s)` given those of `p(x)`, both ascending.
fn taylor_shift(c: &[f64], s: f64) -> Vec<f64> {
    let mut out = c.to_vec();
    let n = out.len();
    for i in 0..n {
        for j in (i..n - 1).rev() {
            out[j] += s * out[j + 1];
        }
    }
    out
}

/// Gauss-Newton on the marker depths so the three back-projected points
/// reproduce the inter-marker distances, then the pose aligning both triads.
fn refine(
    points: &[Vector3<f64>; 3],
    bearings: &[Vector3<f64>; 3],
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    const PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];
    let mut depth = Vector3::from_fn(|i, _| (rotation * points[i] + translation).dot(&bearings[i]));
    let dist2 = PAIRS.map(|(i, j)| (points[i] - points[j]).norm_squared());
    let cosines = PAIRS.map(|(i, j)| bearings[i].dot(&bearings[j]));
    let residual = |d: &Vector3<f64>| {
        Vector3::from_fn(|k, _| {
            let (i, j) = PAIRS[k];
            d[i] * d[i] + d[j] * d[j] - 2.0 * d[i] * d[j] * cosines[k] - dist2[k]
        })
    };
    let mut r = residual(&depth);
    for _ in 0..5 {
        let mut jac = Matrix3::zeros();
        for (k, (i, j)) in PAIRS.iter().enumerate() {
            jac[(k, *i)] = 2.0 * depth[*i] - 2.0 * depth[*j] * cosines[k];
            jac[(k, *j)] = 2.0 * depth[*j] - 2.0 * depth[*i] * cosines[k];
        }
        let step = jac.lu().solve(&r)?;
        let next = depth - step;
        let rn = residual(&next);
        if !(rn.norm() < r.norm()) {
            break;
        }
        depth = next;
        r = rn;
    }
    if depth.iter().any(|d| !d.is_finite()) {
        return None;
    }
    let cam = [0, 1, 2].map(|i| bearings[i] * depth[i]);
    let triad = |p: &[Vector3<f64>; 3]| {
        let a = (p[1] - p[0]).normalize();
        let c = a.cross(&(p[2] - p[0])).normalize();
        let b = c.cross(&a);
        Matrix3::from_columns(&[a, b, c])
    };
    let r = triad(&cam) * triad(points).transpose();
    let t = cam[0] - r * points[0];
    // average the translation over all three points
    let t = t + ([1, 2].iter().map(|&i| cam[i] - r * points[i] - t).sum::<Vector3<f64>>()) / 3.0;
    if r.iter().chain(t.iter()).all(|v| v.is_finite()) {
        Some((r, t))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_angle_between;
    use nalgebra::{Rotation3, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn correspondences(r: &Matrix3<f64>, t: &Vector3<f64>, pts: &[Vector3<f64>; 3]) -> [Correspondence; 3] {
        pts.map(|p| {
            let c = r * p + t;
            Correspondence {
                point: p,
                feature: Vector2::new(c.x / c.z, c.y / c.z),
            }
        })
    }

    #[test]
    fn quartic_roots_of_known_polynomial() {
        // (x - 1)(x + 2)(x - 0.5)(x - 3)
        let mut r = real_poly_roots(&[-3.0, 8.5, -4.0, -2.5, 1.0]);
        r.sort_by(f64::total_cmp);
        let expected = [-2.0, 0.5, 1.0, 3.0];
        assert_eq!(r.len(), 4);
        for (a, b) in r.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{r:?}");
        }
        // x^4 + 1 has no real roots
        assert!(real_poly_roots(&[1.0, 0.0, 0.0, 0.0, 1.0]).is_empty());
        // a vanishing leading coefficient drops the degree
        let r = real_poly_roots(&[-2.0, 1.0, 0.0]);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn round_trip_contains_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let r = *Rotation3::new(axis * 2.0).matrix();
            let t = Vector3::new(rng.random::<f64>() * 0.4 - 0.2, rng.random::<f64>() * 0.4 - 0.2, 0.8 + rng.random::<f64>());
            let pts = [0, 1, 2].map(|_| Vector3::new(rng.random::<f64>() * 0.2 - 0.1, rng.random::<f64>() * 0.2 - 0.1, rng.random::<f64>() * 0.2 - 0.1));
            if pts.iter().any(|p| (r * p + t).z <= 0.05) {
                continue;
            }
            let c = correspondences(&r, &t, &pts);
            let sols = p3p_solve(&c).unwrap();
            let best = sols
                .iter()
                .map(|s| (rotation_angle_between(&s.rotation, &r), (s.translation - t).norm()))
                .fold((f64::INFINITY, f64::INFINITY), |a, b| if b.0 + b.1 < a.0 + a.1 { b } else { a });
            assert!(best.0 < 1e-8 && best.1 < 1e-8, "{best:?}");
        }
    }

    #[test]
    fn collinear_markers_are_rejected() {
        let pts = [Vector3::zeros(), Vector3::x() * 0.1, Vector3::x() * 0.2];
        let c = correspondences(&Matrix3::identity(), &Vector3::new(0.0, 0.0, 1.0), &pts);
        assert!(matches!(p3p_solve(&c), Err(Error::DegenerateGeometry(_))));
    }
}
