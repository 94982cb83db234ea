//! Closed-form Tikhonov reconstructions, solved time node by time node with
//! one dense Cholesky factorization per call.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::fem::SparseMatrix;
use crate::field::SpaceTimeField;
use crate::transfer::TransferMatrix;

fn check(tm: &TransferMatrix, z: &SpaceTimeField, penalties: &[&SparseMatrix]) -> Result<()> {
    if z.n_space() != tm.n_electrodes() {
        return Err(Error::dim("measurement rows", tm.n_electrodes(), z.n_space()));
    }
    for p in penalties {
        if p.nrows() != tm.n_epicardial() || p.ncols() != tm.n_epicardial() {
            return Err(Error::dim("penalty matrix", tm.n_epicardial(), p.nrows()));
        }
    }
    Ok(())
}

fn check_lambda(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("{name} = {v} must be finite and nonnegative")));
    }
    Ok(())
}

/// `1/N_Σ AᵀA + Σ_k c_k P_k`.
pub fn normal_matrix(tm: &TransferMatrix, terms: &[(f64, &SparseMatrix)]) -> DMatrix<f64> {
    let a = tm.a_sigma();
    let mut m = a.tr_mul(a) / tm.n_electrodes() as f64;
    for (c, p) in terms {
        for (i, j, v) in p.triplets() {
            m[(i, j)] += c * v;
        }
    }
    m
}

fn factor(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| {
        Error::Singular("Tikhonov normal matrix is not positive definite; increase the regularization".into())
    })
}

/// `u(t_s) = (1/N_Σ AᵀA + λ_γ M)⁻¹ 1/N_Σ Aᵀ z(t_s)`.
pub fn solve_t0(tm: &TransferMatrix, z: &SpaceTimeField, lambda_gamma: f64, mass: &SparseMatrix) -> Result<SpaceTimeField> {
    check(tm, z, &[mass])?;
    check_lambda("λ_γ", lambda_gamma)?;
    let chol = factor(normal_matrix(tm, &[(lambda_gamma, mass)]))?;
    let rhs = tm.a_sigma().tr_mul(&z.matrix()) / tm.n_electrodes() as f64;
    Ok(SpaceTimeField::from_matrix(&chol.solve(&rhs)))
}

/// As [`solve_t0`] with the surface stiffness (minus the discrete Laplacian)
/// as penalty, which leaves constants unpenalized.
pub fn solve_t1s(
    tm: &TransferMatrix,
    z: &SpaceTimeField,
    lambda_gamma: f64,
    stiffness: &SparseMatrix,
) -> Result<SpaceTimeField> {
    check(tm, z, &[stiffness])?;
    check_lambda("λ_γ", lambda_gamma)?;
    let chol = factor(normal_matrix(tm, &[(lambda_gamma, stiffness)]))?;
    let rhs = tm.a_sigma().tr_mul(&z.matrix()) / tm.n_electrodes() as f64;
    Ok(SpaceTimeField::from_matrix(&chol.solve(&rhs)))
}

/// Sequential sweep
/// `u(t_s) = (1/N_Σ AᵀA + λ_γ K + λ_t M)⁻¹ (1/N_Σ Aᵀ z(t_s) + λ_t M u(t_{s−1}))`
/// from `u(t_{−1}) = 0`.
pub fn solve_t1st(
    tm: &TransferMatrix,
    z: &SpaceTimeField,
    lambda_gamma: f64,
    lambda_t: f64,
    mass: &SparseMatrix,
    stiffness: &SparseMatrix,
) -> Result<SpaceTimeField> {
    check(tm, z, &[mass, stiffness])?;
    check_lambda("λ_γ", lambda_gamma)?;
    check_lambda("λ_t", lambda_t)?;
    if lambda_gamma == 0.0 && lambda_t == 0.0 {
        return Err(Error::Config("λ_γ and λ_t cannot both vanish".into()));
    }
    let chol = factor(normal_matrix(tm, &[(lambda_gamma, stiffness), (lambda_t, mass)]))?;
    let mut rhs = tm.a_sigma().tr_mul(&z.matrix()) / tm.n_electrodes() as f64;
    let nv = tm.n_epicardial();
    let mut prev = vec![0.0; nv];
    for s in 0..z.n_time() {
        let mut col = rhs.column_mut(s);
        if lambda_t != 0.0 {
            let mp = mass.mul_vec(&prev);
            for (c, v) in col.iter_mut().zip(mp) {
                *c += lambda_t * v;
            }
        }
        chol.solve_mut(&mut col);
        prev.copy_from_slice(col.as_slice());
    }
    Ok(SpaceTimeField::from_matrix(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_surface_mass_p1, assemble_surface_stiffness_p1, SurfaceGeometry};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring(nv: usize) -> SurfaceGeometry {
        let points: Vec<[f64; 2]> = (0..nv)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / nv as f64;
                [a.cos(), a.sin()]
            })
            .collect();
        let segments: Vec<[usize; 2]> = (0..nv).map(|l| [l, (l + 1) % nv]).collect();
        let lengths: Vec<f64> = segments
            .iter()
            .map(|&[a, b]| (points[b][0] - points[a][0]).hypot(points[b][1] - points[a][1]))
            .collect();
        let tangents = vec![[1.0, 0.0]; nv];
        SurfaceGeometry {
            points,
            segments,
            lengths,
            tangents,
        }
    }

    struct Setup {
        tm: TransferMatrix,
        mass: SparseMatrix,
        stiff: SparseMatrix,
        z: SpaceTimeField,
    }

    fn setup() -> Setup {
        let (nv, ns, nt) = (10, 4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // rows summing to one, like a real transfer matrix
        let mut a = DMatrix::from_fn(ns, nv, |_, _| rng.random_range(0.0..1.0));
        for mut r in a.row_iter_mut() {
            let s: f64 = r.sum();
            r /= s;
        }
        let s = ring(nv);
        Setup {
            tm: TransferMatrix::from_matrix(a),
            mass: assemble_surface_mass_p1(&s).unwrap(),
            stiff: assemble_surface_stiffness_p1(&s).unwrap(),
            z: SpaceTimeField::from_fn(ns, nt, |_, _| rng.random_range(-5.0..5.0)),
        }
    }

    fn residual(m: &DMatrix<f64>, u: &[f64], rhs: &DVector<f64>) -> f64 {
        (m * DVector::from_column_slice(u) - rhs).norm() / rhs.norm()
    }

    #[test]
    fn normal_equations_hold() {
        let st = setup();
        let n = st.tm.n_electrodes() as f64;
        let a = st.tm.a_sigma();
        let (lg, lt) = (0.05, 0.3);
        let u0 = solve_t0(&st.tm, &st.z, lg, &st.mass).unwrap();
        let u1 = solve_t1s(&st.tm, &st.z, lg, &st.stiff).unwrap();
        let u2 = solve_t1st(&st.tm, &st.z, lg, lt, &st.mass, &st.stiff).unwrap();
        let m0 = a.tr_mul(a) / n + st.mass.to_dense() * lg;
        let m1 = a.tr_mul(a) / n + st.stiff.to_dense() * lg;
        let m2 = &m1 + st.mass.to_dense() * lt;
        for s in 0..st.z.n_time() {
            let b = a.transpose() * DVector::from_column_slice(st.z.time_slice(s)) / n;
            assert!(residual(&m0, u0.time_slice(s), &b) < 1e-12);
            assert!(residual(&m1, u1.time_slice(s), &b) < 1e-12);
            let prev = if s == 0 {
                DVector::zeros(10)
            } else {
                DVector::from_column_slice(u2.time_slice(s - 1))
            };
            let b2 = &b + st.mass.to_dense() * prev * lt;
            assert!(residual(&m2, u2.time_slice(s), &b2) < 1e-12);
        }
    }

    #[test]
    fn t1st_without_time_weight_equals_t1s() {
        let st = setup();
        let a = solve_t1s(&st.tm, &st.z, 0.02, &st.stiff).unwrap();
        let b = solve_t1st(&st.tm, &st.z, 0.02, 0.0, &st.mass, &st.stiff).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn constants_survive_the_laplacian_penalty() {
        let st = setup();
        let c = SpaceTimeField::from_fn(10, 3, |_, _| -3.25);
        let z = st.tm.apply(&c).unwrap();
        for lambda in [1e-6, 1.0, 1e4] {
            let u = solve_t1s(&st.tm, &z, lambda, &st.stiff).unwrap();
            assert!(u.as_slice().iter().all(|v| (v + 3.25).abs() < 1e-8), "λ = {lambda}");
        }
    }

    #[test]
    fn penalty_dominance() {
        let st = setup();
        let big = solve_t0(&st.tm, &st.z, 1e6, &st.mass).unwrap();
        let small = solve_t0(&st.tm, &st.z, 1e-6, &st.mass).unwrap();
        assert!(big.norm2() <= 1e-3 * small.norm2());
        let flat = solve_t1st(&st.tm, &st.z, 1e-3, 1e6, &st.mass, &st.stiff).unwrap();
        let scale = solve_t1st(&st.tm, &st.z, 1e-3, 1e-6, &st.mass, &st.stiff).unwrap().max_abs();
        for s in 1..flat.n_time() {
            let d = flat
                .time_slice(s)
                .iter()
                .zip(flat.time_slice(s - 1))
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(d <= 1e-3 * scale);
        }
        assert!(flat.time_slice(0).iter().all(|v| v.abs() < 1e-3 * st.z.max_abs()));
    }

    #[test]
    fn linear_in_the_data() {
        let st = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z2 = SpaceTimeField::from_fn(4, 6, |_, _| rng.random_range(-1.0..1.0));
        let zs = SpaceTimeField::from_fn(4, 6, |i, s| 2.0 * st.z.get(i, s) - 0.5 * z2.get(i, s));
        let f = |z: &SpaceTimeField| solve_t1st(&st.tm, z, 0.01, 0.1, &st.mass, &st.stiff).unwrap();
        let (a, b, c) = (f(&st.z), f(&z2), f(&zs));
        for k in 0..a.len() {
            let lin = 2.0 * a.as_slice()[k] - 0.5 * b.as_slice()[k];
            assert!((lin - c.as_slice()[k]).abs() <= 1e-12 * (1.0 + lin.abs()));
        }
    }

    #[test]
    fn rank_deficient_without_penalty_is_singular() {
        let st = setup();
        assert!(matches!(solve_t0(&st.tm, &st.z, 0.0, &st.mass), Err(Error::Singular(_))));
        assert!(solve_t1st(&st.tm, &st.z, 0.0, 0.0, &st.mass, &st.stiff).is_err());
    }
}
