//! Property tests for the linear-algebra primitives, including an independent
//! Jacobi eigensolver used as the oracle for pseudoinverse solves.

use ndarray::{Array1, Array2};
use precond::linalg::{
    conv2d, kron, kron_vec, pinv_solve, translate, DenseMatrix, Image,
};
use proptest::prelude::*;

/// Cyclic Jacobi eigendecomposition, written without reference to the library
/// solver: returns (eigenvalues, eigenvectors as columns).
fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (a[[q, q]] - a[[p, p]]) / a[[p, q]];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigs = (0..n).map(|i| a[[i, i]]).collect();
    (eigs, v)
}

/// Least-norm solve through the Jacobi decomposition.
fn oracle_pinv_solve(m: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let (eigs, v) = jacobi_eigen(m.clone());
    let max_abs = eigs.iter().fold(0.0_f64, |a, e| a.max(e.abs()));
    let cutoff = 1e-12 * max_abs;
    let coeffs = v.t().dot(b);
    let filtered: Array1<f64> = coeffs
        .iter()
        .zip(&eigs)
        .map(|(c, e)| if e.abs() <= cutoff { 0.0 } else { c / e })
        .collect();
    v.dot(&filtered)
}

fn psd_from_factor(entries: &[f64], r: usize, k: usize) -> Array2<f64> {
    let f = Array2::from_shape_vec((r, k), entries.to_vec()).unwrap();
    f.dot(&f.t())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pinv_matches_jacobi_oracle(
        entries in prop::collection::vec(-1.0_f64..1.0, 12),
        rhs in prop::collection::vec(-1.0_f64..1.0, 4),
    ) {
        // Rank-deficient PSD: 4x4 built from a 4x3 factor.
        let m = psd_from_factor(&entries, 4, 3);
        let b = Array1::from_vec(rhs);
        let got = pinv_solve(&DenseMatrix::from_array(m.clone()).unwrap(), b.view()).unwrap();
        let want = oracle_pinv_solve(&m, &b);
        for (a, o) in got.iter().zip(want.iter()) {
            prop_assert!((a - o).abs() < 1e-8, "{a} vs {o}");
        }
    }

    #[test]
    fn pinv_returns_minimum_norm_preimage(
        entries in prop::collection::vec(-1.0_f64..1.0, 10),
        theta in prop::collection::vec(-1.0_f64..1.0, 5),
    ) {
        let m = psd_from_factor(&entries, 5, 2);
        let theta = Array1::from_vec(theta);
        let b = m.dot(&theta);
        let got = pinv_solve(&DenseMatrix::from_array(m.clone()).unwrap(), b.view()).unwrap();
        let reproduced = m.dot(&got);
        let b_norm = b.dot(&b).sqrt();
        let err = (&reproduced - &b).mapv(f64::abs).fold(0.0_f64, |a, v| a.max(*v));
        prop_assert!(err <= 1e-9 * b_norm.max(1e-12));
        prop_assert!(got.dot(&got).sqrt() <= theta.dot(&theta).sqrt() + 1e-9);
    }

    #[test]
    fn kron_mixed_product_identity(
        a in prop::collection::vec(-1.0_f64..1.0, 4),
        b in prop::collection::vec(-1.0_f64..1.0, 9),
        c in prop::collection::vec(-1.0_f64..1.0, 4),
        d in prop::collection::vec(-1.0_f64..1.0, 9),
    ) {
        let a = DenseMatrix::from_rows(2, 2, a).unwrap();
        let b = DenseMatrix::from_rows(3, 3, b).unwrap();
        let c = DenseMatrix::from_rows(2, 2, c).unwrap();
        let d = DenseMatrix::from_rows(3, 3, d).unwrap();
        let lhs = kron(&a, &b).unwrap().array().dot(kron(&c, &d).unwrap().array());
        let ac = DenseMatrix::from_array(a.array().dot(c.array())).unwrap();
        let bd = DenseMatrix::from_array(b.array().dot(d.array())).unwrap();
        let rhs = kron(&ac, &bd).unwrap();
        for (l, r) in lhs.iter().zip(rhs.array().iter()) {
            prop_assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn kron_vector_norm_is_product_of_norms(
        v in prop::collection::vec(-2.0_f64..2.0, 5),
        w in prop::collection::vec(-2.0_f64..2.0, 7),
    ) {
        let v = Array1::from_vec(v);
        let w = Array1::from_vec(w);
        let k = kron_vec(v.view(), w.view());
        let lhs = k.dot(&k).sqrt();
        let rhs = v.dot(&v).sqrt() * w.dot(&w).sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn conv_is_linear_in_the_kernel(
        k1 in prop::collection::vec(-1.0_f64..1.0, 9),
        k2 in prop::collection::vec(-1.0_f64..1.0, 9),
        img in prop::collection::vec(-1.0_f64..1.0, 20),
        a in -2.0_f64..2.0,
        b in -2.0_f64..2.0,
    ) {
        let x = Image::from_pixels(4, 5, img).unwrap();
        let mixed: Vec<f64> = k1.iter().zip(&k2).map(|(p, q)| a * p + b * q).collect();
        let k1 = Image::from_pixels(3, 3, k1).unwrap();
        let k2 = Image::from_pixels(3, 3, k2).unwrap();
        let mixed = Image::from_pixels(3, 3, mixed).unwrap();
        let lhs = conv2d(&mixed, &x);
        let c1 = conv2d(&k1, &x);
        let c2 = conv2d(&k2, &x);
        for i in 0..4 {
            for j in 0..5 {
                let want = a * c1.get(i, j) + b * c2.get(i, j);
                prop_assert!((lhs.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaled_delta_kernel_is_exact_scaling(
        img in prop::collection::vec(-1.0_f64..1.0, 16),
        tau in 0.01_f64..3.0,
    ) {
        let x = Image::from_pixels(4, 4, img).unwrap();
        let mut kernel = vec![0.0; 9];
        kernel[4] = tau;
        let kernel = Image::from_pixels(3, 3, kernel).unwrap();
        let out = conv2d(&kernel, &x);
        for i in 0..4 {
            for j in 0..4 {
                prop_assert_eq!(out.get(i, j), tau * x.get(i, j));
            }
        }
    }

    #[test]
    fn translate_round_trip_restores_interior(
        img in prop::collection::vec(-1.0_f64..1.0, 30),
        a1 in -3_isize..3,
        a2 in -4_isize..4,
    ) {
        let x = Image::from_pixels(5, 6, img).unwrap();
        let back = translate(&translate(&x, a1, a2), -a1, -a2);
        for i in 0..5_isize {
            for j in 0..6_isize {
                // The pixel survives when its pre-image under the second
                // translation lies in bounds; the evicted band is zeroed.
                let inside = i - a1 >= 0 && i - a1 < 5 && j - a2 >= 0 && j - a2 < 6;
                let want = if inside { x.get(i as usize, j as usize) } else { 0.0 };
                prop_assert_eq!(back.get(i as usize, j as usize), want);
            }
        }
    }
}
