#![allow(dead_code)]

use mssl_core::rng;
use mssl_core::{DMatrix, DVector, LabeledSet, UnlabeledPool};
use rand::Rng;

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub fn assert_vec_close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b.iter()) {
        assert!(close(*x, *y, tol), "{a} vs {b}");
    }
}

/// Gaussian design with mildly correlated columns plus a linear response.
pub fn random_instance(seed: u64, n: usize, p: usize, noise: f64) -> (LabeledSet, DVector<f64>) {
    let mut r = rng::stream(seed, &[1]);
    let mut x = rng::standard_normal_matrix(n, p, &mut r);
    for i in 0..n {
        for j in 1..p {
            x[(i, j)] += 0.3 * x[(i, j - 1)];
        }
    }
    let beta = DVector::from_fn(p, |_, _| r.random_range(-2.0..2.0));
    let e = rng::standard_normal_matrix(n, 1, &mut r);
    let y = &x * &beta + DVector::from_column_slice(e.as_slice()) * noise;
    (LabeledSet::new(x, y).unwrap(), beta)
}

pub fn gaussian_pool(seed: u64, m: usize, p: usize) -> UnlabeledPool {
    let mut r = rng::stream(seed, &[2]);
    UnlabeledPool::new(rng::standard_normal_matrix(m, p, &mut r)).unwrap()
}

/// Derivative-free Nelder-Mead with restarts; an oracle independent of any
/// closed form or gradient.
pub fn nelder_mead(f: impl Fn(&DVector<f64>) -> f64, start: DVector<f64>, scale: f64) -> DVector<f64> {
    let p = start.len();
    let mut best = start;
    let mut step = scale;
    for _restart in 0..30 {
        let mut simplex: Vec<DVector<f64>> = vec![best.clone()];
        for j in 0..p {
            let mut v = best.clone();
            v[j] += step;
            simplex.push(v);
        }
        let mut vals: Vec<f64> = simplex.iter().map(&f).collect();
        for _ in 0..20000 {
            let mut idx: Vec<usize> = (0..=p).collect();
            idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
            vals = idx.iter().map(|&i| vals[i]).collect();
            let size = simplex.iter().skip(1).map(|v| (v - &simplex[0]).amax()).fold(0.0, f64::max);
            if size < 1e-13 {
                break;
            }
            let centroid = simplex[..p].iter().fold(DVector::zeros(p), |acc, v| acc + v) / p as f64;
            let worst = simplex[p].clone();
            let refl = &centroid * 2.0 - &worst;
            let fr = f(&refl);
            if fr < vals[0] {
                let exp = &centroid * 3.0 - &worst * 2.0;
                let fe = f(&exp);
                if fe < fr {
                    simplex[p] = exp;
                    vals[p] = fe;
                } else {
                    simplex[p] = refl;
                    vals[p] = fr;
                }
            } else if fr < vals[p - 1] {
                simplex[p] = refl;
                vals[p] = fr;
            } else {
                let con = (&centroid + &worst) * 0.5;
                let fc = f(&con);
                if fc < vals[p] {
                    simplex[p] = con;
                    vals[p] = fc;
                } else {
                    for i in 1..=p {
                        simplex[i] = (&simplex[0] + &simplex[i]) * 0.5;
                        vals[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let i = (0..=p).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        let moved = (&simplex[i] - &best).amax();
        best = simplex[i].clone();
        if moved < 1e-12 {
            break;
        }
        step = (moved * 10.0).max(1e-6);
    }
    best
}

pub fn mat(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v)
}

pub fn vecf(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
