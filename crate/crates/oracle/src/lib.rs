//! Brute-force reference implementations for the transport-energy tests.
//!
//! Everything here is built dense and solved with an SVD pseudo-inverse:
//! the divergence matrix D is materialized column by column from the
//! stencil, the slice operator is the explicit triple product
//! D·Diag(u)·Dᵀ (+ Diag(ρ)/τ), and the path energy is Σ_t b_tᵀ A_t⁺ b_t.
//! No code is shared with the sparse implementation; only the stencil
//! conventions are (they are the contract under test).

use nalgebra::DMatrix;
use ndarray::Array2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc {
    Dirichlet,
    Neumann,
    Periodic,
}

/// Balanced when `tau` is None; obstacle cells get zero-conductivity faces.
#[derive(Debug, Clone, Default)]
pub struct Mode {
    pub tau: Option<f64>,
    pub obstacle: Option<Array2<bool>>,
}

/// Full face set: m1 faces are (n+1)×n, m2 faces n×(n+1), flattened in
/// that order. Faces that are not unknowns (Dirichlet boundary, periodic
/// slot n, obstacle-adjacent) simply carry zero conductivity.
fn face_count(n: usize) -> usize {
    (n + 1) * n + n * (n + 1)
}

fn f1(n: usize, i: usize, j: usize) -> usize {
    i * n + j
}

fn f2(n: usize, i: usize, j: usize) -> usize {
    (n + 1) * n + i * (n + 1) + j
}

/// Dense divergence matrix, cells × faces.
fn divergence_matrix(n: usize, bc: Bc) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n * n, face_count(n));
    for i in 0..n {
        for j in 0..n {
            let c = i * n + j;
            match bc {
                Bc::Dirichlet | Bc::Neumann => {
                    d[(c, f1(n, i + 1, j))] += 1.0;
                    d[(c, f1(n, i, j))] -= 1.0;
                    d[(c, f2(n, i, j + 1))] += 1.0;
                    d[(c, f2(n, i, j))] -= 1.0;
                }
                Bc::Periodic => {
                    d[(c, f1(n, (i + 1) % n, j))] += 1.0;
                    d[(c, f1(n, i, j))] -= 1.0;
                    d[(c, f2(n, i, (j + 1) % n))] += 1.0;
                    d[(c, f2(n, i, j))] -= 1.0;
                }
            }
        }
    }
    d
}

/// Face conductivities as a dense vector over the full face set.
fn conductivities(rho: &Array2<f64>, bc: Bc, mode: &Mode) -> Vec<f64> {
    let n = rho.nrows();
    let wall = |i: usize, j: usize| {
        mode.obstacle
            .as_ref()
            .is_some_and(|m| m[(i, j)])
    };
    let mut u = vec![0.0; face_count(n)];
    match bc {
        Bc::Dirichlet | Bc::Neumann => {
            for i in 1..n {
                for j in 0..n {
                    if !(wall(i - 1, j) || wall(i, j)) {
                        u[f1(n, i, j)] = 0.5 * (rho[(i - 1, j)] + rho[(i, j)]);
                    }
                }
            }
            for i in 0..n {
                for j in 1..n {
                    if !(wall(i, j - 1) || wall(i, j)) {
                        u[f2(n, i, j)] = 0.5 * (rho[(i, j - 1)] + rho[(i, j)]);
                    }
                }
            }
            if bc == Bc::Neumann {
                for j in 0..n {
                    if !wall(0, j) {
                        u[f1(n, 0, j)] = rho[(0, j)];
                    }
                    if !wall(n - 1, j) {
                        u[f1(n, n, j)] = rho[(n - 1, j)];
                    }
                }
                for i in 0..n {
                    if !wall(i, 0) {
                        u[f2(n, i, 0)] = rho[(i, 0)];
                    }
                    if !wall(i, n - 1) {
                        u[f2(n, i, n)] = rho[(i, n - 1)];
                    }
                }
            }
        }
        Bc::Periodic => {
            for i in 0..n {
                for j in 0..n {
                    let pi = (i + n - 1) % n;
                    if !(wall(pi, j) || wall(i, j)) {
                        u[f1(n, i, j)] = 0.5 * (rho[(pi, j)] + rho[(i, j)]);
                    }
                    let pj = (j + n - 1) % n;
                    if !(wall(i, pj) || wall(i, j)) {
                        u[f2(n, i, j)] = 0.5 * (rho[(i, pj)] + rho[(i, j)]);
                    }
                }
            }
        }
    }
    u
}

/// Dense slice operator A = D·Diag(u)·Dᵀ (+ Diag(ρ)/τ).
pub fn dense_operator(rho: &Array2<f64>, bc: Bc, mode: &Mode) -> DMatrix<f64> {
    let n = rho.nrows();
    let d = divergence_matrix(n, bc);
    let u = conductivities(rho, bc, mode);
    let mut du = d.clone();
    for (f, &uf) in u.iter().enumerate() {
        for c in 0..n * n {
            du[(c, f)] *= uf;
        }
    }
    let mut a = du * d.transpose();
    if let Some(tau) = mode.tau {
        for (c, &r) in rho.iter().enumerate() {
            a[(c, c)] += r / tau;
        }
    }
    a
}

fn pinv_apply(a: DMatrix<f64>, b: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let pinv = svd
        .pseudo_inverse(1e-12 * max_sv.max(1.0))
        .expect("svd computed");
    &pinv * b
}

/// Minimum-norm solve y = A⁺ b of the slice system.
pub fn dense_slice_solve(rho: &Array2<f64>, b: &Array2<f64>, bc: Bc, mode: &Mode) -> Array2<f64> {
    let n = rho.nrows();
    let a = dense_operator(rho, bc, mode);
    let bv = nalgebra::DVector::from_iterator(n * n, b.iter().copied());
    let y = pinv_apply(a, &bv);
    Array2::from_shape_vec((n, n), y.iter().copied().collect()).expect("square")
}

/// One slice energy bᵀA⁺b via SVD pseudo-inverse.
fn slice_energy(rho: &Array2<f64>, next: &Array2<f64>, bc: Bc, mode: &Mode) -> f64 {
    let n = rho.nrows();
    let a = dense_operator(rho, bc, mode);
    let b = nalgebra::DVector::from_iterator(n * n, rho.iter().zip(next.iter()).map(|(a, b)| a - b));
    let y = pinv_apply(a, &b);
    b.dot(&y)
}

/// Path energy Σ_t b_tᵀ A_t⁺ b_t by dense pseudo-inverse solves.
pub fn dense_path_energy(slices: &[Array2<f64>], bc: Bc, mode: &Mode) -> f64 {
    assert!(slices.len() >= 2, "need at least two slices");
    (0..slices.len() - 1)
        .map(|t| slice_energy(&slices[t], &slices[t + 1], bc, mode))
        .sum()
}

/// Central finite differences of [`dense_path_energy`] with respect to the
/// interior slices; obstacle cells are not variables and get gradient 0.
pub fn fd_gradient(slices: &[Array2<f64>], bc: Bc, mode: &Mode, step: f64) -> Vec<Array2<f64>> {
    assert!((1e-7..=1e-4).contains(&step), "step {step} out of range");
    let n = slices[0].nrows();
    let mut grads = Vec::new();
    for t in 1..slices.len() - 1 {
        let mut g = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if mode.obstacle.as_ref().is_some_and(|m| m[(i, j)]) {
                    continue;
                }
                let mut plus = slices.to_vec();
                plus[t][(i, j)] += step;
                let mut minus = slices.to_vec();
                minus[t][(i, j)] -= step;
                g[(i, j)] = (dense_path_energy(&plus, bc, mode)
                    - dense_path_energy(&minus, bc, mode))
                    / (2.0 * step);
            }
        }
        grads.push(g);
    }
    grads
}
