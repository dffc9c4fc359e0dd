//! Sparse linear algebra for the per-slice elliptic systems.
//!
//! The operators assembled by the energy module are symmetric positive
//! semi-definite graph Laplacians (possibly plus a positive diagonal).
//! They are solved with Jacobi-preconditioned conjugate gradients. For
//! singular systems the right-hand side and the solution are deflated
//! against the per-component constant vectors, which both restores
//! solvability and pins down the representative the gradient formulas
//! assume (zero mean on every component).

/// Compressed sparse row matrix, square.
#[derive(Debug, Clone)]
pub(crate) struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub(crate) fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in &triplets {
            debug_assert!(r < n && c < n);
            if prev == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                prev = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr {
            n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub(crate) fn n(&self) -> usize {
        self.n
    }

    /// y = A x.
    pub(crate) fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    /// Main diagonal, with zeros where absent.
    pub(crate) fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    d[r] += self.vals[k];
                }
            }
        }
        d
    }
}

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CgOutcome {
    pub iterations: usize,
    /// Final relative residual ||b - Ax|| / ||b||.
    pub residual: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned CG. `x` carries the initial guess in and the
/// solution out. Convergence is relative: ||r|| <= tol * ||b||.
///
/// For singular (consistent) systems pass the nullspace structure in
/// `null`: the residual and the preconditioned direction are re-deflated
/// every iteration. Without this, rounding lets the Krylov directions
/// drift into the nullspace on badly conditioned assemblies, and pᵀAp
/// collapses to zero long before the range-space residual is small.
pub(crate) fn pcg(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    null: Option<&Components>,
) -> CgOutcome {
    let n = a.n();
    debug_assert_eq!(b.len(), n);
    debug_assert_eq!(x.len(), n);

    let norm_b = norm(b);
    if norm_b == 0.0 {
        x.fill(0.0);
        return CgOutcome {
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }

    // Jacobi preconditioner; rows with a non-positive diagonal (isolated
    // cells of a singular assembly) fall back to the identity.
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let deflate = |v: &mut Vec<f64>| {
        if let Some(c) = null {
            c.deflate(v);
        }
    };

    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    deflate(&mut r);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    deflate(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];

    let mut res = norm(&r) / norm_b;
    if res <= tol {
        return CgOutcome {
            iterations: 0,
            residual: res,
            converged: true,
        };
    }

    for it in 1..=max_iter {
        a.matvec(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            // loss of positivity: stop with whatever we have
            return CgOutcome {
                iterations: it - 1,
                residual: res,
                converged: res <= tol,
            };
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        deflate(&mut r);
        res = norm(&r) / norm_b;
        if res <= tol {
            return CgOutcome {
                iterations: it,
                residual: res,
                converged: true,
            };
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        deflate(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }

    CgOutcome {
        iterations: max_iter,
        residual: res,
        converged: false,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Connected components of the cell graph induced by positive-weight faces.
#[derive(Debug, Clone)]
pub(crate) struct Components {
    /// Component label per cell, labels in 0..count contiguous.
    pub label: Vec<usize>,
    pub count: usize,
    /// Cells per component.
    pub size: Vec<usize>,
}

impl Components {
    pub(crate) fn from_edges(n_cells: usize, edges: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut parent: Vec<usize> = (0..n_cells).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (a, b) in edges {
            let ra = find(&mut parent, a);
            let rb = find(&mut parent, b);
            if ra != rb {
                parent[ra] = rb;
            }
        }
        let mut label = vec![usize::MAX; n_cells];
        let mut size = Vec::new();
        let mut count = 0;
        for c in 0..n_cells {
            let root = find(&mut parent, c);
            if label[root] == usize::MAX {
                label[root] = count;
                size.push(0);
                count += 1;
            }
            label[c] = label[root];
            size[label[c]] += 1;
        }
        Components { label, count, size }
    }

    /// Per-component sums of `v`.
    pub(crate) fn sums(&self, v: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.count];
        for (c, &val) in v.iter().enumerate() {
            s[self.label[c]] += val;
        }
        s
    }

    /// Subtract the per-component mean from `v`, making it orthogonal to
    /// every component's constant vector.
    pub(crate) fn deflate(&self, v: &mut [f64]) {
        let sums = self.sums(v);
        let means: Vec<f64> = sums
            .iter()
            .zip(&self.size)
            .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
            .collect();
        for (c, val) in v.iter_mut().enumerate() {
            *val -= means[self.label[c]];
        }
    }
}
