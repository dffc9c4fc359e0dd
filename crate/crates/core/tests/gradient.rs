//! Finite-difference validation of the analytic path-energy gradient.

use ndarray::Array2;
use otpath::{
    path_energy_gradient_tol, path_energy_tol, BoundaryCondition, DensityGrid, DensityPath,
    EnergyMode, ObstacleMask,
};
use otpath_oracle as oracle;

fn rng(seed: u64) -> impl FnMut() -> f64 {
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn random_raw(n: usize, count: usize, seed: u64) -> Vec<Array2<f64>> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| Array2::from_shape_fn((n, n), |_| 0.2 + 0.8 * r()))
        .collect()
}

fn path_from(raw: &[Array2<f64>]) -> DensityPath {
    DensityPath::new(raw.iter().map(|v| DensityGrid::new(v.clone()).unwrap()).collect()).unwrap()
}

fn max_rel_error(analytic: &[Array2<f64>], fd: &[Array2<f64>]) -> f64 {
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (a, f) in analytic.iter().zip(fd) {
        for (x, y) in a.iter().zip(f.iter()) {
            err = err.max((x - y).abs());
            scale = scale.max(y.abs());
        }
    }
    err / scale.max(1e-12)
}

fn check(bc: BoundaryCondition, mode: &EnergyMode, seed: u64) {
    let mut raw = random_raw(6, 4, seed);
    if mode.is_balanced() {
        // keep the per-step consistency precondition satisfied; the ±1e−5
        // FD probes stay well inside the mass tolerance at this scale
        for slice in &mut raw {
            let scale = 20.0 / slice.sum();
            slice.mapv_inplace(|v| v * scale);
        }
    }
    let path = path_from(&raw);
    let analytic = path_energy_gradient_tol(&path, bc, mode, 1e-12).unwrap();
    let fd = oracle::fd_gradient(
        &raw,
        match bc {
            BoundaryCondition::Dirichlet => oracle::Bc::Dirichlet,
            BoundaryCondition::Neumann => oracle::Bc::Neumann,
            BoundaryCondition::Periodic => oracle::Bc::Periodic,
        },
        &oracle::Mode {
            tau: mode.tau(),
            obstacle: mode.obstacle().map(|m| m.cells().clone()),
        },
        1e-5,
    );
    let rel = max_rel_error(&analytic.slices, &fd);
    assert!(
        rel <= 1e-5,
        "bc={bc:?} tau={:?}: max relative error {rel}",
        mode.tau()
    );
}

#[test]
fn gradient_matches_fd_balanced_all_bcs() {
    check(BoundaryCondition::Dirichlet, &EnergyMode::balanced(), 1);
    check(BoundaryCondition::Neumann, &EnergyMode::balanced(), 2);
    check(BoundaryCondition::Periodic, &EnergyMode::balanced(), 3);
}

#[test]
fn gradient_matches_fd_unbalanced_all_bcs() {
    let tau = EnergyMode::unbalanced(1.0).unwrap();
    check(BoundaryCondition::Dirichlet, &tau, 4);
    check(BoundaryCondition::Neumann, &tau, 5);
    check(BoundaryCondition::Periodic, &tau, 6);
    check(
        BoundaryCondition::Dirichlet,
        &EnergyMode::unbalanced(0.3).unwrap(),
        7,
    );
}

#[test]
fn gradient_matches_fd_with_obstacles_on_free_cells() {
    let n = 6;
    let eps = 1e-5;
    let mut cells = Array2::from_elem((n, n), false);
    for j in 0..n {
        if j != 1 {
            cells[(3, j)] = true;
        }
    }
    let mask = ObstacleMask::new(cells.clone()).unwrap();
    let mut raw = random_raw(n, 4, 11);
    for slice in &mut raw {
        for j in 0..n {
            if j != 1 {
                slice[(3, j)] = eps;
            }
        }
    }
    let path = path_from(&raw);
    let mode = EnergyMode::unbalanced(1.0).unwrap().with_obstacle(mask);
    let analytic = path_energy_gradient_tol(&path, BoundaryCondition::Dirichlet, &mode, 1e-12).unwrap();
    let fd = oracle::fd_gradient(
        &raw,
        oracle::Bc::Dirichlet,
        &oracle::Mode {
            tau: Some(1.0),
            obstacle: Some(cells.clone()),
        },
        1e-5,
    );
    // compare only on free cells; masked cells are not variables
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (a, f) in analytic.slices.iter().zip(&fd) {
        for ((idx, x), y) in a.indexed_iter().zip(f.iter()) {
            if cells[idx] {
                continue;
            }
            err = err.max((x - y).abs());
            scale = scale.max(y.abs());
        }
    }
    assert!(err / scale.max(1e-12) <= 1e-5, "err={err} scale={scale}");
}

// Self-consistency: central differences of the sparse energy itself.
#[test]
fn gradient_matches_sparse_fd() {
    let mut raw = random_raw(5, 3, 21);
    for slice in &mut raw {
        let scale = 14.0 / slice.sum();
        slice.mapv_inplace(|v| v * scale);
    }
    let path = path_from(&raw);
    let bc = BoundaryCondition::Dirichlet;
    let mode = EnergyMode::balanced();
    let analytic = path_energy_gradient_tol(&path, bc, &mode, 1e-12).unwrap();
    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    for t in 1..raw.len() - 1 {
        let mut scale: f64 = 0.0;
        let mut err: f64 = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let mut plus = raw.clone();
                plus[t][(i, j)] += h;
                let mut minus = raw.clone();
                minus[t][(i, j)] -= h;
                let jp = path_energy_tol(&path_from(&plus), bc, &mode, 1e-12).unwrap().j;
                let jm = path_energy_tol(&path_from(&minus), bc, &mode, 1e-12).unwrap().j;
                let fd = (jp - jm) / (2.0 * h);
                err = err.max((analytic.slices[t - 1][(i, j)] - fd).abs());
                scale = scale.max(fd.abs());
            }
        }
        max_rel = max_rel.max(err / scale.max(1e-12));
    }
    assert!(max_rel <= 1e-5, "max relative error {max_rel}");
}
