//! Geodesic interpolation: minimize J(ρ) + β·MassLoss(ρ) over the interior
//! slices of a density path with fixed endpoints.
//!
//! The optimizer is projected gradient descent with a Barzilai–Borwein
//! initial step and Armijo backtracking. The projection clamps every cell
//! to ≥ ε, pins obstacle cells to exactly ε, and — in balanced mode —
//! rescales each interior slice about the ε floor so its mass sits exactly
//! on the linear schedule between the endpoint masses. Scaling about ε
//! (rather than multiplicatively about 0) keeps the clamp and the mass
//! constraint from fighting each other.

use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, DensityGrid, DensityPath};
use crate::transport_energy::{
    mass_loss, EnergyMode, EnergyReport, PathEvaluator, DEFAULT_SOLVE_TOL,
};
use ndarray::Array2;

/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;
/// Line-search step floor; below this the iterate is declared stationary.
const STEP_FLOOR: f64 = 1e-12;

/// Configuration for [`optimize_path`].
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Time steps T; `None` selects via [`choose_t`].
    pub steps: Option<usize>,
    /// Density floor ε.
    pub eps: f64,
    pub bc: BoundaryCondition,
    pub mode: EnergyMode,
    /// Mass-loss weight β ≥ 0.
    pub beta: f64,
    pub max_iters: usize,
    /// Initial line-search step; later iterations use a BB estimate.
    pub step0: f64,
    /// Stop when the relative objective decrease falls below this.
    pub tol_rel: f64,
    /// Recorded for reproducibility; the optimizer itself is deterministic.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            steps: None,
            eps: 1e-5,
            bc: BoundaryCondition::Dirichlet,
            mode: EnergyMode::balanced(),
            beta: 0.0,
            max_iters: 500,
            step0: 1.0,
            tol_rel: 1e-6,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.steps {
            if t < 1 {
                return Err(Error::Config("steps must be >= 1".into()));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.step0 > 0.0) {
            return Err(Error::Config(format!("step0 must be positive, got {}", self.step0)));
        }
        if !(self.tol_rel > 0.0) {
            return Err(Error::Config(format!(
                "tol_rel must be positive, got {}",
                self.tol_rel
            )));
        }
        Ok(())
    }
}

/// Result of a geodesic optimization.
#[derive(Debug, Clone)]
pub struct GeodesicResult {
    pub path: DensityPath,
    pub j_final: f64,
    pub mass_loss_final: f64,
    /// Accepted optimizer iterations.
    pub iterations: usize,
    /// False only when the iteration budget ran out first.
    pub converged: bool,
    /// Objective value per accepted iteration, starting at the initial
    /// path; nonincreasing by construction of the line search.
    pub energy_trace: Vec<f64>,
    /// Full energy report of the final path.
    pub report: EnergyReport,
}

/// Pick the number of time steps from the centroid displacement:
/// T = ceil(|centroid(target) − centroid(source)|), clamped to [4, 30].
pub fn choose_t(source: &DensityGrid, target: &DensityGrid) -> Result<usize> {
    let (si, sj) = source.centroid()?;
    let (ti, tj) = target.centroid()?;
    let dist = ((ti - si).powi(2) + (tj - sj).powi(2)).sqrt();
    Ok((dist.ceil() as usize).clamp(4, 30))
}

/// Linear pixel blend ρ_t = (1 − t/T)·source + (t/T)·target, thresholded
/// at `eps` (a no-op when both inputs are already ≥ eps).
pub fn init_path(
    source: &DensityGrid,
    target: &DensityGrid,
    t_steps: usize,
    eps: f64,
) -> Result<DensityPath> {
    if source.n() != target.n() {
        return Err(Error::ShapeMismatch(format!(
            "source is {0}x{0}, target is {1}x{1}",
            source.n(),
            target.n()
        )));
    }
    // endpoints are cloned bit-exactly; interior slices use the
    // source + f·(target − source) form so identical endpoints yield an
    // identically constant path
    let diff = target.values() - source.values();
    let mut slices = Vec::with_capacity(t_steps + 1);
    slices.push(source.threshold(eps));
    for t in 1..t_steps {
        let f = t as f64 / t_steps as f64;
        let blend = DensityGrid::new(source.values() + &(&diff * f))?;
        slices.push(blend.threshold(eps));
    }
    slices.push(target.threshold(eps));
    DensityPath::new(slices)
}

/// Per-slice projection onto the feasible set.
struct Projector {
    eps: f64,
    /// Scheduled interior masses (balanced mode only).
    schedule: Option<Vec<f64>>,
    /// Flattened obstacle indicator.
    obstacle: Option<Vec<bool>>,
}

impl Projector {
    /// Project interior slice `t` (1-based among interior slices).
    fn apply(&self, t: usize, slice: &mut Array2<f64>) {
        let eps = self.eps;
        slice.mapv_inplace(|v| v.max(eps));
        let mut n_obs = 0usize;
        if let Some(obs) = &self.obstacle {
            for (v, &o) in slice.iter_mut().zip(obs) {
                if o {
                    *v = eps;
                    n_obs += 1;
                }
            }
        }
        if let Some(schedule) = &self.schedule {
            let cells = slice.len();
            let n_free = cells - n_obs;
            let target_free = schedule[t - 1] - n_obs as f64 * eps;
            let base = n_free as f64 * eps;
            let free_sum: f64 = match &self.obstacle {
                Some(obs) => slice.iter().zip(obs).filter(|(_, &o)| !o).map(|(v, _)| v).sum(),
                None => slice.sum(),
            };
            let denom = free_sum - base;
            if denom > f64::MIN_POSITIVE && target_free > base {
                let factor = (target_free - base) / denom;
                // already on schedule up to rounding: leave the slice
                // untouched so fixed points stay bit-stable
                if (factor - 1.0).abs() <= 1e-12 {
                    return;
                }
                match &self.obstacle {
                    Some(obs) => {
                        for (v, &o) in slice.iter_mut().zip(obs) {
                            if !o {
                                *v = eps + (*v - eps) * factor;
                            }
                        }
                    }
                    None => slice.mapv_inplace(|v| eps + (v - eps) * factor),
                }
            } else if target_free > base {
                // every free cell collapsed to the floor: spread the
                // scheduled mass uniformly
                let fill = eps + (target_free - base) / n_free as f64;
                match &self.obstacle {
                    Some(obs) => {
                        for (v, &o) in slice.iter_mut().zip(obs) {
                            if !o {
                                *v = fill;
                            }
                        }
                    }
                    None => slice.fill(fill),
                }
            }
        }
    }
}

/// Minimize L(ρ) = J(ρ) + β·MassLoss(ρ) over the interior slices.
///
/// Inputs must be preprocessed: thresholded ≥ eps, equal mass in balanced
/// mode, and obstacle cells (if any) already at ε in both endpoints.
/// Non-convergence within the iteration budget is reported through
/// `converged = false`, not as an error.
pub fn optimize_path(
    source: &DensityGrid,
    target: &DensityGrid,
    cfg: &SolverConfig,
) -> Result<GeodesicResult> {
    cfg.validate()?;
    let t_steps = match cfg.steps {
        Some(t) => t,
        None => choose_t(source, target)?,
    };
    let mass_source = source.mass();
    let mass_target = target.mass();
    let mut path = init_path(source, target, t_steps, cfg.eps)?;

    let projector = Projector {
        eps: cfg.eps,
        schedule: cfg.mode.is_balanced().then(|| {
            (1..t_steps)
                .map(|t| {
                    let f = t as f64 / t_steps as f64;
                    mass_source + f * (mass_target - mass_source)
                })
                .collect()
        }),
        obstacle: cfg.mode.obstacle().map(|m| m.cells().iter().copied().collect()),
    };
    for t in 1..t_steps {
        projector.apply(t, path.slices_mut()[t].values_mut());
    }

    let mut ev = PathEvaluator::new(cfg.bc, cfg.mode.clone(), DEFAULT_SOLVE_TOL);
    let objective = |j: f64, p: &DensityPath| j + cfg.beta * mass_loss(p, mass_source, mass_target);

    let (j0, mut grad) = ev.energy_and_gradient(&path)?;
    let mut l_current = objective(j0, &path);
    let mut trace = vec![l_current];
    let mut iterations = 0usize;
    let mut converged = false;

    let mut alpha = cfg.step0;
    let mut prev_x: Option<Vec<f64>> = None;
    let mut prev_d: Option<Vec<f64>> = None;

    for _ in 0..cfg.max_iters {
        if cfg.beta > 0.0 {
            add_mass_loss_subgradient(&mut grad, &path, cfg.beta, mass_source, mass_target);
        }
        let flat_g: Vec<f64> = grad.iter().flat_map(|g| g.iter().copied()).collect();
        let flat_x: Vec<f64> = path.slices()[1..t_steps]
            .iter()
            .flat_map(|s| s.values().iter().copied())
            .collect();
        let gnorm = flat_g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm <= 1e-14 * l_current.abs().max(1.0) {
            converged = true;
            break;
        }

        // density-scaled direction: the curvature of J blows up like 1/ρ
        // near the ε floor, so raw gradient steps are throttled by the
        // floor cells; scaling by ρ equilibrates the step and lets floor
        // cells grow multiplicatively
        let dir: Vec<Array2<f64>> = grad
            .iter()
            .enumerate()
            .map(|(k, g)| g * &path.slices()[k + 1].values().mapv(|v| v.max(cfg.eps)))
            .collect();
        let flat_d: Vec<f64> = dir.iter().flat_map(|d| d.iter().copied()).collect();

        // BB1 step from the previous accepted move, in the scaled metric
        if let (Some(px), Some(pd)) = (&prev_x, &prev_d) {
            let mut ss = 0.0;
            let mut sy = 0.0;
            for k in 0..flat_x.len() {
                let dx = flat_x[k] - px[k];
                let dd = flat_d[k] - pd[k];
                ss += dx * dx;
                sy += dx * dd;
            }
            alpha = if sy > f64::MIN_POSITIVE {
                (ss / sy).clamp(1e-10, 1e4)
            } else {
                (alpha * 2.0).min(1e4)
            };
        }

        // backtracking line search on the projected step
        let mut accepted: Option<(DensityPath, f64)> = None;
        let mut step = alpha;
        while step >= STEP_FLOOR {
            let mut candidate = path.clone();
            for t in 1..t_steps {
                let slice = candidate.slices_mut()[t].values_mut();
                slice.zip_mut_with(&dir[t - 1], |v, d| *v -= step * d);
                projector.apply(t, slice);
            }
            let j_cand = ev.energy(&candidate)?;
            let l_cand = objective(j_cand, &candidate);
            // sufficient decrease against the actually realized move
            let mut moved = 0.0;
            for (t, g) in grad.iter().enumerate() {
                let old = path.slices()[t + 1].values();
                let new = candidate.slices()[t + 1].values();
                for ((gv, ov), nv) in g.iter().zip(old.iter()).zip(new.iter()) {
                    moved += gv * (ov - nv);
                }
            }
            if moved > 0.0 && l_cand <= l_current - ARMIJO_C * moved {
                accepted = Some((candidate, l_cand));
                break;
            }
            step *= 0.5;
        }

        let Some((new_path, l_new)) = accepted else {
            // no descent direction within the step floor: stationary
            converged = true;
            break;
        };
        alpha = step;
        path = new_path;
        iterations += 1;
        trace.push(l_new);
        let rel_dec = (l_current - l_new) / l_current.abs().max(1e-30);
        l_current = l_new;
        prev_x = Some(flat_x);
        prev_d = Some(flat_d);

        // gradient at the accepted point; CG warm starts make the energy
        // byproduct bitwise equal to the accepted line-search value
        let (_, g_next) = ev.energy_and_gradient(&path)?;
        grad = g_next;

        if rel_dec < cfg.tol_rel {
            converged = true;
            break;
        }
    }

    let report = ev.report(&path)?;
    let ml = mass_loss(&path, mass_source, mass_target);
    Ok(GeodesicResult {
        j_final: report.j,
        mass_loss_final: ml,
        iterations,
        converged,
        energy_trace: trace,
        report,
        path,
    })
}

fn add_mass_loss_subgradient(
    grad: &mut [Array2<f64>],
    path: &DensityPath,
    beta: f64,
    mass_source: f64,
    mass_target: f64,
) {
    let t_steps = path.steps();
    for t in 1..t_steps {
        let f = t as f64 / t_steps as f64;
        let scheduled = mass_source + f * (mass_target - mass_source);
        let dev = path.slices()[t].mass() - scheduled;
        if dev != 0.0 {
            let s = beta * dev.signum();
            grad[t - 1].mapv_inplace(|v| v + s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ObstacleMask;
    use ndarray::Array2;

    fn bump(n: usize, ci: f64, cj: f64, sigma: f64, mass: f64, eps: f64) -> DensityGrid {
        // mix with a uniform eps background so the mass is exact and every
        // cell sits at or above the floor
        let raw = Array2::from_shape_fn((n, n), |(i, j)| {
            let di = i as f64 - ci;
            let dj = j as f64 - cj;
            (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
        });
        let total: f64 = raw.sum();
        let budget = mass - (n * n) as f64 * eps;
        DensityGrid::new(raw.mapv(|v| eps + v * budget / total)).unwrap()
    }

    #[test]
    fn choose_t_clamps_and_rounds() {
        // single-pixel masses give exact centroids
        let spike = |n: usize, i: usize, j: usize| {
            DensityGrid::from_fn(n, |a, b| if (a, b) == (i, j) { 1.0 } else { 0.0 }).unwrap()
        };
        let a = spike(16, 2, 2);
        assert_eq!(choose_t(&a, &a).unwrap(), 4); // clamp floor
        assert_eq!(choose_t(&a, &spike(16, 2, 12)).unwrap(), 10);
        assert_eq!(choose_t(&spike(64, 5, 5), &spike(64, 5, 58)).unwrap(), 30); // clamp ceiling
        let zero = DensityGrid::uniform(4, 0.0).unwrap();
        assert!(matches!(choose_t(&zero, &a), Err(Error::ZeroMass)));
    }

    #[test]
    fn init_path_blends_and_thresholds() {
        let a = bump(8, 2.0, 2.0, 1.0, 1.0, 1e-5);
        let b = bump(8, 5.0, 5.0, 1.0, 1.0, 1e-5);
        let p = init_path(&a, &b, 2, 1e-5).unwrap();
        assert_eq!(p.steps(), 2);
        // endpoints bit-identical to (already thresholded) inputs
        assert_eq!(p.slices()[0], a);
        assert_eq!(p.slices()[2], b);
        // interior mass on the linear schedule
        assert!((p.slices()[1].mass() - 1.0).abs() < 1e-12);
        assert!(p.slices()[1].values().iter().all(|&v| v >= 1e-5));

        let same = init_path(&a, &a, 3, 1e-5).unwrap();
        assert!(same.slices().iter().all(|s| s == &a));

        let small = bump(4, 1.0, 1.0, 1.0, 1.0, 1e-5);
        assert!(matches!(
            init_path(&a, &small, 2, 1e-5),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn identical_endpoints_converge_immediately() {
        let a = bump(8, 3.5, 3.5, 1.2, 1.0, 1e-5);
        let cfg = SolverConfig {
            steps: Some(3),
            ..SolverConfig::default()
        };
        let res = optimize_path(&a, &a, &cfg).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 1);
        assert_eq!(res.j_final, 0.0);
        assert!(res.path.slices().iter().all(|s| s == &a));
    }

    #[test]
    fn nearby_bumps_descend_monotonically() {
        let eps = 1e-5;
        let a = bump(12, 4.0, 4.0, 1.5, 1.0, eps);
        let b = bump(12, 7.0, 7.0, 1.5, 1.0, eps);
        let cfg = SolverConfig {
            steps: Some(5),
            max_iters: 60,
            ..SolverConfig::default()
        };
        let res = optimize_path(&a, &b, &cfg).unwrap();
        // endpoints untouched
        assert_eq!(res.path.slices()[0], a);
        assert_eq!(res.path.slices()[5], b);
        // strictly decreased from the linear-blend initialization
        assert!(res.energy_trace.len() >= 2);
        assert!(res.j_final < res.energy_trace[0]);
        for w in res.energy_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace not monotone: {w:?}");
        }
        // feasibility
        for s in res.path.slices() {
            assert!(s.values().iter().all(|&v| v >= eps));
            assert!((s.mass() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unbalanced_endpoints_optimize_without_mass_error() {
        let eps = 1e-5;
        let a = bump(10, 3.0, 3.0, 1.5, 1.0, eps);
        let b = bump(10, 6.0, 6.0, 1.5, 1.6, eps);
        let cfg = SolverConfig {
            steps: Some(4),
            mode: EnergyMode::unbalanced(1.0).unwrap(),
            max_iters: 40,
            ..SolverConfig::default()
        };
        let res = optimize_path(&a, &b, &cfg).unwrap();
        assert!(res.j_final > 0.0);
        for w in res.energy_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn obstacle_cells_stay_pinned_and_fluxless() {
        let n = 10;
        let eps = 1e-5;
        let mut cells = Array2::from_elem((n, n), false);
        for j in 0..n {
            if j != 5 {
                cells[(4, j)] = true;
            }
        }
        let mask = ObstacleMask::new(cells).unwrap();
        let pin = |g: DensityGrid| {
            let mut v = g.into_values();
            let mut excess = 0.0;
            for j in 0..n {
                if j != 5 {
                    excess += v[(4, j)] - eps;
                    v[(4, j)] = eps;
                }
            }
            v[(1, 5)] += excess;
            DensityGrid::new(v).unwrap()
        };
        let a = pin(bump(n, 2.0, 5.0, 1.2, 1.0, eps));
        let b = pin(bump(n, 7.0, 5.0, 1.2, 1.0, eps));
        let cfg = SolverConfig {
            steps: Some(5),
            mode: EnergyMode::balanced().with_obstacle(mask),
            max_iters: 30,
            ..SolverConfig::default()
        };
        let res = optimize_path(&a, &b, &cfg).unwrap();
        for s in &res.path.slices()[1..5] {
            for j in 0..n {
                if j != 5 {
                    assert_eq!(s.values()[(4, j)], eps);
                }
            }
        }
        for m in &res.report.momenta {
            for j in 0..n {
                if j != 5 {
                    assert_eq!(m.m1()[(4, j)], 0.0);
                    assert_eq!(m.m1()[(5, j)], 0.0);
                    assert_eq!(m.m2()[(4, j)], 0.0);
                    assert_eq!(m.m2()[(4, j + 1)], 0.0);
                }
            }
        }
    }
}
