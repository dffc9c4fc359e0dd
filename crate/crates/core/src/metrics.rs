//! Sequence-quality metrics: windowed SSIM between adjacent frames and
//! the discrete squared-Wasserstein estimate read off a minimized path.
//!
//! SSIM is computed with a normalized Gaussian window applied at valid
//! (uncropped) positions only, so boundary pixels never enter with
//! partial windows. On images smaller than the window the window shrinks
//! to the image side.

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, DensityPath};
use crate::transport_energy::EnergyReport;
use ndarray::Array2;

/// Windowed SSIM parameters. The defaults are the canonical published
/// constants; inputs are assumed to lie in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SsimParams {
    /// Side length of the Gaussian window (shrunk to the image side on
    /// smaller images).
    pub window: usize,
    /// Standard deviation of the window weights, in pixels.
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the inputs.
    pub l: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            l: 1.0,
        }
    }
}

impl SsimParams {
    /// Gaussian window of side `win`, normalized so the weights sum to 1.
    fn weights(&self, win: usize) -> Array2<f64> {
        let c = (win as f64 - 1.0) / 2.0;
        let mut w = Array2::from_shape_fn((win, win), |(i, j)| {
            let di = i as f64 - c;
            let dj = j as f64 - c;
            (-(di * di + dj * dj) / (2.0 * self.sigma * self.sigma)).exp()
        });
        let sum = w.sum();
        w.mapv_inplace(|v| v / sum);
        w
    }
}

/// Mean SSIM of `a` against `b` over all valid window positions.
///
/// Symmetric in its arguments; 1 exactly when the inputs are identical.
pub fn ssim(a: &DensityGrid, b: &DensityGrid, p: &SsimParams) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::ShapeMismatch(format!(
            "ssim inputs are {0}x{0} and {1}x{1}",
            a.n(),
            b.n()
        )));
    }
    let n = a.n();
    let win = p.window.min(n).max(1);
    let w = p.weights(win);
    let c1 = (p.k1 * p.l).powi(2);
    let c2 = (p.k2 * p.l).powi(2);
    let (av, bv) = (a.values(), b.values());

    let mut total = 0.0;
    let positions = n - win + 1;
    for i0 in 0..positions {
        for j0 in 0..positions {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for di in 0..win {
                for dj in 0..win {
                    let wt = w[(di, dj)];
                    let x = av[(i0 + di, j0 + dj)];
                    let y = bv[(i0 + di, j0 + dj)];
                    mu_a += wt * x;
                    mu_b += wt * y;
                    aa += wt * x * x;
                    bb += wt * y * y;
                    ab += wt * x * y;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
        }
    }
    Ok(total / (positions * positions) as f64)
}

/// Adjacent-frame SSIM scores of a path: one score per consecutive pair,
/// with their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimSequence {
    pub mean: f64,
    pub std: f64,
    pub per_pair: Vec<f64>,
}

/// SSIM of every adjacent frame pair along `path`.
pub fn ssim_sequence(path: &DensityPath, p: &SsimParams) -> Result<SsimSequence> {
    let slices = path.slices();
    let per_pair = slices
        .windows(2)
        .map(|pair| ssim(&pair[0], &pair[1], p))
        .collect::<Result<Vec<_>>>()?;
    let len = per_pair.len() as f64;
    let mean = per_pair.iter().sum::<f64>() / len;
    let var = per_pair.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / len;
    Ok(SsimSequence {
        mean,
        std: var.max(0.0).sqrt(),
        per_pair,
    })
}

/// Discrete squared-Wasserstein estimate of a minimized path: T·J.
///
/// The per-step energies already carry a 1/Δt factor from the unit-spaced
/// time grid, so multiplying the summed energy by T restores the Δt = 1/T
/// scaling of the continuum action.
pub fn w2_estimate(report: &EnergyReport, t_steps: usize) -> f64 {
    t_steps as f64 * report.j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition;
    use crate::transport_energy::{path_energy, EnergyMode};
    use ndarray::Array2;

    fn rng(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).max(1);
        move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    fn random_grid(n: usize, seed: u64) -> DensityGrid {
        let mut r = rng(seed);
        DensityGrid::new(Array2::from_shape_fn((n, n), |_| 0.05 + 0.9 * r())).unwrap()
    }

    #[test]
    fn window_weights_sum_to_one() {
        let p = SsimParams::default();
        for win in [1, 4, 11] {
            assert!((p.weights(win).sum() - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn identical_images_score_one() {
        let a = random_grid(16, 3);
        let s = ssim(&a, &a, &SsimParams::default()).unwrap();
        assert!((s - 1.0).abs() <= 1e-12, "ssim(x,x) = {s}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = random_grid(14, 5);
        let b = random_grid(14, 8);
        let p = SsimParams::default();
        let sab = ssim(&a, &b, &p).unwrap();
        let sba = ssim(&b, &a, &p).unwrap();
        assert!((sab - sba).abs() <= 1e-14);
    }

    #[test]
    fn ssim_rejects_mismatched_shapes() {
        let a = random_grid(8, 1);
        let b = random_grid(9, 1);
        assert!(matches!(
            ssim(&a, &b, &SsimParams::default()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    // Zero-variance windows reduce SSIM to the luminance term
    // (2·c1·c2 + C1) / (c1² + c2² + C1); fixtures frozen from direct
    // evaluation of that expression.
    #[test]
    fn constant_images_match_degenerate_formula() {
        let p = SsimParams::default();
        for (c1, c2, expected) in [
            (0.3, 0.7, 0.7241854852611619),
            (0.05, 0.9, 0.11087866108786612),
        ] {
            let a = DensityGrid::uniform(12, c1).unwrap();
            let b = DensityGrid::uniform(12, c2).unwrap();
            let s = ssim(&a, &b, &p).unwrap();
            assert!((s - expected).abs() <= 1e-12, "c={c1}/{c2}: {s}");
        }
    }

    #[test]
    fn ssim_stays_in_unit_interval() {
        let p = SsimParams::default();
        for seed in 0..12 {
            let a = random_grid(13, 100 + seed);
            let b = random_grid(13, 200 + seed);
            let s = ssim(&a, &b, &p).unwrap();
            assert!((-1.0..=1.0).contains(&s), "seed {seed}: {s}");
        }
    }

    #[test]
    fn constant_path_scores_mean_one_std_zero() {
        let a = random_grid(12, 9);
        let path = DensityPath::new(vec![a.clone(), a.clone(), a.clone(), a]).unwrap();
        let seq = ssim_sequence(&path, &SsimParams::default()).unwrap();
        assert_eq!(seq.per_pair.len(), 3);
        assert!((seq.mean - 1.0).abs() <= 1e-12);
        assert!(seq.std <= 1e-12);
    }

    #[test]
    fn single_step_path_has_zero_std() {
        let a = random_grid(12, 2);
        let b = random_grid(12, 4);
        let path = DensityPath::new(vec![a, b]).unwrap();
        let seq = ssim_sequence(&path, &SsimParams::default()).unwrap();
        assert_eq!(seq.per_pair.len(), 1);
        assert_eq!(seq.std, 0.0);
        assert_eq!(seq.mean, seq.per_pair[0]);
    }

    #[test]
    fn time_reversal_preserves_sequence_mean() {
        let n = 12;
        let a = random_grid(n, 21);
        let b = random_grid(n, 22);
        let steps = 5;
        let slices: Vec<DensityGrid> = (0..=steps)
            .map(|t| {
                let f = t as f64 / steps as f64;
                DensityGrid::new(a.values() + &((b.values() - a.values()) * f)).unwrap()
            })
            .collect();
        let mut reversed = slices.clone();
        reversed.reverse();
        let p = SsimParams::default();
        let fwd = ssim_sequence(&DensityPath::new(slices).unwrap(), &p).unwrap();
        let bwd = ssim_sequence(&DensityPath::new(reversed).unwrap(), &p).unwrap();
        assert!((fwd.mean - bwd.mean).abs() <= 1e-14);
    }

    // A sequence that morphs gradually scores more evenly than one that
    // sits still and teleports on the last step.
    #[test]
    fn smooth_path_has_lower_std_than_abrupt() {
        let n = 16;
        let bump = |ci: f64, cj: f64| {
            DensityGrid::from_fn(n, |i, j| {
                let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                1e-3 + (-d2 / 8.0).exp()
            })
            .unwrap()
        };
        let a = bump(4.0, 4.0);
        let b = bump(11.0, 11.0);
        let steps = 6;
        let smooth: Vec<DensityGrid> = (0..=steps)
            .map(|t| {
                let f = t as f64 / steps as f64;
                DensityGrid::new(a.values() + &((b.values() - a.values()) * f)).unwrap()
            })
            .collect();
        let mut abrupt = vec![a.clone(); steps];
        abrupt.push(b.clone());
        let p = SsimParams::default();
        let s_smooth = ssim_sequence(&DensityPath::new(smooth).unwrap(), &p).unwrap();
        let s_abrupt = ssim_sequence(&DensityPath::new(abrupt).unwrap(), &p).unwrap();
        assert!(
            s_smooth.std < s_abrupt.std,
            "smooth {} vs abrupt {}",
            s_smooth.std,
            s_abrupt.std
        );
    }

    #[test]
    fn w2_estimate_scales_energy_by_steps() {
        let a = random_grid(6, 31);
        let total = a.mass();
        let b = random_grid(6, 32).normalize_mass(total).unwrap();
        let mid = DensityGrid::new((a.values() + b.values()) / 2.0).unwrap();
        let path = DensityPath::new(vec![a, mid, b]).unwrap();
        let report = path_energy(&path, BoundaryCondition::Neumann, &EnergyMode::balanced()).unwrap();
        assert_eq!(w2_estimate(&report, 2), 2.0 * report.j);
        assert!(w2_estimate(&report, 2) > 0.0);
    }

    #[test]
    fn zero_energy_gives_zero_w2() {
        let a = random_grid(6, 7);
        let path = DensityPath::new(vec![a.clone(), a.clone(), a]).unwrap();
        let report = path_energy(&path, BoundaryCondition::Neumann, &EnergyMode::balanced()).unwrap();
        assert_eq!(report.j, 0.0);
        assert_eq!(w2_estimate(&report, 2), 0.0);
    }

    // J is jointly 1-homogeneous in the densities and momenta, so scaling
    // both endpoints (and the re-solved path) doubles the estimate.
    #[test]
    fn doubling_mass_doubles_w2() {
        let n = 8;
        let mut r = rng(77);
        let mk = |r: &mut dyn FnMut() -> f64, scale: f64| {
            let v = Array2::from_shape_fn((n, n), |_| 0.1 + 0.8 * r());
            DensityGrid::new(v * scale).unwrap()
        };
        let base: Vec<Array2<f64>> = (0..3).map(|_| mk(&mut r, 1.0).into_values()).collect();
        // equalize masses so the balanced solve accepts the path
        let m0: f64 = base[0].sum();
        let slices: Vec<DensityGrid> = base
            .iter()
            .map(|v| DensityGrid::new(v * (m0 / v.sum())).unwrap())
            .collect();
        let doubled: Vec<DensityGrid> = slices
            .iter()
            .map(|s| DensityGrid::new(s.values() * 2.0).unwrap())
            .collect();
        let bc = BoundaryCondition::Dirichlet;
        let mode = EnergyMode::balanced();
        let r1 = path_energy(&DensityPath::new(slices).unwrap(), bc, &mode).unwrap();
        let r2 = path_energy(&DensityPath::new(doubled).unwrap(), bc, &mode).unwrap();
        let w1 = w2_estimate(&r1, 2);
        let w2 = w2_estimate(&r2, 2);
        assert!((w2 - 2.0 * w1).abs() <= 1e-8 * w1.abs());
    }
}
