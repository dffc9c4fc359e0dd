//! Minimal library usage: optimize a geodesic between two PGM images
//! and report the energy and the SSIM statistics of the result.
//!
//! Run with: cargo run --example interpolate -- a.pgm b.pgm out/

use std::path::Path;

use otpath::{optimize_path, ssim_sequence, write_frames, SolverConfig, SsimParams};

fn main() -> otpath::Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(src), Some(tgt), Some(out)) = (args.next(), args.next(), args.next()) else {
        eprintln!("usage: interpolate <source.pgm> <target.pgm> <out-dir>");
        std::process::exit(1);
    };

    let source = otpath::read_image(Path::new(&src))?.threshold(1e-5);
    let target = otpath::read_image(Path::new(&tgt))?.threshold(1e-5);
    // balanced transport needs matching totals; meet in the middle
    let mean = 0.5 * (source.mass() + target.mass());
    let source = source.normalize_mass(mean)?;
    let target = target.normalize_mass(mean)?;

    let cfg = SolverConfig {
        steps: Some(12),
        ..SolverConfig::default()
    };
    let run = optimize_path(&source, &target, &cfg)?;
    println!("J = {:e} after {} iterations", run.j_final, run.iterations);

    let scores = ssim_sequence(&run.path, &SsimParams::default())?;
    println!("ssim mean {:.4} ± {:.4}", scores.mean, scores.std);

    std::fs::create_dir_all(&out)?;
    write_frames(&run.path, Path::new(&out), "frame")?;
    Ok(())
}
