//! Twenty SVGD particles approximating N((1, −1), diag(0.25, 1)).

use pacoh::diffmath::Matrix;
use pacoh::svgd::{self, ParticleSet, SvgdConfig};

fn main() -> pacoh::Result<()> {
    let mean = [1.0, -1.0];
    let var = [0.25, 1.0];
    let init = ParticleSet::new(Matrix::new(20, 2, (0..40).map(|i| ((i * 13 % 17) as f64 - 8.0) / 8.0).collect())?)?;
    let cfg = SvgdConfig {
        steps: 1000,
        step_size: 0.05,
        ..SvgdConfig::default()
    };
    let (out, diag) = svgd::run(
        |_, ps| {
            let mut s = ps.values().clone();
            for i in 0..s.rows() {
                for (c, v) in s.row_mut(i).iter_mut().enumerate() {
                    *v = -(*v - mean[c]) / var[c];
                }
            }
            Ok(s)
        },
        init,
        &cfg,
    )?;
    for c in 0..2 {
        let col: Vec<f64> = (0..out.len()).map(|i| out.particle(i)[c]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
        println!("coordinate {c}: mean {m:.3} (target {}), variance {v:.3} (target {})", mean[c], var[c]);
    }
    println!("final bandwidth {:.4}", diag.bandwidth.last().copied().unwrap_or(f64::NAN));
    Ok(())
}
