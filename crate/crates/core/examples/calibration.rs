//! Calibration curves of a well-specified and an overconfident Gaussian
//! predictor.

use pacoh::eval::{calib_regression, calibration_curve, DEFAULT_LEVELS};
use pacoh::predictive::GaussianPredictive;
use pacoh::rng::substream;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn main() -> pacoh::Result<()> {
    let mut rng = substream(0, "calibration_example", &[]);
    let m = 5000;
    let mean: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = mean.iter().map(|mu| mu + rng.sample::<f64, _>(StandardNormal)).collect();
    for (name, var) in [("well-specified", 1.0), ("overconfident", 0.2)] {
        let pred = GaussianPredictive {
            mean: mean.clone(),
            variance: vec![var; m],
        };
        println!("{name}: calibration error {:.4}", calib_regression(&pred, &y, DEFAULT_LEVELS)?);
        for (q, qh) in calibration_curve(&pred, &y, 5)? {
            println!("  q = {q:.3}  observed {qh:.3}");
        }
    }
    Ok(())
}
