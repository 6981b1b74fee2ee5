//! Reverse-mode gradients of a small network's squared error, checked
//! against a central difference.

use pacoh::diffmath::{cholesky, grad, Matrix, MlpConfig, ParamVector, DEFAULT_JITTER_SCHEDULE};

fn main() -> pacoh::Result<()> {
    let net = MlpConfig::new(1, vec![8], 1)?;
    let n = net.param_count();
    let theta = ParamVector::from_layout(&[("net", n)], (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect())?;
    let x = Matrix::column(&[-1.0, -0.3, 0.4, 1.2]);
    let y = Matrix::column(&[-0.8, -0.3, 0.4, 0.9]);

    let loss = |p: &ParamVector| -> pacoh::Result<f64> {
        let out = net.forward_batch(p.values(), &x)?;
        Ok(out.zip_map(&y, |a, b| (a - b) * (a - b)).sum() / 4.0)
    };
    let g = grad(
        |t, p| {
            let xv = t.constant(x.clone());
            let out = net.forward_on_tape(t, p, 0, xv);
            let r = t.sub(out, t.constant(y.clone()));
            Ok(t.mean(t.square(r)))
        },
        &theta,
    )?;
    println!("loss {:.6}", g.value);

    let h = 1e-5;
    let j = 3;
    let shift = |d: f64| {
        let mut v = theta.values().to_vec();
        v[j] += d;
        theta.with_values(v)
    };
    let fd = (loss(&shift(h)?)? - loss(&shift(-h)?)?) / (2.0 * h);
    println!("d loss / d theta[{j}]: tape {:.8}, central difference {fd:.8}", g.grad[j]);

    let a = Matrix::new(2, 2, vec![4.0, 1.0, 1.0, 3.0])?;
    let chol = cholesky(&a, &DEFAULT_JITTER_SCHEDULE)?;
    println!("log det [[4,1],[1,3]] = {:.6} (ln 11 = {:.6})", chol.log_det(), 11f64.ln());
    Ok(())
}
