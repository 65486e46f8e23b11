//! Central-difference check of the denoiser's backward pass in f64.

use desklcm::nn::{DenoiserNet, NetConfig};
use desklcm::{RngStream, Tensor};

fn main() -> desklcm::Result<()> {
    let cfg = NetConfig::toy(4, 16, 4, 1000);
    let net = DenoiserNet::<f64>::new(cfg, &RngStream::new(1))?;
    let mut rng = RngStream::new(2);
    let z: Tensor<f64> = rng.gaussian(&[2, 16, 4]);
    let (t, c, w) = (vec![17, 640], vec![1, cfg.null_class()], vec![0.0, 3.5]);
    let probe: Tensor<f64> = rng.gaussian(&[2, 16, 4]);
    let loss = |n: &DenoiserNet<f64>| -> desklcm::Result<f64> {
        Ok(n.forward(&z, &t, &c, &w)?.mul(&probe)?.sum().item())
    };

    let grads = net.forward(&z, &t, &c, &w)?.mul(&probe)?.sum().backward()?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, name) in net.params().names().iter().enumerate() {
        let base = net.params().tensors()[i].to_vec();
        let analytic = grads.wrt(&net.params().tensors()[i]);
        for j in rng.integers(0, base.len() - 1, 2) {
            let shifted = |d: f64| -> desklcm::Result<f64> {
                let mut probe_net = net.frozen();
                let mut v = base.clone();
                v[j] += d;
                probe_net.params_mut().set(name, v)?;
                loss(&probe_net)
            };
            let num = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            let an = analytic.data()[j];
            let rel = (an - num).abs() / an.abs().max(num.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    println!("{} parameter tensors, worst relative error {worst:.2e}", net.params().len());
    Ok(())
}
