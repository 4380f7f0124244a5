//! Compare the product and log-domain conjunction activations, then check
//! the analytic backward pass against central differences.
//!
//! cargo run --release --example gradient_check

use conjrules::binarizer::BitLayout;
use conjrules::conjnet::{conj_activation, conj_plus_activation, continuous_gradient, init_model, Head, DEFAULT_EPS};

fn main() -> conjrules::Result<()> {
    // With many inputs off, the product collapses long before Conj+ does.
    println!("{:>4} {:>12} {:>12}", "n", "Conj", "Conj+");
    for n in [1, 5, 20, 100, 500] {
        let w = vec![0.4; n];
        let x = vec![0u8; n];
        println!(
            "{n:>4} {:>12.3e} {:>12.4}",
            conj_activation(&w, &x)?,
            conj_plus_activation(&w, &x, DEFAULT_EPS)?
        );
    }

    let layout = BitLayout::plain([4, 3, 3]);
    let mut model = init_model(&layout, 3, 7)?;
    for s in &mut model.subnets {
        for (i, w) in s.weights.iter_mut().enumerate() {
            *w = 0.1 + 0.8 * ((i * 37 % 11) as f64 / 11.0);
        }
    }
    let x = [1, 0, 1, 1, 0, 0, 1, 1, 0, 1];
    let analytic = continuous_gradient(&model, &x, Head::Final)?.to_vec();
    let theta = model.parameters();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] += h;
        probe.set_parameters(&t)?;
        let up = probe.forward_continuous(&x)?.final_logit;
        t[i] -= 2.0 * h;
        probe.set_parameters(&t)?;
        let down = probe.forward_continuous(&x)?.final_logit;
        let fd = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(fd.abs()).max(1e-4);
        worst = worst.max((analytic[i] - fd).abs() / scale);
    }
    println!("\n{} parameters, worst relative error {worst:.2e}", theta.len());
    Ok(())
}
