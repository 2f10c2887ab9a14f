//! Differentiating through an inner gradient step.
//!
//! Inner loss `0.5 * t^2`, one step of size `alpha = 0.5`, outer loss
//! `0.5 * (t' - 1)^2`. At `t = 4` the adapted value is 2 and the exact
//! meta-gradient is 0.5; dropping the second-order term gives 1.0.

use fumi::diffcore::{GradMode, Graph, Tensor};

fn meta_gradient(theta: f64, mode: GradMode) -> (f64, f64) {
    let mut g = Graph::new();
    let t = g.leaf(Tensor::scalar(theta));
    let sq = g.mul(t, t).unwrap();
    let inner = g.scale(sq, 0.5);
    let dt = g.grad(inner, &[t], mode).unwrap()[0];
    let step = g.scale(dt, 0.5);
    let adapted = g.sub(t, step).unwrap();
    let shifted = g.add_const(adapted, -1.0);
    let sq = g.mul(shifted, shifted).unwrap();
    let outer = g.scale(sq, 0.5);
    let meta = g.grad(outer, &[t], GradMode::FirstOrder).unwrap()[0];
    (g.value(adapted).data()[0], g.value(meta).data()[0])
}

fn main() {
    for theta in [4.0, 2.0] {
        let (adapted, exact) = meta_gradient(theta, GradMode::SecondOrder);
        let (_, truncated) = meta_gradient(theta, GradMode::FirstOrder);
        println!("theta {theta}: adapted {adapted}, meta-gradient {exact} (first-order {truncated})");
    }
}
