//! The rational activation initialised to approximate ReLU, and its gradients.

use cimcil::pau::{init_pau_as_relu, pau_gradient};

fn main() {
    let p = init_pau_as_relu();
    println!("numerator   {:?}", p.numerator);
    println!("denominator {:?}", p.denominator);
    println!("sup |P/Q - relu| on [-3, 3]: {:.4}", p.relu_sup_error());
    println!("\n    x     pau(x)   relu(x)   d/dx");
    for i in 0..=12 {
        let x = -3.0 + 0.5 * i as f64;
        println!("{x:5.1}  {:8.4}  {:8.4}  {:7.4}", p.eval(x), x.max(0.0), pau_gradient(x, &p).dx);
    }
}
