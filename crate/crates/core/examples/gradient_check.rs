//! Finite-difference check of the full training objective through a tiny
//! two-stage network, in double precision.

use sepg::losses::Aggregation;
use sepg::train::{tiny_model_gradient_check, CheckedLoss};

fn main() -> sepg::Result<()> {
    for aggregation in [Aggregation::None, Aggregation::CrossCentre, Aggregation::Paba] {
        let errors = tiny_model_gradient_check::<f64>(7, CheckedLoss::Total(aggregation), 1e-6)?;
        let worst = errors.iter().map(|(_, e)| *e).fold(0.0, f64::max);
        println!("{aggregation:?}: worst relative error {worst:.2e}");
        for (name, err) in &errors {
            println!("  {name:<32} {err:.2e}");
        }
    }
    Ok(())
}
