//! Finite-difference check of the full model: every parameter of a small
//! f64 model is bumped both ways and the numeric slope is compared against
//! the analytic gradient of the forecasting + sparsity loss.

use lsinet::gradcheck::MODEL_TOLERANCE;
use lsinet::model::reference_gradcheck;

fn main() -> lsinet::Result<()> {
    let report = reference_gradcheck()?;
    println!("coordinates checked: {}", report.coords_checked);
    println!("max relative error:  {:.3e}", report.max_rel_err);
    println!("worst coordinate:    {}", report.worst);
    assert!(report.passes(MODEL_TOLERANCE));
    println!("within tolerance {MODEL_TOLERANCE:.0e}");
    Ok(())
}
