//! The second-order bias vector on a normal linear regression, where it is
//! known in closed form: zero for β and −p·σ²/n for σ². The three
//! computational paths (general, orthogonal blocks, normal reduction) agree.

use elliptic_bias::zoo::{HeteroNonlinear, VarianceLink};
use elliptic_bias::{bias_vector, bias_vector_normal_reduced, bias_vector_orthogonal, DensityFamily, ObservationBlock};
use nalgebra::DVector;

fn main() -> elliptic_bias::Result<()> {
    let (n, sigma2) = (20, 3.0);
    let blocks: Vec<ObservationBlock> = (0..n)
        .map(|i| {
            let x = i as f64 / n as f64;
            ObservationBlock::scalar(0.0, vec![1.0, x, x * x], vec![])
        })
        .collect();
    let model = HeteroNonlinear::linear(3, VarianceLink::Identity, 1).into_model(blocks, DensityFamily::normal())?;
    let theta = DVector::from_vec(vec![1.0, -2.0, 0.5, sigma2]);

    let general = bias_vector(&model, &theta)?.bias;
    let orth = bias_vector_orthogonal(&model, &theta)?.bias;
    let reduced = bias_vector_normal_reduced(&model, &theta)?.bias;
    println!("general      {}", show(&general, 12));
    println!("orthogonal   {}", show(&orth, 12));
    println!("normal J     {}", show(&reduced, 12));
    println!(
        "closed form sigma2 bias = -p sigma2 / n = {:.12}",
        -3.0 * sigma2 / n as f64
    );

    // Heavier tails change the σ² bias but not the β part.
    let t = model.with_family(DensityFamily::student_t(5.0)?)?;
    println!("student-t(5) {}", show(&bias_vector(&t, &theta)?.bias, 6));
    Ok(())
}

fn show(v: &DVector<f64>, digits: usize) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("[{}]", parts.join(", "))
}
