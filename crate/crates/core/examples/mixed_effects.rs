//! Linear mixed model with random intercept and slope; the marginal law of
//! each subject's response vector is elliptical with `Σ_i = Z Σ_b Zᵀ + σ²I`.

use elliptic_bias::zoo::MixedEffects;
use elliptic_bias::{fit, DensityFamily, FitOptions, ObservationBlock, Structure};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> elliptic_bias::Result<()> {
    let family = DensityFamily::student_t(5.0)?;
    let structure = MixedEffects::linear(2, 2);
    // (α₀, α₁, Σ_b11, Σ_b12, Σ_b22, σ²)
    let truth = DVector::from_vec(vec![10.0, 2.0, 4.0, 0.5, 1.0, 1.5]);
    let times = [0.0, 1.0, 2.0, 3.0, 4.0];
    let design: Vec<f64> = times.iter().flat_map(|&t| [1.0, t]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let blocks = (0..30)
        .map(|_| {
            let mut b = ObservationBlock::new(DVector::zeros(times.len()), design.clone(), design.clone());
            b.y = family.sample(
                &structure.location(&truth, &b)?,
                &structure.scale(&truth, &b)?,
                &mut rng,
            )?;
            Ok(b)
        })
        .collect::<elliptic_bias::Result<Vec<_>>>()?;
    let model = structure.into_model(blocks, family)?;
    let res = fit(&model, &FitOptions::default())?;
    for (r, name) in res.names.iter().enumerate() {
        let se = res
            .mle
            .as_ref()
            .and_then(|e| e.std_err.as_ref())
            .map_or(f64::NAN, |s| s[r]);
        println!(
            "{name:<10} true {:>7.3}   MLE {:>7.3} ({se:.3})   BC {:>7.3}   BR {:>7.3}",
            truth[r],
            res.theta_mle().unwrap()[r],
            res.theta_bc().unwrap()[r],
            res.theta_br().unwrap()[r]
        );
    }
    Ok(())
}
