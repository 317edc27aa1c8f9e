//! Errors-in-variables regression with known, observation-specific
//! measurement-error variances τ (the heteroscedastic design).

use elliptic_bias::zoo::ErrorsInVariables;
use elliptic_bias::{fit, DensityFamily, FitOptions, ModelSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn main() -> elliptic_bias::Result<()> {
    let family = DensityFamily::power_exponential(0.7)?;
    let s = Arc::new(ErrorsInVariables::new(1, 1));
    // (β₀, β₁, μ_x, Σ_x, Σ_q)
    let truth = DVector::from_vec(vec![0.7, 0.4, 70.0, 250.0, 40.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut blocks = Vec::new();
    for _ in 0..100 {
        let t1 = DMatrix::from_element(1, 1, rng.random_range(1.0..20.0));
        let t2 = DMatrix::from_element(1, 1, rng.random_range(1.0..20.0));
        let mut b = ErrorsInVariables::observation(&[0.0], &[0.0], &t1, &t2);
        let mu = elliptic_bias::Structure::location(s.as_ref(), &truth, &b)?;
        let sigma = elliptic_bias::Structure::scale(s.as_ref(), &truth, &b)?;
        b.y = family.sample(&mu, &sigma, &mut rng)?;
        blocks.push(b);
    }
    let model = ModelSpec::new(s, blocks, family)?;
    let res = fit(&model, &FitOptions::default())?;
    let se = res
        .mle
        .as_ref()
        .and_then(|e| e.std_err.clone())
        .expect("information is nonsingular");
    println!(
        "{:<8} {:>8} {:>10} {:>8} {:>10} {:>10}",
        "param", "true", "MLE", "se", "BC", "BR"
    );
    for (r, name) in res.names.iter().enumerate() {
        println!(
            "{:<8} {:>8.2} {:>10.4} {:>8.4} {:>10.4} {:>10.4}",
            name,
            truth[r],
            res.theta_mle().unwrap()[r],
            se[r],
            res.theta_bc().unwrap()[r],
            res.theta_br().unwrap()[r]
        );
    }
    Ok(())
}
