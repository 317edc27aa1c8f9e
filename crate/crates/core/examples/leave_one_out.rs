//! Prediction influence `D̂ = Σ_j |Ŷ − Ŷ_(j)|²` for a straight-line fit to
//! data with a few gross outliers: heavy-tailed fits move less when a case is
//! deleted.

use elliptic_bias::sim::d_hat;
use elliptic_bias::zoo::{HeteroNonlinear, VarianceLink};
use elliptic_bias::{fit, DensityFamily, EstimatorSet, FitOptions, ObservationBlock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> elliptic_bias::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let blocks: Vec<ObservationBlock> = (0..30)
        .map(|i| {
            let x = i as f64 / 3.0;
            let mut y = 2.0 + 0.8 * x + noise.sample(&mut rng);
            if i % 10 == 3 {
                y += 12.0;
            }
            ObservationBlock::scalar(y, vec![1.0, x], vec![])
        })
        .collect();
    let opts = FitOptions::default().with_estimators(EstimatorSet::MLE);
    for family in [
        DensityFamily::normal(),
        DensityFamily::student_t(3.0)?,
        DensityFamily::cauchy(),
        DensityFamily::power_exponential(0.8)?,
    ] {
        let label = family.label();
        let model = HeteroNonlinear::linear(2, VarianceLink::Identity, 1).into_model(blocks.clone(), family)?;
        let res = fit(&model, &opts)?;
        let d = d_hat(&model, res.theta_mle().unwrap(), "mle", &opts)?;
        let worst = d.per_case.iter().cloned().fold(0.0, f64::max);
        println!(
            "{label:<30} D = {:>8.4}   largest single deletion {worst:.4}   failed {}",
            d.value,
            d.failed.len()
        );
    }
    Ok(())
}
