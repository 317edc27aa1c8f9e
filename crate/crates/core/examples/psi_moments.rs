//! Radial moments ψ(l,k): closed forms against quadrature, then a Monte Carlo
//! check of the moment identities behind the information and bias formulas.

use elliptic_bias::moments::{check_moments, default_trace_matrices};
use elliptic_bias::DensityFamily;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> elliptic_bias::Result<()> {
    let families = [
        DensityFamily::normal(),
        DensityFamily::student_t(4.0)?,
        DensityFamily::power_exponential(0.8)?,
    ];
    for fam in &families {
        println!("{}", fam.label());
        for q in 1..=3 {
            let k = fam.derived_constants(q)?;
            let quad = fam.psi_by_quadrature(q, 2, 1)?;
            println!(
                "  q={q}  psi21={:.10} (quadrature {:.10})  c={:.6}  c*={:.6}  omega~={:.6}",
                k.psi21, quad, k.c, k.c_star, k.omega_tilde
            );
        }
    }

    let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
    let a = default_trace_matrices(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    println!("\nmoment identities, q = 2, 200000 draws (max |z| over entries)");
    for fam in &families {
        let checks = check_moments(fam, &sigma, &a, 200_000, &mut rng)?;
        let zs: Vec<String> = checks.iter().map(|c| format!("{:.2}", c.max_z())).collect();
        println!("  {:<28} {}", fam.label(), zs.join("  "));
    }
    Ok(())
}
