//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so that every criterion is reported even
//! when an earlier one fails; the process exits non-zero if any fails.
//! `cargo test --test acceptance -- 3 7` runs a subset.

#![allow(clippy::needless_range_loop)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma;

use common::dv;
use elliptic_bias::moments::{check_moments, default_trace_matrices};
use elliptic_bias::sim::{run_simulation, SimConfig, SimReport};
use elliptic_bias::zoo::{
    ErrorsInVariables, ExpLinear, HeteroNonlinear, LogSymmetric, LogisticMean, MixedEffects, VarianceLink,
};
use elliptic_bias::{
    bias_vector, bias_vector_normal_reduced, bias_vector_orthogonal, fisher_information, log_likelihood, score,
    DensityFamily, ModelSpec, ObservationBlock, Result, Structure,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (usize, &'static str, Option<Duration>, fn() -> Verdict);

const CRITERIA: [Criterion; 10] = [
    (
        1,
        "psi quadrature vs closed forms",
        Some(Duration::from_secs(10)),
        psi_fidelity,
    ),
    (
        2,
        "analytic score vs finite differences",
        Some(Duration::from_secs(30)),
        score_gradient,
    ),
    (
        3,
        "MC covariance of the score vs K",
        Some(Duration::from_secs(300)),
        information_identity,
    ),
    (
        4,
        "closed-form normal bias",
        Some(Duration::from_secs(1)),
        closed_form_bias,
    ),
    (
        5,
        "Cox-Snell bias from MC cumulants",
        Some(Duration::from_secs(120)),
        cox_snell_mc,
    ),
    (6, "bias path agreement", None, path_agreement),
    (7, "nonlinear normal sigma2 bias, n=20", None, nonlinear_normal),
    (8, "nonlinear Student t sigma2 bias, n=20", None, nonlinear_student),
    (9, "errors-in-variables Sigma_q bias, n=25", None, eiv_tables),
    (10, "radial moment identities", None, moment_identities),
];

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (k, name, limit, check) in CRITERIA {
        if !only.is_empty() && !only.contains(&k) {
            continue;
        }
        let start = Instant::now();
        let mut v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        if let Some(limit) = limit {
            if took > limit {
                v.pass = false;
                v.detail.push_str(&format!("; exceeded {limit:?}"));
            }
        }
        println!(
            "acceptance {k:>2} {}: {name} — {} [{took:.1?}]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed.push(k);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: FAILED {failed:?}");
        std::process::exit(1);
    }
}

fn families() -> Vec<DensityFamily> {
    vec![
        DensityFamily::normal(),
        DensityFamily::cauchy(),
        DensityFamily::student_t(4.0).unwrap(),
        DensityFamily::student_t(2.5).unwrap(),
        DensityFamily::power_exponential(0.7).unwrap(),
        DensityFamily::power_exponential(1.5).unwrap(),
    ]
}

/// The published closed forms, written out independently of the library.
fn table_psi(f: &DensityFamily, q: usize) -> [f64; 4] {
    let q = q as f64;
    let student = |nu: f64| {
        [
            q * (q + nu) / (4.0 * (q + nu + 2.0)),
            q * (q + 2.0) * (q + nu) / (4.0 * (q + nu + 2.0)),
            -q * (q + 2.0) * (q + nu).powi(2) / (8.0 * (q + 2.0 + nu) * (q + 4.0 + nu)),
            -q * (q + 2.0) * (q + 4.0) * (q + nu).powi(2) / (8.0 * (q + 2.0 + nu) * (q + 4.0 + nu)),
        ]
    };
    match f.kind() {
        elliptic_bias::FamilyKind::Normal => [
            q / 4.0,
            q * (q + 2.0) / 4.0,
            -q * (q + 2.0) / 8.0,
            -q * (q + 2.0) * (q + 4.0) / 8.0,
        ],
        elliptic_bias::FamilyKind::Cauchy => student(1.0),
        elliptic_bias::FamilyKind::StudentT { nu } => student(*nu),
        elliptic_bias::FamilyKind::PowerExponential { lambda } => {
            let l = *lambda;
            let den = 2f64.powf(1.0 / l) * gamma(q / (2.0 * l));
            [
                l * l * gamma((q - 2.0) / (2.0 * l) + 2.0) / den,
                q * (2.0 * l + q) / 4.0,
                -l.powi(3) * gamma((q - 2.0) / (2.0 * l) + 3.0) / den,
                -q * (2.0 * l + q) * (4.0 * l + q) / 8.0,
            ]
        }
        other => panic!("no closed form for {other:?}"),
    }
}

fn psi_fidelity() -> Verdict {
    let mut worst = (0.0f64, String::new());
    for f in families() {
        for q in 1..=6 {
            let table = table_psi(&f, q);
            for (j, &(l, k)) in [(2, 1), (2, 2), (3, 2), (3, 3)].iter().enumerate() {
                let quad = f.psi_by_quadrature(q, l, k).unwrap();
                let closed = f.psi_moment(q, l, k).unwrap();
                for v in [quad, closed] {
                    let rel = (v - table[j]).abs() / table[j].abs();
                    if rel > worst.0 {
                        worst = (rel, format!("{} q={q} psi({l},{k})", f.label()));
                    }
                }
            }
        }
    }
    verdict(
        worst.0 < 1e-8,
        format!("max rel err {:.2e} at {} (tol 1e-8)", worst.0, worst.1),
    )
}

fn draw_model(
    structure: Arc<dyn Structure>,
    blocks: Vec<ObservationBlock>,
    family: &DensityFamily,
    theta: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> ModelSpec {
    let ys = blocks
        .iter()
        .map(|b| {
            family
                .sample(
                    &structure.location(theta, b).unwrap(),
                    &structure.scale(theta, b).unwrap(),
                    rng,
                )
                .unwrap()
        })
        .collect();
    ModelSpec::new(structure, blocks, family.clone())
        .unwrap()
        .with_responses(ys)
        .unwrap()
}

/// Five-point central difference of the log-likelihood. The step is small
/// because power exponential kernels with λ < 1 have unbounded higher
/// derivatives near zero residuals, where a wide stencil loses accuracy.
fn fd_score(model: &ModelSpec, theta: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(theta.len(), |r, _| {
        let h = 1e-5 * (1.0 + theta[r].abs());
        let at = |s: f64| {
            let mut t = theta.clone();
            t[r] += s * h;
            log_likelihood(model, &t).unwrap()
        };
        (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h)
    })
}

/// The four zoo models with a baseline θ and covariates.
type ZooCase = (&'static str, Arc<dyn Structure>, Vec<ObservationBlock>, DVector<f64>);

fn zoo(rng: &mut ChaCha8Rng) -> Vec<ZooCase> {
    let n = 15;
    let hetero = (0..n)
        .map(|_| {
            ObservationBlock::scalar(
                0.0,
                vec![rng.random_range(0.5..10.0)],
                vec![1.0, rng.random_range(-1.0..1.0)],
            )
        })
        .collect();
    let mixed = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..4).flat_map(|t| [1.0, t as f64]).collect();
            ObservationBlock::new(DVector::zeros(4), x.clone(), x)
        })
        .collect();
    let eiv = (0..n)
        .map(|_| {
            let t = |rng: &mut ChaCha8Rng| DMatrix::from_element(1, 1, rng.random_range(0.5..3.0));
            let (t1, t2) = (t(rng), t(rng));
            ErrorsInVariables::observation(&[0.0], &[0.0], &t1, &t2)
        })
        .collect();
    let logsym = (0..n)
        .map(|_| {
            ObservationBlock::scalar(
                1.0,
                vec![1.0, rng.random_range(0.0..1.0)],
                vec![1.0, rng.random_range(-1.0..1.0)],
            )
        })
        .collect();
    vec![
        (
            "hetero-nonlinear",
            Arc::new(HeteroNonlinear::new(Arc::new(LogisticMean), VarianceLink::Exp, 2)),
            hetero,
            dv(&[5.0, 20.0, 0.5, 1.5, 0.5, 0.3]),
        ),
        (
            "mixed-effects",
            Arc::new(MixedEffects::linear(2, 2)),
            mixed,
            dv(&[10.0, 2.0, 4.0, 0.5, 1.0, 1.0]),
        ),
        (
            "errors-in-variables",
            Arc::new(ErrorsInVariables::new(1, 1)),
            eiv,
            dv(&[0.7, 0.4, 7.0, 25.0, 4.0]),
        ),
        (
            "log-symmetric",
            Arc::new(LogSymmetric::new(Arc::new(ExpLinear { k: 2 }), VarianceLink::Exp, 2).structure()),
            logsym,
            dv(&[1.0, 0.5, -1.4, 0.3]),
        ),
    ]
}

fn score_gradient() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fams = [
        DensityFamily::normal(),
        DensityFamily::student_t(4.0).unwrap(),
        DensityFamily::power_exponential(0.7).unwrap(),
    ];
    let mut worst = (0.0f64, String::new());
    for (name, s, blocks, base) in zoo(&mut rng) {
        for draw in 0..20 {
            let family = &fams[draw % fams.len()];
            // Multiplicative jitter keeps variances positive and Σ_b diagonally dominant.
            let theta = base.map(|v| v * (1.0 + 0.3 * (2.0 * rng.random::<f64>() - 1.0)));
            let model = draw_model(s.clone(), blocks.clone(), family, &theta, &mut rng);
            // Evaluate away from the generating value so the score is not near zero.
            let at = theta.map(|v| v * (1.0 + 0.05 * (2.0 * rng.random::<f64>() - 1.0)));
            let u = score(&model, &at).unwrap();
            let fd = fd_score(&model, &at);
            let rel = (&u - &fd).amax() / u.amax().max(1.0);
            if rel > worst.0 {
                worst = (rel, format!("{name}, {}", family.label()));
            }
        }
    }
    verdict(
        worst.0 < 1e-5,
        format!("80 draws, max rel err {:.2e} ({}) (tol 1e-5)", worst.0, worst.1),
    )
}

const DESIGN_X: [f64; 20] = [
    30.4515, 5.0565, 37.8435, 95.008, 38.4761, 93.433, 26.9824, 61.1123, 1.8622, 1.2292, 85.6294, 70.7551, 0.2111,
    3.638, 23.5674, 41.9772, 2.7806, 14.5764, 74.8698, 18.763,
];

fn nonlinear_model(family: &DensityFamily) -> ModelSpec {
    let blocks = DESIGN_X
        .iter()
        .map(|&x| ObservationBlock::scalar(0.0, vec![x], vec![]))
        .collect();
    HeteroNonlinear::logistic().into_model(blocks, family.clone()).unwrap()
}

fn information_identity() -> Verdict {
    let theta = dv(&[50.0, 500.0, 0.5, 2.0, 200.0]);
    let draws = 100_000;
    let mut details = Vec::new();
    let mut pass = true;
    for family in [DensityFamily::normal(), DensityFamily::student_t(4.0).unwrap()] {
        let model = nonlinear_model(&family);
        let k = fisher_information(&model, &theta).unwrap();
        let p = theta.len();
        let mus: Vec<_> = (0..model.n_obs()).map(|i| model.location(&theta, i).unwrap()).collect();
        let sigmas: Vec<_> = (0..model.n_obs()).map(|i| model.scale(&theta, i).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut sum, mut sq) = (DMatrix::<f64>::zeros(p, p), DMatrix::<f64>::zeros(p, p));
        for _ in 0..draws {
            let ys = mus
                .iter()
                .zip(&sigmas)
                .map(|(m, s)| family.sample(m, s, &mut rng).unwrap())
                .collect();
            let u = score(&model.with_responses(ys).unwrap(), &theta).unwrap();
            let uu = &u * u.transpose();
            sq += uu.component_mul(&uu);
            sum += uu;
        }
        let n = draws as f64;
        let mean = &sum / n;
        let se = (&sq / n - mean.component_mul(&mean)).map(|v| (v.max(0.0) / (n - 1.0)).sqrt());
        let z = (0..p * p).map(|e| (mean[e] - k[e]).abs() / se[e]).fold(0.0, f64::max);
        pass &= z < 4.0;
        details.push(format!("{} max z {z:.2}", family.label()));
    }
    verdict(pass, format!("{} (1e5 datasets each, tol 4 se)", details.join(", ")))
}

fn closed_form_bias() -> Verdict {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sigma2 = 2.5;
    for n in [5, 20, 50] {
        let nf = n as f64;
        let iid: Vec<_> = (0..n)
            .map(|_| ObservationBlock::scalar(0.0, vec![1.0], vec![]))
            .collect();
        let m = HeteroNonlinear::linear(1, VarianceLink::Identity, 1)
            .into_model(iid, DensityFamily::normal())
            .unwrap();
        let b = bias_vector(&m, &dv(&[3.0, sigma2])).unwrap().bias;
        worst = worst.max((&b - dv(&[0.0, -sigma2 / nf])).amax());

        let reg: Vec<_> = (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(-1.0..1.0);
                ObservationBlock::scalar(0.0, vec![1.0, x, x * x], vec![])
            })
            .collect();
        let m = HeteroNonlinear::linear(3, VarianceLink::Identity, 1)
            .into_model(reg, DensityFamily::normal())
            .unwrap();
        let b = bias_vector(&m, &dv(&[1.0, -2.0, 0.5, sigma2])).unwrap().bias;
        worst = worst.max((&b - dv(&[0.0, 0.0, 0.0, -3.0 * sigma2 / nf])).amax());
    }
    verdict(
        worst < 1e-10,
        format!("n in {{5, 20, 50}}, max abs err {worst:.2e} (tol 1e-10)"),
    )
}

/// `y_i ~ N(exp(a x_i), exp(b))`.
#[derive(Debug)]
struct TinyExp;

impl Structure for TinyExp {
    fn n_params(&self) -> usize {
        2
    }
    fn location(&self, t: &DVector<f64>, o: &ObservationBlock) -> Result<DVector<f64>> {
        Ok(dv(&[(t[0] * o.x[0]).exp()]))
    }
    fn scale(&self, t: &DVector<f64>, _: &ObservationBlock) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_element(1, 1, t[1].exp()))
    }
}

/// Joint cumulants of the tiny model's log-likelihood derivatives.
#[derive(Clone, Default)]
struct Cumulants {
    /// E ℓ_rs, E ℓ_rst, E ℓ_rs ℓ_t
    d2: [[f64; 2]; 2],
    d3: [[[f64; 2]; 2]; 2],
    d21: [[[f64; 2]; 2]; 2],
}

impl Cumulants {
    fn add(&mut self, o: &Cumulants, w: f64) {
        for r in 0..2 {
            for s in 0..2 {
                self.d2[r][s] += w * o.d2[r][s];
                for t in 0..2 {
                    self.d3[r][s][t] += w * o.d3[r][s][t];
                    self.d21[r][s][t] += w * o.d21[r][s][t];
                }
            }
        }
    }

    /// `b_s = κ^{sr} κ^{tu} (½κ_{rtu} + κ_{rt,u})`
    fn bias(&self) -> [f64; 2] {
        let k = DMatrix::from_fn(2, 2, |r, s| -self.d2[r][s]);
        let ki = k.try_inverse().unwrap();
        let mut w = [0.0; 2];
        for (r, wr) in w.iter_mut().enumerate() {
            for t in 0..2 {
                for u in 0..2 {
                    *wr += ki[(t, u)] * (0.5 * self.d3[r][t][u] + self.d21[r][t][u]);
                }
            }
        }
        [
            ki[(0, 0)] * w[0] + ki[(0, 1)] * w[1],
            ki[(1, 0)] * w[0] + ki[(1, 1)] * w[1],
        ]
    }
}

/// Hand-derived derivatives of the total log-likelihood.
fn tiny_derivatives(a: f64, b: f64, xs: &[f64], ys: &[f64]) -> Cumulants {
    let s = (-b).exp();
    let (mut g, mut h, mut t3) = ([0.0; 2], [[0.0; 2]; 2], [[[0.0; 2]; 2]; 2]);
    for (&x, &y) in xs.iter().zip(ys) {
        let mu = (a * x).exp();
        let (m1, m2, m3) = (x * mu, x * x * mu, x * x * x * mu);
        let r = y - mu;
        g[0] += r * m1 * s;
        g[1] += -0.5 + 0.5 * r * r * s;
        let (haa, hab, hbb) = ((-m1 * m1 + r * m2) * s, -r * m1 * s, -0.5 * r * r * s);
        h[0][0] += haa;
        h[0][1] += hab;
        h[1][0] += hab;
        h[1][1] += hbb;
        let (aaa, aab, abb, bbb) = (
            (-3.0 * m1 * m2 + r * m3) * s,
            (m1 * m1 - r * m2) * s,
            r * m1 * s,
            0.5 * r * r * s,
        );
        let idx = |i: usize, j: usize, k: usize| match i + j + k {
            0 => aaa,
            1 => aab,
            2 => abb,
            _ => bbb,
        };
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    t3[i][j][k] += idx(i, j, k);
                }
            }
        }
    }
    let mut c = Cumulants {
        d2: h,
        d3: t3,
        ..Default::default()
    };
    for r in 0..2 {
        for t in 0..2 {
            for u in 0..2 {
                c.d21[r][t][u] = h[r][t] * g[u];
            }
        }
    }
    c
}

fn cox_snell_mc() -> Verdict {
    let xs = [0.2, 0.5, 0.9, 1.3];
    let (a, b) = (0.8, (0.5f64).ln());
    let model = ModelSpec::new(
        Arc::new(TinyExp),
        xs.iter()
            .map(|&x| ObservationBlock::scalar(0.0, vec![x], vec![]))
            .collect(),
        DensityFamily::normal(),
    )
    .unwrap();
    let lib = bias_vector(&model, &dv(&[a, b])).unwrap().bias;

    let (batches, per) = (100, 10_000);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = rand_distr::Normal::new(0.0, (b / 2.0).exp()).unwrap();
    let mut total = Cumulants::default();
    let mut batch_bias = Vec::with_capacity(batches);
    for _ in 0..batches {
        let mut c = Cumulants::default();
        for _ in 0..per {
            let ys: Vec<f64> = xs.iter().map(|&x| (a * x).exp() + rng.sample(normal)).collect();
            c.add(&tiny_derivatives(a, b, &xs, &ys), 1.0 / per as f64);
        }
        batch_bias.push(c.bias());
        total.add(&c, 1.0 / batches as f64);
    }
    let mc = total.bias();
    let mut zs = [0.0; 2];
    for r in 0..2 {
        let m = batch_bias.iter().map(|v| v[r]).sum::<f64>() / batches as f64;
        let var = batch_bias.iter().map(|v| (v[r] - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
        zs[r] = (mc[r] - lib[r]).abs() / (var / batches as f64).sqrt();
    }
    verdict(
        zs.iter().all(|z| *z < 4.0),
        format!(
            "library ({:.5}, {:.5}) vs MC ({:.5}, {:.5}), z = ({:.2}, {:.2}) (1e6 draws, tol 4 se)",
            lib[0], lib[1], mc[0], mc[1], zs[0], zs[1]
        ),
    )
}

fn path_agreement() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut orth, mut red) = (0.0f64, 0.0f64);
    for (name, s, blocks, theta) in zoo(&mut rng) {
        if name == "errors-in-variables" {
            continue;
        }
        for family in [
            DensityFamily::normal(),
            DensityFamily::student_t(4.0).unwrap(),
            DensityFamily::power_exponential(0.7).unwrap(),
        ] {
            let model = draw_model(s.clone(), blocks.clone(), &family, &theta, &mut rng);
            let g = bias_vector(&model, &theta).unwrap().bias;
            let o = bias_vector_orthogonal(&model, &theta).unwrap().bias;
            orth = orth.max((&g - &o).amax() / g.amax());
            if family.is_normal() {
                let r = bias_vector_normal_reduced(&model, &theta).unwrap().bias;
                red = red.max((&g - &r).amax() / g.amax());
            }
        }
    }
    verdict(
        orth < 1e-8 && red < 1e-10,
        format!("orthogonal rel diff {orth:.2e} (tol 1e-8), normal reduction {red:.2e} (tol 1e-10)"),
    )
}

fn preset(name: &str) -> SimConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "presets", name].iter().collect();
    SimConfig::load(&path).unwrap()
}

fn sigma_row(report: &SimReport, n: usize, param: &str, est: &str) -> (f64, f64) {
    let r = report.row(n, param, est).unwrap();
    (r.bias, r.bias_se)
}

fn within(got: (f64, f64), target: f64, k: f64) -> bool {
    (got.0 - target).abs() <= k * got.1
}

fn show(label: &str, v: (f64, f64)) -> String {
    format!("{label} {:.2} ± {:.2}", v.0, v.1)
}

fn nonlinear_normal() -> Verdict {
    let cfg = preset("table3_n20.toml");
    assert_eq!(cfg.reps, 2000);
    let rep = run_simulation(&cfg).unwrap();
    let [mle, bc, br] = ["mle", "bc", "br"].map(|e| sigma_row(&rep, 20, "sigma2", e));
    let pass =
        within(mle, -40.07, 3.0) && within(bc, -8.09, 3.0) && br.0.abs() < bc.0.abs() && bc.0.abs() < mle.0.abs();
    verdict(
        pass,
        format!(
            "{}, {}, {} (targets −40.07, −8.09 within 3 se; |BR| < |BC| < |MLE|; R = {})",
            show("MLE", mle),
            show("BC", bc),
            show("BR", br),
            cfg.reps
        ),
    )
}

fn nonlinear_student() -> Verdict {
    let cfg = preset("table4_n20.toml");
    assert_eq!(cfg.reps, 2000);
    let rep = run_simulation(&cfg).unwrap();
    let [mle, bc, br] = ["mle", "bc", "br"].map(|e| sigma_row(&rep, 20, "sigma2", e));
    let targets = [-41.24, -12.30, -4.55];
    let pass = [mle, bc, br]
        .iter()
        .zip(targets)
        .all(|(v, t)| within(*v, t, 3.0) && v.0 < 0.0)
        && br.0.abs() < bc.0.abs()
        && bc.0.abs() < mle.0.abs();
    verdict(
        pass,
        format!(
            "{}, {}, {} (targets −41.24 / −12.30 / −4.55 within 3 se, same sign and ordering; R = {})",
            show("MLE", mle),
            show("BC", bc),
            show("BR", br),
            cfg.reps
        ),
    )
}

fn eiv_tables() -> Verdict {
    let mut pass = true;
    let mut details = Vec::new();
    for (file, label, target) in [("table5_n25.toml", "t4", -2.31), ("table6_n25.toml", "PE0.7", -3.04)] {
        let cfg = preset(file);
        assert_eq!(cfg.reps, 1000);
        let rep = run_simulation(&cfg).unwrap();
        let [mle, bc, br] = ["mle", "bc", "br"].map(|e| sigma_row(&rep, 25, "sigma_q", e));
        let ordering = mle.0.abs() > bc.0.abs() && bc.0.abs() >= br.0.abs();
        let sign = mle.0 < 0.0 && within(mle, target, 3.0);
        pass &= ordering && sign;
        details.push(format!(
            "{label}: {}, {}, {} [ordering {}, MLE vs {target} {}]",
            show("MLE", mle),
            show("BC", bc),
            show("BR", br),
            if ordering { "ok" } else { "violated" },
            if sign { "ok" } else { "off" }
        ));
    }
    verdict(pass, details.join("; "))
}

fn moment_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = (0.0f64, String::new());
    for family in [
        DensityFamily::normal(),
        DensityFamily::student_t(4.0).unwrap(),
        DensityFamily::power_exponential(0.8).unwrap(),
    ] {
        for q in 1..=3 {
            let sigma = DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 + 0.5 * i as f64 } else { 0.3 });
            for c in check_moments(&family, &sigma, &default_trace_matrices(q), 1_000_000, &mut rng).unwrap() {
                let z = c.max_z();
                if z > worst.0 {
                    worst = (z, format!("{} q={q} {}", family.label(), c.name));
                }
            }
        }
    }
    verdict(
        worst.0 < 4.0,
        format!("max z {:.2} at {} (1e6 draws, tol 4 se)", worst.0, worst.1),
    )
}
