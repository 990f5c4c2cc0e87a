//! Quick closed-form checks behind the `verify` command.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{run_on, RunConfig, TaskSpec};
use crate::linalg::{exp_skew, geodesic_interp, ortho_log, OrthoMatrix, SymMatrix};
use crate::preconditioner::{as_rotation, estimate_basis, BasisKind, BasisSpec, Curvature, Power};
use crate::tasks::{random_orthogonal, search_power_covariance, PowerDirection, PowerSearch, TaskModel};
use crate::theory::{
    adam_gn_ratio_check, check_fisher_sandwich, contraction_factor, divergence_holds_on_grid, rate_bound,
    DIVERGENCE_CONSTANT,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check { name, passed, detail }
    }
}

fn random_pd(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::new(&a * a.transpose() + DMatrix::identity(n, n) * 1e-3).expect("finite")
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn check<F: FnOnce() -> crate::Result<(bool, String)>>(name: &'static str, f: F) -> Check {
    match f() {
        Ok((ok, detail)) => Check::new(name, ok, detail),
        Err(e) => Check::new(name, false, format!("error: {e}")),
    }
}

/// Runs every check; each is seeded and takes well under a second.
pub fn verify_all(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(SymMatrix, DVector<f64>, DVector<f64>)> = (0..100)
        .map(|_| {
            let n = rng.random_range(1..=8);
            (random_pd(n, &mut rng), random_vec(n, &mut rng), random_vec(n, &mut rng))
        })
        .collect();
    vec![
        check("one-step optimality", || {
            let mut c = RunConfig::new(TaskSpec::Quadratic { d: 50, seed });
            c.steps = 2;
            let task = c.task.build()?;
            let r = run_on(&task, &c)?;
            let ratio = r.rows[1].loss / r.rows[0].loss;
            Ok((ratio <= 1e-16, format!("loss ratio after one step {ratio:e}")))
        }),
        check("identity-basis GN equals GD", || {
            let mut gd = RunConfig::new(TaskSpec::Block { d_block: 10, seed });
            gd.basis = BasisKind::Identity;
            gd.lr = 0.05;
            gd.steps = 50;
            let task = gd.task.build()?;
            let TaskModel::Quadratic(m) = &task.model else { unreachable!() };
            let mut worst: f64 = 0.0;
            for power in [Power::Inv, Power::InvSqrt] {
                let c = RunConfig { power, ..gd.clone() };
                let r = run_on(&task, &c)?;
                let mut theta = task.init.clone().expect("quadratic tasks have a start");
                for row in &r.rows {
                    let g = crate::models::quad_population_grad(m, &theta)?;
                    worst = worst.max((row.loss - g.loss).abs() / g.loss.max(f64::MIN_POSITIVE));
                    theta -= g.grad * gd.lr;
                }
            }
            Ok((worst <= 1e-12, format!("max relative loss gap {worst:e}")))
        }),
        check("Fisher sandwich", || {
            let mut worst = f64::INFINITY;
            for (s, t, o) in &cases {
                let r = check_fisher_sandwich(s, t, o)?;
                worst = worst.min(r.lower_min_slack.min(r.upper_min_slack));
            }
            Ok((worst >= -1e-10, format!("min slack {worst:e} over {} cases", cases.len())))
        }),
        check("Adam/GN diagonal ratio", || {
            let mut ok = true;
            for (s, t, o) in &cases {
                let eig = estimate_basis(&Curvature::Dense(s.clone()), BasisKind::Eigen)?;
                for b in [BasisSpec::Identity, eig] {
                    ok &= adam_gn_ratio_check(s, t, o, &b)?.all_ok;
                }
            }
            Ok((ok, "identity and eigen bases".into()))
        }),
        check("κ_s ≥ d", || {
            let mut worst = f64::INFINITY;
            for (s, _, _) in &cases {
                let p = s.psd_power(-0.5)?;
                let r = rate_bound(&p, s)?;
                worst = worst.min(r.kappa_s / s.dim() as f64);
            }
            Ok((worst >= 1.0 - 1e-12, format!("min κ_s/d {worst:.6}")))
        }),
        check("power covariance search", || {
            let mut msg = Vec::new();
            for dir in [PowerDirection::HalfWins, PowerDirection::OneWins] {
                let t = search_power_covariance(&PowerSearch::new(5, dir, 10_000, seed))?;
                msg.push(format!("{dir:?} r = {:.4}", t.condition_ratio.unwrap_or(f64::NAN)));
            }
            Ok((true, msg.join(", ")))
        }),
        check("divergence threshold", || {
            Ok((
                divergence_holds_on_grid(DIVERGENCE_CONSTANT),
                format!("c = {DIVERGENCE_CONSTANT}"),
            ))
        }),
        check("contraction factor", || {
            let h = SymMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.2, 0.01]))?;
            let nu = DVector::from_vec(vec![0.5, 0.3, 0.2]);
            let zero = contraction_factor(&h, &nu, 1.0, 0.0)?;
            let one = contraction_factor(&h, &nu, 0.0, 1e-2)?;
            Ok((zero == 0.0 && one == 1.0, format!("γ(1, 0) = {zero}, γ(0, ε) = {one}")))
        }),
        check("geodesic interpolation", || {
            let mut worst: f64 = 0.0;
            for n in 2..=6 {
                let u = as_rotation(OrthoMatrix::nearest(random_orthogonal(n, &mut rng))?);
                let back = exp_skew(&ortho_log(&u)?);
                worst = worst.max((back.as_matrix() - u.as_matrix()).amax());
                for a in [0.25, 0.5, 0.75] {
                    worst = worst.max(geodesic_interp(&u, a)?.orthonormality_error());
                }
            }
            Ok((worst < 1e-8, format!("max error {worst:e}")))
        }),
    ]
}
