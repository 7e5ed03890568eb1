use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{CubicProduct, HalfSquaredNorm, LinearForm, Quadratic};
use crate::models::ModelSpec;

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    t(shape, &v)
}

const NONE: &[Tensor] = &[];

#[test]
fn init_zero_and_uniform() {
    let x = Tensor::<f64>::zeros([4, 5]);
    let cfg = AttackConfig::new(1, 0.01, 0.1);
    assert!(init_delta(&x, &cfg, 1).data().iter().all(|&v| v == 0.0));

    let cfg = cfg.with_init(InitMode::UniformRandom);
    let big = Tensor::<f64>::zeros([100_000, 1]);
    let d = init_delta(&big, &cfg, 7);
    assert!(d.data().iter().all(|v| v.abs() <= 0.1));
    let mean = d.sum() / 1e5;
    // Uniform on [−ε, ε] has σ = ε/√3; the mean of 10⁵ draws has σ/√10⁵.
    let sigma = 0.1 / 3f64.sqrt() / 1e5f64.sqrt();
    assert!(mean.abs() <= 3.0 * sigma, "mean {mean}");
    assert_eq!(init_delta(&x, &cfg, 3), init_delta(&x, &cfg, 3));
    assert_ne!(init_delta(&x, &cfg, 3), init_delta(&x, &cfg, 4));
}

#[test]
fn projection_examples() {
    let p = project_linf(&t(&[1, 2], &[0.3, -0.05]), 0.1).unwrap();
    assert_eq!(p.data(), &[0.1, -0.05]);
    let inside = t(&[1, 2], &[0.02, -0.1]);
    assert_eq!(project_linf(&inside, 0.1).unwrap(), inside);
}

#[test]
fn pgd_on_linear_loss() {
    let obj = LinearForm::new(vec![3.0, -1.0]);
    let x = Tensor::zeros([1, 2]);
    let cfg = AttackConfig::new(2, 0.1, 0.15).with_clamp(None);
    let adv = pgd_attack(&obj, NONE, &x, &[0], &cfg, 0).unwrap();
    assert_eq!(adv.delta.data(), &[0.15, -0.15]);
    assert_eq!(adv.grad_evals, 2);
    assert_eq!(adv.timings.steps.len(), 2);

    let gaat = gaat_attack(&obj, NONE, &x, &[0], &cfg, &HessianMode::GaussNewton, 0).unwrap();
    assert_eq!(gaat.delta, adv.delta);
    assert_eq!(gaat.grad_evals, 1);
}

#[test]
fn zero_steps_return_initial_delta() {
    let obj = LinearForm::new(vec![3.0, -1.0]);
    let x = t(&[2, 2], &[0.5, 0.5, 0.2, 0.9]);
    let cfg = AttackConfig::new(0, 0.1, 0.05).with_init(InitMode::UniformRandom);
    let d0 = init_delta(&x, &cfg, 11);
    let pgd = pgd_attack(&obj, NONE, &x, &[0, 0], &cfg, 11).unwrap();
    let gaat = gaat_attack(&obj, NONE, &x, &[0, 0], &cfg, &HessianMode::GaussNewton, 11).unwrap();
    assert_eq!(pgd.delta, d0);
    assert_eq!(gaat.delta, d0);
    assert_eq!(pgd.grad_evals, 0);
    assert_eq!(gaat.grad_evals, 0);
}

#[test]
fn gauss_newton_examples() {
    let j = t(&[1, 2], &[1.0, 2.0]);
    let hd = gauss_newton_hvp(&j, &t(&[1, 2], &[0.5, 0.5])).unwrap();
    assert_eq!(hd.data(), &[1.5, 3.0]);
    let ortho = gauss_newton_hvp(&j, &t(&[1, 2], &[2.0, -1.0])).unwrap();
    assert_eq!(ortho.data(), &[0.0, 0.0]);
    assert!(gauss_newton_hvp(&j, &Tensor::zeros([1, 3])).is_err());
}

#[test]
fn gauss_newton_matches_outer_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..50 {
        let d = rng.random_range(1..=32);
        let n = rng.random_range(1..=3);
        let j = random_tensor(&[n, d], -2.0, 2.0, case);
        let delta = random_tensor(&[n, d], -1.0, 1.0, 1000 + case);
        let got = gauss_newton_hvp(&j, &delta).unwrap();
        for b in 0..n {
            let jb = j.example(b);
            let db = delta.example(b);
            for r in 0..d {
                let want: f64 = (0..d).map(|c| jb[r] * jb[c] * db[c]).sum();
                assert!((got.example(b)[r] - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }
    }
}

#[test]
fn approx_grad_examples() {
    let j = t(&[1, 2], &[3.0, -1.0]);
    let h = Surrogate::GaussNewton(j.clone());
    assert_eq!(approx_grad(&j, &h, &Tensor::zeros([1, 2])).unwrap(), j);
    let g = approx_grad(&j, &h, &t(&[1, 2], &[0.1, -0.1])).unwrap();
    assert!((g.data()[0] - 4.2).abs() < 1e-12 && (g.data()[1] + 1.4).abs() < 1e-12);

    // Exact on a quadratic with the oracle Hessian.
    let q = Quadratic::random(6, 3);
    let x = random_tensor(&[2, 6], 0.0, 1.0, 4);
    let delta = random_tensor(&[2, 6], -0.1, 0.1, 5);
    let (_, j) = autodiff::loss_and_input_grad(&q, NONE, &x, &[0, 0]).unwrap();
    let (h, _) = build_surrogate(&q, NONE, &x, &[0, 0], &j, &HessianMode::ExactOracle, 0).unwrap();
    let approx = approx_grad(&j, &h, &delta).unwrap();
    let xd = x.add(&delta).unwrap();
    for b in 0..2 {
        let truth = q.gradient_at(xd.example(b));
        for (a, w) in approx.example(b).iter().zip(&truth) {
            assert!((a - w).abs() <= 1e-10);
        }
    }
}

#[test]
fn diagonal_surrogates() {
    let x = t(&[1, 2], &[1.0, 2.0]);
    let d = diag_hessian_surrogate(&CubicProduct, NONE, &x, &[0], &HessianMode::ExactOracle, 0).unwrap();
    assert_eq!(d.data(), &[4.0, 0.0]);
    // Separable quadratic: diagonal A.
    let q = Quadratic::new(3, vec![2.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.5], vec![0.0; 3], 0.0).unwrap();
    let x = random_tensor(&[2, 3], 0.0, 1.0, 1);
    let d = diag_hessian_surrogate(&q, NONE, &x, &[0, 0], &HessianMode::ExactDiagonal, 0).unwrap();
    assert_eq!(d.data(), &[2.0, -1.0, 0.5, 2.0, -1.0, 0.5]);
    let est = diag_hessian_surrogate(&q, NONE, &x, &[0, 0], &HessianMode::Diagonal { probes: 1 }, 0).unwrap();
    assert_eq!(est, d);
    assert!(diag_hessian_surrogate(&q, NONE, &x, &[0, 0], &HessianMode::GaussNewton, 0).is_err());
}

#[test]
fn hutchinson_tracks_exact_diagonal_on_small_net() {
    let spec = ModelSpec::mlp([1, 4, 4], vec![32], 4);
    let params = spec.init::<f64>(2).unwrap();
    let x = random_tensor(&[4, 1, 4, 4], 0.0, 1.0, 9);
    let y = [0, 1, 2, 3];
    let p = params.tensors();
    let exact = diag_hessian_surrogate(&spec, p, &x, &y, &HessianMode::ExactOracle, 0).unwrap();
    let est = diag_hessian_surrogate(&spec, p, &x, &y, &HessianMode::Diagonal { probes: 256 }, 1).unwrap();
    let err = est.sub(&exact).unwrap();
    let rel = err.dot(&err).unwrap().sqrt() / exact.dot(&exact).unwrap().sqrt();
    assert!(rel <= 0.25, "relative error {rel}");
}

#[test]
fn quadratic_approx_loss_examples() {
    let x = t(&[1, 2], &[1.0, 0.0]);
    let delta = t(&[1, 2], &[0.1, 0.1]);
    let zero = Tensor::zeros([1, 2]);
    let h = HalfSquaredNorm;
    let exact = quadratic_approx_loss(&h, NONE, &x, &[0], &delta, &HessianMode::ExactOracle).unwrap();
    assert!((exact - 0.61).abs() < 1e-12);
    let gn = quadratic_approx_loss(&h, NONE, &x, &[0], &delta, &HessianMode::GaussNewton).unwrap();
    assert!((gn - 0.605).abs() < 1e-12);
    let at0 = quadratic_approx_loss(&h, NONE, &x, &[0], &zero, &HessianMode::GaussNewton).unwrap();
    assert_eq!(at0, 0.5);
}

#[test]
fn quadratic_sign_patterns_match_pgd() {
    for seed in 0..5 {
        let q = Quadratic::random(8, seed);
        let x = random_tensor(&[3, 8], 0.2, 0.8, seed + 10);
        let cfg = AttackConfig::new(20, 0.01, 0.05).with_init(InitMode::UniformRandom);
        let mut a = Vec::new();
        let mut b = Vec::new();
        let pgd = pgd_attack_observed(&q, NONE, &x, &[0; 3], &cfg, seed, |_, s| a.push(s.clone())).unwrap();
        let gaat = gaat_attack_observed(&q, NONE, &x, &[0; 3], &cfg, &HessianMode::ExactOracle, seed, |_, s| {
            b.push(s.clone())
        })
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(pgd.delta, gaat.delta);
    }
}

#[test]
fn config_validation() {
    assert!(AttackConfig::new(1, 0.1, -0.1).validate().is_err());
    assert!(AttackConfig::new(1, f64::NAN, 0.1).validate().is_err());
    assert!(AttackConfig::new(1, 0.1, 0.1).with_clamp(Some((1.0, 0.0))).validate().is_err());
    assert!(AttackConfig::new(1, 0.5, 0.1).validate().is_ok());
    assert!(AttackConfig::new(1, 0.1, 0.0).validate().is_ok());
}

#[test]
fn attacks_raise_model_loss() {
    let spec = ModelSpec::mlp([1, 4, 4], vec![16], 3);
    let params = spec.init::<f64>(0).unwrap();
    let x = random_tensor(&[8, 1, 4, 4], 0.0, 1.0, 2);
    let y = [0, 1, 2, 0, 1, 2, 0, 1];
    let cfg = AttackConfig::new(10, 0.02, 0.1);
    let clean = autodiff::per_example_losses(&spec, params.tensors(), &x, &y).unwrap();
    let adv = pgd_attack(&spec, params.tensors(), &x, &y, &cfg, 0).unwrap();
    let xa = x.add(&adv.delta).unwrap();
    let attacked = autodiff::per_example_losses(&spec, params.tensors(), &xa, &y).unwrap();
    let (c, a): (f64, f64) = (clean.iter().sum(), attacked.iter().sum());
    assert!(a > c, "{a} <= {c}");
}

fn check_feasible(x: &Tensor, delta: &Tensor, cfg: &AttackConfig) {
    for (&xi, &d) in x.data().iter().zip(delta.data()) {
        assert!(d.abs() <= cfg.epsilon + 1e-12, "|{d}| > {}", cfg.epsilon);
        if let Some((lo, hi)) = cfg.clamp_input {
            assert!(xi + d >= lo && xi + d <= hi, "{xi} + {d} outside [{lo}, {hi}]");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_idempotent(v in proptest::collection::vec(-1.0f64..1.0, 1..40), eps in 0.0f64..0.5) {
        let d = t(&[1, v.len()], &v);
        let p = project_linf(&d, eps).unwrap();
        prop_assert_eq!(project_linf(&p, eps).unwrap(), p.clone());
        prop_assert!(p.max_abs() <= eps);
    }

    #[test]
    fn attacks_stay_feasible(
        steps in 0usize..6,
        alpha in 0.0f64..0.3,
        eps in 0.0f64..0.3,
        random_init in any::<bool>(),
        clamp in any::<bool>(),
        gaat in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let spec = ModelSpec::mlp([1, 3, 3], vec![8], 3);
        let params = spec.init::<f64>(seed).unwrap();
        let x = random_tensor(&[3, 1, 3, 3], 0.0, 1.0, seed ^ 1);
        let init = if random_init { InitMode::UniformRandom } else { InitMode::Zero };
        let cfg = AttackConfig::new(steps, alpha, eps)
            .with_init(init)
            .with_clamp(if clamp { Some((0.0, 1.0)) } else { None });
        let adv = if gaat {
            gaat_attack(&spec, params.tensors(), &x, &[0, 1, 2], &cfg, &HessianMode::GaussNewton, seed)
        } else {
            pgd_attack(&spec, params.tensors(), &x, &[0, 1, 2], &cfg, seed)
        }.unwrap();
        check_feasible(&x, &adv.delta, &cfg);
        let again = if gaat {
            gaat_attack(&spec, params.tensors(), &x, &[0, 1, 2], &cfg, &HessianMode::GaussNewton, seed)
        } else {
            pgd_attack(&spec, params.tensors(), &x, &[0, 1, 2], &cfg, seed)
        }.unwrap();
        prop_assert_eq!(adv.delta, again.delta);
        prop_assert_eq!(adv.grad_evals, if gaat { usize::from(steps > 0) } else { steps });
    }

    #[test]
    fn domain_clamp_is_tight(x in proptest::collection::vec(0.0f64..=1.0, 1..30), raw in proptest::collection::vec(-0.5f64..0.5, 30)) {
        let xt = t(&[1, x.len()], &x);
        let mut d = t(&[1, x.len()], &raw[..x.len()]);
        let before = d.clone();
        clamp_to_domain(&xt, &mut d, 0.0, 1.0).unwrap();
        for ((&xi, &di), &bi) in x.iter().zip(d.data()).zip(before.data()) {
            prop_assert!((0.0..=1.0).contains(&(xi + di)));
            prop_assert!(di.abs() <= bi.abs());
        }
    }
}
