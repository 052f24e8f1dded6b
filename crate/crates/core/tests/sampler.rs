use deco_core::model::{DecoderConfig, DiTConfig, Generator, ModelConfig, Variant};
use deco_core::sampler::{cfg_velocity, euler_sample, heun_sample, sample, FnModel, GeneratorModel, SamplerConfig, Solver};
use deco_core::{Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn noise(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), &mut ChaCha8Rng::seed_from_u64(seed))
}

fn config(steps: usize, solver: Solver) -> SamplerConfig {
    SamplerConfig {
        steps,
        solver,
        ..SamplerConfig::default()
    }
}

fn field(f: impl Fn(f64, f64) -> f64) -> FnModel<impl FnMut(&Tensor<f64>, f64, &[usize]) -> Result<Tensor<f64>>> {
    FnModel {
        f: move |x: &Tensor<f64>, t: f64, _y: &[usize]| Ok(x.map(|v| f(v, t))),
        null_label: 0,
    }
}

#[test]
fn guidance_examples() {
    let c = Tensor::<f64>::ones([2, 2]);
    let u = Tensor::<f64>::zeros([2, 2]);
    for t in [0.0, 0.05, 0.5, 1.0] {
        assert_eq!(cfg_velocity(&c, &u, 1.0, t, [0.1, 1.0]).unwrap(), c);
    }
    assert_eq!(cfg_velocity(&c, &u, 3.0, 0.05, [0.1, 1.0]).unwrap(), c);
    assert_eq!(cfg_velocity(&c, &u, 2.0, 0.5, [0.1, 1.0]).unwrap(), Tensor::full([2, 2], 2.0));
    assert!(cfg_velocity(&c, &Tensor::zeros([4]), 2.0, 0.5, [0.1, 1.0]).is_err());
}

#[test]
fn constant_field_is_integrated_exactly() {
    let x0 = noise(&[2, 4, 4, 3], 1);
    let x1 = noise(&[2, 4, 4, 3], 2);
    let v = x1.sub(&x0).unwrap();
    let mut model = FnModel {
        f: |_: &Tensor<f64>, _: f64, _: &[usize]| Ok(v.clone()),
        null_label: 0,
    };
    let euler = euler_sample(&mut model, &x1, &[0, 0], &config(1, Solver::Euler)).unwrap();
    for (a, b) in euler.images.data().iter().zip(x0.data()) {
        assert!((a - b).abs() < 1e-15);
    }
    let euler = euler_sample(&mut model, &x1, &[0, 0], &config(7, Solver::Euler)).unwrap();
    let heun = heun_sample(&mut model, &x1, &[0, 0], &config(7, Solver::Heun)).unwrap();
    for (a, b) in euler.images.data().iter().zip(heun.images.data()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn heun_is_exact_for_fields_linear_in_time() {
    let (a, b) = (0.7, -1.9);
    let x1 = noise(&[1, 2, 2, 3], 3);
    // x(0) = x(1) − ∫₀¹ (a + b·t) dt
    let exact = x1.map(|v| v - a - b / 2.0);
    let mut m = field(move |_, t| a + b * t);
    let heun = heun_sample(&mut m, &x1, &[0], &config(2, Solver::Heun)).unwrap();
    let euler = euler_sample(&mut m, &x1, &[0], &config(2, Solver::Euler)).unwrap();
    for ((h, e), x) in heun.images.data().iter().zip(euler.images.data()).zip(exact.data()) {
        assert!((h - x).abs() < 1e-14);
        assert!((e - x).abs() > 0.1);
    }
}

fn log_log_slope(steps: &[usize], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = steps.iter().map(|&n| (1.0 / n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

#[test]
fn convergence_orders() {
    // dx/dt = x·cos t, so x(0) = x(1)·exp(−sin 1)
    let x1 = Tensor::<f64>::from_f64([1, 1, 1, 3], &[1.0, -0.5, 2.0]).unwrap();
    let exact = x1.map(|v| v * (-(1f64).sin()).exp());
    let steps = [8, 16, 32, 64];
    for (solver, order) in [(Solver::Euler, 1.0), (Solver::Heun, 2.0)] {
        let errors: Vec<f64> = steps
            .iter()
            .map(|&n| {
                let mut m = field(|x, t| x * t.cos());
                let out = sample_with(&mut m, &x1, &config(n, solver));
                out.sub(&exact).unwrap().max_abs()
            })
            .collect();
        let slope = log_log_slope(&steps, &errors);
        assert!((slope - order).abs() <= 0.3, "{solver:?}: slope {slope}, errors {errors:?}");
    }
}

fn sample_with<M: deco_core::sampler::VelocityModel<f64>>(m: &mut M, x1: &Tensor<f64>, cfg: &SamplerConfig) -> Tensor<f64> {
    match cfg.solver {
        Solver::Euler => euler_sample(m, x1, &[0], cfg).unwrap().images,
        Solver::Heun => heun_sample(m, x1, &[0], cfg).unwrap().images,
    }
}

#[test]
fn evaluation_counts() {
    let x1 = noise(&[1, 2, 2, 3], 4);
    let mut m = field(|x, _| x);
    let run = |m: &mut _, solver, s, final_euler| {
        let cfg = SamplerConfig {
            steps: 10,
            solver,
            cfg_scale: s,
            heun_final_euler: final_euler,
            ..SamplerConfig::default()
        };
        match solver {
            Solver::Euler => euler_sample(m, &x1, &[1], &cfg).unwrap().nfe,
            Solver::Heun => heun_sample(m, &x1, &[1], &cfg).unwrap().nfe,
        }
    };
    assert_eq!(run(&mut m, Solver::Euler, 1.0, false), 10);
    assert_eq!(run(&mut m, Solver::Euler, 3.0, false), 20);
    assert_eq!(run(&mut m, Solver::Heun, 1.0, false), 20);
    assert_eq!(run(&mut m, Solver::Heun, 3.0, false), 40);
    assert_eq!(run(&mut m, Solver::Heun, 1.0, true), 19);
}

#[test]
fn unguided_output_ignores_the_interval() {
    let mut a = field(|x, t| x * t - 0.3);
    let mut b = field(|x, t| x * t - 0.3);
    let c1 = SamplerConfig {
        steps: 12,
        seed: 9,
        guidance_interval: [0.1, 1.0],
        ..SamplerConfig::default()
    };
    let c2 = SamplerConfig {
        guidance_interval: [0.6, 0.7],
        ..c1.clone()
    };
    let r1 = sample(&mut a, &[0, 1], [4, 4, 3], &c1).unwrap();
    let r2 = sample(&mut b, &[0, 1], [4, 4, 3], &c2).unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut m = field(|x, _| x);
    let x1 = noise(&[1, 2, 2, 3], 0);
    for cfg in [
        SamplerConfig {
            steps: 0,
            ..SamplerConfig::default()
        },
        SamplerConfig {
            guidance_interval: [0.5, 0.5],
            ..SamplerConfig::default()
        },
        SamplerConfig {
            cfg_scale: 0.5,
            ..SamplerConfig::default()
        },
    ] {
        assert!(!cfg.violations().is_empty());
        assert!(euler_sample(&mut m, &x1, &[0], &cfg).is_err());
    }
}

fn tiny_generator() -> (Generator<f64>, deco_core::params::ParamStore<f64>) {
    let cfg = ModelConfig {
        variant: Variant::Deco,
        dit: DiTConfig {
            depth: 1,
            hidden_dim: 16,
            heads: 2,
            patch_size: 4,
            num_classes: 3,
            image_height: 8,
            image_width: 8,
            channels: 3,
            ffn_hidden: 0,
            time_freq_dim: 16,
        },
        decoder: DecoderConfig {
            hidden_dim: 8,
            depth: 1,
            ..DecoderConfig::default()
        },
    };
    let (model, mut params) = Generator::new(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    // move off the zero-velocity initialization
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for v in params.values_mut() {
        let n = Tensor::<f64>::randn(v.shape().to_vec(), &mut rng).scale(0.05);
        *v = v.add(&n).unwrap();
    }
    (model, params)
}

#[test]
fn generator_sampling_is_pure_and_repeatable() {
    let (model, params) = tiny_generator();
    let before = params.clone();
    let cfg = SamplerConfig {
        steps: 6,
        cfg_scale: 2.0,
        seed: 4,
        ..SamplerConfig::default()
    };
    let run = || {
        let mut vm = GeneratorModel::new(&model, &params);
        vm.capture = true;
        let out = sample(&mut vm, &[0, 2], [8, 8, 3], &cfg).unwrap();
        // only conditional evaluations are recorded
        assert_eq!(vm.features.len(), 6);
        assert_eq!(vm.features[0].shape(), &[2, 2, 2, 16]);
        out
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert_eq!(a.nfe, 12);
    assert!(a.images.data().iter().any(|&v| v != 0.0));
    assert_eq!(params, before);
}
