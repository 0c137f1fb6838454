use chained_gp::data::Dataset;
use chained_gp::datagen::{default_beta_truths, gen_beta_synthetic};
use chained_gp::fit::TrainConfig;
use chained_gp::harness::cv::{fold_partition, nlpd};
use chained_gp::harness::Checkpoint;
use chained_gp::init::{init_model, ModelInit};
use chained_gp::svgp::LatentGP;
use chained_gp::{fit, ChainedModel, Integrator, KernelSpec, LikelihoodFamily};
use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

fn constant_model(family: LikelihoodFamily, f: f64, g: f64) -> ChainedModel {
    let k = KernelSpec::bias(1.0);
    ChainedModel::new(
        vec![LatentGP::constant(k.clone(), 1, f), LatentGP::constant(k, 1, g)],
        DMatrix::zeros(1, 1),
        family,
        Integrator::default(),
    )
    .unwrap()
}

#[test]
fn gaussian_quantiles_match_closed_form() {
    let (mu, log_var) = (0.7, (0.3f64).ln());
    let model = constant_model(LikelihoodFamily::HetGaussian, mu, log_var);
    let probs = [0.05, 0.5, 0.95];
    let q = model.predictive_quantiles(&DMatrix::zeros(2, 1), &probs).unwrap();
    let normal = Normal::new(mu, 0.3f64.sqrt()).unwrap();
    for row in q {
        for (p, v) in probs.iter().zip(row) {
            assert!((v - normal.inverse_cdf(*p)).abs() < 1e-6, "{p}: {v}");
        }
    }
}

#[test]
fn beta_fit_beats_uniform_on_held_out_data() {
    let (a, b) = default_beta_truths();
    let data = gen_beta_synthetic(300, a, b, 8).unwrap();
    let parts = fold_partition(data.len(), 3, 1).unwrap();
    let test = data.subset(&parts[0]);
    let train_idx: Vec<usize> = parts[1..].concat();
    let train = data.subset(&train_idx);
    let mut model = init_model(&train, LikelihoodFamily::Beta, &ModelInit { m: 15, seed: 2, ..Default::default() }).unwrap();
    let before = model.full_elbo(&train).unwrap();
    let cfg = TrainConfig {
        batch_size: 64,
        learning_rate: 0.01,
        iterations: 800,
        fixed_iterations: 50,
        ..Default::default()
    };
    fit(&mut model, &train, &cfg).unwrap();
    assert!(model.full_elbo(&train).unwrap() > before);
    // uniform density on (0, 1) has NLPD 0
    let held_out = nlpd(&model, &test).unwrap();
    assert!(held_out < -0.1, "{held_out}");
}

#[test]
fn checkpoint_reproduces_predictions() {
    let x = DMatrix::from_fn(30, 1, |i, _| i as f64 / 10.0);
    let y: Vec<f64> = (0..30).map(|i| (i as f64 / 5.0).sin()).collect();
    let data = Dataset::new(x.clone(), y, None).unwrap();
    let mut model =
        init_model(&data, LikelihoodFamily::student_t(), &ModelInit { m: 5, ..Default::default() }).unwrap();
    let cfg = TrainConfig {
        iterations: 30,
        fixed_iterations: 5,
        learning_rate: 0.01,
        ..Default::default()
    };
    fit(&mut model, &data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    Checkpoint::new(&model, None).save(&path).unwrap();
    let restored = Checkpoint::load(&path).unwrap().model().unwrap();
    assert_eq!(model.predict(&x).unwrap(), restored.predict(&x).unwrap());
    assert_eq!(model.log_predictive(&data).unwrap(), restored.log_predictive(&data).unwrap());
}
