mod common;

use common::{grad_check, sample_indices, toy_model, toy_records};
use progsynth::datagen::DatasetRecord;
use progsynth::model::{loss_latent, loss_program, standard_normal, supervised_loss, LossWeights};
use progsynth::rng::seeded;

fn eps_for(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    (0..n).map(|_| standard_normal(d, &mut rng)).collect()
}

#[test]
fn program_loss_gradient_matches_central_differences() {
    let model = toy_model(3);
    let records = toy_records(4, 11);
    let batch: Vec<&DatasetRecord> = records.iter().collect();
    let eps = eps_for(batch.len(), model.latent_dim(), 5);
    let out = loss_program(&model, &batch, &eps, 0.1);
    let idx = sample_indices(model.num_params(), 300, 1);
    let err = grad_check(&model, &out.grad, &idx, |m| loss_program(m, &batch, &eps, 0.1).loss);
    let norm: f64 = out.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    eprintln!("rel err {err:e}, grad norm {norm}");
    assert!(norm > 1e-3);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn latent_loss_gradient_matches_central_differences() {
    let model = toy_model(4);
    let records = toy_records(3, 12);
    let batch: Vec<&DatasetRecord> = records.iter().collect();
    let eps = eps_for(batch.len(), model.latent_dim(), 6);
    let out = loss_latent(&model, &batch, &eps);
    let idx = sample_indices(model.num_params(), 300, 2);
    let err = grad_check(&model, &out.grad, &idx, |m| loss_latent(m, &batch, &eps).loss);
    let norm: f64 = out.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    eprintln!("rel err {err:e}, grad norm {norm}");
    assert!(norm > 1e-3);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn combined_loss_is_the_weighted_sum() {
    let model = toy_model(5);
    let records = toy_records(3, 13);
    let batch: Vec<&DatasetRecord> = records.iter().collect();
    let eps = eps_for(batch.len(), model.latent_dim(), 7);
    let w = LossWeights {
        program: 0.7,
        latent: 1.3,
        beta: 0.2,
    };
    let both = supervised_loss(&model, &batch, &eps, w);
    let p = loss_program(&model, &batch, &eps, 0.2);
    let l = loss_latent(&model, &batch, &eps);
    assert!((both.loss - (0.7 * p.loss + 1.3 * l.loss)).abs() < 1e-10);
    for i in 0..model.num_params() {
        let want = 0.7 * p.grad[i] + 1.3 * l.grad[i];
        assert!((both.grad[i] - want).abs() < 1e-10, "param {i}");
    }
}
