//! Whole-network gradient checks on the mini backbones, through training-mode
//! batch norm, the sigmoid and the focal loss.

use fakeguard_core::metrics::{focal_loss_op, FocalParams};
use fakeguard_core::model::{is_trainable, Family, ModelSpec, Network, Preset};
use fakeguard_core::nn::{sigmoid, NormMode};
use fakeguard_core::tensor::{grad_check_sampled, GradCheckReport, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_backbone(family: Family, seed: u64) -> GradCheckReport {
    let spec = ModelSpec::preset(family, Preset::Mini);
    let net = Network::<f64>::build(&spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let input = Tensor::<f64>::from_fn(&[2, 3, 32, 32], |_| rng.random_range(-1.0..1.0));
    let labels = [1.0, 0.0];
    let entries = net.weights().entries().to_vec();
    let params: Vec<(String, Tensor<f64>)> = entries.iter().filter(|(p, _)| is_trainable(p)).cloned().collect();
    let focal = FocalParams::default();
    grad_check_sampled(
        |tape, vars| {
            let mut trainable = vars.iter();
            let all: Vec<_> = entries
                .iter()
                .map(|(path, t)| match is_trainable(path) {
                    true => *trainable.next().unwrap(),
                    false => tape.constant(t.clone()),
                })
                .collect();
            let x = tape.constant(input.clone());
            let pass = net
                .forward(tape, &all, x, NormMode::Training)
                .map_err(|e| TensorError::Contract(e.to_string()))?;
            let p = sigmoid(tape, pass.logits);
            focal_loss_op(tape, p, &labels, &focal)
        },
        &params,
        1e-5,
        1e-4,
        6,
        seed,
    )
    .unwrap()
}

fn assert_backbone(family: Family) {
    for seed in 0..3 {
        let report = check_backbone(family, seed);
        assert!(report.passed, "{family} seed {seed}: {report:?}");
        // a perturbation moves thousands of downstream ReLU inputs, so a fair
        // share of probes straddle some kink; most must still be scored
        assert!(
            report.straddled_kinks * 2 <= report.probed,
            "{family} seed {seed}: {} of {} probes straddled a kink",
            report.straddled_kinks,
            report.probed
        );
    }
}

#[test]
fn resnet_mini_gradients_match_finite_differences() {
    assert_backbone(Family::Resnet);
}

#[test]
fn xception_mini_gradients_match_finite_differences() {
    assert_backbone(Family::Xception);
}
