use csi_recomp::model::{build_model_with, ArchConfig, ModelInput, ModelKind, Network};
use csi_recomp::nn::check::{check_layer, layer_suite, relative_error, STEP};
use csi_recomp::nn::Tensor;
use csi_recomp::preprocess::RecordDims;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-4;

#[test]
fn every_layer_matches_finite_differences() {
    for seed in 0..3 {
        for (name, mut layer, x) in layer_suite(seed) {
            let report = check_layer(&mut layer, &x, seed + 100);
            assert!(report.checked > 0);
            assert!(
                report.max() <= TOLERANCE,
                "{name} (seed {seed}): input {:.2e}, params {:.2e}",
                report.input,
                report.params
            );
        }
    }
}

fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
}

fn projected(net: &mut Network<f64>, input: &ModelInput<f64>, probe: &[f64]) -> f64 {
    let y = net.forward(input, true).unwrap();
    y.data.iter().zip(probe).map(|(a, b)| a * b).sum()
}

/// End-to-end check through encoders, concatenation and decoder on a small MMI graph,
/// sampling a subset of the parameters of every tensor.
#[test]
fn small_mmi_network_matches_finite_differences() {
    let dims = RecordDims {
        k: 8,
        f_b: 9,
        f_h: 12,
        h: 8,
        w: 8,
    };
    let arch = ArchConfig {
        bfm_channels: vec![3, 4],
        image_channels: vec![2, 4],
        decoder_channels: vec![4, 3],
    };
    let spec = build_model_with(ModelKind::Mmi, dims, &arch).unwrap();
    let mut net = Network::<f64>::new(spec, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let input = ModelInput {
        bfm: Some(random_tensor([3, 2, 8, 9], &mut rng)),
        image: Some(random_tensor([3, 3, 8, 8], &mut rng)),
    };
    let y = net.forward(&input, true).unwrap();
    let probe: Vec<f64> = (0..y.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    net.zero_grad();
    net.backward(Tensor::from_vec(y.shape, probe.clone()));
    let analytic: Vec<Vec<f64>> = net.params().into_iter().map(|(_, g)| g.clone()).collect();

    let mut worst: f64 = 0.0;
    for (p, grads) in analytic.iter().enumerate() {
        for _ in 0..6 {
            let i = rng.gen_range(0..grads.len());
            let orig = net.params()[p].0[i];
            net.params()[p].0[i] = orig + STEP;
            let plus = projected(&mut net, &input, &probe);
            net.params()[p].0[i] = orig - STEP;
            let minus = projected(&mut net, &input, &probe);
            net.params()[p].0[i] = orig;
            let e = relative_error(grads[i], (plus - minus) / (2.0 * STEP));
            worst = worst.max(e);
        }
    }
    assert!(worst <= TOLERANCE, "worst relative error {worst:.2e}");
}
