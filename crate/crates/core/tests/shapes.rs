use csi_recomp::bfm::emulate_bfm;
use csi_recomp::model::{build_model, build_model_with, count_params, ArchConfig, LayerSpec, ModelKind, Network};
use csi_recomp::nn::layers::Layer;
use csi_recomp::nn::Tensor;
use csi_recomp::preprocess::{build_record, fit_norm_stats, flatten_bfm, flatten_csi_amplitude, RecordDims};
use csi_recomp::sim::{generate_dataset, SceneConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn preprocessing_shape_suite() {
    for (k, m, n) in [(64, 3, 4), (256, 3, 4), (16, 2, 2)] {
        let config = SceneConfig {
            subcarriers: k,
            tx_antennas: m,
            rx_antennas: n,
            image_size: [120, 160],
            ..SceneConfig::default()
        };
        let pairs = generate_dataset(&config, 3).unwrap();
        let targets: Vec<_> = pairs.iter().map(|(_, c)| flatten_csi_amplitude(c)).collect();
        let stats = fit_norm_stats(&targets).unwrap();
        let s_cols = m.min(n);
        for ((state, csi), target) in pairs.iter().zip(&targets) {
            assert_eq!(target.shape, [k, n * m, 1]);
            let bfm = emulate_bfm(csi).unwrap();
            assert_eq!(flatten_bfm(&bfm).shape, [k, m * s_cols, 2]);
            let record = build_record(&bfm, csi, Some(&state.image), &stats, [96, 96]).unwrap();
            assert_eq!(
                record.dims,
                RecordDims {
                    k,
                    f_b: m * s_cols,
                    f_h: n * m,
                    h: 96,
                    w: 96
                }
            );
            assert_eq!(record.bfm_features.len(), k * m * s_cols * 2);
            assert_eq!(record.target.len(), k * n * m);
            assert_eq!(record.image.as_ref().unwrap().len(), 96 * 96 * 3);
            assert!(record.target.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

fn dims(k: usize, h: usize, w: usize) -> RecordDims {
    RecordDims {
        k,
        f_b: 9,
        f_h: 12,
        h,
        w,
    }
}

#[test]
fn default_parameter_counts_are_ordered() {
    let d = dims(64, 96, 96);
    let count = |kind| count_params(&build_model(kind, d).unwrap());
    let (mmi, image, bfm) = (
        count(ModelKind::Mmi),
        count(ModelKind::SmiImage),
        count(ModelKind::SmiBfm),
    );
    assert!(mmi > image && image > bfm, "{mmi} {image} {bfm}");
    let mut net = Network::<f32>::new(build_model(ModelKind::Mmi, d).unwrap(), 0).unwrap();
    assert_eq!(net.param_count(), mmi);
    assert_eq!(count_params(&build_model(ModelKind::SmiBfm, d).unwrap()), bfm);
}

#[test]
fn default_mmi_output_shape() {
    let spec = build_model(ModelKind::Mmi, dims(64, 96, 96)).unwrap();
    assert_eq!(spec.output_shape().unwrap(), [1, 64, 12]);
    let mut net = Network::<f32>::new(build_model(ModelKind::SmiBfm, dims(64, 96, 96)).unwrap(), 1).unwrap();
    let input = csi_recomp::model::ModelInput {
        bfm: Some(Tensor::zeros([2, 2, 64, 9])),
        image: None,
    };
    let y = net.forward(&input, false).unwrap();
    assert_eq!(y.shape, [2, 1, 64, 12]);
    assert!(y.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoder_outputs_agree_for_valid_configs(
        k4 in 2usize..40,
        hw in prop::sample::select(vec![[32usize, 32usize], [48, 64], [96, 96], [120, 160]]),
        bfm_channels in prop::collection::vec(1usize..40, 2..=2),
        mut image_channels in prop::collection::vec(1usize..40, 1..4),
        decoder_channels in prop::collection::vec(1usize..40, 2..=2),
    ) {
        *image_channels.last_mut().unwrap() = bfm_channels[1];
        let arch = ArchConfig { bfm_channels, image_channels, decoder_channels };
        let spec = build_model_with(ModelKind::Mmi, dims(4 * k4, hw[0], hw[1]), &arch).unwrap();
        spec.validate().unwrap();
        let b = spec.bfm_encoder_output().unwrap().unwrap();
        let i = spec.image_encoder_output().unwrap().unwrap();
        prop_assert_eq!(b, i);
        prop_assert_eq!(spec.output_shape().unwrap(), [1, 4 * k4, 12]);
    }
}

fn permute_last_axis(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let w = t.shape[3];
    let mut out = t.clone();
    for (dst, src) in out.data.chunks_mut(w).zip(t.data.chunks(w)) {
        for (j, &p) in perm.iter().enumerate() {
            dst[j] = src[p];
        }
    }
    out
}

#[test]
fn bfm_encoder_is_equivariant_to_element_permutations() {
    let spec = build_model(ModelKind::SmiBfm, dims(16, 8, 8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut layers: Vec<Layer<f64>> = spec
        .bfm_encoder
        .as_ref()
        .unwrap()
        .iter()
        .map(LayerSpec::instantiate)
        .collect();
    for layer in &mut layers {
        for (p, _) in layer.params() {
            p.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
    }
    let run = |layers: &mut Vec<Layer<f64>>, x: &Tensor<f64>| {
        let mut cur = x.clone();
        for l in layers.iter_mut() {
            cur = l.forward(&cur, true);
        }
        cur
    };
    let x = Tensor::from_vec(
        [3, 2, 16, 9],
        (0..3 * 2 * 16 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    let perm = [4, 0, 8, 1, 7, 2, 6, 3, 5];
    let direct = permute_last_axis(&run(&mut layers, &x), &perm);
    let permuted = run(&mut layers, &permute_last_axis(&x, &perm));
    assert_eq!(direct.shape, permuted.shape);
    for (a, b) in direct.data.iter().zip(&permuted.data) {
        assert!((a - b).abs() <= 1e-12);
    }
}
