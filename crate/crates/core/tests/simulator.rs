use csi_recomp::sim::{
    blocks_line_of_sight, generate_dataset, raster_to_room, render_image, scene_state, steering_vector,
    synthesize_clean_csi, synthesize_csi, ChannelComponents, SceneConfig, PEDESTRIAN,
};

fn noise_free() -> SceneConfig {
    SceneConfig {
        components: ChannelComponents {
            noise: false,
            ..ChannelComponents::default()
        },
        ..SceneConfig::default()
    }
}

fn mean_magnitude(config: &SceneConfig, xy: [f64; 2]) -> f64 {
    let csi = synthesize_clean_csi(config, 0, xy).unwrap();
    csi.data.iter().map(|z| z.norm()).sum::<f64>() / csi.data.len() as f64
}

#[test]
fn line_of_sight_only_channel_is_flat_across_subcarriers() {
    let config = SceneConfig {
        components: ChannelComponents::los_only(),
        ..SceneConfig::default()
    };
    let csi = synthesize_clean_csi(&config, 0, [3.0, 1.0]).unwrap();
    let per_element = csi.n * csi.m;
    for e in 0..per_element {
        let mags: Vec<f64> = (0..csi.k).map(|k| csi.data[k * per_element + e].norm()).collect();
        let hi = mags.iter().copied().fold(f64::MIN, f64::max);
        let lo = mags.iter().copied().fold(f64::MAX, f64::min);
        assert!(hi - lo <= 1e-9 * hi, "element {e}: spread {}", hi - lo);
    }
}

#[test]
fn blocking_the_direct_path_lowers_mean_magnitude() {
    let config = noise_free();
    let clear = [[3.0, 1.0], [3.0, 4.0], [2.0, 0.8], [4.2, 4.4], [1.5, 3.8]];
    let blocked = [[3.0, 2.5], [2.0, 2.6], [4.0, 2.4], [2.5, 2.5]];
    for b in blocked {
        assert!(blocks_line_of_sight(&config, b));
        for c in clear {
            assert!(!blocks_line_of_sight(&config, c));
            assert!(
                mean_magnitude(&config, b) < mean_magnitude(&config, c),
                "blocked {b:?} vs clear {c:?}"
            );
        }
    }
    let no_blockage = SceneConfig {
        components: ChannelComponents {
            blockage: false,
            ..config.components
        },
        ..config.clone()
    };
    assert!(mean_magnitude(&config, [3.0, 2.5]) < mean_magnitude(&no_blockage, [3.0, 2.5]));
}

#[test]
fn empirical_snr_matches_configuration() {
    let config = SceneConfig::default();
    let samples = 10_000u64;
    let mut ratios = 0.0;
    for t in 0..samples {
        let state = scene_state(&config, t);
        let clean = synthesize_clean_csi(&config, t, state.pedestrian_xy).unwrap();
        let noisy = synthesize_csi(&config, &state).unwrap();
        let signal: f64 = clean.data.iter().map(|z| z.norm_sqr()).sum();
        let noise: f64 = clean
            .data
            .iter()
            .zip(&noisy.data)
            .map(|(a, b)| (b - a).norm_sqr())
            .sum();
        ratios += signal / noise;
    }
    let snr_db = 10.0 * (ratios / samples as f64).log10();
    assert!((snr_db - config.snr_db).abs() <= 0.5, "empirical SNR {snr_db:.3} dB");
}

#[test]
fn generation_is_deterministic() {
    let config = SceneConfig {
        rng_seed: 7,
        ..SceneConfig::default()
    };
    let a = generate_dataset(&config, 50).unwrap();
    let b = generate_dataset(&config, 50).unwrap();
    for ((sa, ca), (sb, cb)) in a.iter().zip(&b) {
        assert_eq!(sa.image, sb.image);
        let bits = |c: &csi_recomp::sim::CsiSample| {
            c.data
                .iter()
                .flat_map(|z| [z.re.to_bits(), z.im.to_bits()])
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(ca), bits(cb));
    }
    let other = generate_dataset(&SceneConfig { rng_seed: 8, ..config }, 50).unwrap();
    assert_ne!(a[3].1, other[3].1);
}

#[test]
fn single_sample_starts_at_time_zero() {
    let data = generate_dataset(&SceneConfig::default(), 1).unwrap();
    assert_eq!(data.len(), 1);
    assert_eq!(data[0].0.t, 0);
    assert_eq!(data[0].1.t, 0);
}

#[test]
fn round_robin_allocates_samples_evenly() {
    let config = SceneConfig::default();
    assert_eq!(config.walk_paths.len(), 4);
    let mut counts = [0usize; 4];
    for i in 0..4000 {
        counts[scene_state(&config, i).path_index] += 1;
    }
    assert_eq!(counts, [1000; 4]);
}

#[test]
fn steering_vectors_have_array_norm() {
    for (elements, dir) in [(3, [1.0, 0.0, 0.0]), (4, [0.3, -0.8, 0.2]), (4, [0.0, 1.0, 0.0])] {
        let a = steering_vector(elements, 0.5, dir);
        let norm: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((norm - (elements as f64).sqrt()).abs() <= 1e-12);
    }
}

fn pedestrian_centroid(config: &SceneConfig, xy: [f64; 2]) -> [f64; 2] {
    let image = render_image(config, xy);
    let (mut sr, mut sc, mut count) = (0.0, 0.0, 0.0);
    for r in 0..image.height {
        for c in 0..image.width {
            if image.pixel(r, c) == PEDESTRIAN {
                sr += r as f64;
                sc += c as f64;
                count += 1.0;
            }
        }
    }
    assert!(count > 0.0, "pedestrian not drawn at {xy:?}");
    raster_to_room(config, [sr / count, sc / count])
}

#[test]
fn rendered_disc_maps_back_to_pedestrian() {
    for config in [SceneConfig::default(), SceneConfig::camera_resolution()] {
        let pitch =
            (config.room_size[0] / config.image_size[1] as f64).max(config.room_size[1] / config.image_size[0] as f64);
        for xy in [[3.0, 2.5], [2.0, 1.0], [4.1, 3.7], [1.2, 4.0]] {
            let back = pedestrian_centroid(&config, xy);
            let err = ((back[0] - xy[0]).powi(2) + (back[1] - xy[1]).powi(2)).sqrt();
            assert!(err <= pitch, "{xy:?} -> {back:?}, pitch {pitch}");
        }
    }
}

#[test]
fn distinct_positions_render_distinct_rasters() {
    let config = SceneConfig::default();
    assert_ne!(render_image(&config, [2.0, 1.0]), render_image(&config, [2.2, 1.0]));
}
