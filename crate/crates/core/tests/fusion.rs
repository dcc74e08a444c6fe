use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use painfuse::dataset::ChannelTable;
use painfuse::evaluation::compute_metrics;
use painfuse::facs::PainScore;
use painfuse::fusion::{
    predict_pipeline, train_channels, train_fusion, undersample_frames, FeatureStore, FusionModel, FusionOptions,
    LabeledFrame,
};

/// Five subjects, one noisy 3-D channel driven by the pain level.
fn toy() -> (Vec<LabeledFrame>, FeatureStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let noise = Normal::new(0.0, 0.4).unwrap();
    let mut table = ChannelTable::new("X", 3);
    let mut frames = Vec::new();
    for s in 0..5 {
        for k in 0..60 {
            let level: u8 = if rng.random_bool(0.6) { 0 } else { rng.random_range(1..=8) };
            let l = f64::from(level);
            let id = format!("S{s}_{k:03}");
            let row = vec![
                0.5 * l + noise.sample(&mut rng),
                -0.3 * l + noise.sample(&mut rng),
                (0.2 * l).sin() + noise.sample(&mut rng),
            ];
            table.insert(id.clone(), row).unwrap();
            frames.push(LabeledFrame {
                frame_id: id,
                subject_id: format!("S{s}"),
                pspi: PainScore::new(level).unwrap(),
            });
        }
    }
    let mut store = FeatureStore::new();
    store.insert(table).unwrap();
    (frames, store)
}

#[test]
fn one_channel_fusion_tracks_the_channel_regressor() {
    let (frames, store) = toy();
    let channels = vec!["X".to_string()];
    let opts = FusionOptions::default();
    let (mut single, mut fused, mut truth) = (Vec::new(), Vec::new(), Vec::new());
    for held in 0..5 {
        let subject = format!("S{held}");
        let (train, test): (Vec<LabeledFrame>, Vec<LabeledFrame>) =
            frames.iter().cloned().partition(|f| f.subject_id != subject);
        let ids: Vec<&str> = test.iter().map(|f| f.frame_id.as_str()).collect();

        let (kept, _) = undersample_frames(&train, &opts.undersample, opts.seed).unwrap();
        let fit = &train_channels(&kept, &store, &channels, &opts).unwrap()[0];
        single.extend(fit.model.predict_mean(&store.matrix("X", &ids).unwrap()).unwrap());

        let model = train_fusion(&train, &store, &channels, &opts).unwrap();
        assert_eq!(model.second_level.input_dim(), 1);
        assert!(!model.provenance().iter().any(|(_, set)| set.contains(&subject)));
        let back = FusionModel::from_json(&model.to_json()).unwrap();
        let p = predict_pipeline(&model, &store, &ids).unwrap();
        assert_eq!(p, predict_pipeline(&back, &store, &ids).unwrap());
        fused.extend(p);
        truth.extend(test.iter().map(|f| f64::from(f.pspi.value())));
    }
    let c_single = compute_metrics(&single, &truth).unwrap().corr.unwrap();
    let c_fused = compute_metrics(&fused, &truth).unwrap().corr.unwrap();
    assert!(c_single > 0.7, "{c_single}");
    assert!((c_fused - c_single).abs() <= 0.05, "fused {c_fused} vs single {c_single}");
}
