use udaseg_core::scenegen::{
    self, batch_iterator, generate_scene, split_seed, Domain, DomainShift, SceneConfig, Split, RARE,
};

#[test]
fn census_matches_frequency_targets() {
    let cfg = SceneConfig::default();
    let c = cfg.num_classes;
    let mut counts = vec![0u64; c];
    let mut rare_images = 0;
    for i in 0..1000 {
        let (_, labels) = generate_scene(split_seed(Split::Train, 0, i), &cfg, Domain::Source);
        for &l in labels.data() {
            counts[l as usize] += 1;
        }
        rare_images += usize::from(labels.data().contains(&RARE));
    }
    let total: u64 = counts.iter().sum();
    for (k, &n) in counts.iter().enumerate() {
        let freq = n as f64 / total as f64;
        let target = cfg.class_frequencies[k];
        assert!(
            (freq - target).abs() <= 0.3 * target,
            "class {k}: {freq:.4} vs {target}"
        );
    }
    assert!(rare_images < 150, "rare class in {rare_images} of 1000 images");
    assert!(rare_images > 0);
}

#[test]
fn target_shift_is_statistically_visible() {
    let cfg = SceneConfig::default();
    let means = |domain| -> Vec<f64> {
        batch_iterator(&cfg, domain, Split::Train, 1, 3)
            .unwrap()
            .take(100)
            .map(|b| b.images.data().iter().sum::<f64>() / b.images.len() as f64)
            .collect()
    };
    let (src, tgt) = (means(Domain::Source), means(Domain::Target));
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, (var / v.len() as f64).sqrt())
    };
    let ((ms, ses), (mt, set)) = (stats(&src), stats(&tgt));
    assert!(
        (ms - mt).abs() > ses.max(set),
        "source {ms} ± {ses}, target {mt} ± {set}"
    );
}

#[test]
fn streams_are_reproducible_and_images_in_range() {
    let cfg = SceneConfig::default();
    let a: Vec<_> = batch_iterator(&cfg, Domain::Target, Split::Val, 2, 9)
        .unwrap()
        .take(3)
        .collect();
    let b: Vec<_> = batch_iterator(&cfg, Domain::Target, Split::Val, 2, 9)
        .unwrap()
        .take(3)
        .collect();
    assert_eq!(a, b);
    for batch in &a {
        assert!(batch.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(batch
            .labels
            .as_ref()
            .unwrap()
            .data()
            .iter()
            .all(|&l| (l as usize) < cfg.num_classes));
    }
}

#[test]
fn shift_never_touches_labels() {
    for shift in [
        DomainShift::default(),
        DomainShift {
            hue_degrees: 170.0,
            gamma_offset: -0.5,
            noise_amplitude: 0.3,
            texture_offset: 2.0,
        },
    ] {
        let cfg = SceneConfig {
            shift,
            ..SceneConfig::default()
        };
        for seed in 0..20 {
            let (_, src) = generate_scene(seed, &cfg, Domain::Source);
            let (_, tgt) = generate_scene(seed, &cfg, Domain::Target);
            assert_eq!(src, tgt);
        }
    }
}

#[test]
fn split_ranges_disjoint() {
    let ranges = [Split::Train, Split::Val, Split::Test].map(Split::seed_range);
    for i in 0..3 {
        for j in i + 1..3 {
            assert!(ranges[i].end <= ranges[j].start || ranges[j].end <= ranges[i].start);
        }
    }
    assert!(ranges[0].contains(&split_seed(Split::Train, u64::MAX, 5)));
    assert!(ranges[2].contains(&split_seed(Split::Test, 1, 5)));
    let _ = scenegen::CLASS_NAMES;
}
