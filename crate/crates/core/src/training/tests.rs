use super::*;
use crate::geodata::{build_dataset, sample_wells, synthesize, SynthConfig};
use crate::models::Variant;
use proptest::prelude::*;

fn tiny_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        patch_width: 3,
        depth: None,
        block_channels: vec![3, 120],
        dilations: vec![1, 2],
        kernel: (3, 3),
        causal: false,
        dropout_p: 0.0,
        head_channels: [3, 2],
        lstm_hidden: 4,
    }
}

fn tiny_synth() -> SynthConfig {
    SynthConfig {
        depth: 24,
        width: 20,
        layers: [3, 5],
        undulation_amplitude: 10.0,
        well_spacing: 500.0,
        seed: 5,
        ..SynthConfig::default()
    }
}

fn tiny_data(m: usize) -> (Dataset, SectionGrid, SectionGrid) {
    let cfg = tiny_synth();
    let s = synthesize(&cfg).unwrap();
    let ds = build_dataset(&s.seismic, &s.impedance, &s.wells, m).unwrap();
    (ds, s.seismic, s.impedance)
}

fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        ..TrainConfig::default()
    }
}

fn scalar_loss(y_hat: &[f64], y: &[f64], x: Option<(&[f64], &[f64])>, a: f64, b: f64) -> f64 {
    let mut g = Graph::<f64>::new();
    let t = |v: &[f64]| Tensor::new([v.len()], v.to_vec()).unwrap();
    let yh = g.constant(t(y_hat));
    let yy = g.constant(t(y));
    let recon = x.map(|(xh, xx)| (g.constant(t(xh)), g.constant(t(xx))));
    let terms = total_loss(&mut g, yh, yy, recon, a, b).unwrap();
    g.value(terms.total).data()[0]
}

#[test]
fn total_loss_examples() {
    let y = [1.0, -2.0];
    assert_eq!(scalar_loss(&y, &y, Some((&y, &y)), 1.0, 0.5), 0.0);
    // mse_y = 2, mse_x = 1
    let l = scalar_loss(&[0.0, 0.0], &[2.0, 0.0], Some((&[1.0], &[0.0])), 1.0, 0.5);
    assert_eq!(l, 2.5);
    let l = scalar_loss(&[0.0, 0.0], &[2.0, 0.0], Some((&[9.0], &[0.0])), 1.0, 0.0);
    assert_eq!(l, 2.0);

    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros([2]));
    let b = g.constant(Tensor::zeros([3]));
    assert!(matches!(
        total_loss(&mut g, a, b, None, 1.0, 0.5),
        Err(Error::Shape { .. })
    ));
}

proptest! {
    #[test]
    fn total_loss_is_non_negative(
        v in proptest::collection::vec(-5.0f64..5.0, 8),
        a in 0.0f64..3.0, b in 0.0f64..3.0,
    ) {
        let l = scalar_loss(&v[..2], &v[2..4], Some((&v[4..6], &v[6..])), a, b);
        prop_assert!(l >= 0.0);
        let zero = scalar_loss(&v[..2], &v[..2], Some((&v[4..6], &v[4..6])), a, b);
        prop_assert_eq!(zero, 0.0);
    }
}

#[test]
fn config_validation() {
    TrainConfig::default().validate().unwrap();
    let bad = |f: fn(&mut TrainConfig), field: &str| {
        let mut c = TrainConfig::default();
        f(&mut c);
        match c.validate() {
            Err(Error::Config { field: got, .. }) => assert_eq!(got, field),
            other => panic!("expected error on {field}, got {other:?}"),
        }
    };
    bad(|c| c.epochs = 0, "epochs");
    bad(|c| c.batch_size = 0, "batch_size");
    bad(|c| c.lr = 0.0, "lr");
    bad(|c| c.flip_prob = 1.5, "flip_prob");
    bad(|c| c.beta = -1.0, "beta");
    bad(|c| c.eps = 0.0, "eps");
    let c: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"epochz": 3}"#);
    assert!(c.is_err());
}

fn head_grads(alpha: f64, beta: f64) -> (ModelParams<f32>, Vec<Tensor<f32>>) {
    let (ds, _, _) = tiny_data(3);
    let model = tiny_model(Variant::Proposed2d);
    let params = init_model(&model, &TrainConfig::default()).unwrap();
    let (x, y) = stack_batch(&ds.samples[..2]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = batch_gradients(&params, &model, x, y, alpha, beta, true, &mut rng).unwrap();
    (params, out.grads)
}

#[test]
fn gradient_flow_separation() {
    for (alpha, beta, silent, live) in [
        (1.0, 0.0, "reconstruction.", "regression."),
        (0.0, 0.5, "regression.", "reconstruction."),
    ] {
        let (params, grads) = head_grads(alpha, beta);
        for ((name, _), g) in params.named_params().into_iter().zip(&grads) {
            if name.starts_with(silent) {
                assert!(g.data().iter().all(|&v| v == 0.0), "{name} should be silent");
            }
            if name.starts_with(live) || name.starts_with("blocks.") {
                assert!(g.data().iter().any(|&v| v != 0.0), "{name} should be live");
            }
        }
    }
}

#[test]
fn training_is_deterministic() {
    let (ds, _, _) = tiny_data(3);
    for variant in [Variant::Proposed2d, Variant::Tcn1d, Variant::Lstm] {
        let model = ModelConfig {
            dropout_p: 0.2,
            ..tiny_model(variant)
        };
        let run = || {
            let cfg = quick_train(3);
            let mut p = init_model(&model, &cfg).unwrap();
            let out = train(&mut p, &model, &ds, &cfg, |_| {}).unwrap();
            (p.checksum(), out.history)
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0, b.0);
        let bits = |h: &[EpochStats]| -> Vec<u64> {
            h.iter()
                .flat_map(|s| [s.loss.to_bits(), s.loss_y.to_bits(), s.loss_x.to_bits()])
                .collect()
        };
        assert_eq!(bits(&a.1), bits(&b.1));
        assert_eq!(a.1.len(), 3);
        assert_eq!(a.1[2].epoch, 3);
        if variant == Variant::Lstm {
            assert!(a.1.iter().all(|s| s.loss_x == 0.0 && s.loss == s.loss_y));
        }
    }
}

#[test]
fn always_flipping_matches_pre_flipped_data() {
    let (ds, _, _) = tiny_data(3);
    let flipped = Dataset {
        samples: ds.samples.iter().map(hflip).collect(),
        ..ds.clone()
    };
    let model = ModelConfig {
        dropout_p: 0.1,
        ..tiny_model(Variant::Proposed2d)
    };
    let run = |data: &Dataset, flip_prob: f64| {
        let cfg = TrainConfig {
            flip_prob,
            ..quick_train(3)
        };
        let mut p = init_model(&model, &cfg).unwrap();
        train(&mut p, &model, data, &cfg, |_| {}).unwrap().history
    };
    assert_eq!(run(&ds, 1.0), run(&flipped, 0.0));
}

#[test]
fn single_sample_overfits() {
    let (ds, _, _) = tiny_data(3);
    let one = Dataset {
        samples: vec![ds.samples[1].clone()],
        ..ds
    };
    let model = ModelConfig {
        block_channels: vec![8, 8, 120],
        dilations: vec![1, 2, 4],
        head_channels: [8, 8],
        ..tiny_model(Variant::Proposed2d)
    };
    let cfg = TrainConfig {
        epochs: 1500,
        flip_prob: 0.0,
        ..TrainConfig::default()
    };
    let mut p = init_model(&model, &cfg).unwrap();
    train(&mut p, &model, &one, &cfg, |_| {}).unwrap();
    let (x, y) = stack_batch(&one.samples).unwrap();
    let (y_hat, _) = model_forward(&p, &model, &x, false, &mut cfg.rng(0)).unwrap();
    let mse = y_hat
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    assert!(mse < 1e-3, "mse {mse}");
}

#[test]
fn huge_learning_rate_diverges() {
    let (ds, _, _) = tiny_data(3);
    let model = tiny_model(Variant::Tcn1d);
    let cfg = TrainConfig {
        lr: 1e30,
        ..quick_train(20)
    };
    let mut p = init_model(&model, &cfg).unwrap();
    match train(&mut p, &model, &ds, &cfg, |_| {}) {
        Err(Error::Divergence { epoch }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
}

fn trained_tiny(variant: Variant) -> (TrainedModel, SectionGrid, SectionGrid) {
    let (ds, seismic, impedance) = tiny_data(3);
    let model = tiny_model(variant);
    let cfg = quick_train(2);
    let mut params = init_model(&model, &cfg).unwrap();
    train(&mut params, &model, &ds, &cfg, |_| {}).unwrap();
    (
        TrainedModel {
            model,
            params,
            seismic_norm: ds.seismic_norm,
            impedance_norm: ds.impedance_norm,
        },
        seismic,
        impedance,
    )
}

#[test]
fn prediction_covers_the_section_column_by_column() {
    for variant in [Variant::Proposed2d, Variant::Lstm] {
        let (trained, seismic, _) = trained_tiny(variant);
        let pred = predict_section(&trained, &seismic).unwrap();
        assert_eq!((pred.depth(), pred.width()), (seismic.depth(), seismic.width()));
        assert_eq!(pred.kind, GridKind::Impedance);
        let m = trained.model.patch_width;
        for col in [0, 7, 19] {
            let patch = extract_patch(&seismic, col, m).unwrap();
            let x = patch
                .map(|v| trained.seismic_norm.apply(v))
                .reshape([1, 1, seismic.depth(), m])
                .unwrap();
            let (y, _) = model_forward(
                &trained.params,
                &trained.model,
                &x,
                false,
                &mut ChaCha8Rng::seed_from_u64(1),
            )
            .unwrap();
            for z in 0..seismic.depth() {
                let alone = trained.impedance_norm.inverse(y.data()[z]);
                assert_eq!(alone.to_bits(), pred.get(z, col).to_bits(), "{variant} col {col}");
            }
        }
    }
}

#[test]
fn prediction_rejects_wrong_depth() {
    let (mut trained, seismic, _) = trained_tiny(Variant::Tcn1d);
    trained.model.depth = Some(seismic.depth() + 1);
    assert!(matches!(
        predict_section(&trained, &seismic),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn checkpoint_round_trip_and_failures() {
    let (trained, seismic, _) = trained_tiny(Variant::Proposed2d);
    let history = vec![EpochStats {
        epoch: 1,
        loss: 0.1,
        loss_y: 0.07,
        loss_x: 0.06,
    }];
    let ckpt = Checkpoint {
        adam: Some(AdamState::new(trained.params.named_params().into_iter().map(|(_, t)| t))),
        trained,
        train: quick_train(2),
        epoch: 2,
        history,
    };
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&ckpt, dir.path()).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back, ckpt);
    let before = predict_section(&ckpt.trained, &seismic).unwrap();
    let after = predict_section(&back.trained, &seismic).unwrap();
    assert_eq!(before, after);

    // saving twice gives identical bytes
    let dir2 = tempfile::tempdir().unwrap();
    save_checkpoint(&back, dir2.path()).unwrap();
    for f in ["manifest.txt", "history.csv", "tensors/blocks.0.conv1.weight.bin"] {
        assert_eq!(
            fs_read(&dir.path().join(f)),
            fs_read(&dir2.path().join(f)),
            "{f}"
        );
    }

    let victim = dir.path().join("tensors/regression.2.weight.bin");
    let bytes = fs_read(&victim);
    std::fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checksum(_))));
    std::fs::remove_file(&victim).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::MissingTensor(_))));

    let manifest = dir2.path().join("manifest.txt");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text.replace("version=1", "version=9")).unwrap();
    assert!(matches!(load_checkpoint(dir2.path()), Err(Error::Version { .. })));
}

fn fs_read(p: &std::path::Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn history_csv_round_trips() {
    let h = vec![
        EpochStats {
            epoch: 1,
            loss: 1.0 / 3.0,
            loss_y: 0.25,
            loss_x: 1e-300,
        },
        EpochStats {
            epoch: 2,
            loss: 0.1,
            loss_y: 0.0,
            loss_x: 123456.789,
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.csv");
    write_history_csv(&p, &h).unwrap();
    assert_eq!(read_history_csv(&p).unwrap(), h);
}

#[test]
fn wells_used_for_tiny_data() {
    let cfg = tiny_synth();
    let s = synthesize(&cfg).unwrap();
    assert_eq!(s.wells, sample_wells(&s.impedance, cfg.well_spacing).unwrap());
    assert!(s.wells.len() >= 4);
}
