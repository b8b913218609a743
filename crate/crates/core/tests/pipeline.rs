use std::fs;

use frameweave::checkpoint::Checkpoint;
use frameweave::data::{load_dataset, read_frame, synth_motion_dataset, write_frame, ImageFormat, PACKED_DATASET_FILE};
use frameweave::eval::{evaluate, interpolate, EvalOptions, Predictor, METRICS_FILE};
use frameweave::train::{train, TrainConfig, CURVE_FILE, CURVE_HEADER, FINAL_CHECKPOINT};
use frameweave::{Error, Rng};

#[test]
fn synth_train_eval_interpolate() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    fs::create_dir_all(&data_dir).unwrap();
    synth_motion_dataset(6, (16, 16), &Rng::new(2)).unwrap().save(data_dir.join(PACKED_DATASET_FILE)).unwrap();
    let data = load_dataset(&data_dir).unwrap();
    assert_eq!(data.len(), 6);

    let cfg = TrainConfig { epochs: 5, embed_dim: 4, batch_size: 2, val_fraction: 0.3, ..TrainConfig::default() };
    let run = dir.path().join("run");
    let out = train(&cfg, &data, &run, &mut |_| {}).unwrap();
    let text = fs::read_to_string(run.join(CURVE_FILE)).unwrap();
    assert!(text.starts_with(CURVE_HEADER));
    let epochs: Vec<usize> = text.lines().skip(1).step_by(2).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(epochs, (1..=5).collect::<Vec<_>>());

    let ck = Checkpoint::load(run.join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(ck.epoch, 5);
    assert_eq!(ck, out.checkpoint);

    let t = &data.triplets()[0];
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    write_frame(&t.frame_a, &a, ImageFormat::Png).unwrap();
    write_frame(&t.frame_b, &b, ImageFormat::Png).unwrap();
    let mid = interpolate(&ck.network, &read_frame(&a).unwrap(), &read_frame(&b).unwrap()).unwrap();
    assert_eq!(mid.dims(), (16, 16));

    let eval_dir = dir.path().join("eval");
    let report = evaluate(Predictor::Model(&ck.network), &data, Some(&eval_dir), &EvalOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert!(eval_dir.join(METRICS_FILE).exists());
    let img = read_frame(eval_dir.join("compare_000000.png")).unwrap();
    assert_eq!(img.dims(), (16, 34));
    let truth = evaluate(Predictor::GroundTruth, &data, None, &EvalOptions::default()).unwrap();
    assert_eq!((truth.mean.mse_paper, truth.mean.psnr_db), (0.0, 99.0));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.fwck");
    fs::write(&p, b"NOPE\x01\x00\x00\x00").unwrap();
    assert!(matches!(Checkpoint::load(&p), Err(Error::Format(_))));
    fs::write(&p, b"FWCK\x01\x00").unwrap();
    assert!(matches!(Checkpoint::load(&p), Err(Error::Integrity(_))));
}
