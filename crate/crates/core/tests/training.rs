use curriculum_ssl::data::{generate_synthetic, SyntheticSpec};
use curriculum_ssl::model::{Batch, ConvStage, EncoderSpec, ModelState};
use curriculum_ssl::permutations::generate_permutation_set;
use curriculum_ssl::rng::RngStream;
use curriculum_ssl::tasks::{PretextTask, TransformConfig};
use curriculum_ssl::training::{
    evaluate_accuracy, train, LabeledSource, PretextSource, RunRecord, SampleSource, Trainer,
    TrainerConfig,
};
use curriculum_ssl::transforms::{JitterLevel, Patch};
use curriculum_ssl::Error;
use rand::Rng;

fn toy_spec() -> EncoderSpec {
    EncoderSpec {
        input_size: 8,
        channels: 3,
        stages: vec![ConvStage::new(8, 3, 2), ConvStage::new(16, 3, 2)],
    }
}

/// Fixed random single-patch inputs with caller-chosen labels.
struct Fixed {
    inputs: Vec<Patch>,
    labels: Vec<usize>,
    classes: usize,
}

impl Fixed {
    fn random(n: usize, classes: usize, seed: u64) -> Self {
        let mut rng = RngStream::from_seed(seed);
        let inputs = (0..n)
            .map(|_| Patch::new(8, 8, 3, (0..192).map(|_| rng.gen_range(-1.0..1.0)).collect(), (0, 0)).unwrap())
            .collect();
        let labels = (0..n).map(|i| i % classes).collect();
        Self { inputs, labels, classes }
    }
}

impl SampleSource for Fixed {
    fn len(&self) -> usize {
        self.inputs.len()
    }
    fn num_classes(&self) -> usize {
        self.classes
    }
    fn sample(&self, _: u64, i: usize) -> curriculum_ssl::Result<(Vec<Patch>, usize)> {
        Ok((vec![self.inputs[i].clone()], self.labels[i]))
    }
}

fn predictions(model: &ModelState, src: &Fixed) -> Vec<usize> {
    let batch = Batch::<f32>::from_patches(src.inputs.iter().map(std::slice::from_ref), model.encoder_spec()).unwrap();
    model
        .forward(&batch)
        .unwrap()
        .chunks(model.out_classes())
        .map(curriculum_ssl::model::argmax)
        .collect()
}

#[test]
fn overfits_a_single_batch() {
    let src = Fixed::random(8, 4, 0);
    let model = ModelState::<f32>::new(toy_spec(), 1, 4, 0).unwrap();
    let cfg = TrainerConfig { batch_size: 8, epochs: 200, ..Default::default() };
    let (_, history) = train(model, &src, cfg, None).unwrap();
    assert_eq!(history.len(), 200);
    assert_eq!(history.last().unwrap().train_acc, 1.0);
    assert!(history.last().unwrap().train_loss < history[0].train_loss);
}

#[test]
fn accuracy_extremes() {
    let model = ModelState::<f32>::new(toy_spec(), 1, 10, 1).unwrap();
    let mut src = Fixed::random(50, 10, 1);
    let preds = predictions(&model, &src);
    src.labels = preds.clone();
    assert_eq!(evaluate_accuracy(&model, &src).unwrap(), 1.0);
    src.labels = preds.iter().map(|p| (p + 1) % 10).collect();
    assert_eq!(evaluate_accuracy(&model, &src).unwrap(), 0.0);

    // a constant predictor on a balanced set scores the class prior
    let mut constant = model.clone();
    constant.head_params_mut().iter_mut().for_each(|w| *w = 0.0);
    src.labels = (0..50).map(|i| i % 10).collect();
    assert_eq!(evaluate_accuracy(&constant, &src).unwrap(), 0.1);

    src.inputs.clear();
    src.labels.clear();
    assert!(matches!(evaluate_accuracy(&model, &src), Err(Error::Empty(_))));
}

#[test]
fn untrained_jigsaw_head_is_at_chance() {
    let (unl, _, _) = generate_synthetic(&SyntheticSpec { n_unlabeled: 1200, n_train: 10, n_test: 10, image_size: 16, ..Default::default() }).unwrap();
    let task = PretextTask::Jigsaw(generate_permutation_set(4, 12, 0).unwrap());
    let src = PretextSource { images: &unl.images, task: &task, transform: TransformConfig::new(JitterLevel::NONE, 8), seed: 0 };
    let n = src.len() as f64;
    let p = 1.0 / 12.0;
    let sigma = (p * (1.0 - p) / n).sqrt();
    for seed in 0..3 {
        let acc = evaluate_accuracy(&ModelState::<f32>::new(toy_spec(), 4, 12, seed).unwrap(), &src).unwrap();
        assert!((acc - p).abs() <= 3.0 * sigma, "seed {seed}: {acc}");
    }
}

#[test]
fn out_of_range_labels_fail_before_any_update() {
    let src = Fixed::random(16, 6, 2);
    let mut model = ModelState::<f32>::new(toy_spec(), 1, 4, 0).unwrap();
    let before = model.clone();
    let mut trainer = Trainer::new(&model, TrainerConfig::default()).unwrap();
    let err = trainer.run(&mut model, &src, None, 1).unwrap_err();
    assert!(matches!(err, Error::LabelOutOfRange { .. }));
    assert_eq!(model, before);
    assert_eq!(trainer.epochs_done(), 0);
}

#[test]
fn config_validation() {
    for bad in [
        TrainerConfig { learning_rate: 0.0, ..Default::default() },
        TrainerConfig { batch_size: 0, ..Default::default() },
        TrainerConfig { beta1: 1.0, ..Default::default() },
    ] {
        assert!(bad.validate().is_err());
    }
    let d = TrainerConfig::default();
    assert_eq!((d.learning_rate, d.beta1, d.beta2, d.eps), (1e-3, 0.9, 0.999, 1e-8));
}

#[test]
fn same_seed_same_metric_stream() {
    let (unl, _, test) = generate_synthetic(&SyntheticSpec { n_unlabeled: 64, n_train: 10, n_test: 32, image_size: 16, ..Default::default() }).unwrap();
    let task = PretextTask::Jigsaw(generate_permutation_set(4, 12, 0).unwrap());
    let transform = TransformConfig { greyscale_p: 0.3, ..TransformConfig::new(JitterLevel::new(0.9).unwrap(), 8) };
    let run = || {
        let cfg = TrainerConfig { batch_size: 16, epochs: 3, seed: 5, ..Default::default() };
        let train_src = PretextSource { images: &unl.images, task: &task, transform, seed: 5 };
        let eval_src = PretextSource { images: &test.images, task: &task, transform, seed: 5 };
        let model = ModelState::<f32>::new(toy_spec(), 4, 12, 5).unwrap();
        let (model, history) = train(model, &train_src, cfg, Some(&eval_src)).unwrap();
        let mut record = RunRecord::new("r", "fixed-0.90", 5);
        for h in &history {
            record.push_epoch(0.9, h).unwrap();
        }
        (model, record.without_timing())
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(m1, m2);
    assert_eq!(r1, r2);
    assert_eq!(r1.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(), [0, 1, 2]);
}

#[test]
fn metrics_jsonl_round_trip() {
    let mut record = RunRecord::new("curriculum-seed3", "curriculum", 3);
    let stats = |epoch| curriculum_ssl::training::EpochStats { epoch, train_loss: 1.0, train_acc: 0.5, test_acc: Some(0.25), wall_time_s: 0.5 };
    record.push_epoch(1.0, &stats(0)).unwrap();
    record.push_epoch(0.95, &stats(1)).unwrap();
    assert!(record.push_epoch(0.9, &stats(1)).is_err());
    record.push_downstream(7, 0.8125, 2.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.jsonl");
    record.write_jsonl(&path).unwrap();
    assert_eq!(RunRecord::read_jsonl(&path).unwrap(), record);

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("\"epoch\":1", "\"epoch\":1,\"bogus\":2")).unwrap();
    assert!(matches!(RunRecord::read_jsonl(&path), Err(Error::Parse { line: 2, .. })));
}

#[test]
fn labeled_source_checks_labels() {
    let (_, train_split, _) = generate_synthetic(&SyntheticSpec { n_unlabeled: 0, n_train: 20, n_test: 0, image_size: 16, ..Default::default() }).unwrap();
    assert!(LabeledSource::new(&train_split.images, &train_split.labels, 10, 8).is_ok());
    assert!(matches!(
        LabeledSource::new(&train_split.images, &train_split.labels, 3, 8),
        Err(Error::LabelOutOfRange { .. })
    ));
    assert!(LabeledSource::new(&train_split.images, &train_split.labels[1..], 10, 8).is_err());
}
