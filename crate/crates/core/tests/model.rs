use curriculum_ssl::model::{
    layers, load_checkpoint, load_checkpoint_expecting, save_checkpoint, Batch, ConvStage,
    EncoderSpec, ModelState,
};
use curriculum_ssl::rng::RngStream;
use curriculum_ssl::transforms::Patch;
use curriculum_ssl::Error;
use rand::Rng;

fn toy_spec() -> EncoderSpec {
    EncoderSpec {
        input_size: 6,
        channels: 2,
        stages: vec![ConvStage::new(3, 3, 2), ConvStage::new(4, 3, 1)],
    }
}

fn random_patches(n: usize, spec: &EncoderSpec, seed: u64) -> Vec<Patch> {
    let mut rng = RngStream::from_seed(seed);
    let len = spec.input_size * spec.input_size * spec.channels;
    (0..n)
        .map(|i| {
            let px = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Patch::new(spec.input_size, spec.input_size, spec.channels, px, (i, 0)).unwrap()
        })
        .collect()
}

fn loss_of(model: &ModelState<f64>, batch: &Batch<f64>, labels: &[usize]) -> f64 {
    let logits = model.forward(batch).unwrap();
    layers::softmax_cross_entropy(&logits, labels, model.out_classes()).0
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let spec = toy_spec();
    let model = ModelState::<f64>::new(spec.clone(), 2, 5, 3).unwrap();
    let patches = random_patches(6, &spec, 1);
    let samples: Vec<&[Patch]> = patches.chunks(2).collect();
    let batch = Batch::<f64>::from_patches(samples, &spec).unwrap();
    let labels = [0, 3, 4];
    let out = model.loss_and_grad(&batch, &labels, true).unwrap();
    assert!((out.loss - loss_of(&model, &batch, &labels)).abs() < 1e-12);

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..model.encoder_params().len() {
        let mut plus = model.clone();
        plus.encoder_params_mut()[i] += h;
        let mut minus = model.clone();
        minus.encoder_params_mut()[i] -= h;
        let fd = (loss_of(&plus, &batch, &labels) - loss_of(&minus, &batch, &labels)) / (2.0 * h);
        worst = worst.max(rel_err(out.grads.encoder[i], fd));
    }
    for i in 0..model.head_params().len() {
        let mut plus = model.clone();
        plus.head_params_mut()[i] += h;
        let mut minus = model.clone();
        minus.head_params_mut()[i] -= h;
        let fd = (loss_of(&plus, &batch, &labels) - loss_of(&minus, &batch, &labels)) / (2.0 * h);
        worst = worst.max(rel_err(out.grads.head[i], fd));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn shared_encoder_gradient_is_sum_over_patches() {
    // Perturbing the encoder for one slot at a time and summing the slot-wise
    // finite differences recovers the full analytic encoder gradient.
    let spec = toy_spec();
    let model = ModelState::<f64>::new(spec.clone(), 3, 4, 9).unwrap();
    let patches = random_patches(3, &spec, 2);
    let batch = Batch::<f64>::from_patches([patches.as_slice()], &spec).unwrap();
    let label = [2];
    let analytic = model.loss_and_grad(&batch, &label, true).unwrap().grads.encoder;

    let single = |m: &ModelState<f64>, p: &Patch| {
        m.embed(&Batch::from_patches([std::slice::from_ref(p)], &spec).unwrap())
    };
    let base: Vec<Vec<f64>> = patches.iter().map(|p| single(&model, p)).collect();
    let head_loss = |embs: &[Vec<f64>]| {
        let feat: Vec<f64> = embs.concat();
        let hs = model.head_spec();
        let logits =
            layers::linear_forward(&feat, 1, hs.in_dim, hs.out_classes, model.head_params());
        layers::softmax_cross_entropy(&logits, &label, hs.out_classes).0
    };

    let h = 1e-5;
    for i in 0..model.encoder_params().len() {
        let mut plus = model.clone();
        plus.encoder_params_mut()[i] += h;
        let mut minus = model.clone();
        minus.encoder_params_mut()[i] -= h;
        let mut summed = 0.0;
        for j in 0..patches.len() {
            let mut up = base.clone();
            up[j] = single(&plus, &patches[j]);
            let mut down = base.clone();
            down[j] = single(&minus, &patches[j]);
            summed += (head_loss(&up) - head_loss(&down)) / (2.0 * h);
        }
        assert!(
            rel_err(analytic[i], summed) < 1e-4,
            "param {i}: analytic {} vs per-patch sum {summed}",
            analytic[i]
        );
    }
}

#[test]
fn permuting_inputs_and_head_slots_preserves_logits() {
    let spec = toy_spec();
    let model = ModelState::<f64>::new(spec.clone(), 3, 6, 4).unwrap();
    let patches = random_patches(3, &spec, 5);
    let perm = [2usize, 0, 1];
    let shuffled: Vec<Patch> = perm.iter().map(|&i| patches[i].clone()).collect();

    // slot j of the permuted model reads what slot perm[j] read before
    let d = spec.embedding_dim();
    let hs = model.head_spec();
    let mut permuted = model.clone();
    for o in 0..hs.out_classes {
        for (j, &src) in perm.iter().enumerate() {
            for k in 0..d {
                permuted.head_params_mut()[o * hs.in_dim + j * d + k] =
                    model.head_params()[o * hs.in_dim + src * d + k];
            }
        }
    }
    let a = model.forward_pretext(&patches).unwrap();
    let b = permuted.forward_pretext(&shuffled).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn identical_patches_embed_identically() {
    let spec = toy_spec();
    let model = ModelState::<f32>::new(spec.clone(), 2, 8, 0).unwrap();
    let p = random_patches(1, &spec, 0).remove(0);
    let batch = Batch::<f32>::from_patches([[p.clone(), p].as_slice()], &spec).unwrap();
    let feat = model.features(&batch).unwrap();
    let d = spec.embedding_dim();
    assert_eq!(feat[..d], feat[d..]);
}

#[test]
fn jigsaw_head_has_twelve_logits() {
    let spec = EncoderSpec::standard(32, 3);
    let model = ModelState::<f32>::new(spec.clone(), 4, 12, 0).unwrap();
    let patches = random_patches(4, &spec, 3);
    assert_eq!(model.forward_pretext(&patches).unwrap().len(), 12);
    assert_eq!(spec.embedding_dim(), 128);
    assert_eq!(model.head_spec().in_dim, 4 * 128);
}

#[test]
fn forward_rejects_wrong_shapes() {
    let spec = toy_spec();
    let model = ModelState::<f32>::new(spec.clone(), 2, 4, 0).unwrap();
    let patches = random_patches(3, &spec, 0);
    assert!(matches!(model.forward_pretext(&patches), Err(Error::Shape(_))));
    let wrong = Patch::new(5, 5, 2, vec![0.0; 50], (0, 0)).unwrap();
    assert!(model.forward_pretext(&[wrong.clone(), wrong]).is_err());
}

#[test]
fn out_of_range_label_rejected() {
    let spec = toy_spec();
    let model = ModelState::<f32>::new(spec.clone(), 1, 4, 0).unwrap();
    let patches = random_patches(1, &spec, 0);
    let batch = Batch::<f32>::from_patches([patches.as_slice()], &spec).unwrap();
    assert!(matches!(
        model.loss_and_grad(&batch, &[4], true),
        Err(Error::LabelOutOfRange { label: 4, classes: 4 })
    ));
}

#[test]
fn transfer_keeps_encoder_and_replaces_head() {
    let spec = EncoderSpec::standard(32, 3);
    let pretext = ModelState::<f32>::new(spec, 4, 12, 7).unwrap();
    let down = pretext.transfer_encoder(10, 1).unwrap();
    assert_eq!(down.encoder_params(), pretext.encoder_params());
    assert_eq!(down.head_spec().out_classes, 10);
    assert_eq!(down.slots(), 1);
    let again = down.transfer_encoder(10, 2).unwrap();
    assert_eq!(again.encoder_params(), pretext.encoder_params());
    assert!(pretext.transfer_encoder(1, 0).is_err());
}

#[test]
fn evaluation_forward_is_deterministic() {
    let spec = toy_spec();
    let model = ModelState::<f32>::new(spec.clone(), 2, 4, 0).unwrap();
    let patches = random_patches(2, &spec, 8);
    assert_eq!(
        model.forward_pretext(&patches).unwrap(),
        model.forward_pretext(&patches).unwrap()
    );
}

#[test]
fn checkpoint_round_trip_and_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.bin");
    let spec = toy_spec();
    let model = ModelState::<f32>::new(spec.clone(), 4, 12, 11).unwrap();
    save_checkpoint(&model, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), model);
    assert_eq!(load_checkpoint_expecting(&path, &spec).unwrap(), model);

    let other = EncoderSpec {
        input_size: 8,
        ..spec
    };
    assert!(matches!(
        load_checkpoint_expecting(&path, &other),
        Err(Error::FingerprintMismatch { .. })
    ));

    // corrupt the stored fingerprint
    let mut bytes = std::fs::read(&path).unwrap();
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let at = text.find("\"fingerprint\":\"").unwrap() + 15;
    bytes[at] = if bytes[at] == b'0' { b'1' } else { b'0' };
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(Error::FingerprintMismatch { .. })
    ));

    std::fs::write(&path, b"garbage").unwrap();
    assert!(load_checkpoint(&path).is_err());
}
