mod common;

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

use common::*;
use htnet_core::flow::CompositeFlowMap;
use htnet_core::train::{
    class_weights, evaluate_loso, fit, folds_by_subject, loso_split, predict, uar, uf1, Class, ConfusionMatrix, Dataset,
    HtNetLearner, Learner, LosoReport, Manifest, ManifestEntry, Sample, TrainConfig,
};
use htnet_core::{Error, Graph, HtNet, ModelConfig, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        dims: vec![4, 6, 8],
        heads: vec![2, 2, 2],
        head_dim: Some(3),
        layers: vec![1, 1, 1],
        head_hidden: 5,
        ..Default::default()
    }
}

fn random_maps(n: usize, seed: u64) -> Vec<CompositeFlowMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut m = CompositeFlowMap::zeros(28);
            m.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            m
        })
        .collect()
}

fn entry(id: &str, subject: &str, dataset: Dataset, class: Class) -> ManifestEntry {
    let raw_label = match class {
        Class::Negative => "disgust",
        Class::Positive => "happiness",
        Class::Surprise => "surprise",
    };
    ManifestEntry {
        sample_id: id.to_string(),
        subject_id: subject.to_string(),
        dataset,
        frames_dir: PathBuf::from(format!("frames/{id}")),
        onset: 0,
        apex: Some(2),
        offset: 4,
        raw_label: raw_label.to_string(),
        class,
        landmarks_path: PathBuf::from(format!("landmarks/{id}.json")),
    }
}

/// Per-dataset (subjects, [negative, positive, surprise]) of the composite set.
const COMPOSITE: [(Dataset, usize, [usize; 3]); 3] = [
    (Dataset::Samm, 28, [92, 26, 15]),
    (Dataset::Casme2, 24, [88, 32, 25]),
    (Dataset::Smic, 16, [70, 51, 43]),
];

/// Samples shaped like the composite set; subject ids repeat across datasets.
fn composite_entries() -> Vec<ManifestEntry> {
    let mut out = Vec::new();
    for (dataset, subjects, counts) in COMPOSITE {
        let mut k = 0;
        for class in Class::ALL {
            for _ in 0..counts[class.index()] {
                let subject = format!("{:02}", k % subjects + 1);
                out.push(entry(&format!("{dataset}_{k}"), &subject, dataset, class));
                k += 1;
            }
        }
    }
    out
}

// ---- class weights and loss ----

#[test]
fn class_weight_examples() {
    assert_eq!(class_weights(&[10, 10, 10]).unwrap(), [1.0, 1.0, 1.0]);
    let w = class_weights(&[3, 1, 2]).unwrap();
    let expected = [6.0 / 9.0, 18.0 / 9.0, 9.0 / 9.0];
    for c in 0..3 {
        assert!((w[c] - expected[c]).abs() < 1e-15);
    }
    assert!(matches!(class_weights(&[4, 0, 1]), Err(Error::DegenerateSplit(_))));
}

#[test]
fn composite_class_weights_rank_rarest_highest() {
    let counts = [250, 109, 83];
    let total: usize = COMPOSITE.iter().map(|(_, _, c)| c.iter().sum::<usize>()).sum();
    assert_eq!(total, 442);
    let w = class_weights(&counts).unwrap();
    // Negative is the most frequent class, surprise the rarest.
    assert!(w[0] < w[1] && w[1] < w[2], "{w:?}");
    let mean: f64 = (0..3).map(|c| w[c] * counts[c] as f64).sum::<f64>() / total as f64;
    assert!((mean - 1.0).abs() < 1e-12);
}

fn ce(logits: &[f64], labels: &[usize], weights: &[f64]) -> (f64, Vec<f64>) {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![labels.len(), 3], logits.to_vec()).unwrap());
    let loss = g.weighted_cross_entropy(x, labels, weights).unwrap();
    g.backward(loss).unwrap();
    (g.value(loss).data()[0], g.grad(x).unwrap().to_vec())
}

#[test]
fn cross_entropy_examples() {
    for label in 0..3 {
        let (l, _) = ce(&[0.0, 0.0, 0.0], &[label], &[1.0, 1.0, 1.0]);
        assert!((l - 3f64.ln()).abs() < 1e-15);
    }
    let (l, _) = ce(&[30.0, 0.0, 0.0], &[0], &[1.0, 1.0, 1.0]);
    assert!(l < 1e-12, "{l}");
    let (l, _) = ce(&[1000.0, -1000.0, 0.0], &[1], &[1.0, 1.0, 1.0]);
    assert!((l - 2000.0).abs() < 1e-9, "log-sum-exp must stay finite: {l}");
}

#[test]
fn cross_entropy_is_batch_mean_of_weighted_terms() {
    let logits = [0.3, -1.2, 0.8, 2.0, 0.1, -0.4];
    let labels = [2, 0];
    let w = [0.5, 1.5, 2.5];
    let (l, _) = ce(&logits, &labels, &w);
    let term = |row: &[f64], y: usize| {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        -(row[y].exp() / z).ln()
    };
    let expected = (w[2] * term(&logits[0..3], 2) + w[0] * term(&logits[3..6], 0)) / 2.0;
    assert!((l - expected).abs() < 1e-14);
}

#[test]
fn doubling_label_weight_doubles_loss_and_gradient() {
    let logits = [0.4, -0.7, 1.1];
    let (l1, g1) = ce(&logits, &[1], &[1.0, 0.8, 1.0]);
    let (l2, g2) = ce(&logits, &[1], &[1.0, 1.6, 1.0]);
    assert_eq!(l2, 2.0 * l1);
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(*b, 2.0 * a);
    }
}

#[test]
fn scaling_class_weights_scales_model_loss_and_gradients() {
    let net = HtNet::new(small_config()).unwrap();
    let params = net.init_params(4);
    let maps = random_maps(3, 11);
    let refs: Vec<&CompositeFlowMap> = maps.iter().collect();
    let labels = [0, 2, 1];
    let w = [0.7, 1.9, 1.3];
    let base = net.loss_and_grad(&params, &refs, &labels, &w).unwrap();
    // Powers of two scale exactly in binary floating point.
    for alpha in [2.0, 0.25] {
        let scaled = net.loss_and_grad(&params, &refs, &labels, &w.map(|v| v * alpha)).unwrap();
        assert_eq!(scaled.loss, alpha * base.loss);
        for (a, b) in base.grads.iter().zip(&scaled.grads) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*y, alpha * x);
            }
        }
    }
    let scaled = net.loss_and_grad(&params, &refs, &labels, &w.map(|v| v * 3.0)).unwrap();
    assert!(relative_error(scaled.loss, 3.0 * base.loss, 1e-300) < 1e-14);
    for (a, b) in base.grads.iter().zip(&scaled.grads) {
        let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((y - 3.0 * x).abs() <= 1e-13 * scale);
        }
    }
}

// ---- training ----

fn tiny_training_set() -> (Vec<CompositeFlowMap>, Vec<usize>) {
    (random_maps(6, 21), vec![0, 1, 2, 0, 1, 2])
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let net = HtNet::new(small_config()).unwrap();
    let (maps, labels) = tiny_training_set();
    let refs: Vec<&CompositeFlowMap> = maps.iter().collect();
    let init = net.init_params(2);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 3,
        batch_size: 4,
        ..Default::default()
    };
    let out = fit(&net, init.clone(), &refs, &labels, &cfg).unwrap();
    assert_eq!(out.params, init);
    assert_eq!(out.loss_curve.len(), 3);
    assert!(out.loss_curve.iter().all(|l| (l - out.loss_curve[0]).abs() < 1e-12));

    let cfg = TrainConfig { epochs: 0, ..cfg };
    let out = fit(&net, init.clone(), &refs, &labels, &cfg).unwrap();
    assert_eq!(out.params, init);
    assert!(out.loss_curve.is_empty());
}

#[test]
fn training_is_deterministic() {
    let net = HtNet::new(small_config()).unwrap();
    let (maps, labels) = tiny_training_set();
    let refs: Vec<&CompositeFlowMap> = maps.iter().collect();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 15,
        batch_size: 4,
        seed: 9,
        ..Default::default()
    };
    let a = fit(&net, net.init_params(1), &refs, &labels, &cfg).unwrap();
    let b = fit(&net, net.init_params(1), &refs, &labels, &cfg).unwrap();
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_eq!(a.params, b.params);

    let c = fit(&net, net.init_params(1), &refs, &labels, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.loss_curve, c.loss_curve, "the shuffle must depend on the seed");
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let net = HtNet::new(small_config()).unwrap();
    let (maps, labels) = tiny_training_set();
    let refs: Vec<&CompositeFlowMap> = maps.iter().collect();
    let mut params = net.init_params(0);
    let i = params.index_of("patch.weight").unwrap();
    params.tensor_mut(i).data_mut()[0] = f64::NAN;
    let err = fit(&net, params, &refs, &labels, &TrainConfig { epochs: 2, ..Default::default() }).unwrap_err();
    match &err {
        Error::NonFiniteLoss { epoch, batch, param_norm } => {
            assert_eq!((*epoch, *batch), (0, 0));
            assert!(param_norm.is_nan());
        }
        other => panic!("unexpected error {other:?}"),
    }
    assert!(err.is_numerical());
}

#[test]
fn training_requires_every_class() {
    let net = HtNet::new(small_config()).unwrap();
    let maps = random_maps(4, 3);
    let refs: Vec<&CompositeFlowMap> = maps.iter().collect();
    let err = fit(&net, net.init_params(0), &refs, &[0, 1, 1, 0], &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::DegenerateSplit(_)));
}

#[test]
fn invalid_training_config_is_rejected() {
    for cfg in [
        TrainConfig { learning_rate: -1e-3, ..Default::default() },
        TrainConfig { learning_rate: f64::NAN, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { beta1: 1.0, ..Default::default() },
    ] {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
    }
}

#[test]
fn small_separable_set_is_learned() {
    let samples = synth_samples(2, 2, 5);
    let net = HtNet::new(small_config()).unwrap();
    let maps: Vec<&CompositeFlowMap> = samples.iter().map(|s| &s.map).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.class.index()).collect();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 60,
        batch_size: 6,
        ..Default::default()
    };
    let out = fit(&net, net.init_params(0), &maps, &labels, &cfg).unwrap();
    let logits = predict(&net, &out.params, &maps, 8).unwrap();
    let correct = logits
        .iter()
        .zip(&labels)
        .filter(|(l, y)| htnet_core::train::argmax(l) == **y)
        .count();
    assert_eq!(correct, labels.len(), "loss curve {:?}", out.loss_curve);
}

// ---- leave-one-subject-out ----

#[test]
fn folds_follow_subject_sizes() {
    let subjects = ["b", "a", "b", "c", "b", "a"];
    let folds = folds_by_subject(&subjects).unwrap();
    let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
    assert_eq!(sizes, vec![2, 3, 1]);
    assert_eq!(folds[0].subject, "a");
    assert_eq!(folds[0].test, vec![1, 5]);
    assert_eq!(folds[0].train, vec![0, 2, 3, 4]);
    assert!(matches!(folds_by_subject(&["x", "x"]), Err(Error::Protocol(_))));
    assert!(matches!(folds_by_subject::<&str>(&[]), Err(Error::Protocol(_))));
}

#[test]
fn composite_manifest_has_one_fold_per_namespaced_subject() {
    let m = Manifest::new(composite_entries(), "").unwrap();
    assert_eq!(m.len(), 442);
    assert_eq!(m.class_counts(), [250, 109, 83]);
    let folds = loso_split(&m).unwrap();
    assert_eq!(folds.len(), 28 + 24 + 16);
    assert_eq!(m.subjects().len(), 68);
    // Subject `01` exists in all three datasets but never shares a fold.
    for f in &folds {
        let datasets: HashSet<Dataset> = f.test.iter().map(|&i| m.entries[i].dataset).collect();
        assert_eq!(datasets.len(), 1);
    }
}

fn check_partition(subjects: &[String]) {
    let folds = folds_by_subject(subjects).unwrap();
    let distinct: BTreeSet<&String> = subjects.iter().collect();
    assert_eq!(folds.len(), distinct.len());
    let mut seen = vec![0usize; subjects.len()];
    for f in &folds {
        for &i in &f.test {
            seen[i] += 1;
            assert_eq!(subjects[i], f.subject);
        }
        for &i in &f.train {
            assert_ne!(subjects[i], f.subject);
        }
        assert_eq!(f.train.len() + f.test.len(), subjects.len());
    }
    assert!(seen.iter().all(|&n| n == 1));
}

proptest! {
    #[test]
    fn loso_folds_partition_samples(raw in prop::collection::vec(0u8..8, 2..60)) {
        let mut subjects: Vec<String> = raw.iter().map(|s| format!("S/{s}")).collect();
        if subjects.iter().all(|s| *s == subjects[0]) {
            subjects.push("S/other".into());
        }
        check_partition(&subjects);
    }
}

// ---- metrics ----

#[test]
fn metric_hand_case_and_bounds() {
    let m = ConfusionMatrix([[5, 0, 0], [0, 0, 5], [0, 0, 5]]);
    assert!((uar(&m).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((uf1(&m).unwrap() - 0.5556).abs() < 1e-4);
    let diag = ConfusionMatrix([[7, 0, 0], [0, 1, 0], [0, 0, 30]]);
    assert_eq!((uf1(&diag).unwrap(), uar(&diag).unwrap()), (1.0, 1.0));
    assert!(matches!(uar(&ConfusionMatrix::default()), Err(Error::DegenerateInput(_))));
}

#[test]
fn uniform_guessing_is_chance_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut m = ConfusionMatrix::default();
    for i in 0..30_000 {
        m.add(i % 3, rng.random_range(0..3));
    }
    let r = uar(&m).unwrap();
    assert!((r - 1.0 / 3.0).abs() < 0.01, "{r}");
}

fn matrix() -> impl Strategy<Value = [[u64; 3]; 3]> {
    prop::array::uniform3(prop::array::uniform3(0u64..40)).prop_filter("non-empty", |m| {
        m.iter().flatten().sum::<u64>() > 0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_brute_force(m in matrix()) {
        let (f1, recall) = metrics_oracle(&m);
        let cm = ConfusionMatrix(m);
        prop_assert_eq!(uf1(&cm).unwrap(), f1);
        prop_assert_eq!(uar(&cm).unwrap(), recall);
        prop_assert!((0.0..=1.0).contains(&f1) && (0.0..=1.0).contains(&recall));
    }

    #[test]
    fn uar_ignores_class_duplication(m in matrix(), class in 0usize..3, k in 2u64..5) {
        let mut dup = m;
        dup[class].iter_mut().for_each(|v| *v *= k);
        let a = uar(&ConfusionMatrix(m)).unwrap();
        let b = uar(&ConfusionMatrix(dup)).unwrap();
        prop_assert!((a - b).abs() < 1e-15);
    }
}

// ---- evaluation protocol ----

struct OracleLearner;

impl Learner for OracleLearner {
    type Model = ();
    fn fit(&self, _: &[&Sample], _: u64) -> htnet_core::Result<((), Vec<f64>)> {
        Ok(((), vec![0.0]))
    }
    fn predict(&self, _: &(), test: &[&Sample]) -> htnet_core::Result<Vec<Vec<f64>>> {
        Ok(test
            .iter()
            .map(|s| (0..3).map(|c| if c == s.class.index() { 1.0 } else { 0.0 }).collect())
            .collect())
    }
}

struct ConstantLearner(usize);

impl Learner for ConstantLearner {
    type Model = ();
    fn fit(&self, _: &[&Sample], _: u64) -> htnet_core::Result<((), Vec<f64>)> {
        Ok(((), vec![]))
    }
    fn predict(&self, _: &(), test: &[&Sample]) -> htnet_core::Result<Vec<Vec<f64>>> {
        Ok(test.iter().map(|_| (0..3).map(|c| (c == self.0) as u8 as f64).collect()).collect())
    }
}

/// Fails on the fold that holds out `SAMM/<subject>`.
struct FailingLearner(&'static str);

impl Learner for FailingLearner {
    type Model = ();
    fn fit(&self, train: &[&Sample], _: u64) -> htnet_core::Result<((), Vec<f64>)> {
        if !train.iter().any(|s| s.dataset == Dataset::Samm && s.subject == self.0) {
            return Err(Error::NonFiniteLoss { epoch: 3, batch: 1, param_norm: f64::INFINITY });
        }
        Ok(((), vec![]))
    }
    fn predict(&self, _: &(), test: &[&Sample]) -> htnet_core::Result<Vec<Vec<f64>>> {
        Ok(vec![vec![1.0, 0.0, 0.0]; test.len()])
    }
}

fn composite_samples() -> Vec<Sample> {
    composite_entries()
        .into_iter()
        .map(|e| Sample {
            id: e.sample_id,
            subject: e.subject_id,
            dataset: e.dataset,
            class: e.class,
            map: CompositeFlowMap::zeros(2),
        })
        .collect()
}

#[test]
fn oracle_learner_scores_perfectly() {
    let samples = composite_samples();
    let r = evaluate_loso(&samples, &OracleLearner, 0, 1).unwrap();
    assert_eq!((r.pooled.uf1, r.pooled.uar), (1.0, 1.0));
    assert_eq!(r.folds.len(), 68);
    assert_eq!(r.pooled.samples, 442);
    assert_eq!(r.per_dataset.len(), 3);
    for (d, s) in &r.per_dataset {
        assert_eq!((s.uf1, s.uar), (1.0, 1.0), "{d}");
    }
    let samm = &r.per_dataset[&Dataset::Samm];
    assert_eq!(samm.confusion, ConfusionMatrix([[92, 0, 0], [0, 26, 0], [0, 0, 15]]));
    for f in &r.folds {
        assert_eq!(f.confusion.total() as usize, f.predictions.len());
    }
}

#[test]
fn constant_learner_has_chance_uar() {
    let samples = composite_samples();
    for c in 0..3 {
        let r = evaluate_loso(&samples, &ConstantLearner(c), 0, 1).unwrap();
        assert!((r.pooled.uar - 1.0 / 3.0).abs() < 1e-15);
        // The two never-predicted classes have F1 0 but are still defined.
        assert!(r.pooled.empty_classes.is_empty());
    }
}

#[test]
fn fold_failure_names_the_fold() {
    let samples = composite_samples();
    let err = evaluate_loso(&samples, &FailingLearner("01"), 0, 1).unwrap_err();
    match &err {
        Error::Fold { subject, .. } => assert_eq!(subject, "SAMM/01"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.is_numerical());
    assert!(err.to_string().contains("fold"));
}

#[test]
fn parallel_folds_match_sequential() {
    let samples = synth_samples(3, 1, 3);
    let learner = HtNetLearner {
        net: HtNet::new(small_config()).unwrap(),
        train: TrainConfig {
            learning_rate: 1e-2,
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        },
    };
    let a = evaluate_loso(&samples, &learner, 5, 1).unwrap();
    let b = evaluate_loso(&samples, &learner, 5, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.folds.len(), 3);
    assert_eq!(a.folds[1].subject, "SYNTH/s01");
}

#[test]
fn report_round_trips_and_dumps_confusion() {
    let mut samples = composite_samples();
    samples.retain(|s| s.dataset != Dataset::Smic);
    let mut r = evaluate_loso(&samples, &ConstantLearner(1), 0, 1).unwrap();
    r.config = serde_json::json!({ "seed": 0 });
    let json = serde_json::to_string_pretty(&r).unwrap();
    let back: LosoReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(value["pooled"]["uf1"].is_number());
    assert!(value["per_dataset"]["SAMM"]["uar"].is_number());

    let mut csv = Vec::new();
    r.write_confusion_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scope,true_class,negative,positive,surprise");
    assert_eq!(lines[1], "pooled,negative,0,180,0");
    assert!(lines.contains(&"CASME2,surprise,0,25,0"));
    assert_eq!(lines.len(), 1 + 3 * (1 + 2 + r.folds.len()));
}

#[test]
fn empty_class_is_flagged() {
    let samples: Vec<Sample> = composite_samples()
        .into_iter()
        .filter(|s| s.class != Class::Surprise)
        .collect();
    let r = evaluate_loso(&samples, &OracleLearner, 0, 1).unwrap();
    assert_eq!(r.pooled.empty_classes, vec![Class::Surprise]);
    assert!((r.pooled.uf1 - 2.0 / 3.0).abs() < 1e-15);
    assert!(r.notes.iter().any(|n| n.contains("Surprise")));
}

// ---- manifest ----

const HEADER: &str = "sample_id,subject_id,dataset,frames_dir,onset,apex,offset,raw_label,class,landmarks_path";

#[test]
fn manifest_csv_round_trip() {
    let mut entries = composite_entries();
    entries.truncate(20);
    entries[3].apex = None;
    let m = Manifest::new(entries, "").unwrap();
    let mut buf = Vec::new();
    m.to_writer(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with(HEADER));
    assert!(text.lines().nth(4).unwrap().contains(",0,,4,"), "empty apex stays empty");
    let back = Manifest::from_reader(&buf[..], "").unwrap();
    assert_eq!(back, m);
}

#[test]
fn labels_map_to_classes() {
    for (label, class) in [
        ("happiness", Class::Positive),
        ("surprise", Class::Surprise),
        ("sadness", Class::Negative),
        ("disgust", Class::Negative),
        ("contempt", Class::Negative),
        ("fear", Class::Negative),
        ("anger", Class::Negative),
        ("repression", Class::Negative),
    ] {
        assert_eq!(Class::from_emotion(label), Some(class), "{label}");
        let csv = format!("{HEADER}\na,1,SAMM,f,0,1,2,{label},,l.json\n");
        let m = Manifest::from_reader(csv.as_bytes(), "").unwrap();
        assert_eq!(m.entries[0].class, class);
    }
    assert_eq!(Class::from_emotion("others"), None);
}

#[test]
fn malformed_manifests_are_rejected() {
    let bad = [
        "a,1,SAMM,f,0,1,2,happiness,0,l.json",
        "a,1,SAMM,f,0,1,2,others,,l.json",
        "a,1,SAMM,f,3,1,2,happiness,1,l.json",
        "a,1,NOPE,f,0,1,2,happiness,1,l.json",
        "a,1,SAMM,f,0,1,2,happiness,7,l.json",
        "a,1,SAMM,f,0,1,2,happiness,1,l.json\na,2,SAMM,f,0,1,2,happiness,1,l.json",
    ];
    for rows in bad {
        let csv = format!("{HEADER}\n{rows}\n");
        assert!(
            matches!(Manifest::from_reader(csv.as_bytes(), ""), Err(Error::Manifest(_))),
            "{rows}"
        );
    }
    let ok = format!("{HEADER}\na,1,SAMM,f,0,,2,others,0,l.json\n");
    let m = Manifest::from_reader(ok.as_bytes(), "").unwrap();
    assert_eq!((m.entries[0].apex, m.entries[0].class), (None, Class::Negative));
}

#[test]
fn relative_paths_resolve_against_manifest_dir() {
    let dir = tempfile::tempdir().unwrap();
    let m = Manifest::new(composite_entries()[..3].to_vec(), dir.path()).unwrap();
    let path = dir.path().join("m.csv");
    m.save(&path).unwrap();
    let back = Manifest::load(&path).unwrap();
    assert_eq!(back.resolve(&back.entries[0].frames_dir), dir.path().join("frames/SAMM_0"));
    assert!(matches!(Manifest::load(&dir.path().join("missing.csv")), Err(Error::Manifest(_))));
}
