use lpkd_core::bench::{bridge_cost_model, param_overhead, param_overhead_for};
use lpkd_core::config::RunConfig;
use lpkd_core::data::{gen_blobs, Dataset, Split};
use lpkd_core::losses::{affinity, lp_loss, total_loss, FitNetAdapter, FitnetStage, Strategy};
use lpkd_core::nn::{InitScheme, Network, OptimizerConfig, Tensor};
use lpkd_core::trainer::{
    evaluate, export_embeddings, one_nn_accuracy, presets, student_step, sweep, train_student, train_teacher,
    EmbeddingLayer, EmbeddingTable, SweepGrid, TrainConfig, Trainee,
};
use lpkd_core::{Dataset32, Network32};

fn blobs_cfg(text: &str) -> RunConfig {
    let base = "dataset = blobs\nteacher_arch = blobs-teacher\nstudent_arch = blobs-student\n\
                m = 32\nepochs = 4\nlr = 0.005\nk = 3\n";
    RunConfig::parse_str(&format!("{base}{text}")).unwrap()
}

fn teacher_for(cfg: &RunConfig) -> (Network32, lpkd_core::config::DataSplits<f32>) {
    let data = cfg.load_data::<f32>().unwrap();
    let mut tc = cfg.train_config();
    tc.epochs = 10;
    let net = Network::init(&cfg.teacher_architecture().unwrap(), 100, tc.init).unwrap();
    (train_teacher(net, &data.train, &data.val, &tc).unwrap().network, data)
}

#[test]
fn blob_teacher_reaches_high_validation_accuracy() {
    let cfg = blobs_cfg("blobs_classes = 2\n");
    let (teacher, data) = teacher_for(&cfg);
    assert!(evaluate(&teacher, &data.val).unwrap().accuracy >= 0.99);
}

#[test]
fn student_training_is_deterministic_and_leaves_teacher_alone() {
    let cfg = blobs_cfg("strategy = lp\n");
    let (teacher, data) = teacher_for(&cfg);
    let before = teacher.clone();
    let run = || {
        let tc = cfg.train_config();
        let net = Network::init(&cfg.student_architecture().unwrap(), tc.seed, tc.init).unwrap();
        train_student(net, &teacher, &data.train, &data.val, &tc).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.record.loss_sequence(), b.record.loss_sequence());
    assert_eq!(a.network, b.network);
    assert_eq!(teacher, before);
    assert!(a.record.epochs.iter().all(|e| e.lp > 0.0));
}

#[test]
fn every_strategy_trains_on_blobs() {
    let cfg = blobs_cfg("");
    let (teacher, data) = teacher_for(&cfg);
    for s in ["bp", "kd", "lp", "fitnet"] {
        let mut c = cfg.clone();
        c.set("strategy", s).unwrap();
        let tc = c.train_config();
        let net = Network::init(&c.student_architecture().unwrap(), tc.seed, tc.init).unwrap();
        let out = train_student(net, &teacher, &data.train, &data.val, &tc).unwrap();
        assert_eq!(out.adapter.is_some(), s == "fitnet");
        assert_eq!(out.record.adapter_params, if s == "fitnet" { 3 * 64 + 64 } else { 0 });
        assert!(out.record.epochs.iter().all(|e| e.train_loss.is_finite()), "{s}");
    }
}

fn batch() -> (Tensor<f32>, Vec<usize>) {
    let ds: Dataset32 = gen_blobs(4, 8, 8, 1.0, 7).unwrap();
    (ds.inputs, ds.labels)
}

fn pair(seed: u64) -> (Network32, Network32) {
    let s = Network::init(&presets::mlp_embedding(8, 16, 3, 4), seed, InitScheme::Scaled).unwrap();
    let t = Network::init(&presets::mlp(8, 32, 4), seed + 1000, InitScheme::Scaled).unwrap();
    (s, t)
}

#[test]
fn switched_off_distillation_step_equals_backprop_step() {
    let (x, y) = batch();
    let (student, teacher) = pair(1);
    let opt = OptimizerConfig::rmsprop(0.01, 0.9);
    let mut off = TrainConfig::default().distill;
    off.strategy = Strategy::Lp;
    off.lambda = 0.0;
    off.gamma = 0.0;
    let bp = lpkd_core::losses::DistillConfig { strategy: Strategy::Bp, ..off };
    let mut a = Trainee::new(student.clone(), opt).unwrap();
    let mut b = Trainee::new(student, opt).unwrap();
    for _ in 0..3 {
        let la = student_step(&mut a, Some(&teacher), &x, &y, &off, FitnetStage::Distill).unwrap();
        let lb = student_step(&mut b, None, &x, &y, &bp, FitnetStage::Distill).unwrap();
        assert_eq!(la.total, lb.total);
    }
    assert_eq!(a.net, b.net);
}

#[test]
fn first_step_reports_the_independent_lp_value() {
    let (x, y) = batch();
    let (student, teacher) = pair(2);
    let cfg = TrainConfig::default().distill;
    let ft = teacher.forward(&x).unwrap().tapped();
    let fs = student.forward(&x).unwrap().tapped();
    let expected = lp_loss(&fs, &affinity(&ft, &cfg).unwrap()).unwrap() as f64;
    let mut t = Trainee::new(student, OptimizerConfig::rmsprop(0.001, 0.9)).unwrap();
    let got = student_step(&mut t, Some(&teacher), &x, &y, &cfg, FitnetStage::Distill).unwrap();
    assert!((got.lp - expected).abs() <= 1e-6 * expected.max(1.0), "{} vs {}", got.lp, expected);
}

#[test]
fn small_steps_descend() {
    let (x, y) = batch();
    let mut cfg = TrainConfig::default().distill;
    cfg.k = 3;
    let mut descents = 0;
    let trials = 40;
    for seed in 0..trials {
        let (student, teacher) = pair(seed);
        let (s64, t64): (Network<f64>, Network<f64>) = (student.cast(), teacher.cast());
        let (x64, tt) = (x.cast::<f64>(), t64.forward(&x.cast()).unwrap());
        let loss = |n: &Network<f64>| {
            total_loss(&y, &n.forward(&x64).unwrap(), Some(&tt), None, &cfg, FitnetStage::Distill)
                .unwrap()
                .value
        };
        let before = loss(&s64);
        let mut t = Trainee::new(s64, OptimizerConfig::sgd(1e-3)).unwrap();
        student_step(&mut t, Some(&t64), &x64, &y, &cfg, FitnetStage::Distill).unwrap();
        if loss(&t.net) < before {
            descents += 1;
        }
    }
    assert!(descents as f64 >= 0.95 * trials as f64, "{descents}/{trials}");
}

#[test]
fn fitnet_adapter_counts_match_formula() {
    let (s, t) = pair(3);
    let adapter = FitNetAdapter::<f32>::init(s.tap_dim(), t.tap_dim(), 0);
    assert_eq!(adapter.param_count(), param_overhead_for(&s, &t, Strategy::Fitnet));
    assert_eq!(param_overhead_for(&s, &t, Strategy::Lp), 0);
    assert_eq!(param_overhead(Strategy::Fitnet, 5120, 6912, true), 5120 * 6912 + 6912);
    assert_eq!(param_overhead(Strategy::Fitnet, 5120, 6912, false), 5120 * 6912);
}

#[test]
fn cost_model_scales_linearly_in_width_and_quadratically_in_batch() {
    let base = bridge_cost_model(64, 100, 300, 5).unwrap();
    let wide = bridge_cost_model(64, 200, 600, 5).unwrap();
    let tall = bridge_cost_model(128, 100, 300, 5).unwrap();
    assert_eq!(wide.lp_teacher_distances, 2 * base.lp_teacher_distances);
    assert_eq!(wide.lp_student_distances, 2 * base.lp_student_distances);
    assert_eq!(wide.lp_knn_select, base.lp_knn_select);
    assert_eq!(wide.fitnet, 4 * base.fitnet);
    assert_eq!(tall.lp_total, 4 * base.lp_total);
    assert_eq!(tall.fitnet, 2 * base.fitnet);
    assert_eq!(base.lp_total, 64 * 64 * (100 + 300 + 5));
    assert!(bridge_cost_model(0, 1, 1, 1).is_err());
}

#[test]
fn memorized_set_evaluates_perfectly_and_per_class_averages_agree() {
    let ds: Dataset32 = gen_blobs(3, 10, 4, 0.3, 5).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 10,
        init: InitScheme::Scaled,
        optimizer: OptimizerConfig::rmsprop(0.01, 0.9),
        ..TrainConfig::default()
    };
    let net = Network::init(&presets::mlp(4, 32, 3), 0, cfg.init).unwrap();
    let net = train_teacher(net, &ds, &ds, &cfg).unwrap().network;
    let e = evaluate(&net, &ds).unwrap();
    assert_eq!(e.accuracy, 1.0);

    // An untrained net on an unbalanced subset: overall = count-weighted mean.
    let raw = Network::init(&presets::mlp(4, 32, 3), 9, InitScheme::Scaled).unwrap();
    let sub = ds.select(&(0..17).collect::<Vec<_>>(), Split::Test);
    let e = evaluate(&raw, &sub).unwrap();
    let correct: usize = e.per_class.iter().map(|c| c.correct).sum();
    let count: usize = e.per_class.iter().map(|c| c.count).sum();
    assert_eq!(count, 17);
    assert!((e.accuracy - correct as f64 / count as f64).abs() < 1e-12);
    let bad = Dataset::new(sub.inputs.clone(), sub.labels.clone(), 5, Split::Test).unwrap();
    assert!(evaluate(&raw, &bad).is_err());
}

#[test]
fn embeddings_round_trip_through_csv() {
    let ds: Dataset32 = gen_blobs(3, 5, 4, 1.0, 1).unwrap();
    let net = Network::init(&presets::mlp_embedding(4, 8, 3, 3), 0, InitScheme::Scaled).unwrap();
    let table = export_embeddings(&net, &ds, EmbeddingLayer::Penultimate).unwrap();
    assert_eq!(table.features.shape(), &[15, 3]);
    assert_eq!(table, export_embeddings(&net, &ds, EmbeddingLayer::Tap).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.csv");
    table.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("id,label,f0,f1,f2\n"));
    assert_eq!(EmbeddingTable::<f32>::read_csv(&path).unwrap(), table);
}

#[test]
fn constant_feature_network_exports_identical_rows() {
    let ds: Dataset32 = gen_blobs(2, 6, 4, 1.0, 2).unwrap();
    let mut net = Network::init(&presets::mlp_embedding(4, 8, 3, 2), 0, InitScheme::Scaled).unwrap();
    for p in net.layers[0].params.iter_mut() {
        p.data_mut().fill(0.0);
    }
    let table = export_embeddings(&net, &ds, EmbeddingLayer::Tap).unwrap();
    assert!((1..ds.len()).all(|i| table.features.row(i) == table.features.row(0)));
    // All distances tie, so leave-one-out 1-NN picks the lowest other index.
    let expected = (0..ds.len())
        .filter(|&i| ds.labels[i] == ds.labels[if i == 0 { 1 } else { 0 }])
        .count() as f64
        / ds.len() as f64;
    assert_eq!(one_nn_accuracy(&table), expected);
}

#[test]
fn singleton_sweep_matches_direct_training() {
    let cfg = blobs_cfg("strategy = lp\nepochs = 2\n");
    let (teacher, data) = teacher_for(&cfg);
    let arch = cfg.student_architecture().unwrap();
    let tc = cfg.train_config();
    let grid = SweepGrid { ks: vec![2], gammas: vec![0.5] };
    let points = sweep(&arch, &teacher, &data.train, &data.val, Some(&data.test), &tc, &grid, 1).unwrap();
    let mut direct = tc.clone();
    direct.distill.k = 2;
    direct.distill.gamma = 0.5;
    let out = train_student(Network::init(&arch, tc.seed, tc.init).unwrap(), &teacher, &data.train, &data.val, &direct)
        .unwrap();
    assert_eq!(points.len(), 1);
    assert_eq!(Some(points[0].val_accuracy), out.record.best_val_accuracy);
    assert_eq!(points[0].test_accuracy, Some(evaluate(&out.network, &data.test).unwrap().accuracy));

    let grid = SweepGrid { ks: vec![1, 2], gammas: vec![0.0, 1.0] };
    let serial = sweep(&arch, &teacher, &data.train, &data.val, None, &tc, &grid, 1).unwrap();
    let parallel = sweep(&arch, &teacher, &data.train, &data.val, None, &tc, &grid, 3).unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(serial.iter().map(|p| (p.k, p.gamma)).collect::<Vec<_>>(), grid.points());
}

#[test]
fn config_defaults_and_precedence() {
    let d = RunConfig::default();
    for (k, v) in [("k", "5"), ("gamma", "1"), ("lambda", "2"), ("tau", "0.5"), ("m", "128"), ("lr", "0.0005"), ("rho", "0.9")] {
        assert_eq!(d.get(k).as_deref(), Some(v), "{k}");
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "# comment\nk = 7\ngamma = 3 # trailing\n").unwrap();
    let c = RunConfig::resolve(Some(&path), &[("k".into(), "9".into())]).unwrap();
    assert_eq!(c.get("k").as_deref(), Some("9"));
    assert_eq!(c.get("gamma").as_deref(), Some("3"));

    let e = RunConfig::resolve(None, &[("tau".into(), "0".into())]).unwrap_err();
    assert!(e.is_config());
    assert!(RunConfig::resolve(None, &[("no_such_key".into(), "1".into())]).unwrap_err().is_config());
    assert!(RunConfig::parse_str("k 5\n").unwrap_err().is_config());
}

#[test]
fn snapshot_reproduces_the_run() {
    let cfg = blobs_cfg("strategy = kd\nseed = 3\nepochs = 2\n");
    let again = RunConfig::parse_str(&cfg.snapshot()).unwrap();
    assert_eq!(again.snapshot(), cfg.snapshot());
    let (teacher, _) = teacher_for(&cfg);
    let run = |c: &RunConfig| {
        let data = c.load_data::<f32>().unwrap();
        let tc = c.train_config();
        let net = Network::init(&c.student_architecture().unwrap(), tc.seed, tc.init).unwrap();
        train_student(net, &teacher, &data.train, &data.val, &tc).unwrap().record.loss_sequence()
    };
    assert_eq!(run(&cfg), run(&again));
}
