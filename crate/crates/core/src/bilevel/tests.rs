use super::*;
use crate::datasets::{generate, split, Dataset, DatasetKind, DatasetSpec, Split};
use crate::diffcore::{ParamId, Tape};
use crate::distill::{SingleTeacher, SplitKind, TeacherBank, TeacherSource};
use crate::searchspace::{Genotype, GradMode, OperationKind, RetainPolicy};
use crate::sharpness::SharpnessConfig;

fn task() -> (Dataset, Split) {
    let spec = DatasetSpec { kind: DatasetKind::Moons, n: 160, noise: 0.2, classes: 2 };
    let ds = generate(&spec, 1).unwrap();
    let s = split(&ds, 0.5, 1).unwrap();
    (ds, s)
}

fn small(lambda: f64, window: usize) -> SearchConfig {
    SearchConfig {
        epochs: 5,
        warmup_epochs: 2,
        window,
        lambda,
        batch_size: 32,
        arch: ArchConfig { width: 4, ..Default::default() },
        seed: 3,
        ..Default::default()
    }
}

fn no_sharp() -> SharpnessConfig {
    SharpnessConfig { every: 0, ..Default::default() }
}

#[test]
fn zero_lambda_matches_reference_loop() {
    let (ds, sp) = task();
    let cfg = small(0.0, 2);
    let out = run_search(&cfg, &no_sharp(), &ds, &sp).unwrap();
    let (reference, net) = reference_darts(&cfg, &ds, &sp, cfg.epochs).unwrap();
    for (l, r) in out.logs.iter().zip(&reference) {
        assert_eq!(l.train_loss.to_bits(), r.train_loss.to_bits());
        assert_eq!(l.valid_loss.to_bits(), r.valid_loss.to_bits());
    }
    let ids: Vec<ParamId> = net.params().ids().collect();
    assert_eq!(net.params().checksum(&ids), out.net.params().checksum(&ids));
}

#[test]
fn window_is_irrelevant_without_distillation() {
    let (ds, sp) = task();
    let a = run_search(&small(0.0, 1), &no_sharp(), &ds, &sp).unwrap();
    let b = run_search(&small(0.0, 2), &no_sharp(), &ds, &sp).unwrap();
    assert_eq!(a.genotype, b.genotype);
    assert_eq!(epoch_log_csv(&a.logs, true), epoch_log_csv(&b.logs, true));
}

#[test]
fn reruns_are_bit_identical() {
    let (ds, sp) = task();
    let sharp = SharpnessConfig { max_steps: 5, probe_size: 32, ..Default::default() };
    let a = run_search(&small(1.0, 2), &sharp, &ds, &sp).unwrap();
    let b = run_search(&small(1.0, 2), &sharp, &ds, &sp).unwrap();
    assert_eq!(a.genotype, b.genotype);
    assert_eq!(epoch_log_csv(&a.logs, true), epoch_log_csv(&b.logs, true));
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
    assert_eq!(a.trace.rows.len(), 5);
}

#[test]
fn warmup_fills_both_banks() {
    let (ds, sp) = task();
    let cfg = small(1.0, 2);
    let mut search = Search::with_bank(&cfg, &no_sharp(), &ds, &sp).unwrap();
    for _ in 0..cfg.warmup_epochs {
        search.run_epoch().unwrap();
    }
    for kind in [SplitKind::Train, SplitKind::Valid] {
        assert_eq!(search.teacher().epochs(kind), vec![1, 2]);
    }
    search.teacher().vote(SplitKind::Train, 3, &sp.train).unwrap();
    search.teacher().vote(SplitKind::Valid, 3, &sp.valid).unwrap();
}

#[test]
fn distillation_term_is_positive_after_warmup() {
    let (ds, sp) = task();
    let cfg = small(1.0, 2);
    let out = run_search(&cfg, &no_sharp(), &ds, &sp).unwrap();
    for l in &out.logs {
        match l.phase {
            Phase::Warmup => assert_eq!((l.distill_train, l.distill_valid), (0.0, 0.0)),
            Phase::Sd => assert!(l.distill_train > 0.0 && l.distill_valid > 0.0, "{l:?}"),
        }
    }
}

#[test]
fn window_one_equals_single_teacher() {
    let (ds, sp) = task();
    let cfg = small(1.0, 1);
    let mut a = Search::with_bank(&cfg, &no_sharp(), &ds, &sp).unwrap();
    let single = SingleTeacher::new(ds.len(), ds.classes()).unwrap();
    let mut b = Search::new(&cfg, &no_sharp(), &ds, &sp, single).unwrap();
    for _ in 0..=cfg.warmup_epochs {
        a.run_epoch().unwrap();
        b.run_epoch().unwrap();
    }
    let ids: Vec<ParamId> = a.net().params().ids().collect();
    for &id in &ids {
        let (pa, pb) = (a.net().params().get(id), b.net().params().get(id));
        assert!(pa.data().iter().zip(pb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn end_of_epoch_capture_runs_and_differs() {
    let (ds, sp) = task();
    let stream = run_search(&small(1.0, 2), &no_sharp(), &ds, &sp).unwrap();
    let cfg = SearchConfig { teacher_capture: TeacherCapture::EndOfEpoch, ..small(1.0, 2) };
    let eoe = run_search(&cfg, &no_sharp(), &ds, &sp).unwrap();
    // warm-up is unaffected by the capture mode
    for (a, b) in stream.logs[..2].iter().zip(&eoe.logs[..2]) {
        assert_eq!((a.train_loss, a.valid_loss), (b.train_loss, b.valid_loss));
    }
    assert_ne!(stream.logs[2].distill_train, eoe.logs[2].distill_train);
}

#[test]
fn frozen_alpha_warmup_keeps_alpha() {
    let (ds, sp) = task();
    let cfg = SearchConfig { warmup_freeze_alpha: true, ..small(1.0, 2) };
    let mut search = Search::with_bank(&cfg, &no_sharp(), &ds, &sp).unwrap();
    let before = search.net().arch_params();
    search.run_epoch().unwrap();
    assert_eq!(search.net().arch_params(), before);
    assert_eq!(search.logs()[0].lr_alpha, 0.0);
}

#[test]
fn steps_touch_only_their_block() {
    let (ds, sp) = task();
    let mut search = Search::with_bank(&small(0.0, 2), &no_sharp(), &ds, &sp).unwrap();
    search.run_epoch().unwrap();
    let mut net = search.net().clone();
    let alpha = [net.alpha_id()];
    let w = net.weight_ids().to_vec();
    let (x, y) = ds.batch(&sp.valid[..16]);

    let mut adam = Adam::new(AdamConfig::default(), net.alpha_id(), net.params());
    let mut tape = Tape::new();
    let logits = net.forward(&mut tape, &x, GradMode::Alpha).unwrap();
    let loss = tape.cross_entropy(logits, &y).unwrap();
    let grads = tape.backward(loss).unwrap();
    let (w0, a0) = (net.params().checksum(&w), net.params().checksum(&alpha));
    adam.step(net.params_mut(), &grads);
    assert_eq!(net.params().checksum(&w), w0);
    assert_ne!(net.params().checksum(&alpha), a0);

    let mut sgd = Sgd::new(SgdConfig::default(), &w, net.params());
    let mut tape = Tape::new();
    let logits = net.forward(&mut tape, &x, GradMode::All).unwrap();
    let loss = tape.cross_entropy(logits, &y).unwrap();
    let grads = tape.backward(loss).unwrap();
    let (w0, a0) = (net.params().checksum(&w), net.params().checksum(&alpha));
    sgd.step(net.params_mut(), &grads, 0.01);
    assert_eq!(net.params().checksum(&alpha), a0);
    assert_ne!(net.params().checksum(&w), w0);
}

#[test]
fn search_rejects_exhausted_runs_and_bad_configs() {
    let (ds, sp) = task();
    let cfg = small(0.0, 2);
    let mut search = Search::with_bank(&cfg, &no_sharp(), &ds, &sp).unwrap();
    for _ in 0..cfg.epochs {
        search.run_epoch().unwrap();
    }
    assert!(search.run_epoch().is_err());
    let bad = SearchConfig { warmup_epochs: 5, ..cfg };
    assert!(Search::with_bank(&bad, &no_sharp(), &ds, &sp).is_err());
}

#[test]
fn epoch_log_csv_shape() {
    let (ds, sp) = task();
    let out = run_search(&small(1.0, 2), &no_sharp(), &ds, &sp).unwrap();
    let text = epoch_log_csv(&out.logs, true);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), EPOCH_LOG_HEADER);
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("1,warmup,") && rows[4].starts_with("5,sd,") && rows[4].ends_with(",0"));
    assert!(rows.iter().all(|r| r.split(',').count() == 11));
}

#[test]
fn discrete_training_is_deterministic_and_learns() {
    let (ds, sp) = task();
    let g = Genotype::new(
        2,
        RetainPolicy::All,
        vec![(0, OperationKind::ReluLinear), (1, OperationKind::Identity), (2, OperationKind::TanhLinear)],
    )
    .unwrap();
    let cfg = DiscreteTrainConfig { epochs: 150, width: 8, ..Default::default() };
    let a = train_discrete(&g, &ds, &sp, &cfg, 4).unwrap();
    assert_eq!(a, train_discrete(&g, &ds, &sp, &cfg, 4).unwrap());
    assert!(a > 0.8, "{a}");
    let untrained = train_discrete(&g, &ds, &sp, &DiscreteTrainConfig { epochs: 0, ..cfg }, 4).unwrap();
    assert!((0.0..=1.0).contains(&untrained));
}

#[test]
fn accuracy_counts_argmax_hits() {
    let logits = crate::diffcore::Tensor::matrix(3, 2, vec![0.1, 0.9, 2.0, -1.0, 0.5, 0.5]).unwrap();
    assert!((accuracy(&logits, &[1, 0, 1]) - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn teacher_bank_sized_from_dataset() {
    let (ds, _) = task();
    let bank = TeacherBank::new(2, ds.len(), ds.classes()).unwrap();
    assert_eq!(bank.window(), 2);
}
