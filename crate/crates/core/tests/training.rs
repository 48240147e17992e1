mod support;

use support::oracles::*;
use swae_core::data::{gen_gauss_ring, Dataset, Split};
use swae_core::nn::{Activation, ParamSet};
use swae_core::swae::{NetId, ReconSource};
use swae_core::train::{
    train, validate, EpochRecord, NoHooks, RunError, StopReason, TrainHooks, UpdateEvent,
    UpdateRecorder,
};
use swae_core::{Architecture, Error, PriorFamily, Result, SwaeModel, Tensor, TrainConfig, Trainer};

fn ring(n: usize, split: Split) -> Dataset {
    let mut d = gen_gauss_ring(n, 8, 2.0, 0.05, split.seed(3)).unwrap();
    // Tiny models read three columns; pad with a constant feature.
    let rows: Vec<Vec<f64>> = (0..d.len()).map(|i| vec![d.samples.row(i)[0], d.samples.row(i)[1], 0.5]).collect();
    d.samples = Tensor::from_rows(&rows).unwrap();
    d
}

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: 2,
        eval_every: 3,
        lr: 1e-3,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn algorithm_order_with_three_heads() {
    let model = tiny_model(1, 3);
    let mut trainer = Trainer::new(model, config(1)).unwrap();
    let (tr, va) = (ring(40, Split::Train), ring(16, Split::Val));
    let mut rec = UpdateRecorder::default();
    trainer.run(&tr, &va, &mut rec).unwrap();
    let steps = trainer.state.step;
    assert_eq!(steps, 10);
    let mut expected = Vec::new();
    for step in 1..=steps {
        expected.push((step, UpdateEvent::D1));
        expected.push((step, UpdateEvent::E1G1));
        for head in 0..3 {
            for _ in 0..2 {
                expected.push((step, UpdateEvent::D2(head)));
                expected.push((step, UpdateEvent::E2G2(head)));
            }
        }
    }
    assert_eq!(rec.events, expected);
    assert_eq!(trainer.counts.d1, steps);
    assert_eq!(trainer.counts.e1g1, steps);
    assert_eq!(trainer.counts.d2, vec![2 * steps; 3]);
    assert_eq!(trainer.counts.e2g2, vec![2 * steps; 3]);
}

#[test]
fn zero_epochs_leave_model_untouched() {
    let model = tiny_model(2, 2);
    let cfg = TrainConfig { max_epochs: 0, ..config(2) };
    let (trained, log) = train(model.clone(), &ring(40, Split::Train), &ring(16, Split::Val), cfg).unwrap();
    for id in model.net_ids() {
        assert_eq!(trained.net(id).params, model.net(id).params);
        assert_eq!(trained.net(id).adam.t, 0);
        assert_eq!(trained.net(id).adam.lr, config(2).lr);
    }
    assert!(log.records.is_empty() && log.epochs.is_empty());
}

#[test]
fn same_seed_same_checkpoint() {
    let run = || {
        let mut t = Trainer::new(tiny_model(4, 2), config(4)).unwrap();
        t.run(&ring(40, Split::Train), &ring(16, Split::Val), &mut NoHooks).unwrap();
        t.checkpoint()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let bits = |c: &swae_core::Checkpoint| -> Vec<u64> {
        c.model.net_ids().iter().flat_map(|&id| c.model.net(id).params.flat()).map(f64::to_bits).collect()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (tr, va) = (ring(40, Split::Train), ring(16, Split::Val));
    let full_cfg = TrainConfig { max_steps: Some(10), max_epochs: 5, ..config(5) };
    let mut full = Trainer::new(tiny_model(5, 2), full_cfg.clone()).unwrap();
    assert_eq!(full.run(&tr, &va, &mut NoHooks).unwrap(), StopReason::MaxSteps);

    // Stop mid-epoch so the resumed run has to skip consumed batches.
    let half_cfg = TrainConfig { max_steps: Some(7), ..full_cfg.clone() };
    let mut half = Trainer::new(tiny_model(5, 2), half_cfg).unwrap();
    half.run(&tr, &va, &mut NoHooks).unwrap();
    let mut ckpt = half.checkpoint();
    assert_eq!(ckpt.state.batch_in_epoch, 2);
    ckpt.config = full_cfg;
    let mut resumed = Trainer::from_checkpoint(ckpt).unwrap();
    resumed.run(&tr, &va, &mut NoHooks).unwrap();
    assert_eq!(resumed.checkpoint(), full.checkpoint());
}

#[test]
fn frozen_stage1_stays_bit_identical() {
    struct Watch(Vec<Vec<u64>>);
    impl TrainHooks for Watch {
        fn on_epoch_end(&mut self, t: &Trainer, r: &EpochRecord) -> Result<()> {
            if r.epoch >= 1 {
                let bits = [NetId::E1, NetId::G1, NetId::D1]
                    .iter()
                    .flat_map(|&id| t.model.net(id).params.flat())
                    .map(f64::to_bits)
                    .collect();
                self.0.push(bits);
            }
            Ok(())
        }
    }
    let cfg = TrainConfig { freeze_stage1_after: Some(1), max_epochs: 4, early_stop_patience: 10, ..config(6) };
    let mut t = Trainer::new(tiny_model(6, 1), cfg).unwrap();
    let mut watch = Watch(Vec::new());
    let head_before = t.model.heads[0].clone();
    t.run(&ring(40, Split::Train), &ring(16, Split::Val), &mut watch).unwrap();
    assert_eq!(watch.0.len(), 3);
    assert!(watch.0.windows(2).all(|w| w[0] == w[1]));
    assert_ne!(t.model.heads[0], head_before);
    assert_eq!(t.counts.d1, 5);
}

#[test]
fn early_stopping_waits_for_patience() {
    for patience in 1..4 {
        let cfg = TrainConfig {
            max_epochs: 60,
            early_stop_patience: patience,
            lr: 0.05,
            ..config(7)
        };
        let mut t = Trainer::new(tiny_model(7, 1), cfg).unwrap();
        let reason = t.run(&ring(40, Split::Train), &ring(16, Split::Val), &mut NoHooks).unwrap();
        let epochs = &t.log.epochs;
        let best = epochs
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, e)| if e.val_mse < acc.1 { (i, e.val_mse) } else { acc });
        if reason == StopReason::EarlyStopped {
            assert_eq!(epochs.len() - 1 - best.0, patience as usize);
        } else {
            assert!(epochs.len() - 1 - best.0 < patience as usize);
        }
    }
}

#[test]
fn divergence_rolls_back_to_last_good_step() {
    let cfg = TrainConfig { lr: 1e200, ..config(8) };
    let mut t = Trainer::new(tiny_model(8, 1), cfg).unwrap();
    let (tr, va) = (ring(40, Split::Train), ring(16, Split::Val));
    let err = t.run(&tr, &va, &mut NoHooks).unwrap_err();
    let RunError::Diverged(d) = err else { panic!("{err:?}") };
    assert!(matches!(d.cause, Error::NonFinite { .. }));
    assert_eq!(t.state.step, d.step - 1);
    let good = t.checkpoint();
    assert!(good.model.net_ids().iter().all(|&id| good.model.net(id).params.flat().iter().all(|x| x.is_finite())));

    // Replaying up to the failing step from scratch reaches the same state.
    let replay_cfg = TrainConfig { max_steps: Some(d.step - 1), ..t.config.clone() };
    let mut replay = Trainer::new(tiny_model(8, 1), replay_cfg).unwrap();
    replay.run(&tr, &va, &mut NoHooks).unwrap();
    assert_eq!(replay.model, good.model);
}

#[test]
fn empty_or_mismatched_data_is_rejected() {
    let mut t = Trainer::new(tiny_model(9, 1), config(9)).unwrap();
    let ring2 = gen_gauss_ring(40, 8, 2.0, 0.05, 1).unwrap();
    assert!(matches!(t.run(&ring2, &ring2, &mut NoHooks), Err(RunError::Invalid(Error::ShapeMismatch { .. }))));
    assert!(TrainConfig { batch_size: 0, ..config(9) }.validate().is_err());
    assert!(TrainConfig { early_stop_patience: 0, ..config(9) }.validate().is_err());
    assert!(TrainConfig { lambda: -1.0, ..config(9) }.validate().is_err());
    assert_eq!(TrainConfig { lambda: 0.05, ..config(9) }.validate().unwrap().len(), 1);
    assert!(TrainConfig::default().validate().unwrap().is_empty());
}

#[test]
fn train_log_steps_increase() {
    let mut t = Trainer::new(tiny_model(10, 2), TrainConfig { eval_every: 2, ..config(10) }).unwrap();
    t.run(&ring(40, Split::Train), &ring(16, Split::Val), &mut NoHooks).unwrap();
    let steps: Vec<u64> = t.log.records.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![2, 4, 6, 8, 10]);
    assert!(t.log.records.iter().all(|r| r.stage2_recon.len() == 2 && r.stage2_d.len() == 2));
}

#[test]
fn validate_is_pure_and_matches_metric() {
    let m = tiny_model(11, 1);
    let va = ring(16, Split::Val);
    let a = validate(&m, &va).unwrap();
    assert_eq!(a.to_bits(), validate(&m, &va).unwrap().to_bits());
    let direct = swae_core::metrics::mse_metric(&va.samples, &m.reconstruct(&va.samples).unwrap()).unwrap();
    assert_eq!(a, direct);
}

#[test]
fn identity_model_validates_to_zero() {
    let arch = Architecture {
        data_dim: 3,
        latent_dim: 3,
        z_dim: 2,
        stage1_hidden: vec![],
        stage2_hidden: vec![4],
        leaky_slope: 0.2,
    };
    let mut m = SwaeModel::new(&arch, &[PriorFamily::Gaussian], &Default::default(), 0).unwrap();
    m.g1.spec.output = Activation::Identity;
    for id in [NetId::E1, NetId::G1] {
        let net = m.net_mut(id);
        net.params = ParamSet::zeros(&net.spec);
        for i in 0..3 {
            net.params.layers[0].weight.data_mut()[i * 3 + i] = 1.0;
        }
    }
    assert!(validate(&m, &ring(16, Split::Val)).unwrap() < 1e-10);
}

#[test]
fn prior_sourced_recon_trains() {
    let cfg = TrainConfig { stage2_recon_source: ReconSource::Prior, ..config(12) };
    let mut t = Trainer::new(tiny_model(12, 1), cfg).unwrap();
    t.run(&ring(40, Split::Train), &ring(16, Split::Val), &mut NoHooks).unwrap();
    assert_eq!(t.state.step, 10);
}
