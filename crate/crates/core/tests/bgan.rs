use sbp_core::bgan::*;
use sbp_core::bias::{global_bias, GlobalBias};
use sbp_core::classic::{train_classic, ClassicHyper, ClassicModel};
use sbp_core::data::{generate, Dataset, DatasetSpec, Sample};
use sbp_core::optim::clip_params;
use sbp_core::phi::{PhiEncoder, PhiVariant};
use sbp_core::rng::Rng;
use sbp_core::tensor::{Module, Tensor};

fn small_setup(seed: u64) -> (Dataset, ClassicModel, CorrectionSetup) {
    let spec = DatasetSpec {
        m_classes: 8,
        n_train: 400,
        n_test: 80,
        seed,
        ..DatasetSpec::default()
    };
    let ds = generate(&spec).unwrap();
    let mut run = train_classic(&ds, &ClassicHyper { iters: 200, ..Default::default() }, seed).unwrap();
    run.model.freeze();
    let gb = global_bias(&ds.class_weights, 1.0, 1e-3).unwrap();
    let phi = PhiEncoder::new(PhiVariant::Trans1, ds.feature_dim(), 8, &mut Rng::new(seed).fork(30)).unwrap();
    (ds, run.model, CorrectionSetup { phi, gb, eps_c: 1e-4 })
}

fn zero_all<M: Module>(m: &mut M) {
    for p in m.params_mut() {
        p.value.fill(0.0);
    }
}

#[test]
fn zero_generator_predicts_zero_bias() {
    let mut rng = Rng::new(4);
    let mut g = Generator::new(&NetShape::default(), 5, 7, &mut rng).unwrap();
    zero_all(&mut g);
    let b = g.forward(&[0.3; 5], &[1.0; 7], &[2.0, -1.0, 0.0, 4.0, 1.0, 1.0, 3.0]).unwrap();
    assert_eq!(b, vec![0.0; 7]);
}

#[test]
fn fresh_generator_predicts_zero_bias() {
    for arch in [NetArch::Conv, NetArch::Fc] {
        let shape = NetShape { arch, ..NetShape::default() };
        let g = Generator::new(&shape, 6, 9, &mut Rng::new(1)).unwrap();
        let b = g.forward(&[0.5; 6], &[0.1; 9], &[1.0; 9]).unwrap();
        assert!(b.iter().all(|v| *v == 0.0), "{arch:?}: {b:?}");
    }
}

#[test]
fn generator_output_length_is_m() {
    for m in [10, 20, 50] {
        let mut rng = Rng::new(m as u64);
        let mut g = Generator::new(&NetShape::default(), 16, m, &mut rng).unwrap();
        for p in g.params_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.1 * rng.normal());
        }
        let ctx: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let z: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let b_glo = vec![0.5; m];
        let b = g.forward(&ctx, &b_glo, &z).unwrap();
        assert_eq!(b.len(), m);
        assert!(b.iter().all(|v| v.is_finite()));
        assert_eq!(g.forward(&ctx, &b_glo, &z).unwrap(), b);
    }
}

#[test]
fn generator_rejects_bad_shapes() {
    let g = Generator::new(&NetShape::default(), 4, 6, &mut Rng::new(0)).unwrap();
    assert!(g.forward(&[0.0; 3], &[0.0; 6], &[0.0; 6]).is_err());
    assert!(g.forward(&[0.0; 4], &[0.0; 5], &[0.0; 6]).is_err());
    assert!(g.forward(&[0.0; 4], &[0.0; 6], &[0.0; 7]).is_err());
}

#[test]
fn critic_scores() {
    let mut rng = Rng::new(9);
    for arch in [NetArch::Conv, NetArch::Fc] {
        let shape = NetShape { arch, ..NetShape::default() };
        let mut d = Critic::new(&shape, 12, &mut rng).unwrap();
        let b: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let s = d.score(&b).unwrap();
        assert!(s.is_finite());
        assert_eq!(d.score(&b).unwrap(), s);
        zero_all(&mut d);
        assert_eq!(d.score(&b).unwrap(), 0.0);
    }
}

#[test]
fn clipped_critic_score_is_bounded() {
    let mut rng = Rng::new(21);
    for arch in [NetArch::Conv, NetArch::Fc] {
        for m in [5, 20] {
            let shape = NetShape { arch, ..NetShape::default() };
            let mut d = Critic::new(&shape, m, &mut rng).unwrap();
            clip_params(&mut d.params_mut(), 0.01);
            let bound = d.score_bound(10.0, 0.01);
            for _ in 0..200 {
                let b: Vec<f64> = (0..m).map(|_| 10.0 * (2.0 * rng.uniform() - 1.0)).collect();
                assert!(d.score(&b).unwrap().abs() <= bound);
            }
            // extreme corner of the box
            let corner = vec![10.0; m];
            assert!(d.score(&corner).unwrap().abs() <= bound);
        }
    }
}

#[test]
fn iteration_accounting_and_clip() {
    let (ds, model, setup) = small_setup(2);
    let hyper = BganHyper { iters: 12, ..Default::default() };
    let mut state = BganState::new(&hyper, ds.feature_dim(), ds.m_classes(), 2).unwrap();
    let mut audit = BiasAudit::default();
    let before = model.param_checksum().unwrap();
    for n in 1..=12 {
        let batch: Vec<&Sample> = ds.train[n..n + 16].iter().collect();
        let rec = train_iteration(&mut state, &batch, &model, &setup, &hyper, &mut audit).unwrap();
        assert_eq!(state.critic_updates, 5 * n);
        assert_eq!(state.generator_updates, n);
        assert!(rec.loss_g.is_finite() && rec.loss_d.is_finite());
        for p in state.critic.params() {
            assert!(p.value.data().iter().all(|v| v.abs() <= 0.01), "{}", p.name);
        }
    }
    assert_eq!(model.verify_frozen().unwrap(), before);
    assert_eq!(audit.constructions, 12 * 5 * 16);
    assert_eq!(audit.violations, 0);
}

#[test]
fn sub_steps_touch_only_their_network() {
    let (ds, model, setup) = small_setup(3);
    let hyper = BganHyper::default();
    let mut state = BganState::new(&hyper, ds.feature_dim(), ds.m_classes(), 3).unwrap();
    let mut audit = BiasAudit::default();
    let batch: Vec<&Sample> = ds.train[..16].iter().collect();
    for _ in 0..3 {
        let g0 = state.generator.checksum();
        let mut d_before_g = None;
        let mut steps = vec![];
        train_iteration_observed(&mut state, &batch, &model, &setup, &hyper, &mut audit, &mut |step, st| {
            steps.push(step);
            match step {
                SubStep::Critic(_) => {
                    assert_eq!(st.generator.checksum(), g0);
                    d_before_g = Some(st.critic.checksum());
                }
                SubStep::Generator => {
                    assert_eq!(Some(st.critic.checksum()), d_before_g);
                    assert_ne!(st.generator.checksum(), g0);
                }
            }
        })
        .unwrap();
        let expected: Vec<SubStep> = (0..5).map(SubStep::Critic).chain([SubStep::Generator]).collect();
        assert_eq!(steps, expected);
    }
}

#[test]
fn zero_iterations_return_initial_networks() {
    let (ds, model, setup) = small_setup(4);
    let hyper = BganHyper { iters: 0, ..Default::default() };
    let run = train_bgan(&model, &setup, &ds, &hyper, 4).unwrap();
    let init = BganState::new(&hyper, ds.feature_dim(), ds.m_classes(), 4).unwrap();
    assert_eq!(run.state.generator, init.generator);
    assert_eq!(run.state.critic, init.critic);
    assert!(run.trace.is_empty());
}

#[test]
fn unfrozen_model_is_rejected() {
    let (ds, _, setup) = small_setup(5);
    let run = train_classic(&ds, &ClassicHyper { iters: 10, ..Default::default() }, 5).unwrap();
    let hyper = BganHyper { iters: 2, ..Default::default() };
    let err = train_bgan(&run.model, &setup, &ds, &hyper, 5).unwrap_err();
    assert!(matches!(err, sbp_core::Error::FreezeViolation(_)), "{err}");
}

#[test]
fn training_is_deterministic_and_traces_finite() {
    let (ds, model, setup) = small_setup(6);
    let hyper = BganHyper { iters: 20, ..Default::default() };
    let a = train_bgan(&model, &setup, &ds, &hyper, 6).unwrap();
    let b = train_bgan(&model, &setup, &ds, &hyper, 6).unwrap();
    assert_eq!(a.state.generator, b.state.generator);
    assert_eq!(a.state.critic, b.state.critic);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.trace.len(), 20);
    assert!(a.trace.iter().all(|r| r.loss_g.is_finite() && r.loss_d.is_finite()));
    // linear decay reaches zero after the final iteration
    assert_eq!(a.state.lr_g, 0.0);
    assert!((a.trace[10].lr_g - 0.5e-4).abs() < 1e-18);
}

#[test]
fn variants_train() {
    let (ds, model, setup) = small_setup(7);
    let no_prior = CorrectionSetup {
        gb: GlobalBias::zeros(ds.m_classes()),
        ..setup.clone()
    };
    let variants = [
        (BganHyper { iters: 5, objective: GenObjective::Plain, ..Default::default() }, &setup),
        (
            BganHyper {
                iters: 5,
                net: NetShape { arch: NetArch::Fc, ..NetShape::default() },
                ..Default::default()
            },
            &setup,
        ),
        (BganHyper { iters: 5, clip_c: None, ..Default::default() }, &no_prior),
    ];
    for (hyper, s) in variants {
        let run = train_bgan(&model, s, &ds, &hyper, 7).unwrap();
        assert_eq!(run.trace.len(), 5);
        let expected_critic = match hyper.objective {
            GenObjective::Adversarial => 25,
            GenObjective::Plain => 0,
        };
        assert_eq!(run.state.critic_updates, expected_critic);
        assert_eq!(run.audit.violations, 0);
    }
}

#[test]
fn integrated_mode_freezes_at_the_end() {
    let (ds, _, setup) = small_setup(8);
    let hyper = BganHyper { iters: 10, ..Default::default() };
    let classic = ClassicHyper { iters: 40, ..Default::default() };
    let (c, b) = train_integrated(&ds, &classic, &setup, &hyper, 8).unwrap();
    assert!(c.model.is_frozen());
    assert_eq!(c.loss_trace.len(), 40);
    assert_eq!(b.trace.len(), 10);
    assert_eq!(b.state.generator_updates, 10);
}

#[test]
fn generator_batch_matches_single_rows() {
    let mut rng = Rng::new(12);
    let mut g = Generator::new(&NetShape::default(), 4, 6, &mut rng).unwrap();
    for p in g.params_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = 0.3 * rng.normal());
    }
    let ctx = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let z = Tensor::randn(&[3, 6], 1.0, &mut rng);
    let b_glo = vec![0.2; 6];
    let batch = g.forward_batch(&ctx, &b_glo, &z).unwrap();
    for i in 0..3 {
        let single = g.forward(ctx.row_slice(i), &b_glo, z.row_slice(i)).unwrap();
        assert_eq!(batch.row_slice(i), single.as_slice());
    }
}
