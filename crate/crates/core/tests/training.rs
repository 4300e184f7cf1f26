mod common;

use std::fs;

use common::*;
use ppgn::artifacts::{load_checkpoint, param_hash, read_metrics, RunRecorder};
use ppgn::losses::Critic;
use ppgn::netspec::{build_spec, Network, Role};
use ppgn::trainer::{train, MemoryObserver, ModelVariant, Schedule, TrainConfig};

fn quick(variant: ModelVariant) -> TrainConfig {
    TrainConfig {
        variant,
        batch_size: 2,
        iterations: Some(4),
        schedule: Schedule {
            warm_iterations: 1,
            warm_steps: 2,
            period: 3,
            default_steps: 1,
        },
        ..TrainConfig::default()
    }
}

fn encoder() -> Network {
    Network::init(build_spec(Role::Encoder), 11)
}

#[test]
fn every_variant_trains_and_logs_one_row_per_active_critic() {
    let data = synthetic_data(24, 1);
    let enc = encoder();
    let enc_hash = param_hash(&enc);
    for variant in ModelVariant::ALL {
        let cfg = quick(variant);
        let mut obs = MemoryObserver::default();
        let out = train(&cfg, &enc, &data, &mut obs).unwrap();
        assert_eq!(out.iterations, 4);
        assert_eq!(out.state.iteration, 4);
        assert_eq!(param_hash(&enc), enc_hash, "{variant} touched the encoder");

        let registered: Vec<Critic> = out.state.critics.keys().copied().collect();
        assert_eq!(registered, variant.critics(), "{variant}");

        let steps: Vec<u64> = (0..4).map(|it| cfg.schedule.critic_steps(it) as u64).collect();
        let mut expected_updates = std::collections::BTreeMap::new();
        for it in 0..4 {
            let rows: Vec<_> = obs.records.iter().filter(|r| r.iteration == it).collect();
            assert!(rows.iter().all(|r| r.variant == variant.as_str()));
            if variant.critics().is_empty() {
                assert_eq!(rows.len(), 1, "{variant} iteration {it}");
                assert!(rows[0].critic.is_none() && rows[0].wasserstein_estimate.is_none());
                continue;
            }
            let expected = match (variant.is_random(), cfg.schedule.is_warm(it)) {
                (true, false) => 1,
                _ => variant.critics().len(),
            };
            assert_eq!(rows.len(), expected, "{variant} iteration {it}");
            for r in rows {
                assert!(r.wasserstein_estimate.unwrap().is_finite());
                let c: Critic = r.critic.as_deref().unwrap().parse().unwrap();
                *expected_updates.entry(c).or_insert(0) += steps[it];
            }
        }
        for (c, cs) in &out.state.critics {
            assert_eq!(cs.updates, expected_updates.get(c).copied().unwrap_or(0), "{variant} {c}");
        }
        assert!(obs.records.iter().all(|r| r.loss_total.is_finite()));
    }
}

#[test]
fn fc1_no_gan_never_updates_a_critic() {
    let data = synthetic_data(12, 2);
    let mut obs = MemoryObserver::default();
    let out = train(&quick(ModelVariant::Fc1NoGan), &encoder(), &data, &mut obs).unwrap();
    assert!(out.state.critics.is_empty());
    assert!(obs.records.iter().all(|r| r.critic.is_none() && r.loss_gan == 0.0));
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = synthetic_data(16, 3);
    let enc = encoder();
    let cfg = quick(ModelVariant::Random);
    let run = || {
        let mut obs = MemoryObserver::default();
        let out = train(&cfg, &enc, &data, &mut obs).unwrap();
        (out.state, obs.records)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra, rb);
    assert_eq!(a.generator, b.generator);
    for (c, cs) in &a.critics {
        assert_eq!(cs.net, b.critics[c].net);
    }

    let mut other = cfg.clone();
    other.seeds.penalty += 1;
    let mut obs = MemoryObserver::default();
    let c = train(&other, &enc, &data, &mut obs).unwrap();
    assert_ne!(c.state.generator, a.generator);
}

#[test]
fn recorder_writes_metrics_and_loadable_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_data(12, 4);
    let mut cfg = quick(ModelVariant::Combined);
    cfg.checkpoint_every = 2;
    cfg.debug_grad_norms = true;
    let metrics = dir.path().join("metrics.csv");
    let mut rec = RunRecorder::create(dir.path(), &metrics, vec![("variant".into(), "combined".into())]).unwrap();
    let out = train(&cfg, &encoder(), &data, &mut rec).unwrap();
    drop(rec);

    let rows = read_metrics(&metrics).unwrap();
    assert_eq!(rows.len(), 8);
    for tag in ["iter_000002", "iter_000004", "final"] {
        let d = dir.path().join("checkpoints").join(tag);
        for name in ["generator", "critic_x", "critic_fc1"] {
            assert!(d.join(format!("{name}.manifest")).exists(), "{tag}/{name}");
        }
    }
    let (ckpt, g) = load_checkpoint(&dir.path().join("checkpoints/final/generator")).unwrap();
    assert_eq!(g, out.state.generator);
    assert_eq!(ckpt.iteration, 4);
    assert!(ckpt.meta.contains(&("variant".into(), "combined".into())));
    let (_, cx) = load_checkpoint(&dir.path().join("checkpoints/final/critic_x")).unwrap();
    assert_eq!(cx, out.state.critics[&Critic::X].net);
    let norms = fs::read_to_string(dir.path().join("grad_norms.csv")).unwrap();
    assert!(norms.starts_with("iteration,network,layer,grad_norm\n"));
    assert_eq!(norms.lines().count(), 1 + 4 * 5);
}

#[test]
fn non_finite_loss_aborts_with_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_data(8, 5);
    let mut cfg = quick(ModelVariant::Fc1NoGan);
    // A huge step size drives the generator output to overflow.
    cfg.adam.lr = 1e30;
    let metrics = dir.path().join("metrics.csv");
    let mut rec = RunRecorder::create(dir.path(), &metrics, vec![]).unwrap();
    let err = train(&cfg, &encoder(), &data, &mut rec).unwrap_err();
    assert!(matches!(err, ppgn::Error::Numeric(_)), "{err}");
    assert!(err.to_string().contains("iteration"));
    assert!(dir.path().join("checkpoints/abort/generator.manifest").exists());
}
