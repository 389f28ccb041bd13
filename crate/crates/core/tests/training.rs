use imitsim::baselines::TargetProxySpec;
use imitsim::imitator::ImitatorConfig;
use imitsim::raster::{GridSpec, PosEncSpec};
use imitsim::scene::{generate_scenes, GeneratorConfig, SceneState};
use imitsim::simloop::{corridor_scenario, run_episode, Perception, SimConfig, Terminal};
use imitsim::trainer::{prepare_dataset, train, Record, TrainConfig};
use imitsim::{detections::Detection, Error, Result};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn tiny_overfit_drives_classification_loss_down() {
    let pos_enc = PosEncSpec { d_model: 4 };
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 4,
        seed: 5,
        pos_enc,
        imitator: ImitatorConfig {
            in_channels: 8,
            widths: vec![8, 16, 32],
            downsample: 4,
            cls_prior: 0.01,
            ..Default::default()
        },
        validate_every: 100,
        ..Default::default()
    };
    let scenes = generate_scenes(21, &GeneratorConfig { n_scenes: 4, ..Default::default() }).unwrap();
    let items: Vec<(u64, &SceneState)> = scenes.iter().enumerate().map(|(i, s)| (i as u64, s)).collect();
    let recs = prepare_dataset(&items, &TargetProxySpec::default(), &cfg.grid, &pos_enc, 4).unwrap();
    let refs: Vec<&Record> = recs.iter().collect();
    let out = train(&cfg, &refs, &refs, None).unwrap();
    assert_eq!(out.steps.len(), 500);
    let last = out.steps.last().unwrap().loss.cls;
    assert!(last < 0.05, "final L_cls {last}");
    let n = out.steps.len() / 10;
    let first = median(out.steps[..n].iter().map(|s| s.loss.total).collect());
    let tail = median(out.steps[out.steps.len() - n..].iter().map(|s| s.loss.total).collect());
    assert!(tail < first, "median loss {first} -> {tail}");
    for s in &out.steps {
        let r = &s.loss;
        let sum = r.weighted_sum(&cfg.weights);
        assert!((sum - r.total).abs() <= 1e-9 * r.total.abs().max(1.0));
    }
}

struct Failing;

impl Perception for Failing {
    fn name(&self) -> &str {
        "failing"
    }
    fn perceive(&mut self, _: &SceneState, _: &GridSpec, key: u64) -> Result<Vec<Detection>> {
        if key & 0xfffff >= 3 {
            Err(Error::Other("sensor offline".into()))
        } else {
            Ok(Vec::new())
        }
    }
}

#[test]
fn perception_failure_aborts_episode_with_cause() {
    let cfg = SimConfig::default();
    let s0 = corridor_scenario(1, 0, &cfg);
    let log = run_episode(&s0, &mut Failing, &GridSpec::desk(), &cfg, 0);
    assert_eq!(log.steps.len(), 3);
    assert!(matches!(log.terminal, Terminal::PerceptionError(ref m) if m.contains("sensor offline")));
}

#[test]
fn episode_logs_respect_horizon_and_collision_terminates() {
    let cfg = SimConfig { horizon: 40, ..Default::default() };
    let grid = GridSpec::desk();
    for ep in 0..10 {
        let s0 = corridor_scenario(2, ep, &cfg);
        let log = run_episode(&s0, &mut Failing, &grid, &cfg, ep);
        assert!(log.steps.len() <= cfg.horizon);
        if let Some(i) = log.steps.iter().position(|s| s.collision) {
            assert_eq!(i + 1, log.steps.len());
            assert_eq!(log.terminal, Terminal::Collision);
        }
    }
}
