//! Synthesis-free closed loop: perceive on the ego-frame scene, convert
//! detections to range readings, plan with a reactive rule, advance the
//! world with a kinematic bicycle.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    annotation_detections, gaussian_baseline, multimodal_baseline, target_proxy_perceive, visible_annotations,
    GaussianNoiseSpec, GmmModel, TargetProxySpec,
};
use crate::detections::Detection;
use crate::error::{Error, Result};
use crate::geometry::ray_box_distance;
use crate::imitator::Imitator;
use crate::metrics::iou_rotated;
use crate::raster::{build_stack, GridSpec, PosEncSpec};
use crate::scene::{to_ego_frame, Agent, AgentKind, OrientedBox, Pose2, RoadMap, SceneState};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub delta_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            wheelbase: 2.7,
            a_min: -6.0,
            a_max: 3.0,
            delta_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangeConfig {
    pub bins: usize,
    /// Total field of view in radians, centred on the heading.
    pub fov: f64,
    pub r_max: f64,
}

impl Default for RangeConfig {
    fn default() -> Self {
        RangeConfig {
            bins: 61,
            fov: std::f64::consts::PI,
            r_max: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub target_speed: f64,
    pub d_safe: f64,
    pub kp: f64,
    /// Lateral half-width of the swept path used for in-path readings.
    pub corridor_half_width: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            target_speed: 13.0,
            d_safe: 20.0,
            kp: 1.0,
            corridor_half_width: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub lead_distance: [f64; 2],
    pub lead_speed: [f64; 2],
    pub side_traffic: [usize; 2],
    pub side_speed: [f64; 2],
    pub lane_width: f64,
    pub lateral_jitter: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            lead_distance: [25.0, 40.0],
            lead_speed: [2.0, 6.0],
            side_traffic: [0, 3],
            side_speed: [10.0, 15.0],
            lane_width: 3.5,
            lateral_jitter: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: usize,
    /// Episodes end once the ego has covered this distance.
    pub goal_distance: f64,
    pub vehicle: VehicleParams,
    pub planner: PlannerConfig,
    pub ranges: RangeConfig,
    pub scenario: ScenarioConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            horizon: 400,
            goal_distance: 70.0,
            vehicle: VehicleParams::default(),
            planner: PlannerConfig::default(),
            ranges: RangeConfig::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("sim.dt", "must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::validation("sim.horizon", "must be at least 1"));
        }
        let v = &self.vehicle;
        if !(v.wheelbase > 0.0 && v.a_min < 0.0 && v.a_max > 0.0 && v.delta_max >= 0.0) {
            return Err(Error::validation("sim.vehicle", "inconsistent limits"));
        }
        if self.ranges.bins == 0 || !(self.ranges.r_max > 0.0) || !(self.ranges.fov > 0.0) {
            return Err(Error::validation("sim.ranges", "need bins > 0, r_max > 0, fov > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoAction {
    pub accel: f64,
    pub steer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeReading {
    pub azimuths: Vec<f64>,
    pub ranges: Vec<f64>,
}

impl RangeConfig {
    pub fn azimuths(&self) -> Vec<f64> {
        let step = self.fov / self.bins as f64;
        (0..self.bins).map(|i| -0.5 * self.fov + (i as f64 + 0.5) * step).collect()
    }
}

/// Distance along each bin's centre ray to the nearest detection boundary,
/// capped at `r_max`. Rays start at the ego origin.
pub fn to_range_readings(dets: &[Detection], cfg: &RangeConfig) -> RangeReading {
    let azimuths = cfg.azimuths();
    let ranges = azimuths
        .iter()
        .map(|&az| {
            let dir = [az.cos(), az.sin()];
            dets.iter()
                .filter_map(|d| ray_box_distance([0.0, 0.0], dir, &d.bbox))
                .fold(cfg.r_max, f64::min)
                .max(1e-6)
        })
        .collect();
    RangeReading { azimuths, ranges }
}

/// Longitudinal clearance to the nearest reading inside the swept path.
pub fn forward_clearance(r: &RangeReading, half_width: f64) -> Option<f64> {
    r.azimuths
        .iter()
        .zip(&r.ranges)
        .filter(|(az, &d)| az.cos() > 0.0 && (d * az.sin()).abs() <= half_width)
        .map(|(az, &d)| d * az.cos())
        .min_by(f64::total_cmp)
}

/// Full brake when something in the path is closer than `d_safe`,
/// otherwise proportional speed tracking. Steering stays zero.
pub fn plan(r: &RangeReading, speed: f64, cfg: &PlannerConfig, vehicle: &VehicleParams) -> EgoAction {
    let blocked = forward_clearance(r, cfg.corridor_half_width).is_some_and(|c| c < cfg.d_safe);
    let accel = if blocked {
        vehicle.a_min
    } else {
        (cfg.kp * (cfg.target_speed - speed)).clamp(vehicle.a_min, vehicle.a_max)
    };
    EgoAction { accel, steer: 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub scene: SceneState,
    pub speed: f64,
}

/// Kinematic bicycle for the ego (reference point at the pose), constant
/// speed along heading for agents. Returns the new state and whether the
/// ego box now overlaps an agent.
pub fn step_world(state: &SimState, action: &EgoAction, dt: f64, vehicle: &VehicleParams) -> (SimState, bool) {
    let a = action.accel.clamp(vehicle.a_min, vehicle.a_max);
    let delta = action.steer.clamp(-vehicle.delta_max, vehicle.delta_max);
    let Pose2 { x, y, yaw } = state.scene.ego;
    let v = state.speed;
    let ego = Pose2::new(
        x + v * yaw.cos() * dt,
        y + v * yaw.sin() * dt,
        yaw + v / vehicle.wheelbase * delta.tan() * dt,
    );
    let speed = (v + a * dt).max(0.0);
    let ego_box = OrientedBox::new(ego.x, ego.y, state.scene.ego_box.w, state.scene.ego_box.l, ego.yaw);
    let agents: Vec<Agent> = state
        .scene
        .agents
        .iter()
        .map(|ag| {
            let b = ag.bbox;
            let (s, c) = b.yaw.sin_cos();
            Agent {
                bbox: OrientedBox::new(b.cx + ag.speed * c * dt, b.cy + ag.speed * s * dt, b.w, b.l, b.yaw),
                ..ag.clone()
            }
        })
        .collect();
    let collision = agents.iter().any(|ag| iou_rotated(&ego_box, &ag.bbox) > 0.0);
    let scene = SceneState {
        t: state.scene.t + dt,
        ego,
        ego_box,
        agents,
        road: state.scene.road.clone(),
    };
    (SimState { scene, speed }, collision)
}

/// A perception source for the loop. `key` identifies the call so that
/// stochastic sources draw fresh, reproducible noise every step.
pub trait Perception {
    fn name(&self) -> &str;
    fn perceive(&mut self, ego_scene: &SceneState, grid: &GridSpec, key: u64) -> Result<Vec<Detection>>;
}

pub struct AnnotationPerception;

impl Perception for AnnotationPerception {
    fn name(&self) -> &str {
        "annotation"
    }
    fn perceive(&mut self, s: &SceneState, grid: &GridSpec, _key: u64) -> Result<Vec<Detection>> {
        Ok(annotation_detections(&visible_annotations(s, grid)))
    }
}

pub struct ProxyPerception(pub TargetProxySpec);

impl Perception for ProxyPerception {
    fn name(&self) -> &str {
        "proxy"
    }
    fn perceive(&mut self, s: &SceneState, grid: &GridSpec, key: u64) -> Result<Vec<Detection>> {
        Ok(target_proxy_perceive(s, grid, &self.0, key))
    }
}

pub struct GaussianPerception(pub GaussianNoiseSpec);

impl Perception for GaussianPerception {
    fn name(&self) -> &str {
        "gaussian"
    }
    fn perceive(&mut self, s: &SceneState, grid: &GridSpec, key: u64) -> Result<Vec<Detection>> {
        Ok(gaussian_baseline(&visible_annotations(s, grid), &self.0, key))
    }
}

pub struct MultimodalPerception {
    pub model: GmmModel,
    pub fn_ratio: f64,
    pub seed: u64,
}

impl Perception for MultimodalPerception {
    fn name(&self) -> &str {
        "multimodal"
    }
    fn perceive(&mut self, s: &SceneState, grid: &GridSpec, key: u64) -> Result<Vec<Detection>> {
        Ok(multimodal_baseline(&visible_annotations(s, grid), &self.model, self.fn_ratio, self.seed, key))
    }
}

pub struct ImitatorPerception {
    pub model: Imitator,
    pub pos_enc: PosEncSpec,
    /// Decode threshold; the model's runtime threshold when `None`.
    pub score_threshold: Option<f64>,
}

impl Perception for ImitatorPerception {
    fn name(&self) -> &str {
        "imitator"
    }
    fn perceive(&mut self, s: &SceneState, grid: &GridSpec, _key: u64) -> Result<Vec<Detection>> {
        let stack = build_stack(s, grid, &self.pos_enc)?;
        let maps = self.model.forward(&stack)?;
        let thr = self.score_threshold.unwrap_or(self.model.config.score_threshold);
        self.model.postprocess_at(&maps, grid, thr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub ego: Pose2,
    pub speed: f64,
    pub n_agents: usize,
    pub dets: Vec<Detection>,
    pub ranges: Vec<f64>,
    pub clearance: Option<f64>,
    pub action: EgoAction,
    pub displacement: f64,
    pub collision: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Collision,
    Goal,
    Horizon,
    PerceptionError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode_id: u64,
    pub perception: String,
    pub steps: Vec<StepRecord>,
    pub distance: f64,
    pub terminal: Terminal,
}

/// Keys for a perception call: unique per (episode, step).
pub fn perception_key(episode_id: u64, step: usize) -> u64 {
    (episode_id << 20) | step as u64
}

/// Closed loop advanced one perception result at a time, for callers that
/// supply detections themselves.
#[derive(Debug, Clone)]
pub struct Episode {
    cfg: SimConfig,
    state: SimState,
    distance: f64,
    steps: Vec<StepRecord>,
    terminal: Option<Terminal>,
}

impl Episode {
    pub fn new(initial: SimState, cfg: SimConfig) -> Self {
        Episode {
            cfg,
            state: initial,
            distance: 0.0,
            steps: Vec::new(),
            terminal: None,
        }
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    /// World as the perception sees it.
    pub fn ego_scene(&self) -> SceneState {
        to_ego_frame(&self.state.scene)
    }

    pub fn step_index(&self) -> usize {
        self.steps.len()
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn terminal(&self) -> Option<&Terminal> {
        self.terminal.as_ref()
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    /// Plans on ego-frame detections and advances the world by one tick.
    /// Does nothing once the episode has ended.
    pub fn advance(&mut self, dets: Vec<Detection>) -> Option<&Terminal> {
        if self.terminal.is_some() {
            return self.terminal.as_ref();
        }
        let cfg = &self.cfg;
        let ranges = to_range_readings(&dets, &cfg.ranges);
        let action = plan(&ranges, self.state.speed, &cfg.planner, &cfg.vehicle);
        let clearance = forward_clearance(&ranges, cfg.planner.corridor_half_width);
        let (next, collision) = step_world(&self.state, &action, cfg.dt, &cfg.vehicle);
        let prev = &self.state.scene.ego;
        let displacement = (next.scene.ego.x - prev.x).hypot(next.scene.ego.y - prev.y);
        self.distance += displacement;
        self.steps.push(StepRecord {
            step: self.steps.len(),
            t: self.state.scene.t,
            ego: *prev,
            speed: self.state.speed,
            n_agents: self.state.scene.agents.len(),
            dets,
            ranges: ranges.ranges,
            clearance,
            action,
            displacement,
            collision,
        });
        self.state = next;
        if collision {
            self.terminal = Some(Terminal::Collision);
        } else if self.distance >= cfg.goal_distance {
            // distance is reported up to the goal line, not past it
            self.distance = cfg.goal_distance;
            self.terminal = Some(Terminal::Goal);
        } else if self.steps.len() >= cfg.horizon {
            self.terminal = Some(Terminal::Horizon);
        }
        self.terminal.as_ref()
    }

    /// Ends the episode on a perception failure.
    pub fn abort(&mut self, message: String) {
        if self.terminal.is_none() {
            self.terminal = Some(Terminal::PerceptionError(message));
        }
    }

    pub fn into_log(self, episode_id: u64, perception: &str) -> EpisodeLog {
        EpisodeLog {
            episode_id,
            perception: perception.to_string(),
            steps: self.steps,
            distance: self.distance,
            terminal: self.terminal.unwrap_or(Terminal::Horizon),
        }
    }
}

pub fn run_episode(
    initial: &SimState,
    perception: &mut dyn Perception,
    grid: &GridSpec,
    cfg: &SimConfig,
    episode_id: u64,
) -> EpisodeLog {
    let mut ep = Episode::new(initial.clone(), *cfg);
    if cfg.horizon == 0 {
        return ep.into_log(episode_id, perception.name());
    }
    while ep.terminal().is_none() {
        let key = perception_key(episode_id, ep.step_index());
        match perception.perceive(&ep.ego_scene(), grid, key) {
            Ok(d) => {
                ep.advance(d);
            }
            Err(e) => ep.abort(e.to_string()),
        }
    }
    ep.into_log(episode_id, perception.name())
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

/// Straight three-lane corridor: a slow lead vehicle in the ego lane and a
/// few faster vehicles in the neighbouring lanes. The ego starts at the
/// origin at target speed.
pub fn corridor_scenario(seed_value: u64, episode_id: u64, cfg: &SimConfig) -> SimState {
    let sc = &cfg.scenario;
    let mut rng = seed::stream(seed_value, "corridor", episode_id);
    let lw = sc.lane_width;
    let road = RoadMap {
        freespace: vec![vec![[-10.0, -1.5 * lw], [2000.0, -1.5 * lw], [2000.0, 1.5 * lw], [-10.0, 1.5 * lw]]],
        waypoint_lines: [-lw, 0.0, lw].iter().map(|&y| vec![[-10.0, y], [2000.0, y]]).collect(),
    };
    let mut agents = vec![Agent {
        id: 0,
        kind: AgentKind::Vehicle,
        speed: uniform(&mut rng, sc.lead_speed),
        bbox: OrientedBox::new(
            uniform(&mut rng, sc.lead_distance),
            uniform(&mut rng, [-sc.lateral_jitter, sc.lateral_jitter]),
            uniform(&mut rng, [1.8, 2.0]),
            uniform(&mut rng, [4.2, 4.8]),
            0.0,
        ),
    }];
    let n_side = rng.random_range(sc.side_traffic[0]..=sc.side_traffic[1].max(sc.side_traffic[0]));
    let mut tries = 0;
    while agents.len() < 1 + n_side && tries < 100 {
        tries += 1;
        let lane = if rng.random_bool(0.5) { lw } else { -lw };
        let b = OrientedBox::new(
            uniform(&mut rng, [8.0, 45.0]),
            lane + uniform(&mut rng, [-sc.lateral_jitter, sc.lateral_jitter]),
            uniform(&mut rng, [1.8, 2.0]),
            uniform(&mut rng, [4.2, 4.8]),
            0.0,
        );
        let speed = uniform(&mut rng, sc.side_speed);
        if agents.iter().all(|a| (a.bbox.cx - b.cx).hypot(a.bbox.cy - b.cy) >= 6.5) {
            agents.push(Agent {
                id: agents.len() as u64,
                kind: AgentKind::Vehicle,
                speed,
                bbox: b,
            });
        }
    }
    SimState {
        scene: SceneState {
            t: 0.0,
            ego: Pose2::origin(),
            ego_box: OrientedBox::new(0.0, 0.0, 1.9, 4.5, 0.0),
            agents,
            road,
        },
        speed: cfg.planner.target_speed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub perception: String,
    pub episodes: usize,
    pub mean_distance: f64,
    pub median_distance: f64,
    pub collision_rate: f64,
    pub perception_errors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub fn summarize(logs: &[EpisodeLog]) -> BatchSummary {
    let mut d: Vec<f64> = logs.iter().map(|l| l.distance).collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = match n {
        0 => 0.0,
        _ if n % 2 == 1 => d[n / 2],
        _ => 0.5 * (d[n / 2 - 1] + d[n / 2]),
    };
    BatchSummary {
        perception: logs.first().map(|l| l.perception.clone()).unwrap_or_default(),
        episodes: n,
        mean_distance: if n == 0 { 0.0 } else { d.iter().sum::<f64>() / n as f64 },
        median_distance: median,
        collision_rate: if n == 0 {
            0.0
        } else {
            logs.iter().filter(|l| l.terminal == Terminal::Collision).count() as f64 / n as f64
        },
        perception_errors: logs.iter().filter(|l| matches!(l.terminal, Terminal::PerceptionError(_))).count(),
        config_hash: None,
    }
}

/// Runs `episodes` seeded corridor episodes with one perception source.
pub fn run_batch(
    perception: &mut dyn Perception,
    grid: &GridSpec,
    cfg: &SimConfig,
    seed_value: u64,
    episodes: usize,
) -> Vec<EpisodeLog> {
    (0..episodes as u64)
        .map(|e| run_episode(&corridor_scenario(seed_value, e, cfg), perception, grid, cfg, e))
        .collect()
}

/// One JSON line per step, tagged with the episode id.
pub fn write_episode_logs(path: &Path, logs: &[EpisodeLog]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for log in logs {
        for s in &log.steps {
            let line = serde_json::json!({ "episode_id": log.episode_id, "perception": log.perception, "record": s });
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        let end = serde_json::json!({ "episode_id": log.episode_id, "perception": log.perception, "distance": log.distance, "terminal": log.terminal });
        writeln!(w, "{end}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
