//! Traffic scene model, the line-delimited scene file format, the rigid
//! ego-frame transform and a seeded synthetic scene generator.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, normalize_angle, Point};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose2 {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn origin() -> Self {
        Pose2 {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        check_finite(self.x, &format!("{field}.x"))?;
        check_finite(self.y, &format!("{field}.y"))?;
        check_yaw(self.yaw, &format!("{field}.yaw"))
    }
}

/// Bird's-eye-view box. `l` runs along the heading `yaw`, `w` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, w: f64, l: f64, yaw: f64) -> Self {
        OrientedBox {
            cx,
            cy,
            w,
            l,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn center(&self) -> Point {
        [self.cx, self.cy]
    }

    pub fn area(&self) -> f64 {
        self.w * self.l
    }

    /// Corners in canonical order: front-left, front-right, rear-right,
    /// rear-left (clockwise).
    pub fn corners(&self) -> [Point; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.l;
        let hw = 0.5 * self.w;
        let at = |a: f64, b: f64| -> Point {
            [
                self.cx + a * hl * c - b * hw * s,
                self.cy + a * hl * s + b * hw * c,
            ]
        };
        [at(1.0, 1.0), at(1.0, -1.0), at(-1.0, -1.0), at(-1.0, 1.0)]
    }

    /// Corners in counter-clockwise order, as required by polygon clipping.
    pub fn polygon_ccw(&self) -> [Point; 4] {
        let [fl, fr, rr, rl] = self.corners();
        [fl, rl, rr, fr]
    }

    /// Inclusive containment test in the box frame.
    pub fn contains(&self, p: Point) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let rx = p[0] - self.cx;
        let ry = p[1] - self.cy;
        let u = c * rx + s * ry;
        let v = -s * rx + c * ry;
        u.abs() <= 0.5 * self.l && v.abs() <= 0.5 * self.w
    }

    /// Applies the rigid motion `p -> R(rot) p + (tx, ty)`.
    pub fn transformed(&self, rot: f64, tx: f64, ty: f64) -> Self {
        let [x, y] = rotate([self.cx, self.cy], rot);
        OrientedBox::new(x + tx, y + ty, self.w, self.l, self.yaw + rot)
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        check_finite(self.cx, &format!("{field}.cx"))?;
        check_finite(self.cy, &format!("{field}.cy"))?;
        if !(self.w.is_finite() && self.w > 0.0) {
            return Err(Error::validation(
                format!("{field}.w"),
                format!("width must be positive, got {}", self.w),
            ));
        }
        if !(self.l.is_finite() && self.l > 0.0) {
            return Err(Error::validation(
                format!("{field}.l"),
                format!("length must be positive, got {}", self.l),
            ));
        }
        check_yaw(self.yaw, &format!("{field}.yaw"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u64,
    pub kind: AgentKind,
    pub speed: f64,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoadMap {
    pub freespace: Vec<Vec<Point>>,
    pub waypoint_lines: Vec<Vec<Point>>,
}

impl RoadMap {
    pub fn is_empty(&self) -> bool {
        self.freespace.is_empty() && self.waypoint_lines.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub t: f64,
    pub ego: Pose2,
    pub ego_box: OrientedBox,
    pub agents: Vec<Agent>,
    pub road: RoadMap,
}

impl SceneState {
    pub fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(Error::validation("t", format!("must be >= 0, got {}", self.t)));
        }
        self.ego.validate("ego")?;
        self.ego_box.validate("ego_box")?;
        if (self.ego_box.cx - self.ego.x).abs() > 1e-9 || (self.ego_box.cy - self.ego.y).abs() > 1e-9
        {
            return Err(Error::validation(
                "ego_box",
                "center must coincide with the ego position",
            ));
        }
        let mut ids = HashSet::new();
        for (i, a) in self.agents.iter().enumerate() {
            if !ids.insert(a.id) {
                return Err(Error::validation(
                    format!("agents[{i}].id"),
                    format!("duplicate id {}", a.id),
                ));
            }
            if !(a.speed.is_finite() && a.speed >= 0.0) {
                return Err(Error::validation(
                    format!("agents[{i}].speed"),
                    format!("must be >= 0, got {}", a.speed),
                ));
            }
            a.bbox.validate(&format!("agents[{i}].box"))?;
        }
        for (i, poly) in self.road.freespace.iter().enumerate() {
            let field = format!("road.freespace[{i}]");
            if poly.len() < 3 {
                return Err(Error::validation(field, "polygon needs at least 3 vertices"));
            }
            if poly.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::validation(field, "non-finite vertex"));
            }
            if geometry::polygon_area(poly) <= 0.0 {
                return Err(Error::validation(field, "polygon has zero area"));
            }
        }
        for (i, line) in self.road.waypoint_lines.iter().enumerate() {
            let field = format!("road.waypoint_lines[{i}]");
            if line.len() < 2 {
                return Err(Error::validation(field, "polyline needs at least 2 points"));
            }
            if line.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::validation(field, "non-finite point"));
            }
        }
        Ok(())
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &Agent> {
        self.agents.iter().filter(|a| a.kind == AgentKind::Vehicle)
    }
}

fn check_finite(v: f64, field: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(field, format!("non-finite value {v}")))
    }
}

fn check_yaw(v: f64, field: &str) -> Result<()> {
    use std::f64::consts::PI;
    if v.is_finite() && v > -PI && v <= PI {
        Ok(())
    } else {
        Err(Error::validation(field, format!("yaw {v} outside (-pi, pi]")))
    }
}

fn rotate(p: Point, a: f64) -> Point {
    let (s, c) = a.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

pub fn load_scenes(path: impl AsRef<Path>) -> Result<Vec<SceneState>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut scenes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: SceneState = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        scene.validate().map_err(|e| match e {
            Error::Validation { field, message } => Error::Validation {
                field,
                message: format!("{message} (line {})", i + 1),
            },
            other => other,
        })?;
        scenes.push(scene);
    }
    Ok(scenes)
}

pub fn save_scenes(scenes: &[SceneState], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in scenes {
        let line = serde_json::to_string(s).map_err(|e| Error::Other(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Re-expresses the scene in the ego frame: ego at the origin heading +x.
pub fn to_ego_frame(scene: &SceneState) -> SceneState {
    let Pose2 { x, y, yaw } = scene.ego;
    let (s, c) = (-yaw).sin_cos();
    let map = |p: Point| -> Point {
        let rx = p[0] - x;
        let ry = p[1] - y;
        [c * rx - s * ry, s * rx + c * ry]
    };
    let map_box = |b: &OrientedBox| -> OrientedBox {
        let [cx, cy] = map([b.cx, b.cy]);
        OrientedBox::new(cx, cy, b.w, b.l, b.yaw - yaw)
    };
    let mut ego_box = map_box(&scene.ego_box);
    ego_box.cx = 0.0;
    ego_box.cy = 0.0;
    SceneState {
        t: scene.t,
        ego: Pose2::origin(),
        ego_box,
        agents: scene
            .agents
            .iter()
            .map(|a| Agent {
                bbox: map_box(&a.bbox),
                ..a.clone()
            })
            .collect(),
        road: RoadMap {
            freespace: scene
                .road
                .freespace
                .iter()
                .map(|poly| poly.iter().map(|&p| map(p)).collect())
                .collect(),
            waypoint_lines: scene
                .road
                .waypoint_lines
                .iter()
                .map(|line| line.iter().map(|&p| map(p)).collect())
                .collect(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl SpawnRegion {
    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

/// Settings for the synthetic corpus. Agents are placed in a straight
/// multi-lane road frame and the whole scene is then moved to a random
/// world pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_scenes: usize,
    pub agents_min: usize,
    pub agents_max: usize,
    pub spawn_region: SpawnRegion,
    pub min_spacing: f64,
    pub lane_count: usize,
    pub lane_width: f64,
    pub ego_lane: usize,
    pub snap_to_lanes: bool,
    pub lateral_jitter: f64,
    pub heading_jitter: f64,
    pub vehicle_width: [f64; 2],
    pub vehicle_length: [f64; 2],
    pub speed: [f64; 2],
    pub pedestrian_fraction: f64,
    pub road_behind: f64,
    pub road_ahead: f64,
    pub ego_width: f64,
    pub ego_length: f64,
    pub world_extent: f64,
    pub max_retries: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_scenes: 100,
            agents_min: 3,
            agents_max: 8,
            spawn_region: SpawnRegion {
                x_min: 4.0,
                x_max: 46.0,
                y_min: -5.0,
                y_max: 5.0,
            },
            min_spacing: 6.5,
            lane_count: 3,
            lane_width: 3.5,
            ego_lane: 1,
            snap_to_lanes: true,
            lateral_jitter: 0.3,
            heading_jitter: 0.05,
            vehicle_width: [1.8, 2.0],
            vehicle_length: [4.2, 4.8],
            speed: [2.0, 8.0],
            pedestrian_fraction: 0.0,
            road_behind: 10.0,
            road_ahead: 80.0,
            ego_width: 1.9,
            ego_length: 4.5,
            world_extent: 500.0,
            max_retries: 200,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let r = &self.spawn_region;
        if !(r.x_min <= r.x_max && r.y_min <= r.y_max) {
            return Err(Error::Config("spawn_region bounds are inverted".into()));
        }
        if self.agents_min > self.agents_max {
            return Err(Error::Config("agents_min exceeds agents_max".into()));
        }
        if self.lane_count == 0 || self.ego_lane >= self.lane_count || self.lane_width <= 0.0 {
            return Err(Error::Config("lane layout is invalid".into()));
        }
        if self.min_spacing < 0.0 || !(0.0..=1.0).contains(&self.pedestrian_fraction) {
            return Err(Error::Config("spacing or pedestrian fraction out of range".into()));
        }
        Ok(())
    }

    /// Lane centre offsets in the road frame, rightmost lane first.
    pub fn lane_centers(&self) -> Vec<f64> {
        (0..self.lane_count)
            .map(|k| (k as f64 - self.ego_lane as f64) * self.lane_width)
            .collect()
    }

    /// Straight road in the ego-aligned road frame.
    pub fn road_map(&self) -> RoadMap {
        let right = (-(self.ego_lane as f64) - 0.5) * self.lane_width;
        let left = ((self.lane_count - 1 - self.ego_lane) as f64 + 0.5) * self.lane_width;
        let (x0, x1) = (-self.road_behind, self.road_ahead);
        RoadMap {
            freespace: vec![vec![[x0, right], [x1, right], [x1, left], [x0, left]]],
            waypoint_lines: self
                .lane_centers()
                .into_iter()
                .map(|y| vec![[x0, y], [x1, y]])
                .collect(),
        }
    }
}

pub fn generate_scenes(seed: u64, cfg: &GeneratorConfig) -> Result<Vec<SceneState>> {
    cfg.validate()?;
    let mut rng = seed::rng(seed);
    let road = cfg.road_map();
    let lanes: Vec<f64> = cfg
        .lane_centers()
        .into_iter()
        .filter(|&y| y >= cfg.spawn_region.y_min && y <= cfg.spawn_region.y_max)
        .collect();
    let ego_box = OrientedBox::new(0.0, 0.0, cfg.ego_width, cfg.ego_length, 0.0);
    let mut scenes = Vec::with_capacity(cfg.n_scenes);
    for scene_index in 0..cfg.n_scenes {
        let n_agents = rng.random_range(cfg.agents_min..=cfg.agents_max);
        // Sequential placement can jam; restart the whole layout a few times
        // before giving up.
        let mut agents = None;
        for _ in 0..SCENE_RESTARTS {
            agents = place_agents(&mut rng, cfg, &lanes, &ego_box, n_agents);
            if agents.is_some() {
                break;
            }
        }
        let Some(agents) = agents else {
            return Err(Error::Generation {
                scene_index,
                message: format!(
                    "could not place {n_agents} agents with spacing {} ({} attempts per agent, {SCENE_RESTARTS} restarts)",
                    cfg.min_spacing, cfg.max_retries
                ),
            });
        };
        let pose = Pose2::new(
            rng.random_range(-cfg.world_extent..=cfg.world_extent),
            rng.random_range(-cfg.world_extent..=cfg.world_extent),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        scenes.push(place_in_world(pose, &ego_box, agents, &road));
    }
    Ok(scenes)
}

const SCENE_RESTARTS: usize = 20;

fn place_agents<R: Rng>(
    rng: &mut R,
    cfg: &GeneratorConfig,
    lanes: &[f64],
    ego_box: &OrientedBox,
    n_agents: usize,
) -> Option<Vec<Agent>> {
    let mut agents: Vec<Agent> = Vec::with_capacity(n_agents);
    for k in 0..n_agents {
        let placed = (0..cfg.max_retries.max(1))
            .map(|_| sample_agent(rng, cfg, lanes, k as u64))
            .find(|c| placement_ok(&c.bbox, ego_box, &agents, cfg))?;
        agents.push(placed);
    }
    Some(agents)
}

fn sample_agent<R: Rng>(rng: &mut R, cfg: &GeneratorConfig, lanes: &[f64], id: u64) -> Agent {
    let r = &cfg.spawn_region;
    let x = rng.random_range(r.x_min..=r.x_max);
    let pedestrian = cfg.pedestrian_fraction > 0.0 && rng.random::<f64>() < cfg.pedestrian_fraction;
    if pedestrian {
        let y = rng.random_range(r.y_min..=r.y_max);
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        return Agent {
            id,
            kind: AgentKind::Pedestrian,
            speed: rng.random_range(0.0..=1.5),
            bbox: OrientedBox::new(x, y, 0.6, 0.6, yaw),
        };
    }
    let y = if cfg.snap_to_lanes && !lanes.is_empty() {
        let lane = lanes[rng.random_range(0..lanes.len())];
        let jitter = if cfg.lateral_jitter > 0.0 {
            rng.random_range(-cfg.lateral_jitter..=cfg.lateral_jitter)
        } else {
            0.0
        };
        (lane + jitter).clamp(r.y_min, r.y_max)
    } else {
        rng.random_range(r.y_min..=r.y_max)
    };
    let yaw = if cfg.heading_jitter > 0.0 {
        rng.random_range(-cfg.heading_jitter..=cfg.heading_jitter)
    } else {
        0.0
    };
    let w = uniform(rng, cfg.vehicle_width);
    let l = uniform(rng, cfg.vehicle_length);
    Agent {
        id,
        kind: AgentKind::Vehicle,
        speed: uniform(rng, cfg.speed),
        bbox: OrientedBox::new(x, y, w, l, yaw),
    }
}

fn uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    }
}

fn placement_ok(b: &OrientedBox, ego: &OrientedBox, placed: &[Agent], cfg: &GeneratorConfig) -> bool {
    let far_enough = |o: &OrientedBox| {
        let d = ((b.cx - o.cx).powi(2) + (b.cy - o.cy).powi(2)).sqrt();
        d >= cfg.min_spacing
            && geometry::convex_intersection_area(&b.polygon_ccw(), &o.polygon_ccw()) <= 0.0
    };
    cfg.spawn_region.contains(b.center())
        && far_enough(ego)
        && placed.iter().all(|a| far_enough(&a.bbox))
}

fn place_in_world(pose: Pose2, ego_box: &OrientedBox, agents: Vec<Agent>, road: &RoadMap) -> SceneState {
    let map = |p: Point| -> Point {
        let [x, y] = rotate(p, pose.yaw);
        [x + pose.x, y + pose.y]
    };
    let mut ego_box = ego_box.transformed(pose.yaw, pose.x, pose.y);
    ego_box.cx = pose.x;
    ego_box.cy = pose.y;
    SceneState {
        t: 0.0,
        ego: pose,
        ego_box,
        agents: agents
            .into_iter()
            .map(|a| Agent {
                bbox: a.bbox.transformed(pose.yaw, pose.x, pose.y),
                ..a
            })
            .collect(),
        road: RoadMap {
            freespace: road
                .freespace
                .iter()
                .map(|p| p.iter().map(|&v| map(v)).collect())
                .collect(),
            waypoint_lines: road
                .waypoint_lines
                .iter()
                .map(|p| p.iter().map(|&v| map(v)).collect())
                .collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn simple_scene() -> SceneState {
        SceneState {
            t: 0.0,
            ego: Pose2::new(10.0, 0.0, FRAC_PI_2),
            ego_box: OrientedBox::new(10.0, 0.0, 1.9, 4.5, FRAC_PI_2),
            agents: vec![Agent {
                id: 3,
                kind: AgentKind::Vehicle,
                speed: 2.0,
                bbox: OrientedBox::new(10.0, 5.0, 2.0, 4.0, FRAC_PI_2),
            }],
            road: RoadMap::default(),
        }
    }

    #[test]
    fn ego_frame_hand_case() {
        let e = to_ego_frame(&simple_scene());
        let b = e.agents[0].bbox;
        assert!((b.cx - 5.0).abs() < 1e-12);
        assert!(b.cy.abs() < 1e-12);
        assert!(b.yaw.abs() < 1e-12);
        assert_eq!(e.ego, Pose2::origin());
    }

    #[test]
    fn ego_frame_identity_and_idempotence() {
        let mut s = simple_scene();
        s.ego = Pose2::origin();
        s.ego_box = OrientedBox::new(0.0, 0.0, 1.9, 4.5, 0.0);
        assert_eq!(to_ego_frame(&s), s);
        let once = to_ego_frame(&simple_scene());
        assert_eq!(to_ego_frame(&once), once);
    }

    #[test]
    fn negative_width_is_rejected() {
        let mut s = simple_scene();
        s.agents[0].bbox.w = -1.0;
        match s.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "agents[0].box.w"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn corners_are_canonical() {
        let b = OrientedBox::new(0.0, 0.0, 2.0, 4.0, 0.0);
        assert_eq!(b.corners(), [[2.0, 1.0], [2.0, -1.0], [-2.0, -1.0], [-2.0, 1.0]]);
        assert!(geometry::signed_area(&b.polygon_ccw()) > 0.0);
    }

    #[test]
    fn generator_respects_empty_agent_range() {
        let cfg = GeneratorConfig {
            n_scenes: 5,
            agents_min: 0,
            agents_max: 0,
            ..Default::default()
        };
        let scenes = generate_scenes(1, &cfg).unwrap();
        assert_eq!(scenes.len(), 5);
        assert!(scenes.iter().all(|s| s.agents.is_empty()));
    }

    #[test]
    fn generator_reports_infeasible_packing() {
        // At most 9 points with pairwise distance >= 30 fit in a 60 m square.
        let cfg = GeneratorConfig {
            n_scenes: 1,
            agents_min: 10,
            agents_max: 10,
            min_spacing: 30.0,
            snap_to_lanes: false,
            spawn_region: SpawnRegion {
                x_min: 40.0,
                x_max: 100.0,
                y_min: -30.0,
                y_max: 30.0,
            },
            ..Default::default()
        };
        match generate_scenes(3, &cfg) {
            Err(Error::Generation { scene_index, .. }) => assert_eq!(scene_index, 0),
            other => panic!("expected generation error, got {other:?}"),
        }
    }
}
