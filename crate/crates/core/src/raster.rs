//! Bird's-eye-view scene description: road channels, vehicle occupancy,
//! ray-cast occlusion and a longitudinal sinusoidal position encoding.
//!
//! Pixel `(r, c)` has its centre at ego-frame
//! `x = (anchor_row - r) * m`, `y = (anchor_col - c) * m`, so the ego sits
//! at the bottom of the image and looks up.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_polygon, segment_box_entry, Point};
use crate::scene::{Agent, OrientedBox, RoadMap, SceneState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub height_px: usize,
    pub width_px: usize,
    pub meters_per_px: f64,
    /// (row, col) in pixel-index coordinates.
    pub ego_anchor: [f64; 2],
    /// Ego-frame (x, y) of the ray-casting origin.
    pub sensor_origin: [f64; 2],
    /// Cleared by `build_stack` when the scene carries no road map.
    #[serde(default = "default_true")]
    pub road_available: bool,
}

fn default_true() -> bool {
    true
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::desk()
    }
}

impl GridSpec {
    /// Ego at the bottom-centre, sensor at the ego.
    pub fn bottom_anchored(height_px: usize, width_px: usize, meters_per_px: f64) -> Self {
        GridSpec {
            height_px,
            width_px,
            meters_per_px,
            ego_anchor: [height_px as f64 - 1.0, (width_px as f64 - 1.0) / 2.0],
            sensor_origin: [0.0, 0.0],
            road_available: true,
        }
    }

    /// 96 x 112 at 0.5 m.
    pub fn desk() -> Self {
        Self::bottom_anchored(96, 112, 0.5)
    }

    /// 352 x 400 at 0.2 m.
    pub fn full_scale() -> Self {
        Self::bottom_anchored(352, 400, 0.2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height_px == 0 || self.width_px == 0 {
            return Err(Error::validation("grid", "extents must be positive"));
        }
        if !(self.meters_per_px.is_finite() && self.meters_per_px > 0.0) {
            return Err(Error::validation("grid.meters_per_px", "must be positive"));
        }
        let [r, c] = self.ego_anchor;
        if !(r >= -0.5
            && r <= self.height_px as f64 - 0.5
            && c >= -0.5
            && c <= self.width_px as f64 - 0.5)
        {
            return Err(Error::validation("grid.ego_anchor", "must lie inside the grid"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.height_px * self.width_px
    }

    /// Ego-frame centre of pixel (row, col).
    pub fn pixel_center(&self, row: usize, col: usize) -> Point {
        self.index_to_ego(row as f64, col as f64)
    }

    pub fn index_to_ego(&self, row: f64, col: f64) -> Point {
        [
            (self.ego_anchor[0] - row) * self.meters_per_px,
            (self.ego_anchor[1] - col) * self.meters_per_px,
        ]
    }

    /// Continuous pixel-index coordinates (row, col) of an ego-frame point.
    pub fn ego_to_index(&self, p: Point) -> [f64; 2] {
        [
            self.ego_anchor[0] - p[0] / self.meters_per_px,
            self.ego_anchor[1] - p[1] / self.meters_per_px,
        ]
    }

    /// Whether an ego-frame point falls on some pixel of the grid.
    pub fn contains(&self, p: Point) -> bool {
        let [r, c] = self.ego_to_index(p);
        r >= -0.5
            && r < self.height_px as f64 - 0.5
            && c >= -0.5
            && c < self.width_px as f64 - 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosEncSpec {
    pub d_model: usize,
}

impl Default for PosEncSpec {
    fn default() -> Self {
        PosEncSpec { d_model: 64 }
    }
}

impl PosEncSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return Err(Error::validation(
                "pos_enc.d_model",
                format!("must be even and positive, got {}", self.d_model),
            ));
        }
        Ok(())
    }
}

/// Row-major H x W channel holding only 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl BinaryGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryGrid {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        BinaryGrid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.data[row * self.width + col] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterStack {
    pub grid: GridSpec,
    pub freespace: BinaryGrid,
    pub waypoints: BinaryGrid,
    pub vehicles: BinaryGrid,
    pub occlusion: BinaryGrid,
    /// Channel-major d_model x H x W.
    pub pos_enc: Vec<f64>,
    pub d_model: usize,
}

impl RasterStack {
    pub fn channel_count(&self) -> usize {
        4 + self.d_model
    }

    /// Flattens to C x H x W in channel order freespace, waypoints,
    /// vehicles, occlusion, pos_enc[0..d_model].
    pub fn to_chw(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.channel_count() * self.grid.pixel_count());
        for ch in [&self.freespace, &self.waypoints, &self.vehicles, &self.occlusion] {
            out.extend(ch.data.iter().map(|&v| v as f64));
        }
        out.extend_from_slice(&self.pos_enc);
        out
    }

    /// Writes every channel as a binary PGM (P5) into `dir`, returning the
    /// written paths. Position-encoding channels map [-1, 1] to [0, 255].
    pub fn write_pgm(&self, dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        let (h, w) = (self.grid.height_px, self.grid.width_px);
        let mut written = Vec::new();
        let binary = [
            ("freespace", &self.freespace),
            ("waypoints", &self.waypoints),
            ("vehicles", &self.vehicles),
            ("occlusion", &self.occlusion),
        ];
        for (name, ch) in binary {
            let bytes: Vec<u8> = ch.data.iter().map(|&v| v * 255).collect();
            let path = dir.join(format!("{prefix}_{name}.pgm"));
            write_pgm_file(&path, w, h, &bytes)?;
            written.push(path);
        }
        let n = h * w;
        for k in 0..self.d_model {
            let bytes: Vec<u8> = self.pos_enc[k * n..(k + 1) * n]
                .iter()
                .map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
                .collect();
            let path = dir.join(format!("{prefix}_pe{k:02}.pgm"));
            write_pgm_file(&path, w, h, &bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn write_pgm_file(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{width} {height}\n255\n").map_err(|e| Error::io(path, e))?;
    out.write_all(bytes).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Fills freespace polygons by pixel-centre sampling and strokes waypoint
/// polylines with 1-px Bresenham lines.
pub fn rasterize_road(road: &RoadMap, grid: &GridSpec) -> (BinaryGrid, BinaryGrid) {
    let (h, w) = (grid.height_px, grid.width_px);
    let mut free = BinaryGrid::zeros(h, w);
    for poly in &road.freespace {
        let idx: Vec<Point> = poly.iter().map(|&p| grid.ego_to_index(p)).collect();
        let Some((r0, r1, c0, c1)) = index_bounds(&idx, h, w) else {
            continue;
        };
        for r in r0..=r1 {
            for c in c0..=c1 {
                if free.get(r, c) == 0 && point_in_polygon(grid.pixel_center(r, c), poly) {
                    free.set(r, c, 1);
                }
            }
        }
    }
    let mut lines = BinaryGrid::zeros(h, w);
    for line in &road.waypoint_lines {
        for seg in line.windows(2) {
            let a = grid.ego_to_index(seg[0]);
            let b = grid.ego_to_index(seg[1]);
            if let Some((a, b)) = clip_segment(a, b, h, w) {
                bresenham(
                    [a[0].round() as i64, a[1].round() as i64],
                    [b[0].round() as i64, b[1].round() as i64],
                    |r, c| {
                        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                            lines.set(r as usize, c as usize, 1);
                        }
                    },
                );
            }
        }
    }
    (free, lines)
}

fn index_bounds(idx: &[Point], h: usize, w: usize) -> Option<(usize, usize, usize, usize)> {
    let rmin = idx.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let rmax = idx.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let cmin = idx.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let cmax = idx.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let r0 = rmin.floor().max(0.0);
    let r1 = rmax.ceil().min(h as f64 - 1.0);
    let c0 = cmin.floor().max(0.0);
    let c1 = cmax.ceil().min(w as f64 - 1.0);
    if r0 > r1 || c0 > c1 {
        None
    } else {
        Some((r0 as usize, r1 as usize, c0 as usize, c1 as usize))
    }
}

/// Liang-Barsky clip of a segment in index space to the pixel-centre
/// rectangle, expanded by half a pixel.
fn clip_segment(a: Point, b: Point, h: usize, w: usize) -> Option<(Point, Point)> {
    let lo = [-0.5, -0.5];
    let hi = [h as f64 - 0.5, w as f64 - 0.5];
    let d = [b[0] - a[0], b[1] - a[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for axis in 0..2 {
        for (p, q) in [(-d[axis], a[axis] - lo[axis]), (d[axis], hi[axis] - a[axis])] {
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
            } else {
                let t = q / p;
                if p < 0.0 {
                    t0 = t0.max(t);
                } else {
                    t1 = t1.min(t);
                }
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    let at = |t: f64| [a[0] + t * d[0], a[1] + t * d[1]];
    Some((at(t0), at(t1)))
}

/// Integer Bresenham line, endpoints inclusive.
pub fn bresenham(a: [i64; 2], b: [i64; 2], mut plot: impl FnMut(i64, i64)) {
    let (mut x0, mut y0) = (a[0], a[1]);
    let (x1, y1) = (b[0], b[1]);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        plot(x0, y0);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Occupancy of agent boxes by pixel-centre sampling.
pub fn rasterize_vehicles(agents: &[Agent], grid: &GridSpec) -> BinaryGrid {
    let (h, w) = (grid.height_px, grid.width_px);
    let mut out = BinaryGrid::zeros(h, w);
    for a in agents {
        let idx: Vec<Point> = a.bbox.corners().iter().map(|&p| grid.ego_to_index(p)).collect();
        let Some((r0, r1, c0, c1)) = index_bounds(&idx, h, w) else {
            continue;
        };
        for r in r0..=r1 {
            for c in c0..=c1 {
                if a.bbox.contains(grid.pixel_center(r, c)) {
                    out.set(r, c, 1);
                }
            }
        }
    }
    out
}

/// Visibility from the sensor: a pixel is visible unless the ray towards it
/// enters some box interior more than one pixel before reaching it. The one
/// pixel skin keeps the near face of each box visible. Boxes containing the
/// sensor are ignored.
pub fn raycast_occlusion(agents: &[Agent], grid: &GridSpec) -> BinaryGrid {
    let (h, w) = (grid.height_px, grid.width_px);
    let mut out = BinaryGrid::filled(h, w, 1);
    let origin = grid.sensor_origin;
    let boxes: Vec<&OrientedBox> = agents
        .iter()
        .map(|a| &a.bbox)
        .filter(|b| !b.contains(origin))
        .collect();
    if boxes.is_empty() {
        return out;
    }
    let skin = grid.meters_per_px;
    for r in 0..h {
        for c in 0..w {
            let p = grid.pixel_center(r, c);
            let dist = ((p[0] - origin[0]).powi(2) + (p[1] - origin[1]).powi(2)).sqrt();
            if dist <= skin {
                continue;
            }
            let blocked = boxes.iter().any(|b| match segment_box_entry(origin, p, b) {
                Some(t) => t * dist < dist - skin,
                None => false,
            });
            if blocked {
                out.set(r, c, 0);
            }
        }
    }
    out
}

/// Sinusoidal encoding of the longitudinal offset from the ego anchor row,
/// constant along each row. Channel-major d_model x H x W.
pub fn positional_encoding(grid: &GridSpec, spec: &PosEncSpec) -> Vec<f64> {
    let (h, w) = (grid.height_px, grid.width_px);
    let d = spec.d_model;
    let mut out = vec![0.0; d * h * w];
    for r in 0..h {
        let pos = (grid.ego_anchor[0] - r as f64) * grid.meters_per_px;
        for i in 0..d / 2 {
            let freq = 10000f64.powf(2.0 * i as f64 / d as f64);
            let (s, c) = (pos / freq).sin_cos();
            let even = &mut out[(2 * i) * h * w + r * w..(2 * i) * h * w + (r + 1) * w];
            even.fill(s);
            let odd = &mut out[(2 * i + 1) * h * w + r * w..(2 * i + 1) * h * w + (r + 1) * w];
            odd.fill(c);
        }
    }
    out
}

/// Full scene description of an ego-frame scene.
pub fn build_stack(scene: &SceneState, grid: &GridSpec, spec: &PosEncSpec) -> Result<RasterStack> {
    grid.validate()?;
    spec.validate()?;
    let mut grid = *grid;
    grid.road_available = !scene.road.is_empty();
    let (freespace, waypoints) = rasterize_road(&scene.road, &grid);
    Ok(RasterStack {
        grid,
        freespace,
        waypoints,
        vehicles: rasterize_vehicles(&scene.agents, &grid),
        occlusion: raycast_occlusion(&scene.agents, &grid),
        pos_enc: positional_encoding(&grid, spec),
        d_model: spec.d_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::AgentKind;

    fn agent(b: OrientedBox) -> Agent {
        Agent {
            id: 0,
            kind: AgentKind::Vehicle,
            speed: 0.0,
            bbox: b,
        }
    }

    #[test]
    fn empty_road_is_blank() {
        let g = GridSpec::bottom_anchored(10, 12, 1.0);
        let (f, l) = rasterize_road(&RoadMap::default(), &g);
        assert_eq!(f.count_ones(), 0);
        assert_eq!(l.count_ones(), 0);
    }

    #[test]
    fn rectangle_covers_exact_pixel_block() {
        // pixel centres of rows 0..4, cols 0..4 (grid anchored at row 9, col 5.5)
        let g = GridSpec::bottom_anchored(10, 12, 1.0);
        let a = g.index_to_ego(-0.5, -0.5);
        let b = g.index_to_ego(4.5, 4.5);
        let poly = vec![[a[0], a[1]], [b[0], a[1]], [b[0], b[1]], [a[0], b[1]]];
        let road = RoadMap {
            freespace: vec![poly],
            waypoint_lines: vec![],
        };
        let (f, _) = rasterize_road(&road, &g);
        assert_eq!(f.count_ones(), 25);
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(f.get(r, c), 1);
            }
        }
    }

    #[test]
    fn lateral_polyline_gives_one_row() {
        let g = GridSpec::bottom_anchored(10, 12, 1.0);
        let x = g.pixel_center(3, 0)[0];
        let road = RoadMap {
            freespace: vec![],
            waypoint_lines: vec![vec![[x, 100.0], [x, -100.0]]],
        };
        let (_, l) = rasterize_road(&road, &g);
        assert_eq!(l.count_ones(), 12);
        assert!((0..12).all(|c| l.get(3, c) == 1));
    }

    #[test]
    fn box_footprint_and_rotation() {
        let g = GridSpec::bottom_anchored(100, 100, 0.2);
        // centre on a pixel corner so edges sit on pixel boundaries
        let c = g.index_to_ego(40.5, 50.5);
        let upright = rasterize_vehicles(&[agent(OrientedBox::new(c[0], c[1], 2.0, 4.0, 0.0))], &g);
        assert_eq!(upright.count_ones(), 200);
        let rows: Vec<usize> = (0..100).filter(|&r| upright.get(r, 50) == 1).collect();
        assert_eq!(rows.len(), 20);
        let turned = rasterize_vehicles(
            &[agent(OrientedBox::new(c[0], c[1], 2.0, 4.0, std::f64::consts::FRAC_PI_2))],
            &g,
        );
        assert_eq!(turned.count_ones(), 200);
        let rows: Vec<usize> = (0..100).filter(|&r| turned.get(r, 50) == 1).collect();
        assert_eq!(rows.len(), 10);
    }

    #[test]
    fn no_agents_everything_visible() {
        let g = GridSpec::bottom_anchored(20, 20, 0.5);
        assert_eq!(raycast_occlusion(&[], &g).count_ones(), 400);
    }

    #[test]
    fn box_ahead_casts_shadow() {
        let g = GridSpec::bottom_anchored(40, 41, 0.5);
        let occ = raycast_occlusion(&[agent(OrientedBox::new(5.0, 0.0, 2.0, 2.0, 0.0))], &g);
        let centre_col = 20;
        // far pixel straight ahead is hidden, lateral pixels stay visible
        assert_eq!(occ.get(0, centre_col), 0);
        assert_eq!(occ.get(39, 0), 1);
        assert_eq!(occ.get(39, 40), 1);
        // pixel at the sensor is visible
        assert_eq!(occ.get(39, centre_col), 1);
    }

    #[test]
    fn position_encoding_values() {
        let g = GridSpec::bottom_anchored(4, 3, 1.0);
        let pe = positional_encoding(&g, &PosEncSpec { d_model: 4 });
        let n = 12;
        // bottom row is pos = 0
        for c in 0..3 {
            assert_eq!(pe[3 * 3 + c], 0.0);
            assert_eq!(pe[n + 3 * 3 + c], 1.0);
        }
        // row 2 is pos = 1, channel 0 -> sin(1)
        assert!((pe[2 * 3] - 0.841_470_984_807_896_5).abs() < 1e-12);
        assert!(pe.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn missing_road_is_flagged() {
        let scene = SceneState {
            t: 0.0,
            ego: crate::scene::Pose2::origin(),
            ego_box: OrientedBox::new(0.0, 0.0, 1.9, 4.5, 0.0),
            agents: vec![],
            road: RoadMap::default(),
        };
        let st = build_stack(&scene, &GridSpec::bottom_anchored(8, 8, 1.0), &PosEncSpec { d_model: 2 })
            .unwrap();
        assert!(!st.grid.road_available);
        assert_eq!(st.vehicles.count_ones() + st.freespace.count_ones(), 0);
        assert_eq!(st.occlusion.count_ones(), 64);
    }
}
