//! Planar tunnel geometry with a flat ceiling, and lidar ray casting against it.

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::perception::{Beam, LidarScan};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub fn new(a: Point, b: Point) -> Self {
        Self { a, b }
    }

    /// Distance along the ray `o + t d` (|d| = 1) to the segment, if it is hit.
    pub fn ray_hit(&self, o: Point, d: Point) -> Option<f64> {
        let e = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let denom = cross(d, e);
        if denom.abs() < 1e-14 {
            return None;
        }
        let w = [self.a[0] - o[0], self.a[1] - o[1]];
        let t = cross(w, e) / denom;
        let s = cross(w, d) / denom;
        (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        let e = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let w = [p[0] - self.a[0], p[1] - self.a[1]];
        let ee = e[0] * e[0] + e[1] * e[1];
        let s = if ee > 0.0 {
            ((w[0] * e[0] + w[1] * e[1]) / ee).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (w[0] - s * e[0]).hypot(w[1] - s * e[1])
    }

    fn mirrored_y(&self) -> Self {
        Self::new([self.a[0], -self.a[1]], [self.b[0], -self.b[1]])
    }
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Even-odd point-in-polygon test.
fn inside_polygon(poly: &[Point], p: Point) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + n - 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn polygon_segments(poly: &[Point]) -> impl Iterator<Item = Segment> + '_ {
    (0..poly.len()).map(move |i| Segment::new(poly[i], poly[(i + 1) % poly.len()]))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Free space is the interior of `outline` minus every obstacle polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunnelWorld {
    pub outline: Vec<Point>,
    #[serde(default)]
    pub obstacles: Vec<Vec<Point>>,
    pub ceiling_height: f64,
    pub spawn: Pose,
    /// Polyline along the tunnel used to measure progress.
    #[serde(default)]
    pub centerline: Vec<Point>,
    #[serde(skip)]
    segments: Vec<Segment>,
}

impl TunnelWorld {
    pub fn new(
        outline: Vec<Point>,
        obstacles: Vec<Vec<Point>>,
        ceiling_height: f64,
        spawn: Pose,
        centerline: Vec<Point>,
    ) -> Result<Self, SimError> {
        let mut world = Self {
            outline,
            obstacles,
            ceiling_height,
            spawn,
            centerline,
            segments: Vec::new(),
        };
        world.finish()?;
        Ok(world)
    }

    /// Axis-aligned corridor `[0, length] x [-width/2, width/2]`, spawn at
    /// `spawn_x` on the axis.
    pub fn corridor(width: f64, length: f64, ceiling_height: f64, spawn_x: f64) -> Result<Self, SimError> {
        let h = width / 2.0;
        Self::new(
            vec![[0.0, -h], [length, -h], [length, h], [0.0, h]],
            Vec::new(),
            ceiling_height,
            Pose {
                x: spawn_x,
                y: 0.0,
                yaw: 0.0,
            },
            vec![[0.0, 0.0], [length, 0.0]],
        )
    }

    /// Rebuilds derived data and checks invariants; call after deserializing.
    pub fn finish(&mut self) -> Result<(), SimError> {
        if self.outline.len() < 3 || self.obstacles.iter().any(|o| o.len() < 3) {
            return Err(SimError::InvalidWorld("polygons need at least 3 vertices".into()));
        }
        if !(self.ceiling_height.is_finite() && self.ceiling_height > 0.0) {
            return Err(SimError::InvalidWorld("ceiling_height must be > 0".into()));
        }
        let mut segments: Vec<Segment> = polygon_segments(&self.outline).collect();
        for o in &self.obstacles {
            segments.extend(polygon_segments(o));
        }
        self.segments = segments;
        if !self.contains(self.spawn.x, self.spawn.y) {
            return Err(SimError::InvalidWorld("spawn is not in free space".into()));
        }
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        inside_polygon(&self.outline, [x, y]) && !self.obstacles.iter().any(|o| inside_polygon(o, [x, y]))
    }

    /// Distance from a point to the nearest wall segment.
    pub fn wall_distance(&self, x: f64, y: f64) -> f64 {
        self.segments
            .iter()
            .map(|s| s.distance_to([x, y]))
            .fold(f64::INFINITY, f64::min)
    }

    /// The world reflected about the x axis.
    pub fn mirrored(&self) -> Self {
        let m = |p: &Point| [p[0], -p[1]];
        let mut out = Self {
            outline: self.outline.iter().rev().map(m).collect(),
            obstacles: self.obstacles.iter().map(|o| o.iter().rev().map(m).collect()).collect(),
            ceiling_height: self.ceiling_height,
            spawn: Pose {
                x: self.spawn.x,
                y: -self.spawn.y,
                yaw: -self.spawn.yaw,
            },
            centerline: self.centerline.iter().map(m).collect(),
            segments: Vec::new(),
        };
        out.segments = self.segments.iter().map(Segment::mirrored_y).collect();
        out
    }

    /// Arc length along the centerline of the point's projection onto it.
    pub fn progress(&self, x: f64, y: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut start = 0.0;
        for w in self.centerline.windows(2) {
            let seg = Segment::new(w[0], w[1]);
            let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            let d = seg.distance_to([x, y]);
            if d < best.0 {
                let along = if len > 0.0 {
                    (((x - w[0][0]) * (w[1][0] - w[0][0]) + (y - w[0][1]) * (w[1][1] - w[0][1])) / len).clamp(0.0, len)
                } else {
                    0.0
                };
                best = (d, start + along);
            }
            start += len;
        }
        best.1
    }
}

/// Nearest hit along `world_angle` from `(x, y)`, or `None` beyond `max_range`.
pub fn cast_ray(world: &TunnelWorld, x: f64, y: f64, world_angle: f64, max_range: f64) -> Option<f64> {
    let d = [world_angle.cos(), world_angle.sin()];
    world
        .segments
        .iter()
        .filter_map(|s| s.ray_hit([x, y], d))
        .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.min(t))))
        .filter(|&t| t <= max_range && t > 0.0)
}

/// Noiseless planar scan from `pose`. Beam `i` points along body angle
/// `(i - n/2) 2pi/n`.
pub fn raycast(world: &TunnelWorld, pose: &Pose, n_beams: usize, max_range: f64) -> Result<LidarScan, SimError> {
    if !world.contains(pose.x, pose.y) {
        return Err(SimError::OutsideWorld { x: pose.x, y: pose.y });
    }
    let beams = LidarScan::beam_angles(n_beams)
        .into_iter()
        .map(|angle| Beam {
            angle,
            range: cast_ray(world, pose.x, pose.y, pose.yaw + angle, max_range),
        })
        .collect();
    LidarScan::new(beams, max_range).map_err(SimError::Scan)
}
