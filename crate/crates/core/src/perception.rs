//! Lidar scan processing: the five surface distances and the open-space
//! heading corrector.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AngleUnit, HeadingParams, D_MAX};
pub use crate::state::ObstacleDistances;

const ANGLE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScanError {
    #[error("scan has no beams")]
    Empty,
    #[error("beam {0}: angle outside [-pi, pi)")]
    AngleOutOfRange(usize),
    #[error("beam {0}: angles not strictly increasing")]
    NotIncreasing(usize),
    #[error("beam {0}: range outside (0, max_range]")]
    BadRange(usize),
    #[error("max_range must be finite and > 0")]
    BadMaxRange,
    #[error("no valid beam inside the heading window")]
    NoBeamsInWindow,
}

/// One lidar return. `range` is `None` when nothing came back within range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub range: Option<f64>,
    /// Body-frame angle, counter-clockwise from +x [rad].
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    beams: Vec<Beam>,
    max_range: f64,
}

impl LidarScan {
    pub fn new(beams: Vec<Beam>, max_range: f64) -> Result<Self, ScanError> {
        if !(max_range.is_finite() && max_range > 0.0) {
            return Err(ScanError::BadMaxRange);
        }
        if beams.is_empty() {
            return Err(ScanError::Empty);
        }
        for (i, b) in beams.iter().enumerate() {
            if !(b.angle >= -PI && b.angle < PI) {
                return Err(ScanError::AngleOutOfRange(i));
            }
            if i > 0 && b.angle <= beams[i - 1].angle {
                return Err(ScanError::NotIncreasing(i));
            }
            if let Some(r) = b.range {
                if !(r > 0.0 && r <= max_range) {
                    return Err(ScanError::BadRange(i));
                }
            }
        }
        Ok(Self { beams, max_range })
    }

    /// Evenly spaced angles `(i - n/2) * 2pi/n`, symmetric about zero.
    pub fn beam_angles(n: usize) -> Vec<f64> {
        let step = 2.0 * PI / n as f64;
        let half = (n / 2) as f64;
        (0..n).map(|i| (i as f64 - half) * step).collect()
    }

    /// Builds a scan over [`Self::beam_angles`]; ranges that are non-finite or
    /// beyond `max_range` become invalid.
    pub fn from_ranges(ranges: &[f64], max_range: f64) -> Result<Self, ScanError> {
        let beams = Self::beam_angles(ranges.len())
            .into_iter()
            .zip(ranges)
            .map(|(angle, r)| Beam {
                angle,
                range: (r.is_finite() && *r <= max_range).then_some(*r),
            })
            .collect();
        Self::new(beams, max_range)
    }

    pub fn beams(&self) -> &[Beam] {
        &self.beams
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    pub fn angular_resolution(&self) -> f64 {
        2.0 * PI / self.beams.len() as f64
    }

    /// Every `stride`-th beam.
    pub fn decimated(&self, stride: usize) -> Vec<Beam> {
        self.beams.iter().step_by(stride.max(1)).copied().collect()
    }
}

/// Which of the four planar sectors a body-frame angle belongs to:
/// 0 = x+, 1 = x-, 2 = y+, 3 = y-.
fn sector_of(angle: f64) -> usize {
    let a = angle + ANGLE_EPS;
    if (-FRAC_PI_4..FRAC_PI_4).contains(&a) {
        0
    } else if (FRAC_PI_4..3.0 * FRAC_PI_4).contains(&a) {
        2
    } else if (-3.0 * FRAC_PI_4..-FRAC_PI_4).contains(&a) {
        3
    } else {
        1
    }
}

/// Minimum valid range in each 90 degree sector around the body axes, plus the
/// upward beam. Empty sectors and a missing ceiling reading map to `D_MAX`.
pub fn sector_distances(scan: &LidarScan, ceiling: f64) -> ObstacleDistances {
    let mut mins = [None::<f64>; 5];
    for b in scan.beams() {
        if let Some(r) = b.range {
            let s = sector_of(b.angle);
            mins[s] = Some(mins[s].map_or(r, |m| m.min(r)));
        }
    }
    mins[4] = ceiling.is_finite().then_some(ceiling);
    ObstacleDistances::from_readings(mins)
}

/// Scan window centred on the travel axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadingWindow {
    /// Body-frame direction of the window centre [rad].
    pub center: f64,
    pub half_width: f64,
}

impl HeadingWindow {
    /// `[-pi/2, pi/2]`: from the y- axis round to y+.
    pub const FRONT: Self = Self {
        center: 0.0,
        half_width: FRAC_PI_2,
    };

    pub const REAR: Self = Self {
        center: PI,
        half_width: FRAC_PI_2,
    };

    pub fn contains(&self, angle: f64) -> bool {
        wrap_angle(angle - self.center).abs() <= self.half_width + ANGLE_EPS
    }
}

/// Wraps into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Range-weighted mean of the beam angles in the window, measured from the
/// window centre. Invalid beams are skipped.
pub fn weighted_mean_heading(scan: &LidarScan, window: &HeadingWindow) -> Result<f64, ScanError> {
    let (mut num, mut den) = (0.0, 0.0);
    for b in scan.beams() {
        let Some(r) = b.range else { continue };
        if !window.contains(b.angle) {
            continue;
        }
        let rel = wrap_angle(b.angle - window.center).clamp(-window.half_width, window.half_width);
        num += r * rel;
        den += r;
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(ScanError::NoBeamsInWindow)
    }
}

/// Complementary-filter state of the heading generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadingFilterState {
    /// Filtered heading, in `unit`.
    pub psi_hat: f64,
    pub beta: f64,
    pub k_p: f64,
    pub unit: AngleUnit,
    pub max_rate: f64,
    pub window: HeadingWindow,
}

impl HeadingFilterState {
    pub fn new(params: &HeadingParams) -> Self {
        Self {
            psi_hat: 0.0,
            beta: params.beta,
            k_p: params.k_p,
            unit: params.angle_unit,
            max_rate: params.max_rate,
            window: HeadingWindow {
                center: 0.0,
                half_width: params.window_half_width,
            },
        }
    }

    /// Filter state in radians, no saturation beyond `max_rate`.
    pub fn radians(beta: f64, k_p: f64) -> Self {
        Self {
            psi_hat: 0.0,
            beta,
            k_p,
            unit: AngleUnit::Rad,
            max_rate: 1.0,
            window: HeadingWindow::FRONT,
        }
    }
}

/// Gyro prediction followed by the lidar correction. The correction enters
/// with a minus sign: the free-space direction seen in the body frame turns
/// opposite to the vehicle.
pub fn heading_update(state: &HeadingFilterState, omega_z: f64, psi_k: f64, ts: f64) -> HeadingFilterState {
    debug_assert!(ts > 0.0);
    let k = state.unit.per_rad();
    let predicted = state.psi_hat + omega_z * ts * k;
    HeadingFilterState {
        psi_hat: state.beta * predicted - (1.0 - state.beta) * psi_k * k,
        ..*state
    }
}

/// Yaw-rate reference `-k_p * psi_hat`, saturated to `max_rate` [rad/s].
pub fn heading_rate_cmd(state: &HeadingFilterState) -> f64 {
    (-state.k_p * state.psi_hat).clamp(-state.max_rate, state.max_rate)
}

/// The heading pipeline run once per control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadingGenerator {
    state: HeadingFilterState,
    half_width: f64,
}

impl HeadingGenerator {
    pub fn new(params: &HeadingParams) -> Self {
        Self {
            state: HeadingFilterState::new(params),
            half_width: params.window_half_width,
        }
    }

    pub fn state(&self) -> &HeadingFilterState {
        &self.state
    }

    /// Consumes one scan and gyro sample, returns the yaw-rate reference.
    /// The window faces the commanded direction of longitudinal travel; when
    /// that direction flips the filter restarts from zero. A scan with no usable
    /// beam in the window keeps the previous estimate.
    pub fn update(&mut self, scan: &LidarScan, omega_z: f64, reversing: bool, ts: f64) -> f64 {
        let center = if reversing { PI } else { 0.0 };
        if self.state.window.center != center {
            self.state.window.center = center;
            self.state.psi_hat = 0.0;
        }
        self.state.window.half_width = self.half_width;
        if let Ok(psi_k) = weighted_mean_heading(scan, &self.state.window) {
            self.state = heading_update(&self.state, omega_z, psi_k, ts);
        }
        heading_rate_cmd(&self.state)
    }
}

/// `D_MAX` re-exported for callers that only deal with scans.
pub const MAX_RANGE: f64 = D_MAX;

#[cfg(test)]
mod tests {
    use super::*;

    fn scan(ranges: &[f64]) -> LidarScan {
        LidarScan::from_ranges(ranges, 15.0).unwrap()
    }

    #[test]
    fn constant_scan_gives_equal_sectors() {
        let d = sector_distances(&scan(&[5.0; 360]), 3.0);
        assert_eq!(d.as_array(), [5.0, 5.0, 5.0, 5.0, 3.0]);
    }

    #[test]
    fn single_short_beam_ahead() {
        let mut r = vec![15.0; 360];
        r[180] = 2.0; // angle 0
        let s = scan(&r);
        assert_eq!(s.beams()[180].angle, 0.0);
        let d = sector_distances(&s, f64::INFINITY);
        assert_eq!(d.as_array(), [2.0, 15.0, 15.0, 15.0, 15.0]);
    }

    #[test]
    fn all_invalid_is_open() {
        let d = sector_distances(&scan(&[f64::INFINITY; 360]), f64::INFINITY);
        assert_eq!(d.as_array(), [15.0; 5]);
    }

    #[test]
    fn sector_boundaries() {
        // -45 deg is x+, +45 deg is y+, 135 deg is x-, -135 deg is y-
        let angles = LidarScan::beam_angles(360);
        assert_eq!(sector_of(angles[135]), 0);
        assert_eq!(sector_of(angles[225]), 2);
        assert_eq!(sector_of(angles[315]), 1);
        assert_eq!(sector_of(angles[45]), 3);
        assert_eq!(sector_of(angles[0]), 1);
        assert_eq!(sector_of(angles[90]), 3);
        assert_eq!(sector_of(angles[270]), 2);
    }

    #[test]
    fn malformed_scans() {
        let b = |angle, range| Beam { angle, range };
        assert_eq!(LidarScan::new(vec![], 15.0), Err(ScanError::Empty));
        assert_eq!(
            LidarScan::new(vec![b(0.1, Some(1.0)), b(0.1, Some(1.0))], 15.0),
            Err(ScanError::NotIncreasing(1))
        );
        assert_eq!(LidarScan::new(vec![b(PI, Some(1.0))], 15.0), Err(ScanError::AngleOutOfRange(0)));
        assert_eq!(LidarScan::new(vec![b(0.0, Some(0.0))], 15.0), Err(ScanError::BadRange(0)));
        assert_eq!(LidarScan::new(vec![b(0.0, Some(16.0))], 15.0), Err(ScanError::BadRange(0)));
    }

    #[test]
    fn weighted_mean_examples() {
        let b = |angle, r: f64| Beam { angle, range: Some(r) };
        let s = LidarScan::new(vec![b(-FRAC_PI_2, 1.0), b(0.0, 2.0), b(FRAC_PI_2, 3.0)], 15.0).unwrap();
        let psi = weighted_mean_heading(&s, &HeadingWindow::FRONT).unwrap();
        assert!((psi - PI / 6.0).abs() < 1e-15);

        let sym: Vec<f64> = LidarScan::beam_angles(360).iter().map(|a| 2.0 + a.cos().abs()).collect();
        let psi = weighted_mean_heading(&scan(&sym), &HeadingWindow::FRONT).unwrap();
        assert!(psi.abs() < 1e-12, "{psi}");
    }

    #[test]
    fn empty_window_is_an_error() {
        let mut r = vec![f64::INFINITY; 360];
        r[0] = 3.0; // straight behind
        assert_eq!(
            weighted_mean_heading(&scan(&r), &HeadingWindow::FRONT),
            Err(ScanError::NoBeamsInWindow)
        );
        assert!(weighted_mean_heading(&scan(&r), &HeadingWindow::REAR).is_ok());
    }

    #[test]
    fn filter_examples() {
        let s = HeadingFilterState::radians(0.95, 0.03);
        let n = heading_update(&s, 0.0, 0.1, 0.05);
        assert!((n.psi_hat + 0.005).abs() < 1e-15);

        let n = heading_update(&s, 1.0, 0.0, 0.05);
        assert!((n.psi_hat - 0.0475).abs() < 1e-15);
    }

    #[test]
    fn rate_command_examples() {
        let mut s = HeadingFilterState::radians(0.95, 0.03);
        assert_eq!(heading_rate_cmd(&s), 0.0);
        s.psi_hat = -0.5;
        assert!((heading_rate_cmd(&s) - 0.015).abs() < 1e-15);
        s.psi_hat = -100.0;
        assert_eq!(heading_rate_cmd(&s), 1.0);
    }

    #[test]
    fn degree_filter_matches_radian_filter_scaled() {
        let rad = HeadingFilterState::radians(0.95, 0.03);
        let deg = HeadingFilterState {
            unit: AngleUnit::Deg,
            ..rad
        };
        let r = heading_update(&rad, 0.2, 0.3, 0.05);
        let d = heading_update(&deg, 0.2, 0.3, 0.05);
        assert!((d.psi_hat - r.psi_hat.to_degrees()).abs() < 1e-12);
    }

    #[test]
    fn generator_restarts_on_reversal() {
        let mut g = HeadingGenerator::new(&HeadingParams::default());
        let mut r = vec![3.0; 360];
        for v in r.iter_mut().skip(200).take(40) {
            *v = 10.0;
        }
        let s = scan(&r);
        g.update(&s, 0.0, false, 0.05);
        assert!(g.state().psi_hat != 0.0);
        g.update(&s, 0.0, true, 0.05);
        assert_eq!(g.state().window.center, PI);
        // one correction from zero, rear window sees a constant 3 m scan
        assert!(g.state().psi_hat.abs() < 1e-9);
    }

    #[test]
    fn wrap() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }
}
