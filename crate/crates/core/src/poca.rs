//! Point-of-closest-approach reconstruction.
//!
//! Each event's upper and lower hits are fitted to straight tracks. The PoCA
//! is the midpoint of their common perpendicular and the scattering angle is
//! the angle between the track directions. Every accepted event adds its
//! squared angle and its path length through the PoCA voxel to that voxel;
//! the grid is then projected along z to a 2D map and min-max normalized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mm_to_cm, Line3, Vec3, VoxelGrid};
use crate::image::{ImageMeta, ScatterImage};
use crate::par::{self, Exec};
use crate::sim::MuonEvent;

/// Below this |sin(angle)| two tracks have no unique PoCA.
pub const PARALLEL_TOLERANCE: f64 = 1e-9;

/// Least-squares line through `hits`, fitted independently in XZ and YZ,
/// pointing downward.
pub fn fit_track(hits: &[Vec3]) -> Result<Line3> {
    if hits.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need >= 2 hits, got {}",
            hits.len()
        )));
    }
    let n = hits.len() as f64;
    let mean = hits.iter().fold(Vec3::ZERO, |acc, &h| acc + h) / n;
    let mut szz = 0.0;
    let mut szx = 0.0;
    let mut szy = 0.0;
    for h in hits {
        let dz = h.z - mean.z;
        szz += dz * dz;
        szx += dz * (h.x - mean.x);
        szy += dz * (h.y - mean.y);
    }
    if szz == 0.0 {
        return Err(Error::Degenerate("all hits share one z".into()));
    }
    let (slope_x, slope_y) = (szx / szz, szy / szz);
    Line3::new(mean, Vec3::new(-slope_x, -slope_y, -1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestApproach {
    pub on_first: Vec3,
    pub on_second: Vec3,
    pub midpoint: Vec3,
    pub distance: f64,
}

/// Closest points of two lines via the mutual-perpendicular construction.
pub fn closest_approach(l1: &Line3, l2: &Line3) -> Result<ClosestApproach> {
    let (d1, d2) = (l1.direction, l2.direction);
    let w0 = l1.point - l2.point;
    let b = d1.dot(d2);
    let sin = d1.cross(d2).norm();
    if sin < PARALLEL_TOLERANCE {
        return Err(Error::Degenerate(
            "parallel tracks have no unique PoCA".into(),
        ));
    }
    let denom = sin * sin;
    let (d, e) = (d1.dot(w0), d2.dot(w0));
    let s = (b * e - d) / denom;
    let t = (e - b * d) / denom;
    let on_first = l1.at(s);
    let on_second = l2.at(t);
    Ok(ClosestApproach {
        on_first,
        on_second,
        midpoint: (on_first + on_second) * 0.5,
        distance: (on_first - on_second).norm(),
    })
}

/// Angle (rad) between two non-zero vectors.
pub fn scattering_angle(v_in: Vec3, v_out: Vec3) -> Result<f64> {
    let (a, b) = (v_in.norm(), v_out.norm());
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Degenerate("zero direction vector".into()));
    }
    Ok((v_in.dot(v_out) / (a * b)).clamp(-1.0, 1.0).acos())
}

/// Change of the XZ and YZ projected slope angles from `v_in` to `v_out`.
pub fn projected_deflection(v_in: Vec3, v_out: Vec3) -> [f64; 2] {
    let angle = |v: Vec3, axis: usize| (v.component(axis) / -v.z).atan();
    [
        angle(v_out, 0) - angle(v_in, 0),
        angle(v_out, 1) - angle(v_in, 1),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPair {
    pub incoming: Line3,
    pub outgoing: Line3,
    pub theta: f64,
    pub poca: Vec3,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    /// Per column: summed squared angles over summed path lengths.
    #[default]
    ColumnLambda,
    /// Per column: largest voxel scattering density.
    Max,
}

impl std::str::FromStr for Projection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "column-lambda" => Ok(Projection::ColumnLambda),
            "max" => Ok(Projection::Max),
            _ => Err(Error::Config(format!("unknown projection {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    /// Lower corner of the grid, mm.
    pub origin: [f64; 3],
    pub shape: [usize; 3],
    /// Voxel size, mm.
    pub pitch: [f64; 3],
    pub projection: Projection,
    pub max_distance_mm: f64,
    pub min_theta: f64,
    pub max_theta: f64,
}

impl Default for ReconConfig {
    /// 300 x 300 x 27 voxels of 0.5 x 0.5 x 5 mm covering 150 x 150 mm and
    /// the 135 mm gap between the detector groups.
    fn default() -> Self {
        ReconConfig {
            origin: [-75.0, -75.0, -67.5],
            shape: [300, 300, 27],
            pitch: [0.5, 0.5, 5.0],
            projection: Projection::ColumnLambda,
            max_distance_mm: 10.0,
            min_theta: 1e-3,
            max_theta: 1.0,
        }
    }
}

impl ReconConfig {
    pub fn empty_grid(&self) -> Result<VoxelGrid> {
        if !(self.max_distance_mm >= 0.0
            && self.min_theta >= 0.0
            && self.max_theta >= self.min_theta)
        {
            return Err(Error::Config("invalid reconstruction cuts".into()));
        }
        let [ox, oy, oz] = self.origin;
        let [px, py, pz] = self.pitch;
        VoxelGrid::new(Vec3::new(ox, oy, oz), self.shape, Vec3::new(px, py, pz))
    }
}

/// Per-cause rejection counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Rejections {
    pub accepted: u64,
    pub bad_fit: u64,
    pub parallel: u64,
    pub distance: u64,
    pub theta_low: u64,
    pub theta_high: u64,
    pub outside_grid: u64,
}

impl Rejections {
    pub fn rejected(&self) -> u64 {
        self.bad_fit
            + self.parallel
            + self.distance
            + self.theta_low
            + self.theta_high
            + self.outside_grid
    }
}

impl std::fmt::Display for Rejections {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "accepted {} | rejected: fit {}, parallel {}, distance {}, theta<min {}, theta>max {}, outside grid {}",
            self.accepted, self.bad_fit, self.parallel, self.distance, self.theta_low, self.theta_high, self.outside_grid
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairError {
    BadFit,
    Parallel,
}

/// Fits incoming and outgoing tracks for one event.
pub fn track_pair(event: &MuonEvent, planes_z: &[f64]) -> Result<TrackPair, PairError> {
    let n_upper = planes_z.len() / 2;
    let hits: Vec<Vec3> = event
        .hits
        .iter()
        .zip(planes_z)
        .map(|(&(x, y), &z)| Vec3::new(x, y, z))
        .collect();
    let incoming = fit_track(&hits[..n_upper]).map_err(|_| PairError::BadFit)?;
    let outgoing = fit_track(&hits[n_upper..]).map_err(|_| PairError::BadFit)?;
    let ca = closest_approach(&incoming, &outgoing).map_err(|_| PairError::Parallel)?;
    let theta =
        scattering_angle(incoming.direction, outgoing.direction).map_err(|_| PairError::BadFit)?;
    Ok(TrackPair {
        incoming,
        outgoing,
        theta,
        poca: ca.midpoint,
        distance: ca.distance,
    })
}

/// Distance from an interior point `q` along unit `u` to the box boundary.
fn exit_distance(q: Vec3, u: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let mut t = f64::INFINITY;
    for axis in 0..3 {
        let d = u.component(axis);
        if d > 0.0 {
            t = t.min((hi.component(axis) - q.component(axis)) / d);
        } else if d < 0.0 {
            t = t.min((lo.component(axis) - q.component(axis)) / d);
        }
    }
    t.max(0.0)
}

/// Path length (cm) inside the PoCA voxel of the two-segment trajectory that
/// arrives along the incoming direction and leaves along the outgoing one.
pub fn voxel_chord_cm(grid: &VoxelGrid, voxel: [usize; 3], pair: &TrackPair) -> f64 {
    let (lo, hi) = grid.voxel_bounds(voxel);
    let up = exit_distance(pair.poca, -pair.incoming.direction, lo, hi);
    let down = exit_distance(pair.poca, pair.outgoing.direction, lo, hi);
    mm_to_cm(up + down)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Verdict {
    Accept([usize; 3], f64, f64),
    Reject(Cause),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cause {
    Distance,
    ThetaLow,
    ThetaHigh,
    OutsideGrid,
}

fn judge(pair: &TrackPair, config: &ReconConfig, grid: &VoxelGrid) -> Verdict {
    if !(pair.distance <= config.max_distance_mm) {
        return Verdict::Reject(Cause::Distance);
    }
    if pair.theta < config.min_theta {
        return Verdict::Reject(Cause::ThetaLow);
    }
    if pair.theta > config.max_theta {
        return Verdict::Reject(Cause::ThetaHigh);
    }
    match grid.voxel_index(pair.poca) {
        Some(v) => Verdict::Accept(v, pair.theta * pair.theta, voxel_chord_cm(grid, v, pair)),
        None => Verdict::Reject(Cause::OutsideGrid),
    }
}

fn tally(rej: &mut Rejections, cause: Cause) {
    match cause {
        Cause::Distance => rej.distance += 1,
        Cause::ThetaLow => rej.theta_low += 1,
        Cause::ThetaHigh => rej.theta_high += 1,
        Cause::OutsideGrid => rej.outside_grid += 1,
    }
}

/// Fills a voxel grid from track pairs. Cuts run in parallel; deposits are
/// applied in input order so the grid is independent of thread count.
pub fn accumulate(
    pairs: &[TrackPair],
    config: &ReconConfig,
    exec: Exec,
) -> Result<(VoxelGrid, Rejections)> {
    let mut grid = config.empty_grid()?;
    let verdicts = par::map_slice(exec, pairs, |p| judge(p, config, &grid));
    let mut rej = Rejections::default();
    for v in verdicts {
        match v {
            Verdict::Accept(voxel, theta_sq, path) => {
                grid.deposit(voxel, theta_sq, path);
                rej.accepted += 1;
            }
            Verdict::Reject(cause) => tally(&mut rej, cause),
        }
    }
    Ok((grid, rej))
}

/// Raw projected map, row 0 at the top (largest y).
#[derive(Debug, Clone, PartialEq)]
pub struct RawMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

pub fn project(grid: &VoxelGrid, mode: Projection) -> RawMap {
    let [nx, ny, nz] = grid.shape;
    let mut values = vec![0.0; nx * ny];
    for iy in 0..ny {
        let row = ny - 1 - iy;
        for ix in 0..nx {
            let out = &mut values[row * nx + ix];
            match mode {
                Projection::ColumnLambda => {
                    let (mut th, mut l) = (0.0, 0.0);
                    for iz in 0..nz {
                        let i = grid.flat([ix, iy, iz]);
                        th += grid.theta_sum[i];
                        l += grid.path_sum[i];
                    }
                    *out = if l > 0.0 { th / l } else { 0.0 };
                }
                Projection::Max => {
                    *out = (0..nz)
                        .map(|iz| grid.lambda([ix, iy, iz]))
                        .fold(0.0, f64::max);
                }
            }
        }
    }
    RawMap {
        width: nx,
        height: ny,
        values,
    }
}

/// Min-max rescale to [0, 1]; a constant map becomes all zeros.
pub fn normalize(raw: &RawMap) -> Result<ScatterImage> {
    if raw.values.is_empty() {
        return Err(Error::Degenerate("empty map".into()));
    }
    if raw.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("map contains non-finite values".into()));
    }
    let min = raw.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let data = raw
        .values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (((v - min) / span) as f32).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    let mut img = ScatterImage::from_data(raw.width, raw.height, data)?;
    img.meta = ImageMeta {
        raw_min: min,
        raw_max: max,
        ..ImageMeta::default()
    };
    Ok(img)
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: ScatterImage,
    pub rejections: Rejections,
}

/// Full PoCA chain: track fits, cuts, accumulation, projection, normalization.
pub fn reconstruct(
    events: &[MuonEvent],
    planes_z: &[f64],
    config: &ReconConfig,
    exec: Exec,
) -> Result<Reconstruction> {
    if planes_z.len() < 4 || !planes_z.len().is_multiple_of(2) {
        return Err(Error::Config(format!(
            "need an even number (>= 4) of planes, got {}",
            planes_z.len()
        )));
    }
    if let Some(e) = events.iter().find(|e| e.hits.len() != planes_z.len()) {
        return Err(Error::Dimension(format!(
            "event {} has {} hits for {} planes",
            e.id,
            e.hits.len(),
            planes_z.len()
        )));
    }
    let fitted = par::map_slice(exec, events, |e| track_pair(e, planes_z));
    let mut rej = Rejections::default();
    let mut pairs = Vec::with_capacity(fitted.len());
    for f in fitted {
        match f {
            Ok(p) => pairs.push(p),
            Err(PairError::BadFit) => rej.bad_fit += 1,
            Err(PairError::Parallel) => rej.parallel += 1,
        }
    }
    let (grid, acc) = accumulate(&pairs, config, exec)?;
    rej.accepted = acc.accepted;
    rej.distance = acc.distance;
    rej.theta_low = acc.theta_low;
    rej.theta_high = acc.theta_high;
    rej.outside_grid = acc.outside_grid;

    let mut image = normalize(&project(&grid, config.projection))?;
    image.meta.event_count = events.len() as u64;
    Ok(Reconstruction {
        image,
        rejections: rej,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(p: [f64; 3], d: [f64; 3]) -> Line3 {
        Line3::new(Vec3::new(p[0], p[1], p[2]), Vec3::new(d[0], d[1], d[2])).unwrap()
    }

    #[test]
    fn two_hit_fit_is_exact_and_downward() {
        let l = fit_track(&[Vec3::new(0.0, 0.0, 100.0), Vec3::new(0.0, 0.0, 45.0)]).unwrap();
        assert_eq!(l.direction, Vec3::new(0.0, 0.0, -1.0));
        assert_eq!((l.point.x, l.point.y), (0.0, 0.0));
    }

    #[test]
    fn collinear_hits_reproduced() {
        let truth = line([1.0, -2.0, 0.0], [0.1, 0.2, -1.0]);
        let hits: Vec<Vec3> = [120.0, 60.0, -60.0, -120.0]
            .iter()
            .map(|&z| truth.at_z(z).unwrap())
            .collect();
        let fit = fit_track(&hits).unwrap();
        for h in &hits {
            let q = fit.at_z(h.z).unwrap();
            assert!((q - *h).norm() < 1e-12);
        }
        assert!(fit.direction.z < 0.0);
    }

    #[test]
    fn degenerate_fits_rejected() {
        assert!(fit_track(&[Vec3::ZERO]).is_err());
        assert!(fit_track(&[Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn canonical_skew_pair() {
        let ca = closest_approach(
            &line([0.0; 3], [1.0, 0.0, 0.0]),
            &line([0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
        )
        .unwrap();
        assert!((ca.on_first - Vec3::ZERO).norm() < 1e-15);
        assert!((ca.on_second - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        assert!((ca.midpoint - Vec3::new(0.0, 0.0, 0.5)).norm() < 1e-15);
        assert!((ca.distance - 1.0).abs() < 1e-15);
    }

    #[test]
    fn intersecting_lines_meet_at_origin() {
        let ca = closest_approach(
            &line([1.0, 1.0, 1.0], [1.0, 1.0, 1.0]),
            &line([2.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
        )
        .unwrap();
        assert!(ca.midpoint.norm() < 1e-12);
        assert!(ca.distance < 1e-12);
    }

    #[test]
    fn parallel_lines_have_no_poca() {
        let r = closest_approach(
            &line([0.0; 3], [0.0, 0.0, -1.0]),
            &line([1.0, 0.0, 0.0], [0.0, 0.0, -1.0]),
        );
        assert!(r.is_err());
    }

    #[test]
    fn scattering_angle_cases() {
        let z = Vec3::new(0.0, 0.0, -1.0);
        assert_eq!(scattering_angle(z, z).unwrap(), 0.0);
        let ortho = scattering_angle(z, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((ortho - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let t = scattering_angle(z, Vec3::new(0.01, 0.0, -1.0)).unwrap();
        assert!((t - 0.01f64.atan()).abs() < 1e-12);
        assert!((t - 9.9997e-3).abs() < 1e-7);
        assert!(scattering_angle(Vec3::ZERO, z).is_err());
    }

    #[test]
    fn two_deposits_give_expected_lambda() {
        let mut g = ReconConfig::default().empty_grid().unwrap();
        let v = [10, 20, 13];
        g.deposit(v, 1e-4, 0.4);
        g.deposit(v, 4e-4, 0.4);
        assert!((g.lambda(v) - 6.25e-4).abs() < 1e-18);
        assert_eq!(g.total_events(), 2);
    }

    #[test]
    fn no_events_gives_zero_grid_and_image() {
        let (g, rej) = accumulate(&[], &ReconConfig::default(), Exec::Parallel).unwrap();
        assert_eq!(g.total_events(), 0);
        assert_eq!(rej, Rejections::default());
        let img = normalize(&project(&g, Projection::ColumnLambda)).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_pair_chord_spans_voxel_height() {
        let g = ReconConfig::default().empty_grid().unwrap();
        let pair = TrackPair {
            incoming: line([0.1, 0.1, 10.0], [0.0, 0.0, -1.0]),
            outgoing: line([0.1, 0.1, 10.0], [0.0, 0.0, -1.0]),
            theta: 0.01,
            poca: Vec3::new(0.1, 0.1, 1.0),
            distance: 0.0,
        };
        let v = g.voxel_index(pair.poca).unwrap();
        assert!((voxel_chord_cm(&g, v, &pair) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_voxel_projection() {
        let cfg = ReconConfig {
            shape: [4, 3, 5],
            ..ReconConfig::default()
        };
        let mut g = cfg.empty_grid().unwrap();
        g.deposit([1, 0, 2], 2e-4, 0.5);
        let m = project(&g, Projection::ColumnLambda);
        // iy = 0 is the bottom row.
        assert!((m.values[2 * 4 + 1] - 4e-4).abs() < 1e-18);
        assert_eq!(m.values.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(project(&g, Projection::Max), m);
    }

    #[test]
    fn uniform_grid_projects_uniformly() {
        let cfg = ReconConfig {
            shape: [5, 5, 3],
            ..ReconConfig::default()
        };
        let mut g = cfg.empty_grid().unwrap();
        for i in 0..g.len() {
            let v = g.unflat(i);
            g.deposit(v, 1e-4, 0.25);
        }
        for mode in [Projection::ColumnLambda, Projection::Max] {
            let m = project(&g, mode);
            assert!(m.values.iter().all(|&v| (v - 4e-4).abs() < 1e-18));
        }
    }

    #[test]
    fn normalize_cases() {
        let raw = RawMap {
            width: 3,
            height: 1,
            values: vec![2.0, 4.0, 6.0],
        };
        let img = normalize(&raw).unwrap();
        assert_eq!(img.data, vec![0.0, 0.5, 1.0]);
        assert_eq!((img.meta.raw_min, img.meta.raw_max), (2.0, 6.0));
        let flat = normalize(&RawMap {
            width: 2,
            height: 1,
            values: vec![3.0, 3.0],
        })
        .unwrap();
        assert_eq!(flat.data, vec![0.0, 0.0]);
        assert!(normalize(&RawMap {
            width: 1,
            height: 1,
            values: vec![f64::NAN]
        })
        .is_err());
    }

    #[test]
    fn projection_parses() {
        assert_eq!("max".parse::<Projection>().unwrap(), Projection::Max);
        assert_eq!(
            "column-lambda".parse::<Projection>().unwrap(),
            Projection::ColumnLambda
        );
        assert!("sum".parse::<Projection>().is_err());
    }
}
