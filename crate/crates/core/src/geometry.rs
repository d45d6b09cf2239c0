//! Collocation point sets, Halton streams, the patch covering and the
//! uniform-cell spatial index used for range and nearest-point queries.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[inline]
pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[inline]
pub fn distance_sq(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Boundary node count paired with `n_interior` interior nodes:
/// `4 ⌈√N_i + 2⌉ - 4`.
pub fn boundary_count(n_interior: usize) -> usize {
    4 * per_side(n_interior) - 4
}

fn per_side(n_interior: usize) -> usize {
    ((n_interior as f64).sqrt() + 2.0).ceil() as usize
}

/// `4(m - 1)` equispaced points on the unit square boundary, `m` per side
/// counting both corners, listed counter-clockwise from the origin.
pub fn boundary_ring(per_side: usize) -> Vec<Point> {
    assert!(per_side >= 2, "a boundary ring needs at least the corners");
    let m = per_side - 1;
    let h = 1.0 / m as f64;
    let mut ring = Vec::with_capacity(4 * m);
    for i in 0..m {
        ring.push([i as f64 * h, 0.0]);
    }
    for i in 0..m {
        ring.push([1.0, i as f64 * h]);
    }
    for i in 0..m {
        ring.push([1.0 - i as f64 * h, 1.0]);
    }
    for i in 0..m {
        ring.push([0.0, 1.0 - i as f64 * h]);
    }
    ring
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    Interior,
    Boundary,
    Test,
}

impl fmt::Display for PointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PointKind::Interior => "interior",
            PointKind::Boundary => "boundary",
            PointKind::Test => "test",
        })
    }
}

impl FromStr for PointKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "interior" => Ok(PointKind::Interior),
            "boundary" => Ok(PointKind::Boundary),
            "test" => Ok(PointKind::Test),
            other => Err(Error::InvalidArgument(format!("unknown point kind `{other}`"))),
        }
    }
}

/// Collocation points on the unit square. Global indices run over the
/// interior points first, then the boundary points.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointSet {
    interior: Vec<Point>,
    boundary: Vec<Point>,
}

fn on_boundary(p: Point) -> bool {
    let inside = (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]);
    inside && (p[0] == 0.0 || p[0] == 1.0 || p[1] == 0.0 || p[1] == 1.0)
}

fn strictly_inside(p: Point) -> bool {
    p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0
}

impl PointSet {
    pub fn new(interior: Vec<Point>, boundary: Vec<Point>) -> Result<Self> {
        if let Some(p) = interior.iter().find(|p| !strictly_inside(**p)) {
            return Err(Error::InvalidArgument(format!(
                "interior point ({}, {}) is not strictly inside the unit square",
                p[0], p[1]
            )));
        }
        if let Some(p) = boundary.iter().find(|p| !on_boundary(**p)) {
            return Err(Error::InvalidArgument(format!(
                "boundary point ({}, {}) is not on the unit square boundary",
                p[0], p[1]
            )));
        }
        Ok(Self { interior, boundary })
    }

    /// Interior points plus the regenerated boundary ring sized by
    /// [`boundary_count`].
    pub fn with_boundary_ring(interior: Vec<Point>) -> Result<Self> {
        let ring = boundary_ring(per_side(interior.len()));
        Self::new(interior, ring)
    }

    pub fn interior(&self) -> &[Point] {
        &self.interior
    }

    pub fn boundary(&self) -> &[Point] {
        &self.boundary
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }

    pub fn len(&self) -> usize {
        self.interior.len() + self.boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, k: usize) -> Point {
        if k < self.interior.len() {
            self.interior[k]
        } else {
            self.boundary[k - self.interior.len()]
        }
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        k >= self.interior.len()
    }

    pub fn kind(&self, k: usize) -> PointKind {
        if self.is_boundary(k) {
            PointKind::Boundary
        } else {
            PointKind::Interior
        }
    }

    /// All points in global index order.
    pub fn to_vec(&self) -> Vec<Point> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.interior);
        v.extend_from_slice(&self.boundary);
        v
    }

    pub fn iter(&self) -> impl Iterator<Item = Point> + '_ {
        self.interior.iter().chain(self.boundary.iter()).copied()
    }

    /// Smallest pairwise distance over all points (brute force over the
    /// spatial index, so fine for a few thousand points).
    pub fn min_separation(&self) -> f64 {
        let pts = self.to_vec();
        if pts.len() < 2 {
            return f64::INFINITY;
        }
        let index = SpatialIndex::new(&pts, 0.05);
        let mut best = f64::INFINITY;
        for (i, &p) in pts.iter().enumerate() {
            for j in index.within(p, 0.05) {
                if j != i {
                    best = best.min(distance(p, pts[j]));
                }
            }
        }
        if best.is_infinite() {
            // Nothing closer than the probe radius: fall back to brute force.
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    best = best.min(distance(pts[i], pts[j]));
                }
            }
        }
        best
    }

    pub fn write_csv<W: Write>(&self, mut out: W, test: &[Point]) -> Result<()> {
        writeln!(out, "x,y,kind")?;
        let rows = self
            .interior
            .iter()
            .map(|p| (p, PointKind::Interior))
            .chain(self.boundary.iter().map(|p| (p, PointKind::Boundary)))
            .chain(test.iter().map(|p| (p, PointKind::Test)));
        for (p, kind) in rows {
            writeln!(out, "{:e},{:e},{kind}", p[0], p[1])?;
        }
        Ok(())
    }

    /// Reads the `x,y,kind` format; returns the collocation set and any test points.
    pub fn read_csv<R: BufRead>(input: R) -> Result<(PointSet, Vec<Point>)> {
        let (mut interior, mut boundary, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with('x')) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = || Error::InvalidArgument(format!("bad point record on line {}", lineno + 1));
            if fields.len() != 3 {
                return Err(bad());
            }
            let x: f64 = fields[0].trim().parse().map_err(|_| bad())?;
            let y: f64 = fields[1].trim().parse().map_err(|_| bad())?;
            match fields[2].parse::<PointKind>()? {
                PointKind::Interior => interior.push([x, y]),
                PointKind::Boundary => boundary.push([x, y]),
                PointKind::Test => test.push([x, y]),
            }
        }
        Ok((PointSet::new(interior, boundary)?, test))
    }
}

/// Deterministic 2D Halton sequence in bases 2 and 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaltonStream {
    next_index: u64,
}

impl Default for HaltonStream {
    /// Starts at index 1; index 0 is the origin, a boundary point.
    fn default() -> Self {
        Self { next_index: 1 }
    }
}

pub fn radical_inverse(base: u64, mut index: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut r = 0.0;
    while index > 0 {
        r += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    r
}

impl HaltonStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(next_index: u64) -> Self {
        Self { next_index: next_index.max(1) }
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    pub fn draw(&mut self, count: usize) -> Vec<Point> {
        let start = self.next_index;
        self.next_index += count as u64;
        (start..self.next_index)
            .map(|i| [radical_inverse(2, i), radical_inverse(3, i)])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialMode {
    Grid,
    Halton,
}

impl FromStr for InitialMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "grid" => Ok(InitialMode::Grid),
            "halton" => Ok(InitialMode::Halton),
            other => Err(Error::Config(format!("unknown initial mode `{other}`"))),
        }
    }
}

/// Initial node set with `(n_side - 2)²` interior points (a uniform grid or
/// the same number of Halton points) and the matching boundary ring. Halton
/// points are taken from `stream`, which is advanced past them.
pub fn make_initial_points_with(
    n_side: usize,
    mode: InitialMode,
    stream: &mut HaltonStream,
) -> Result<PointSet> {
    if n_side < 3 {
        return Err(Error::InvalidArgument(format!("n_side must be at least 3, got {n_side}")));
    }
    let m = n_side - 2;
    let interior = match mode {
        InitialMode::Grid => {
            let h = 1.0 / (n_side - 1) as f64;
            let mut pts = Vec::with_capacity(m * m);
            for j in 1..=m {
                for i in 1..=m {
                    pts.push([i as f64 * h, j as f64 * h]);
                }
            }
            pts
        }
        InitialMode::Halton => stream.draw(m * m),
    };
    PointSet::with_boundary_ring(interior)
}

pub fn make_initial_points(n_side: usize, mode: InitialMode) -> Result<PointSet> {
    make_initial_points_with(n_side, mode, &mut HaltonStream::new())
}

/// Uniform background grid of square cells over a set of points.
///
/// Each cell keeps its point indices in ascending order, so range queries
/// return sorted indices and nearest-point ties resolve to the smallest index.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point>,
    origin: Point,
    cell: f64,
    dims: [usize; 2],
    cells: Vec<Vec<usize>>,
}

const MAX_CELLS_PER_AXIS: usize = 512;

impl SpatialIndex {
    pub fn new(points: &[Point], cell_side: f64) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 2];
            hi = [0.0; 2];
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let mut cell = if cell_side.is_finite() && cell_side > 0.0 { cell_side } else { 1.0 };
        if extent / cell > MAX_CELLS_PER_AXIS as f64 {
            cell = extent / MAX_CELLS_PER_AXIS as f64;
        }
        let dims = [
            ((hi[0] - lo[0]) / cell).floor() as usize + 1,
            ((hi[1] - lo[1]) / cell).floor() as usize + 1,
        ];
        let mut cells = vec![Vec::new(); dims[0] * dims[1]];
        let mut index = Self { points: points.to_vec(), origin: lo, cell, dims, cells: Vec::new() };
        for (i, &p) in points.iter().enumerate() {
            let [cx, cy] = index.cell_of(p);
            cells[cy as usize * dims[0] + cx as usize].push(i);
        }
        index.cells = cells;
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    fn cell_of(&self, p: Point) -> [i64; 2] {
        let c = |a: usize| {
            let v = ((p[a] - self.origin[a]) / self.cell).floor();
            // saturate far-away queries
            v.clamp(-(1i64 << 40) as f64, (1i64 << 40) as f64) as i64
        };
        let [cx, cy] = [c(0), c(1)];
        [cx.min(self.dims[0] as i64 - 1), cy.min(self.dims[1] as i64 - 1)]
    }

    fn cell_slice(&self, cx: i64, cy: i64) -> &[usize] {
        if cx < 0 || cy < 0 || cx >= self.dims[0] as i64 || cy >= self.dims[1] as i64 {
            return &[];
        }
        &self.cells[cy as usize * self.dims[0] + cx as usize]
    }

    /// Indices of the points with `‖p - center‖ ≤ radius`, ascending.
    pub fn within(&self, center: Point, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.points.is_empty() || radius < 0.0 {
            return out;
        }
        let lo = self.cell_of([center[0] - radius, center[1] - radius]);
        let hi = self.cell_of([center[0] + radius, center[1] + radius]);
        let r2 = radius * radius;
        for cy in lo[1].max(0)..=hi[1] {
            for cx in lo[0].max(0)..=hi[0] {
                out.extend(
                    self.cell_slice(cx, cy)
                        .iter()
                        .copied()
                        .filter(|&i| distance_sq(self.points[i], center) <= r2),
                );
            }
        }
        out.sort_unstable();
        out
    }

    /// Index and distance of the closest point; ties go to the smallest index.
    pub fn nearest(&self, query: Point) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let [qx, qy] = {
            let c = |a: usize| ((query[a] - self.origin[a]) / self.cell).floor();
            [c(0), c(1)]
        };
        let (qx, qy) = (
            qx.clamp(-1e12, 1e12) as i64,
            qy.clamp(-1e12, 1e12) as i64,
        );
        // Rings beyond this radius cannot touch the grid.
        let reach = {
            let far = |q: i64, dim: usize| q.abs().max((q - (dim as i64 - 1)).abs());
            far(qx, self.dims[0]).max(far(qy, self.dims[1]))
        };
        let mut best: Option<(usize, f64)> = None;
        let consider = |i: usize, best: &mut Option<(usize, f64)>| {
            let d2 = distance_sq(self.points[i], query);
            match *best {
                Some((bi, bd)) if d2 > bd || (d2 == bd && i > bi) => {}
                _ => *best = Some((i, d2)),
            }
        };
        let mut ring: i64 = 0;
        loop {
            if ring == 0 {
                for &i in self.cell_slice(qx, qy) {
                    consider(i, &mut best);
                }
            } else {
                for cx in qx - ring..=qx + ring {
                    for &i in self.cell_slice(cx, qy - ring) {
                        consider(i, &mut best);
                    }
                    for &i in self.cell_slice(cx, qy + ring) {
                        consider(i, &mut best);
                    }
                }
                for cy in qy - ring + 1..=qy + ring - 1 {
                    for &i in self.cell_slice(qx - ring, cy) {
                        consider(i, &mut best);
                    }
                    for &i in self.cell_slice(qx + ring, cy) {
                        consider(i, &mut best);
                    }
                }
            }
            // Any point outside the rings searched so far is at least
            // `ring * cell` away.
            if let Some((_, bd)) = best {
                let bound = ring as f64 * self.cell;
                if bd < bound * bound {
                    break;
                }
            }
            if ring > reach {
                break;
            }
            ring += 1;
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }
}

/// Nearest collocation point to `query` in global index order.
pub fn nearest_point(query: Point, points: &PointSet) -> Result<(usize, f64)> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let all = points.to_vec();
    let index = SpatialIndex::new(&all, 1.0 / (all.len() as f64).sqrt().max(1.0));
    Ok(index.nearest(query).expect("nonempty"))
}

/// A circular subdomain and the sorted global indices of the points in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub center: Point,
    pub radius: f64,
    pub members: Vec<usize>,
}

impl Patch {
    #[inline]
    pub fn contains(&self, p: Point) -> bool {
        distance_sq(p, self.center) <= self.radius * self.radius
    }
}

/// A set of patches over a point set, with an index over the patch centres
/// for locating the patches that contain a given point.
#[derive(Debug, Clone)]
pub struct Covering {
    patches: Vec<Patch>,
    max_radius: f64,
    centers: SpatialIndex,
}

impl Covering {
    /// Builds patches from `(center, radius)` discs, filling memberships by
    /// range query. No member-count check is made.
    pub fn from_discs(points: &[Point], discs: &[(Point, f64)]) -> Self {
        let max_radius = discs.iter().map(|d| d.1).fold(0.0, f64::max);
        let index = SpatialIndex::new(points, max_radius.max(1e-3));
        let patches = discs
            .iter()
            .map(|&(center, radius)| Patch { center, radius, members: index.within(center, radius) })
            .collect();
        Self::from_patches(patches)
    }

    pub fn from_patches(patches: Vec<Patch>) -> Self {
        let max_radius = patches.iter().map(|p| p.radius).fold(0.0, f64::max);
        let centers: Vec<Point> = patches.iter().map(|p| p.center).collect();
        let centers = SpatialIndex::new(&centers, max_radius.max(1e-3));
        Self { patches, max_radius, centers }
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }

    /// Indices of the patches whose closed disc contains `p`, ascending.
    pub fn containing(&self, p: Point) -> Vec<usize> {
        self.centers
            .within(p, self.max_radius)
            .into_iter()
            .filter(|&j| self.patches[j].contains(p))
            .collect()
    }

    /// For each global point index, the patches that list it as a member.
    pub fn patches_of_points(&self, n_points: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); n_points];
        for (j, patch) in self.patches.iter().enumerate() {
            for &k in &patch.members {
                out[k].push(j);
            }
        }
        out
    }

    pub fn check_min_members(&self, min: usize) -> Result<()> {
        match self.patches.iter().position(|p| p.members.len() < min) {
            Some(j) => Err(Error::SparsePatch { patch: j, members: self.patches[j].members.len() }),
            None => Ok(()),
        }
    }
}

/// Radius of the patches on a `per_axis × per_axis` centre grid.
pub fn covering_radius(per_axis: usize, overlap: f64) -> f64 {
    overlap * std::f64::consts::SQRT_2 / (2.0 * per_axis as f64)
}

/// Patches centred on the cells of a `per_axis × per_axis` grid over the unit
/// square with radius `overlap · √2 / (2 · per_axis)`.
pub fn build_covering(points: &PointSet, per_axis: usize, overlap: f64) -> Result<Covering> {
    if per_axis == 0 {
        return Err(Error::InvalidArgument("patches_per_axis must be at least 1".into()));
    }
    if !(overlap >= 1.0) || !overlap.is_finite() {
        return Err(Error::InvalidArgument(format!("overlap must be >= 1, got {overlap}")));
    }
    let radius = covering_radius(per_axis, overlap);
    let h = 1.0 / per_axis as f64;
    let mut discs = Vec::with_capacity(per_axis * per_axis);
    for j in 0..per_axis {
        for i in 0..per_axis {
            discs.push(([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h], radius));
        }
    }
    let covering = Covering::from_discs(&points.to_vec(), &discs);
    covering.check_min_members(3)?;
    let owners = covering.patches_of_points(points.len());
    if let Some(k) = owners.iter().position(|o| o.is_empty()) {
        return Err(Error::Uncovered(points.point(k)));
    }
    Ok(covering)
}

/// Default divisor of `√N` in the patch grid size.
pub const DEFAULT_PATCH_DIVISOR: f64 = 2.5;

/// Default patch grid size for `n_points` collocation points.
pub fn default_patches_per_axis(n_points: usize) -> usize {
    patches_per_axis_for(n_points, DEFAULT_PATCH_DIVISOR)
}

/// `max(2, round(√n / divisor))` patches per axis.
pub fn patches_per_axis_for(n_points: usize, divisor: f64) -> usize {
    ((n_points as f64).sqrt() / divisor).round().max(2.0) as usize
}
