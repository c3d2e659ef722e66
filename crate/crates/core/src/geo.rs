//! Planar projection, distances, and fishnet tessellation.
//!
//! Cells are half-open squares `[x0 + c·s, x0 + (c+1)·s) × [y0 + r·s, y0 + (r+1)·s)`,
//! so every point inside the grid's bounding box belongs to exactly one cell.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Mean Earth radius in meters used by the local projection.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    /// Coordinates are already planar meters; `lat` is read as `y`, `lon` as `x`.
    Passthrough,
    LocalEquirectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub kind: ProjectionKind,
    pub lat0: f64,
    pub lon0: f64,
}

impl Projection {
    pub fn passthrough() -> Self {
        Projection {
            kind: ProjectionKind::Passthrough,
            lat0: 0.0,
            lon0: 0.0,
        }
    }

    pub fn local_equirectangular(lat0: f64, lon0: f64) -> Result<Self> {
        if !(lat0.abs() < 89.0) || !(-180.0..=180.0).contains(&lon0) {
            return Err(Error::invalid(format!(
                "projection origin ({lat0}, {lon0}) must satisfy |lat0| < 89 and |lon0| <= 180"
            )));
        }
        Ok(Projection {
            kind: ProjectionKind::LocalEquirectangular,
            lat0,
            lon0,
        })
    }

    /// Projects `(lat, lon)` degrees to planar `(x, y)` meters.
    pub fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        match self.kind {
            ProjectionKind::Passthrough => (lon, lat),
            ProjectionKind::LocalEquirectangular => {
                let x = EARTH_RADIUS_M * (lon - self.lon0).to_radians() * self.lat0.to_radians().cos();
                let y = EARTH_RADIUS_M * (lat - self.lat0).to_radians();
                (x, y)
            }
        }
    }

    /// Inverse of [`Projection::project`], returning `(lat, lon)`.
    pub fn unproject(&self, x: f64, y: f64) -> (f64, f64) {
        match self.kind {
            ProjectionKind::Passthrough => (y, x),
            ProjectionKind::LocalEquirectangular => {
                let lat = self.lat0 + (y / EARTH_RADIUS_M).to_degrees();
                let lon = self.lon0 + (x / (EARTH_RADIUS_M * self.lat0.to_radians().cos())).to_degrees();
                (lat, lon)
            }
        }
    }
}

/// Projects `(lat, lon)` with `proj`.
pub fn project(lat: f64, lon: f64, proj: &Projection) -> (f64, f64) {
    proj.project(lat, lon)
}

/// Euclidean distance in projected meters.
#[inline]
pub fn planar_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub col: u32,
    pub row: u32,
}

impl CellId {
    pub fn new(col: u32, row: u32) -> Self {
        CellId { col, row }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.col, self.row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fishnet {
    pub x0: f64,
    pub y0: f64,
    pub cell_size: f64,
    pub n_cols: u32,
    pub n_rows: u32,
    /// Active cells; `None` means every cell of the grid is active.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<BTreeSet<CellId>>,
}

impl Fishnet {
    pub fn new(x0: f64, y0: f64, cell_size: f64, n_cols: u32, n_rows: u32) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::invalid(format!("cell size must be positive, got {cell_size}")));
        }
        if n_cols == 0 || n_rows == 0 {
            return Err(Error::invalid("fishnet needs at least one row and one column"));
        }
        if !x0.is_finite() || !y0.is_finite() {
            return Err(Error::invalid("fishnet origin must be finite"));
        }
        Ok(Fishnet {
            x0,
            y0,
            cell_size,
            n_cols,
            n_rows,
            mask: None,
        })
    }

    /// Unmasked grid covering the bounding box of `points`, with the origin
    /// snapped down to a multiple of `cell_size`.
    pub fn covering<I>(points: I, cell_size: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        if !(cell_size > 0.0) {
            return Err(Error::invalid(format!("cell size must be positive, got {cell_size}")));
        }
        let mut bbox = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            bbox.0 = bbox.0.min(x);
            bbox.1 = bbox.1.min(y);
            bbox.2 = bbox.2.max(x);
            bbox.3 = bbox.3.max(y);
        }
        if !bbox.0.is_finite() {
            return Err(Error::InsufficientData("no points to cover with a fishnet".into()));
        }
        let c0 = (bbox.0 / cell_size).floor();
        let r0 = (bbox.1 / cell_size).floor();
        let n_cols = ((bbox.2 / cell_size).floor() - c0) as u32 + 1;
        let n_rows = ((bbox.3 / cell_size).floor() - r0) as u32 + 1;
        Fishnet::new(c0 * cell_size, r0 * cell_size, cell_size, n_cols, n_rows)
    }

    pub fn with_mask(mut self, mask: BTreeSet<CellId>) -> Result<Self> {
        if let Some(c) = mask.iter().find(|c| c.col >= self.n_cols || c.row >= self.n_rows) {
            return Err(Error::OutsideGrid {
                col: c.col as i64,
                row: c.row as i64,
            });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    #[inline]
    fn grid_index(&self, x: f64, y: f64) -> Option<CellId> {
        let c = ((x - self.x0) / self.cell_size).floor();
        let r = ((y - self.y0) / self.cell_size).floor();
        if c >= 0.0 && r >= 0.0 && c < self.n_cols as f64 && r < self.n_rows as f64 {
            Some(CellId::new(c as u32, r as u32))
        } else {
            None
        }
    }

    /// Cell containing `(x, y)`, or `None` when outside the grid or the mask.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> Option<CellId> {
        let cell = self.grid_index(x, y)?;
        self.is_active(cell).then_some(cell)
    }

    pub fn in_grid(&self, cell: CellId) -> bool {
        cell.col < self.n_cols && cell.row < self.n_rows
    }

    pub fn is_active(&self, cell: CellId) -> bool {
        self.in_grid(cell) && self.mask.as_ref().is_none_or(|m| m.contains(&cell))
    }

    pub fn cell_centroid(&self, cell: CellId) -> Result<(f64, f64)> {
        if !self.in_grid(cell) {
            return Err(Error::OutsideGrid {
                col: cell.col as i64,
                row: cell.row as i64,
            });
        }
        Ok((
            self.x0 + (cell.col as f64 + 0.5) * self.cell_size,
            self.y0 + (cell.row as f64 + 0.5) * self.cell_size,
        ))
    }

    /// Lower-left and upper-right corners of `cell`.
    pub fn cell_bounds(&self, cell: CellId) -> ((f64, f64), (f64, f64)) {
        let x = self.x0 + cell.col as f64 * self.cell_size;
        let y = self.y0 + cell.row as f64 * self.cell_size;
        ((x, y), (x + self.cell_size, y + self.cell_size))
    }

    pub fn active_cells(&self) -> Vec<CellId> {
        match &self.mask {
            Some(m) => m.iter().copied().collect(),
            None => (0..self.n_rows)
                .flat_map(|r| (0..self.n_cols).map(move |c| CellId::new(c, r)))
                .collect(),
        }
    }

    pub fn active_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.len(),
            None => self.n_cols as usize * self.n_rows as usize,
        }
    }

    /// True when both fishnets describe the same cells.
    pub fn same_grid(&self, other: &Fishnet) -> bool {
        self.x0 == other.x0
            && self.y0 == other.y0
            && self.cell_size == other.cell_size
            && self.n_cols == other.n_cols
            && self.n_rows == other.n_rows
            && self.mask == other.mask
    }

    /// GeoJSON square polygon for `cell` in projected coordinates.
    pub fn cell_geometry(&self, cell: CellId) -> Value {
        let ((x0, y0), (x1, y1)) = self.cell_bounds(cell);
        json!({
            "type": "Polygon",
            "coordinates": [[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]]
        })
    }

    /// FeatureCollection of the active cells with a `cell_id` property.
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .active_cells()
            .into_iter()
            .map(|c| {
                json!({
                    "type": "Feature",
                    "properties": {"cell_id": c.to_string(), "col": c.col, "row": c.row},
                    "geometry": self.cell_geometry(c),
                })
            })
            .collect();
        json!({"type": "FeatureCollection", "features": features})
    }
}

/// Polygon with an exterior ring and optional holes, in projected meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub exterior: Vec<(f64, f64)>,
    pub holes: Vec<Vec<(f64, f64)>>,
}

/// A (multi-part) study-region boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub parts: Vec<Polygon>,
}

fn ring_signed_area(ring: &[(f64, f64)]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..ring.len() {
        let (x1, y1) = ring[i];
        let (x2, y2) = ring[(i + 1) % ring.len()];
        s += x1 * y2 - x2 * y1;
    }
    0.5 * s
}

fn ring_contains(ring: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = ring.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (xi, yi) = ring[i];
        let (xj, yj) = ring[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Sutherland–Hodgman clip of `ring` against the rectangle `lo..hi`.
fn clip_ring(ring: &[(f64, f64)], lo: (f64, f64), hi: (f64, f64)) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = ring.to_vec();
    // Each edge: (axis, bound, keep-if-greater)
    let edges = [(0, lo.0, true), (0, hi.0, false), (1, lo.1, true), (1, hi.1, false)];
    for (axis, bound, greater) in edges {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let coord = |p: &(f64, f64)| if axis == 0 { p.0 } else { p.1 };
        let inside = |p: &(f64, f64)| {
            if greater {
                coord(p) >= bound
            } else {
                coord(p) <= bound
            }
        };
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let t = (bound - coord(&prev)) / (coord(&cur) - coord(&prev));
                out.push((prev.0 + t * (cur.0 - prev.0), prev.1 + t * (cur.1 - prev.1)));
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out
}

impl Polygon {
    pub fn area(&self) -> f64 {
        ring_signed_area(&self.exterior).abs() - self.holes.iter().map(|h| ring_signed_area(h).abs()).sum::<f64>()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        ring_contains(&self.exterior, x, y) && !self.holes.iter().any(|h| ring_contains(h, x, y))
    }

    fn clipped_area(&self, lo: (f64, f64), hi: (f64, f64)) -> f64 {
        let outer = ring_signed_area(&clip_ring(&self.exterior, lo, hi)).abs();
        let holes: f64 = self
            .holes
            .iter()
            .map(|h| ring_signed_area(&clip_ring(h, lo, hi)).abs())
            .sum();
        outer - holes
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        self.exterior.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |b, &(x, y)| (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y)),
        )
    }
}

impl Boundary {
    pub fn from_polygon(exterior: Vec<(f64, f64)>) -> Self {
        Boundary {
            parts: vec![Polygon {
                exterior,
                holes: Vec::new(),
            }],
        }
    }

    pub fn area(&self) -> f64 {
        self.parts.iter().map(Polygon::area).sum()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.parts.iter().any(|p| p.contains(x, y))
    }

    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.parts.iter().map(Polygon::bbox).fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |a, b| (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3)),
        )
    }

    /// Area of the boundary inside the rectangle `lo..hi`.
    pub fn area_within(&self, lo: (f64, f64), hi: (f64, f64)) -> f64 {
        self.parts
            .iter()
            .filter(|p| {
                let b = p.bbox();
                b.0 < hi.0 && b.2 > lo.0 && b.1 < hi.1 && b.3 > lo.1
            })
            .map(|p| p.clipped_area(lo, hi))
            .sum()
    }

    /// Parses a GeoJSON Polygon, MultiPolygon, Feature or FeatureCollection.
    /// Coordinates pass through `proj` as `(lon, lat)` pairs; use
    /// [`Projection::passthrough`] for data already in projected meters.
    pub fn from_geojson(value: &Value, proj: &Projection) -> Result<Self> {
        let mut parts = Vec::new();
        collect_polygons(value, proj, &mut parts)?;
        if parts.is_empty() {
            return Err(Error::format("GeoJSON boundary", "no Polygon or MultiPolygon geometry found"));
        }
        Ok(Boundary { parts })
    }
}

fn parse_ring(v: &Value, proj: &Projection) -> Result<Vec<(f64, f64)>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::format("GeoJSON boundary", "ring is not an array"))?;
    let mut ring = Vec::with_capacity(arr.len());
    for p in arr {
        let xy = p
            .as_array()
            .filter(|a| a.len() >= 2)
            .and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)))
            .ok_or_else(|| Error::format("GeoJSON boundary", "position is not a numeric pair"))?;
        ring.push(proj.project(xy.1, xy.0));
    }
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    Ok(ring)
}

fn parse_polygon(coords: &Value, proj: &Projection) -> Result<Polygon> {
    let rings = coords
        .as_array()
        .ok_or_else(|| Error::format("GeoJSON boundary", "polygon coordinates are not an array"))?;
    let mut it = rings.iter();
    let exterior = parse_ring(
        it.next()
            .ok_or_else(|| Error::format("GeoJSON boundary", "polygon without rings"))?,
        proj,
    )?;
    let holes = it.map(|r| parse_ring(r, proj)).collect::<Result<_>>()?;
    Ok(Polygon { exterior, holes })
}

fn collect_polygons(v: &Value, proj: &Projection, out: &mut Vec<Polygon>) -> Result<()> {
    match v.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => {
            for f in v.get("features").and_then(Value::as_array).into_iter().flatten() {
                collect_polygons(f, proj, out)?;
            }
        }
        Some("Feature") => {
            if let Some(g) = v.get("geometry") {
                collect_polygons(g, proj, out)?;
            }
        }
        Some("GeometryCollection") => {
            for g in v.get("geometries").and_then(Value::as_array).into_iter().flatten() {
                collect_polygons(g, proj, out)?;
            }
        }
        Some("Polygon") => out.push(parse_polygon(&v["coordinates"], proj)?),
        Some("MultiPolygon") => {
            for p in v["coordinates"]
                .as_array()
                .ok_or_else(|| Error::format("GeoJSON boundary", "MultiPolygon coordinates are not an array"))?
            {
                out.push(parse_polygon(p, proj)?);
            }
        }
        _ => {}
    }
    Ok(())
}

/// Fishnet over the boundary's bounding box whose mask holds exactly the
/// cells whose square overlaps the boundary with positive area.
pub fn masked_fishnet(boundary: &Boundary, cell_size: f64) -> Result<Fishnet> {
    let area = boundary.area();
    if !(area > 0.0) {
        return Err(Error::invalid("boundary polygon has zero area"));
    }
    let (xmin, ymin, xmax, ymax) = boundary.bbox();
    if !(cell_size > 0.0) {
        return Err(Error::invalid(format!("cell size must be positive, got {cell_size}")));
    }
    let n_cols = (((xmax - xmin) / cell_size).ceil() as u32).max(1);
    let n_rows = (((ymax - ymin) / cell_size).ceil() as u32).max(1);
    let net = Fishnet::new(xmin, ymin, cell_size, n_cols, n_rows)?;
    let min_overlap = 1e-9 * cell_size * cell_size;
    let mask: BTreeSet<CellId> = net
        .active_cells()
        .into_iter()
        .filter(|&c| {
            let (lo, hi) = net.cell_bounds(c);
            boundary.area_within(lo, hi) > min_overlap
        })
        .collect();
    net.with_mask(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, side: f64) -> Boundary {
        Boundary::from_polygon(vec![(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)])
    }

    #[test]
    fn equirectangular_origin_and_one_degree() {
        let p = Projection::local_equirectangular(0.0, 0.0).unwrap();
        assert_eq!(p.project(0.0, 0.0), (0.0, 0.0));
        let (x, y) = p.project(1.0, 0.0);
        assert_eq!(x, 0.0);
        // R * pi / 180
        assert!((y - 111_194.926_644_558_73).abs() < 0.1);
    }

    #[test]
    fn passthrough_is_identity() {
        let p = Projection::passthrough();
        // lat carries y, lon carries x
        assert_eq!(p.project(5678.0, 1234.0), (1234.0, 5678.0));
    }

    #[test]
    fn projection_rejects_polar_origin() {
        assert!(Projection::local_equirectangular(89.5, 0.0).is_err());
    }

    #[test]
    fn unproject_inverts_project() {
        let p = Projection::local_equirectangular(54.0, -2.0).unwrap();
        let (x, y) = p.project(51.5, -0.1);
        let (lat, lon) = p.unproject(x, y);
        assert!((lat - 51.5).abs() < 1e-12 && (lon + 0.1).abs() < 1e-12);
    }

    #[test]
    fn cell_of_floor_and_half_open() {
        let net = Fishnet::new(0.0, 0.0, 10_000.0, 10, 10).unwrap();
        assert_eq!(net.cell_of(25_300.0, 7_800.0), Some(CellId::new(2, 0)));
        assert_eq!(net.cell_of(10_000.0, 0.0), Some(CellId::new(1, 0)));
        assert_eq!(net.cell_of(-1.0, 5.0), None);
        assert_eq!(net.cell_of(100_000.0, 5.0), None);
    }

    #[test]
    fn centroids() {
        let net = Fishnet::new(0.0, 0.0, 10_000.0, 5, 5).unwrap();
        assert_eq!(net.cell_centroid(CellId::new(0, 0)).unwrap(), (5_000.0, 5_000.0));
        assert_eq!(net.cell_centroid(CellId::new(2, 1)).unwrap(), (25_000.0, 15_000.0));
        assert!(net.cell_centroid(CellId::new(5, 0)).is_err());
        let london = Fishnet::new(0.0, 0.0, 1_000.0, 3, 3).unwrap();
        assert_eq!(london.cell_centroid(CellId::new(0, 0)).unwrap(), (500.0, 500.0));
    }

    #[test]
    fn masked_cells_excluded() {
        let mut mask = BTreeSet::new();
        mask.insert(CellId::new(0, 0));
        let net = Fishnet::new(0.0, 0.0, 1.0, 2, 2).unwrap().with_mask(mask).unwrap();
        assert_eq!(net.cell_of(0.5, 0.5), Some(CellId::new(0, 0)));
        assert_eq!(net.cell_of(1.5, 0.5), None);
    }

    #[test]
    fn masked_fishnet_square_and_small() {
        let net = masked_fishnet(&square(0.0, 0.0, 25_000.0), 10_000.0).unwrap();
        assert_eq!(net.active_count(), 9);
        let small = masked_fishnet(&square(1_000.0, 1_000.0, 500.0), 10_000.0).unwrap();
        assert_eq!(small.active_count(), 1);
    }

    #[test]
    fn masked_fishnet_triangle_skips_empty_corner() {
        // Right triangle over a 3x3 grid: the cell opposite the hypotenuse
        // corner touches only at a point and is excluded.
        let tri = Boundary::from_polygon(vec![(0.0, 0.0), (30.0, 0.0), (0.0, 30.0)]);
        let net = masked_fishnet(&tri, 10.0).unwrap();
        assert_eq!(net.active_count(), 6);
        assert!(!net.is_active(CellId::new(2, 2)));
        assert!(!net.is_active(CellId::new(2, 1)));
        assert!(net.is_active(CellId::new(1, 1)));
    }

    #[test]
    fn degenerate_boundary_rejected() {
        let line = Boundary::from_polygon(vec![(0.0, 0.0), (10.0, 0.0), (20.0, 0.0)]);
        assert!(masked_fishnet(&line, 1.0).is_err());
    }

    #[test]
    fn polygon_with_hole() {
        let v = json!({"type": "Polygon", "coordinates": [
            [[0.0, 0.0], [30.0, 0.0], [30.0, 30.0], [0.0, 30.0], [0.0, 0.0]],
            [[10.0, 10.0], [20.0, 10.0], [20.0, 20.0], [10.0, 20.0], [10.0, 10.0]]
        ]});
        let b = Boundary::from_geojson(&v, &Projection::passthrough()).unwrap();
        assert!((b.area() - 800.0).abs() < 1e-9);
        assert!(!b.contains(15.0, 15.0));
        assert!(b.contains(5.0, 15.0));
        let net = masked_fishnet(&b, 10.0).unwrap();
        assert_eq!(net.active_count(), 8);
    }

    #[test]
    fn covering_snaps_origin() {
        let net = Fishnet::covering([(12_000.0, -3_000.0), (38_000.0, 9_999.0)], 10_000.0).unwrap();
        assert_eq!((net.x0, net.y0), (10_000.0, -10_000.0));
        assert_eq!((net.n_cols, net.n_rows), (3, 2));
    }

    #[test]
    fn geojson_export_lists_active_cells() {
        let net = Fishnet::new(0.0, 0.0, 1.0, 2, 3).unwrap();
        let gj = net.to_geojson();
        assert_eq!(gj["features"].as_array().unwrap().len(), 6);
        assert_eq!(gj["features"][0]["properties"]["cell_id"], "0,0");
    }
}
