//! Conversion between head outputs and oriented segments.
//!
//! A pixel at `(row, col)` of a scale with anchor size `a` owns the anchor
//! square centred at `((col + 0.5) a, (row + 0.5) a)`. Its five geometry
//! channels decode as
//!
//! ```text
//! cx = x_a + a * dx      w = a * exp(dw)
//! cy = y_a + a * dy      h = a * exp(dh)      theta = dtheta
//! ```
//!
//! [`encode_ground_truth`] produces the inverse: per-scale class, geometry,
//! link and cross-link targets for a set of word quadrilaterals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{direction, normal, normalize_angle, ConvexPoly, Point, RotatedRect};
use crate::maps::{CHILDREN, NEIGHBORS};

pub use crate::maps::{ScaleMap, ScaleMaps};

/// Default bound on `max(a / h, h / a)` for a word to be assigned to a scale.
pub const DEFAULT_SIZE_RATIO: f64 = 1.5;

/// An oriented rectangle predicted at one head pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// Radians in `(-pi/2, pi/2]`.
    pub theta: f64,
    pub score: f64,
    pub scale_index: usize,
    pub grid_pos: (usize, usize),
}

impl Segment {
    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    pub fn rect(&self) -> RotatedRect {
        RotatedRect { center: self.center(), width: self.w, height: self.h, theta: self.theta }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
    pub dtheta: f64,
}

impl GeometryDelta {
    pub fn from_array(v: [f64; 5]) -> Self {
        Self { dx: v[0], dy: v[1], dw: v[2], dh: v[3], dtheta: v[4] }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.dx, self.dy, self.dw, self.dh, self.dtheta]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// The anchor square of one head pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub size: f64,
    pub row: usize,
    pub col: usize,
}

impl Anchor {
    pub fn new(size: usize, row: usize, col: usize) -> Self {
        Self { size: size as f64, row, col }
    }

    pub fn center(&self) -> Point {
        Point::new((self.col as f64 + 0.5) * self.size, (self.row as f64 + 0.5) * self.size)
    }

    pub fn square(&self) -> ConvexPoly {
        let x0 = self.col as f64 * self.size;
        let y0 = self.row as f64 * self.size;
        ConvexPoly::rect(x0, y0, x0 + self.size, y0 + self.size).expect("anchor size is positive")
    }
}

/// Geometry of `rect` relative to `anchor`.
pub fn encode_rect(rect: &RotatedRect, anchor: &Anchor) -> GeometryDelta {
    let c = anchor.center();
    let a = anchor.size;
    GeometryDelta {
        dx: (rect.center.x - c.x) / a,
        dy: (rect.center.y - c.y) / a,
        dw: (rect.width / a).ln(),
        dh: (rect.height / a).ln(),
        dtheta: normalize_angle(rect.theta),
    }
}

/// Rectangle described by `delta` at `anchor`; the angle is canonicalised.
pub fn decode_delta(delta: &GeometryDelta, anchor: &Anchor) -> RotatedRect {
    let c = anchor.center();
    let a = anchor.size;
    RotatedRect {
        center: Point::new(c.x + a * delta.dx, c.y + a * delta.dy),
        width: a * delta.dw.exp(),
        height: a * delta.dh.exp(),
        theta: normalize_angle(delta.dtheta),
    }
}

/// Segments at every pixel whose text score reaches `seg_threshold`, in
/// scale, row, column order. Centres are clamped to the padded image.
pub fn decode_segments(maps: &ScaleMaps, seg_threshold: f64) -> Vec<Segment> {
    let (max_x, max_y) = maps.image_extent();
    let mut out = Vec::new();
    for (si, m) in maps.scales().iter().enumerate() {
        for row in 0..m.rows() {
            for col in 0..m.cols() {
                let score = f64::from(m.text_score(row, col));
                if score < seg_threshold {
                    continue;
                }
                let delta = GeometryDelta::from_array(m.geometry(row, col).map(f64::from));
                let r = decode_delta(&delta, &Anchor::new(m.receptive_field(), row, col));
                out.push(Segment {
                    cx: r.center.x.clamp(0.0, max_x),
                    cy: r.center.y.clamp(0.0, max_y),
                    w: r.width,
                    h: r.height,
                    theta: r.theta,
                    score,
                    scale_index: si,
                    grid_pos: (row, col),
                });
            }
        }
    }
    out
}

/// A ground-truth word: four vertices in reading order (top-left,
/// top-right, bottom-right, bottom-left) and whether it is scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordQuad {
    points: [Point; 4],
    pub care: bool,
}

impl WordQuad {
    pub fn new(points: [Point; 4], care: bool) -> Result<Self> {
        ConvexPoly::new(points.to_vec())?;
        Ok(Self { points, care })
    }

    pub fn axis_aligned(x0: f64, y0: f64, x1: f64, y1: f64, care: bool) -> Result<Self> {
        Self::new(
            [Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)],
            care,
        )
    }

    pub fn from_rect(rect: &RotatedRect, care: bool) -> Result<Self> {
        Self::new(rect.corners(), care)
    }

    pub fn points(&self) -> &[Point; 4] {
        &self.points
    }

    pub fn poly(&self) -> ConvexPoly {
        ConvexPoly::new(self.points.to_vec()).expect("validated at construction")
    }

    /// Text direction: mean of the top and bottom edge vectors.
    pub fn angle(&self) -> f64 {
        let [p0, p1, p2, p3] = self.points;
        let v = p1.sub(p0).add(p2.sub(p3));
        normalize_angle((-v.y).atan2(v.x))
    }

    /// Smallest rectangle oriented along the text direction that encloses the quad.
    pub fn oriented_rect(&self) -> RotatedRect {
        let theta = self.angle();
        let u = direction(theta);
        let n = normal(theta);
        let (mut ulo, mut uhi, mut nlo, mut nhi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &self.points {
            let (pu, pn) = (p.dot(u), p.dot(n));
            ulo = ulo.min(pu);
            uhi = uhi.max(pu);
            nlo = nlo.min(pn);
            nhi = nhi.max(pn);
        }
        let center = u.scale((ulo + uhi) / 2.0).add(n.scale((nlo + nhi) / 2.0));
        RotatedRect { center, width: uhi - ulo, height: nhi - nlo, theta }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodeConfig {
    pub size_ratio: f64,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self { size_ratio: DEFAULT_SIZE_RATIO }
    }
}

/// Training targets for one scale, flattened row-major over the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleTargets {
    pub receptive_field: usize,
    pub rows: usize,
    pub cols: usize,
    pub has_cross_links: bool,
    /// 1 for text, 0 otherwise.
    pub labels: Vec<u8>,
    /// Index of the word owning each positive pixel.
    pub owner: Vec<Option<usize>>,
    /// False for pixels owned by do-not-care words.
    pub care: Vec<bool>,
    /// Zero at negative pixels.
    pub geometry: Vec<GeometryDelta>,
    pub links: Vec<[u8; 8]>,
    /// False for off-grid neighbours and links touching do-not-care pixels.
    pub link_care: Vec<[bool; 8]>,
    /// All-zero and uncared at the finest scale.
    pub cross_links: Vec<[u8; 4]>,
    pub cross_link_care: Vec<[bool; 4]>,
}

impl ScaleTargets {
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows * self.cols)
            .filter(|&i| self.labels[i] == 1)
            .map(|i| (i / self.cols, i % self.cols))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub scales: Vec<ScaleTargets>,
}

/// Per-scale segment and link targets for `words`.
///
/// A pixel is positive for a word when its anchor centre lies inside the
/// word's oriented rectangle and `max(a / h, h / a) <= size_ratio`. Ties go to
/// the word with the larger anchor intersection, then the lower index. The
/// pixel's segment is the word rectangle cut to the anchor's extent along the
/// text direction; the first and last segments of a word on each scale
/// extend to the word's ends.
pub fn encode_ground_truth(
    words: &[WordQuad],
    receptive_fields: &[usize],
    grids: &[(usize, usize)],
    config: &EncodeConfig,
) -> Result<Targets> {
    if receptive_fields.len() != grids.len() {
        return Err(Error::shape("targets", receptive_fields.len(), grids.len()));
    }
    let rects: Vec<RotatedRect> = words.iter().map(WordQuad::oriented_rect).collect();
    for (i, r) in rects.iter().enumerate() {
        if !(r.width > 0.0 && r.height > 0.0) {
            return Err(Error::DegenerateGeometry(format!("word {i} has zero extent")));
        }
    }
    let polys = rects.iter().map(RotatedRect::to_poly).collect::<Result<Vec<_>>>()?;

    let mut scales: Vec<ScaleTargets> = receptive_fields
        .iter()
        .zip(grids)
        .enumerate()
        .map(|(si, (&rf, &(rows, cols)))| assign_scale(si, rf, rows, cols, &rects, &polys, config))
        .collect();

    for si in 0..scales.len() {
        let (fine, coarse) = scales.split_at_mut(si);
        link_targets(&mut coarse[0], words, fine.last());
    }
    for (si, s) in scales.iter_mut().enumerate() {
        if si == 0 {
            s.has_cross_links = false;
        }
    }
    Ok(Targets { scales })
}

fn assign_scale(
    si: usize,
    rf: usize,
    rows: usize,
    cols: usize,
    rects: &[RotatedRect],
    polys: &[ConvexPoly],
    config: &EncodeConfig,
) -> ScaleTargets {
    let n = rows * cols;
    let a = rf as f64;
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut best_area = vec![0.0f64; n];

    for (wi, (rect, poly)) in rects.iter().zip(polys).enumerate() {
        let ratio = (a / rect.height).max(rect.height / a);
        if ratio > config.size_ratio {
            continue;
        }
        let (x0, y0, x1, y1) = bounds(poly);
        let c0 = ((x0 / a - 0.5).floor().max(0.0)) as usize;
        let r0 = ((y0 / a - 0.5).floor().max(0.0)) as usize;
        let c1 = ((x1 / a - 0.5).ceil().max(0.0) as usize).min(cols.saturating_sub(1));
        let r1 = ((y1 / a - 0.5).ceil().max(0.0) as usize).min(rows.saturating_sub(1));
        for row in r0..=r1.min(rows - 1) {
            for col in c0..=c1 {
                let anchor = Anchor::new(rf, row, col);
                if !rect.contains(anchor.center()) {
                    continue;
                }
                let area = anchor.square().intersection_area(poly);
                let i = row * cols + col;
                // Words are visited in index order, so strict > keeps the lower index on ties.
                if owner[i].is_none() || area > best_area[i] {
                    owner[i] = Some(wi);
                    best_area[i] = area;
                }
            }
        }
    }

    // Extent of each word's positive anchors along its direction.
    let mut span: Vec<Option<(f64, f64)>> = vec![None; rects.len()];
    for (i, o) in owner.iter().enumerate() {
        if let Some(w) = *o {
            let u = along(&rects[w], Anchor::new(rf, i / cols, i % cols).center());
            let e = span[w].get_or_insert((u, u));
            e.0 = e.0.min(u);
            e.1 = e.1.max(u);
        }
    }

    let mut geometry = vec![GeometryDelta::default(); n];
    for (i, o) in owner.iter().enumerate() {
        let Some(w) = *o else { continue };
        let rect = &rects[w];
        let anchor = Anchor::new(rf, i / cols, i % cols);
        let u = along(rect, anchor.center());
        let (umin, umax) = span[w].expect("owner implies span");
        let half = rect.width / 2.0;
        let lo = if u <= umin { -half } else { (u - a / 2.0).max(-half) };
        let hi = if u >= umax { half } else { (u + a / 2.0).min(half) };
        let seg = RotatedRect {
            center: rect.center.add(direction(rect.theta).scale((lo + hi) / 2.0)),
            width: hi - lo,
            height: rect.height,
            theta: rect.theta,
        };
        // Stored at head precision so that exact predictions have zero residual.
        let d = encode_rect(&seg, &anchor).to_array().map(|v| f64::from(v as f32));
        geometry[i] = GeometryDelta::from_array(d);
    }

    ScaleTargets {
        receptive_field: rf,
        rows,
        cols,
        has_cross_links: si > 0,
        labels: owner.iter().map(|o| u8::from(o.is_some())).collect(),
        care: vec![true; n],
        owner,
        geometry,
        links: vec![[0; 8]; n],
        link_care: vec![[false; 8]; n],
        cross_links: vec![[0; 4]; n],
        cross_link_care: vec![[false; 4]; n],
    }
}

fn along(rect: &RotatedRect, p: Point) -> f64 {
    p.sub(rect.center).dot(direction(rect.theta))
}

fn bounds(poly: &ConvexPoly) -> (f64, f64, f64, f64) {
    poly.vertices().iter().fold((f64::MAX, f64::MAX, f64::MIN, f64::MIN), |(a, b, c, d), p| {
        (a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y))
    })
}

fn link_targets(s: &mut ScaleTargets, words: &[WordQuad], finer: Option<&ScaleTargets>) {
    let dont_care = |o: Option<usize>| o.is_some_and(|w| !words[w].care);
    for i in 0..s.rows * s.cols {
        s.care[i] = !dont_care(s.owner[i]);
    }
    for row in 0..s.rows {
        for col in 0..s.cols {
            let i = s.index(row, col);
            let me = s.owner[i];
            for (k, (dr, dc)) in NEIGHBORS.iter().enumerate() {
                let r = row as isize + dr;
                let c = col as isize + dc;
                if r < 0 || c < 0 || r as usize >= s.rows || c as usize >= s.cols {
                    continue;
                }
                let other = s.owner[s.index(r as usize, c as usize)];
                s.links[i][k] = u8::from(me.is_some() && me == other);
                s.link_care[i][k] = !dont_care(me) && !dont_care(other);
            }
            let Some(f) = finer else { continue };
            for (k, (di, dj)) in CHILDREN.iter().enumerate() {
                let (r, c) = (2 * row + di, 2 * col + dj);
                if r >= f.rows || c >= f.cols {
                    continue;
                }
                let child = f.owner[f.index(r, c)];
                s.cross_links[i][k] = u8::from(me.is_some() && me == child);
                s.cross_link_care[i][k] = !dont_care(me) && !dont_care(child);
            }
        }
    }
}

impl Targets {
    /// Head maps whose decoded output reproduces these targets exactly:
    /// logits `+-margin` for every class and link, geometry set to the targets.
    pub fn to_maps(&self, margin: f32) -> Result<ScaleMaps> {
        use crate::maps::{CLASS_OFFSET, CROSS_LINK_OFFSET, GEOMETRY_OFFSET, LINK_OFFSET};
        let pair = |label: u8| if label == 1 { (-margin, margin) } else { (margin, -margin) };
        let mut scales = Vec::with_capacity(self.scales.len());
        for t in &self.scales {
            let mut m = ScaleMap::zeros(t.receptive_field, t.rows, t.cols, t.has_cross_links);
            for row in 0..t.rows {
                for col in 0..t.cols {
                    let i = t.index(row, col);
                    let (n, p) = pair(t.labels[i]);
                    m.set_pair(CLASS_OFFSET, row, col, n, p);
                    for (k, g) in t.geometry[i].to_array().iter().enumerate() {
                        m.set(GEOMETRY_OFFSET + k, row, col, *g as f32);
                    }
                    for k in 0..8 {
                        let (n, p) = pair(t.links[i][k]);
                        m.set_pair(LINK_OFFSET + 2 * k, row, col, n, p);
                    }
                    if t.has_cross_links {
                        for k in 0..4 {
                            let (n, p) = pair(t.cross_links[i][k]);
                            m.set_pair(CROSS_LINK_OFFSET + 2 * k, row, col, n, p);
                        }
                    }
                }
            }
            scales.push(m);
        }
        ScaleMaps::new(scales)
    }
}

/// Grid sizes of `maps`, for passing to [`encode_ground_truth`].
pub fn grid_dims(maps: &ScaleMaps) -> Vec<(usize, usize)> {
    maps.scales().iter().map(|m| (m.rows(), m.cols())).collect()
}

pub fn receptive_fields(maps: &ScaleMaps) -> Vec<usize> {
    maps.scales().iter().map(|m| m.receptive_field()).collect()
}
