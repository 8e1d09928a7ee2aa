//! Independent reference implementations used by the integration tests and
//! the acceptance harness. Nothing here calls the code paths it checks.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::PI;

use fastext::codec::{ScaleTargets, Targets, WordQuad};
use fastext::geometry::{ConvexPoly, Point, RotatedRect};
use fastext::maps::{ScaleMap, ScaleMaps, CLASS_OFFSET, CROSS_LINK_OFFSET, GEOMETRY_OFFSET, LINK_OFFSET};
use fastext::tensor::{ConvParams, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4 {
    let n = shape.iter().product();
    Tensor4::new(shape, (0..n).map(|_| r.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Direct convolution: batch, out channel, out row, out col, in channel, tap.
pub fn direct_conv(x: &Tensor4, p: &ConvParams) -> Vec<f32> {
    let [n, _, h, w] = x.shape();
    let [oc, icg, k, _] = p.kernel_shape();
    let s = p.stride();
    let ocg = oc / p.groups();
    let (oh, ow) = ((h + s - 1) / s, (w + s - 1) / s);
    let pad_y = ((oh - 1) * s + k).saturating_sub(h) / 2;
    let pad_x = ((ow - 1) * s + k).saturating_sub(w) / 2;
    let mut out = vec![0.0f32; n * oc * oh * ow];
    for b in 0..n {
        for o in 0..oc {
            let g = o / ocg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = f64::from(p.bias()[o]);
                    for i in 0..icg {
                        let c = g * icg + i;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - pad_y as isize;
                                let ix = (ox * s + kx) as isize - pad_x as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let wv = p.kernel()[((o * icg + i) * k + ky) * k + kx];
                                acc += f64::from(wv) * f64::from(x.get(b, c, iy as usize, ix as usize));
                            }
                        }
                    }
                    out[((b * oc + o) * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// One random conv case. `kind` 0: full 3x3, 1: depthwise 3x3, 2: pointwise.
pub fn random_conv_case(r: &mut ChaCha8Rng, kind: usize, stride: usize) -> (Tensor4, ConvParams) {
    let n = r.random_range(1..=2);
    let c = r.random_range(1..=8);
    let h = r.random_range(1..=16);
    let w = r.random_range(1..=16);
    let x = random_tensor(r, [n, c, h, w]);
    let (oc, icg, k, groups) = match kind {
        0 => (r.random_range(1..=12), c, 3, 1),
        1 => (c, 1, 3, c),
        _ => (r.random_range(1..=12), c, 1, 1),
    };
    let kernel = (0..oc * icg * k * k).map(|_| r.random_range(-1.0f32..1.0)).collect();
    let bias = (0..oc).map(|_| r.random_range(-1.0f32..1.0)).collect();
    let p = ConvParams::new("case", kernel, [oc, icg, k, k], bias, stride, groups).unwrap();
    (x, p)
}

/// Union-find partition of `0..n`, components sorted by their smallest member.
pub fn union_find(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|c| c[0]);
    out
}

pub fn as_sets(parts: &[Vec<usize>]) -> BTreeSet<BTreeSet<usize>> {
    parts.iter().map(|c| c.iter().copied().collect()).collect()
}

/// Convex quad: four points on a rotated ellipse at sorted random angles.
pub fn random_convex_quad(r: &mut ChaCha8Rng, center: Point, scale: f64) -> ConvexPoly {
    loop {
        let a = scale * r.random_range(0.4..1.0);
        let b = scale * r.random_range(0.2..1.0);
        let rot = r.random_range(0.0..PI);
        let mut t: Vec<f64> = (0..4).map(|_| r.random_range(0.0..2.0 * PI)).collect();
        t.sort_by(f64::total_cmp);
        let pts: Vec<Point> = t
            .iter()
            .map(|&t| Point::new(a * t.cos(), b * t.sin()).rotate_about(Point::new(0.0, 0.0), rot).add(center))
            .collect();
        if let Ok(p) = ConvexPoly::new(pts) {
            if p.area() > 0.05 * scale * scale {
                return p;
            }
        }
    }
}

/// Point-in-convex-polygon by edge sign, independent of the library test.
pub fn inside(poly: &ConvexPoly, p: Point) -> bool {
    let v = poly.vertices();
    let mut sign = 0.0f64;
    for i in 0..v.len() {
        let a = v[i];
        let b = v[(i + 1) % v.len()];
        let c = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if c != 0.0 {
            if sign != 0.0 && c.signum() != sign {
                return false;
            }
            sign = c.signum();
        }
    }
    true
}

/// Monte-Carlo intersection area over the overlap of the bounding boxes,
/// with the fraction of samples that hit.
pub fn monte_carlo_intersection(a: &ConvexPoly, b: &ConvexPoly, samples: usize, seed: u64) -> (f64, f64) {
    let bbox = |p: &ConvexPoly| {
        let xs = p.vertices().iter().map(|v| v.x);
        let ys = p.vertices().iter().map(|v| v.y);
        (
            xs.clone().fold(f64::INFINITY, f64::min),
            ys.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
            ys.fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (ax0, ay0, ax1, ay1) = bbox(a);
    let (bx0, by0, bx1, by1) = bbox(b);
    let (x0, y0, x1, y1) = (ax0.max(bx0), ay0.max(by0), ax1.min(bx1), ay1.min(by1));
    if x0 >= x1 || y0 >= y1 {
        return (0.0, 0.0);
    }
    let mut r = rng(seed);
    let hits = (0..samples)
        .filter(|_| {
            let p = Point::new(r.random_range(x0..x1), r.random_range(y0..y1));
            inside(a, p) && inside(b, p)
        })
        .count();
    let frac = hits as f64 / samples as f64;
    (frac * (x1 - x0) * (y1 - y0), frac)
}

/// Random targets and predictions on a two-scale grid: 4x4 at 8 px and
/// 2x2 at 16 px.
pub fn random_loss_case(seed: u64) -> (ScaleMaps, Targets) {
    let mut r = rng(seed);
    let specs = [(8usize, 4usize, false), (16, 2, true)];
    let mut maps = Vec::new();
    let mut targets = Vec::new();
    for &(rf, n, cross) in &specs {
        let mut m = ScaleMap::zeros(rf, n, n, cross);
        for v in m.data_mut() {
            *v = r.random_range(-3.0f32..3.0);
        }
        let cells = n * n;
        let labels: Vec<u8> = (0..cells).map(|_| u8::from(r.random_bool(0.3))).collect();
        let care: Vec<bool> = (0..cells).map(|_| r.random_bool(0.85)).collect();
        let geometry = (0..cells)
            .map(|i| {
                let mut g = [0.0; 5];
                if labels[i] == 1 {
                    for v in &mut g {
                        *v = r.random_range(-2.5..2.5);
                    }
                }
                fastext::codec::GeometryDelta::from_array(g)
            })
            .collect();
        let links = (0..cells).map(|_| std::array::from_fn(|_| u8::from(r.random_bool(0.3)))).collect();
        let link_care = (0..cells).map(|_| std::array::from_fn(|_| r.random_bool(0.85))).collect();
        let cross_links = (0..cells)
            .map(|_| std::array::from_fn(|_| u8::from(cross && r.random_bool(0.3))))
            .collect();
        let cross_link_care = (0..cells).map(|_| std::array::from_fn(|_| cross && r.random_bool(0.85))).collect();
        targets.push(ScaleTargets {
            receptive_field: rf,
            rows: n,
            cols: n,
            has_cross_links: cross,
            owner: labels.iter().map(|&l| (l == 1).then_some(0)).collect(),
            labels,
            care,
            geometry,
            links,
            link_care,
            cross_links,
            cross_link_care,
        });
        maps.push(m);
    }
    (ScaleMaps::new(maps).unwrap(), Targets { scales: targets })
}

pub struct OracleLoss {
    pub total: f64,
    pub positives: usize,
    pub negatives: usize,
    pub hard: usize,
}

/// Scalar-loop evaluation of the combined loss straight from maps and targets.
pub fn oracle_loss(maps: &ScaleMaps, targets: &Targets, delta: f64) -> OracleLoss {
    let ce = |neg: f32, pos: f32, label: bool| {
        let (n, p) = (f64::from(neg), f64::from(pos));
        let z = n.exp() + p.exp();
        -(if label { p.exp() / z } else { n.exp() / z }).ln()
    };
    let mut pos_loss = 0.0;
    let mut pos_count = 0usize;
    let mut neg: Vec<f64> = Vec::new();
    let mut geo = 0.0;
    for (m, t) in maps.scales().iter().zip(&targets.scales) {
        let mut sample = |channel: usize, row: usize, col: usize, label: u8, care: bool| {
            if !care {
                return;
            }
            let (n, p) = (m.value(channel, row, col), m.value(channel + 1, row, col));
            let l = ce(n, p, label == 1);
            if label == 1 {
                pos_loss += l;
                pos_count += 1;
            } else {
                neg.push(l);
            }
        };
        for row in 0..t.rows {
            for col in 0..t.cols {
                let i = row * t.cols + col;
                sample(CLASS_OFFSET, row, col, t.labels[i], t.care[i]);
                for k in 0..8 {
                    sample(LINK_OFFSET + 2 * k, row, col, t.links[i][k], t.link_care[i][k]);
                }
                if t.has_cross_links {
                    for k in 0..4 {
                        sample(CROSS_LINK_OFFSET + 2 * k, row, col, t.cross_links[i][k], t.cross_link_care[i][k]);
                    }
                }
            }
        }
        for row in 0..t.rows {
            for col in 0..t.cols {
                let i = row * t.cols + col;
                if t.labels[i] == 1 && t.care[i] {
                    let target = t.geometry[i].to_array();
                    for (k, tv) in target.iter().enumerate() {
                        let r = (f64::from(m.value(GEOMETRY_OFFSET + k, row, col)) - tv).abs();
                        geo += if r <= delta { 0.5 * r * r } else { delta * (r - 0.5 * delta) };
                    }
                }
            }
        }
    }
    let n_total = neg.len();
    let n_hard = n_total.min(std::cmp::max(10, 2 * pos_count));
    let mut sorted = neg.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let hard: f64 = sorted[..n_hard].iter().sum();
    let rest: f64 = sorted[n_hard..].iter().sum();
    let mut total = 0.0;
    if pos_count > 0 {
        total += (pos_loss + geo) / pos_count as f64;
    }
    if n_total > 0 {
        total += rest / n_total as f64;
    }
    if n_hard > 0 {
        total += 2.0 * hard / (3.0 * n_hard as f64);
    }
    OracleLoss { total, positives: pos_count, negatives: n_total, hard: n_hard }
}

/// Planted words on a 512 x 512 canvas, spread over several scales and angles.
pub fn synthetic_layout() -> Vec<WordQuad> {
    let words = [
        (120.0, 60.0, 150.0, 14.0, 0.0),
        (380.0, 70.0, 180.0, 28.0, 0.15),
        (150.0, 200.0, 220.0, 40.0, -0.3),
        (360.0, 260.0, 110.0, 20.0, 0.6),
        (250.0, 400.0, 380.0, 70.0, 0.05),
        (90.0, 320.0, 90.0, 10.0, -0.5),
    ];
    words
        .iter()
        .map(|&(cx, cy, w, h, theta)| {
            WordQuad::from_rect(&RotatedRect { center: Point::new(cx, cy), width: w, height: h, theta }, true).unwrap()
        })
        .collect()
}
