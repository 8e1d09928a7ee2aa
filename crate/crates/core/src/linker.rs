//! Segment graph construction, connected components and word-box fitting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::codec::{decode_segments, Segment};
use crate::error::{Error, Result};
use crate::geometry::{direction, normal, Point, RotatedRect};
use crate::maps::{ScaleMaps, CHILDREN};

/// Undirected graph over segments; edges carry the link score that created them.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentGraph {
    nodes: Vec<Segment>,
    edges: Vec<(usize, usize, f64)>,
}

impl SegmentGraph {
    /// Normalises edges to `(low, high)` order and keeps the best score of duplicates.
    pub fn new(nodes: Vec<Segment>, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut best: HashMap<(usize, usize), f64> = HashMap::new();
        for (a, b, score) in edges {
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop on node {a}")));
            }
            if a >= nodes.len() || b >= nodes.len() {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) references a missing node ({} nodes)",
                    nodes.len()
                )));
            }
            let e = best.entry((a.min(b), a.max(b))).or_insert(score);
            *e = e.max(score);
        }
        let mut edges: Vec<_> = best.into_iter().map(|((a, b), s)| (a, b, s)).collect();
        edges.sort_by_key(|e| (e.0, e.1));
        Ok(Self { nodes, edges })
    }

    pub fn nodes(&self) -> &[Segment] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }
}

/// Links segments whose within-scale or cross-scale link score reaches
/// `link_threshold`. A pair is linked if either endpoint's prediction
/// for the other passes.
pub fn build_graph(segments: &[Segment], maps: &ScaleMaps, link_threshold: f64) -> SegmentGraph {
    let lookup: HashMap<(usize, usize, usize), usize> = segments
        .iter()
        .enumerate()
        .map(|(i, s)| ((s.scale_index, s.grid_pos.0, s.grid_pos.1), i))
        .collect();

    let mut edges = Vec::new();
    for (i, s) in segments.iter().enumerate() {
        let Some(m) = maps.get(s.scale_index) else { continue };
        let (row, col) = s.grid_pos;
        for k in 0..8 {
            let Some((r, c)) = m.neighbor(row, col, k) else { continue };
            let Some(&j) = lookup.get(&(s.scale_index, r, c)) else { continue };
            let score = f64::from(m.link_score(row, col, k));
            if score >= link_threshold {
                edges.push((i, j, score));
            }
        }
        if s.scale_index == 0 {
            continue;
        }
        for (k, (di, dj)) in CHILDREN.iter().enumerate() {
            let Some(&j) = lookup.get(&(s.scale_index - 1, 2 * row + di, 2 * col + dj)) else { continue };
            let Some(score) = m.cross_link_score(row, col, k) else { continue };
            let score = f64::from(score);
            if score >= link_threshold {
                edges.push((i, j, score));
            }
        }
    }
    SegmentGraph::new(segments.to_vec(), edges).expect("edges built from valid node indices")
}

/// Connected components by iterative depth-first search. Each component is
/// sorted ascending; components are ordered by their smallest node.
pub fn connected_components(graph: &SegmentGraph) -> Vec<Vec<usize>> {
    let n = graph.nodes.len();
    let mut adj = vec![Vec::new(); n];
    for &(a, b, _) in &graph.edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(v) = stack.pop() {
            comp.push(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}

/// A detected word as an oriented rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordBox {
    pub center: Point,
    pub width: f64,
    pub height: f64,
    pub theta: f64,
    /// Mean score of the contributing segments.
    pub score: f64,
}

impl WordBox {
    pub fn rect(&self) -> RotatedRect {
        RotatedRect { center: self.center, width: self.width, height: self.height, theta: self.theta }
    }

    pub fn corners(&self) -> [Point; 4] {
        self.rect().corners()
    }
}

/// Fits one box to a component.
///
/// The box angle is the circular mean of the segment angles (on doubled
/// angles, so the +-pi/2 wrap is harmless). The box centre line has that
/// angle and passes through the mean perpendicular offset of the centres;
/// it ends half a segment width beyond the first and last projected centre.
/// Height is the mean segment height.
pub fn combine_segments(component: &[Segment]) -> Result<WordBox> {
    if component.is_empty() {
        return Err(Error::InvalidArgument("cannot combine an empty component".into()));
    }
    let (sin2, cos2) = component
        .iter()
        .fold((0.0, 0.0), |(s, c), seg| (s + (2.0 * seg.theta).sin(), c + (2.0 * seg.theta).cos()));
    let theta = if component.len() == 1 { component[0].theta } else { 0.5 * sin2.atan2(cos2) };
    let theta = crate::geometry::normalize_angle(theta);
    let u = direction(theta);
    let v = normal(theta);
    let n = component.len() as f64;

    let offset = component.iter().map(|s| s.center().dot(v)).sum::<f64>() / n;
    let mut first = &component[0];
    let mut last = &component[0];
    let mut tmin = first.center().dot(u);
    let mut tmax = tmin;
    for s in &component[1..] {
        let t = s.center().dot(u);
        if t < tmin {
            tmin = t;
            first = s;
        }
        if t > tmax {
            tmax = t;
            last = s;
        }
    }
    let lo = tmin - first.w / 2.0;
    let hi = tmax + last.w / 2.0;
    let center = u.scale((lo + hi) / 2.0).add(v.scale(offset));

    Ok(WordBox {
        center,
        width: hi - lo,
        height: component.iter().map(|s| s.h).sum::<f64>() / n,
        theta,
        score: component.iter().map(|s| s.score).sum::<f64>() / n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkConfig {
    pub seg_threshold: f64,
    pub link_threshold: f64,
    /// Components with fewer segments are dropped.
    pub min_component_size: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { seg_threshold: 0.5, link_threshold: 0.5, min_component_size: 1 }
    }
}

/// Decode, link and combine: raw head maps to word boxes in input-pixel coordinates.
pub fn detect_words(maps: &ScaleMaps, config: &LinkConfig) -> Vec<WordBox> {
    let segments = decode_segments(maps, config.seg_threshold);
    let graph = build_graph(&segments, maps, config.link_threshold);
    connected_components(&graph)
        .into_iter()
        .filter(|c| c.len() >= config.min_component_size.max(1))
        .map(|c| {
            let segs: Vec<Segment> = c.iter().map(|&i| segments[i]).collect();
            combine_segments(&segs).expect("components are non-empty")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{CLASS_OFFSET, LINK_OFFSET};

    fn seg(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Segment {
        Segment { cx, cy, w, h, theta, score: 1.0, scale_index: 0, grid_pos: (0, 0) }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn positive(maps: &mut ScaleMaps, scale: usize, row: usize, col: usize) {
        maps.scales_mut()[scale].set_pair(CLASS_OFFSET, row, col, -5.0, 5.0);
    }

    fn negative_links(maps: &mut ScaleMaps) {
        for m in maps.scales_mut() {
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    m.set_pair(CLASS_OFFSET, r, c, 5.0, -5.0);
                    for k in 0..8 {
                        m.set_pair(LINK_OFFSET + 2 * k, r, c, 5.0, -5.0);
                    }
                    if m.has_cross_links() {
                        for k in 0..4 {
                            m.set_pair(crate::maps::CROSS_LINK_OFFSET + 2 * k, r, c, 5.0, -5.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn adjacent_positive_link_makes_edge() {
        let mut maps = ScaleMaps::zeros(&[8, 16, 32, 64, 128], 128, 128);
        negative_links(&mut maps);
        positive(&mut maps, 0, 2, 2);
        positive(&mut maps, 0, 2, 3);
        // link from (2,2) to its right neighbour, p = 0.9
        let logit = (0.9f32 / 0.1).ln();
        maps.scales_mut()[0].set_pair(LINK_OFFSET + 2 * 4, 2, 2, 0.0, logit);
        let segs = decode_segments(&maps, 0.5);
        assert_eq!(segs.len(), 2);
        let g = build_graph(&segs, &maps, 0.5);
        assert_eq!(g.edges().len(), 1);
        assert!(close(g.edges()[0].2, 0.9, 1e-6));

        // drop one endpoint below the segment threshold: no edge
        maps.scales_mut()[0].set_pair(CLASS_OFFSET, 2, 3, 1.0, 0.0);
        let segs = decode_segments(&maps, 0.5);
        assert_eq!(build_graph(&segs, &maps, 0.5).edges().len(), 0);
    }

    #[test]
    fn chain_is_one_component() {
        let mut maps = ScaleMaps::zeros(&[8, 16, 32, 64, 128], 128, 128);
        negative_links(&mut maps);
        for c in 4..7 {
            positive(&mut maps, 1, 3, c);
            maps.scales_mut()[1].set_pair(LINK_OFFSET + 2 * 4, 3, c, -5.0, 5.0);
        }
        let segs = decode_segments(&maps, 0.5);
        let g = build_graph(&segs, &maps, 0.5);
        assert_eq!(connected_components(&g), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn cross_scale_edges() {
        let mut maps = ScaleMaps::zeros(&[8, 16, 32, 64, 128], 128, 128);
        negative_links(&mut maps);
        positive(&mut maps, 1, 1, 1);
        positive(&mut maps, 0, 3, 2);
        // child (1, 0) of (1, 1) is (3, 2)
        maps.scales_mut()[1].set_pair(crate::maps::CROSS_LINK_OFFSET + 2 * 2, 1, 1, -5.0, 5.0);
        let segs = decode_segments(&maps, 0.5);
        let g = build_graph(&segs, &maps, 0.5);
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn component_basics() {
        let g = SegmentGraph::new(vec![], vec![]).unwrap();
        assert!(connected_components(&g).is_empty());
        let nodes = vec![seg(0.0, 0.0, 1.0, 1.0, 0.0); 4];
        let g = SegmentGraph::new(nodes.clone(), vec![]).unwrap();
        assert_eq!(connected_components(&g), vec![vec![0], vec![1], vec![2], vec![3]]);
        let g = SegmentGraph::new(nodes.clone(), vec![(3, 1, 0.7), (1, 3, 0.9)]).unwrap();
        assert_eq!(g.edges(), &[(1, 3, 0.9)]);
        assert_eq!(connected_components(&g), vec![vec![0], vec![1, 3], vec![2]]);
        assert!(SegmentGraph::new(nodes.clone(), vec![(2, 2, 1.0)]).is_err());
        assert!(SegmentGraph::new(nodes, vec![(0, 4, 1.0)]).is_err());
    }

    #[test]
    fn long_chain_does_not_recurse() {
        let n = 200_000;
        let nodes = vec![seg(0.0, 0.0, 1.0, 1.0, 0.0); n];
        let g = SegmentGraph::new(nodes, (1..n).map(|i| (i - 1, i, 1.0))).unwrap();
        let comps = connected_components(&g);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].len(), n);
    }

    #[test]
    fn singleton_box_is_the_segment() {
        let s = seg(33.0, 41.0, 12.0, 7.0, 0.3);
        let b = combine_segments(&[s]).unwrap();
        assert!(close(b.center.x, 33.0, 1e-12) && close(b.center.y, 41.0, 1e-12));
        assert!(close(b.width, 12.0, 1e-12) && close(b.height, 7.0, 1e-12) && b.theta == 0.3);
        assert!(combine_segments(&[]).is_err());
    }

    #[test]
    fn two_segment_trace() {
        let b = combine_segments(&[seg(10.0, 10.0, 8.0, 8.0, 0.0), seg(20.0, 10.0, 8.0, 8.0, 0.0)]).unwrap();
        assert!(close(b.center.x, 15.0, 1e-6) && close(b.center.y, 10.0, 1e-6));
        assert!(close(b.width, 18.0, 1e-6) && close(b.height, 8.0, 1e-6) && close(b.theta, 0.0, 1e-12));
    }

    #[test]
    fn angle_mean_survives_wrap() {
        let h = std::f64::consts::FRAC_PI_2;
        let b = combine_segments(&[seg(10.0, 10.0, 8.0, 8.0, h - 0.05), seg(10.0, 20.0, 8.0, 8.0, -h + 0.05 + 1e-9)])
            .unwrap();
        assert!(close(b.theta.abs(), h, 1e-6), "{}", b.theta);
        // vertical word: length along y
        assert!(close(b.width, 18.0, 1e-6));
    }
}
