//! Combined training loss with online hard example mining, and its gradient
//! with respect to the raw head outputs.
//!
//! Class, link and cross-link predictions form one pool of two-way softmax
//! samples. With `P` positive and `N` negative cared-for samples, the
//! `N_h = min(N, max(10, 2P))` highest-loss negatives are "hard" and
//!
//! ```text
//! L = (L_pos + L_geo) / P + L_rest / N + 2 L_hard / (3 N_h)
//! ```
//!
//! where `L_rest` sums the non-hard negatives and `L_geo` is the Huber loss of
//! the geometry channels at positive pixels. Terms with an empty
//! denominator are zero.

use serde::Serialize;

use crate::codec::Targets;
use crate::error::{Error, Result};
use crate::maps::{ScaleMap, ScaleMaps, CLASS_OFFSET, CROSS_LINK_OFFSET, GEOMETRY_OFFSET, LINK_OFFSET};

pub const DEFAULT_HUBER_DELTA: f64 = 1.0;

/// Number of hard negatives: `min(negatives, max(10, 2 * positives))`.
pub fn hard_negative_count(positives: usize, negatives: usize) -> usize {
    negatives.min(10usize.max(2 * positives))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OhemPartition {
    pub positives: Vec<usize>,
    pub hard_negatives: Vec<usize>,
    pub other_negatives: Vec<usize>,
}

/// Splits cared-for samples into positives, hard negatives and the rest,
/// with the hard-negative budget from [`hard_negative_count`].
pub fn ohem_select(losses: &[f64], positive: &[bool], care: &[bool]) -> Result<OhemPartition> {
    check_lengths(losses, positive, care)?;
    let cared = || (0..losses.len()).filter(|&i| care[i]);
    let p = cared().filter(|&i| positive[i]).count();
    let n = cared().filter(|&i| !positive[i]).count();
    ohem_select_n(losses, positive, care, hard_negative_count(p, n))
}

/// Like [`ohem_select`] with an explicit hard-negative budget. Hard negatives
/// are taken by descending loss, lower index first on ties; samples with
/// `care == false` land in no partition.
pub fn ohem_select_n(losses: &[f64], positive: &[bool], care: &[bool], hard: usize) -> Result<OhemPartition> {
    check_lengths(losses, positive, care)?;
    let mut part = OhemPartition::default();
    let mut negatives = Vec::new();
    for i in (0..losses.len()).filter(|&i| care[i]) {
        if positive[i] {
            part.positives.push(i);
        } else {
            negatives.push(i);
        }
    }
    negatives.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    part.other_negatives = negatives.split_off(hard.min(negatives.len()));
    part.hard_negatives = negatives;
    part.hard_negatives.sort_unstable();
    part.other_negatives.sort_unstable();
    Ok(part)
}

fn check_lengths(losses: &[f64], positive: &[bool], care: &[bool]) -> Result<()> {
    if losses.len() != positive.len() || losses.len() != care.len() {
        return Err(Error::shape(
            "ohem",
            losses.len(),
            format!("{} labels, {} care flags", positive.len(), care.len()),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub huber_delta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { huber_delta: DEFAULT_HUBER_DELTA }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Cross-entropy summed over positives.
    pub positive: f64,
    /// Cross-entropy summed over non-hard negatives.
    pub negative: f64,
    /// Cross-entropy summed over hard negatives.
    pub hard: f64,
    /// Huber loss summed over positive-pixel geometry.
    pub geometry: f64,
    pub positive_count: usize,
    pub negative_count: usize,
    pub hard_count: usize,
}

/// Two-way softmax cross-entropy for logits `(negative, positive)`.
pub fn softmax_cross_entropy(logits: [f64; 2], positive: bool) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[usize::from(positive)]
}

fn softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}

pub fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * a * a
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(residual: f64, delta: f64) -> f64 {
    residual.clamp(-delta, delta)
}

/// Where a flattened value lives in the head maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Slot {
    scale: usize,
    channel: usize,
    row: usize,
    col: usize,
}

/// Predictions and targets flattened into loss samples, in `f64`.
///
/// Samples are ordered scale by scale; within a scale, class samples for
/// every pixel come first, then the 8 link samples of every pixel, then the
/// 4 cross-link samples of every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct LossInputs {
    /// `(negative, positive)` logits per sample.
    pub logits: Vec<[f64; 2]>,
    pub positive: Vec<bool>,
    pub care: Vec<bool>,
    /// Predicted geometry at positive, cared-for pixels.
    pub geometry: Vec<[f64; 5]>,
    pub geometry_targets: Vec<[f64; 5]>,
    logit_slots: Vec<Slot>,
    geometry_slots: Vec<Slot>,
}

/// Per-sample gradient of the total loss.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatGradient {
    pub logits: Vec<[f64; 2]>,
    pub geometry: Vec<[f64; 5]>,
}

fn check_grids(maps: &ScaleMaps, targets: &Targets) -> Result<()> {
    if maps.len() != targets.scales.len() {
        return Err(Error::shape("loss", maps.len(), targets.scales.len()));
    }
    for (m, t) in maps.scales().iter().zip(&targets.scales) {
        if (m.rows(), m.cols(), m.has_cross_links(), m.receptive_field())
            != (t.rows, t.cols, t.has_cross_links, t.receptive_field)
        {
            return Err(Error::shape(
                format!("head{}", m.receptive_field()),
                (t.rows, t.cols, t.has_cross_links),
                (m.rows(), m.cols(), m.has_cross_links()),
            ));
        }
    }
    Ok(())
}

impl LossInputs {
    pub fn new(maps: &ScaleMaps, targets: &Targets) -> Result<Self> {
        check_grids(maps, targets)?;
        let mut s = Self {
            logits: Vec::new(),
            positive: Vec::new(),
            care: Vec::new(),
            geometry: Vec::new(),
            geometry_targets: Vec::new(),
            logit_slots: Vec::new(),
            geometry_slots: Vec::new(),
        };
        for (si, (m, t)) in maps.scales().iter().zip(&targets.scales).enumerate() {
            let pixels = (0..t.rows).flat_map(|r| (0..t.cols).map(move |c| (r, c)));
            for (row, col) in pixels.clone() {
                let i = t.index(row, col);
                s.push_sample(m, si, CLASS_OFFSET, row, col, t.labels[i] == 1, t.care[i]);
                if t.labels[i] == 1 && t.care[i] {
                    s.geometry.push(m.geometry(row, col).map(f64::from));
                    s.geometry_targets.push(t.geometry[i].to_array());
                    s.geometry_slots.push(Slot { scale: si, channel: GEOMETRY_OFFSET, row, col });
                }
            }
            for (row, col) in pixels.clone() {
                let i = t.index(row, col);
                for k in 0..8 {
                    s.push_sample(m, si, LINK_OFFSET + 2 * k, row, col, t.links[i][k] == 1, t.link_care[i][k]);
                }
            }
            if t.has_cross_links {
                for (row, col) in pixels {
                    let i = t.index(row, col);
                    for k in 0..4 {
                        s.push_sample(
                            m,
                            si,
                            CROSS_LINK_OFFSET + 2 * k,
                            row,
                            col,
                            t.cross_links[i][k] == 1,
                            t.cross_link_care[i][k],
                        );
                    }
                }
            }
        }
        Ok(s)
    }

    #[allow(clippy::too_many_arguments)]
    fn push_sample(&mut self, m: &ScaleMap, scale: usize, channel: usize, row: usize, col: usize, pos: bool, care: bool) {
        let (n, p) = m.pair(channel, row, col);
        self.logits.push([f64::from(n), f64::from(p)]);
        self.positive.push(pos);
        self.care.push(care);
        self.logit_slots.push(Slot { scale, channel, row, col });
    }

    pub fn sample_losses(&self) -> Vec<f64> {
        self.logits.iter().zip(&self.positive).map(|(l, &p)| softmax_cross_entropy(*l, p)).collect()
    }

    pub fn partition(&self) -> OhemPartition {
        ohem_select(&self.sample_losses(), &self.positive, &self.care).expect("lengths agree by construction")
    }

    fn weights(part: &OhemPartition) -> (f64, f64, f64) {
        let inv = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
        let negatives = part.hard_negatives.len() + part.other_negatives.len();
        let hard = if part.hard_negatives.is_empty() { 0.0 } else { 2.0 / (3.0 * part.hard_negatives.len() as f64) };
        (inv(part.positives.len()), inv(negatives), hard)
    }

    pub fn loss(&self, config: &LossConfig) -> LossBreakdown {
        let losses = self.sample_losses();
        let part = ohem_select(&losses, &self.positive, &self.care).expect("lengths agree by construction");
        let sum = |idx: &[usize]| idx.iter().map(|&i| losses[i]).sum::<f64>();
        let geometry: f64 = self
            .geometry
            .iter()
            .zip(&self.geometry_targets)
            .flat_map(|(p, t)| p.iter().zip(t).map(|(a, b)| huber(a - b, config.huber_delta)))
            .sum();
        let (wp, wn, wh) = Self::weights(&part);
        let positive = sum(&part.positives);
        let negative = sum(&part.other_negatives);
        let hard = sum(&part.hard_negatives);
        LossBreakdown {
            total: wp * (positive + geometry) + wn * negative + wh * hard,
            positive,
            negative,
            hard,
            geometry,
            positive_count: part.positives.len(),
            negative_count: part.hard_negatives.len() + part.other_negatives.len(),
            hard_count: part.hard_negatives.len(),
        }
    }

    /// Gradient of [`LossInputs::loss`] with the hard-negative selection held fixed.
    pub fn gradient(&self, config: &LossConfig) -> FlatGradient {
        let part = self.partition();
        let (wp, wn, wh) = Self::weights(&part);
        let mut logits = vec![[0.0; 2]; self.logits.len()];
        let mut apply = |idx: &[usize], w: f64| {
            for &i in idx {
                let p = softmax(self.logits[i]);
                let y = if self.positive[i] { [0.0, 1.0] } else { [1.0, 0.0] };
                logits[i] = [(p[0] - y[0]) * w, (p[1] - y[1]) * w];
            }
        };
        apply(&part.positives, wp);
        apply(&part.other_negatives, wn);
        apply(&part.hard_negatives, wh);
        let geometry = self
            .geometry
            .iter()
            .zip(&self.geometry_targets)
            .map(|(p, t)| std::array::from_fn(|k| huber_grad(p[k] - t[k], config.huber_delta) * wp))
            .collect();
        FlatGradient { logits, geometry }
    }

    /// Writes a flat gradient back into maps shaped like `like`.
    pub fn scatter(&self, grad: &FlatGradient, like: &ScaleMaps) -> ScaleMaps {
        let mut out = like.clone();
        for m in out.scales_mut() {
            m.data_mut().fill(0.0);
        }
        for (slot, g) in self.logit_slots.iter().zip(&grad.logits) {
            let m = &mut out.scales_mut()[slot.scale];
            m.set(slot.channel, slot.row, slot.col, g[0] as f32);
            m.set(slot.channel + 1, slot.row, slot.col, g[1] as f32);
        }
        for (slot, g) in self.geometry_slots.iter().zip(&grad.geometry) {
            let m = &mut out.scales_mut()[slot.scale];
            for (k, v) in g.iter().enumerate() {
                m.set(slot.channel + k, slot.row, slot.col, *v as f32);
            }
        }
        out
    }
}

pub fn combined_loss(maps: &ScaleMaps, targets: &Targets, config: &LossConfig) -> Result<LossBreakdown> {
    Ok(LossInputs::new(maps, targets)?.loss(config))
}

/// Analytic gradient of [`combined_loss`], shaped like the head maps.
pub fn loss_gradient(maps: &ScaleMaps, targets: &Targets, config: &LossConfig) -> Result<ScaleMaps> {
    let inputs = LossInputs::new(maps, targets)?;
    let grad = inputs.gradient(config);
    Ok(inputs.scatter(&grad, maps))
}
