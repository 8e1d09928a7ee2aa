//! Raw per-scale head outputs and their channel layout.
//!
//! Each head pixel carries, in order: 2 class logits (non-text, text),
//! 5 geometry values (dx, dy, dw, dh, dtheta), 8 within-scale link logit
//! pairs and, except at the finest scale, 4 cross-scale link logit pairs.
//! Every pair is stored as (negative, positive).

use crate::error::{Error, Result};
use crate::tensor::{softmax2, Tensor4};

pub const CLASS_CHANNELS: usize = 2;
pub const GEOMETRY_CHANNELS: usize = 5;
pub const LINK_CHANNELS: usize = 16;
pub const CROSS_LINK_CHANNELS: usize = 8;

pub const CLASS_OFFSET: usize = 0;
pub const GEOMETRY_OFFSET: usize = CLASS_OFFSET + CLASS_CHANNELS;
pub const LINK_OFFSET: usize = GEOMETRY_OFFSET + GEOMETRY_CHANNELS;
pub const CROSS_LINK_OFFSET: usize = LINK_OFFSET + LINK_CHANNELS;

/// Channels of the finest head (no cross-scale links).
pub const FIRST_HEAD_CHANNELS: usize = CROSS_LINK_OFFSET;
/// Channels of every other head.
pub const HEAD_CHANNELS: usize = CROSS_LINK_OFFSET + CROSS_LINK_CHANNELS;

/// Within-scale neighbour offsets `(drow, dcol)`, one per link pair.
pub const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Offsets of the 4 children at the next finer scale, one per cross-link pair.
pub const CHILDREN: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// Index of the link pointing back along `NEIGHBORS[k]`.
pub fn opposite_neighbor(k: usize) -> usize {
    NEIGHBORS.len() - 1 - k
}

pub fn head_channels(has_cross_links: bool) -> usize {
    if has_cross_links {
        HEAD_CHANNELS
    } else {
        FIRST_HEAD_CHANNELS
    }
}

/// Raw outputs of one head, laid out channel-major (`C x rows x cols`).
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleMap {
    receptive_field: usize,
    rows: usize,
    cols: usize,
    has_cross_links: bool,
    data: Vec<f32>,
}

impl ScaleMap {
    pub fn new(
        receptive_field: usize,
        rows: usize,
        cols: usize,
        has_cross_links: bool,
        data: Vec<f32>,
    ) -> Result<Self> {
        let expected = head_channels(has_cross_links) * rows * cols;
        if data.len() != expected || rows == 0 || cols == 0 {
            return Err(Error::shape(
                format!("head{receptive_field}"),
                (head_channels(has_cross_links), rows, cols),
                data.len(),
            ));
        }
        Ok(Self { receptive_field, rows, cols, has_cross_links, data })
    }

    pub fn zeros(receptive_field: usize, rows: usize, cols: usize, has_cross_links: bool) -> Self {
        let len = head_channels(has_cross_links) * rows * cols;
        Self { receptive_field, rows, cols, has_cross_links, data: vec![0.0; len] }
    }

    /// Wraps a `1 x C x rows x cols` head tensor.
    pub fn from_tensor(receptive_field: usize, tensor: Tensor4) -> Result<Self> {
        let [n, c, rows, cols] = tensor.shape();
        let has_cross_links = match c {
            FIRST_HEAD_CHANNELS => false,
            HEAD_CHANNELS => true,
            _ => {
                return Err(Error::shape(
                    format!("head{receptive_field}"),
                    format!("{FIRST_HEAD_CHANNELS} or {HEAD_CHANNELS} channels"),
                    c,
                ))
            }
        };
        if n != 1 {
            return Err(Error::shape(format!("head{receptive_field}"), "batch 1", n));
        }
        Self::new(receptive_field, rows, cols, has_cross_links, tensor.into_data())
    }

    pub fn receptive_field(&self) -> usize {
        self.receptive_field
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn has_cross_links(&self) -> bool {
        self.has_cross_links
    }

    pub fn channels(&self) -> usize {
        head_channels(self.has_cross_links)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn offset(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.rows + row) * self.cols + col
    }

    #[inline]
    pub fn value(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[self.offset(channel, row, col)]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, v: f32) {
        let i = self.offset(channel, row, col);
        self.data[i] = v;
    }

    /// Sets a (negative, positive) logit pair starting at `channel`.
    pub fn set_pair(&mut self, channel: usize, row: usize, col: usize, neg: f32, pos: f32) {
        self.set(channel, row, col, neg);
        self.set(channel + 1, row, col, pos);
    }

    pub fn pair(&self, channel: usize, row: usize, col: usize) -> (f32, f32) {
        (self.value(channel, row, col), self.value(channel + 1, row, col))
    }

    pub fn text_score(&self, row: usize, col: usize) -> f32 {
        let (n, p) = self.pair(CLASS_OFFSET, row, col);
        softmax2(n, p).1
    }

    pub fn geometry(&self, row: usize, col: usize) -> [f32; GEOMETRY_CHANNELS] {
        std::array::from_fn(|i| self.value(GEOMETRY_OFFSET + i, row, col))
    }

    pub fn link_score(&self, row: usize, col: usize, neighbor: usize) -> f32 {
        let (n, p) = self.pair(LINK_OFFSET + 2 * neighbor, row, col);
        softmax2(n, p).1
    }

    pub fn cross_link_score(&self, row: usize, col: usize, child: usize) -> Option<f32> {
        self.has_cross_links.then(|| {
            let (n, p) = self.pair(CROSS_LINK_OFFSET + 2 * child, row, col);
            softmax2(n, p).1
        })
    }

    /// Grid position of neighbour `k`, if it lies on the grid.
    pub fn neighbor(&self, row: usize, col: usize, k: usize) -> Option<(usize, usize)> {
        let (dr, dc) = NEIGHBORS[k];
        let r = row as isize + dr;
        let c = col as isize + dc;
        (r >= 0 && c >= 0 && (r as usize) < self.rows && (c as usize) < self.cols)
            .then_some((r as usize, c as usize))
    }
}

/// Head outputs of all scales, ordered fine to coarse.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleMaps {
    scales: Vec<ScaleMap>,
}

impl ScaleMaps {
    /// Only the first scale may (and must) lack cross-link channels.
    pub fn new(scales: Vec<ScaleMap>) -> Result<Self> {
        for (i, s) in scales.iter().enumerate() {
            if s.has_cross_links != (i > 0) {
                return Err(Error::shape(
                    format!("head{}", s.receptive_field),
                    head_channels(i > 0),
                    s.channels(),
                ));
            }
        }
        Ok(Self { scales })
    }

    pub fn from_heads(heads: Vec<Tensor4>, receptive_fields: &[usize]) -> Result<Self> {
        if heads.len() != receptive_fields.len() {
            return Err(Error::shape("heads", receptive_fields.len(), heads.len()));
        }
        let scales = heads
            .into_iter()
            .zip(receptive_fields)
            .map(|(t, &rf)| ScaleMap::from_tensor(rf, t))
            .collect::<Result<Vec<_>>>()?;
        Self::new(scales)
    }

    /// Zero-valued maps for an image of `height x width` pixels.
    pub fn zeros(receptive_fields: &[usize], height: usize, width: usize) -> Self {
        let scales = receptive_fields
            .iter()
            .enumerate()
            .map(|(i, &rf)| ScaleMap::zeros(rf, height.div_ceil(rf), width.div_ceil(rf), i > 0))
            .collect();
        Self { scales }
    }

    pub fn scales(&self) -> &[ScaleMap] {
        &self.scales
    }

    pub fn scales_mut(&mut self) -> &mut [ScaleMap] {
        &mut self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&ScaleMap> {
        self.scales.get(index)
    }

    /// Extent covered by the finest grid, in input pixels.
    pub fn image_extent(&self) -> (f64, f64) {
        self.scales
            .first()
            .map(|s| ((s.cols * s.receptive_field) as f64, (s.rows * s.receptive_field) as f64))
            .unwrap_or((0.0, 0.0))
    }
}
