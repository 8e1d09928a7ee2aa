//! Image in, oriented word boxes out, in original image coordinates.

use crate::codec::WordQuad;
use crate::error::{Error, Result};
use crate::formats::format_detection;
use crate::geometry::Point;
use crate::image::{prepare, RgbImage};
use crate::linker::{detect_words, LinkConfig, WordBox};
use crate::model::{build_network, Network, WeightStore, MIN_INPUT_SIDE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub seg_threshold: f64,
    pub link_threshold: f64,
    /// Target length of the smaller image side after resizing.
    pub min_side: usize,
    /// Network input is zero-padded to multiples of this.
    pub pad_to: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seg_threshold: 0.5, link_threshold: 0.5, min_side: 512, pad_to: 128 }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("segment", self.seg_threshold), ("link", self.link_threshold)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidArgument(format!("{name} threshold {t} outside [0, 1]")));
            }
        }
        if self.min_side < MIN_INPUT_SIDE {
            return Err(Error::InvalidArgument(format!(
                "min side {} below {MIN_INPUT_SIDE}",
                self.min_side
            )));
        }
        if self.pad_to == 0 {
            return Err(Error::InvalidArgument("pad multiple must be positive".into()));
        }
        Ok(())
    }

    fn link_config(&self) -> LinkConfig {
        LinkConfig { seg_threshold: self.seg_threshold, link_threshold: self.link_threshold, ..LinkConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectedWord {
    /// Corners in original image pixels.
    pub corners: [Point; 4],
    pub score: f64,
    /// The box as predicted, in network-input pixels.
    pub network_box: WordBox,
}

impl DetectedWord {
    pub fn quad(&self) -> Result<WordQuad> {
        WordQuad::new(self.corners, true)
    }
}

pub struct Detector {
    network: Network,
    config: RunConfig,
}

impl Detector {
    pub fn new(network: Network, config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { network, config })
    }

    pub fn from_weights(weights: &WeightStore, config: RunConfig) -> Result<Self> {
        Self::new(build_network(&weights.config(), weights)?, config)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn detect(&self, image: &RgbImage) -> Result<Vec<DetectedWord>> {
        run(&self.network, image, &self.config)
    }
}

/// Detection with per-call settings.
pub fn detect_image(network: &Network, image: &RgbImage, config: &RunConfig) -> Result<Vec<DetectedWord>> {
    config.validate()?;
    run(network, image, config)
}

fn run(network: &Network, image: &RgbImage, config: &RunConfig) -> Result<Vec<DetectedWord>> {
    let prepared = prepare(image, config.min_side, config.pad_to)?;
    let maps = network.forward(&prepared.tensor)?;
    Ok(detect_words(&maps, &config.link_config())
        .into_iter()
        .map(|b| DetectedWord {
            corners: b.corners().map(|p| prepared.to_original(p)),
            score: b.score,
            network_box: b,
        })
        .collect())
}

/// One `x1,...,y4,score` line per word.
pub fn detections_to_text(words: &[DetectedWord]) -> String {
    words.iter().map(|w| format_detection(&w.corners, w.score) + "\n").collect()
}

pub fn annotate(image: &RgbImage, words: &[DetectedWord]) -> RgbImage {
    let mut out = image.clone();
    for w in words {
        out.draw_polygon(&w.corners, [0, 255, 0]);
    }
    out
}
