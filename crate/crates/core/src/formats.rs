//! Text formats for ground truth and detections, and directory-level evaluation.
//!
//! Ground truth lines are ICDAR style, `x1,y1,x2,y2,x3,y3,x4,y4,transcription`,
//! or the axis-aligned `x1,y1,x2,y2,transcription` form (comma or space
//! separated). A transcription of `###` marks a do-not-care region.
//! Detection lines are `x1,y1,x2,y2,x3,y3,x4,y4,score`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::codec::WordQuad;
use crate::error::{Error, Result};
use crate::eval::{match_detections, Detection, MatchConfig, MatchReport};
use crate::geometry::Point;

pub const DONT_CARE: &str = "###";

fn fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn numbers(fields: &[&str]) -> Vec<f64> {
    fields.iter().map_while(|f| f.parse::<f64>().ok().filter(|v| v.is_finite())).collect()
}

fn quad_points(v: &[f64]) -> [Point; 4] {
    std::array::from_fn(|i| Point::new(v[2 * i], v[2 * i + 1]))
}

/// Parses one ground-truth line; blank lines yield `None`.
pub fn parse_gt_line(line: &str) -> std::result::Result<Option<WordQuad>, String> {
    let line = line.trim_start_matches('\u{feff}').trim();
    if line.is_empty() {
        return Ok(None);
    }
    let f = fields(line);
    let nums = numbers(&f);
    let (points, used) = if nums.len() >= 8 {
        (quad_points(&nums[..8]), 8)
    } else if nums.len() >= 4 {
        let (x0, y0, x1, y1) = (nums[0], nums[1], nums[2], nums[3]);
        ([Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)], 4)
    } else {
        return Err(format!("expected 4 or 8 coordinates, found {}", nums.len()));
    };
    let sep = if line.contains(',') { "," } else { " " };
    let text = f[used..].join(sep);
    let text = text.trim().trim_matches('"');
    WordQuad::new(points, text != DONT_CARE).map(Some).map_err(|e| e.to_string())
}

pub fn parse_gt(text: &str, path: &Path) -> Result<Vec<WordQuad>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match parse_gt_line(line) {
            Ok(Some(q)) => out.push(q),
            Ok(None) => {}
            Err(message) => return Err(Error::Parse { path: path.to_path_buf(), line: i + 1, message }),
        }
    }
    Ok(out)
}

pub fn read_gt_file(path: impl AsRef<Path>) -> Result<Vec<WordQuad>> {
    let path = path.as_ref();
    parse_gt(&fs::read_to_string(path).map_err(Error::file(path))?, path)
}

/// Parses one detection line; the score defaults to 1 when absent.
pub fn parse_detection_line(line: &str) -> std::result::Result<Option<Detection>, String> {
    let line = line.trim_start_matches('\u{feff}').trim();
    if line.is_empty() {
        return Ok(None);
    }
    let nums = numbers(&fields(line));
    if nums.len() < 8 {
        return Err(format!("expected 8 coordinates, found {}", nums.len()));
    }
    let score = nums.get(8).copied().unwrap_or(1.0);
    Detection::from_points(quad_points(&nums[..8]), score).map(Some).map_err(|e| e.to_string())
}

pub fn parse_detections(text: &str, path: &Path) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match parse_detection_line(line) {
            Ok(Some(d)) => out.push(d),
            Ok(None) => {}
            Err(message) => return Err(Error::Parse { path: path.to_path_buf(), line: i + 1, message }),
        }
    }
    Ok(out)
}

pub fn read_detection_file(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    parse_detections(&fs::read_to_string(path).map_err(Error::file(path))?, path)
}

/// `x1,y1,...,x4,y4,score` with two decimals.
pub fn format_detection(points: &[Point; 4], score: f64) -> String {
    let mut s = String::new();
    for p in points {
        s.push_str(&format!("{:.2},{:.2},", p.x, p.y));
    }
    s.push_str(&format!("{score:.2}"));
    s
}

pub fn format_gt(quad: &WordQuad, text: &str) -> String {
    let mut s = String::new();
    for p in quad.points() {
        s.push_str(&format!("{},{},", p.x, p.y));
    }
    s.push_str(if quad.care { text } else { DONT_CARE });
    s
}

#[derive(Clone, Debug, Serialize)]
pub struct ImageReport {
    pub stem: String,
    pub report: MatchReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct CorpusReport {
    pub images: Vec<ImageReport>,
    pub total: MatchReport,
}

fn txt_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(Error::file(dir))? {
        let path = entry.map_err(Error::file(dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Evaluates every ground-truth file against the detection file with the
/// same stem. A missing detection file counts as no detections.
pub fn evaluate_dirs(gt_dir: &Path, det_dir: &Path, config: &MatchConfig) -> Result<CorpusReport> {
    let gts = txt_files(gt_dir)?;
    let dets = txt_files(det_dir)?;
    if gts.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no ground-truth .txt files in {}",
            gt_dir.display()
        )));
    }
    let images = gts
        .par_iter()
        .map(|(stem, gt_path)| {
            let gt = read_gt_file(gt_path)?;
            let det = match dets.get(stem) {
                Some(p) => read_detection_file(p)?,
                None => Vec::new(),
            };
            Ok(ImageReport { stem: stem.clone(), report: match_detections(&gt, &det, config) })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = MatchReport::aggregate(images.iter().map(|i| &i.report));
    Ok(CorpusReport { images, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icdar_lines() {
        let q = parse_gt_line("377,117,463,117,465,130,378,130,Genaxis Theatre").unwrap().unwrap();
        assert!(q.care);
        assert_eq!(q.points()[2], Point::new(465.0, 130.0));
        let q = parse_gt_line("\u{feff}374,155,409,155,409,170,374,170,###").unwrap().unwrap();
        assert!(!q.care);
    }

    #[test]
    fn two_point_formats() {
        let q = parse_gt_line("38, 43, 920, 215, \"Tiredness\"").unwrap().unwrap();
        assert_eq!(q.points()[1], Point::new(920.0, 43.0));
        assert!(q.care);
        let q = parse_gt_line("10 20 50 40 \"###\"").unwrap().unwrap();
        assert!(!q.care);
        assert_eq!(q.points()[3], Point::new(10.0, 40.0));
    }

    #[test]
    fn bad_lines_report_position() {
        let err = parse_gt("0,0,10,0,10,10,0,10,ok\n\nfoo,bar\n", Path::new("gt_1.txt")).unwrap_err();
        match err {
            Error::Parse { line, path, .. } => {
                assert_eq!(line, 3);
                assert_eq!(path, Path::new("gt_1.txt"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_gt_line("0,0,0,0,0,0,0,0,x").is_err());
    }

    #[test]
    fn detection_line_round_trip() {
        let pts = [Point::new(1.0, 2.0), Point::new(11.005, 2.0), Point::new(11.0, 12.0), Point::new(1.0, 12.0)];
        let line = format_detection(&pts, 0.987);
        assert_eq!(line, "1.00,2.00,11.01,2.00,11.00,12.00,1.00,12.00,0.99");
        let d = parse_detection_line(&line).unwrap().unwrap();
        assert_eq!(d.score, 0.99);
        assert!((d.poly.area() - 100.0).abs() < 0.1);
    }
}
