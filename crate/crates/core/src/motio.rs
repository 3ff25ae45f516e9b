//! Sequence and annotation file I/O in the MOT-Challenge layout:
//! `seqinfo.ini` sequence descriptions, comma-separated detection and
//! ground-truth files, per-detection embedding files, and the standard
//! result format. Box coordinates are passed through unchanged.

use crate::association::Detection;
use crate::error::Error;
use crate::evaluation::FrameBoxes;
use crate::geometry::BoundingBox;
use crate::imgcore::{to_grayscale, ColorImage, GrayImage};
use crate::pipeline::{DetectionSource, FrameSource};
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Contents of a `seqinfo.ini` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqInfo {
    pub name: String,
    pub im_dir: String,
    pub frame_rate: f64,
    pub seq_length: u32,
    pub im_width: u32,
    pub im_height: u32,
    pub im_ext: String,
}

/// Parses the `[Sequence]` section of a `seqinfo.ini` file. All seven keys
/// are required.
pub fn parse_seqinfo(path: &Path) -> Result<SeqInfo, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut in_sequence = false;
    let mut values: HashMap<String, (String, usize)> = HashMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with(';') || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(Error::format(
                    path,
                    Some(index + 1),
                    "unterminated section header",
                ));
            }
            in_sequence = line[1..line.len() - 1]
                .trim()
                .eq_ignore_ascii_case("sequence");
            continue;
        }
        if !in_sequence {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::format(path, Some(index + 1), "expected key=value"));
        };
        values.insert(
            key.trim().to_string(),
            (value.trim().to_string(), index + 1),
        );
    }

    let take = |key: &str| -> Result<(String, usize), Error> {
        values
            .get(key)
            .cloned()
            .ok_or_else(|| Error::format(path, None, format!("missing key '{key}' in [Sequence]")))
    };
    let parse_num = |key: &str| -> Result<f64, Error> {
        let (value, line) = take(key)?;
        value.parse::<f64>().map_err(|_| {
            Error::format(
                path,
                Some(line),
                format!("'{key}' is not a number: {value}"),
            )
        })
    };
    let parse_count = |key: &str| -> Result<u32, Error> {
        let (value, line) = take(key)?;
        value.parse::<u32>().map_err(|_| {
            Error::format(path, Some(line), format!("'{key}' is not a count: {value}"))
        })
    };
    Ok(SeqInfo {
        name: take("name")?.0,
        im_dir: take("imDir")?.0,
        frame_rate: parse_num("frameRate")?,
        seq_length: parse_count("seqLength")?,
        im_width: parse_count("imWidth")?,
        im_height: parse_count("imHeight")?,
        im_ext: take("imExt")?.0,
    })
}

struct MotRow {
    frame: u32,
    id: i64,
    bbox: BoundingBox,
    conf: f64,
}

/// Parses `frame,id,x,y,w,h,conf[,...]` rows: 7 to 10 comma-separated
/// fields, errors carry the 1-based line number.
fn parse_mot_rows(path: &Path) -> Result<Vec<MotRow>, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(7..=10).contains(&fields.len()) {
            return Err(Error::format(
                path,
                Some(line_no),
                format!("expected 7 to 10 fields, got {}", fields.len()),
            ));
        }
        let int = |i: usize, what: &str| -> Result<i64, Error> {
            fields[i].parse::<i64>().map_err(|_| {
                Error::format(
                    path,
                    Some(line_no),
                    format!("{what} is not an integer: {}", fields[i]),
                )
            })
        };
        let num = |i: usize, what: &str| -> Result<f64, Error> {
            let v = fields[i].parse::<f64>().map_err(|_| {
                Error::format(
                    path,
                    Some(line_no),
                    format!("{what} is not a number: {}", fields[i]),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::format(
                    path,
                    Some(line_no),
                    format!("{what} is not finite"),
                ));
            }
            Ok(v)
        };
        let frame = int(0, "frame")?;
        if frame < 1 {
            return Err(Error::format(
                path,
                Some(line_no),
                "frame numbers start at 1",
            ));
        }
        rows.push(MotRow {
            frame: frame as u32,
            id: int(1, "id")?,
            bbox: BoundingBox::new(num(2, "x")?, num(3, "y")?, num(4, "w")?, num(5, "h")?),
            conf: num(6, "conf")?,
        });
    }
    Ok(rows)
}

/// Reads a ground-truth file. Rows whose seventh field (the consider flag)
/// is zero are excluded; ids must be positive.
pub fn read_mot_ground_truth(path: &Path) -> Result<FrameBoxes, Error> {
    let rows = parse_mot_rows(path)?;
    let mut out = FrameBoxes::new();
    for row in rows {
        if row.conf == 0.0 {
            continue;
        }
        if row.id < 1 {
            return Err(Error::format(
                path,
                None,
                format!(
                    "ground-truth id {} on frame {} is not positive",
                    row.id, row.frame
                ),
            ));
        }
        out.entry(row.frame)
            .or_default()
            .push((row.id as u64, row.bbox));
    }
    Ok(out)
}

/// Reads a detection file. With `normalize` set, raw scores above 1 are
/// min-max rescaled over the whole file; confidences are always clamped to
/// `[0, 1]` afterwards.
pub fn read_mot_detections(
    path: &Path,
    normalize: bool,
) -> Result<BTreeMap<u32, Vec<Detection>>, Error> {
    let rows = parse_mot_rows(path)?;
    let mut confidences: Vec<f64> = rows.iter().map(|r| r.conf).collect();
    if normalize {
        let max = confidences
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if max > 1.0 {
            let min = confidences.iter().copied().fold(f64::INFINITY, f64::min);
            let span = max - min;
            for c in &mut confidences {
                *c = if span > 1e-12 { (*c - min) / span } else { 1.0 };
            }
        }
    }
    let mut out: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for (row, conf) in rows.into_iter().zip(confidences) {
        out.entry(row.frame)
            .or_default()
            .push(Detection::new(row.bbox, conf.clamp(0.0, 1.0)));
    }
    Ok(out)
}

/// Reads per-detection appearance vectors: each line is
/// `frame,v1,...,vD`. The dimension is fixed by the first line; vectors are
/// L2-normalized on read; a zero vector is an error. Within a frame, lines
/// correspond to detections in file order (ordinal 0, 1, ...).
pub fn read_embeddings(path: &Path) -> Result<HashMap<(u32, usize), Vec<f64>>, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: HashMap<(u32, usize), Vec<f64>> = HashMap::new();
    let mut next_ordinal: HashMap<u32, usize> = HashMap::new();
    let mut dim: Option<usize> = None;
    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::format(
                path,
                Some(line_no),
                "expected frame plus vector values",
            ));
        }
        let frame: u32 = fields[0].parse().map_err(|_| {
            Error::format(
                path,
                Some(line_no),
                format!("frame is not a count: {}", fields[0]),
            )
        })?;
        let values: Vec<f64> = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::format(
                        path,
                        Some(line_no),
                        format!("vector value is not a number: {f}"),
                    )
                })
            })
            .collect::<Result<_, _>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::format(
                    path,
                    Some(line_no),
                    format!("vector has {} values, expected {d}", values.len()),
                ));
            }
            _ => {}
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::format(path, Some(line_no), "zero appearance vector"));
        }
        let normalized: Vec<f64> = values.iter().map(|v| v / norm).collect();
        let ordinal = next_ordinal.entry(frame).or_insert(0);
        out.insert((frame, *ordinal), normalized);
        *ordinal += 1;
    }
    Ok(out)
}

/// Writes tracked boxes in the standard result format:
/// `frame,id,x,y,w,h,1,-1,-1,-1` with two-decimal box values, sorted by
/// frame then id, one row per line, trailing newline.
pub fn write_results(path: &Path, boxes: &FrameBoxes) -> Result<(), Error> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buffer = String::new();
    for (frame, entries) in boxes {
        let mut sorted = entries.clone();
        sorted.sort_unstable_by_key(|(id, _)| *id);
        for (id, b) in sorted {
            buffer.push_str(&format!(
                "{frame},{id},{:.2},{:.2},{:.2},{:.2},1,-1,-1,-1\n",
                b.x, b.y, b.w, b.h
            ));
        }
    }
    file.write_all(buffer.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Frames decoded on demand from an image directory in the standard layout:
/// `<image_dir>/000001<ext>`, `000002<ext>`, ...
#[derive(Debug, Clone)]
pub struct SequenceFrames {
    image_dir: PathBuf,
    ext: String,
    count: u32,
}

impl SequenceFrames {
    /// Opens a sequence directory containing `seqinfo.ini`.
    pub fn open(seq_dir: &Path) -> Result<Self, Error> {
        let info = parse_seqinfo(&seq_dir.join("seqinfo.ini"))?;
        Ok(SequenceFrames {
            image_dir: seq_dir.join(&info.im_dir),
            ext: info.im_ext,
            count: info.seq_length,
        })
    }

    pub fn from_parts(image_dir: PathBuf, ext: String, count: u32) -> Self {
        SequenceFrames {
            image_dir,
            ext,
            count,
        }
    }

    pub fn frame_path(&self, frame: u32) -> PathBuf {
        self.image_dir.join(format!("{frame:06}{}", self.ext))
    }
}

impl FrameSource for SequenceFrames {
    fn num_frames(&self) -> u32 {
        self.count
    }

    fn frame(&mut self, frame: u32) -> Result<GrayImage, Error> {
        let path = self.frame_path(frame);
        let decoded = image::open(&path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(&path, io),
            other => Error::format(&path, None, other.to_string()),
        })?;
        let rgb = decoded.to_rgb8();
        let color = ColorImage::new(rgb.width() as usize, rgb.height() as usize, rgb.into_raw())?;
        Ok(to_grayscale(&color))
    }
}

/// Detections loaded from a file, optionally with appearance vectors
/// attached by `(frame, ordinal)`.
#[derive(Debug, Clone, Default)]
pub struct FileDetections {
    frames: BTreeMap<u32, Vec<Detection>>,
}

impl FileDetections {
    pub fn load(path: &Path, normalize: bool) -> Result<Self, Error> {
        Ok(FileDetections {
            frames: read_mot_detections(path, normalize)?,
        })
    }

    /// Attaches embeddings to detections by position within each frame.
    /// Returns how many detections received one.
    pub fn attach_embeddings(&mut self, path: &Path) -> Result<usize, Error> {
        let embeddings = read_embeddings(path)?;
        let mut attached = 0;
        for (frame, dets) in &mut self.frames {
            for (ordinal, det) in dets.iter_mut().enumerate() {
                if let Some(e) = embeddings.get(&(*frame, ordinal)) {
                    det.embedding = Some(e.clone());
                    attached += 1;
                }
            }
        }
        if !embeddings.is_empty() && attached == 0 {
            return Err(Error::format(
                path,
                None,
                "appearance vectors do not line up with any detection",
            ));
        }
        Ok(attached)
    }

    pub fn frames(&self) -> &BTreeMap<u32, Vec<Detection>> {
        &self.frames
    }
}

impl DetectionSource for FileDetections {
    fn detections(&mut self, frame: u32) -> Result<Vec<Detection>, Error> {
        Ok(self.frames.get(&frame).cloned().unwrap_or_default())
    }
}
