//! Plain-text import: one frame per line,
//! `videoId,subjectId,label,frameIndex,v_1,...,v_D`.
//!
//! No header row. Lines starting with `#` are ignored. Frames are ordered
//! by frame index within each video; videos keep first-appearance order.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{FanError, Result};
use crate::numkernel::Matrix;
use crate::scalar::Scalar;

use super::{Dataset, VideoInstance};

struct Pending<T> {
    subject_id: String,
    label: usize,
    frames: Vec<(usize, Vec<T>)>,
}

/// Reads a CSV frame table. `class_names` fixes C; without it, C is
/// `max label + 1` and classes are named `class0`, `class1`, ...
pub fn import_csv<T: Scalar>(
    path: impl AsRef<Path>,
    class_names: Option<Vec<String>>,
) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| FanError::Io(std::io::Error::other(e)))?;

    let mut order: Vec<String> = Vec::new();
    let mut videos: HashMap<String, Pending<T>> = HashMap::new();
    let mut dim: Option<usize> = None;

    for (line, record) in reader.records().enumerate() {
        let line = line + 1;
        let record = record.map_err(|e| FanError::Format(format!("line {line}: {e}")))?;
        if record.len() < 5 {
            return Err(FanError::Schema(format!(
                "line {line}: expected videoId, subjectId, label, frameIndex and at least one value"
            )));
        }
        let d = record.len() - 4;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(FanError::Schema(format!(
                    "line {line}: {d} feature values, earlier lines have {expected}"
                )));
            }
            Some(_) => {}
        }
        let video_id = record[0].to_string();
        let subject_id = record[1].to_string();
        let label: usize = record[2]
            .parse()
            .map_err(|_| FanError::Schema(format!("line {line}: bad label {:?}", &record[2])))?;
        let frame: usize = record[3].parse().map_err(|_| {
            FanError::Schema(format!("line {line}: bad frame index {:?}", &record[3]))
        })?;
        let values = record
            .iter()
            .skip(4)
            .map(|s| {
                let v: f64 = s.parse().map_err(|_| {
                    FanError::Schema(format!("line {line}: bad feature value {s:?}"))
                })?;
                if v.is_finite() {
                    Ok(T::lit(v))
                } else {
                    Err(FanError::Data(format!(
                        "line {line}: non-finite feature in video {video_id:?}"
                    )))
                }
            })
            .collect::<Result<Vec<T>>>()?;

        let entry = videos.entry(video_id.clone()).or_insert_with(|| {
            order.push(video_id.clone());
            Pending {
                subject_id: subject_id.clone(),
                label,
                frames: Vec::new(),
            }
        });
        if entry.subject_id != subject_id || entry.label != label {
            return Err(FanError::Schema(format!(
                "line {line}: video {video_id:?} changes subject or label between frames"
            )));
        }
        if entry.frames.iter().any(|(i, _)| *i == frame) {
            return Err(FanError::Schema(format!(
                "line {line}: duplicate frame {frame} in video {video_id:?}"
            )));
        }
        entry.frames.push((frame, values));
    }

    let dim = dim.unwrap_or(1);
    let max_label = videos.values().map(|v| v.label).max();
    let class_names = match class_names {
        Some(names) => names,
        None => (0..max_label.map_or(1, |m| m + 1))
            .map(|c| format!("class{c}"))
            .collect(),
    };

    let mut instances = Vec::with_capacity(order.len());
    for id in order {
        let mut pending = videos.remove(&id).expect("recorded video");
        pending.frames.sort_by_key(|(i, _)| *i);
        let rows: Vec<Vec<T>> = pending.frames.into_iter().map(|(_, v)| v).collect();
        instances.push(VideoInstance {
            video_id: id,
            subject_id: pending.subject_id,
            label: pending.label,
            features: Matrix::from_rows(&rows)?,
        });
    }
    Dataset::new(instances, dim, class_names)
}
