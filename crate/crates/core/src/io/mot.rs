use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::assoc_net::BoundingBox;
use crate::error::{Error, Result};

/// One line of a MOT-Challenge ground-truth, detection or result file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRow {
    /// 1-based frame index.
    pub frame: u32,
    /// Identity, `-1` for detections.
    pub id: i64,
    pub bb_left: f64,
    pub bb_top: f64,
    pub w: f64,
    pub h: f64,
    pub conf: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl MotRow {
    pub fn new(frame: u32, id: i64, bbox: &BoundingBox) -> Self {
        Self {
            frame,
            id,
            bb_left: bbox.left(),
            bb_top: bbox.top(),
            w: bbox.w,
            h: bbox.h,
            conf: bbox.conf,
            x: -1.0,
            y: -1.0,
            z: -1.0,
        }
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::from_ltwh(self.bb_left, self.bb_top, self.w, self.h, self.conf)
    }

    pub fn is_valid(&self) -> bool {
        self.frame >= 1 && self.w > 0.0 && self.h > 0.0
    }
}

/// Rows keyed by frame; rows keep their file order inside a frame.
pub type MotFrames = BTreeMap<u32, Vec<MotRow>>;

fn parse_field(field: &str, name: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("{name}: cannot parse {:?} as a number", field.trim()),
    })
}

fn parse_line(text: &str, line: usize) -> Result<MotRow> {
    let fields: Vec<&str> = text.split(',').collect();
    if fields.len() < 7 {
        return Err(Error::Parse {
            line,
            message: format!(
                "expected at least 7 comma-separated fields, found {}",
                fields.len()
            ),
        });
    }
    let frame = parse_field(fields[0], "frame", line)?;
    if frame.fract() != 0.0 || frame < 1.0 || frame > u32::MAX as f64 {
        return Err(Error::Parse {
            line,
            message: format!("frame {frame} out of range (must be an integer ≥ 1)"),
        });
    }
    let id = parse_field(fields[1], "id", line)?;
    if id.fract() != 0.0 {
        return Err(Error::Parse {
            line,
            message: format!("id {id} is not an integer"),
        });
    }
    let extra = |i: usize, name: &str| -> Result<f64> {
        fields
            .get(i)
            .map_or(Ok(-1.0), |f| parse_field(f, name, line))
    };
    Ok(MotRow {
        frame: frame as u32,
        id: id as i64,
        bb_left: parse_field(fields[2], "bb_left", line)?,
        bb_top: parse_field(fields[3], "bb_top", line)?,
        w: parse_field(fields[4], "w", line)?,
        h: parse_field(fields[5], "h", line)?,
        conf: parse_field(fields[6], "conf", line)?,
        x: extra(7, "x")?,
        y: extra(8, "y")?,
        z: extra(9, "z")?,
    })
}

/// Reads all rows in file order. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_mot_rows<R: BufRead>(reader: R) -> Result<Vec<MotRow>> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(parse_line(&line, idx + 1)?);
    }
    Ok(rows)
}

pub fn group_by_frame(rows: &[MotRow]) -> MotFrames {
    let mut frames = MotFrames::new();
    for row in rows {
        frames.entry(row.frame).or_default().push(*row);
    }
    frames
}

/// Reads a MOT file grouped by frame.
pub fn parse_mot<R: BufRead>(reader: R) -> Result<MotFrames> {
    Ok(group_by_frame(&read_mot_rows(reader)?))
}

/// Writes rows sorted by frame, then id, as
/// `frame,id,bb_left,bb_top,w,h,conf,x,y,z`.
pub fn write_mot<W: Write>(mut out: W, rows: &[MotRow]) -> Result<()> {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| (r.frame, r.id));
    for r in &sorted {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.frame, r.id, r.bb_left, r.bb_top, r.w, r.h, r.conf, r.x, r.y, r.z
        )?;
    }
    Ok(())
}
