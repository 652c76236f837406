//! Long-format CSV: one row per pixel, header `image_id,row,col,score,label`.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::domain::{PixelLabel, ScoreMap, ScoreMapSet};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["image_id", "row", "col", "score", "label"];

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::BadField {
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::BadField {
        line,
        message: format!("missing column {}", CSV_HEADER[i]),
    })?;
    raw.trim().parse().map_err(|_| Error::BadField {
        line,
        message: format!("cannot parse {} from {raw:?}", CSV_HEADER[i]),
    })
}

/// Assembles pixels into dense grids. Cells absent from the file become
/// no-data pixels with score 0. Images keep their order of first appearance.
pub fn read_csv<R: Read>(src: R) -> Result<ScoreMapSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(src);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_err)?,
        None => return Err(Error::BadHeader(String::new())),
    };
    let header_fields: Vec<&str> = header.iter().map(str::trim).collect();
    if header_fields != CSV_HEADER {
        return Err(Error::BadHeader(header_fields.join(",")));
    }

    let mut order: Vec<u32> = Vec::new();
    let mut pixels: HashMap<u32, Vec<(usize, usize, f32, PixelLabel)>> = HashMap::new();
    let (mut max_row, mut max_col) = (0usize, 0usize);
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 5 {
            return Err(Error::BadField {
                line,
                message: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        let image_id: u32 = field(&rec, 0, line)?;
        let row: usize = field(&rec, 1, line)?;
        let col: usize = field(&rec, 2, line)?;
        let score: f32 = field(&rec, 3, line)?;
        let label: i64 = field(&rec, 4, line)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::ScoreOutOfRange {
                image_id,
                index: row * (max_col + 1) + col,
                score: f64::from(score),
            });
        }
        let label = PixelLabel::try_from(label)?;
        max_row = max_row.max(row);
        max_col = max_col.max(col);
        pixels
            .entry(image_id)
            .or_insert_with(|| {
                order.push(image_id);
                Vec::new()
            })
            .push((row, col, score, label));
    }

    let (height, width) = (max_row + 1, max_col + 1);
    let mut maps = Vec::with_capacity(order.len());
    for id in order {
        let mut scores = vec![0.0f32; height * width];
        let mut labels = vec![PixelLabel::NoData; height * width];
        let mut seen = vec![false; height * width];
        for &(row, col, score, label) in &pixels[&id] {
            let at = row * width + col;
            if std::mem::replace(&mut seen[at], true) {
                return Err(Error::BadField {
                    line: 0,
                    message: format!("duplicate pixel ({row}, {col}) in image {id}"),
                });
            }
            scores[at] = score;
            labels[at] = label;
        }
        maps.push(ScoreMap::new(id, height, width, scores, labels)?);
    }
    ScoreMapSet::new(maps)
}

/// Writes every pixel, no-data included, so the export re-imports exactly.
pub fn write_csv<W: Write>(set: &ScoreMapSet, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_HEADER).map_err(csv_err)?;
    for m in set.maps() {
        for (i, (s, l)) in m.scores().iter().zip(m.labels()).enumerate() {
            let (row, col) = (i / m.width(), i % m.width());
            writer
                .write_record([
                    m.image_id().to_string(),
                    row.to_string(),
                    col.to_string(),
                    s.to_string(),
                    l.as_i8().to_string(),
                ])
                .map_err(csv_err)?;
        }
    }
    writer.flush()?;
    Ok(())
}
