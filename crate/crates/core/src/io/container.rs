//! Binary score container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     [u8; 4]   "CRS1" (score maps) or "CRZ1" (zone maps)
//! version   u16       1
//! n_images  u32
//! height    u32
//! width     u32
//! then per image:
//!   image_id  u32
//!   scores    f32 x height*width, row-major
//!   codes     i8  x height*width, row-major (labels, or zone codes)
//! ```

use std::io::{Read, Write};

use crate::crc_threeway::ZoneMap;
use crate::domain::{PixelLabel, ScoreMap, ScoreMapSet, Zone};
use crate::error::{Error, Result};

pub const SCORE_MAGIC: [u8; 4] = *b"CRS1";
pub const ZONE_MAGIC: [u8; 4] = *b"CRZ1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 18;

/// Zone-grid code written for no-data pixels.
pub const NO_DATA_ZONE_CODE: i8 = -1;

struct RawImage<'a> {
    image_id: u32,
    scores: &'a [f32],
    codes: Vec<i8>,
}

fn payload_len(n_images: u64, height: u64, width: u64) -> Option<u64> {
    let pixels = height.checked_mul(width)?;
    let per_image = pixels.checked_mul(5)?.checked_add(4)?;
    n_images.checked_mul(per_image)
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::DimensionMismatch(format!("{what} {v} exceeds u32")))
}

fn write_raw<W: Write>(
    mut out: W,
    magic: [u8; 4],
    height: usize,
    width: usize,
    images: &[RawImage<'_>],
) -> Result<u64> {
    if images.is_empty() {
        return Err(Error::EmptyInput);
    }
    let pixels = height * width;
    let mut buf = Vec::with_capacity(HEADER_LEN + images.len() * (4 + 5 * pixels));
    buf.extend_from_slice(&magic);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&dim_u32(images.len(), "image count")?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(height, "height")?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(width, "width")?.to_le_bytes());
    for img in images {
        buf.extend_from_slice(&img.image_id.to_le_bytes());
        for s in img.scores {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        buf.extend(img.codes.iter().map(|c| c.to_le_bytes()[0]));
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(buf.len() as u64)
}

struct RawContainer {
    height: usize,
    width: usize,
    images: Vec<(u32, Vec<f32>, Vec<i8>)>,
}

fn read_raw<R: Read>(mut src: R, magic: [u8; 4]) -> Result<RawContainer> {
    let mut bytes = Vec::new();
    src.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        // A short header can still carry a recognisable bad magic.
        if bytes.len() >= 4 && bytes[..4] != magic {
            return Err(Error::BadMagic {
                found: bytes[..4].try_into().unwrap(),
                expected: magic,
            });
        }
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != magic {
        return Err(Error::BadMagic {
            found,
            expected: magic,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let n_images = u32_at(6) as usize;
    let height = u32_at(10) as usize;
    let width = u32_at(14) as usize;

    let expected = payload_len(n_images as u64, height as u64, width as u64)
        .ok_or_else(|| Error::DimensionMismatch("declared payload size overflows".into()))?;
    let found_len = (bytes.len() - HEADER_LEN) as u64;
    if found_len < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: found_len,
        });
    }
    if found_len > expected {
        return Err(Error::DimensionMismatch(format!(
            "payload has {found_len} bytes, header declares {expected}"
        )));
    }

    let pixels = height * width;
    let mut images = Vec::with_capacity(n_images);
    let mut at = HEADER_LEN;
    for _ in 0..n_images {
        let image_id = u32_at(at);
        at += 4;
        let scores = bytes[at..at + 4 * pixels]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        at += 4 * pixels;
        let codes = bytes[at..at + pixels]
            .iter()
            .map(|&b| i8::from_le_bytes([b]))
            .collect();
        at += pixels;
        images.push((image_id, scores, codes));
    }
    Ok(RawContainer {
        height,
        width,
        images,
    })
}

/// Writes a score-map set; returns the number of bytes written.
pub fn write_container<W: Write>(set: &ScoreMapSet, out: W) -> Result<u64> {
    let (height, width) = set.dims().ok_or(Error::EmptyInput)?;
    let images: Vec<RawImage<'_>> = set
        .maps()
        .iter()
        .map(|m| RawImage {
            image_id: m.image_id(),
            scores: m.scores(),
            codes: m.labels().iter().map(|l| l.as_i8()).collect(),
        })
        .collect();
    write_raw(out, SCORE_MAGIC, height, width, &images)
}

pub fn read_container<R: Read>(src: R) -> Result<ScoreMapSet> {
    let raw = read_raw(src, SCORE_MAGIC)?;
    let mut maps = Vec::with_capacity(raw.images.len());
    for (image_id, scores, codes) in raw.images {
        let labels = codes
            .into_iter()
            .map(PixelLabel::try_from)
            .collect::<Result<Vec<_>>>()?;
        maps.push(ScoreMap::new(image_id, raw.height, raw.width, scores, labels)?);
    }
    ScoreMapSet::new(maps)
}

/// Writes zone grids under the "CRZ1" magic; no-data pixels get code -1.
pub fn write_zone_container<W: Write>(maps: &[ZoneMap], out: W) -> Result<u64> {
    let first = maps.first().ok_or(Error::EmptyInput)?;
    let (height, width) = (first.height, first.width);
    if maps.iter().any(|m| (m.height, m.width) != (height, width)) {
        return Err(Error::DimensionMismatch("zone maps differ in size".into()));
    }
    let images: Vec<RawImage<'_>> = maps
        .iter()
        .map(|m| RawImage {
            image_id: m.image_id,
            scores: &m.scores,
            codes: m
                .zones
                .iter()
                .map(|z| z.map_or(NO_DATA_ZONE_CODE, Zone::code))
                .collect(),
        })
        .collect();
    write_raw(out, ZONE_MAGIC, height, width, &images)
}

pub fn read_zone_container<R: Read>(src: R) -> Result<Vec<ZoneMap>> {
    let raw = read_raw(src, ZONE_MAGIC)?;
    raw.images
        .into_iter()
        .map(|(image_id, scores, codes)| {
            let zones = codes
                .into_iter()
                .map(|c| match c {
                    NO_DATA_ZONE_CODE => Ok(None),
                    c => Zone::from_code(c)
                        .map(Some)
                        .ok_or(Error::BadLabel(i64::from(c))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ZoneMap {
                image_id,
                height: raw.height,
                width: raw.width,
                scores,
                zones,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_image() -> ScoreMapSet {
        let m = ScoreMap::new(
            7,
            2,
            2,
            vec![0.0, 0.25, 1.0, 0.5],
            vec![
                PixelLabel::Positive,
                PixelLabel::Negative,
                PixelLabel::NoData,
                PixelLabel::Positive,
            ],
        )
        .unwrap();
        ScoreMapSet::new(vec![m]).unwrap()
    }

    #[test]
    fn two_by_two_is_42_bytes() {
        let mut buf = Vec::new();
        let n = write_container(&one_image(), &mut buf).unwrap();
        assert_eq!(n, 42);
        assert_eq!(buf.len(), 42);
        assert_eq!(&buf[..4], b"CRS1");
        assert_eq!(read_container(&buf[..]).unwrap(), one_image());
    }

    #[test]
    fn empty_set_is_rejected() {
        let mut buf = Vec::new();
        assert!(matches!(
            write_container(&ScoreMapSet::default(), &mut buf),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn corrupt_header_and_payload() {
        let mut buf = Vec::new();
        write_container(&one_image(), &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_container(&bad[..]), Err(Error::BadMagic { .. })));

        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_container(&bad[..]), Err(Error::BadVersion(2))));

        let short = &buf[..buf.len() - 1];
        assert!(matches!(
            read_container(short),
            Err(Error::TruncatedPayload { expected: 24, found: 23 })
        ));

        let mut bad = buf.clone();
        // first score -> 2.0f32
        bad[22..26].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(read_container(&bad[..]), Err(Error::ScoreOutOfRange { .. })));

        let mut bad = buf.clone();
        bad[38] = 5;
        assert!(matches!(read_container(&bad[..]), Err(Error::BadLabel(5))));

        let mut long = buf;
        long.push(0);
        assert!(matches!(read_container(&long[..]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn zone_magic_is_distinct() {
        let mut buf = Vec::new();
        write_container(&one_image(), &mut buf).unwrap();
        assert!(matches!(read_zone_container(&buf[..]), Err(Error::BadMagic { .. })));
    }
}
