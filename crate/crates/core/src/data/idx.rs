use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const MNIST_CLASSES: usize = 10;

/// Reads a file, inflating it when it starts with the gzip magic bytes.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset as u64, format!("truncated while reading {what}")))
}

/// Parses an IDX3 image file, returning `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, "magic number")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("bad image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format(4, "image dimensions overflow"))?;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(Error::format(
            (16 + body.len()) as u64,
            format!(
                "truncated pixel data: expected {len} bytes, found {}",
                body.len()
            ),
        ));
    }
    if body.len() > len {
        return Err(Error::format(
            (16 + len) as u64,
            "trailing bytes after pixel data",
        ));
    }
    Ok((count, rows, cols, body.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "magic number")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("bad label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::format(
            (8 + body.len()) as u64,
            format!(
                "truncated labels: expected {count} bytes, found {}",
                body.len()
            ),
        ));
    }
    if body.len() > count {
        return Err(Error::format(
            (8 + count) as u64,
            "trailing bytes after labels",
        ));
    }
    if let Some(pos) = body.iter().position(|&y| y as usize >= MNIST_CLASSES) {
        return Err(Error::format(
            (8 + pos) as u64,
            format!("label {} out of range", body[pos]),
        ));
    }
    Ok(body.to_vec())
}

/// Loads an IDX image/label pair (raw or gzip-compressed).
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split: Split,
) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let (count, rows, cols, pixels) =
        parse_idx_images(&read_maybe_gz(images_path)?).map_err(|e| {
            log::error!("{}: {e}", images_path.display());
            e
        })?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?)?;
    if labels.len() != count {
        return Err(Error::format(
            4,
            format!(
                "{} holds {} labels but {} holds {count} images",
                labels_path.display(),
                labels.len(),
                images_path.display()
            ),
        ));
    }
    Dataset::new(pixels, labels, rows, cols, MNIST_CLASSES, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(count: u32, rows: u32, cols: u32, fill: u8) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        v.extend(count.to_be_bytes());
        v.extend(rows.to_be_bytes());
        v.extend(cols.to_be_bytes());
        v.extend(std::iter::repeat_n(fill, (count * rows * cols) as usize));
        v
    }

    fn labels(values: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend(IDX_LABELS_MAGIC.to_be_bytes());
        v.extend((values.len() as u32).to_be_bytes());
        v.extend(values);
        v
    }

    #[test]
    fn parses_well_formed_files() {
        let (count, rows, cols, px) = parse_idx_images(&images(3, 2, 2, 7)).unwrap();
        assert_eq!((count, rows, cols, px.len()), (3, 2, 2, 12));
        assert_eq!(
            parse_idx_labels(&labels(&[1, 2, 9])).unwrap(),
            vec![1, 2, 9]
        );
    }

    #[test]
    fn empty_file_fails_at_offset_zero() {
        assert!(matches!(
            parse_idx_images(&[]),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            parse_idx_labels(&[]),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bad = images(1, 2, 2, 0);
        bad[3] = 0x01;
        assert!(matches!(
            parse_idx_images(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut short = images(2, 2, 2, 0);
        short.truncate(16 + 5);
        assert!(matches!(
            parse_idx_images(&short),
            Err(Error::Format { offset: 21, .. })
        ));
        assert!(matches!(
            parse_idx_labels(&labels(&[3, 12])),
            Err(Error::Format { offset: 9, .. })
        ));
    }

    #[test]
    fn count_mismatch_and_gzip() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.gz");
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(&images(2, 3, 3, 5)).unwrap();
        std::fs::write(&img, enc.finish().unwrap()).unwrap();
        let good = dir.path().join("good");
        std::fs::write(&good, labels(&[0, 1])).unwrap();
        let ds = load_idx(&img, &good, Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.image(1), &[5; 9]);

        let bad = dir.path().join("bad");
        std::fs::write(&bad, labels(&[0, 1, 2])).unwrap();
        assert!(matches!(
            load_idx(&img, &bad, Split::Train),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            load_idx(dir.path().join("missing"), &good, Split::Train),
            Err(Error::Io { .. })
        ));
    }
}
