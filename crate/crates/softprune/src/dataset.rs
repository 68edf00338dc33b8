//! Dataset files.
//!
//! IDX is the big-endian format of the classic handwritten-digit sets: an
//! image file with magic `0x00000803` and dimensions `count, h, w`, and a
//! label file with magic `0x00000801` and dimension `count`, both followed
//! by unsigned bytes. Pixels load as `byte / 255`.
//!
//! CSV files hold one sample per line, `label,p0,p1,...`, pixels in
//! row-major `[channels, h, w]` order. Pixels are divided by a scale
//! (1 for values already in `[0, 1]`, 255 for byte values).

use std::path::Path;

use softprune_core::data::{Dataset, Split};

use crate::error::{Error, Result};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| {
            Error::parse(
                path,
                format!("byte {at}"),
                format!(
                    "file ends while reading {what}: expected at least {} bytes, found {}",
                    at + 4,
                    bytes.len()
                ),
            )
        })
}

/// Parses an IDX image file into `(count, h, w, pixels)`.
fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let magic = be_u32(bytes, 0, path, "the magic number")?;
    if magic != IDX_IMAGES {
        return Err(Error::parse(
            path,
            "byte 0",
            format!("expected image magic 0x{IDX_IMAGES:08x}, found 0x{magic:08x}"),
        ));
    }
    let n = be_u32(bytes, 4, path, "the image count")? as usize;
    let h = be_u32(bytes, 8, path, "the row count")? as usize;
    let w = be_u32(bytes, 12, path, "the column count")? as usize;
    let expected = 16 + n * h * w;
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            format!("byte {}", bytes.len().min(expected)),
            format!(
                "expected {expected} bytes for {n} images of {h}x{w}, found {}",
                bytes.len()
            ),
        ));
    }
    if h == 0 || w == 0 {
        return Err(Error::parse(path, "byte 8", format!("image size {h}x{w} is empty")));
    }
    Ok((n, h, w, bytes[16..].iter().map(|&b| b as f64 / 255.0).collect()))
}

fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, path, "the magic number")?;
    if magic != IDX_LABELS {
        return Err(Error::parse(
            path,
            "byte 0",
            format!("expected label magic 0x{IDX_LABELS:08x}, found 0x{magic:08x}"),
        ));
    }
    let n = be_u32(bytes, 4, path, "the label count")? as usize;
    if bytes.len() != 8 + n {
        return Err(Error::parse(
            path,
            format!("byte {}", bytes.len().min(8 + n)),
            format!("expected {} bytes for {n} labels, found {}", 8 + n, bytes.len()),
        ));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image/label pair as single-channel images. `classes`
/// defaults to one more than the largest label.
pub fn load_idx(images: &Path, labels: &Path, classes: Option<usize>, split: Split) -> Result<Dataset> {
    let (n, h, w, pixels) = parse_idx_images(&read(images)?, images)?;
    let labels_v = parse_idx_labels(&read(labels)?, labels)?;
    if labels_v.len() != n {
        return Err(Error::parse(
            labels,
            "byte 4",
            format!("{} labels for {n} images in {}", labels_v.len(), images.display()),
        ));
    }
    let classes = classes.unwrap_or_else(|| labels_v.iter().max().map_or(1, |m| m + 1));
    Ok(Dataset::new(vec![1, h, w], pixels, labels_v, classes, split)?)
}

/// Writes a single-channel dataset as an IDX pair, rounding pixels to the
/// nearest multiple of 1/255.
pub fn write_idx(data: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    let shape = data.sample_shape();
    if shape[0] != 1 {
        return Err(softprune_core::Error::Input(format!("IDX holds one channel, dataset has {}", shape[0])).into());
    }
    if let Some(l) = data.labels().iter().find(|&&l| l > 255) {
        return Err(softprune_core::Error::Input(format!("label {l} does not fit in a byte")).into());
    }
    let mut img = Vec::with_capacity(16 + data.pixels().len());
    for v in [IDX_IMAGES, data.len() as u32, shape[1] as u32, shape[2] as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(data.pixels().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + data.len());
    lab.extend_from_slice(&IDX_LABELS.to_be_bytes());
    lab.extend_from_slice(&(data.len() as u32).to_be_bytes());
    lab.extend(data.labels().iter().map(|&l| l as u8));
    std::fs::write(images, img).map_err(|e| Error::io(images, e))?;
    std::fs::write(labels, lab).map_err(|e| Error::io(labels, e))
}

/// Loads `label,pixels...` rows of samples shaped `sample_shape`.
pub fn load_csv(
    path: &Path,
    sample_shape: [usize; 3],
    classes: usize,
    pixel_scale: f64,
    split: Split,
) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path, sample_shape, classes, pixel_scale, split)
}

pub fn parse_csv(
    text: &str,
    path: &Path,
    sample_shape: [usize; 3],
    classes: usize,
    pixel_scale: f64,
    split: Split,
) -> Result<Dataset> {
    if !(pixel_scale > 0.0 && pixel_scale.is_finite()) {
        return Err(softprune_core::Error::Input(format!("pixel scale {pixel_scale} must be positive")).into());
    }
    let size: usize = sample_shape.iter().product();
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let at = format!("line {}", i + 1);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != size + 1 {
            return Err(Error::parse(
                path,
                at,
                format!(
                    "expected {} fields (label and {size} pixels), found {}",
                    size + 1,
                    fields.len()
                ),
            ));
        }
        let label: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, &at, format!("label {:?} is not a class index", fields[0])))?;
        if label >= classes {
            return Err(Error::parse(path, &at, format!("label {label} is not below {classes}")));
        }
        for (j, f) in fields[1..].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(path, &at, format!("pixel {j} {f:?} is not a number")))?;
            let v = v / pixel_scale;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::parse(
                    path,
                    &at,
                    format!("pixel {j} scales to {v}, outside [0, 1]"),
                ));
            }
            pixels.push(v);
        }
        labels.push(label);
    }
    Ok(Dataset::new(sample_shape.to_vec(), pixels, labels, classes, split)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_and_errors() {
        let p = Path::new("d.csv");
        let d = parse_csv("1,0,255,0,0\n0,255,255,255,255\n", p, [1, 2, 2], 2, 255.0, Split::Train).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels(), &[1, 0]);
        assert_eq!(d.sample(0).data(), &[0.0, 1.0, 0.0, 0.0]);
        let err = parse_csv("1,0,0,0,0\n0,0,0\n", p, [1, 2, 2], 2, 1.0, Split::Train).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_csv("5,0,0,0,0\n", p, [1, 2, 2], 2, 1.0, Split::Train).is_err());
        assert!(parse_csv("0,0,0,0,2\n", p, [1, 2, 2], 2, 1.0, Split::Train).is_err());
    }

    #[test]
    fn idx_header_errors_name_bytes() {
        let p = Path::new("x.idx");
        let err = parse_idx_images(&[0, 0, 8, 1, 0, 0, 0, 0], p).unwrap_err().to_string();
        assert!(err.contains("byte 0") && err.contains("0x00000801"), "{err}");
        let err = parse_idx_images(&[0, 0, 8, 3, 0, 0], p).unwrap_err().to_string();
        assert!(err.contains("byte 4"), "{err}");
    }
}
