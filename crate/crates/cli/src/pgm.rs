//! Binary PGM (P5) rendering of scalar fields.

use refugesim::Result;
use refugesim::field::Field;

/// Linear grayscale scaling of a field onto `[0, 255]`. A constant field
/// has no range to scale; it renders mid-gray and the caller records the
/// width-zero range in the caption.
pub fn scale_to_bytes(field: &Field) -> (Vec<u8>, f64, f64) {
    let min = field.inf();
    let max = field.sup();
    let range = max - min;
    let bytes = field
        .as_slice()
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - min) / range * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                128
            }
        })
        .collect();
    (bytes, min, max)
}

/// Encode a field as a P5 image, one pixel per cell. Row 0 of the field
/// (the low-y edge) lands at the top of the image.
pub fn encode(field: &Field) -> (Vec<u8>, f64, f64) {
    let (pixels, min, max) = scale_to_bytes(field);
    let mut out = format!("P5\n{} {}\n255\n", field.nx(), field.ny()).into_bytes();
    out.extend_from_slice(&pixels);
    (out, min, max)
}

/// Write the image and return the `(min, max)` range it was scaled from.
pub fn write(path: &std::path::Path, field: &Field) -> Result<(f64, f64)> {
    let (bytes, min, max) = encode(field);
    std::fs::write(path, bytes)?;
    Ok((min, max))
}
