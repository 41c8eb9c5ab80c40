//! Binary PGM (P5) and PPM (P6) reader, maxval 255.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Full-range BT.601 RGB to YCbCr as used by JFIF; chroma is centred on 128.
pub const RGB_TO_YCBCR: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.168_735_891_6, -0.331_264_108_4, 0.5],
    [0.5, -0.418_687_589_2, -0.081_312_410_8],
];

const CHROMA_OFFSET: f64 = 128.0;

/// Decoded planes, each `(height, width)` with values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    pub planes: Vec<DenseTensor<f64>>,
}

impl PnmImage {
    /// Stacks the planes into a `(1, channels, height, width)` batch.
    pub fn to_batch(&self) -> DenseTensor<f64> {
        let data = self.planes.iter().flat_map(|p| p.data().iter().copied()).collect();
        DenseTensor::new(vec![1, self.planes.len(), self.height, self.width], data).expect("planes share one shape")
    }

    /// Extends every plane to multiples of 8 by repeating the last row and
    /// column, as JPEG encoders do.
    pub fn pad_to_blocks(&self) -> PnmImage {
        let (h, w) = (self.height.div_ceil(8) * 8, self.width.div_ceil(8) * 8);
        let planes = self
            .planes
            .iter()
            .map(|p| {
                DenseTensor::from_fn(&[h, w], |i| p.get(&[i[0].min(self.height - 1), i[1].min(self.width - 1)]))
                    .expect("non-empty")
            })
            .collect();
        PnmImage { width: w, height: h, planes }
    }
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            None => return Err(Error::TruncatedFile),
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::UnsupportedFormat("malformed PNM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .unwrap()
        .parse()
        .map_err(|_| Error::UnsupportedFormat("PNM header value out of range".into()))
}

/// Loads a P5 or P6 image. With `to_ycbcr`, a P6 image is converted to
/// Y, Cb, Cr planes by [`RGB_TO_YCBCR`]; P5 is unaffected.
pub fn load_pnm(bytes: &[u8], to_ycbcr: bool) -> Result<PnmImage> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(_) => return Err(Error::UnsupportedFormat("not a binary PGM or PPM file".into())),
        None => return Err(Error::TruncatedFile),
    };
    let mut pos = 2;
    let width = header_token(bytes, &mut pos)?;
    let height = header_token(bytes, &mut pos)?;
    let maxval = header_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval} (only 255 is supported)")));
    }
    if width == 0 || height == 0 {
        return Err(Error::UnsupportedFormat("empty image".into()));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(Error::UnsupportedFormat("malformed PNM header".into())),
        None => return Err(Error::TruncatedFile),
    }
    let n = width * height;
    let raster = bytes.get(pos..pos + n * channels).ok_or(Error::TruncatedFile)?;
    let mut planes: Vec<Vec<f64>> = (0..channels).map(|_| Vec::with_capacity(n)).collect();
    for px in raster.chunks_exact(channels) {
        if channels == 3 && to_ycbcr {
            let rgb = [px[0] as f64, px[1] as f64, px[2] as f64];
            for (c, row) in RGB_TO_YCBCR.iter().enumerate() {
                let offset = if c == 0 { 0.0 } else { CHROMA_OFFSET };
                planes[c].push(row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2] + offset);
            }
        } else {
            for (plane, &v) in planes.iter_mut().zip(px) {
                plane.push(v as f64);
            }
        }
    }
    let planes = planes
        .into_iter()
        .map(|p| DenseTensor::new(vec![height, width], p))
        .collect::<Result<Vec<_>>>()?;
    Ok(PnmImage { width, height, planes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_layout() {
        let img = load_pnm(b"P5\n2 2\n255\n\x00\xff\x80\x40", false).unwrap();
        assert_eq!(img.planes.len(), 1);
        assert_eq!(img.planes[0].shape(), &[2, 2]);
        assert_eq!(img.planes[0].data(), &[0.0, 255.0, 128.0, 64.0]);
    }

    #[test]
    fn comments_in_header() {
        let img = load_pnm(b"P5 # made by hand\n1 # width\n 1\n255\n\x07", false).unwrap();
        assert_eq!(img.planes[0].data(), &[7.0]);
    }

    #[test]
    fn p6_rgb_planes() {
        let img = load_pnm(b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06", false).unwrap();
        assert_eq!(img.planes.len(), 3);
        assert_eq!(img.planes[0].data(), &[1.0, 4.0]);
        assert_eq!(img.planes[2].data(), &[3.0, 6.0]);
        assert_eq!(img.to_batch().shape(), &[1, 3, 1, 2]);
    }

    #[test]
    fn pure_red_to_ycbcr() {
        let img = load_pnm(b"P6\n1 1\n255\n\xff\x00\x00", true).unwrap();
        let y = img.planes[0].data()[0];
        let cb = img.planes[1].data()[0];
        let cr = img.planes[2].data()[0];
        assert!((y - 0.299 * 255.0).abs() < 1e-12);
        assert!((y - 76.245).abs() < 1e-9);
        assert!((cb - (128.0 - 0.168_735_891_6 * 255.0)).abs() < 1e-12);
        assert!((cr - 255.5).abs() < 1e-9);
    }

    #[test]
    fn gray_pixels_have_neutral_chroma() {
        let img = load_pnm(b"P6\n1 1\n255\n\x64\x64\x64", true).unwrap();
        assert!((img.planes[0].data()[0] - 100.0).abs() < 1e-9);
        assert!((img.planes[1].data()[0] - 128.0).abs() < 1e-9);
        assert!((img.planes[2].data()[0] - 128.0).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(load_pnm(b"P5\n2 2\n65535\n", false), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(load_pnm(b"P2\n1 1\n255\n0", false), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(load_pnm(b"P5\n2 2\n255\n\x00", false), Err(Error::TruncatedFile)));
        assert!(matches!(load_pnm(b"P5\n2", false), Err(Error::TruncatedFile)));
    }

    #[test]
    fn padding_repeats_edges() {
        let img = load_pnm(b"P5\n9 1\n255\n\x00\x01\x02\x03\x04\x05\x06\x07\x08", false).unwrap();
        let p = img.pad_to_blocks();
        assert_eq!((p.width, p.height), (16, 8));
        assert_eq!(p.planes[0].get(&[7, 15]), 8.0);
        assert_eq!(p.planes[0].get(&[3, 4]), 4.0);
    }
}
