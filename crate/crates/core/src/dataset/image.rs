//! 8-bit RGB frames, the binary PPM (P6) codec, and face cropping.

use super::FaceBox;

/// Row-major interleaved RGB, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        (width > 0 && height > 0 && data.len() == width * height * 3).then_some(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Grayscale values replicated into all three channels.
    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Option<Self> {
        Self::new(width, height, gray.iter().flat_map(|&g| [g, g, g]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PpmError {
    #[error("not a binary PPM (expected magic P6)")]
    BadMagic,
    #[error("malformed PPM header: {0}")]
    Header(String),
    #[error("unsupported maxval {0} (only 255 is accepted)")]
    MaxVal(usize),
    #[error("pixel data too short: expected {expected} bytes, found {found}")]
    ShortData { expected: usize, found: usize },
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, PpmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PpmError::Header(format!("missing or invalid {what}")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, PpmError> {
    if !bytes.starts_with(b"P6") {
        return Err(PpmError::BadMagic);
    }
    let mut reader = HeaderReader { bytes, pos: 2 };
    let width = reader.number("width")?;
    let height = reader.number("height")?;
    let maxval = reader.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PpmError::Header(format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(PpmError::MaxVal(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(reader.pos) {
        Some(b) if b.is_ascii_whitespace() => reader.pos += 1,
        _ => return Err(PpmError::Header("missing separator before pixel data".into())),
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| PpmError::Header(format!("image {width}x{height} is too large")))?;
    let raster = &bytes[reader.pos..];
    if raster.len() < expected {
        return Err(PpmError::ShortData {
            expected,
            found: raster.len(),
        });
    }
    Ok(RgbImage {
        width,
        height,
        data: raster[..expected].to_vec(),
    })
}

/// Bilinear resize with half-pixel centers; equal sizes give an exact copy.
pub fn resize_bilinear(src: &RgbImage, width: usize, height: usize) -> RgbImage {
    if src.width == width && src.height == height {
        return src.clone();
    }
    let sx = src.width as f64 / width as f64;
    let sy = src.height as f64 / height as f64;
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (src.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (src.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src.width - 1);
            let wx = fx - x0 as f64;
            let (a, b, c, d) = (
                src.pixel(x0, y0),
                src.pixel(x1, y0),
                src.pixel(x0, y1),
                src.pixel(x1, y1),
            );
            for ch in 0..3 {
                let top = a[ch] as f64 * (1.0 - wx) + b[ch] as f64 * wx;
                let bottom = c[ch] as f64 * (1.0 - wx) + d[ch] as f64 * wx;
                let v = top * (1.0 - wy) + bottom * wy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage { width, height, data }
}

fn crop(src: &RgbImage, x0: usize, y0: usize, x1: usize, y1: usize) -> RgbImage {
    let width = x1 - x0;
    let mut data = Vec::with_capacity(width * (y1 - y0) * 3);
    for y in y0..y1 {
        let row = (y * src.width + x0) * 3;
        data.extend_from_slice(&src.data[row..row + width * 3]);
    }
    RgbImage {
        width,
        height: y1 - y0,
        data,
    }
}

/// Fraction of the box size added on each side before cropping.
pub const FACE_MARGIN: f64 = 0.125;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CropError {
    #[error("output size {0}x{1} is below the 8x8 minimum")]
    OutputTooSmall(usize, usize),
    #[error("face box {0:?} has no area inside the frame")]
    Degenerate(FaceBox),
}

/// Crops a face and resizes it to `out_size = (height, width)`.
///
/// With a box, the region is grown by 25% (12.5% per side), clipped to the
/// frame, then resized. Without one, the centered square is used.
pub fn crop_face(frame: &RgbImage, face: Option<&FaceBox>, out_size: (usize, usize)) -> Result<RgbImage, CropError> {
    let (out_h, out_w) = out_size;
    if out_h < 8 || out_w < 8 {
        return Err(CropError::OutputTooSmall(out_h, out_w));
    }
    let (w, h) = (frame.width as f64, frame.height as f64);
    let (x0, y0, x1, y1) = match face {
        Some(b) => {
            let (mx, my) = (b.w * FACE_MARGIN, b.h * FACE_MARGIN);
            let x0 = ((b.x - mx).max(0.0) * w).floor() as usize;
            let y0 = ((b.y - my).max(0.0) * h).floor() as usize;
            let x1 = ((b.x + b.w + mx).min(1.0) * w).ceil() as usize;
            let y1 = ((b.y + b.h + my).min(1.0) * h).ceil() as usize;
            let (x1, y1) = (x1.min(frame.width), y1.min(frame.height));
            if x1 <= x0 || y1 <= y0 {
                return Err(CropError::Degenerate(*b));
            }
            (x0, y0, x1, y1)
        }
        None => {
            let side = frame.width.min(frame.height);
            let x0 = (frame.width - side) / 2;
            let y0 = (frame.height - side) / 2;
            (x0, y0, x0 + side, y0 + side)
        }
    };
    Ok(resize_bilinear(&crop(frame, x0, y0, x1, y1), out_w, out_h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pattern(width: usize, height: usize) -> RgbImage {
        let data = (0..width * height * 3).map(|i| (i * 37 % 251) as u8).collect();
        RgbImage::new(width, height, data).unwrap()
    }

    #[test]
    fn one_red_pixel_encoding() {
        let img = RgbImage::new(1, 1, vec![255, 0, 0]).unwrap();
        assert_eq!(encode_ppm(&img), b"P6\n1 1\n255\n\xff\x00\x00".to_vec());
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode_ppm(b"P3\n1 1\n255\n"), Err(PpmError::BadMagic));
        assert_eq!(
            decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0"),
            Err(PpmError::MaxVal(65535))
        );
        assert!(matches!(decode_ppm(b"P6\nx 1\n255\n"), Err(PpmError::Header(_))));
        let mut bytes = encode_ppm(&pattern(4, 4));
        bytes.truncate(bytes.len() - 5);
        assert_eq!(
            decode_ppm(&bytes),
            Err(PpmError::ShortData {
                expected: 48,
                found: 43
            })
        );
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = decode_ppm(b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03").unwrap();
        assert_eq!(img.pixel(0, 0), [1, 2, 3]);
    }

    proptest! {
        #[test]
        fn ppm_round_trip(width in 1usize..20, height in 1usize..20, seed in any::<u64>()) {
            let data = (0..width * height * 3).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
            let img = RgbImage::new(width, height, data).unwrap();
            prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
        }

        #[test]
        fn crop_output_matches_requested_size(
            fw in 8usize..40, fh in 8usize..40, ow in 8usize..30, oh in 8usize..30,
            bx in 0.0f64..0.8, by in 0.0f64..0.8, bw in 0.05f64..0.2, bh in 0.05f64..0.2,
        ) {
            let frame = pattern(fw, fh);
            let face = FaceBox::new(bx, by, bw, bh).unwrap();
            let out = crop_face(&frame, Some(&face), (oh, ow)).unwrap();
            prop_assert_eq!((out.height(), out.width()), (oh, ow));
            let out = crop_face(&frame, None, (oh, ow)).unwrap();
            prop_assert_eq!((out.height(), out.width()), (oh, ow));
        }
    }

    #[test]
    fn every_byte_value_survives_round_trip() {
        let data: Vec<u8> = (0..=255u8).cycle().take(16 * 16 * 3).collect();
        let img = RgbImage::new(16, 16, data).unwrap();
        assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn full_frame_box_is_identity() {
        let frame = pattern(24, 16);
        let full = FaceBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(crop_face(&frame, Some(&full), (16, 24)).unwrap(), frame);
    }

    #[test]
    fn center_crop_of_square_is_identity() {
        let frame = pattern(20, 20);
        assert_eq!(crop_face(&frame, None, (20, 20)).unwrap(), frame);
    }

    #[test]
    fn downscale_preserves_constant_images() {
        let frame = RgbImage::filled(32, 32, [17, 200, 93]);
        assert_eq!(
            crop_face(&frame, None, (16, 16)).unwrap(),
            RgbImage::filled(16, 16, [17, 200, 93])
        );
    }

    #[test]
    fn rejects_tiny_output_and_degenerate_box() {
        let frame = pattern(16, 16);
        assert!(matches!(
            crop_face(&frame, None, (4, 16)),
            Err(CropError::OutputTooSmall(..))
        ));
        // a sliver narrower than one pixel still covers one pixel after ceil
        let sliver = FaceBox::new(0.5, 0.5, 1e-9, 1e-9).unwrap();
        assert!(crop_face(&frame, Some(&sliver), (8, 8)).is_ok());
    }
}
