//! Frame representation, color conversion, Bayer demosaicing and ROI windows.

use std::sync::OnceLock;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("frame must be non-empty, got {width}x{height}")]
    Empty { width: usize, height: usize },
    #[error("expected {expected} samples, got {actual}")]
    SampleCount { expected: usize, actual: usize },
    #[error("Bayer plane dimensions must be even, got {width}x{height}")]
    OddBayer { width: usize, height: usize },
    #[error("ROI {w}x{h} does not fit in a {frame_w}x{frame_h} frame")]
    RoiTooLarge {
        w: usize,
        h: usize,
        frame_w: usize,
        frame_h: usize,
    },
    #[error("ROI extent must be at least 1x1")]
    RoiEmpty,
    #[error("ROI center is not finite")]
    NonFiniteCenter,
}

/// Weights for the luma grayscale conversion.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Converts an RGB triplet in `[0, 255]` to HSV with every component in `[0, 1]`.
///
/// Hue is the angle scaled to `[0, 1)`; achromatic inputs get `h = 0, s = 0`.
pub fn rgb_to_hsv<T: Real>(r: T, g: T, b: T) -> (T, T, T) {
    let full = T::lit(255.0);
    let (r, g, b) = (r / full, g / full, b / full);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > T::zero() { delta / max } else { T::zero() };
    if delta <= T::zero() {
        return (T::zero(), s, v);
    }
    let sixth = if max == r {
        (g - b) / delta
    } else if max == g {
        (b - r) / delta + T::lit(2.0)
    } else {
        (r - g) / delta + T::lit(4.0)
    };
    let mut h = sixth / T::lit(6.0);
    if h < T::zero() {
        h += T::one();
    }
    if h >= T::one() {
        h -= T::one();
    }
    (h, s, v)
}

/// Luma in `[0, 1]` from an RGB triplet in `[0, 255]`.
pub fn to_gray<T: Real>(r: T, g: T, b: T) -> T {
    (T::lit(LUMA_WEIGHTS[0]) * r + T::lit(LUMA_WEIGHTS[1]) * g + T::lit(LUMA_WEIGHTS[2]) * b)
        / T::lit(255.0)
}

/// One camera image. RGB is stored interleaved; HSV and gray planes are
/// derived on first access and cached.
#[derive(Debug, Clone)]
pub struct Frame {
    width: usize,
    height: usize,
    index: usize,
    rgb: Vec<[u8; 3]>,
    hsv: OnceLock<Vec<[f64; 3]>>,
    gray: OnceLock<Vec<f64>>,
}

impl PartialEq for Frame {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.index == other.index
            && self.rgb == other.rgb
    }
}

impl Frame {
    pub fn new(
        width: usize,
        height: usize,
        index: usize,
        rgb: Vec<[u8; 3]>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty { width, height });
        }
        if rgb.len() != width * height {
            return Err(ImageError::SampleCount {
                expected: width * height,
                actual: rgb.len(),
            });
        }
        Ok(Self {
            width,
            height,
            index,
            rgb,
            hsv: OnceLock::new(),
            gray: OnceLock::new(),
        })
    }

    /// A frame filled with one color.
    pub fn filled(width: usize, height: usize, index: usize, color: [u8; 3]) -> Result<Self, ImageError> {
        Self::new(width, height, index, vec![color; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn rgb(&self) -> &[[u8; 3]] {
        &self.rgb
    }

    pub fn rgb_at(&self, x: usize, y: usize) -> [u8; 3] {
        self.rgb[y * self.width + x]
    }

    pub fn hsv(&self) -> &[[f64; 3]] {
        self.hsv.get_or_init(|| {
            self.rgb
                .iter()
                .map(|&[r, g, b]| {
                    let (h, s, v) = rgb_to_hsv(f64::from(r), f64::from(g), f64::from(b));
                    [h, s, v]
                })
                .collect()
        })
    }

    pub fn gray(&self) -> &[f64] {
        self.gray.get_or_init(|| {
            self.rgb
                .iter()
                .map(|&[r, g, b]| to_gray(f64::from(r), f64::from(g), f64::from(b)))
                .collect()
        })
    }

    /// Copies the pixels under `roi` into a new frame with the same index.
    pub fn crop(&self, roi: &Roi) -> Frame {
        let mut rgb = Vec::with_capacity(roi.w * roi.h);
        for y in roi.y0..roi.y0 + roi.h {
            let start = y * self.width + roi.x0;
            rgb.extend_from_slice(&self.rgb[start..start + roi.w]);
        }
        Frame::new(roi.w, roi.h, self.index, rgb).expect("ROI lies inside the frame")
    }
}

/// Axis-aligned pixel window, always fully inside the frame it was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Roi {
    pub const DEFAULT_EXTENT: usize = 100;

    /// A `w`×`h` window centered at `center`, shifted inward at borders.
    pub fn centered(
        center: (f64, f64),
        w: usize,
        h: usize,
        frame_w: usize,
        frame_h: usize,
    ) -> Result<Self, ImageError> {
        if w == 0 || h == 0 {
            return Err(ImageError::RoiEmpty);
        }
        if w > frame_w || h > frame_h {
            return Err(ImageError::RoiTooLarge { w, h, frame_w, frame_h });
        }
        if !center.0.is_finite() || !center.1.is_finite() {
            return Err(ImageError::NonFiniteCenter);
        }
        let place = |c: f64, extent: usize, limit: usize| -> usize {
            let start = (c - extent as f64 / 2.0).round();
            start.clamp(0.0, (limit - extent) as f64) as usize
        };
        Ok(Self {
            x0: place(center.0, w, frame_w),
            y0: place(center.1, h, frame_h),
            w,
            h,
        })
    }

    /// Bounding box `[min, max]` on each axis grown by `padding` and clipped.
    pub fn bounding(points: &[(f64, f64)], padding: f64, frame_w: usize, frame_h: usize) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let (mut x_lo, mut y_lo) = (f64::INFINITY, f64::INFINITY);
        let (mut x_hi, mut y_hi) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
        let x0 = (x_lo - padding).floor().max(0.0) as usize;
        let y0 = (y_lo - padding).floor().max(0.0) as usize;
        let x1 = ((x_hi + padding).ceil() as usize + 1).min(frame_w);
        let y1 = ((y_hi + padding).ceil() as usize + 1).min(frame_h);
        (x1 > x0 && y1 > y0).then_some(Self {
            x0,
            y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64
            && y >= self.y0 as f64
            && x < (self.x0 + self.w) as f64
            && y < (self.y0 + self.h) as f64
    }
}

/// Extracts a `w`×`h` sub-image around `center`.
pub fn extract_roi(frame: &Frame, center: (f64, f64), w: usize, h: usize) -> Result<(Roi, Frame), ImageError> {
    let roi = Roi::centered(center, w, h, frame.width(), frame.height())?;
    Ok((roi, frame.crop(&roi)))
}

/// The four 2×2 Bayer color filter layouts, named by their top-left quad.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BayerPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerPattern {
    /// Channel index (0=R, 1=G, 2=B) sampled at pixel `(x, y)`.
    pub fn channel_at(self, x: usize, y: usize) -> usize {
        let quad = match self {
            BayerPattern::Rggb => [0, 1, 1, 2],
            BayerPattern::Bggr => [2, 1, 1, 0],
            BayerPattern::Grbg => [1, 0, 2, 1],
            BayerPattern::Gbrg => [1, 2, 0, 1],
        };
        quad[(y % 2) * 2 + (x % 2)]
    }
}

impl std::str::FromStr for BayerPattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(Self::Rggb),
            "BGGR" => Ok(Self::Bggr),
            "GRBG" => Ok(Self::Grbg),
            "GBRG" => Ok(Self::Gbrg),
            other => Err(format!("unknown Bayer pattern `{other}`")),
        }
    }
}

/// Bilinear demosaic: each missing channel is the mean of the in-bounds
/// pixels of that color in the 3×3 neighborhood.
pub fn demosaic(
    plane: &[u8],
    width: usize,
    height: usize,
    pattern: BayerPattern,
    index: usize,
) -> Result<Frame, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::Empty { width, height });
    }
    if !width.is_multiple_of(2) || !height.is_multiple_of(2) {
        return Err(ImageError::OddBayer { width, height });
    }
    if plane.len() != width * height {
        return Err(ImageError::SampleCount {
            expected: width * height,
            actual: plane.len(),
        });
    }
    let mut rgb = vec![[0u8; 3]; width * height];
    for y in 0..height {
        for x in 0..width {
            let own = pattern.channel_at(x, y);
            let mut sums = [0u32; 3];
            let mut counts = [0u32; 3];
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    let c = pattern.channel_at(nx, ny);
                    sums[c] += u32::from(plane[ny * width + nx]);
                    counts[c] += 1;
                }
            }
            let px = &mut rgb[y * width + x];
            for c in 0..3 {
                px[c] = if c == own {
                    plane[y * width + x]
                } else {
                    // Rounded mean, half up.
                    ((sums[c] * 2 + counts[c]) / (counts[c] * 2)) as u8
                };
            }
        }
    }
    Frame::new(width, height, index, rgb)
}
