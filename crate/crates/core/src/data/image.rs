use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Planar RGB image (`[3, height, width]`) with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Data(format!("image of size {height}x{width}")));
        }
        if data.len() != CHANNELS * height * width {
            return Err(Error::Data(format!(
                "{height}x{width} RGB image needs {} values, got {}",
                CHANNELS * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image { height, width, data })
    }

    /// Builds from arbitrary values, clamping into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Self {
        assert_eq!(data.len(), CHANNELS * height * width);
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Image { height, width, data }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::from_clamped(height, width, vec![value; CHANNELS * height * width])
    }

    /// Converts interleaved 8-bit RGB.
    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != CHANNELS * height * width {
            return Err(Error::Data(format!("expected {} bytes of RGB", CHANNELS * height * width)));
        }
        let plane = height * width;
        let mut data = vec![0.0; CHANNELS * plane];
        for (i, px) in rgb.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                data[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        Image::new(height, width, data)
    }

    /// Interleaved 8-bit RGB, rounded to nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(CHANNELS * plane);
        for i in 0..plane {
            for c in 0..CHANNELS {
                out.push(libm::roundf(self.data[c * plane + i] * 255.0) as u8);
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Copies the `p×p` window at `(row, col)` into `out` as `[3, p, p]`.
    pub fn crop_into(&self, row: usize, col: usize, p: usize, out: &mut [f32]) {
        debug_assert!(row + p <= self.height && col + p <= self.width);
        for c in 0..CHANNELS {
            for y in 0..p {
                let src = (c * self.height + row + y) * self.width + col;
                let dst = (c * p + y) * p;
                out[dst..dst + p].copy_from_slice(&self.data[src..src + p]);
            }
        }
    }

    /// Mean and population standard deviation over all values.
    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.data.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / n;
        (mean, libm::sqrt(var))
    }
}

/// Mirror index into `0..n` (edge pixel not repeated).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Bilinear sample of one plane at fractional `(y, x)` with reflected borders.
pub(crate) fn bilinear(plane: &[f32], h: usize, w: usize, y: f32, x: f32) -> f32 {
    let y0 = libm::floorf(y);
    let x0 = libm::floorf(x);
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let at = |yy: isize, xx: isize| plane[reflect(yy, h) * w + reflect(xx, w)];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Scales by `scale` and rotates by `degrees` about the image centre,
/// resampling bilinearly with reflected borders. Output size is unchanged.
pub fn affine_transform(img: &Image, scale: f32, degrees: f32) -> Image {
    let (h, w) = (img.height, img.width);
    if scale == 1.0 && degrees == 0.0 {
        return img.clone();
    }
    let theta = degrees.to_radians();
    let (sin, cos) = (libm::sinf(theta), libm::cosf(theta));
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    let mut data = vec![0.0; img.data.len()];
    for c in 0..CHANNELS {
        let src = img.plane(c);
        let dst = &mut data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // Inverse map: output pixel to source coordinates.
                let dy = (y as f32 - cy) / scale;
                let dx = (x as f32 - cx) / scale;
                let sy = cos * dy - sin * dx + cy;
                let sx = sin * dy + cos * dx + cx;
                dst[y * w + x] = bilinear(src, h, w, sy, sx);
            }
        }
    }
    Image::from_clamped(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(Image::new(1, 1, vec![0.0, 1.5, 0.2]).is_err());
        assert!(Image::new(1, 1, vec![0.0, 0.5]).is_err());
    }

    #[test]
    fn reflect_mirrors_without_repeating_edges() {
        assert_eq!(reflect(-1, 4), 1);
        assert_eq!(reflect(4, 4), 2);
        assert_eq!(reflect(7, 4), 1);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn rgb8_round_trip() {
        let rgb: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        let img = Image::from_rgb8(2, 2, &rgb).unwrap();
        assert_eq!(img.at(1, 0, 0), 20.0 / 255.0);
        assert_eq!(img.to_rgb8(), rgb);
    }

    #[test]
    fn identity_affine_is_exact() {
        let img = Image::from_clamped(3, 4, (0..36).map(|i| i as f32 / 36.0).collect());
        assert_eq!(affine_transform(&img, 1.0, 0.0), img);
    }

    #[test]
    fn small_rotation_keeps_the_centre() {
        let img = Image::from_clamped(5, 5, (0..75).map(|i| (i % 25) as f32 / 25.0).collect());
        let out = affine_transform(&img, 1.02, 3.0);
        assert!((out.at(0, 2, 2) - img.at(0, 2, 2)).abs() < 1e-6);
    }
}
