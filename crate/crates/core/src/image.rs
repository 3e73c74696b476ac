//! Dense multi-channel images.
//!
//! Pixel `(u, v)` has `u` growing to the right and `v` growing *upwards*, matching the
//! camera frame used for ray generation (x right, y up, looking down −z). PNG files store
//! rows top-down, so rows are flipped when reading and writing.

use std::path::Path;

use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(u, v)` per pixel; `f` returns `channels` values.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, &mut [T]),
    ) -> Self {
        let mut img = Self::zeros(width, height, channels);
        for v in 0..height {
            for u in 0..width {
                let px = img.pixel_mut(u, v);
                f(u, v, px);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        (v * self.width + u) * self.channels
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> &[T] {
        let i = self.index(u, v);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, u: usize, v: usize) -> &mut [T] {
        let i = self.index(u, v);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> T {
        self.data[self.index(u, v) + c]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, c: usize, value: T) {
        let i = self.index(u, v) + c;
        self.data[i] = value;
    }

    pub fn same_shape(&self, other: &Image<T>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Image<T>, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Image<T> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Single channel `c` as a one-channel image.
    pub fn channel(&self, c: usize) -> Image<T> {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Repeats a one-channel image `n` times.
    pub fn broadcast_channels(&self, n: usize) -> Image<T> {
        assert_eq!(self.channels, 1);
        Image {
            width: self.width,
            height: self.height,
            channels: n,
            data: self.data.iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect(),
        }
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.data.iter().copied().sum::<T>() / T::from_usize_lossy(self.data.len())
    }

    pub fn convert<U: Scalar>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }

    /// Writes an 8-bit PNG (gray for one channel, RGB for three); values are clamped to `[0, 1]`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let to_u8 = |x: T| -> u8 {
            let f = x.as_f64();
            let f = if f.is_nan() { 0.0 } else { f.clamp(0.0, 1.0) };
            (f * 255.0).round() as u8
        };
        let mut bytes = Vec::with_capacity(self.num_pixels() * self.channels);
        for row in (0..self.height).rev() {
            for u in 0..self.width {
                bytes.extend(self.pixel(u, row).iter().map(|&x| to_u8(x)));
            }
        }
        let (w, h) = (self.width as u32, self.height as u32);
        let result = match self.channels {
            1 => image::GrayImage::from_raw(w, h, bytes).map(|i| i.save(path)),
            3 => image::RgbImage::from_raw(w, h, bytes).map(|i| i.save(path)),
            c => {
                return Err(Error::Unsupported(format!("PNG export of {c}-channel images")));
            }
        };
        result
            .expect("buffer sized to image")
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Reads a PNG as RGB in `[0, 1]`.
    pub fn load_png_rgb(path: impl AsRef<Path>) -> Result<Image<T>> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = decoded.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let scale = T::lit(1.0 / 255.0);
        Ok(Image::from_fn(w, h, 3, |u, v, px| {
            let p = rgb.get_pixel(u as u32, (h - 1 - v) as u32);
            for c in 0..3 {
                px[c] = T::from_u8(p[c]).expect("u8 fits") * scale;
            }
        }))
    }
}
