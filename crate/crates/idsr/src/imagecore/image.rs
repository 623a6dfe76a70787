use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major H×W×C floating image. Samples nominally live in [0,1];
/// intermediate arithmetic is left unclamped so losses see true residuals,
/// clamping happens only when writing files.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<S: Real> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<S>,
}

impl<S: Real> Image<S> {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Image {
            height,
            width,
            channels,
            data: vec![S::zero(); height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut img = Image::new(height, width, 1);
        for u in 0..height {
            for v in 0..width {
                img[(u, v, 0)] = f(u, v);
            }
        }
        img
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: S) -> Self {
        let mut img = Image::new(height, width, channels);
        img.data.fill(value);
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> S {
        self.data[(u * self.width + v) * self.channels + c]
    }

    /// Sample with replicate (edge-clamp) extension for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, u: isize, v: isize, c: usize) -> S {
        let u = u.clamp(0, self.height as isize - 1) as usize;
        let v = v.clamp(0, self.width as isize - 1) as usize;
        self.get(u, v, c)
    }

    pub fn to_grayscale(&self) -> Result<Image<S>> {
        if self.channels != 3 {
            return Err(Error::ChannelCount {
                expected: 3,
                got: self.channels,
            });
        }
        // ITU-R BT.601 luma weights.
        let (wr, wg, wb) = (S::of(0.299), S::of(0.587), S::of(0.114));
        let mut out = Image::new(self.height, self.width, 1);
        for (dst, rgb) in out.data.iter_mut().zip(self.data.chunks_exact(3)) {
            *dst = wr * rgb[0] + wg * rgb[1] + wb * rgb[2];
        }
        Ok(out)
    }

    /// Grayscale view of this image: identity for 1-channel, luma for 3-channel.
    pub fn luminance(&self) -> Image<S> {
        if self.channels == 1 {
            self.clone()
        } else {
            self.to_grayscale().expect("3-channel image")
        }
    }

    /// Per-pixel subtraction, unclamped.
    pub fn subtract(&self, other: &Self) -> Result<Image<S>> {
        if !self.same_dims(other) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Image::from_vec(self.height, self.width, self.channels, data)
    }

    pub fn add(&self, other: &Self) -> Result<Image<S>> {
        if !self.same_dims(other) {
            return Err(Error::DimensionMismatch("add: shape mismatch".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Image::from_vec(self.height, self.width, self.channels, data)
    }

    pub fn scale(&self, factor: S) -> Image<S> {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = *v * factor;
        }
        out
    }

    pub fn clamp01(&self) -> Image<S> {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = v.max(S::zero()).min(S::one());
        }
        out
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image<S>> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {}+{}x{}+{} exceeds {}x{}",
                top, height, left, width, self.height, self.width
            )));
        }
        let mut out = Image::new(height, width, self.channels);
        for u in 0..height {
            for v in 0..width {
                for c in 0..self.channels {
                    out[(u, v, c)] = self.get(top + u, left + v, c);
                }
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Image<S> {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = f(*v);
        }
        out
    }

    pub fn cast<T: Real>(&self) -> Image<T> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| T::of(v.to_f64_lossy())).collect(),
        }
    }
}

impl<S: Real> std::ops::Index<(usize, usize, usize)> for Image<S> {
    type Output = S;
    #[inline]
    fn index(&self, (u, v, c): (usize, usize, usize)) -> &S {
        &self.data[(u * self.width + v) * self.channels + c]
    }
}

impl<S: Real> std::ops::IndexMut<(usize, usize, usize)> for Image<S> {
    #[inline]
    fn index_mut(&mut self, (u, v, c): (usize, usize, usize)) -> &mut S {
        &mut self.data[(u * self.width + v) * self.channels + c]
    }
}
