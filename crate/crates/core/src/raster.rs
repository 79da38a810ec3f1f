//! Row-major multi-channel `f32` images used for color, depth, normal and
//! semantic maps.
//!
//! Pixel `(u, v)` has its center at continuous coordinate `(u, v)`, so
//! projecting a point and sampling the map at the returned pixel needs no
//! half-pixel offset.

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

/// Bilinear stencil at a continuous pixel position.
#[derive(Debug, Clone, Copy)]
pub struct Bilinear {
    pub x0: usize,
    pub y0: usize,
    pub fx: f64,
    pub fy: f64,
}

impl Bilinear {
    /// Corner offsets paired with their weights, in (00, 10, 01, 11) order.
    pub fn taps(&self) -> [(usize, usize, f64); 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            (self.x0, self.y0, (1.0 - fx) * (1.0 - fy)),
            (self.x0 + 1, self.y0, fx * (1.0 - fy)),
            (self.x0, self.y0 + 1, (1.0 - fx) * fy),
            (self.x0 + 1, self.y0 + 1, fx * fy),
        ]
    }

    /// d(weight)/d(px), d(weight)/d(py) for the taps in [`Bilinear::taps`] order.
    pub fn taps_grad(&self) -> [(f64, f64); 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            (-(1.0 - fy), -(1.0 - fx)),
            (1.0 - fy, -fx),
            (-fy, 1.0 - fx),
            (fy, fx),
        ]
    }
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Option<Self> {
        (data.len() == width * height * channels).then_some(Self {
            width,
            height,
            channels,
            data,
        })
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Whether a continuous pixel position lies inside the sampling domain
    /// `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= 0.0 && py >= 0.0 && px <= (self.width - 1) as f64 && py <= (self.height - 1) as f64
    }

    /// Nearest pixel to a continuous position, if inside the image.
    #[inline]
    pub fn nearest(&self, px: f64, py: f64) -> Option<(usize, usize)> {
        let x = px.round();
        let y = py.round();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        Some((x as usize, y as usize))
    }

    /// Bilinear stencil; `None` outside the sampling domain. On the last
    /// row/column the stencil is shifted inward so all four taps exist.
    #[inline]
    pub fn stencil(&self, px: f64, py: f64) -> Option<Bilinear> {
        if !self.contains(px, py) || self.width < 2 || self.height < 2 {
            return None;
        }
        let x0 = (px.floor() as usize).min(self.width - 2);
        let y0 = (py.floor() as usize).min(self.height - 2);
        Some(Bilinear {
            x0,
            y0,
            fx: px - x0 as f64,
            fy: py - y0 as f64,
        })
    }

    /// Bilinear sample of one channel.
    pub fn sample(&self, px: f64, py: f64, c: usize) -> Option<f64> {
        let s = self.stencil(px, py)?;
        Some(
            s.taps()
                .iter()
                .map(|&(x, y, w)| w * self.get(x, y, c) as f64)
                .sum(),
        )
    }

    /// Bilinear sample of one channel with its image-space gradient.
    pub fn sample_with_grad(&self, px: f64, py: f64, c: usize) -> Option<(f64, f64, f64)> {
        let s = self.stencil(px, py)?;
        let mut v = 0.0;
        let mut gx = 0.0;
        let mut gy = 0.0;
        for ((x, y, w), (dx, dy)) in s.taps().into_iter().zip(s.taps_grad()) {
            let p = self.get(x, y, c) as f64;
            v += w * p;
            gx += dx * p;
            gy += dy * p;
        }
        Some((v, gx, gy))
    }

    /// Like [`Raster::sample`] but requires all four taps to be valid depths
    /// (finite and positive).
    pub fn sample_depth(&self, px: f64, py: f64) -> Option<f64> {
        let (v, _, _) = self.sample_depth_with_grad(px, py)?;
        Some(v)
    }

    pub fn sample_depth_with_grad(&self, px: f64, py: f64) -> Option<(f64, f64, f64)> {
        let s = self.stencil(px, py)?;
        for (x, y, _) in s.taps() {
            if !is_valid_depth(self.get(x, y, 0)) {
                return None;
            }
        }
        self.sample_with_grad(px, py, 0)
    }

    /// Convert an RGB raster to grayscale intensities.
    pub fn to_gray(&self) -> Raster {
        assert_eq!(self.channels, 3, "to_gray expects an RGB raster");
        let mut out = Raster::new(self.width, self.height, 1);
        for (dst, src) in out.data.iter_mut().zip(self.data.chunks_exact(3)) {
            *dst = 0.299 * src[0] + 0.587 * src[1] + 0.114 * src[2];
        }
        out
    }
}

#[inline]
pub fn is_valid_depth(d: f32) -> bool {
    d.is_finite() && d > 0.0
}
