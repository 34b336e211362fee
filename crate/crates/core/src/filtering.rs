//! Separable Gaussian blur, summed-area-table box mean and the kernel-size
//! schedule shared by both extraction operators.
//!
//! All filters use replicate (clamp-to-edge) border handling. Internally
//! every channel is shifted by a reference value before filtering and
//! shifted back afterwards, which makes constant images come back exactly.

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::LabImage;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("kernel size must be odd, got {0}")]
    EvenKernel(usize),
    #[error("kernel size must be at least 3, got {0}")]
    KernelTooSmall(usize),
    #[error("sigma must be finite and positive, got {0}")]
    InvalidSigma(f64),
    #[error("invalid kernel schedule: {0}")]
    InvalidSchedule(String),
}

/// Default standard deviation for a window of `k` pixels.
pub fn default_sigma(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

pub fn validate_window(k: usize) -> Result<(), FilterError> {
    if k < 3 {
        return Err(FilterError::KernelTooSmall(k));
    }
    if k.is_multiple_of(2) {
        return Err(FilterError::EvenKernel(k));
    }
    Ok(())
}

/// Largest window a `width` x `height` image accepts: `2 * max(w, h)`,
/// rounded down to odd, never below 3.
pub fn window_cap(width: usize, height: usize) -> usize {
    let cap = 2 * width.max(height);
    let cap = if cap.is_multiple_of(2) { cap - 1 } else { cap };
    cap.max(3)
}

/// Clamps `k` to [`window_cap`].
pub fn effective_window(k: usize, width: usize, height: usize) -> usize {
    k.min(window_cap(width, height))
}

/// A sampled, normalized 1-D Gaussian of odd length.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    k: usize,
    sigma: f64,
    taps: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(k: usize, sigma: Option<f64>) -> Result<Self, FilterError> {
        validate_window(k)?;
        let sigma = sigma.unwrap_or_else(|| default_sigma(k));
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(FilterError::InvalidSigma(sigma));
        }
        let r = (k / 2) as i64;
        let raw: Vec<f64> = (-r..=r)
            .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let z: f64 = raw.iter().sum();
        let taps = raw.into_iter().map(|t| t / z).collect();
        Ok(Self { k, sigma, taps })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn radius(&self) -> usize {
        self.k / 2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Same sigma, window shrunk to `k` (no-op if already that small).
    fn truncated(&self, k: usize) -> Self {
        if k >= self.k {
            return self.clone();
        }
        Self::new(k, Some(self.sigma)).expect("truncation keeps a valid window")
    }
}

/// See [`GaussianKernel::new`].
pub fn make_kernel(k: usize, sigma: Option<f64>) -> Result<GaussianKernel, FilterError> {
    GaussianKernel::new(k, sigma)
}

fn channel_reference(img: &LabImage) -> [f64; 3] {
    img.pixel(0, 0)
}

fn centered(img: &LabImage, reference: [f64; 3]) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .flat_map(|p| [p[0] - reference[0], p[1] - reference[1], p[2] - reference[2]])
        .collect()
}

fn restore(mut data: Vec<f64>, reference: [f64; 3]) -> Vec<f64> {
    for p in data.chunks_exact_mut(3) {
        p[0] += reference[0];
        p[1] += reference[1];
        p[2] += reference[2];
    }
    data
}

/// Radius from which rows are convolved in the frequency domain.
const FFT_MIN_RADIUS: usize = 12;

/// Convolves every row of an interleaved 3-channel buffer with the
/// symmetric `taps`, replicating edge pixels.
fn convolve_rows(data: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    if taps.len() / 2 >= FFT_MIN_RADIUS {
        convolve_rows_fft(data, width, height, taps)
    } else {
        convolve_rows_direct(data, width, height, taps)
    }
}

fn convolve_rows_direct(data: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let r = taps.len() / 2;
    let row_len = width * 3;
    let mut out = vec![0.0; data.len()];
    let mut padded = vec![0.0; (width + 2 * r) * 3];
    for y in 0..height {
        let row = &data[y * row_len..(y + 1) * row_len];
        let (first, last) = (&row[..3], &row[row_len - 3..]);
        for i in 0..r {
            padded[i * 3..i * 3 + 3].copy_from_slice(first);
            let j = (r + width + i) * 3;
            padded[j..j + 3].copy_from_slice(last);
        }
        padded[r * 3..(r + width) * 3].copy_from_slice(row);

        let dst = &mut out[y * row_len..(y + 1) * row_len];
        let center = &padded[r * 3..r * 3 + row_len];
        for (d, &s) in dst.iter_mut().zip(center) {
            *d = taps[r] * s;
        }
        for i in 1..=r {
            let t = taps[r + i];
            let lo = &padded[(r - i) * 3..(r - i) * 3 + row_len];
            let hi = &padded[(r + i) * 3..(r + i) * 3 + row_len];
            for ((d, &a), &b) in dst.iter_mut().zip(lo).zip(hi) {
                *d += t * (a + b);
            }
        }
    }
    out
}

/// Circular convolution over a transform long enough that no output
/// wraps. The kernel is real and even, so its spectrum is real and two
/// real signals can share one complex transform (real and imaginary
/// parts stay separate).
fn convolve_rows_fft(data: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let r = taps.len() / 2;
    let padded_len = width + 2 * r;
    let n = padded_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut scratch = vec![Complex::default(); forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len())];

    let mut spectrum = vec![Complex::default(); n];
    for (j, &t) in taps.iter().enumerate() {
        spectrum[(j + n - r) % n].re = t;
    }
    forward.process_with_scratch(&mut spectrum, &mut scratch);
    let scale = 1.0 / n as f64;
    let gain: Vec<f64> = spectrum.iter().map(|c| c.re * scale).collect();

    // Signal `s` is channel `s % 3` of row `s / 3`.
    let signals = height * 3;
    let load = |buf: &mut [Complex<f64>], s: usize, imag: bool| {
        let row = &data[(s / 3) * width * 3..(s / 3 + 1) * width * 3];
        let ch = s % 3;
        let (first, last) = (row[ch], row[(width - 1) * 3 + ch]);
        fn slot(c: &mut Complex<f64>, imag: bool) -> &mut f64 {
            if imag {
                &mut c.im
            } else {
                &mut c.re
            }
        }
        for c in &mut buf[..r] {
            *slot(c, imag) = first;
        }
        for (c, p) in buf[r..r + width].iter_mut().zip(row.chunks_exact(3)) {
            *slot(c, imag) = p[ch];
        }
        for c in &mut buf[r + width..padded_len] {
            *slot(c, imag) = last;
        }
    };
    let mut out = vec![0.0; data.len()];
    let mut buf = vec![Complex::default(); n];
    for a in (0..signals).step_by(2) {
        let b = a + 1;
        buf.fill(Complex::default());
        load(&mut buf, a, false);
        if b < signals {
            load(&mut buf, b, true);
        }
        forward.process_with_scratch(&mut buf, &mut scratch);
        for (c, g) in buf.iter_mut().zip(&gain) {
            *c *= *g;
        }
        inverse.process_with_scratch(&mut buf, &mut scratch);
        let (ra, ca) = (a / 3, a % 3);
        for (x, v) in buf[r..r + width].iter().enumerate() {
            out[(ra * width + x) * 3 + ca] = v.re;
        }
        if b < signals {
            let (rb, cb) = (b / 3, b % 3);
            for (x, v) in buf[r..r + width].iter().enumerate() {
                out[(rb * width + x) * 3 + cb] = v.im;
            }
        }
    }
    out
}

/// Transposes an interleaved 3-channel `width` x `height` buffer.
fn transpose(data: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    const TILE: usize = 32;
    for ty in (0..height).step_by(TILE) {
        for tx in (0..width).step_by(TILE) {
            for y in ty..(ty + TILE).min(height) {
                for x in tx..(tx + TILE).min(width) {
                    let s = (y * width + x) * 3;
                    let d = (x * height + y) * 3;
                    out[d..d + 3].copy_from_slice(&data[s..s + 3]);
                }
            }
        }
    }
    out
}

/// Separable Gaussian blur with replicate borders.
///
/// Kernels wider than [`window_cap`] are truncated to the cap, keeping
/// their sigma.
pub fn gaussian_blur(img: &LabImage, kernel: &GaussianKernel) -> LabImage {
    let (w, h) = img.dimensions();
    let kernel = kernel.truncated(effective_window(kernel.k(), w, h));
    let reference = channel_reference(img);
    let data = centered(img, reference);
    let horiz = convolve_rows(&data, w, h, kernel.taps());
    let t = transpose(&horiz, w, h);
    let vert = convolve_rows(&t, h, w, kernel.taps());
    let out = transpose(&vert, h, w);
    LabImage::from_raw(w, h, restore(out, reference))
}

/// Per-channel mean over the `k` x `k` window around each pixel, replicate
/// borders. Backed by a summed-area table, so the cost does not depend on
/// `k`.
pub fn box_mean(img: &LabImage, k: usize) -> Result<LabImage, FilterError> {
    validate_window(k)?;
    let (w, h) = img.dimensions();
    let r = k / 2;
    let reference = channel_reference(img);
    let data = centered(img, reference);

    // Summed-area table over the replicate-padded image, with a zero
    // leading row and column: sat[(y, x)] = sum over rows < y, cols < x.
    let pw = w + 2 * r;
    let ph = h + 2 * r;
    let stride = (pw + 1) * 3;
    let mut sat = vec![0.0; (ph + 1) * stride];
    for py in 0..ph {
        let sy = py.saturating_sub(r).min(h - 1);
        let mut run = [0.0; 3];
        for px in 0..pw {
            let sx = px.saturating_sub(r).min(w - 1);
            let s = (sy * w + sx) * 3;
            let above = py * stride + (px + 1) * 3;
            let here = (py + 1) * stride + (px + 1) * 3;
            for c in 0..3 {
                run[c] += data[s + c];
                sat[here + c] = sat[above + c] + run[c];
            }
        }
    }

    let area = (k * k) as f64;
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        let top = y * stride;
        let bottom = (y + k) * stride;
        for x in 0..w {
            let left = x * 3;
            let right = (x + k) * 3;
            let o = (y * w + x) * 3;
            for c in 0..3 {
                let sum = sat[bottom + right + c] - sat[top + right + c] - sat[bottom + left + c]
                    + sat[top + left + c];
                out[o + c] = sum / area;
            }
        }
    }
    Ok(LabImage::from_raw(w, h, restore(out, reference)))
}

/// Evenly spaced range of window sizes, `min_k, min_k + step, ..., <= max_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSchedule {
    pub min_k: usize,
    pub max_k: usize,
    pub step: usize,
}

impl Default for KernelSchedule {
    fn default() -> Self {
        Self {
            min_k: 193,
            max_k: 321,
            step: 16,
        }
    }
}

impl KernelSchedule {
    pub fn new(min_k: usize, max_k: usize, step: usize) -> Result<Self, FilterError> {
        let s = Self { min_k, max_k, step };
        s.validate()?;
        Ok(s)
    }

    /// A schedule that always yields `k`.
    pub fn fixed(k: usize) -> Result<Self, FilterError> {
        validate_window(k)?;
        Ok(Self {
            min_k: k,
            max_k: k,
            step: 1,
        })
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.step == 0 {
            return Err(FilterError::InvalidSchedule("step must be at least 1".into()));
        }
        if self.min_k > self.max_k {
            return Err(FilterError::InvalidSchedule(format!(
                "min_k {} exceeds max_k {}",
                self.min_k, self.max_k
            )));
        }
        if self.min_k < 3 {
            return Err(FilterError::InvalidSchedule(format!(
                "min_k must be at least 3, got {}",
                self.min_k
            )));
        }
        Ok(())
    }

    /// Every window size the schedule can produce, in ascending order.
    pub fn values(&self) -> Vec<usize> {
        (self.min_k..=self.max_k)
            .step_by(self.step)
            .map(force_odd)
            .collect()
    }
}

fn force_odd(k: usize) -> usize {
    if k.is_multiple_of(2) {
        k + 1
    } else {
        k
    }
}

/// Draws a window size uniformly from the schedule.
pub fn sample_k<R: Rng + ?Sized>(schedule: &KernelSchedule, rng: &mut R) -> usize {
    let count = (schedule.max_k - schedule.min_k) / schedule.step + 1;
    let i = rng.random_range(0..count);
    force_odd(schedule.min_k + i * schedule.step)
}
