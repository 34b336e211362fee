//! Fixtures and brute-force reference implementations shared by the
//! integration tests. Nothing here calls into the library's filtering or
//! saliency code.
#![allow(dead_code)]

use compcond::colorspace::{LabImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rgb(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut r = rng(seed);
    RgbImage::from_fn(w, h, |_, _| [r.random(), r.random(), r.random()])
}

pub fn random_lab(w: usize, h: usize, seed: u64) -> LabImage {
    let mut r = rng(seed);
    LabImage::from_fn(w, h, |_, _| {
        [
            r.random_range(0.0..100.0),
            r.random_range(-80.0..80.0),
            r.random_range(-80.0..80.0),
        ]
    })
}

/// Smooth 1/f-ish background, a handful of flat shapes and mild noise; a
/// stand-in for a photograph.
pub fn natural_like(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut r = rng(seed);
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..24)
        .map(|i| {
            let f = 1.0 + i as f64 * 0.75;
            let angle = r.random_range(0.0..std::f64::consts::TAU);
            let phase = r.random_range(0.0..std::f64::consts::TAU);
            let amp = [0, 1, 2].map(|_| r.random_range(20.0..60.0) / f);
            (f * angle.cos(), f * angle.sin(), phase, amp)
        })
        .collect();
    let shapes: Vec<(f64, f64, f64, bool, [f64; 3])> = (0..6)
        .map(|_| {
            (
                r.random_range(0.0..w as f64),
                r.random_range(0.0..h as f64),
                r.random_range(0.05..0.25) * w.min(h) as f64,
                r.random_bool(0.5),
                [0, 1, 2].map(|_| r.random_range(0.0..255.0)),
            )
        })
        .collect();
    let noise: Vec<f64> = (0..w * h * 3).map(|_| r.random_range(-6.0..6.0)).collect();
    RgbImage::from_fn(w, h, |x, y| {
        let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
        let mut px = [128.0; 3];
        for (fx, fy, phase, amp) in &waves {
            let s = (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin();
            for c in 0..3 {
                px[c] += amp[c] * s;
            }
        }
        for (cx, cy, rad, disk, color) in &shapes {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let inside = if *disk {
                dx * dx + dy * dy <= rad * rad
            } else {
                dx.abs() <= *rad && dy.abs() <= rad * 0.6
            };
            if inside {
                px = *color;
            }
        }
        let i = (y * w + x) * 3;
        [0, 1, 2].map(|c| (px[c] + noise[i + c]).round().clamp(0.0, 255.0) as u8)
    })
}

// ---- filtering / saliency oracles ----

pub fn oracle_sigma(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

/// Window actually applied to a `w` x `h` image.
pub fn oracle_window(k: usize, w: usize, h: usize) -> usize {
    let mut cap = 2 * w.max(h);
    if cap.is_multiple_of(2) {
        cap -= 1;
    }
    k.min(cap.max(3))
}

fn clamp_at(img: &LabImage, x: isize, y: isize) -> [f64; 3] {
    let xc = x.clamp(0, img.width() as isize - 1) as usize;
    let yc = y.clamp(0, img.height() as isize - 1) as usize;
    img.pixel(xc, yc)
}

/// Direct 2-D Gaussian convolution with replicated borders.
pub fn naive_blur(img: &LabImage, k: usize, sigma: f64) -> Vec<[f64; 3]> {
    let r = (k / 2) as isize;
    let mut weights = Vec::new();
    let mut z = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            weights.push((dx, dy, wgt));
            z += wgt;
        }
    }
    let (w, h) = img.dimensions();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = [0.0; 3];
            for &(dx, dy, wgt) in &weights {
                let p = clamp_at(img, x + dx, y + dy);
                for c in 0..3 {
                    acc[c] += wgt * p[c];
                }
            }
            out.push(acc.map(|v| v / z));
        }
    }
    out
}

/// Direct k x k mean with replicated borders.
pub fn naive_box_mean(img: &LabImage, k: usize) -> Vec<[f64; 3]> {
    let r = (k / 2) as isize;
    let n = (k * k) as f64;
    let (w, h) = img.dimensions();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = [0.0; 3];
            for dy in -r..=r {
                for dx in -r..=r {
                    let p = clamp_at(img, x + dx, y + dy);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                }
            }
            out.push(acc.map(|v| v / n));
        }
    }
    out
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `|mean(img) - blur(img)|` before normalization.
pub fn oracle_global(img: &LabImage, k: usize) -> Vec<f64> {
    let sigma = oracle_sigma(k);
    let kk = oracle_window(k, img.width(), img.height());
    let mut mean = [0.0; 3];
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(x, y);
            for c in 0..3 {
                mean[c] += p[c];
            }
        }
    }
    let n = (img.width() * img.height()) as f64;
    let mean = mean.map(|v| v / n);
    naive_blur(img, kk, sigma).into_iter().map(|b| dist(mean, b)).collect()
}

/// `|box_mean(img) - blur(img)|`.
pub fn oracle_local(img: &LabImage, k: usize) -> Vec<f64> {
    let sigma = oracle_sigma(k);
    let kk = oracle_window(k, img.width(), img.height());
    let b = naive_blur(img, kk, sigma);
    let m = naive_box_mean(img, kk);
    b.into_iter().zip(m).map(|(p, q)| dist(p, q)).collect()
}

// ---- segmentation scoring ----

/// Fraction of pixels correctly labelled under the best one-to-one mapping
/// from predicted to true labels (exhaustive search; small label counts).
pub fn best_relabel_agreement(pred: &[u32], truth: &[u32]) -> f64 {
    let np = *pred.iter().max().unwrap() as usize + 1;
    let nt = *truth.iter().max().unwrap() as usize + 1;
    let mut table = vec![vec![0usize; nt]; np];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p as usize][t as usize] += 1;
    }
    fn search(table: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
        if row == table.len() {
            return 0;
        }
        // Leave this predicted label unmatched.
        let mut best = search(table, row + 1, used);
        for t in 0..used.len() {
            if !used[t] {
                used[t] = true;
                best = best.max(table[row][t] + search(table, row + 1, used));
                used[t] = false;
            }
        }
        best
    }
    search(&table, 0, &mut vec![false; nt]) as f64 / pred.len() as f64
}

// ---- embeddings ----

pub fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Sort everything, slice the top `n` (similarity desc, id asc).
pub fn exhaustive_top(ids: &[String], embeddings: &[Vec<f64>], theme: &[f64], n: usize) -> Vec<String> {
    let mut all: Vec<(f64, &String)> = ids
        .iter()
        .zip(embeddings)
        .map(|(id, e)| (e.iter().zip(theme).map(|(a, b)| a * b).sum(), id))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    all.into_iter().take(n).map(|(_, id)| id.clone()).collect()
}
