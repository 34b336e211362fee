//! Color-distribution maps: heavy Gaussian blur, SLIC superpixels over the
//! blurred Lab image, then every superpixel painted with its mean color.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::LabImage;
use crate::filtering::{self, FilterError, GaussianKernel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SlicError {
    #[error("invalid SLIC parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Clustering and pre-blur parameters for the color operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    /// Grid spacing `S` in pixels.
    pub region_size: usize,
    pub iterations: usize,
    /// Weight `m` of spatial distance against Lab distance.
    pub compactness: f64,
    /// Pre-blur window; `None` clusters the image as given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur_k: Option<usize>,
    /// Pre-blur sigma; `None` derives it from `blur_k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur_sigma: Option<f64>,
    pub enforce_connectivity: bool,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            region_size: 128,
            iterations: 20,
            compactness: 10.0,
            blur_k: Some(257),
            blur_sigma: None,
            enforce_connectivity: true,
        }
    }
}

impl SlicParams {
    pub fn validate(&self) -> Result<(), SlicError> {
        if self.region_size < 2 {
            return Err(SlicError::InvalidParams(format!(
                "region size must be at least 2, got {}",
                self.region_size
            )));
        }
        if self.iterations < 1 {
            return Err(SlicError::InvalidParams("iterations must be at least 1".into()));
        }
        if !(self.compactness.is_finite() && self.compactness > 0.0) {
            return Err(SlicError::InvalidParams(format!(
                "compactness must be finite and positive, got {}",
                self.compactness
            )));
        }
        if let Some(k) = self.blur_k {
            filtering::validate_window(k)?;
        }
        if let Some(s) = self.blur_sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(FilterError::InvalidSigma(s).into());
            }
        }
        Ok(())
    }
}

/// A cluster center in joint color/position space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Center {
    pub lab: [f64; 3],
    pub x: f64,
    pub y: f64,
}

/// SLIC distance `sqrt(d_lab^2 + (d_xy / S)^2 * m^2)`.
pub fn slic_distance(lab: [f64; 3], x: f64, y: f64, center: &Center, region_size: usize, compactness: f64) -> f64 {
    slic_distance_sq(lab, x, y, center, spatial_weight(region_size, compactness)).sqrt()
}

fn spatial_weight(region_size: usize, compactness: f64) -> f64 {
    let s = region_size as f64;
    compactness * compactness / (s * s)
}

#[inline]
fn slic_distance_sq(lab: [f64; 3], x: f64, y: f64, c: &Center, spatial: f64) -> f64 {
    let (dl, da, db) = (lab[0] - c.lab[0], lab[1] - c.lab[1], lab[2] - c.lab[2]);
    let (dx, dy) = (x - c.x, y - c.y);
    dl * dl + da * da + db * db + (dx * dx * spatial + dy * dy * spatial)
}

/// Pixel partition produced by [`slic_segment`].
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub centers: Vec<Center>,
    pub counts: Vec<usize>,
}

impl Segmentation {
    pub fn num_clusters(&self) -> usize {
        self.centers.len()
    }
}

/// State of one assignment/update round, handed to observers.
#[derive(Debug)]
pub struct IterationTrace<'a> {
    pub iteration: usize,
    pub labels_before: &'a [u32],
    pub labels_after: &'a [u32],
    /// Centers used during assignment.
    pub centers_before: &'a [Center],
    /// Centers after the update step.
    pub centers_after: &'a [Center],
}

fn grid_count(extent: usize, s: usize) -> usize {
    ((extent as f64 / s as f64).round() as usize).max(1)
}

fn gradient_sq(img: &LabImage, x: usize, y: usize) -> f64 {
    let (w, h) = img.dimensions();
    let l = img.pixel(x.saturating_sub(1), y);
    let r = img.pixel((x + 1).min(w - 1), y);
    let u = img.pixel(x, y.saturating_sub(1));
    let d = img.pixel(x, (y + 1).min(h - 1));
    (0..3)
        .map(|c| (r[c] - l[c]).powi(2) + (d[c] - u[c]).powi(2))
        .sum()
}

/// Grid seeds, each moved to the lowest-gradient pixel of its 3x3
/// neighborhood.
fn seed_centers(img: &LabImage, s: usize) -> (Vec<Center>, usize, usize) {
    let (w, h) = img.dimensions();
    let (nx, ny) = (grid_count(w, s), grid_count(h, s));
    let (step_x, step_y) = (w as f64 / nx as f64, h as f64 / ny as f64);
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = (((i as f64 + 0.5) * step_x) as usize).min(w - 1);
            let cy = (((j as f64 + 0.5) * step_y) as usize).min(h - 1);
            let (mut bx, mut by) = (cx, cy);
            let mut best = gradient_sq(img, cx, cy);
            for y in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                for x in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                    let g = gradient_sq(img, x, y);
                    if g < best {
                        best = g;
                        bx = x;
                        by = y;
                    }
                }
            }
            centers.push(Center {
                lab: img.pixel(bx, by),
                x: bx as f64,
                y: by as f64,
            });
        }
    }
    (centers, nx, ny)
}

/// Maximal runs of equal labels in `row`, as `(start, end, label)`.
fn label_runs(row: &[u32]) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= row.len() {
            return None;
        }
        let label = row[start];
        let end = start + row[start..].iter().position(|&l| l != label).unwrap_or(row.len() - start);
        let run = (start, end, label);
        start = end;
        Some(run)
    })
}

/// Recomputes each center as the mean of its members' `(L, a, b, x, y)`.
/// Color sums are taken relative to the first member so clusters of
/// identical pixels reproduce that pixel exactly (position sums are exact
/// integers anyway). Empty clusters keep their center.
fn update_centers(img: &LabImage, labels: &[u32], centers: &mut [Center], counts: &mut [usize]) {
    let k = centers.len();
    let mut reference: Vec<Option<[f64; 3]>> = vec![None; k];
    let mut sums = vec![[0.0f64; 5]; k];
    counts.iter_mut().for_each(|c| *c = 0);
    let w = img.width();
    for (y, (row_labels, row_px)) in labels.chunks_exact(w).zip(img.data().chunks_exact(w * 3)).enumerate() {
        for (a, b, label) in label_runs(row_labels) {
            let l = label as usize;
            let px = &row_px[a * 3..b * 3];
            let r = *reference[l].get_or_insert([px[0], px[1], px[2]]);
            let mut acc = [0.0; 3];
            for p in px.chunks_exact(3) {
                acc[0] += p[0] - r[0];
                acc[1] += p[1] - r[1];
                acc[2] += p[2] - r[2];
            }
            let n = b - a;
            let s = &mut sums[l];
            s[0] += acc[0];
            s[1] += acc[1];
            s[2] += acc[2];
            s[3] += ((a + b - 1) * n / 2) as f64;
            s[4] += (y * n) as f64;
            counts[l] += n;
        }
    }
    for l in 0..k {
        if let Some(r) = reference[l] {
            let (m, n) = (sums[l], counts[l] as f64);
            centers[l] = Center {
                lab: [r[0] + m[0] / n, r[1] + m[1] / n, r[2] + m[2] / n],
                x: m[3] / n,
                y: m[4] / n,
            };
        }
    }
}

/// One row of a center's search window.
struct AssignRow<'a> {
    planes: [&'a [f64]; 3],
    dxs: &'a [f64],
    dy: f64,
    lab: [f64; 3],
    label: u32,
}

/// Moves pixels of `row` whose distance to the center beats `dist`.
#[inline(always)]
fn assign_generic(row: &AssignRow<'_>, dist: &mut [f64], labels: &mut [u32]) {
    let n = row.dxs.len();
    let (pl, pa, pb) = (&row.planes[0][..n], &row.planes[1][..n], &row.planes[2][..n]);
    let (dist, labels) = (&mut dist[..n], &mut labels[..n]);
    for j in 0..n {
        let (dl, da, db) = (pl[j] - row.lab[0], pa[j] - row.lab[1], pb[j] - row.lab[2]);
        let cand = dl * dl + da * da + db * db + (row.dxs[j] + row.dy);
        let better = cand < dist[j];
        dist[j] = if better { cand } else { dist[j] };
        labels[j] = if better { row.label } else { labels[j] };
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn assign_avx2(row: &AssignRow<'_>, dist: &mut [f64], labels: &mut [u32]) {
    assign_generic(row, dist, labels)
}

/// Same arithmetic on every path (no fused operations), so results do
/// not depend on the CPU.
fn assign(row: &AssignRow<'_>, dist: &mut [f64], labels: &mut [u32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { assign_avx2(row, dist, labels) };
    }
    assign_generic(row, dist, labels)
}

/// Superpixel segmentation of `img` (no pre-blur is applied here).
pub fn slic_segment(img: &LabImage, params: &SlicParams) -> Result<Segmentation, SlicError> {
    slic_segment_observed(img, params, |_| {})
}

/// [`slic_segment`] with a callback after every assignment/update round.
pub fn slic_segment_observed(
    img: &LabImage,
    params: &SlicParams,
    mut observer: impl FnMut(&IterationTrace<'_>),
) -> Result<Segmentation, SlicError> {
    params.validate()?;
    let (w, h) = img.dimensions();
    let s = params.region_size;
    let spatial = spatial_weight(s, params.compactness);
    let (mut centers, nx, ny) = seed_centers(img, s);
    let (step_x, step_y) = (w as f64 / nx as f64, h as f64 / ny as f64);

    let mut labels: Vec<u32> = (0..w * h)
        .map(|i| {
            let gx = (((i % w) as f64 / step_x) as usize).min(nx - 1);
            let gy = (((i / w) as f64 / step_y) as usize).min(ny - 1);
            (gy * nx + gx) as u32
        })
        .collect();
    let mut counts = vec![0usize; centers.len()];
    let mut dist = vec![0.0f64; w * h];
    let data = img.data();
    let planes: [Vec<f64>; 3] = [0, 1, 2].map(|c| data.iter().skip(c).step_by(3).copied().collect());
    let reach = s as f64;

    let mut iteration = 0;
    while iteration < params.iterations {
        let labels_before = labels.clone();
        let centers_before = centers.clone();

        // A pixel only moves to a center strictly closer than its own.
        for y in 0..h {
            let row = y * w..(y + 1) * w;
            for (a, b, l) in label_runs(&labels[row.clone()]) {
                let c = &centers[l as usize];
                let dxs: Vec<f64> = (a..b).map(|x| (x as f64 - c.x).powi(2) * spatial).collect();
                let dy = (y as f64 - c.y).powi(2) * spatial;
                let span = row.start + a..row.start + b;
                let (pl, pa, pb) = (&planes[0][span.clone()], &planes[1][span.clone()], &planes[2][span.clone()]);
                for ((((d, &dx), &l0), &a0), &b0) in dist[span].iter_mut().zip(&dxs).zip(pl).zip(pa).zip(pb) {
                    let (dl, da, db) = (l0 - c.lab[0], a0 - c.lab[1], b0 - c.lab[2]);
                    *d = dl * dl + da * da + db * db + (dx + dy);
                }
            }
        }
        for (ci, c) in centers.iter().enumerate() {
            let x0 = (c.x - reach).ceil().max(0.0) as usize;
            let x1 = ((c.x + reach).floor().max(0.0) as usize).min(w - 1);
            let y0 = (c.y - reach).ceil().max(0.0) as usize;
            let y1 = ((c.y + reach).floor().max(0.0) as usize).min(h - 1);
            if x0 > x1 || y0 > y1 {
                continue;
            }
            let dxs: Vec<f64> = (x0..=x1).map(|x| (x as f64 - c.x).powi(2) * spatial).collect();
            for y in y0..=y1 {
                let dy = (y as f64 - c.y).powi(2) * spatial;
                let span = y * w + x0..y * w + x1 + 1;
                let row = AssignRow {
                    planes: [&planes[0][span.clone()], &planes[1][span.clone()], &planes[2][span.clone()]],
                    dxs: &dxs,
                    dy,
                    lab: c.lab,
                    label: ci as u32,
                };
                assign(&row, &mut dist[span.clone()], &mut labels[span]);
            }
        }

        update_centers(img, &labels, &mut centers, &mut counts);
        observer(&IterationTrace {
            iteration,
            labels_before: &labels_before,
            labels_after: &labels,
            centers_before: &centers_before,
            centers_after: &centers,
        });
        iteration += 1;
        // A round that changes nothing is a fixed point: every later round
        // would repeat it exactly, so only the observer needs to see them.
        if labels == labels_before && centers == centers_before {
            while iteration < params.iterations {
                observer(&IterationTrace {
                    iteration,
                    labels_before: &labels,
                    labels_after: &labels,
                    centers_before: &centers,
                    centers_after: &centers,
                });
                iteration += 1;
            }
        }
    }

    if params.enforce_connectivity {
        let min_size = (s * s) / 4;
        enforce_connectivity(&mut labels, w, h, min_size);
    }
    Ok(compact(img, labels, centers))
}

/// Drops empty clusters, renumbers labels densely (keeping their order) and
/// recomputes every center from the final labels.
fn compact(img: &LabImage, mut labels: Vec<u32>, centers: Vec<Center>) -> Segmentation {
    let mut used = vec![false; centers.len()];
    for &l in &labels {
        used[l as usize] = true;
    }
    let mut remap = vec![u32::MAX; centers.len()];
    let mut kept = Vec::new();
    for (old, &u) in used.iter().enumerate() {
        if u {
            remap[old] = kept.len() as u32;
            kept.push(centers[old]);
        }
    }
    for l in labels.iter_mut() {
        *l = remap[*l as usize];
    }
    let mut counts = vec![0; kept.len()];
    update_centers(img, &labels, &mut kept, &mut counts);
    Segmentation {
        width: img.width(),
        height: img.height(),
        labels,
        centers: kept,
        counts,
    }
}

/// Merges 4-connected components smaller than `min_size` into the adjacent
/// cluster they share the longest boundary with, smallest components first.
fn enforce_connectivity(labels: &mut [u32], w: usize, h: usize, min_size: usize) {
    let n = w * h;
    let mut comp = vec![u32::MAX; n];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = comp_label.len() as u32;
        let label = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if comp[j] == u32::MAX && labels[j] == label {
                    comp[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        comp_label.push(label);
        comp_size.push(size);
    }
    let count = comp_label.len();
    if count <= 1 || comp_size.iter().all(|&s| s >= min_size) {
        return;
    }

    let mut neighbors: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); count];
    let mut link = |a: u32, b: u32| {
        if a != b {
            *neighbors[a as usize].entry(b as usize).or_default() += 1;
            *neighbors[b as usize].entry(a as usize).or_default() += 1;
        }
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                link(comp[i], comp[i + 1]);
            }
            if y + 1 < h {
                link(comp[i], comp[i + w]);
            }
        }
    }

    // Agglomerate groups of components; group ids are their first component.
    let mut parent: Vec<usize> = (0..count).collect();
    let mut group_size = comp_size.clone();
    let mut group_label = comp_label.clone();
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..count)
        .filter(|&c| comp_size[c] < min_size)
        .map(|c| Reverse((comp_size[c], c)))
        .collect();
    while let Some(Reverse((size, g))) = heap.pop() {
        if parent[g] != g || group_size[g] != size || size >= min_size {
            continue;
        }
        let Some((&target, _)) = neighbors[g]
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        else {
            continue;
        };
        let absorbed = std::mem::take(&mut neighbors[g]);
        for (other, cnt) in absorbed {
            neighbors[other].remove(&g);
            if other != target {
                *neighbors[target].entry(other).or_default() += cnt;
                *neighbors[other].entry(target).or_default() += cnt;
            }
        }
        parent[g] = target;
        group_size[target] += size;
        group_label[g] = group_label[target];
        if group_size[target] < min_size {
            heap.push(Reverse((group_size[target], target)));
        }
    }

    let root = |mut c: usize| {
        while parent[c] != c {
            c = parent[c];
        }
        c
    };
    let final_label: Vec<u32> = (0..count).map(|c| group_label[root(c)]).collect();
    for (l, &c) in labels.iter_mut().zip(&comp) {
        *l = final_label[c as usize];
    }
}

/// Superpixel-painted color map.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorDistMap {
    image: LabImage,
    params: SlicParams,
}

impl ColorDistMap {
    pub fn new(image: LabImage, params: SlicParams) -> Self {
        Self { image, params }
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn dimensions(&self) -> (usize, usize) {
        self.image.dimensions()
    }

    pub fn lab(&self) -> &LabImage {
        &self.image
    }

    pub fn params(&self) -> &SlicParams {
        &self.params
    }

    pub fn into_lab(self) -> LabImage {
        self.image
    }
}

/// Paints every pixel with the mean color of its cluster in `img`.
pub fn paint(img: &LabImage, labels: &[u32]) -> LabImage {
    let k = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut centers = vec![
        Center {
            lab: [0.0; 3],
            x: 0.0,
            y: 0.0
        };
        k
    ];
    let mut counts = vec![0; k];
    update_centers(img, labels, &mut centers, &mut counts);
    let data = labels
        .iter()
        .flat_map(|&l| centers[l as usize].lab)
        .collect();
    LabImage::from_raw(img.width(), img.height(), data)
}

/// Blurs `img` (per `params.blur_k`), returning the clustering input.
pub fn preblur(img: &LabImage, params: &SlicParams) -> Result<LabImage, SlicError> {
    params.validate()?;
    Ok(match params.blur_k {
        Some(k) => filtering::gaussian_blur(img, &GaussianKernel::new(k, params.blur_sigma)?),
        None => img.clone(),
    })
}

/// Blur, cluster, paint.
pub fn color_distribution_map(img: &LabImage, params: &SlicParams) -> Result<ColorDistMap, SlicError> {
    Ok(color_distribution_map_with_segmentation(img, params)?.0)
}

/// Like [`color_distribution_map`], also returning the segmentation and the
/// blurred image it was computed on.
pub fn color_distribution_map_with_segmentation(
    img: &LabImage,
    params: &SlicParams,
) -> Result<(ColorDistMap, Segmentation, LabImage), SlicError> {
    let blurred = preblur(img, params)?;
    let seg = slic_segment(&blurred, params)?;
    let data = seg
        .labels
        .iter()
        .flat_map(|&l| seg.centers[l as usize].lab)
        .collect();
    let painted = LabImage::from_raw(img.width(), img.height(), data);
    Ok((ColorDistMap::new(painted, *params), seg, blurred))
}
