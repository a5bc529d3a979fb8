//! SLIC superpixels: localized k-means in joint (L, a, b, x, y) space, followed by
//! orphan-fragment merging so that every label is a single 4-connected region.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::SegmentError;
use crate::imaging::{BBox, LabImage};

/// Per-pixel region assignment for one image at one resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    region_count: usize,
}

impl LabelMap {
    /// Builds a map whose ids must already be contiguous `0..L`.
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self, SegmentError> {
        if width == 0 || height == 0 {
            return Err(SegmentError::EmptyImage);
        }
        if labels.len() != width * height {
            return Err(SegmentError::LabelCount { expected: width * height, got: labels.len() });
        }
        let region_count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let mut seen = vec![false; region_count];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(SegmentError::InvalidConfig("label ids are not contiguous"));
        }
        Ok(Self { width, height, labels, region_count })
    }

    /// Builds a map from arbitrary ids, renumbering them by first appearance in raster order.
    pub fn relabeled(width: usize, height: usize, labels: &[u32]) -> Result<Self, SegmentError> {
        if width == 0 || height == 0 {
            return Err(SegmentError::EmptyImage);
        }
        if labels.len() != width * height {
            return Err(SegmentError::LabelCount { expected: width * height, got: labels.len() });
        }
        let mut remap = BTreeMap::new();
        let out = labels
            .iter()
            .map(|l| {
                let next = remap.len() as u32;
                *remap.entry(*l).or_insert(next)
            })
            .collect();
        Ok(Self { width, height, labels: out, region_count: remap.len() })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Pixel count per label.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.region_count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicConfig {
    /// Target superpixel count.
    pub k: usize,
    /// Spatial weight `m` in the joint distance.
    pub compactness: f64,
    pub max_iters: usize,
    /// Stop once the mean spatial center displacement (pixels) drops below this.
    pub convergence_eps: f64,
}

impl SlicConfig {
    pub fn new(k: usize) -> Self {
        Self { k, compactness: 10.0, max_iters: 10, convergence_eps: 0.25 }
    }

    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.k == 0 {
            return Err(SegmentError::InvalidConfig("k must be at least 1"));
        }
        if !(self.compactness > 0.0) {
            return Err(SegmentError::InvalidConfig("compactness must be positive"));
        }
        if self.max_iters == 0 {
            return Err(SegmentError::InvalidConfig("max_iters must be at least 1"));
        }
        Ok(())
    }
}

impl Default for SlicConfig {
    fn default() -> Self {
        Self::new(10)
    }
}

/// Cluster center in joint colour/position space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Center {
    pub lab: [f64; 3],
    pub x: f64,
    pub y: f64,
}

/// Everything one SLIC run produced, for inspection and invariant checks.
#[derive(Debug, Clone)]
pub struct SlicTrace {
    /// Connectivity-enforced result.
    pub labels: LabelMap,
    /// Clustering output before fragment merging (cluster ids compacted by first appearance).
    pub raw: LabelMap,
    /// Grid interval `S`.
    pub step: f64,
    /// Sum of squared joint distances after each assignment pass.
    pub objective: Vec<f64>,
    /// Centers used by the final assignment pass, indexed by raw cluster id.
    pub assignment_centers: Vec<Center>,
    pub iterations: usize,
}

pub fn slic(img: &LabImage, cfg: &SlicConfig) -> Result<LabelMap, SegmentError> {
    slic_with_trace(img, cfg).map(|t| t.labels)
}

/// Chooses an `nx × ny` seed grid with `nx·ny` as close to `k` as possible and cells as
/// square as possible; remaining ties prefer more columns.
pub fn grid_layout(width: usize, height: usize, k: usize) -> (usize, usize) {
    let mut best = (1, 1);
    let mut best_key = (usize::MAX, f64::INFINITY);
    for nx in 1..=k.min(width) {
        let lo = (k / nx).max(1);
        let hi = k.div_ceil(nx).max(1);
        for ny in [lo, hi] {
            if ny > height {
                continue;
            }
            let diff = (nx * ny).abs_diff(k);
            let aspect = ((width as f64 / nx as f64) / (height as f64 / ny as f64)).ln().abs();
            let better = diff < best_key.0
                || (diff == best_key.0 && aspect < best_key.1 - 1e-12)
                || (diff == best_key.0 && (aspect - best_key.1).abs() <= 1e-12 && nx > best.0);
            if better {
                best = (nx, ny);
                best_key = (diff, aspect);
            }
        }
    }
    best
}

fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn gradient(img: &LabImage, x: usize, y: usize) -> f64 {
    let (w, h) = (img.width(), img.height());
    let left = img.get(x.saturating_sub(1), y);
    let right = img.get((x + 1).min(w - 1), y);
    let up = img.get(x, y.saturating_sub(1));
    let down = img.get(x, (y + 1).min(h - 1));
    sq_dist(right, left) + sq_dist(down, up)
}

fn seed_centers(img: &LabImage, nx: usize, ny: usize) -> Vec<Center> {
    let (w, h) = (img.width(), img.height());
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            // Geometric cell center; the colour comes from the nearest pixel.
            let fx = (i as f64 + 0.5) * w as f64 / nx as f64 - 0.5;
            let fy = (j as f64 + 0.5) * h as f64 / ny as f64 - 0.5;
            let cx = (Float::round(fx) as usize).min(w - 1);
            let cy = (Float::round(fy) as usize).min(h - 1);
            let (mut bx, mut by) = (cx, cy);
            let mut best = gradient(img, cx, cy);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (px, py) = (cx as i64 + dx, cy as i64 + dy);
                    if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                        continue;
                    }
                    let g = gradient(img, px as usize, py as usize);
                    if g < best {
                        best = g;
                        bx = px as usize;
                        by = py as usize;
                    }
                }
            }
            let (x, y) = if (bx, by) == (cx, cy) { (fx, fy) } else { (bx as f64, by as f64) };
            centers.push(Center { lab: img.get(bx, by), x, y });
        }
    }
    centers
}

/// Runs SLIC and records per-iteration diagnostics.
pub fn slic_with_trace(img: &LabImage, cfg: &SlicConfig) -> Result<SlicTrace, SegmentError> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    if n == 0 {
        return Err(SegmentError::EmptyImage);
    }
    if cfg.k > n {
        return Err(SegmentError::TooManySegments { k: cfg.k, pixels: n });
    }

    let step = Float::sqrt(n as f64 / cfg.k as f64);
    let spatial_weight = (cfg.compactness / step).powi(2);
    let (nx, ny) = grid_layout(w, h, cfg.k);
    let mut centers = seed_centers(img, nx, ny);

    // Start from the grid cell partition so every pixel has an incumbent center.
    let mut labels: Vec<usize> = (0..n)
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let i = (x * nx / w).min(nx - 1);
            let j = (y * ny / h).min(ny - 1);
            j * nx + i
        })
        .collect();

    let joint = |c: &Center, p: usize| -> f64 {
        let (x, y) = ((p % w) as f64, (p / w) as f64);
        sq_dist(img.pixels()[p], c.lab) + ((x - c.x).powi(2) + (y - c.y).powi(2)) * spatial_weight
    };

    let mut dist = vec![0.0; n];
    let mut objective = Vec::new();
    let mut assignment_centers = centers.clone();
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        for p in 0..n {
            dist[p] = joint(&centers[labels[p]], p);
        }
        for (ci, c) in centers.iter().enumerate() {
            let x0 = Float::max(Float::ceil(c.x - step), 0.0) as usize;
            let y0 = Float::max(Float::ceil(c.y - step), 0.0) as usize;
            let x1 = Float::min(Float::floor(c.x + step), (w - 1) as f64);
            let y1 = Float::min(Float::floor(c.y + step), (h - 1) as f64);
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let p = y * w + x;
                    let d = joint(c, p);
                    if d < dist[p] || (d == dist[p] && ci < labels[p]) {
                        dist[p] = d;
                        labels[p] = ci;
                    }
                }
            }
        }
        objective.push(dist.iter().sum());
        assignment_centers.clone_from(&centers);

        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for (p, &l) in labels.iter().enumerate() {
            let lab = img.pixels()[p];
            let s = &mut sums[l];
            s[0] += lab[0];
            s[1] += lab[1];
            s[2] += lab[2];
            s[3] += (p % w) as f64;
            s[4] += (p / w) as f64;
            s[5] += 1.0;
        }
        let mut moved = 0.0;
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[5] == 0.0 {
                continue;
            }
            let next = Center {
                lab: [s[0] / s[5], s[1] / s[5], s[2] / s[5]],
                x: s[3] / s[5],
                y: s[4] / s[5],
            };
            moved += Float::sqrt((next.x - c.x).powi(2) + (next.y - c.y).powi(2));
            *c = next;
        }
        if moved / (centers.len() as f64) < cfg.convergence_eps {
            break;
        }
    }

    // Compact cluster ids by first appearance, keeping centers aligned with the new ids.
    let mut remap = vec![usize::MAX; centers.len()];
    let mut order = Vec::new();
    for &l in &labels {
        if remap[l] == usize::MAX {
            remap[l] = order.len();
            order.push(l);
        }
    }
    let raw_labels: Vec<u32> = labels.iter().map(|&l| remap[l] as u32).collect();
    let raw = LabelMap { width: w, height: h, region_count: order.len(), labels: raw_labels };
    let assignment_centers = order.iter().map(|&l| assignment_centers[l]).collect();

    let min_size = (n as f64 / cfg.k as f64) / 4.0;
    let labels = enforce_connectivity_min_size(&raw, min_size);
    Ok(SlicTrace { labels, raw, step, objective, assignment_centers, iterations })
}

/// Merges fragments smaller than `(w·h / region_count) / 4` pixels; see
/// [`enforce_connectivity_min_size`].
pub fn enforce_connectivity(raw: &LabelMap) -> LabelMap {
    let n = (raw.width * raw.height) as f64;
    let k = raw.region_count.max(1) as f64;
    enforce_connectivity_min_size(raw, n / k / 4.0)
}

/// Splits every label into its 4-connected components, then repeatedly merges the
/// lowest-numbered component smaller than `min_size` into the neighbour sharing the
/// longest boundary (ties to the lower component number). Output ids follow raster
/// order of first appearance.
pub fn enforce_connectivity_min_size(raw: &LabelMap, min_size: f64) -> LabelMap {
    let (w, h) = (raw.width, raw.height);
    let (comp, count) = components(w, h, &raw.labels);

    let mut size = vec![0usize; count];
    for &c in &comp {
        size[c] += 1;
    }
    let mut adj: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); count];
    for y in 0..h {
        for x in 0..w {
            let a = comp[y * w + x];
            if x + 1 < w {
                let b = comp[y * w + x + 1];
                if a != b {
                    *adj[a].entry(b).or_default() += 1;
                    *adj[b].entry(a).or_default() += 1;
                }
            }
            if y + 1 < h {
                let b = comp[(y + 1) * w + x];
                if a != b {
                    *adj[a].entry(b).or_default() += 1;
                    *adj[b].entry(a).or_default() += 1;
                }
            }
        }
    }

    let mut parent: Vec<usize> = (0..count).collect();
    let mut small: BTreeSet<usize> =
        (0..count).filter(|&c| (size[c] as f64) < min_size).collect();
    while let Some(a) = small.pop_first() {
        let Some(target) = adj[a]
            .iter()
            .max_by(|(ia, la), (ib, lb)| la.cmp(lb).then(ib.cmp(ia)))
            .map(|(&b, _)| b)
        else {
            continue;
        };
        let neighbours = core::mem::take(&mut adj[a]);
        for (nb, len) in neighbours {
            adj[nb].remove(&a);
            if nb == target {
                continue;
            }
            *adj[target].entry(nb).or_default() += len;
            *adj[nb].entry(target).or_default() += len;
        }
        parent[a] = target;
        size[target] += size[a];
        if (size[target] as f64) >= min_size {
            small.remove(&target);
        }
    }

    let root = |mut c: usize| {
        while parent[c] != c {
            c = parent[c];
        }
        c
    };
    let merged: Vec<u32> = comp.iter().map(|&c| root(c) as u32).collect();
    LabelMap::relabeled(w, h, &merged).expect("dimensions unchanged")
}

/// 4-connected components numbered in raster order of first pixel.
fn components(w: usize, h: usize, labels: &[u32]) -> (Vec<usize>, usize) {
    let mut comp = vec![usize::MAX; w * h];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if comp[start] != usize::MAX {
            continue;
        }
        let label = labels[start];
        comp[start] = count;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if comp[q] == usize::MAX && labels[q] == label {
                    comp[q] = count;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        count += 1;
    }
    (comp, count)
}

/// Tightest axis-aligned box around each label, indexed by label id.
pub fn bounding_boxes(map: &LabelMap) -> Vec<BBox> {
    let mut ext = vec![(usize::MAX, usize::MAX, 0usize, 0usize); map.region_count];
    for y in 0..map.height {
        for x in 0..map.width {
            let e = &mut ext[map.get(x, y) as usize];
            e.0 = e.0.min(x);
            e.1 = e.1.min(y);
            e.2 = e.2.max(x);
            e.3 = e.3.max(y);
        }
    }
    ext.into_iter()
        .map(|(x0, y0, x1, y1)| BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
        .collect()
}

/// True when every label's pixel set is a single 4-connected component.
pub fn is_connected(map: &LabelMap) -> bool {
    let (_, count) = components(map.width, map.height, &map.labels);
    count == map.region_count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{rgb_to_lab, Image};

    fn lab(img: &Image) -> LabImage {
        rgb_to_lab(img)
    }

    #[test]
    fn uniform_single_cluster() {
        let img = lab(&Image::filled(16, 16, [128, 128, 128]).unwrap());
        let map = slic(&img, &SlicConfig::new(1)).unwrap();
        assert_eq!(map.region_count(), 1);
        assert!(map.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn uniform_four_tiles() {
        let img = lab(&Image::filled(16, 16, [90, 90, 90]).unwrap());
        let map = slic(&img, &SlicConfig::new(4)).unwrap();
        assert_eq!(map.region_count(), 4);
        let mut boxes = bounding_boxes(&map);
        boxes.sort_by_key(|b| (b.y, b.x));
        assert_eq!(
            boxes,
            vec![
                BBox::new(0, 0, 8, 8),
                BBox::new(8, 0, 8, 8),
                BBox::new(0, 8, 8, 8),
                BBox::new(8, 8, 8, 8)
            ]
        );
    }

    #[test]
    fn grid_layout_choices() {
        assert_eq!(grid_layout(8, 8, 2), (2, 1));
        assert_eq!(grid_layout(16, 16, 4), (2, 2));
        assert_eq!(grid_layout(32, 16, 2), (2, 1));
        assert_eq!(grid_layout(16, 32, 2), (1, 2));
        assert_eq!(grid_layout(5, 1, 5), (5, 1));
        assert_eq!(grid_layout(7, 7, 1), (1, 1));
    }

    #[test]
    fn config_errors() {
        let img = lab(&Image::filled(2, 2, [0, 0, 0]).unwrap());
        assert_eq!(
            slic(&img, &SlicConfig::new(5)),
            Err(SegmentError::TooManySegments { k: 5, pixels: 4 })
        );
        assert!(slic(&img, &SlicConfig::new(0)).is_err());
        let mut cfg = SlicConfig::new(1);
        cfg.compactness = 0.0;
        assert!(slic(&img, &cfg).is_err());
        cfg.compactness = 10.0;
        cfg.max_iters = 0;
        assert!(slic(&img, &cfg).is_err());
    }

    #[test]
    fn orphan_pixel_is_absorbed() {
        let mut labels = vec![0u32; 25];
        labels[12] = 1;
        let raw = LabelMap::new(5, 5, labels).unwrap();
        let fixed = enforce_connectivity(&raw);
        assert_eq!(fixed.region_count(), 1);
    }

    #[test]
    fn connected_map_is_unchanged_up_to_relabeling() {
        let labels: Vec<u32> = (0..36).map(|p| if p % 6 < 3 { 5 } else { 2 }).collect();
        let raw = LabelMap::relabeled(6, 6, &labels).unwrap();
        assert_eq!(enforce_connectivity(&raw), raw);
    }

    #[test]
    fn fragments_merge_along_longest_boundary() {
        // Labels 0 (left strip), 1 (right block), 2 (top-right block). Label 0 also has
        // a 2-pixel fragment F1 at (3..5, 3) touching label 1 on 3 edges and label 2 on 1,
        // and a 1-pixel fragment F2 at (5, 0) inside label 2.
        #[rustfmt::skip]
        let labels = [
            0, 0, 2, 2, 2, 0,
            0, 0, 2, 2, 2, 2,
            0, 0, 2, 2, 2, 2,
            0, 0, 1, 0, 0, 1,
            0, 0, 1, 1, 1, 1,
            0, 0, 1, 1, 1, 1,
        ];
        let raw = LabelMap::new(6, 6, labels.to_vec()).unwrap();
        // k = 3 -> min_size = 36 / 3 / 4 = 3.
        let fixed = enforce_connectivity(&raw);
        assert_eq!(fixed.region_count(), 3);
        // F2 borders only label 2 -> merged there.
        assert_eq!(fixed.get(5, 0), fixed.get(4, 0));
        // F1 shares 2 (below) + 1 (left) + 1 (right) edges with label 1, 2 edges with label 2
        // above, and none with label 0 -> merged into label 1.
        assert_eq!(fixed.get(3, 3), fixed.get(3, 4));
        assert_eq!(fixed.get(4, 3), fixed.get(3, 4));
        assert!(is_connected(&fixed));
    }

    #[test]
    fn boxes_follow_labels() {
        let labels: Vec<u32> = (0..64).map(|p| if p % 8 < 4 { 0 } else { 1 }).collect();
        let map = LabelMap::new(8, 8, labels).unwrap();
        assert_eq!(bounding_boxes(&map), vec![BBox::new(0, 0, 4, 8), BBox::new(4, 0, 4, 8)]);

        let single = LabelMap::new(3, 2, vec![0; 6]).unwrap();
        assert_eq!(bounding_boxes(&single), vec![BBox::new(0, 0, 3, 2)]);

        // Diagonal stripe: label 1 on x == y only.
        let diag: Vec<u32> = (0..16).map(|p| u32::from(p % 4 == p / 4)).collect();
        let map = LabelMap::new(4, 4, diag).unwrap();
        assert_eq!(bounding_boxes(&map)[1], BBox::new(0, 0, 4, 4));
    }

    #[test]
    fn label_map_rejects_gaps() {
        assert!(LabelMap::new(2, 1, vec![0, 2]).is_err());
        let m = LabelMap::relabeled(2, 1, &[7, 3]).unwrap();
        assert_eq!(m.labels(), &[0, 1]);
    }
}
