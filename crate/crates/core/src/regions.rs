//! Multi-resolution superpixel regions and their embeddings.
//!
//! For each requested superpixel count the image is converted to CIELAB, segmented,
//! and every superpixel's bounding box is cropped and resized to the provider's input
//! size. A whole-image embedding is computed alongside as the global feature.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{EmbedError, ImageError, PipelineError};
use crate::imaging::{crop, resize, rgb_to_lab, BBox, Image};
use crate::superpixel::{bounding_boxes, slic, LabelMap, SlicConfig};

/// One superpixel crop ready for embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub resolution_index: usize,
    pub label: u32,
    pub bbox: BBox,
    pub crop: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionRegions {
    pub k: usize,
    pub labels: LabelMap,
    pub regions: Vec<Region>,
}

/// Embedding of one region. Entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        Float::sqrt(self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>())
    }
}

/// Image-region embedder (a CLIP- or BLIP-like model, or a stand-in).
///
/// Implementations must be deterministic for identical pixels and safe to call from
/// several threads.
pub trait FeatureProvider: Send + Sync {
    fn name(&self) -> &str;
    /// Side length of the square crops `embed` accepts.
    fn input_size(&self) -> usize;
    fn dim(&self) -> usize;
    fn embed(&self, crop: &Image) -> Result<FeatureVector, EmbedError>;
}

/// Rejects crops of the wrong size.
pub fn check_input(provider: &dyn FeatureProvider, crop: &Image) -> Result<(), EmbedError> {
    let s = provider.input_size();
    if crop.width() != s || crop.height() != s {
        return Err(EmbedError::WrongInputSize { expected: s, got: (crop.width(), crop.height()) });
    }
    Ok(())
}

/// Rejects vectors whose length differs from the provider's declared dimension.
pub fn check_dim(provider: &dyn FeatureProvider, v: &FeatureVector) -> Result<(), EmbedError> {
    if v.dim() != provider.dim() {
        return Err(EmbedError::DimensionMismatch { expected: provider.dim(), got: v.dim() });
    }
    Ok(())
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Offline stand-in for a vision-language embedder: random Fourier features of an
/// 8×8 grid of mean colours, with weights drawn from a seeded hash, L2-normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockProvider {
    pub dim: usize,
    pub input_size: usize,
    pub seed: u64,
}

impl MockProvider {
    const GRID: usize = 8;
    const BANDWIDTH: f64 = 2.0;

    pub fn new(dim: usize, input_size: usize, seed: u64) -> Self {
        Self { dim, input_size, seed }
    }

    fn stats(&self, crop: &Image) -> Vec<f64> {
        let g = Self::GRID.min(crop.width()).min(crop.height());
        let mut sums = alloc::vec![0.0f64; g * g * 3];
        let mut counts = alloc::vec![0usize; g * g];
        for y in 0..crop.height() {
            for x in 0..crop.width() {
                let cell = (y * g / crop.height()) * g + x * g / crop.width();
                let p = crop.get(x, y);
                for c in 0..3 {
                    sums[cell * 3 + c] += f64::from(p[c]) / 255.0;
                }
                counts[cell] += 1;
            }
        }
        for (i, s) in sums.iter_mut().enumerate() {
            *s /= counts[i / 3] as f64;
        }
        sums
    }
}

impl FeatureProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, crop: &Image) -> Result<FeatureVector, EmbedError> {
        check_input(self, crop)?;
        let stats = self.stats(crop);
        let scale = Self::BANDWIDTH * core::f64::consts::PI / Float::sqrt(stats.len() as f64);
        let mut out: Vec<f64> = (0..self.dim)
            .map(|j| {
                let row = mix(self.seed ^ mix(j as u64));
                let phase = unit(mix(row)) * 2.0 * core::f64::consts::PI;
                let proj: f64 = stats
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| s * (2.0 * unit(mix(row ^ mix(i as u64 + 1))) - 1.0))
                    .sum();
                Float::cos(proj * scale * 4.0 + phase)
            })
            .collect();
        let norm = Float::sqrt(out.iter().map(|v| v * v).sum::<f64>());
        if norm > 0.0 {
            for v in &mut out {
                *v /= norm;
            }
        }
        FeatureVector::new(out.into_iter().map(|v| v as f32).collect())
    }
}

/// Settings for region extraction that are independent of K.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionConfig {
    pub compactness: f64,
    pub max_iters: usize,
    pub convergence_eps: f64,
    /// Optional cap on the longer image side before segmentation (aspect preserved).
    pub working_size: Option<usize>,
}

impl Default for RegionConfig {
    fn default() -> Self {
        let d = SlicConfig::new(1);
        Self { compactness: d.compactness, max_iters: d.max_iters, convergence_eps: d.convergence_eps, working_size: None }
    }
}

impl RegionConfig {
    pub fn slic(&self, k: usize) -> SlicConfig {
        SlicConfig { k, compactness: self.compactness, max_iters: self.max_iters, convergence_eps: self.convergence_eps }
    }

    /// The image segmentation runs on.
    pub fn working_image(&self, img: &Image) -> Result<Image, ImageError> {
        match self.working_size {
            Some(max) if img.width().max(img.height()) > max => {
                let s = max as f64 / img.width().max(img.height()) as f64;
                let w = (Float::round(img.width() as f64 * s) as usize).max(1);
                let h = (Float::round(img.height() as f64 * s) as usize).max(1);
                resize(img, w, h)
            }
            _ => Ok(img.clone()),
        }
    }
}

/// Segments `img` once per superpixel count and crops every region's bounding box,
/// resized to `input_size`. Regions are ordered by label id.
pub fn extract_regions(
    img: &Image,
    resolutions: &[usize],
    cfg: &RegionConfig,
    input_size: usize,
) -> Result<Vec<ResolutionRegions>, PipelineError> {
    if resolutions.is_empty() {
        return Err(PipelineError::NoResolutions);
    }
    if resolutions.contains(&0) {
        return Err(PipelineError::ZeroResolution);
    }
    let img = cfg.working_image(img)?;
    let lab = rgb_to_lab(&img);
    resolutions
        .iter()
        .enumerate()
        .map(|(ri, &k)| {
            let labels = slic(&lab, &cfg.slic(k))?;
            let regions = bounding_boxes(&labels)
                .into_iter()
                .enumerate()
                .map(|(label, bbox)| {
                    let crop = resize(&crop(&img, bbox)?, input_size, input_size)?;
                    Ok(Region { resolution_index: ri, label: label as u32, bbox, crop })
                })
                .collect::<Result<Vec<_>, ImageError>>()?;
            Ok(ResolutionRegions { k, labels, regions })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeature {
    pub label: u32,
    pub bbox: BBox,
    pub vector: FeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionFeatures {
    pub k: usize,
    pub regions: Vec<RegionFeature>,
}

/// Global feature plus one feature set per resolution, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiResFeatures {
    pub dim: usize,
    pub global: RegionFeature,
    pub resolutions: Vec<ResolutionFeatures>,
}

impl MultiResFeatures {
    /// `1 + Σ region_count(K)`.
    pub fn token_count(&self) -> usize {
        1 + self.resolutions.iter().map(|r| r.regions.len()).sum::<usize>()
    }

    pub fn region_counts(&self) -> Vec<usize> {
        self.resolutions.iter().map(|r| r.regions.len()).collect()
    }

    pub fn ks(&self) -> Vec<usize> {
        self.resolutions.iter().map(|r| r.k).collect()
    }

    pub fn is_consistent(&self) -> bool {
        self.global.vector.dim() == self.dim
            && self.resolutions.iter().flat_map(|r| &r.regions).all(|f| f.vector.dim() == self.dim)
    }
}

/// Global and per-region embeddings for one image.
pub fn encode_image(
    img: &Image,
    resolutions: &[usize],
    cfg: &RegionConfig,
    provider: &dyn FeatureProvider,
) -> Result<MultiResFeatures, PipelineError> {
    let size = provider.input_size();
    // Boxes, crops and the global view all refer to the working image.
    let img = &cfg.working_image(img)?;
    let extracted = extract_regions(img, resolutions, cfg, size)?;
    let embed = |crop: &Image| -> Result<FeatureVector, EmbedError> {
        let v = provider.embed(crop)?;
        check_dim(provider, &v)?;
        Ok(v)
    };
    let global = RegionFeature { label: 0, bbox: img.full_box(), vector: embed(&resize(img, size, size)?)? };
    let resolutions = extracted
        .into_iter()
        .map(|rr| {
            let regions = rr
                .regions
                .iter()
                .map(|r| Ok(RegionFeature { label: r.label, bbox: r.bbox, vector: embed(&r.crop)? }))
                .collect::<Result<Vec<_>, EmbedError>>()?;
            Ok(ResolutionFeatures { k: rr.k, regions })
        })
        .collect::<Result<Vec<_>, EmbedError>>()?;
    Ok(MultiResFeatures { dim: provider.dim(), global, resolutions })
}

pub const OVERLAY_COLOR: [u8; 3] = [255, 0, 0];

/// Recolors the first pixel of every label change scanning left-to-right and
/// top-to-bottom, tracing region boundaries one pixel wide.
pub fn render_overlay(img: &Image, map: &LabelMap) -> Result<Image, ImageError> {
    if img.width() != map.width() || img.height() != map.height() {
        return Err(ImageError::DimensionMismatch {
            image: (img.width(), img.height()),
            labels: (map.width(), map.height()),
        });
    }
    let mut out = img.clone();
    for y in 0..map.height() {
        for x in 0..map.width() {
            let l = map.get(x, y);
            let edge = (x > 0 && map.get(x - 1, y) != l) || (y > 0 && map.get(x, y - 1) != l);
            if edge {
                out.set(x, y, OVERLAY_COLOR);
            }
        }
    }
    Ok(out)
}

/// Short human-readable provider description, e.g. `mock(dim=64, input=32)`.
pub fn describe(provider: &dyn FeatureProvider) -> String {
    alloc::format!("{}(dim={}, input={})", provider.name(), provider.dim(), provider.input_size())
}
