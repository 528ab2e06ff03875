//! Pure metric kernels.

use super::MetricError;
use crate::image::Image;
use crate::raster::{BitMask, LabelMap};

const SUM_TOL: f64 = 1e-9;

/// COCO area cuts: below `SMALL_MAX` is small, above `MEDIUM_MAX` is large.
pub const SMALL_MAX: u64 = 32 * 32;
pub const MEDIUM_MAX: u64 = 96 * 96;

pub const PARTIAL_OCCLUSION: f64 = 0.3;
pub const SEVERE_OCCLUSION: f64 = 0.6;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn proportions(counts: &[u64]) -> Result<Vec<f64>, MetricError> {
    if counts.is_empty() {
        return Err(MetricError::InvalidInput("no categories".into()));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(MetricError::InvalidInput("all counts are zero".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / n as f64).collect())
}

fn rms_from_uniform(p: &[f64]) -> f64 {
    let k = p.len() as f64;
    (p.iter().map(|pi| (pi - 1.0 / k).powi(2)).sum::<f64>() / k).sqrt()
}

/// Class Balance Index: standard deviation of class proportions.
pub fn cbi(counts: &[u64]) -> Result<f64, MetricError> {
    Ok(rms_from_uniform(&proportions(counts)?))
}

/// Pixel Category Balance: one minus the pixel-level CBI.
pub fn pcb(pixel_counts: &[u64]) -> Result<f64, MetricError> {
    Ok(1.0 - rms_from_uniform(&proportions(pixel_counts)?))
}

fn entropy(p: &[f64], log: impl Fn(f64) -> f64) -> f64 {
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * log(x)).sum();
    h.max(0.0)
}

/// Data Source Entropy in bits.
pub fn dse(source_counts: &[u64]) -> Result<f64, MetricError> {
    Ok(entropy(&proportions(source_counts)?, f64::log2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleBucket {
    Small,
    Medium,
    Large,
}

pub fn scale_bucket(area: u64) -> ScaleBucket {
    if area < SMALL_MAX {
        ScaleBucket::Small
    } else if area <= MEDIUM_MAX {
        ScaleBucket::Medium
    } else {
        ScaleBucket::Large
    }
}

/// Instance Density Distribution Entropy in nats over small/medium/large.
pub fn idde(areas: &[u64]) -> Result<f64, MetricError> {
    if areas.is_empty() {
        return Err(MetricError::InvalidInput("no instances".into()));
    }
    let mut b = [0u64; 3];
    for &a in areas {
        b[scale_bucket(a) as usize] += 1;
    }
    Ok(entropy(&proportions(&b)?, f64::ln))
}

/// Sample Diversity Index over ordered pairs.
pub fn sdi(features: &[Vec<f64>]) -> Result<f64, MetricError> {
    let n = features.len();
    if n < 2 {
        return Err(MetricError::InvalidInput(format!("SDI needs at least 2 vectors, got {n}")));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(MetricError::InvalidInput("feature dimensions differ".into()));
    }
    let norms: Vec<f64> = features.iter().map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if let Some(i) = norms.iter().position(|&m| m.is_nan() || m <= 0.0 || !m.is_finite()) {
        return Err(MetricError::DegenerateVector(i));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = features[i].iter().zip(&features[j]).map(|(a, b)| a * b).sum();
            sum += 2.0 * dot / (norms[i] * norms[j]);
        }
    }
    Ok(1.0 - sum / (n * (n - 1)) as f64)
}

fn check_distribution(name: &str, d: &[f64]) -> Result<(), MetricError> {
    if d.iter().any(|&x| x.is_nan() || x < 0.0 || !x.is_finite()) {
        return Err(MetricError::InvalidInput(format!("{name} has a negative or non-finite entry")));
    }
    let s: f64 = d.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(MetricError::InvalidInput(format!("{name} sums to {s}")));
    }
    Ok(())
}

/// Dataset Distribution Consistency: KL(P||Q) in nats.
pub fn ddc(p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
    if p.len() != q.len() || p.is_empty() {
        return Err(MetricError::InvalidInput(format!("distribution lengths {} and {}", p.len(), q.len())));
    }
    check_distribution("P", p)?;
    check_distribution("Q", q)?;
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(MetricError::UnsupportedSupport(i));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// Normalizes aligned counts into a distribution.
pub fn distribution(counts: &[u64]) -> Result<Vec<f64>, MetricError> {
    proportions(counts)
}

/// Bounding-box Quality Index: full credit above 0.7, half credit in (0.5, 0.7].
pub fn bqi(ious: &[f64]) -> Result<f64, MetricError> {
    if ious.is_empty() {
        return Err(MetricError::InvalidInput("no IoU samples".into()));
    }
    let credit: f64 = ious
        .iter()
        .map(|&v| if v > 0.7 { 1.0 } else if v > 0.5 { 0.5 } else { 0.0 })
        .sum();
    Ok(credit / ious.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionSeverity {
    None,
    Slight,
    Partial,
    Severe,
}

pub fn occlusion_severity(level: f64) -> OcclusionSeverity {
    if level > SEVERE_OCCLUSION {
        OcclusionSeverity::Severe
    } else if level > PARTIAL_OCCLUSION {
        OcclusionSeverity::Partial
    } else if level > 0.0 {
        OcclusionSeverity::Slight
    } else {
        OcclusionSeverity::None
    }
}

/// Occlusion Scenario coverage Rate: fraction of samples with any occlusion.
pub fn osr(levels: &[f64]) -> Result<f64, MetricError> {
    if levels.is_empty() {
        return Err(MetricError::InvalidInput("no occlusion samples".into()));
    }
    Ok(levels.iter().filter(|&&l| l > 0.0).count() as f64 / levels.len() as f64)
}

/// Dice coefficient of two equal-size masks.
pub fn dice(a: &BitMask, b: &BitMask) -> Result<f64, MetricError> {
    if a.dims() != b.dims() {
        return Err(MetricError::DimensionMismatch { a: a.dims(), b: b.dims() });
    }
    let (sa, sb) = (a.area(), b.area());
    if sa + sb == 0 {
        return Err(MetricError::BothEmpty);
    }
    let inter = a.bits().iter().zip(b.bits()).filter(|(x, y)| **x && **y).count() as f64;
    Ok(2.0 * inter / (sa + sb) as f64)
}

/// Normalized 1-D Gaussian used for the separable SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean SSIM over all fully contained 11x11 windows of two luma planes.
pub fn ssim_luma(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64, MetricError> {
    if a.len() != width * height || b.len() != a.len() {
        return Err(MetricError::InvalidInput("plane size does not match dimensions".into()));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(MetricError::ImageTooSmall { width: width as u32, height: height as u32 });
    }
    let g = gaussian_window();
    let (ow, oh) = (width - SSIM_WINDOW + 1, height - SSIM_WINDOW + 1);
    // horizontal pass for x, y, x^2, y^2, xy, then vertical pass per window
    let mut h = vec![[0.0f64; 5]; ow * height];
    for y in 0..height {
        for x in 0..ow {
            let mut acc = [0.0; 5];
            for (k, &wk) in g.iter().enumerate() {
                let i = y * width + x + k;
                let (va, vb) = (a[i], b[i]);
                acc[0] += wk * va;
                acc[1] += wk * vb;
                acc[2] += wk * va * va;
                acc[3] += wk * vb * vb;
                acc[4] += wk * va * vb;
            }
            h[y * ow + x] = acc;
        }
    }
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let mut m = [0.0; 5];
            for (k, &wk) in g.iter().enumerate() {
                let r = &h[(y + k) * ow + x];
                for c in 0..5 {
                    m[c] += wk * r[c];
                }
            }
            total += ssim_terms(m[0], m[1], m[2], m[3], m[4]);
        }
    }
    Ok(total / (ow * oh) as f64)
}

/// Local SSIM from weighted first and second moments.
pub fn ssim_terms(mu_a: f64, mu_b: f64, ea2: f64, eb2: f64, eab: f64) -> f64 {
    let var_a = ea2 - mu_a * mu_a;
    let var_b = eb2 - mu_b * mu_b;
    let cov = eab - mu_a * mu_b;
    let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
    let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
    num / den
}

/// SSIM between two images of equal size; colour goes through luma first.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricError> {
    if a.dims() != b.dims() {
        return Err(MetricError::DimensionMismatch { a: a.dims(), b: b.dims() });
    }
    let (w, h) = a.dims();
    ssim_luma(&a.luma_f64(), &b.luma_f64(), w as usize, h as usize)
}

/// Sobel gradient magnitude at (x, y) with clamped borders.
pub fn sobel_magnitude(gray: &[f64], width: usize, height: usize, x: usize, y: usize) -> f64 {
    let at = |dx: isize, dy: isize| {
        let xx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
        let yy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
        gray[yy * width + xx]
    };
    let gx = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
    let gy = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
    (gx * gx + gy * gy).sqrt()
}

/// Edge Sharpness Index: mean Sobel magnitude over `edges`.
pub fn esi(gray: &[f64], width: usize, height: usize, edges: &[(u32, u32)]) -> Result<f64, MetricError> {
    if gray.len() != width * height {
        return Err(MetricError::InvalidInput("plane size does not match dimensions".into()));
    }
    if edges.is_empty() {
        return Err(MetricError::EmptyEdgeSet);
    }
    let mut sum = 0.0;
    for &(x, y) in edges {
        if x as usize >= width || y as usize >= height {
            return Err(MetricError::InvalidInput(format!("edge pixel ({x},{y}) outside {width}x{height}")));
        }
        sum += sobel_magnitude(gray, width, height, x as usize, y as usize);
    }
    Ok(sum / edges.len() as f64)
}

/// ESI of `image` over the class boundaries of `labels`.
pub fn esi_for_mask(image: &Image, labels: &LabelMap) -> Result<f64, MetricError> {
    if image.dims() != labels.dims() {
        return Err(MetricError::DimensionMismatch { a: image.dims(), b: labels.dims() });
    }
    let (w, h) = image.dims();
    esi(&image.luma_f64(), w as usize, h as usize, &labels.boundary_pixels())
}

pub const HISTOGRAM_BINS: usize = 64;
pub const FEATURE_SIDE: u32 = 32;
pub const FEATURE_EXTRACTOR_ID: &str = "gray-hist-64@32x32";

/// Default SDI feature: 64-bin luma histogram of the image resized to 32x32.
pub fn histogram_features(image: &Image) -> Vec<f64> {
    let small = if image.dims() == (FEATURE_SIDE, FEATURE_SIDE) {
        image.clone()
    } else {
        crate::tools::resize(image, FEATURE_SIDE, FEATURE_SIDE, crate::tools::Interpolation::Bilinear)
            .expect("non-zero target")
    };
    let mut hist = vec![0.0; HISTOGRAM_BINS];
    for v in small.luma_f64() {
        let bin = ((v.clamp(0.0, 255.0) as usize) * HISTOGRAM_BINS / 256).min(HISTOGRAM_BINS - 1);
        hist[bin] += 1.0;
    }
    hist
}
