//! Brute-force reference implementations, written from the metric
//! definitions without reusing any library code path.

#![allow(clippy::needless_range_loop)]

pub fn cbi(counts: &[u64]) -> f64 {
    let n: f64 = counts.iter().map(|&c| c as f64).sum();
    let k = counts.len() as f64;
    let mut acc = 0.0;
    for &c in counts {
        let d = c as f64 / n - 1.0 / k;
        acc += d * d;
    }
    (acc / k).sqrt()
}

pub fn pcb(pixels: &[u64]) -> f64 {
    1.0 - cbi(pixels)
}

pub fn dse(sources: &[u64]) -> f64 {
    let n: f64 = sources.iter().map(|&c| c as f64).sum();
    let mut h = 0.0;
    for &c in sources {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln() / std::f64::consts::LN_2;
        }
    }
    h
}

pub fn sdi(f: &[Vec<f64>]) -> f64 {
    let n = f.len();
    let norm = |v: &Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dot: f64 = (0..f[i].len()).map(|k| f[i][k] * f[j][k]).sum();
                total += dot / (norm(&f[i]) * norm(&f[j]));
            }
        }
    }
    1.0 - total / (n * (n - 1)) as f64
}

pub fn ddc(p: &[f64], q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            kl += p[i] * (p[i] / q[i]).ln();
        }
    }
    kl
}

pub fn idde(areas: &[u64]) -> f64 {
    let small = areas.iter().filter(|&&a| a < 1024).count();
    let large = areas.iter().filter(|&&a| a > 9216).count();
    let medium = areas.len() - small - large;
    let n = areas.len() as f64;
    let mut h = 0.0;
    for c in [small, medium, large] {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln();
        }
    }
    h
}

pub fn bqi(ious: &[f64]) -> f64 {
    let full = ious.iter().filter(|&&v| v > 0.7).count() as f64;
    let half = ious.iter().filter(|&&v| v > 0.5 && v <= 0.7).count() as f64;
    (full + 0.5 * half) / ious.len() as f64
}

pub fn osr(levels: &[f64]) -> f64 {
    levels.iter().filter(|&&l| l > 0.0).count() as f64 / levels.len() as f64
}

pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as f64;
    let sa = a.iter().filter(|x| **x).count() as f64;
    let sb = b.iter().filter(|x| **x).count() as f64;
    2.0 * inter / (sa + sb)
}

/// Naive SSIM: every 11x11 window evaluated with a full 2-D Gaussian and
/// two-pass moments.
pub fn ssim(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let mut g1 = [0.0f64; 11];
    for (i, v) in g1.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-(d * d) / 4.5).exp();
    }
    let mut g2 = [[0.0f64; 11]; 11];
    let mut s = 0.0;
    for i in 0..11 {
        for j in 0..11 {
            g2[i][j] = g1[i] * g1[j];
            s += g2[i][j];
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = (y0 + i) * w + x0 + j;
                    ma += g2[i][j] / s * a[k];
                    mb += g2[i][j] / s * b[k];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = (y0 + i) * w + x0 + j;
                    let wt = g2[i][j] / s;
                    va += wt * (a[k] - ma) * (a[k] - ma);
                    vb += wt * (b[k] - mb) * (b[k] - mb);
                    cov += wt * (a[k] - ma) * (b[k] - mb);
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Sobel with explicit 3x3 kernels and clamped borders.
pub fn sobel(gray: &[f64], w: usize, h: usize, x: usize, y: usize) -> f64 {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let (mut gx, mut gy) = (0.0, 0.0);
    for (r, (kx_row, ky_row)) in KX.iter().zip(&KY).enumerate() {
        for c in 0..3 {
            let yy = (y as i64 + r as i64 - 1).clamp(0, h as i64 - 1) as usize;
            let xx = (x as i64 + c as i64 - 1).clamp(0, w as i64 - 1) as usize;
            gx += kx_row[c] * gray[yy * w + xx];
            gy += ky_row[c] * gray[yy * w + xx];
        }
    }
    (gx * gx + gy * gy).sqrt()
}

pub fn esi(gray: &[f64], w: usize, h: usize, edges: &[(u32, u32)]) -> f64 {
    edges.iter().map(|&(x, y)| sobel(gray, w, h, x as usize, y as usize)).sum::<f64>() / edges.len() as f64
}

/// Pixels with an in-bounds 4-neighbour of a different label.
pub fn boundary(labels: &[u32], w: usize, h: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = labels[y * w + x];
            let mut differs = false;
            if x > 0 && labels[y * w + x - 1] != v {
                differs = true;
            }
            if x + 1 < w && labels[y * w + x + 1] != v {
                differs = true;
            }
            if y > 0 && labels[(y - 1) * w + x] != v {
                differs = true;
            }
            if y + 1 < h && labels[(y + 1) * w + x] != v {
                differs = true;
            }
            if differs {
                out.push((x as u32, y as u32));
            }
        }
    }
    out
}
