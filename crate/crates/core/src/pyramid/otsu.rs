use crate::error::{Error, Result};

/// Between-class variance `w0 w1 (mu0 - mu1)^2` for the split
/// `[0..=t] | (t..255]`, with weights as fractions of the total.
pub fn between_class_variance(hist: &[u64; 256], t: usize) -> f64 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let (mut n0, mut s0) = (0u64, 0u64);
    for (i, &h) in hist.iter().enumerate().take(t + 1) {
        n0 += h;
        s0 += h * i as u64;
    }
    let s_all: u64 = hist.iter().enumerate().map(|(i, &h)| h * i as u64).sum();
    let n1 = total - n0;
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let mu0 = s0 as f64 / n0 as f64;
    let mu1 = (s_all - s0) as f64 / n1 as f64;
    let w0 = n0 as f64 / total as f64;
    let w1 = n1 as f64 / total as f64;
    w0 * w1 * (mu0 - mu1) * (mu0 - mu1)
}

/// Level maximizing between-class variance; ties go to the lower level.
pub fn otsu_threshold(hist: &[u64; 256]) -> Result<u8> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return Err(Error::Empty("otsu histogram"));
    }
    let s_all: u64 = hist.iter().enumerate().map(|(i, &h)| h * i as u64).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (t, &h) in hist.iter().enumerate() {
        n0 += h;
        s0 += h * t as u64;
        let n1 = total - n0;
        let var = if n0 == 0 || n1 == 0 {
            0.0
        } else {
            let mu0 = s0 as f64 / n0 as f64;
            let mu1 = (s_all - s0) as f64 / n1 as f64;
            let w0 = n0 as f64 / total as f64;
            let w1 = n1 as f64 / total as f64;
            w0 * w1 * (mu0 - mu1) * (mu0 - mu1)
        };
        if var > best.1 {
            best = (t, var);
        }
    }
    Ok(best.0 as u8)
}

/// 256-bin histogram of intensities in `[0, 1]` (values outside clamp).
pub fn histogram(values: &[f32]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in values {
        h[quantize(v) as usize] += 1;
    }
    h
}

pub fn quantize(v: f32) -> u8 {
    let q = (v.clamp(0.0, 1.0) * 255.0 + 0.5) as i32;
    q.clamp(0, 255) as u8
}
