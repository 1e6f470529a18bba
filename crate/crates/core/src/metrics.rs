//! Native full-reference metrics on luma planes: MSE, PSNR, SSIM and
//! pixel-domain VIF.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) restricted to the region where
//! the window fits entirely. VIF follows the multi-scale pixel-domain
//! formulation: four scales with window sizes 17, 9, 5, 3 (σ = N/5), a
//! Gaussian prefilter plus 2× decimation between scales, and noise variance 2.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::image::{gaussian_kernel, LumaPlane, PEAK};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherIsBetter,
    LowerIsBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Psnr,
    Ssim,
    Vif,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Psnr, Metric::Ssim, Metric::Vif];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::Vif => "vif",
        }
    }

    pub fn orientation(self) -> Orientation {
        Orientation::HigherIsBetter
    }

    /// Reference first, distorted second.
    pub fn compute(self, reference: &LumaPlane, distorted: &LumaPlane) -> Result<MetricValue> {
        match self {
            Metric::Psnr => psnr(reference, distorted),
            Metric::Ssim => ssim(reference, distorted),
            Metric::Vif => vif(reference, distorted),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "psnr" => Ok(Metric::Psnr),
            "ssim" => Ok(Metric::Ssim),
            "vif" | "vifp" => Ok(Metric::Vif),
            other => Err(Error::arg(format!("unknown metric {other:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub name: String,
    /// `+∞` exactly when `infinite` is set.
    pub value: f64,
    pub orientation: Orientation,
    pub infinite: bool,
}

impl MetricValue {
    fn finite(metric: Metric, value: f64) -> Self {
        Self {
            name: metric.name().to_string(),
            value,
            orientation: metric.orientation(),
            infinite: false,
        }
    }
}

/// One line of batch metric output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub pair_id: String,
    pub metric: String,
    /// `null` when the value is infinite or the pair failed.
    pub value: Option<f64>,
    pub infinite: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MetricRecord {
    pub fn from_value(pair_id: &str, v: &MetricValue) -> Self {
        Self {
            pair_id: pair_id.to_string(),
            metric: v.name.clone(),
            value: (!v.infinite).then_some(v.value),
            infinite: v.infinite,
            error: None,
        }
    }

    pub fn from_error(pair_id: &str, metric: Metric, err: &Error) -> Self {
        Self {
            pair_id: pair_id.to_string(),
            metric: metric.name().to_string(),
            value: None,
            infinite: false,
            error: Some(err.to_string()),
        }
    }
}

fn check_dims(a: &LumaPlane, b: &LumaPlane) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::arg(format!(
            "dimension mismatch: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(a: &LumaPlane, b: &LumaPlane) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data().len() as f64)
}

/// `10·log10(255² / MSE)`; zero MSE sets the infinite flag.
pub fn psnr(a: &LumaPlane, b: &LumaPlane) -> Result<MetricValue> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(MetricValue {
            infinite: true,
            ..MetricValue::finite(Metric::Psnr, f64::INFINITY)
        });
    }
    Ok(MetricValue::finite(Metric::Psnr, 10.0 * (PEAK * PEAK / m).log10()))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
pub const SSIM_C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);

/// Separable "valid" correlation: output shrinks by `kernel.len() - 1` per axis.
/// Returns an empty buffer when the kernel does not fit.
fn filter_valid(w: usize, h: usize, data: &[f64], kernel: &[f64]) -> (usize, usize, Vec<f64>) {
    let n = kernel.len();
    if w < n || h < n {
        return (0, 0, Vec::new());
    }
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = kernel.iter().zip(&row[x..x + n]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                acc += wt * tmp[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (ow, oh, out)
}

struct Moments {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn local_moments(w: usize, h: usize, x: &[f64], y: &[f64], kernel: &[f64]) -> Moments {
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (_, _, mu_x) = filter_valid(w, h, x, kernel);
    let (_, _, mu_y) = filter_valid(w, h, y, kernel);
    let (_, _, xx) = filter_valid(w, h, &prod(x, x), kernel);
    let (_, _, yy) = filter_valid(w, h, &prod(y, y), kernel);
    let (_, _, xy) = filter_valid(w, h, &prod(x, y), kernel);
    let var_x = xx.iter().zip(&mu_x).map(|(e, m)| e - m * m).collect();
    let var_y = yy.iter().zip(&mu_y).map(|(e, m)| e - m * m).collect();
    let cov = xy.iter().zip(mu_x.iter().zip(&mu_y)).map(|(e, (a, b))| e - a * b).collect();
    Moments {
        mu_x,
        mu_y,
        var_x,
        var_y,
        cov,
    }
}

/// Mean SSIM over the valid region. Both planes must be at least 11×11.
pub fn ssim(a: &LumaPlane, b: &LumaPlane) -> Result<MetricValue> {
    check_dims(a, b)?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::arg(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    let kernel = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW / 2);
    let m = local_moments(a.width(), a.height(), a.data(), b.data(), &kernel);
    let n = m.mu_x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (m.mu_x[i], m.mu_y[i]);
        let num = (2.0 * mx * my + SSIM_C1) * (2.0 * m.cov[i] + SSIM_C2);
        let den = (mx * mx + my * my + SSIM_C1) * (m.var_x[i] + m.var_y[i] + SSIM_C2);
        total += num / den;
    }
    Ok(MetricValue::finite(Metric::Ssim, total / n as f64))
}

pub const VIF_SCALES: usize = 4;
pub const VIF_NOISE_VAR: f64 = 2.0;
pub const VIF_EPS: f64 = 1e-10;
pub const VIF_MIN_SIDE: usize = 32;

/// Window size at scale `k` (1-based): `2^(5-k) + 1`.
pub fn vif_window(scale: usize) -> usize {
    (1 << (5 - scale)) + 1
}

/// Pixel-domain visual information fidelity. Reference first; not symmetric.
pub fn vif(reference: &LumaPlane, distorted: &LumaPlane) -> Result<MetricValue> {
    check_dims(reference, distorted)?;
    if reference.width() < VIF_MIN_SIDE || reference.height() < VIF_MIN_SIDE {
        return Err(Error::arg(format!(
            "VIF needs at least {VIF_MIN_SIDE}x{VIF_MIN_SIDE}, got {}x{}",
            reference.width(),
            reference.height()
        )));
    }
    let (mut w, mut h) = (reference.width(), reference.height());
    let mut r = reference.data().to_vec();
    let mut d = distorted.data().to_vec();
    let (mut num, mut den) = (0.0, 0.0);

    for scale in 1..=VIF_SCALES {
        let n = vif_window(scale);
        let kernel = gaussian_kernel(n as f64 / 5.0, n / 2);
        if scale > 1 {
            let (fw, fh, fr) = filter_valid(w, h, &r, &kernel);
            let (_, _, fd) = filter_valid(w, h, &d, &kernel);
            (w, h, r) = decimate(fw, fh, &fr);
            (_, _, d) = decimate(fw, fh, &fd);
        }
        let m = local_moments(w, h, &r, &d, &kernel);
        for i in 0..m.mu_x.len() {
            let (n_i, d_i) = vif_terms(m.var_x[i], m.var_y[i], m.cov[i]);
            num += n_i;
            den += d_i;
        }
    }
    if den == 0.0 {
        return Err(Error::Degenerate("VIF undefined for a constant reference".into()));
    }
    Ok(MetricValue::finite(Metric::Vif, num / den))
}

/// Keeps every other sample starting at (0, 0).
fn decimate(w: usize, h: usize, data: &[f64]) -> (usize, usize, Vec<f64>) {
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Vec::with_capacity(ow * oh);
    for y in (0..h).step_by(2) {
        for x in (0..w).step_by(2) {
            out.push(data[y * w + x]);
        }
    }
    (ow, oh, out)
}

/// Per-location numerator and denominator contributions of the GSM channel model.
fn vif_terms(var_x: f64, var_y: f64, cov: f64) -> (f64, f64) {
    let mut sx = var_x.max(0.0);
    let sy = var_y.max(0.0);
    let mut g = cov / (sx + VIF_EPS);
    let mut sv = sy - g * cov;
    if sx < VIF_EPS {
        g = 0.0;
        sv = sy;
        sx = 0.0;
    }
    if sy < VIF_EPS {
        g = 0.0;
        sv = 0.0;
    }
    if g < 0.0 {
        sv = sy;
        g = 0.0;
    }
    if sv <= VIF_EPS {
        sv = VIF_EPS;
    }
    (
        (1.0 + g * g * sx / (sv + VIF_NOISE_VAR)).log10(),
        (1.0 + sx / VIF_NOISE_VAR).log10(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::gaussian_blur;
    use crate::synth;
    use proptest::prelude::*;

    fn plane(w: usize, h: usize, seed: u64) -> LumaPlane {
        synth::noise_plane(w, h, seed)
    }

    // Double-loop oracle.
    fn mse_oracle(a: &LumaPlane, b: &LumaPlane) -> f64 {
        let mut s = 0.0;
        for y in 0..a.height() {
            for x in 0..a.width() {
                let d = a.get(x, y) - b.get(x, y);
                s += d * d;
            }
        }
        s / (a.width() * a.height()) as f64
    }

    // Naive SSIM: direct 11×11 window sums at every valid position.
    fn ssim_oracle(a: &LumaPlane, b: &LumaPlane) -> f64 {
        let r = 5i32;
        let mut win = vec![0.0; 121];
        let mut total = 0.0;
        for j in -r..=r {
            for i in -r..=r {
                win[((j + r) * 11 + (i + r)) as usize] = (-((i * i + j * j) as f64) / (2.0 * 1.5 * 1.5)).exp();
            }
        }
        let s: f64 = win.iter().sum();
        win.iter_mut().for_each(|v| *v /= s);
        let mut count = 0;
        for cy in 5..a.height() - 5 {
            for cx in 5..a.width() - 5 {
                let (mut mx, mut my) = (0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let wgt = win[j * 11 + i];
                        mx += wgt * a.get(cx + i - 5, cy + j - 5);
                        my += wgt * b.get(cx + i - 5, cy + j - 5);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let wgt = win[j * 11 + i];
                        let dx = a.get(cx + i - 5, cy + j - 5) - mx;
                        let dy = b.get(cx + i - 5, cy + j - 5) - my;
                        vx += wgt * dx * dx;
                        vy += wgt * dy * dy;
                        cxy += wgt * dx * dy;
                    }
                }
                total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn mse_cases() {
        let a = LumaPlane::uniform(5, 5, 100.0).unwrap();
        let b = LumaPlane::uniform(5, 5, 101.0).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        let (x, y) = (plane(16, 16, 1), plane(16, 16, 2));
        assert!((mse(&x, &y).unwrap() - mse_oracle(&x, &y)).abs() < 1e-9);
        assert!(matches!(mse(&a, &x), Err(Error::Argument(_))));
    }

    #[test]
    fn psnr_cases() {
        let a = LumaPlane::uniform(8, 8, 100.0).unwrap();
        let b = LumaPlane::uniform(8, 8, 101.0).unwrap();
        let same = psnr(&a, &a).unwrap();
        assert!(same.infinite && same.value.is_infinite());
        let one = psnr(&a, &b).unwrap();
        assert!(!one.infinite);
        assert!((one.value - 48.1308).abs() < 1e-3);
        let (x, y) = (plane(16, 16, 3), plane(16, 16, 4));
        let p = psnr(&x, &y).unwrap().value;
        assert_eq!(p, 10.0 * (255.0f64 * 255.0 / mse(&x, &y).unwrap()).log10());
    }

    #[test]
    fn psnr_decreases_with_error() {
        let a = LumaPlane::uniform(8, 8, 100.0).unwrap();
        let mut last = f64::INFINITY;
        for d in 1..20 {
            let b = LumaPlane::uniform(8, 8, 100.0 + d as f64).unwrap();
            let v = psnr(&a, &b).unwrap().value;
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn ssim_cases() {
        let x = plane(32, 32, 5);
        assert!((ssim(&x, &x).unwrap().value - 1.0).abs() < 1e-9);
        let a = LumaPlane::uniform(16, 16, 100.0).unwrap();
        let b = LumaPlane::uniform(16, 16, 155.0).unwrap();
        let expected = (2.0 * 100.0 * 155.0 + 6.5025) / (100.0f64.powi(2) + 155.0f64.powi(2) + 6.5025);
        assert!((ssim(&a, &b).unwrap().value - expected).abs() < 1e-9);
        assert!((expected - 0.91111).abs() < 1e-4);
        assert!(ssim(&LumaPlane::uniform(10, 20, 0.0).unwrap(), &LumaPlane::uniform(10, 20, 0.0).unwrap()).is_err());
        assert!(ssim(&a, &x).is_err());
    }

    #[test]
    fn ssim_matches_naive_oracle() {
        for seed in 0..3 {
            let (a, b) = (plane(64, 64, seed), plane(64, 64, seed + 100));
            let got = ssim(&a, &b).unwrap().value;
            assert!((got - ssim_oracle(&a, &b)).abs() < 1e-6);
        }
    }

    #[test]
    fn vif_identity_and_errors() {
        let x = synth::natural_plane(64, 64, 7);
        assert!((vif(&x, &x).unwrap().value - 1.0).abs() < 1e-6);
        let c = LumaPlane::uniform(40, 40, 80.0).unwrap();
        assert!(matches!(vif(&c, &c), Err(Error::Degenerate(_))));
        let small = LumaPlane::uniform(31, 40, 80.0).unwrap();
        assert!(matches!(vif(&small, &small), Err(Error::Argument(_))));
        // Minimum size still produces a value: only the first two scales have support.
        let m = synth::natural_plane(32, 32, 1);
        assert!((vif(&m, &m).unwrap().value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn vif_drops_with_blur() {
        let x = synth::natural_plane(96, 96, 3);
        let v1 = vif(&x, &gaussian_blur(&x, 1.0).unwrap()).unwrap().value;
        let v2 = vif(&x, &gaussian_blur(&x, 2.0).unwrap()).unwrap().value;
        assert!(v2 < v1 && v1 < 1.0, "{v1} {v2}");
    }

    #[test]
    fn vif_window_sizes() {
        assert_eq!((1..=4).map(vif_window).collect::<Vec<_>>(), vec![17, 9, 5, 3]);
    }

    #[test]
    fn metric_record_serialization() {
        let a = LumaPlane::uniform(8, 8, 1.0).unwrap();
        let rec = MetricRecord::from_value("p1", &psnr(&a, &a).unwrap());
        let text = serde_json::to_string(&rec).unwrap();
        assert_eq!(text, r#"{"pair_id":"p1","metric":"psnr","value":null,"infinite":true}"#);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn ssim_symmetric_and_bounded(s1 in any::<u64>(), s2 in any::<u64>()) {
            let (a, b) = (plane(16, 16, s1), plane(16, 16, s2));
            let ab = ssim(&a, &b).unwrap().value;
            let ba = ssim(&b, &a).unwrap().value;
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!(ab <= 1.0 + 1e-12);
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        }
    }
}
