//! Pupil cleaning: luminance regression, rolling-median baseline removal and
//! median/MAD normalization, followed by the novelty and derivative signals.
//!
//! The three cleaning steps always run in that order. NaN marks frames with
//! no usable pupil data and flows through every step untouched.

use serde::{Deserialize, Serialize};

use crate::ingest::WindowAggregate;
use crate::numeric::{median_sorted, quantile_sorted};

pub const DEFAULT_POLY_DEGREE: usize = 2;
pub const DEFAULT_ROLLING_WINDOW_S: f64 = 10.0;
/// Scale below which MAD (and then IQR) is treated as zero.
pub const MIN_SCALE: f64 = 1e-9;
/// Normal-consistency factor for IQR: IQR / 1.349 estimates sigma.
const IQR_TO_SIGMA: f64 = 1.349;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PupilParams {
    pub poly_degree: usize,
    pub rolling_window_s: f64,
    /// Multiplier applied to MAD; 1.0 is plain MAD, 1.4826 the normal-consistent scale.
    pub mad_scale: f64,
}

impl Default for PupilParams {
    fn default() -> Self {
        PupilParams {
            poly_degree: DEFAULT_POLY_DEGREE,
            rolling_window_s: DEFAULT_ROLLING_WINDOW_S,
            mad_scale: 1.0,
        }
    }
}

/// NaN-skipping mean of the window's pupil samples.
pub fn frame_pupil(window: &WindowAggregate<'_>) -> f64 {
    let (sum, n) = window
        .samples
        .iter()
        .filter(|s| s.pupil_mm.is_finite())
        .fold((0.0, 0usize), |(sum, n), s| (sum + s.pupil_mm, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LuminanceFit {
    pub residual: Vec<f64>,
    /// Polynomial coefficients in ascending powers of brightness. Columns that
    /// are linearly dependent on lower powers get a zero coefficient.
    pub coefficients: Vec<f64>,
    /// Too few valid points for the polynomial; plain mean subtraction was used.
    pub fallback: bool,
    pub valid_points: usize,
}

/// Least-squares polynomial of pupil on brightness over the valid frames,
/// solved by modified Gram-Schmidt with re-orthogonalization. Rank-deficient
/// columns (for example constant brightness) are dropped, so the fit
/// degenerates gracefully to lower degree.
pub fn luminance_correct(raw: &[f64], brightness: &[f64], degree: usize) -> LuminanceFit {
    assert_eq!(raw.len(), brightness.len(), "raw and brightness must align");
    let valid: Vec<usize> = (0..raw.len())
        .filter(|&i| raw[i].is_finite() && brightness[i].is_finite())
        .collect();
    let mut residual = vec![f64::NAN; raw.len()];

    if valid.len() < degree + 2 {
        let mean = if valid.is_empty() {
            f64::NAN
        } else {
            valid.iter().map(|&i| raw[i]).sum::<f64>() / valid.len() as f64
        };
        for &i in &valid {
            residual[i] = raw[i] - mean;
        }
        let mut coefficients = vec![0.0; degree + 1];
        coefficients[0] = mean;
        return LuminanceFit { residual, coefficients, fallback: true, valid_points: valid.len() };
    }

    let y: Vec<f64> = valid.iter().map(|&i| raw[i]).collect();
    let b: Vec<f64> = valid.iter().map(|&i| brightness[i]).collect();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();

    let mut q: Vec<Vec<f64>> = Vec::new();
    // r[k] holds column k of R (length = number of kept columns up to and including k).
    let mut r: Vec<Vec<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for power in 0..=degree {
        let mut v: Vec<f64> = b.iter().map(|x| x.powi(power as i32)).collect();
        let norm0 = dot(&v, &v).sqrt();
        let mut rcol = vec![0.0; q.len()];
        for _ in 0..2 {
            for (k, qk) in q.iter().enumerate() {
                let d = dot(qk, &v);
                rcol[k] += d;
                v.iter_mut().zip(qk).for_each(|(vi, qi)| *vi -= d * qi);
            }
        }
        let nv = dot(&v, &v).sqrt();
        if norm0 == 0.0 || nv <= 1e-10 * norm0 {
            continue;
        }
        v.iter_mut().for_each(|vi| *vi /= nv);
        rcol.push(nv);
        q.push(v);
        r.push(rcol);
        kept.push(power);
    }

    // Project y onto span(Q), twice for accuracy.
    let mut res = y.clone();
    let mut qty = vec![0.0; q.len()];
    for _ in 0..2 {
        for (k, qk) in q.iter().enumerate() {
            let d = dot(qk, &res);
            qty[k] += d;
            res.iter_mut().zip(qk).for_each(|(ri, qi)| *ri -= d * qi);
        }
    }
    for (slot, &i) in valid.iter().enumerate() {
        residual[i] = res[slot];
    }

    // Back-substitute R beta = Q^T y for the kept columns.
    let m = kept.len();
    let mut beta = vec![0.0; m];
    for k in (0..m).rev() {
        let mut acc = qty[k];
        for j in k + 1..m {
            acc -= r[j][k] * beta[j];
        }
        beta[k] = acc / r[k][k];
    }
    let mut coefficients = vec![0.0; degree + 1];
    for (k, &power) in kept.iter().enumerate() {
        coefficients[power] = beta[k];
    }
    LuminanceFit { residual, coefficients, fallback: false, valid_points: valid.len() }
}

/// Sorted multiset backing the rolling median.
#[derive(Default)]
struct SortedWindow {
    values: Vec<f64>,
}

impl SortedWindow {
    fn insert(&mut self, v: f64) {
        let at = self.values.partition_point(|x| x.total_cmp(&v).is_lt());
        self.values.insert(at, v);
    }

    fn remove(&mut self, v: f64) {
        let at = self.values.partition_point(|x| x.total_cmp(&v).is_lt());
        debug_assert!(at < self.values.len() && self.values[at].total_cmp(&v).is_eq());
        self.values.remove(at);
    }

    fn median(&self) -> f64 {
        median_sorted(&self.values)
    }
}

/// Rolling median over a time-centered window `[t - w/2, t + w/2]`, shrunk at
/// the session edges. Frame times must be sorted.
pub fn rolling_median(series: &[f64], times: &[f64], window_s: f64) -> Vec<f64> {
    assert_eq!(series.len(), times.len(), "series and times must align");
    let half = window_s / 2.0;
    let n = series.len();
    let mut out = vec![f64::NAN; n];
    let mut win = SortedWindow::default();
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..n {
        while hi < n && times[hi] <= times[i] + half {
            if series[hi].is_finite() {
                win.insert(series[hi]);
            }
            hi += 1;
        }
        while times[lo] < times[i] - half {
            if series[lo].is_finite() {
                win.remove(series[lo]);
            }
            lo += 1;
        }
        out[i] = win.median();
    }
    out
}

/// Subtracts the centered rolling median; NaN in gives NaN out.
pub fn rolling_median_detrend(series: &[f64], times: &[f64], window_s: f64) -> Vec<f64> {
    let baseline = rolling_median(series, times, window_s);
    series
        .iter()
        .zip(baseline)
        .map(|(&x, m)| if x.is_finite() { x - m } else { f64::NAN })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleUsed {
    Mad,
    Iqr,
    /// Neither MAD nor IQR was usable; zeros were emitted.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustZ {
    pub values: Vec<f64>,
    pub center: f64,
    pub scale: f64,
    pub scale_used: ScaleUsed,
}

/// `(x - median) / (mad_scale * MAD)`, with an IQR fallback when MAD vanishes.
pub fn robust_zscore(series: &[f64], mad_scale: f64) -> RobustZ {
    let mut valid: Vec<f64> = series.iter().copied().filter(|x| x.is_finite()).collect();
    valid.sort_by(f64::total_cmp);
    let degenerate = |center: f64| RobustZ {
        values: series.iter().map(|x| if x.is_finite() { 0.0 } else { f64::NAN }).collect(),
        center,
        scale: 0.0,
        scale_used: ScaleUsed::Degenerate,
    };
    if valid.len() < 2 {
        return degenerate(median_sorted(&valid));
    }
    let center = median_sorted(&valid);
    let mut dev: Vec<f64> = valid.iter().map(|x| (x - center).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad = median_sorted(&dev);
    let (scale, scale_used) = if mad >= MIN_SCALE {
        (mad_scale * mad, ScaleUsed::Mad)
    } else {
        let iqr = quantile_sorted(&valid, 0.75) - quantile_sorted(&valid, 0.25);
        (iqr / IQR_TO_SIGMA, ScaleUsed::Iqr)
    };
    if scale < MIN_SCALE {
        return degenerate(center);
    }
    let values = series
        .iter()
        .map(|&x| if x.is_finite() { (x - center) / scale } else { f64::NAN })
        .collect();
    RobustZ { values, center, scale, scale_used }
}

/// `|p|`, with missing frames mapped to zero and flagged.
pub fn novelty(cleaned: &[f64]) -> (Vec<f64>, Vec<bool>) {
    cleaned
        .iter()
        .map(|&p| if p.is_nan() { (0.0, true) } else { (p.abs(), false) })
        .unzip()
}

/// `|dp/dt|` by central differences, one-sided at the ends.
pub fn pupil_derivative(cleaned: &[f64], times: &[f64]) -> Vec<f64> {
    assert_eq!(cleaned.len(), times.len(), "series and times must align");
    let n = cleaned.len();
    if n < 2 {
        return vec![f64::NAN; n];
    }
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            let d = (cleaned[b] - cleaned[a]).abs() / (times[b] - times[a]);
            if d.is_finite() {
                d
            } else {
                f64::NAN
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PupilVariant {
    Centered,
    Delayed,
}

impl PupilVariant {
    pub const ALL: [PupilVariant; 2] = [PupilVariant::Centered, PupilVariant::Delayed];

    pub fn as_str(self) -> &'static str {
        match self {
            PupilVariant::Centered => "centered",
            PupilVariant::Delayed => "delayed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "centered" | "no-delay" | "nodelay" => Some(PupilVariant::Centered),
            "delayed" => Some(PupilVariant::Delayed),
            _ => None,
        }
    }
}

impl std::fmt::Display for PupilVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One session's cleaned pupil signal on the frame clock.
#[derive(Clone, Debug, PartialEq)]
pub struct PupilSeries {
    pub raw_mm: Vec<f64>,
    pub cleaned: Vec<f64>,
    pub novelty: Vec<f64>,
    pub novelty_missing: Vec<bool>,
    pub deriv: Vec<f64>,
    pub luminance: LuminanceFit,
    pub scale_used: ScaleUsed,
}

/// Runs the full cleaning chain on per-frame raw pupil values.
pub fn clean_pupil(raw_mm: &[f64], brightness: &[f64], times: &[f64], params: &PupilParams) -> PupilSeries {
    let luminance = luminance_correct(raw_mm, brightness, params.poly_degree);
    let detrended = rolling_median_detrend(&luminance.residual, times, params.rolling_window_s);
    let z = robust_zscore(&detrended, params.mad_scale);
    let (novelty, novelty_missing) = novelty(&z.values);
    let deriv = pupil_derivative(&z.values, times);
    PupilSeries {
        raw_mm: raw_mm.to_vec(),
        cleaned: z.values,
        novelty,
        novelty_missing,
        deriv,
        luminance,
        scale_used: z.scale_used,
    }
}
