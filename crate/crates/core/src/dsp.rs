//! Digital filtering and small statistics helpers.
//!
//! The band-pass used for activity counts and step detection is a Butterworth
//! design in second-order sections, applied forward and backward for zero
//! phase. Edge handling (odd extension, cascaded steady-state initial
//! conditions) follows the common `sosfiltfilt` convention so results can be
//! checked against other toolkits.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// One biquad: `[b0, b1, b2, 1, a1, a2]`.
pub type Section = [f64; 6];

#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Section>,
}

fn warp(f: f64, fs: f64) -> f64 {
    fs / std::f64::consts::PI * (std::f64::consts::PI * f / fs).tan()
}

fn unwarp(fa: f64, fs: f64) -> f64 {
    fs / std::f64::consts::PI * (std::f64::consts::PI * fa / fs).atan()
}

/// Butterworth band-pass of prototype order `order`, cutoffs in Hz.
pub fn butter_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Sos {
    assert!(order >= 1 && 0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0);
    let two_pi = 2.0 * std::f64::consts::PI;
    let wl = two_pi * warp(low_hz, fs);
    let wh = two_pi * warp(high_hz, fs);
    let bw = wh - wl;
    let w0_sq = wl * wh;

    // analog low-pass prototype poles, transformed to band-pass
    let mut poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = std::f64::consts::PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta) * bw / 2.0;
        let disc = (p * p - w0_sq).sqrt();
        poles.push(p + disc);
        poles.push(p - disc);
    }
    // bilinear transform; analog zeros at s=0 map to z=1, zeros at infinity to z=-1
    let k2 = 2.0 * fs;
    let mut gain = Complex64::new(bw.powi(order as i32), 0.0);
    let mut zpoles = Vec::with_capacity(poles.len());
    for &p in &poles {
        gain /= Complex64::new(k2, 0.0) - p;
        zpoles.push((Complex64::new(k2, 0.0) + p) / (Complex64::new(k2, 0.0) - p));
    }
    // analog zeros at the origin contribute k2 each
    let gain = gain.re * k2.powi(order as i32);

    // one pole per conjugate pair; the pair closest to the unit circle goes last
    let mut upper: Vec<Complex64> = zpoles.into_iter().filter(|p| p.im > 0.0).collect();
    upper.sort_by(|a, b| (1.0 - b.norm()).abs().total_cmp(&(1.0 - a.norm()).abs()));
    assert_eq!(upper.len(), order, "band-pass poles come in conjugate pairs");
    let mut at_one = order;
    let mut at_minus_one = order;
    let mut sections = vec![[0.0; 6]; order];
    for (idx, p) in upper.iter().enumerate().rev() {
        let nearer_one = (p - 1.0).norm() <= (p + 1.0).norm();
        let b = if at_one >= 2 && (nearer_one || at_minus_one < 2) {
            at_one -= 2;
            [1.0, -2.0, 1.0]
        } else if at_minus_one >= 2 {
            at_minus_one -= 2;
            [1.0, 2.0, 1.0]
        } else {
            at_one -= 1;
            at_minus_one -= 1;
            [1.0, 0.0, -1.0]
        };
        sections[idx] = [b[0], b[1], b[2], 1.0, -2.0 * p.re, p.norm_sqr()];
    }
    for c in &mut sections[0][..3] {
        *c *= gain;
    }
    Sos { sections }
}

/// Butterworth band-pass whose *two-pass* (forward-backward) response is
/// -3 dB at `low_hz` and `high_hz`.
pub fn zero_phase_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Sos {
    let wl = warp(low_hz, fs);
    let wh = warp(high_hz, fs);
    let w0_sq = wl * wh;
    // running the filter twice squares the magnitude; widen the bandwidth so
    // the squared response crosses 1/sqrt(2) at the requested edges
    let c = (std::f64::consts::SQRT_2 - 1.0).powf(1.0 / (2 * order) as f64);
    let bw = (wh - wl) / c;
    let fa_high = (bw + (bw * bw + 4.0 * w0_sq).sqrt()) / 2.0;
    let fa_low = w0_sq / fa_high;
    butter_bandpass(order, unwarp(fa_low, fs), unwarp(fa_high, fs), fs)
}

impl Sos {
    /// Steady-state direct-form-II-transposed states for a unit step, cascaded.
    pub fn steady_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let (b0, b1, b2, a1, a2) = (s[0], s[1], s[2], s[4], s[5]);
                let g = (b0 + b1 + b2) / (1.0 + a1 + a2);
                let z2 = b2 - a2 * g;
                let z1 = b1 - a1 * g + z2;
                let zi = [z1 * scale, z2 * scale];
                scale *= g;
                zi
            })
            .collect()
    }

    /// Single forward pass with initial states (modified in place).
    pub fn filter_with_state(&self, x: &mut [f64], state: &mut [[f64; 2]]) {
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            let (b0, b1, b2, a1, a2) = (s[0], s[1], s[2], s[4], s[5]);
            for v in x.iter_mut() {
                let xi = *v;
                let y = b0 * xi + z[0];
                z[0] = b1 * xi - a1 * y + z[1];
                z[1] = b2 * xi - a2 * y;
                *v = y;
            }
        }
    }

    /// Frequency response magnitude at `f` Hz.
    pub fn gain_at(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| ((s[0] + s[1] * z1 + s[2] * z2) / (1.0 + s[4] * z1 + s[5] * z2)).norm())
            .product()
    }

    /// Zero-phase filtering with odd extension of `padlen` samples on each side.
    pub fn filtfilt(&self, x: &[f64], padlen: usize) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let padlen = padlen.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * padlen);
        for i in (1..=padlen).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=padlen {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let zi = self.steady_state();
        let x0 = ext[0];
        let mut state: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * x0, z[1] * x0]).collect();
        self.filter_with_state(&mut ext, &mut state);
        ext.reverse();
        let y0 = ext[0];
        let mut state: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * y0, z[1] * y0]).collect();
        self.filter_with_state(&mut ext, &mut state);
        ext.reverse();
        ext[padlen..padlen + n].to_vec()
    }
}

/// The 0.5-3 Hz zero-phase band-pass used for counts and steps at rate `fs`.
pub fn activity_bandpass(fs: f64) -> Sos {
    zero_phase_bandpass(2, 0.5, 3.0, fs)
}

/// Odd-extension length used with [`activity_bandpass`]: three seconds.
pub fn activity_padlen(fs: f64) -> usize {
    (3.0 * fs).round() as usize
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Sample (n-1) standard deviation; 0 for fewer than two values.
pub fn sample_std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

pub fn median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= f64::EPSILON * a.len() as f64 || sbb <= f64::EPSILON * b.len() as f64 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Centered sliding mean and population std over `window` samples (clipped at the edges).
pub fn sliding_mean_std(x: &[f64], window: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let half = window / 2;
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for i in 0..n {
        s1[i + 1] = s1[i] + x[i];
        s2[i + 1] = s2[i] + x[i] * x[i];
    }
    let mut means = Vec::with_capacity(n);
    let mut stds = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let k = (hi - lo) as f64;
        let m = (s1[hi] - s1[lo]) / k;
        let var = ((s2[hi] - s2[lo]) / k - m * m).max(0.0);
        means.push(m);
        stds.push(var.sqrt());
    }
    (means, stds)
}

/// One-sided periodogram of the mean-removed signal: `(frequency_hz, power)`
/// for bins `0..=n/2`. Power is normalized so the non-DC bins sum to the
/// signal variance.
pub fn periodogram(x: &[f64], fs: f64) -> Vec<(f64, f64)> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let m = mean(x);
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> =
        x.iter().map(|v| rustfft::num_complex::Complex::new(v - m, 0.0)).collect();
    let fft = FftPlanner::new().plan_fft_forward(n);
    fft.process(&mut buf);
    let n_f = n as f64;
    (0..=n / 2)
        .map(|k| {
            let p = buf[k].norm_sqr() / (n_f * n_f);
            // fold negative frequencies, except DC and Nyquist
            let p = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { p } else { 2.0 * p };
            (k as f64 * fs / n_f, p)
        })
        .collect()
}
