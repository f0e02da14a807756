//! Coupon-collector statistics, chi-square tests, binomial intervals and rank
//! correlation.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

/// `H_n = sum_{k=1..n} 1/k`, summed smallest term first.
pub fn harmonic(n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Statistics("harmonic number of 0".into()));
    }
    Ok((1..=n).rev().map(|k| 1.0 / k as f64).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouponStats {
    pub n: u64,
    /// `n * H_n`
    pub expected: f64,
    /// Asymptotic `(pi^2 / 6) * n^2`. Overestimates the exact variance
    /// `n^2 * sum 1/k^2 - n * H_n` for finite `n` (for `n = 1` the exact value is 0).
    pub variance: f64,
}

/// Draws needed to hit every one of `n` equally likely entries at least once.
pub fn coupon_stats(n: u64) -> Result<CouponStats> {
    let h = harmonic(n)?;
    let nf = n as f64;
    Ok(CouponStats {
        n,
        expected: nf * h,
        variance: PI * PI / 6.0 * nf * nf,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Alpha {
    P05,
    P01,
    P001,
}

impl Alpha {
    fn column(self) -> usize {
        match self {
            Alpha::P05 => 0,
            Alpha::P01 => 1,
            Alpha::P001 => 2,
        }
    }

    pub fn value(self) -> f64 {
        [0.05, 0.01, 0.001][self.column()]
    }
}

// Upper-tail critical values of the chi-square distribution, columns
// alpha = 0.05, 0.01, 0.001.
const CHI2_CRITICAL: &[(usize, [f64; 3])] = &[
    (1, [3.8415, 6.6349, 10.8276]),
    (2, [5.9915, 9.2103, 13.8155]),
    (3, [7.8147, 11.3449, 16.2662]),
    (4, [9.4877, 13.2767, 18.4668]),
    (5, [11.0705, 15.0863, 20.5150]),
    (6, [12.5916, 16.8119, 22.4577]),
    (7, [14.0671, 18.4753, 24.3219]),
    (8, [15.5073, 20.0902, 26.1245]),
    (9, [16.9190, 21.6660, 27.8772]),
    (10, [18.3070, 23.2093, 29.5883]),
    (11, [19.6751, 24.7250, 31.2641]),
    (12, [21.0261, 26.2170, 32.9095]),
    (13, [22.3620, 27.6882, 34.5282]),
    (14, [23.6848, 29.1412, 36.1233]),
    (15, [24.9958, 30.5779, 37.6973]),
    (16, [26.2962, 31.9999, 39.2524]),
    (17, [27.5871, 33.4087, 40.7902]),
    (18, [28.8693, 34.8053, 42.3124]),
    (19, [30.1435, 36.1909, 43.8202]),
    (20, [31.4104, 37.5662, 45.3147]),
    (21, [32.6706, 38.9322, 46.7970]),
    (22, [33.9244, 40.2894, 48.2679]),
    (23, [35.1725, 41.6384, 49.7282]),
    (24, [36.4150, 42.9798, 51.1786]),
    (25, [37.6525, 44.3141, 52.6197]),
    (26, [38.8851, 45.6417, 54.0520]),
    (27, [40.1133, 46.9629, 55.4760]),
    (28, [41.3371, 48.2782, 56.8923]),
    (29, [42.5570, 49.5879, 58.3012]),
    (30, [43.7730, 50.8922, 59.7031]),
    (31, [44.9853, 52.1914, 61.0983]),
    (32, [46.1943, 53.4858, 62.4872]),
    (33, [47.3999, 54.7755, 63.8701]),
    (34, [48.6024, 56.0609, 65.2472]),
    (35, [49.8018, 57.3421, 66.6188]),
    (36, [50.9985, 58.6192, 67.9852]),
    (37, [52.1923, 59.8925, 69.3465]),
    (38, [53.3835, 61.1621, 70.7029]),
    (39, [54.5722, 62.4281, 72.0547]),
    (40, [55.7585, 63.6907, 73.4020]),
    (63, [82.5287, 92.0100, 103.4424]),
    (127, [154.3015, 166.9874, 181.9930]),
    (255, [293.2478, 310.4574, 330.5197]),
    (511, [564.6961, 588.2978, 615.5149]),
    (1023, [1098.5208, 1131.1587, 1168.4972]),
];

/// Tabulated where available; above 40 dof, untabulated values use the
/// Wilson-Hilferty cube approximation (relative error well under 1% there).
pub fn chi2_critical(dof: usize, alpha: Alpha) -> Result<f64> {
    if dof == 0 {
        return Err(Error::Statistics("zero degrees of freedom".into()));
    }
    if let Some((_, v)) = CHI2_CRITICAL.iter().find(|(d, _)| *d == dof) {
        return Ok(v[alpha.column()]);
    }
    if dof < 40 {
        return Err(Error::Statistics(format!(
            "no critical value for {dof} dof"
        )));
    }
    let z = [1.644_853_6, 2.326_347_9, 3.090_232_3][alpha.column()];
    let k = dof as f64;
    let h = 2.0 / (9.0 * k);
    Ok(k * (1.0 - h + z * h.sqrt()).powi(3))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
}

impl ChiSquare {
    /// True when the null hypothesis survives at level `alpha`.
    pub fn pass_at(&self, alpha: Alpha) -> Result<bool> {
        Ok(self.statistic <= chi2_critical(self.dof, alpha)?)
    }
}

/// Pearson goodness-of-fit against the uniform distribution over the bins.
pub fn chi_square_uniform(counts: &[u64]) -> Result<ChiSquare> {
    let k = counts.len();
    if k < 2 {
        return Err(Error::Statistics("need at least two bins".into()));
    }
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / k as f64;
    if expected < 5.0 {
        return Err(Error::Statistics(format!(
            "expected count {expected:.2} per bin is below 5"
        )));
    }
    let statistic = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    Ok(ChiSquare {
        statistic,
        dof: k - 1,
    })
}

/// Two-sample chi-square test of homogeneity on paired histograms.
///
/// Adjacent bins are merged left to right until each merged bin's expected
/// count in both samples is at least 5; a short trailing remainder is folded
/// into the last merged bin.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> Result<ChiSquare> {
    if a.len() != b.len() {
        return Err(Error::Statistics("histograms differ in length".into()));
    }
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return Err(Error::Statistics("empty sample".into()));
    }
    let n = (na + nb) as f64;
    let (fa, fb) = (na as f64 / n, nb as f64 / n);
    let min_share = fa.min(fb);

    let mut merged: Vec<(u64, u64)> = Vec::new();
    let (mut ca, mut cb) = (0u64, 0u64);
    for (&x, &y) in a.iter().zip(b) {
        ca += x;
        cb += y;
        if (ca + cb) as f64 * min_share >= 5.0 {
            merged.push((ca, cb));
            ca = 0;
            cb = 0;
        }
    }
    if ca + cb > 0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += ca;
                last.1 += cb;
            }
            None => merged.push((ca, cb)),
        }
    }
    if merged.len() < 2 {
        return Err(Error::Statistics("too few populated bins".into()));
    }
    let statistic = merged
        .iter()
        .map(|&(x, y)| {
            let col = (x + y) as f64;
            let (ea, eb) = (col * fa, col * fb);
            (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb
        })
        .sum();
    Ok(ChiSquare {
        statistic,
        dof: merged.len() - 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

fn z_score(confidence: f64) -> Result<f64> {
    const Z: &[(f64, f64)] = &[
        (0.80, 1.281_551_6),
        (0.90, 1.644_853_6),
        (0.95, 1.959_964_0),
        (0.98, 2.326_347_9),
        (0.99, 2.575_829_3),
        (0.999, 3.290_526_7),
    ];
    Z.iter()
        .find(|(c, _)| (c - confidence).abs() < 1e-9)
        .map(|&(_, z)| z)
        .ok_or_else(|| Error::Statistics(format!("unsupported confidence level {confidence}")))
}

/// Normal-approximation interval for a binomial proportion, clamped to [0, 1].
pub fn binomial_ci(successes: u64, trials: u64, confidence: f64) -> Result<Interval> {
    if trials == 0 {
        return Err(Error::Statistics(
            "binomial interval with zero trials".into(),
        ));
    }
    if successes > trials {
        return Err(Error::Statistics("more successes than trials".into()));
    }
    let z = z_score(confidence)?;
    let p = successes as f64 / trials as f64;
    let half = z * (p * (1.0 - p) / trials as f64).sqrt();
    Ok(Interval {
        lo: (p - half).max(0.0),
        hi: (p + half).min(1.0),
    })
}

/// Interval a fair-coin guesser's accuracy falls in with the given
/// confidence over `trials` bits.
pub fn chance_interval(trials: u64, confidence: f64) -> Result<Interval> {
    if trials == 0 {
        return Err(Error::Statistics("chance interval with zero trials".into()));
    }
    let z = z_score(confidence)?;
    let half = z * (0.25 / trials as f64).sqrt();
    Ok(Interval {
        lo: (0.5 - half).max(0.0),
        hi: (0.5 + half).min(1.0),
    })
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Statistics(
            "need two equal-length samples of size >= 2".into(),
        ));
    }
    let r = pearson(&ranks(x), &ranks(y));
    if r.is_nan() {
        return Err(Error::Statistics(
            "rank correlation undefined for constant sample".into(),
        ));
    }
    Ok(r)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (divisor `n - 1`).
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}
