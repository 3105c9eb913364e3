//! Brute-force reference statistics. Deliberately naive and written from the
//! textbook definitions, sharing no code with the library.
#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rubrag_core::rubric::BandLabel;

pub fn band_of_total(p: f64) -> BandLabel {
    if p < 50.0 {
        BandLabel::NeedsImprovement
    } else if p < 65.0 {
        BandLabel::Satisfactory
    } else if p < 80.0 {
        BandLabel::Good
    } else {
        BandLabel::Excellent
    }
}

/// Confusion-matrix kappa. `None` when chance agreement is 1.
pub fn kappa(a: &[BandLabel], b: &[BandLabel]) -> Option<f64> {
    let mut cats: Vec<BandLabel> = a.iter().chain(b).copied().collect();
    cats.sort();
    cats.dedup();
    let q = cats.len();
    let n = a.len() as f64;
    let mut table = vec![vec![0.0f64; q]; q];
    for (x, y) in a.iter().zip(b) {
        let i = cats.iter().position(|c| c == x).unwrap();
        let j = cats.iter().position(|c| c == y).unwrap();
        table[i][j] += 1.0;
    }
    let mut po = 0.0;
    for (i, row) in table.iter().enumerate() {
        po += row[i];
    }
    po /= n;
    let mut pe = 0.0;
    for i in 0..q {
        let row: f64 = table[i].iter().sum();
        let col: f64 = (0..q).map(|r| table[r][i]).sum();
        pe += row * col;
    }
    pe /= n * n;
    if pe == 1.0 {
        return None;
    }
    Some((po - pe) / (1.0 - pe))
}

/// Mean squares by the sums-of-squares decomposition, residual by subtraction.
pub fn anova(m: &[Vec<f64>]) -> (f64, f64, f64) {
    let n = m.len();
    let k = m[0].len();
    let mut total = 0.0;
    for row in m {
        for x in row {
            total += x;
        }
    }
    let grand = total / (n * k) as f64;
    let mut sst = 0.0;
    for row in m {
        for x in row {
            sst += (x - grand) * (x - grand);
        }
    }
    let mut ssr = 0.0;
    for row in m {
        let rm: f64 = row.iter().sum::<f64>() / k as f64;
        ssr += k as f64 * (rm - grand) * (rm - grand);
    }
    let mut ssc = 0.0;
    for j in 0..k {
        let mut s = 0.0;
        for row in m {
            s += row[j];
        }
        let cm = s / n as f64;
        ssc += n as f64 * (cm - grand) * (cm - grand);
    }
    let sse = sst - ssr - ssc;
    let msr = ssr / (n - 1) as f64;
    let msc = ssc / (k - 1) as f64;
    let mse = sse / ((n - 1) * (k - 1)) as f64;
    (msr, msc, mse)
}

pub fn icc21(m: &[Vec<f64>]) -> Option<f64> {
    let (msr, msc, mse) = anova(m);
    let n = m.len() as f64;
    let k = m[0].len() as f64;
    let den = msr + (k - 1.0) * mse + k * (msc - mse) / n;
    if den == 0.0 {
        return None;
    }
    Some((msr - mse) / den)
}

/// Raw-moment formula.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        syy += y[i] * y[i];
        sxy += x[i] * y[i];
    }
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if vx <= 0.0 || vy <= 0.0 {
        return None;
    }
    Some((n * sxy - sx * sy) / (vx.sqrt() * vy.sqrt()))
}

pub fn mae_rmse(h: &[f64], m: &[f64]) -> (f64, f64) {
    let n = h.len() as f64;
    let mut a = 0.0;
    let mut s = 0.0;
    for i in 0..h.len() {
        let d = m[i] - h[i];
        a += d.abs();
        s += d * d;
    }
    (a / n, (s / n).sqrt())
}

/// `(mean_diff, sd_diff, lower, upper)` for machine-minus-human differences.
pub fn bland_altman(h: &[f64], m: &[f64]) -> (f64, f64, f64, f64) {
    let n = h.len() as f64;
    let mut s = 0.0;
    for i in 0..h.len() {
        s += m[i] - h[i];
    }
    let mean = s / n;
    let mut ss = 0.0;
    for i in 0..h.len() {
        let d = m[i] - h[i] - mean;
        ss += d * d;
    }
    let sd = (ss / (n - 1.0)).sqrt();
    (mean, sd, mean - 1.96 * sd, mean + 1.96 * sd)
}

/// A random paired dataset of size `n` with scores in [0, 100].
pub fn random_pairs(rng: &mut StdRng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let centre = rng.random_range(55.0..80.0);
    let spread = rng.random_range(4.0..15.0);
    let bias = rng.random_range(-4.0..2.0);
    let noise = rng.random_range(1.0..6.0);
    let h_dist = Normal::new(centre, spread).unwrap();
    let e_dist = Normal::new(bias, noise).unwrap();
    let mut h = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = h_dist.sample(rng);
        let y: f64 = x + e_dist.sample(rng);
        h.push(x.clamp(0.0, 100.0));
        m.push(y.clamp(0.0, 100.0));
    }
    (h, m)
}

fn standardize(xs: &mut [f64], mean: f64, sd: f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let s = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    for x in xs.iter_mut() {
        *x = mean + (*x - m) / s * sd;
    }
}

/// 150 human/machine pairs: human mean 71.4 and sd 9.62 by construction,
/// machine-minus-human differences with mean -1.8 and sd 3.2653.
pub fn corpus_profile_pairs(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    loop {
        let mut h: Vec<f64> = (0..150).map(|_| z.sample(&mut rng)).collect();
        let mut d: Vec<f64> = (0..150).map(|_| z.sample(&mut rng)).collect();
        standardize(&mut h, 71.4, 9.62);
        standardize(&mut d, -1.8, 3.2653);
        let m: Vec<f64> = h.iter().zip(&d).map(|(x, e)| x + e).collect();
        if h.iter().chain(&m).all(|v| (0.0..=100.0).contains(v)) {
            return (h, m);
        }
    }
}
