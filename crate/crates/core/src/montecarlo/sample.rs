use rand::Rng;

use crate::system::SojournDistribution;

/// One holding time by inversion of the truncated CDF; always in `(0, T]`.
pub fn sample_sojourn<R: Rng + ?Sized>(d: &SojournDistribution, rng: &mut R) -> f64 {
    // 1 - U lies in (0, 1], which the quantile maps into (0, T].
    let u = 1.0 - rng.random::<f64>();
    d.quantile(u)
}

/// Two-sided Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}
