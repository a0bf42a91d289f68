//! Batch-means error bars and small regression helpers.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error from the spread of batch means; NaN with fewer than two batches.
    pub stderr: f64,
    pub batches: usize,
}

impl Estimate {
    /// `|mean - target| ≤ sigmas · stderr`.
    pub fn within(&self, target: f64, sigmas: f64) -> bool {
        (self.mean - target).abs() <= sigmas * self.stderr
    }
}

/// Mean and standard error of independent values.
pub fn mean_and_stderr(values: &[f64]) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate {
            mean: f64::NAN,
            stderr: f64::NAN,
            batches: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        f64::NAN
    };
    Estimate {
        mean,
        stderr,
        batches: n,
    }
}

/// Streaming batch means of a scalar time series. Incomplete trailing
/// batches are ignored.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    batch_len: usize,
    sum: f64,
    count: usize,
    means: Vec<f64>,
}

impl BatchMeans {
    pub fn new(batch_len: usize) -> Self {
        Self {
            batch_len: batch_len.max(1),
            sum: 0.0,
            count: 0,
            means: Vec::new(),
        }
    }

    pub fn push(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
        if self.count == self.batch_len {
            self.means.push(self.sum / self.count as f64);
            self.sum = 0.0;
            self.count = 0;
        }
    }

    pub fn batch_means(&self) -> &[f64] {
        &self.means
    }

    /// Appends the completed batches of `other` (replica merge).
    pub fn merge(&mut self, other: &BatchMeans) {
        self.means.extend_from_slice(&other.means);
    }

    pub fn estimate(&self) -> Estimate {
        mean_and_stderr(&self.means)
    }
}

/// Batch means of a fixed-length vector observable.
#[derive(Debug, Clone)]
pub struct VecBatchMeans {
    batch_len: usize,
    sum: Vec<f64>,
    count: usize,
    means: Vec<Vec<f64>>,
}

impl VecBatchMeans {
    pub fn new(dim: usize, batch_len: usize) -> Self {
        Self {
            batch_len: batch_len.max(1),
            sum: vec![0.0; dim],
            count: 0,
            means: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    pub fn push_with(&mut self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.sum);
        self.count += 1;
        if self.count == self.batch_len {
            let inv = 1.0 / self.count as f64;
            self.means.push(self.sum.iter().map(|s| s * inv).collect());
            self.sum.iter_mut().for_each(|s| *s = 0.0);
            self.count = 0;
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.push_with(|sum| sum.iter_mut().zip(x).for_each(|(s, v)| *s += v));
    }

    pub fn merge(&mut self, other: &VecBatchMeans) {
        self.means.extend(other.means.iter().cloned());
    }

    pub fn batches(&self) -> usize {
        self.means.len()
    }

    pub fn batch_means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn estimate(&self, component: usize) -> Estimate {
        let col: Vec<f64> = self.means.iter().map(|m| m[component]).collect();
        mean_and_stderr(&col)
    }

    pub fn estimates(&self) -> Vec<Estimate> {
        (0..self.dim()).map(|c| self.estimate(c)).collect()
    }
}

/// Jackknife estimate of a smooth function of the batch-mean vector.
pub fn jackknife(batches: &[Vec<f64>], f: impl Fn(&[f64]) -> f64) -> Estimate {
    let n = batches.len();
    if n == 0 {
        return mean_and_stderr(&[]);
    }
    let dim = batches[0].len();
    let total: Vec<f64> = (0..dim)
        .map(|c| batches.iter().map(|b| b[c]).sum::<f64>())
        .collect();
    let full: Vec<f64> = total.iter().map(|t| t / n as f64).collect();
    let mean = f(&full);
    if n < 2 {
        return Estimate {
            mean,
            stderr: f64::NAN,
            batches: n,
        };
    }
    let leave: Vec<f64> = batches
        .iter()
        .map(|b| {
            let v: Vec<f64> = total
                .iter()
                .zip(b)
                .map(|(t, x)| (t - x) / (n - 1) as f64)
                .collect();
            f(&v)
        })
        .collect();
    let lm = leave.iter().sum::<f64>() / n as f64;
    let var = leave.iter().map(|v| (v - lm).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    Estimate {
        mean,
        stderr: var.sqrt(),
        batches: n,
    }
}

/// Least-squares line `y = intercept + slope · x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if x.len() > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    LineFit {
        slope,
        intercept,
        slope_stderr,
    }
}

/// Slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> LineFit {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_regression() {
        // closed form for x = (-1, 0, 1): slope = (y3 - y1)/2
        let fit = linear_fit(&[-1.0, 0.0, 1.0], &[1.0, 2.5, 2.0]);
        assert!((fit.slope - 0.5).abs() < 1e-15);
        assert!((fit.intercept - 5.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_law_slope() {
        let n = [8.0, 16.0, 32.0];
        let y: Vec<f64> = n.iter().map(|v| 3.0 / v).collect();
        assert!((log_log_slope(&n, &y).slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn batches_drop_partial_tail() {
        let mut b = BatchMeans::new(3);
        for x in 0..8 {
            b.push(x as f64);
        }
        assert_eq!(b.batch_means(), &[1.0, 4.0]);
        let e = b.estimate();
        assert_eq!(e.mean, 2.5);
        assert!((e.stderr - 1.5).abs() < 1e-12);
    }

    #[test]
    fn stderr_shrinks_like_root_n() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut se = vec![];
        for n in [1000usize, 4000] {
            let mut b = BatchMeans::new(10);
            for _ in 0..n * 10 {
                let x: f64 = StandardNormal.sample(&mut rng);
                b.push(x);
            }
            se.push(b.estimate().stderr);
        }
        let ratio = se[0] / se[1];
        assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
    }

    #[test]
    fn jackknife_of_mean_matches_plain_stderr() {
        let batches: Vec<Vec<f64>> = [1.0, 4.0, 2.0, 8.0, 5.0].iter().map(|&v| vec![v]).collect();
        let jk = jackknife(&batches, |m| m[0]);
        let plain = mean_and_stderr(&[1.0, 4.0, 2.0, 8.0, 5.0]);
        assert!((jk.mean - plain.mean).abs() < 1e-14);
        assert!((jk.stderr - plain.stderr).abs() < 1e-14);
    }
}
