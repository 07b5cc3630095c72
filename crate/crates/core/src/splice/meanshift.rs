//! Flat-kernel mean shift over affinity rows.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};

const MAX_ITERS: usize = 200;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Median pairwise distance between rows; falls back to the smallest
/// positive distance when more than half the pairs coincide, and to 0 when
/// every row is identical.
pub fn bandwidth(rows: ArrayView2<f64>) -> f64 {
    let data: Vec<Vec<f64>> = rows.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let n = data.len();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(dist(&data[i], &data[j]));
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    };
    if median > 1e-12 {
        median
    } else {
        d.into_iter().find(|&v| v > 1e-12).unwrap_or(0.0)
    }
}

/// Modes found by mean shift seeded at every row, with the number of
/// seeds that converged to each. Modes are numbered by their first seed.
#[derive(Debug, Clone)]
pub struct Modes {
    pub centers: Vec<Array1<f64>>,
    pub counts: Vec<usize>,
    /// Mode index reached from each seed.
    pub assignment: Vec<usize>,
}

impl Modes {
    /// The mode with the largest basin. Ties go to the center with the
    /// larger mean affinity, then to the mode found first.
    pub fn dominant(&self) -> usize {
        let key = |i: usize| (self.counts[i], self.centers[i].sum());
        let mut best = 0;
        for i in 1..self.counts.len() {
            let (c, s) = key(i);
            let (bc, bs) = key(best);
            if c > bc || (c == bc && s > bs + 1e-9) {
                best = i;
            }
        }
        best
    }
}

/// Runs flat-kernel mean shift (all points within `h`, inclusive, weigh
/// equally) from every row until each seed moves less than `1e-6·h`.
/// Converged points linked by steps shorter than `h/2` share a mode, whose
/// center is their mean.
pub fn mean_shift(rows: ArrayView2<f64>, h: f64) -> Modes {
    let n = rows.nrows();
    let data: Vec<Vec<f64>> = rows.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let mut converged: Vec<Vec<f64>> = Vec::with_capacity(n);
    for seed in &data {
        let mut x = seed.clone();
        for _ in 0..MAX_ITERS {
            let mut sum = vec![0.0; x.len()];
            let mut k = 0usize;
            for p in &data {
                if dist(p, &x) <= h * (1.0 + 1e-12) {
                    for (s, v) in sum.iter_mut().zip(p) {
                        *s += v;
                    }
                    k += 1;
                }
            }
            if k == 0 {
                break;
            }
            let next: Vec<f64> = sum.iter().map(|s| s / k as f64).collect();
            let moved = dist(&next, &x);
            x = next;
            if moved <= 1e-6 * h.max(1e-12) {
                break;
            }
        }
        converged.push(x);
    }
    // Single-linkage grouping at h/2 so the result does not depend on the
    // order in which seeds are visited.
    let mut group: Vec<usize> = (0..n).collect();
    fn root(g: &mut [usize], mut i: usize) -> usize {
        while g[i] != i {
            g[i] = g[g[i]];
            i = g[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if dist(&converged[i], &converged[j]) < 0.5 * h.max(1e-12) {
                let (a, b) = (root(&mut group, i), root(&mut group, j));
                group[a.max(b)] = a.min(b);
            }
        }
    }
    let mut centers: Vec<Array1<f64>> = Vec::new();
    let mut counts = Vec::new();
    let mut assignment = vec![0; n];
    let mut index = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut group, i);
        if index[r] == usize::MAX {
            index[r] = centers.len();
            centers.push(Array1::zeros(converged[i].len()));
            counts.push(0);
        }
        let m = index[r];
        centers[m] += &ArrayView1::from(&converged[i]);
        counts[m] += 1;
        assignment[i] = m;
    }
    for (c, &k) in centers.iter_mut().zip(&counts) {
        *c /= k as f64;
    }
    Modes {
        centers,
        counts,
        assignment,
    }
}

/// Per-row similarity to the dominant mode, min-max scaled to [0, 1].
/// Degenerate inputs (all rows identical, or a flat response) give 1.0.
pub fn mean_shift_response(a: ArrayView2<f64>) -> Vec<f64> {
    let n = a.nrows();
    if n == 0 {
        return Vec::new();
    }
    let h = bandwidth(a);
    if h <= 1e-12 {
        return vec![1.0; n];
    }
    let modes = mean_shift(a, h);
    let mode = &modes.centers[modes.dominant()];
    let raw: Vec<f64> = a.axis_iter(Axis(0)).map(|r| r.dot(mode)).collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 {
        return vec![1.0; n];
    }
    raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
}
