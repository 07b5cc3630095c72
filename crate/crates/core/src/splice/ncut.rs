//! Two-way normalized cut of the patch affinity graph.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

/// A split whose [`cut_contrast`] exceeds this is treated as no cut at all.
/// Unlike the ncut objective itself, the ratio does not drift towards 1 as
/// the graph grows: clean two-block graphs sit near 0.5 at any size, while
/// homogeneous images land around 0.95 and above.
pub const NO_CUT_CONTRAST: f64 = 0.9;

/// Outcome of partitioning the patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// `true` for patches in the smaller (spliced) region. All `false` when
    /// no confident cut exists.
    pub spliced: Vec<bool>,
    /// Normalized-cut objective of the best split (`None` for P < 2).
    pub ncut: Option<f64>,
}

/// Nonnegative edge weights `(A + 1) / 2`.
pub fn shifted_weights(a: ArrayView2<f64>) -> Array2<f64> {
    a.mapv(|v| 0.5 * (v + 1.0))
}

/// `cut(S, S̄)/assoc(S) + cut(S, S̄)/assoc(S̄)`; infinite for an empty side.
pub fn ncut_value(w: ArrayView2<f64>, in_s: &[bool]) -> f64 {
    let n = in_s.len();
    let (mut cut, mut assoc_s, mut assoc_t) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let v = w[[i, j]];
            if in_s[i] {
                assoc_s += v;
            } else {
                assoc_t += v;
            }
            if in_s[i] && !in_s[j] {
                cut += v;
            }
        }
    }
    if assoc_s <= 0.0 || assoc_t <= 0.0 || !in_s.iter().any(|&b| b) || in_s.iter().all(|&b| b) {
        return f64::INFINITY;
    }
    cut / assoc_s + cut / assoc_t
}

fn components(w: ArrayView2<f64>) -> Vec<usize> {
    let n = w.nrows();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if comp[j] == usize::MAX && w[[i, j]] > 1e-12 {
                    comp[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Second-smallest generalized eigenvector of `(D − W) y = λ D y`, with the
/// first non-negligible coordinate made positive.
pub fn fiedler_vector(w: ArrayView2<f64>) -> Vec<f64> {
    let n = w.nrows();
    let d: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let inv_sqrt: Vec<f64> = d
        .iter()
        .map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 })
        .collect();
    let l = DMatrix::from_fn(n, n, |i, j| {
        let lap = if i == j { d[i] - w[[i, j]] } else { -w[[i, j]] };
        lap * inv_sqrt[i] * inv_sqrt[j]
    });
    let eig = SymmetricEigen::new(l);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let k = order[1.min(n - 1)];
    let mut y: Vec<f64> = (0..n)
        .map(|i| eig.eigenvectors[(i, k)] * inv_sqrt[i])
        .collect();
    if let Some(first) = y.iter().find(|v| v.abs() > 1e-8) {
        if *first < 0.0 {
            y.iter_mut().for_each(|v| *v = -*v);
        }
    }
    y
}

/// Best threshold split of `y` by the normalized-cut objective, swept in
/// O(P²). Returns the membership of the low side and its objective.
pub fn best_threshold_split(w: ArrayView2<f64>, y: &[f64]) -> Option<(Vec<bool>, f64)> {
    let n = y.len();
    if n < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let d: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let total: f64 = d.iter().sum();
    let mut in_s = vec![false; n];
    let (mut cut, mut assoc_s) = (0.0, 0.0);
    let mut best: Option<(usize, f64)> = None;
    for (pos, &k) in order.iter().enumerate().take(n - 1) {
        // Moving k into S: edges to S stop being cut, edges to S̄ start.
        let mut to_s = 0.0;
        let mut to_t = 0.0;
        for j in 0..n {
            if j == k {
                continue;
            }
            if in_s[j] {
                to_s += w[[k, j]];
            } else {
                to_t += w[[k, j]];
            }
        }
        cut += to_t - to_s;
        in_s[k] = true;
        assoc_s += d[k];
        // Only split between distinct values of y.
        if y[order[pos + 1]] - y[k] <= 1e-12 * (1.0 + y[k].abs()) {
            continue;
        }
        let assoc_t = total - assoc_s;
        if assoc_s <= 0.0 || assoc_t <= 0.0 {
            continue;
        }
        let v = cut / assoc_s + cut / assoc_t;
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((pos, v));
        }
    }
    let (pos, v) = best?;
    let mut side = vec![false; n];
    for &k in &order[..=pos] {
        side[k] = true;
    }
    Some((side, v))
}

/// Labels the smaller side as spliced; on equal sizes the side without
/// patch 0 is spliced.
fn smaller_side(side: Vec<bool>) -> Vec<bool> {
    let n = side.len();
    let k = side.iter().filter(|&&b| b).count();
    if 2 * k < n || (2 * k == n && !side[0]) {
        side
    } else {
        side.into_iter().map(|b| !b).collect()
    }
}

/// Mean weight across the split over the smaller of the two mean
/// within-side weights; 1 means the sides are indistinguishable.
pub fn cut_contrast(w: ArrayView2<f64>, in_s: &[bool]) -> f64 {
    let n = in_s.len();
    let mut sum = [0.0f64; 3];
    let mut cnt = [0usize; 3];
    for i in 0..n {
        for j in 0..n {
            let k = match (in_s[i], in_s[j]) {
                (a, b) if a != b => 0,
                (true, _) => 1,
                (false, _) => 2,
            };
            sum[k] += w[[i, j]];
            cnt[k] += 1;
        }
    }
    if cnt.contains(&0) {
        return f64::INFINITY;
    }
    let within = (sum[1] / cnt[1] as f64).min(sum[2] / cnt[2] as f64);
    if within <= 0.0 {
        return f64::INFINITY;
    }
    (sum[0] / cnt[0] as f64) / within
}

/// Normalized-cut partition of the patch graph with weights `(A + 1)/2`.
///
/// A disconnected graph is split along its components (the largest is
/// dominant, all others spliced). Otherwise the Fiedler vector is swept
/// for the best split; a split whose [`cut_contrast`] exceeds
/// [`NO_CUT_CONTRAST`] yields an empty splice.
pub fn ncut_partition(a: ArrayView2<f64>) -> Partition {
    let n = a.nrows();
    if n < 2 {
        return Partition {
            spliced: vec![false; n],
            ncut: None,
        };
    }
    let w = shifted_weights(a);
    let comp = components(w.view());
    let n_comp = comp.iter().max().map_or(0, |m| m + 1);
    if n_comp > 1 {
        let mut sizes = vec![0usize; n_comp];
        for &c in &comp {
            sizes[c] += 1;
        }
        let largest = (0..n_comp).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
        let side: Vec<bool> = comp.iter().map(|&c| c != largest).collect();
        return Partition {
            spliced: smaller_side(side),
            ncut: Some(0.0),
        };
    }
    let y = fiedler_vector(w.view());
    match best_threshold_split(w.view(), &y) {
        Some((side, v)) if cut_contrast(w.view(), &side) <= NO_CUT_CONTRAST => Partition {
            spliced: smaller_side(side),
            ncut: Some(v),
        },
        Some((_, v)) => Partition {
            spliced: vec![false; n],
            ncut: Some(v),
        },
        None => Partition {
            spliced: vec![false; n],
            ncut: None,
        },
    }
}
