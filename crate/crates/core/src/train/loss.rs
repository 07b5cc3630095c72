//! Temperature-scaled InfoNCE over an in-batch similarity matrix.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

fn check(sim: ArrayView2<f64>, tau: f64) -> Result<usize> {
    let (n, m) = sim.dim();
    if n != m || n < 2 {
        return Err(Error::invalid(format!(
            "similarity matrix must be square with N >= 2, got {n}x{m}"
        )));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid("temperature must be positive"));
    }
    if sim.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("similarity matrix"));
    }
    Ok(n)
}

/// Row softmax of `sim / tau` with max subtraction, plus the per-row
/// log-sum-exp.
fn row_softmax(sim: ArrayView2<f64>, tau: f64) -> (Array2<f64>, Vec<f64>) {
    let mut p = sim.mapv(|v| v / tau);
    let mut lse = Vec::with_capacity(p.nrows());
    for mut row in p.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
        lse.push(m + s.ln());
    }
    (p, lse)
}

/// Mean over rows of `-log softmax(sim[i] / tau)[i]`: each patch picks out
/// its own metadata among the batch.
pub fn info_nce_vm(sim: ArrayView2<f64>, tau: f64) -> Result<f64> {
    let n = check(sim, tau)?;
    let (_, lse) = row_softmax(sim, tau);
    Ok((0..n).map(|i| lse[i] - sim[[i, i]] / tau).sum::<f64>() / n as f64)
}

/// Symmetric loss: patch→metadata plus metadata→patch.
pub fn combined_loss(sim: ArrayView2<f64>, tau: f64) -> Result<f64> {
    Ok(info_nce_vm(sim, tau)? + info_nce_vm(sim.t(), tau)?)
}

/// [`combined_loss`] and its gradient with respect to every entry of `sim`.
pub fn combined_loss_grad(sim: ArrayView2<f64>, tau: f64) -> Result<(f64, Array2<f64>)> {
    let n = check(sim, tau)?;
    let (pr, lse_r) = row_softmax(sim, tau);
    let (pc, lse_c) = row_softmax(sim.t(), tau);
    let mut loss = 0.0;
    for i in 0..n {
        loss += lse_r[i] + lse_c[i] - 2.0 * sim[[i, i]] / tau;
    }
    loss /= n as f64;
    let scale = 1.0 / (n as f64 * tau);
    let mut grad = &pr + &pc.t();
    for i in 0..n {
        grad[[i, i]] -= 2.0;
    }
    grad.mapv_inplace(|g| g * scale);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sim(n: usize, seed: u64) -> Array2<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, n), |_| r.random_range(-1.0..1.0))
    }

    /// Plain loops, no max subtraction.
    fn naive(sim: &Array2<f64>, tau: f64) -> f64 {
        let n = sim.nrows();
        let mut total = 0.0;
        for i in 0..n {
            let mut denom = 0.0;
            for j in 0..n {
                denom += (sim[[i, j]] / tau).exp();
            }
            total += -((sim[[i, i]] / tau).exp() / denom).ln();
        }
        total / n as f64
    }

    #[test]
    fn uniform_two_by_two_is_ln2() {
        assert_abs_diff_eq!(
            info_nce_vm(Array2::from_elem((2, 2), 0.3).view(), 0.07).unwrap(),
            2f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn separated_pair() {
        let sim = array![[10.0, -10.0], [-10.0, 10.0]];
        let got = info_nce_vm(sim.view(), 1.0).unwrap();
        let want = (-20f64).exp().ln_1p();
        assert!(
            (got - want).abs() < 1e-15 && (got - 2.061e-9).abs() < 1e-12,
            "{got}"
        );
    }

    #[test]
    fn matches_scalar_oracle() {
        let sim = random_sim(3, 5);
        assert_abs_diff_eq!(
            info_nce_vm(sim.view(), 0.07).unwrap(),
            naive(&sim, 0.07),
            epsilon = 1e-10
        );
        let both = combined_loss(sim.view(), 0.07).unwrap();
        assert_abs_diff_eq!(
            both,
            naive(&sim, 0.07) + naive(&sim.t().to_owned(), 0.07),
            epsilon = 1e-10
        );
    }

    #[test]
    fn symmetric_sim_doubles() {
        let a = random_sim(5, 1);
        let sym = &a + &a.t();
        let one = info_nce_vm(sym.view(), 0.5).unwrap();
        assert_eq!(combined_loss(sym.view(), 0.5).unwrap(), 2.0 * one);
        assert_abs_diff_eq!(
            combined_loss(Array2::zeros((4, 4)).view(), 0.07).unwrap(),
            2.0 * 4f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_bad_input() {
        let mut sim = Array2::zeros((3, 3));
        sim[[1, 2]] = f64::NAN;
        assert!(matches!(
            info_nce_vm(sim.view(), 0.07),
            Err(Error::NonFinite(_))
        ));
        assert!(info_nce_vm(Array2::zeros((1, 1)).view(), 0.07).is_err());
        assert!(info_nce_vm(Array2::zeros((2, 2)).view(), 0.0).is_err());
        assert!(info_nce_vm(Array2::zeros((2, 3)).view(), 1.0).is_err());
    }

    #[test]
    fn no_overflow_at_small_tau() {
        let sim = random_sim(6, 2).mapv(|v| v * 50.0);
        assert!(combined_loss(sim.view(), 1e-3).unwrap().is_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..4 {
            let sim = random_sim(8, seed);
            let tau = 0.3;
            let (loss, grad) = combined_loss_grad(sim.view(), tau).unwrap();
            assert_abs_diff_eq!(
                loss,
                combined_loss(sim.view(), tau).unwrap(),
                epsilon = 1e-12
            );
            let h = 1e-4;
            for i in 0..8 {
                for j in 0..8 {
                    let mut p = sim.clone();
                    p[[i, j]] += h;
                    let mut m = sim.clone();
                    m[[i, j]] -= h;
                    let fd = (combined_loss(p.view(), tau).unwrap()
                        - combined_loss(m.view(), tau).unwrap())
                        / (2.0 * h);
                    let g = grad[[i, j]];
                    assert!(
                        (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8) < 1e-5,
                        "({i},{j}) fd {fd} an {g}"
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn constant_matrix_gives_two_ln_n(n in 2usize..70, c in -1.0f64..1.0, tau in 0.01f64..2.0) {
            let l = combined_loss(Array2::from_elem((n, n), c).view(), tau).unwrap();
            prop_assert!((l - 2.0 * (n as f64).ln()).abs() < 1e-9);
        }

        #[test]
        fn nonnegative_and_permutation_equivariant(seed in 0u64..1000, n in 2usize..9) {
            let sim = random_sim(n, seed);
            let l = combined_loss(sim.view(), 0.07).unwrap();
            prop_assert!(l >= 0.0);
            let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(&mut perm[..], &mut r);
            let permuted = Array2::from_shape_fn((n, n), |(i, j)| sim[[perm[i], perm[j]]]);
            prop_assert!((combined_loss(permuted.view(), 0.07).unwrap() - l).abs() < 1e-10);
        }
    }
}
