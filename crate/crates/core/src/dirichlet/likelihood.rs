use super::{ConcentrationVector, LabelHistogram};
use crate::error::{Error, Result};
use crate::special::{digamma_unchecked, ln_gamma};

fn check_dims(hist: &LabelHistogram, alpha: &ConcentrationVector) -> Result<()> {
    if hist.num_classes() != alpha.len() {
        return Err(Error::shape(alpha.len(), hist.num_classes()));
    }
    Ok(())
}

/// Multinomial-Dirichlet log-likelihood without the multinomial coefficient:
/// `lnΓ(α0) − lnΓ(α0+V) + Σ_j [lnΓ(α_j+n_j) − lnΓ(α_j)]`.
pub fn md_log_likelihood(hist: &LabelHistogram, alpha: &ConcentrationVector) -> Result<f64> {
    check_dims(hist, alpha)?;
    Ok(log_likelihood_raw(hist.counts(), hist.total(), alpha.as_slice(), alpha.alpha0()))
}

/// Gradient of [`md_log_likelihood`] with respect to `α`.
pub fn md_log_likelihood_grad(hist: &LabelHistogram, alpha: &ConcentrationVector) -> Result<Vec<f64>> {
    check_dims(hist, alpha)?;
    let mut g = vec![0.0; alpha.len()];
    add_grad_raw(hist.counts(), hist.total(), alpha.as_slice(), alpha.alpha0(), &mut g);
    Ok(g)
}

/// Sum of log-likelihoods of independent histograms sharing one `α`.
pub fn pooled_log_likelihood(hists: &[LabelHistogram], alpha: &ConcentrationVector) -> Result<f64> {
    let mut total = 0.0;
    for h in hists {
        total += md_log_likelihood(h, alpha)?;
    }
    Ok(total)
}

pub fn pooled_log_likelihood_grad(hists: &[LabelHistogram], alpha: &ConcentrationVector) -> Result<Vec<f64>> {
    let mut g = vec![0.0; alpha.len()];
    for h in hists {
        check_dims(h, alpha)?;
        add_grad_raw(h.counts(), h.total(), alpha.as_slice(), alpha.alpha0(), &mut g);
    }
    Ok(g)
}

/// Below this count the Γ and ψ differences are summed term by term, which
/// stays accurate when `a` is huge and the two Γ values nearly cancel.
const DIRECT_SUM_MAX: u64 = 64;

/// `ln Γ(a + n) − ln Γ(a)`
fn ln_rising(a: f64, n: u64) -> f64 {
    if n <= DIRECT_SUM_MAX {
        (0..n).map(|k| (a + k as f64).ln()).sum()
    } else {
        ln_gamma(a + n as f64) - ln_gamma(a)
    }
}

/// `ψ(a + n) − ψ(a)`
fn digamma_rising(a: f64, n: u64) -> f64 {
    if n <= DIRECT_SUM_MAX {
        (0..n).map(|k| 1.0 / (a + k as f64)).sum()
    } else {
        digamma_unchecked(a + n as f64) - digamma_unchecked(a)
    }
}

pub(super) fn log_likelihood_raw(counts: &[u64], total: u64, alpha: &[f64], alpha0: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let mut l = -ln_rising(alpha0, total);
    for (&n, &a) in counts.iter().zip(alpha) {
        if n > 0 {
            l += ln_rising(a, n);
        }
    }
    l
}

pub(super) fn add_grad_raw(counts: &[u64], total: u64, alpha: &[f64], alpha0: f64, out: &mut [f64]) {
    if total == 0 {
        return;
    }
    let common = -digamma_rising(alpha0, total);
    for ((o, &n), &a) in out.iter_mut().zip(counts).zip(alpha) {
        *o += common;
        if n > 0 {
            *o += digamma_rising(a, n);
        }
    }
}
