use crate::numerics::sigmoid;

pub const P_CLAMP: f64 = 1e-7;

/// `-[w1·y·ln p + w0·(1-y)·ln(1-p)]` with `p` clamped to `[1e-7, 1-1e-7]`.
pub fn weighted_bce(p: f64, y: u8, w1: f64, w0: f64) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    if y == 1 {
        -w1 * p.ln()
    } else {
        -w0 * (1.0 - p).ln()
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Unclamped weighted cross-entropy evaluated from the logit. Equal to
/// [`weighted_bce`] wherever its clamp is inactive.
pub fn weighted_bce_logit(logit: f64, y: u8, w1: f64, w0: f64) -> f64 {
    if y == 1 {
        w1 * softplus(-logit)
    } else {
        w0 * softplus(logit)
    }
}

/// Derivative of [`weighted_bce_logit`]. Saturated wrong predictions keep a
/// restoring gradient.
pub fn weighted_bce_grad_logit(logit: f64, y: u8, w1: f64, w0: f64) -> f64 {
    let p = sigmoid(logit);
    if y == 1 {
        -w1 * (1.0 - p)
    } else {
        w0 * p
    }
}

/// Cohort-balancing weights `N / (2·N_c)`, returned as `(w_mutant, w_wild)`.
pub fn class_weights(n_mutant: usize, n_wild: usize) -> (f64, f64) {
    let total = (n_mutant + n_wild) as f64;
    let w = |c: usize| if c == 0 { 1.0 } else { total / (2.0 * c as f64) };
    (w(n_mutant), w(n_wild))
}
