//! Negative-sampling logistic objective shared by training, inference and
//! the gradient checker.
//!
//! For an input vector `h`, a positive target `w` and negatives `n_k` the
//! per-example loss is
//!
//! ```text
//! L = -ln σ(h·o_w) - Σ_k ln σ(-h·o_{n_k})
//! ```
//!
//! where `o_*` are rows of the output matrix.

use num_traits::Float;

pub fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `-ln σ(x)`, stable for large |x|.
pub fn neg_log_sigmoid<F: Float>(x: F) -> F {
    // softplus(-x)
    let z = -x;
    z.max(F::zero()) + (-z.abs()).exp().ln_1p()
}

pub fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn axpy<F: Float>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

fn targets(target: usize, negatives: &[usize]) -> impl Iterator<Item = (usize, bool)> + '_ {
    let negs = negatives.iter().filter(move |&&n| n != target).map(|&n| (n, false));
    std::iter::once((target, true)).chain(negs)
}

fn pair_loss<F: Float>(f: F, label: bool) -> (F, F) {
    if label {
        (neg_log_sigmoid(f), F::one())
    } else {
        (neg_log_sigmoid(-f), F::zero())
    }
}

/// One stochastic step of the negative-sampling objective.
///
/// `neu1e` receives `-lr · ∂L/∂h`; the caller distributes it to whichever
/// input rows produced `h`. Each touched output row moves by `-lr · ∂L/∂o`.
/// Negatives equal to the target are skipped. Returns the loss at the
/// starting point.
pub fn ns_step<F: Float>(
    h: &[F],
    out: &mut [F],
    dim: usize,
    target: usize,
    negatives: &[usize],
    lr: F,
    neu1e: &mut [F],
) -> F {
    neu1e.iter_mut().for_each(|v| *v = F::zero());
    let mut loss = F::zero();
    for (word, label) in targets(target, negatives) {
        let row = &mut out[word * dim..(word + 1) * dim];
        let f = dot(h, row);
        let (l, y) = pair_loss(f, label);
        loss = loss + l;
        let g = (y - sigmoid(f)) * lr;
        axpy(g, row, neu1e);
        axpy(g, h, row);
    }
    loss
}

/// Same as [`ns_step`] with the output matrix frozen.
pub fn ns_step_frozen<F: Float>(
    h: &[F],
    out: &[F],
    dim: usize,
    target: usize,
    negatives: &[usize],
    lr: F,
    neu1e: &mut [F],
) -> F {
    neu1e.iter_mut().for_each(|v| *v = F::zero());
    let mut loss = F::zero();
    for (word, label) in targets(target, negatives) {
        let row = &out[word * dim..(word + 1) * dim];
        let f = dot(h, row);
        let (l, y) = pair_loss(f, label);
        loss = loss + l;
        axpy((y - sigmoid(f)) * lr, row, neu1e);
    }
    loss
}
