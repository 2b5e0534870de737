//! Input-convex core with hand-rolled exact derivatives.
//!
//! Architecture (Amos-style input-convex network): every layer sees the raw
//! input through an unconstrained skip matrix, while the path through the
//! previous hidden layer uses elementwise-nonnegative weights:
//!
//! ```text
//! a_1 = Wz_1 in + b_1                  z_1 = σ(a_1)
//! a_l = Wu_l z_{l-1} + Wz_l in + b_l   z_l = σ(a_l)     (l = 2..L-1)
//! v   = Wu_L z_{L-1} + Wz_L in + b_L                    (scalar, linear)
//! ```
//!
//! With softplus (convex, nondecreasing) activations and `Wu_l ≥ 0`
//! elementwise, `v` is jointly convex in the full input vector, hence convex
//! in the state for any fixed t. Convexity is enforced by projection: after
//! every optimizer step the `Wu` blocks are clamped to `≥ 0`.
//!
//! Derivative sweeps mirror `mlp.rs`; the only additions are the skip terms
//! (`in` feeds every layer, so input gradients accumulate `Wz_lᵀ ā_l` across
//! layers) and the nonnegative-block bookkeeping used by the projection.

use super::scalar::{sigmoid, sigmoid_deriv, softplus};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Icnn {
    widths: Vec<usize>,
    /// Offsets of `Wu_l` (layer 0 has none and stores `usize::MAX`).
    wu_off: Vec<usize>,
    wz_off: Vec<usize>,
    b_off: Vec<usize>,
    n_params: usize,
}

fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut s = 0.0;
        for (wi, xi) in row.iter().zip(x) {
            s += wi * xi;
        }
        *o += s;
    }
}

fn matvec_t_acc(w: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (yi, row) in y.iter().zip(w.chunks_exact(cols)) {
        if *yi != 0.0 {
            for (o, wi) in out.iter_mut().zip(row) {
                *o += yi * wi;
            }
        }
    }
}

fn outer_acc(acc: &mut [f64], y: &[f64], x: &[f64], c: f64) {
    let cols = x.len();
    for (yi, row) in y.iter().zip(acc.chunks_exact_mut(cols)) {
        let cy = c * yi;
        if cy != 0.0 {
            for (a, xj) in row.iter_mut().zip(x) {
                *a += cy * xj;
            }
        }
    }
}

impl Icnn {
    pub fn new(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        assert_eq!(*widths.last().unwrap(), 1, "output must be scalar");
        let din = widths[0];
        let mut wu_off = Vec::new();
        let mut wz_off = Vec::new();
        let mut b_off = Vec::new();
        let mut off = 0;
        for l in 1..widths.len() {
            if l == 1 {
                wu_off.push(usize::MAX);
            } else {
                wu_off.push(off);
                off += widths[l] * widths[l - 1];
            }
            wz_off.push(off);
            off += widths[l] * din;
            b_off.push(off);
            off += widths[l];
        }
        Icnn {
            widths: widths.to_vec(),
            wu_off,
            wz_off,
            b_off,
            n_params: off,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn wu<'p>(&self, p: &'p [f64], l: usize) -> &'p [f64] {
        &p[self.wu_off[l]..self.wu_off[l] + self.widths[l + 1] * self.widths[l]]
    }

    fn wz<'p>(&self, p: &'p [f64], l: usize) -> &'p [f64] {
        &p[self.wz_off[l]..self.wz_off[l] + self.widths[l + 1] * self.widths[0]]
    }

    fn b<'p>(&self, p: &'p [f64], l: usize) -> &'p [f64] {
        &p[self.b_off[l]..self.b_off[l] + self.widths[l + 1]]
    }

    /// Ranges of the nonnegative (propagated-path) weight blocks.
    pub fn nonneg_ranges(&self) -> Vec<std::ops::Range<usize>> {
        (1..self.layers())
            .map(|l| self.wu_off[l]..self.wu_off[l] + self.widths[l + 1] * self.widths[l])
            .collect()
    }

    /// `(range, fan_in)` of every weight/bias block, for initialization.
    pub fn block_ranges(&self) -> Vec<(std::ops::Range<usize>, usize)> {
        let din = self.widths[0];
        let mut out = Vec::new();
        for l in 0..self.layers() {
            let fan = if l == 0 { din } else { self.widths[l] + din };
            if l > 0 {
                out.push((
                    self.wu_off[l]..self.wu_off[l] + self.widths[l + 1] * self.widths[l],
                    fan,
                ));
            }
            out.push((
                self.wz_off[l]..self.wz_off[l] + self.widths[l + 1] * din,
                fan,
            ));
            out.push((self.b_off[l]..self.b_off[l] + self.widths[l + 1], fan));
        }
        out
    }

    fn forward_stack(&self, p: &[f64], input: &[f64]) -> (Vec<Vec<f64>>, f64) {
        let lcount = self.layers();
        let mut a_stack = Vec::with_capacity(lcount);
        let mut z: Vec<f64> = Vec::new();
        for l in 0..lcount {
            let mut a = self.b(p, l).to_vec();
            matvec_acc(self.wz(p, l), input, &mut a);
            if l > 0 {
                matvec_acc(self.wu(p, l), &z, &mut a);
            }
            if l + 1 < lcount {
                z = a.iter().map(|&ai| softplus(ai)).collect();
            } else {
                z = a.clone();
            }
            a_stack.push(a);
        }
        (a_stack, z[0])
    }

    pub fn value(&self, p: &[f64], input: &[f64]) -> f64 {
        self.forward_stack(p, input).1
    }

    pub fn value_and_input_grad(&self, p: &[f64], input: &[f64]) -> (f64, Vec<f64>) {
        let (a_stack, v) = self.forward_stack(p, input);
        let lcount = self.layers();
        let mut in_grad = vec![0.0; input.len()];
        let mut delta = vec![1.0];
        for l in (0..lcount).rev() {
            matvec_t_acc(self.wz(p, l), &delta, &mut in_grad);
            if l == 0 {
                break;
            }
            let mut carry = vec![0.0; self.widths[l]];
            matvec_t_acc(self.wu(p, l), &delta, &mut carry);
            for (c, ai) in carry.iter_mut().zip(&a_stack[l - 1]) {
                *c *= sigmoid(*ai);
            }
            delta = carry;
        }
        (v, in_grad)
    }

    pub fn value_grads_acc(
        &self,
        p: &[f64],
        input: &[f64],
        scale: f64,
        acc: &mut [f64],
    ) -> (f64, Vec<f64>) {
        debug_assert_eq!(acc.len(), self.n_params);
        let (a_stack, v) = self.forward_stack(p, input);
        let lcount = self.layers();
        let din = self.widths[0];
        let mut in_grad = vec![0.0; input.len()];
        let mut delta = vec![1.0];
        for l in (0..lcount).rev() {
            let width = self.widths[l + 1];
            outer_acc(
                &mut acc[self.wz_off[l]..self.wz_off[l] + width * din],
                &delta,
                input,
                scale,
            );
            for (a, d) in acc[self.b_off[l]..self.b_off[l] + width].iter_mut().zip(&delta) {
                *a += scale * d;
            }
            matvec_t_acc(self.wz(p, l), &delta, &mut in_grad);
            if l == 0 {
                break;
            }
            let z_below: Vec<f64> = a_stack[l - 1].iter().map(|&ai| softplus(ai)).collect();
            outer_acc(
                &mut acc[self.wu_off[l]..self.wu_off[l] + width * self.widths[l]],
                &delta,
                &z_below,
                scale,
            );
            let mut carry = vec![0.0; self.widths[l]];
            matvec_t_acc(self.wu(p, l), &delta, &mut carry);
            for (c, ai) in carry.iter_mut().zip(&a_stack[l - 1]) {
                *c *= sigmoid(*ai);
            }
            delta = carry;
        }
        (v, in_grad)
    }

    /// Fused forward-over-reverse sweep; see `mlp.rs` for the recursion. The
    /// skip connections add `Wz_lᵀ ā_l` to the input adjoint at every layer
    /// and a `ǧ_l dirᵀ` block to the `Wz_l` parameter adjoint (the tangent
    /// pre-activation is `ȧ_l = Wu_l ż_{l-1} + Wz_l dir`).
    pub fn sovjp_acc(
        &self,
        p: &[f64],
        input: &[f64],
        dir: &[f64],
        coeff: f64,
        acc: &mut [f64],
    ) -> (f64, f64, Vec<f64>, Vec<f64>) {
        debug_assert_eq!(dir.len(), input.len());
        let lcount = self.layers();
        let din = self.widths[0];

        let mut a_stack = Vec::with_capacity(lcount);
        let mut ad_stack = Vec::with_capacity(lcount);
        let mut z: Vec<f64> = Vec::new();
        let mut zd: Vec<f64> = Vec::new();
        for l in 0..lcount {
            let mut a = self.b(p, l).to_vec();
            matvec_acc(self.wz(p, l), input, &mut a);
            let mut ad = vec![0.0; self.widths[l + 1]];
            matvec_acc(self.wz(p, l), dir, &mut ad);
            if l > 0 {
                matvec_acc(self.wu(p, l), &z, &mut a);
                matvec_acc(self.wu(p, l), &zd, &mut ad);
            }
            if l + 1 < lcount {
                z = a.iter().map(|&ai| softplus(ai)).collect();
                zd = ad
                    .iter()
                    .zip(&a)
                    .map(|(&adi, &ai)| sigmoid(ai) * adi)
                    .collect();
            } else {
                z = a.clone();
                zd = ad.clone();
            }
            a_stack.push(a);
            ad_stack.push(ad);
        }
        let v = z[0];
        let q = zd[0];

        let mut h = vec![0.0];
        let mut g = vec![1.0];
        let mut h_in = vec![0.0; input.len()];
        let mut grad_in = vec![0.0; input.len()];
        for l in (0..lcount).rev() {
            let is_last = l + 1 == lcount;
            let width = self.widths[l + 1];
            let mut abar = vec![0.0; width];
            let mut gbar = vec![0.0; width];
            for i in 0..width {
                if is_last {
                    abar[i] = h[i];
                    gbar[i] = g[i];
                } else {
                    let sp = sigmoid(a_stack[l][i]);
                    let spp = sigmoid_deriv(a_stack[l][i]);
                    abar[i] = h[i] * sp + g[i] * spp * ad_stack[l][i];
                    gbar[i] = g[i] * sp;
                }
            }
            if coeff != 0.0 {
                let wz = &mut acc[self.wz_off[l]..self.wz_off[l] + width * din];
                outer_acc(wz, &abar, input, coeff);
                outer_acc(wz, &gbar, dir, coeff);
                for (a, d) in acc[self.b_off[l]..self.b_off[l] + width].iter_mut().zip(&abar) {
                    *a += coeff * d;
                }
            }
            matvec_t_acc(self.wz(p, l), &abar, &mut h_in);
            matvec_t_acc(self.wz(p, l), &gbar, &mut grad_in);
            if l == 0 {
                break;
            }
            if coeff != 0.0 {
                let z_below: Vec<f64> = a_stack[l - 1].iter().map(|&ai| softplus(ai)).collect();
                let zd_below: Vec<f64> = ad_stack[l - 1]
                    .iter()
                    .zip(&a_stack[l - 1])
                    .map(|(&adi, &ai)| sigmoid(ai) * adi)
                    .collect();
                let wu = &mut acc[self.wu_off[l]..self.wu_off[l] + width * self.widths[l]];
                outer_acc(wu, &abar, &z_below, coeff);
                outer_acc(wu, &gbar, &zd_below, coeff);
            }
            let mut h_dn = vec![0.0; self.widths[l]];
            let mut g_dn = vec![0.0; self.widths[l]];
            matvec_t_acc(self.wu(p, l), &abar, &mut h_dn);
            matvec_t_acc(self.wu(p, l), &gbar, &mut g_dn);
            h = h_dn;
            g = g_dn;
        }
        (v, q, h_in, grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff;

    fn test_params(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| 0.29 * ((i as f64) * 0.53).sin() + 0.07 * ((i as f64) * 1.7).cos())
            .collect()
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let net = Icnn::new(&[3, 4, 4, 1]);
        let p = test_params(net.param_count());
        let input = [0.8, -0.5, 0.3];
        let (_, grad) = net.value_and_input_grad(&p, &input);
        let fd = ndiff::central_diff_grad(|x| net.value(&p, x), &input, ndiff::DEFAULT_STEP);
        let (err, at) = ndiff::max_rel_err(&grad, &fd, 1e-8);
        assert!(err < 1e-7, "input grad rel err {err} at {at}");
    }

    #[test]
    fn param_gradient_matches_central_differences() {
        let net = Icnn::new(&[3, 4, 4, 1]);
        let p = test_params(net.param_count());
        let input = [0.8, -0.5, 0.3];
        let mut acc = vec![0.0; net.param_count()];
        net.value_grads_acc(&p, &input, 1.0, &mut acc);
        let fd = ndiff::central_diff_grad(|q| net.value(q, &input), &p, ndiff::DEFAULT_STEP);
        let (err, at) = ndiff::max_rel_err(&acc, &fd, 1e-8);
        assert!(err < 1e-7, "param grad rel err {err} at {at}");
    }

    #[test]
    fn fused_sweep_matches_finite_differences_of_the_gradient() {
        let net = Icnn::new(&[4, 5, 3, 1]);
        let p = test_params(net.param_count());
        let input = [0.2, -0.9, 0.5, 0.1];
        let dir = [-0.4, 1.1, 0.7, 0.9];
        let mut hq = vec![0.0; net.param_count()];
        let (v, q, h_in, grad_in) = net.sovjp_acc(&p, &input, &dir, 1.0, &mut hq);

        let (v1, g1) = net.value_and_input_grad(&p, &input);
        assert_eq!(v, v1);
        let q_ref: f64 = g1.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!((q - q_ref).abs() < 1e-12 * (1.0 + q_ref.abs()));
        let (err, _) = ndiff::max_rel_err(&grad_in, &g1, 1e-10);
        assert!(err < 1e-12, "grad_in from fused sweep differs: {err}");

        let grad_dot = |pp: &[f64], xx: &[f64]| {
            let (_, g) = net.value_and_input_grad(pp, xx);
            g.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>()
        };
        let fd_h = ndiff::central_diff_grad(|x| grad_dot(&p, x), &input, ndiff::DEFAULT_STEP);
        let (err, at) = ndiff::max_rel_err(&h_in, &fd_h, 1e-8);
        assert!(err < 1e-6, "h_in rel err {err} at {at}");

        let fd_hq = ndiff::central_diff_grad(|pp| grad_dot(pp, &input), &p, ndiff::DEFAULT_STEP);
        let (err, at) = ndiff::max_rel_err(&hq, &fd_hq, 1e-8);
        assert!(err < 1e-6, "h_theta rel err {err} at {at}");
    }

    #[test]
    fn nonneg_ranges_cover_exactly_the_propagated_path() {
        let net = Icnn::new(&[3, 4, 4, 1]);
        // Layer 2: Wu (4x4); layer 3: Wu (1x4). Total nonneg weights: 20.
        let total: usize = net.nonneg_ranges().iter().map(|r| r.len()).sum();
        assert_eq!(total, 20);
        // Layer 1 has no Wu block.
        assert_eq!(net.nonneg_ranges().len(), 2);
    }

    #[test]
    fn convex_along_random_lines_when_projected() {
        let net = Icnn::new(&[3, 4, 4, 1]);
        let mut p = test_params(net.param_count());
        for r in net.nonneg_ranges() {
            for w in &mut p[r] {
                *w = w.max(0.0);
            }
        }
        // Midpoint convexity on a deterministic family of input pairs.
        for k in 0..50 {
            let t = k as f64 * 0.37;
            let a = [t.sin(), (2.0 * t).cos(), 0.4 * t.sin()];
            let b = [(t + 1.0).cos(), (0.5 * t).sin(), -0.3 * (t).cos()];
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let va = net.value(&p, &a);
            let vb = net.value(&p, &b);
            let vm = net.value(&p, &mid);
            assert!(
                vm <= 0.5 * (va + vb) + 1e-12,
                "midpoint convexity violated: {vm} vs {}",
                0.5 * (va + vb)
            );
        }
    }
}
