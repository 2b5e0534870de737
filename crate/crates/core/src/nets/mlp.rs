//! Plain fully-connected core with hand-rolled exact derivatives.
//!
//! The network is the standard recursion (softplus hidden layers, linear
//! scalar output):
//!
//! ```text
//! z_0 = input                                  (input = [x; t])
//! a_l = W_l z_{l-1} + b_l,   z_l = σ(a_l)      (l = 1..L-1)
//! v   = W_L z_{L-1} + b_L                      (scalar)
//! ```
//!
//! Besides the usual forward/reverse passes, this module implements a fused
//! forward-over-reverse sweep for the directional second-order quantities
//! needed by the discrete adjoint: given a direction `w` it produces
//!
//! ```text
//! q      = ∇_in v · w            (tangent output)
//! h_in   = ∂q/∂in = H w          (Hessian-vector product)
//! ∂q/∂θ                          (accumulated into a caller buffer)
//! ```
//!
//! The tangent recursion is `ȧ_l = W_l ż_{l-1}`, `ż_l = σ'(a_l) ⊙ ȧ_l`, and
//! the reverse sweep over the joint (primal, tangent) graph carries two
//! adjoint chains per layer: `h_l = ∂q/∂z_l` and `g_l = ∂q/∂ż_l`. Per layer:
//!
//! ```text
//! ā_l = h_l ⊙ σ'(a_l) + g_l ⊙ σ''(a_l) ⊙ ȧ_l
//! ǧ_l = g_l ⊙ σ'(a_l)
//! ∂q/∂W_l += ā_l z_{l-1}ᵀ + ǧ_l ż_{l-1}ᵀ,   ∂q/∂b_l += ā_l
//! h_{l-1} = W_lᵀ ā_l,   g_{l-1} = W_lᵀ ǧ_l
//! ```
//!
//! A useful identity that the tests rely on: `g_0 = ∂q/∂w = ∇_in v`, so the
//! fused sweep also yields the exact first-order input gradient.

use super::scalar::{sigmoid, sigmoid_deriv, softplus};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    widths: Vec<usize>,
    w_off: Vec<usize>,
    b_off: Vec<usize>,
    n_params: usize,
}

/// `out[i] += Σ_j w[i*cols + j] x[j]` for each of `rows` rows.
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

/// `out[j] += Σ_i w[i*cols + j] y[i]` (transposed matvec, row-major `w`).
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

/// `acc[i*cols + j] += c * y[i] * x[j]` (scaled outer product).
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

impl Mlp {
    pub fn new(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        assert_eq!(*widths.last().unwrap(), 1, "output must be scalar");
        let mut w_off = Vec::new();
        let mut b_off = Vec::new();
        let mut off = 0;
        for l in 1..widths.len() {
            w_off.push(off);
            off += widths[l] * widths[l - 1];
            b_off.push(off);
            off += widths[l];
        }
        Mlp {
            widths: widths.to_vec(),
            w_off,
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

    fn w<'p>(&self, p: &'p [f64], l: usize) -> &'p [f64] {
        &p[self.w_off[l]..self.w_off[l] + self.widths[l + 1] * self.widths[l]]
    }

    fn b<'p>(&self, p: &'p [f64], l: usize) -> &'p [f64] {
        &p[self.b_off[l]..self.b_off[l] + self.widths[l + 1]]
    }

    /// Per-layer weight ranges in the flat vector, with their fan-in, for
    /// initialization: `(weight range, bias range, fan_in)`.
    pub fn layer_ranges(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>, usize)> {
        (0..self.layers())
            .map(|l| {
                let nw = self.widths[l + 1] * self.widths[l];
                (
                    self.w_off[l]..self.w_off[l] + nw,
                    self.b_off[l]..self.b_off[l] + self.widths[l + 1],
                    self.widths[l],
                )
            })
            .collect()
    }

    /// Forward pass storing pre-activations; returns `(a-stack, value)`.
    /// `a[l]` holds the pre-activation of layer `l+1`.
    fn forward_stack(&self, p: &[f64], input: &[f64]) -> (Vec<Vec<f64>>, f64) {
        let lcount = self.layers();
        let mut a_stack = Vec::with_capacity(lcount);
        let mut z = input.to_vec();
        for l in 0..lcount {
            let mut a = self.b(p, l).to_vec();
            matvec_acc(self.w(p, l), &z, &mut a);
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
        let lcount = self.layers();
        let mut z = input.to_vec();
        for l in 0..lcount {
            let mut a = self.b(p, l).to_vec();
            matvec_acc(self.w(p, l), &z, &mut a);
            if l + 1 < lcount {
                for v in &mut a {
                    *v = softplus(*v);
                }
            }
            z = a;
        }
        z[0]
    }

    /// Value and exact input gradient.
    pub fn value_and_input_grad(&self, p: &[f64], input: &[f64]) -> (f64, Vec<f64>) {
        let (a_stack, v) = self.forward_stack(p, input);
        let lcount = self.layers();
        // delta = ∂v/∂a_l, seeded at the linear output layer.
        let mut delta = vec![1.0];
        for l in (0..lcount).rev() {
            let below = if l == 0 { input.len() } else { self.widths[l] };
            let mut carry = vec![0.0; below];
            matvec_t_acc(self.w(p, l), &delta, &mut carry);
            if l == 0 {
                return (v, carry);
            }
            for (c, ai) in carry.iter_mut().zip(&a_stack[l - 1]) {
                *c *= sigmoid(*ai);
            }
            delta = carry;
        }
        unreachable!()
    }

    /// Value, input gradient, and `acc += scale * ∂v/∂θ`.
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
        let mut delta = vec![1.0];
        for l in (0..lcount).rev() {
            // Parameter gradients of this layer.
            let z_below: Vec<f64> = if l == 0 {
                input.to_vec()
            } else {
                a_stack[l - 1].iter().map(|&ai| softplus(ai)).collect()
            };
            outer_acc(
                &mut acc[self.w_off[l]..self.w_off[l] + self.widths[l + 1] * self.widths[l]],
                &delta,
                &z_below,
                scale,
            );
            for (a, d) in acc[self.b_off[l]..self.b_off[l] + self.widths[l + 1]]
                .iter_mut()
                .zip(&delta)
            {
                *a += scale * d;
            }
            // Downstream delta.
            let below = if l == 0 { input.len() } else { self.widths[l] };
            let mut carry = vec![0.0; below];
            matvec_t_acc(self.w(p, l), &delta, &mut carry);
            if l == 0 {
                return (v, carry);
            }
            for (c, ai) in carry.iter_mut().zip(&a_stack[l - 1]) {
                *c *= sigmoid(*ai);
            }
            delta = carry;
        }
        unreachable!()
    }

    /// Fused forward-over-reverse sweep in direction `dir`.
    ///
    /// Returns `(v, q, h_in, grad_in)` with `q = ∇_in v · dir`,
    /// `h_in = ∂q/∂in` and `grad_in = ∇_in v`, and accumulates
    /// `acc += coeff * ∂q/∂θ`.
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

        // Forward + tangent, storing pre-activations and tangents.
        let mut a_stack = Vec::with_capacity(lcount);
        let mut ad_stack = Vec::with_capacity(lcount);
        let mut z = input.to_vec();
        let mut zd = dir.to_vec();
        for l in 0..lcount {
            let mut a = self.b(p, l).to_vec();
            matvec_acc(self.w(p, l), &z, &mut a);
            let mut ad = vec![0.0; self.widths[l + 1]];
            matvec_acc(self.w(p, l), &zd, &mut ad);
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

        // Reverse sweep over the joint graph. h = ∂q/∂z_l, g = ∂q/∂ż_l.
        let mut h = vec![0.0];
        let mut g = vec![1.0];
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
            // Parameter accumulation: ∂q/∂W_l = ā z_{l-1}ᵀ + ǧ ż_{l-1}ᵀ.
            let (z_below, zd_below): (Vec<f64>, Vec<f64>) = if l == 0 {
                (input.to_vec(), dir.to_vec())
            } else {
                let zb: Vec<f64> = a_stack[l - 1].iter().map(|&ai| softplus(ai)).collect();
                let zdb: Vec<f64> = ad_stack[l - 1]
                    .iter()
                    .zip(&a_stack[l - 1])
                    .map(|(&adi, &ai)| sigmoid(ai) * adi)
                    .collect();
                (zb, zdb)
            };
            if coeff != 0.0 {
                let wslice =
                    &mut acc[self.w_off[l]..self.w_off[l] + self.widths[l + 1] * self.widths[l]];
                outer_acc(wslice, &abar, &z_below, coeff);
                outer_acc(wslice, &gbar, &zd_below, coeff);
                for (a, d) in acc[self.b_off[l]..self.b_off[l] + self.widths[l + 1]]
                    .iter_mut()
                    .zip(&abar)
                {
                    *a += coeff * d;
                }
            }
            // Downstream chains.
            let below = if l == 0 { input.len() } else { self.widths[l] };
            let mut h_dn = vec![0.0; below];
            let mut g_dn = vec![0.0; below];
            matvec_t_acc(self.w(p, l), &abar, &mut h_dn);
            matvec_t_acc(self.w(p, l), &gbar, &mut g_dn);
            h = h_dn;
            g = g_dn;
        }
        // h = ∂q/∂input; g = ∂q/∂dir = ∇_in v.
        (v, q, h, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff;

    /// Deterministic but non-trivial parameter fill.
    fn test_params(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| 0.37 * ((i as f64) * 0.7).sin() - 0.11 * ((i as f64) * 0.3).cos())
            .collect()
    }

    /// Straight-line re-evaluation of a [3,4,1] net, written independently
    /// of the implementation's layout helpers: weights first, then biases,
    /// layer by layer, row-major.
    fn straight_line_341(p: &[f64], input: &[f64]) -> f64 {
        let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
        let mut hidden = [0.0; 4];
        for i in 0..4 {
            let mut s = p[12 + i]; // bias of unit i
            for j in 0..3 {
                s += p[i * 3 + j] * input[j];
            }
            hidden[i] = softplus(s);
        }
        let mut out = p[16 + 4]; // output bias
        for i in 0..4 {
            out += p[16 + i] * hidden[i];
        }
        out
    }

    #[test]
    fn forward_matches_straight_line_reimplementation() {
        let net = Mlp::new(&[3, 4, 1]);
        let p = test_params(net.param_count());
        for input in [[0.0, 0.0, 0.0], [1.0, -2.0, 0.5], [3.0, 0.1, -1.7]] {
            let got = net.value(&p, &input);
            let want = straight_line_341(&p, &input);
            assert!(
                (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "forward {got} vs straight-line {want}"
            );
        }
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let net = Mlp::new(&[4, 8, 6, 1]);
        let p = test_params(net.param_count());
        let input = [0.4, -1.2, 0.9, 0.3];
        let (_, grad) = net.value_and_input_grad(&p, &input);
        let fd = ndiff::central_diff_grad(|x| net.value(&p, x), &input, ndiff::DEFAULT_STEP);
        let (err, at) = ndiff::max_rel_err(&grad, &fd, 1e-8);
        assert!(err < 1e-7, "input grad rel err {err} at {at}");
    }

    #[test]
    fn param_gradient_matches_central_differences() {
        let net = Mlp::new(&[3, 5, 1]);
        let p = test_params(net.param_count());
        let input = [0.7, -0.2, 1.1];
        let mut acc = vec![0.0; net.param_count()];
        let (v, gin) = net.value_grads_acc(&p, &input, 1.0, &mut acc);
        let fd = ndiff::central_diff_grad(|q| net.value(q, &input), &p, ndiff::DEFAULT_STEP);
        let (err, at) = ndiff::max_rel_err(&acc, &fd, 1e-8);
        assert!(err < 1e-7, "param grad rel err {err} at {at}");
        // The input gradient from this path must agree with the dedicated one.
        let (v2, gin2) = net.value_and_input_grad(&p, &input);
        assert_eq!(v, v2);
        assert_eq!(gin, gin2);
    }

    #[test]
    fn fused_sweep_matches_finite_differences_of_the_gradient() {
        let net = Mlp::new(&[3, 6, 5, 1]);
        let p = test_params(net.param_count());
        let input = [0.3, -0.8, 0.6];
        let dir = [0.9, 0.4, -1.3];
        let mut hq = vec![0.0; net.param_count()];
        let (v, q, h_in, grad_in) = net.sovjp_acc(&p, &input, &dir, 1.0, &mut hq);

        // q and grad_in against the first-order path.
        let (v1, g1) = net.value_and_input_grad(&p, &input);
        assert_eq!(v, v1);
        let q_ref: f64 = g1.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!((q - q_ref).abs() < 1e-12 * (1.0 + q_ref.abs()));
        let (err, _) = ndiff::max_rel_err(&grad_in, &g1, 1e-10);
        assert!(err < 1e-12, "grad_in from fused sweep differs: {err}");

        // h_in = ∂q/∂input via central differences of the analytic gradient.
        let fd_h = ndiff::central_diff_grad(
            |x| {
                let (_, g) = net.value_and_input_grad(&p, x);
                g.iter().zip(&dir).map(|(a, b)| a * b).sum()
            },
            &input,
            ndiff::DEFAULT_STEP,
        );
        let (err, at) = ndiff::max_rel_err(&h_in, &fd_h, 1e-8);
        assert!(err < 1e-6, "h_in rel err {err} at {at}");

        // ∂q/∂θ via central differences of the analytic gradient over params.
        let fd_hq = ndiff::central_diff_grad(
            |pp| {
                let (_, g) = net.value_and_input_grad(pp, &input);
                g.iter().zip(&dir).map(|(a, b)| a * b).sum()
            },
            &p,
            ndiff::DEFAULT_STEP,
        );
        let (err, at) = ndiff::max_rel_err(&hq, &fd_hq, 1e-8);
        assert!(err < 1e-6, "h_theta rel err {err} at {at}");
    }

    #[test]
    fn sovjp_scale_accumulates_linearly() {
        let net = Mlp::new(&[2, 4, 1]);
        let p = test_params(net.param_count());
        let input = [0.5, -0.4];
        let dir = [1.0, 2.0];
        let mut once = vec![0.0; net.param_count()];
        net.sovjp_acc(&p, &input, &dir, 2.5, &mut once);
        let mut twice = vec![0.0; net.param_count()];
        net.sovjp_acc(&p, &input, &dir, 1.0, &mut twice);
        net.sovjp_acc(&p, &input, &dir, 1.5, &mut twice);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-13 * (1.0 + a.abs()));
        }
    }
}
