//! Batched layer primitives with explicit reverse passes. Rows are samples.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use crate::scalar::{sigmoid, softplus};
use crate::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `out × in`.
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Self {
            w: Array2::zeros((out, inp)),
            b: Array1::zeros(out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    /// `x Wᵀ + b`.
    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        y
    }

    /// Accumulates `dW`, `db` into `grad` and returns `dx`.
    pub fn backward(&self, x: ArrayView2<'_, T>, dy: ArrayView2<'_, T>, grad: &mut Linear<T>) -> Array2<T> {
        general_mat_mul(T::one(), &dy.t(), &x, T::one(), &mut grad.w);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Array1<T>,
    pub bias: Array1<T>,
}

/// Values kept from [`LayerNorm::forward`] for the reverse pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(width: usize) -> Self {
        Self {
            gain: Array1::ones(width),
            bias: Array1::zeros(width),
        }
    }

    pub fn zeros(width: usize) -> Self {
        Self {
            gain: Array1::zeros(width),
            bias: Array1::zeros(width),
        }
    }

    /// Per-row normalization (biased variance) followed by the affine map.
    pub fn forward(&self, x: ArrayView2<'_, T>, eps: T) -> (Array2<T>, NormCache<T>) {
        let n = T::from_usize_lossy(x.ncols());
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row -= mean;
            let var = row.iter().map(|v| *v * *v).sum::<T>() / n;
            *is = T::one() / (var + eps).sqrt();
            row *= *is;
        }
        let mut y = &xhat * &self.gain;
        y += &self.bias;
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, dy: ArrayView2<'_, T>, cache: &NormCache<T>, grad: &mut LayerNorm<T>) -> Array2<T> {
        grad.gain += &(&dy * &cache.xhat).sum_axis(Axis(0));
        grad.bias += &dy.sum_axis(Axis(0));
        let n = T::from_usize_lossy(dy.ncols());
        let mut dx = &dy * &self.gain;
        for ((mut row, xh), is) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
            let mean_d = row.sum() / n;
            let mean_dx = row.iter().zip(xh).map(|(a, b)| *a * *b).sum::<T>() / n;
            Zip::from(&mut row).and(xh).for_each(|d, &h| *d = (*d - mean_d - h * mean_dx) * *is);
        }
        dx
    }
}

pub fn leaky_relu<T: Real>(x: &Array2<T>, slope: T) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { v * slope })
}

/// `dy ⊙ f'(x)` with `x` the pre-activation.
pub fn leaky_relu_backward<T: Real>(x: &Array2<T>, dy: ArrayView2<'_, T>, slope: T) -> Array2<T> {
    let mut dx = dy.to_owned();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= T::zero() {
            *d *= slope;
        }
    });
    dx
}

/// Linear → layer norm → leaky ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub linear: Linear<T>,
    pub norm: LayerNorm<T>,
}

#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    pub input: Array2<T>,
    pub norm: NormCache<T>,
    /// Layer-norm output, the activation's argument.
    pub pre_act: Array2<T>,
}

impl<T: Real> Block<T> {
    pub fn forward(&self, x: Array2<T>, eps: T, slope: T) -> (Array2<T>, BlockCache<T>) {
        let z = self.linear.forward(x.view());
        let (pre_act, norm) = self.norm.forward(z.view(), eps);
        let y = leaky_relu(&pre_act, slope);
        (
            y,
            BlockCache {
                input: x,
                norm,
                pre_act,
            },
        )
    }

    pub fn infer(&self, x: ArrayView2<'_, T>, eps: T, slope: T) -> Array2<T> {
        let z = self.linear.forward(x);
        leaky_relu(&self.norm.forward(z.view(), eps).0, slope)
    }

    pub fn backward(&self, dy: ArrayView2<'_, T>, cache: &BlockCache<T>, slope: T, grad: &mut Block<T>) -> Array2<T> {
        let d_pre = leaky_relu_backward(&cache.pre_act, dy, slope);
        let dz = self.norm.backward(d_pre.view(), &cache.norm, &mut grad.norm);
        self.linear.backward(cache.input.view(), dz.view(), &mut grad.linear)
    }
}

/// Single LSTM layer, gate order `[input, forget, candidate, output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm<T> {
    /// `4H × in`.
    pub w_ih: Array2<T>,
    /// `4H × H`.
    pub w_hh: Array2<T>,
    pub b: Array1<T>,
}

#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    pub x: Array2<T>,
    pub h_prev: Array2<T>,
    pub c_prev: Array2<T>,
    /// Activated gates, `B × 4H`.
    pub gates: Array2<T>,
    pub tanh_c: Array2<T>,
}

impl<T: Real> Lstm<T> {
    pub fn zeros(inp: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((4 * hidden, inp)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    /// One time step for a batch; returns `(h, c, cache)`.
    pub fn step(&self, x: ArrayView2<'_, T>, h: ArrayView2<'_, T>, c: ArrayView2<'_, T>) -> (Array2<T>, Array2<T>, LstmCache<T>) {
        let hd = self.hidden();
        let mut a = x.dot(&self.w_ih.t());
        general_mat_mul(T::one(), &h, &self.w_hh.t(), T::one(), &mut a);
        a += &self.b;
        a.slice_mut(s![.., 0..2 * hd]).mapv_inplace(sigmoid);
        a.slice_mut(s![.., 2 * hd..3 * hd]).mapv_inplace(|v| v.tanh());
        a.slice_mut(s![.., 3 * hd..]).mapv_inplace(sigmoid);
        let (i, f, g, o) = (
            a.slice(s![.., 0..hd]),
            a.slice(s![.., hd..2 * hd]),
            a.slice(s![.., 2 * hd..3 * hd]),
            a.slice(s![.., 3 * hd..]),
        );
        let c_new = &f * &c + &i * &g;
        let tanh_c = c_new.mapv(|v| v.tanh());
        let h_new = &o * &tanh_c;
        let cache = LstmCache {
            x: x.to_owned(),
            h_prev: h.to_owned(),
            c_prev: c.to_owned(),
            gates: a,
            tanh_c,
        };
        (h_new, c_new, cache)
    }

    /// Reverse of [`Lstm::step`]: from `dh`, `dc` at the step output to
    /// `(dx, dh_prev, dc_prev)`, accumulating parameter gradients.
    pub fn step_backward(
        &self,
        dh: ArrayView2<'_, T>,
        dc: ArrayView2<'_, T>,
        cache: &LstmCache<T>,
        grad: &mut Lstm<T>,
    ) -> (Array2<T>, Array2<T>, Array2<T>) {
        let hd = self.hidden();
        let g = &cache.gates;
        let (i, f, cand, o) = (
            g.slice(s![.., 0..hd]),
            g.slice(s![.., hd..2 * hd]),
            g.slice(s![.., 2 * hd..3 * hd]),
            g.slice(s![.., 3 * hd..]),
        );
        let one = T::one();
        let dc_total = &dc + &(&dh * &o * &cache.tanh_c.mapv(|t| one - t * t));
        let mut da = Array2::zeros(g.raw_dim());
        Zip::from(da.slice_mut(s![.., 0..hd]))
            .and(&dc_total)
            .and(&cand)
            .and(&i)
            .for_each(|d, &dct, &gv, &iv| *d = dct * gv * iv * (one - iv));
        Zip::from(da.slice_mut(s![.., hd..2 * hd]))
            .and(&dc_total)
            .and(&cache.c_prev)
            .and(&f)
            .for_each(|d, &dct, &cp, &fv| *d = dct * cp * fv * (one - fv));
        Zip::from(da.slice_mut(s![.., 2 * hd..3 * hd]))
            .and(&dc_total)
            .and(&i)
            .and(&cand)
            .for_each(|d, &dct, &iv, &gv| *d = dct * iv * (one - gv * gv));
        Zip::from(da.slice_mut(s![.., 3 * hd..]))
            .and(&dh)
            .and(&cache.tanh_c)
            .and(&o)
            .for_each(|d, &dhv, &tc, &ov| *d = dhv * tc * ov * (one - ov));
        general_mat_mul(one, &da.t(), &cache.x, one, &mut grad.w_ih);
        general_mat_mul(one, &da.t(), &cache.h_prev, one, &mut grad.w_hh);
        grad.b += &da.sum_axis(Axis(0));
        let dx = da.dot(&self.w_ih);
        let dh_prev = da.dot(&self.w_hh);
        let dc_prev = &dc_total * &f;
        (dx, dh_prev, dc_prev)
    }
}

/// Sum over outputs of the binary cross-entropy against the one-hot
/// `target`, and its gradient `σ(z) − e_target`.
pub fn bce_loss<T: Real>(logits: &[T], target: usize) -> (T, Vec<T>) {
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (i, &z) in logits.iter().enumerate() {
        let y = if i == target { T::one() } else { T::zero() };
        loss += softplus(z) - y * z;
        grad.push(sigmoid(z) - y);
    }
    (loss, grad)
}
