//! Recorded forward passes and reverse-mode gradients over batches of
//! sequences.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::layers::{bce_loss, BlockCache, LstmCache};
use super::{FreezeMask, Network, NetworkParams, RecurrentState, GOAL_FEATURES};
use crate::Real;

/// `steps × batch` rows stored time-major (row `t·batch + b`). Feed-forward
/// training uses `steps = 1`. Rows with weight 0 are padding.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqBatch<T> {
    pub rays: Array2<T>,
    pub goal: Array2<T>,
    pub targets: Vec<usize>,
    pub weights: Array1<T>,
    pub steps: usize,
    pub batch: usize,
    /// Recurrent state entering step 0 (zeros if absent). Gradients are
    /// truncated there.
    pub init: Option<RecurrentState<T>>,
}

impl<T: Real> SeqBatch<T> {
    /// Independent samples with unit weights.
    pub fn flat(rays: Array2<T>, goal: Array2<T>, targets: Vec<usize>) -> Self {
        let n = targets.len();
        Self {
            rays,
            goal,
            targets,
            weights: Array1::ones(n),
            steps: 1,
            batch: n,
            init: None,
        }
    }

    pub fn rows(&self) -> usize {
        self.steps * self.batch
    }

    fn check(&self, n_rays: usize) {
        let r = self.rows();
        assert_eq!(self.rays.dim(), (r, n_rays), "ray rows");
        assert_eq!(self.goal.dim(), (r, GOAL_FEATURES), "goal rows");
        assert_eq!(self.targets.len(), r, "targets");
        assert_eq!(self.weights.len(), r, "weights");
    }
}

/// Decoder inputs and LSTM step caches for one batch.
struct Head<T> {
    post: Array2<T>,
    steps: Vec<LstmCache<T>>,
    last: Option<RecurrentState<T>>,
}

impl<T: Real> Network<T> {
    /// Weighted mean over rows of the per-row BCE sum.
    pub fn loss(&self, batch: &SeqBatch<T>) -> T {
        batch.check(self.config.n_rays);
        let latents = self.latents(batch.rays.view(), batch.goal.view());
        self.latent_loss(&latents, batch)
    }

    /// [`Network::loss`] from precomputed bottleneck latents.
    pub fn latent_loss(&self, latents: &Array2<T>, batch: &SeqBatch<T>) -> T {
        let head = self.head_forward(latents, batch);
        let logits = self.params.decoder.forward(head.post.view());
        self.bce(&logits, batch).0
    }

    /// Loss and gradients of every parameter; frozen groups get exact zeros.
    pub fn loss_and_grad(&self, batch: &SeqBatch<T>, mask: &FreezeMask) -> (T, NetworkParams<T>) {
        batch.check(self.config.n_rays);
        let mut grads = self.params.zeros_like();
        let (eps, slope) = (T::lit(self.config.ln_eps), T::lit(self.config.leaky_slope));
        let run = |x: Array2<T>, blocks: &[super::layers::Block<T>]| {
            let mut caches = Vec::with_capacity(blocks.len());
            let mut h = x;
            for b in blocks {
                let (y, c) = b.forward(h, eps, slope);
                caches.push(c);
                h = y;
            }
            (h, caches)
        };
        let (r, rc) = run(batch.rays.clone(), &self.params.ray_encoder);
        let (g, gc) = run(batch.goal.clone(), &self.params.goal_encoder);
        let rw = r.ncols();
        let cat = concatenate(Axis(1), &[r.view(), g.view()]).expect("same rows");
        let (latents, bc) = run(cat, &self.params.bottleneck);
        let (loss, d_latent, _) = self.head_backward(&latents, batch, &mut grads, mask, !mask.trunk_frozen());
        if let Some(mut d) = d_latent {
            let back = |d: &mut Array2<T>, blocks: &[super::layers::Block<T>], caches: &[BlockCache<T>], gb: &mut [super::layers::Block<T>]| {
                for ((b, c), g) in blocks.iter().zip(caches).zip(gb.iter_mut()).rev() {
                    *d = b.backward(d.view(), c, slope, g);
                }
            };
            back(&mut d, &self.params.bottleneck, &bc, &mut grads.bottleneck);
            let mut dr = d.slice(s![.., ..rw]).to_owned();
            let mut dg = d.slice(s![.., rw..]).to_owned();
            if !mask.ray_encoder {
                back(&mut dr, &self.params.ray_encoder, &rc, &mut grads.ray_encoder);
            }
            if !mask.goal_encoder {
                back(&mut dg, &self.params.goal_encoder, &gc, &mut grads.goal_encoder);
            }
        }
        grads.apply_mask(mask);
        (loss, grads)
    }

    /// Gradients of the LSTM and decoder only, from cached latents (the
    /// trunk is treated as frozen).
    pub fn latent_loss_and_grad(&self, latents: &Array2<T>, batch: &SeqBatch<T>, mask: &FreezeMask) -> (T, NetworkParams<T>) {
        let (loss, grads, _) = self.latent_window(latents, batch, mask);
        (loss, grads)
    }

    /// [`Network::latent_loss_and_grad`] that also returns the recurrent
    /// state after the last step, for carrying into the next window.
    pub fn latent_window(
        &self,
        latents: &Array2<T>,
        batch: &SeqBatch<T>,
        mask: &FreezeMask,
    ) -> (T, NetworkParams<T>, Option<RecurrentState<T>>) {
        let mut grads = self.params.zeros_like();
        let (loss, _, last) = self.head_backward(latents, batch, &mut grads, mask, false);
        let mut m = *mask;
        m.ray_encoder = true;
        m.goal_encoder = true;
        m.bottleneck = true;
        grads.apply_mask(&m);
        (loss, grads, last)
    }

    fn head_forward(&self, latents: &Array2<T>, batch: &SeqBatch<T>) -> Head<T> {
        let (steps, batch_n) = (batch.steps, batch.batch);
        let Some(l) = &self.params.lstm else {
            return Head {
                post: latents.clone(),
                steps: Vec::new(),
                last: None,
            };
        };
        let hd = l.hidden();
        let (mut h, mut c) = match &batch.init {
            Some(st) => {
                assert_eq!(st.h.dim(), (batch_n, hd), "initial state shape");
                (st.h.clone(), st.c.clone())
            }
            None => (Array2::zeros((batch_n, hd)), Array2::zeros((batch_n, hd))),
        };
        let batch = batch_n;
        let mut post = latents.clone();
        let mut caches = Vec::with_capacity(steps);
        for t in 0..steps {
            let rows = s![t * batch..(t + 1) * batch, ..];
            let (hn, cn, cache) = l.step(latents.slice(rows), h.view(), c.view());
            post.slice_mut(rows).zip_mut_with(&hn, |p, &v| *p += v);
            caches.push(cache);
            h = hn;
            c = cn;
        }
        Head {
            post,
            steps: caches,
            last: Some(RecurrentState { h, c }),
        }
    }

    fn bce(&self, logits: &Array2<T>, batch: &SeqBatch<T>) -> (T, Array2<T>) {
        let wsum: T = batch.weights.iter().copied().sum();
        let mut d = Array2::zeros(logits.raw_dim());
        let mut loss = T::zero();
        if wsum <= T::zero() {
            return (loss, d);
        }
        for (i, row) in logits.rows().into_iter().enumerate() {
            let w = batch.weights[i];
            if w == T::zero() {
                continue;
            }
            let (l, g) = bce_loss(&row.to_vec(), batch.targets[i]);
            loss += w * l;
            d.row_mut(i).iter_mut().zip(g).for_each(|(o, v)| *o = v * w / wsum);
        }
        (loss / wsum, d)
    }

    /// Decoder and LSTM reverse passes; returns `dL/dlatent` if requested.
    fn head_backward(
        &self,
        latents: &Array2<T>,
        batch: &SeqBatch<T>,
        grads: &mut NetworkParams<T>,
        mask: &FreezeMask,
        want_latent: bool,
    ) -> (T, Option<Array2<T>>, Option<RecurrentState<T>>) {
        let head = self.head_forward(latents, batch);
        let logits = self.params.decoder.forward(head.post.view());
        let (loss, d_logits) = self.bce(&logits, batch);
        let d_post = self.params.decoder.backward(head.post.view(), d_logits.view(), &mut grads.decoder);
        let Some(l) = &self.params.lstm else {
            return (loss, want_latent.then_some(d_post), None);
        };
        if mask.lstm && !want_latent {
            return (loss, None, head.last);
        }
        let gl = grads.lstm.as_mut().expect("grads mirror params");
        let b = batch.batch;
        let hd = l.hidden();
        let mut d_latent = d_post.clone();
        let mut dh_next = Array2::<T>::zeros((b, hd));
        let mut dc_next = Array2::<T>::zeros((b, hd));
        for t in (0..batch.steps).rev() {
            let rows = s![t * b..(t + 1) * b, ..];
            let dh = &d_post.slice(rows) + &dh_next;
            let (dx, dh_prev, dc_prev) = l.step_backward(dh.view(), dc_next.view(), &head.steps[t], gl);
            d_latent.slice_mut(rows).zip_mut_with(&dx, |a, &v| *a += v);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        (loss, want_latent.then_some(d_latent), head.last)
    }
}

/// Rows `t·batch + b` of a time-major layout from per-sequence rows.
pub fn time_major<T: Real>(seqs: &[ArrayView2<'_, T>], steps: usize) -> (Array2<T>, Array1<T>) {
    let batch = seqs.len();
    let width = seqs.first().map_or(0, |s| s.ncols());
    let mut out = Array2::zeros((steps * batch, width));
    let mut w = Array1::zeros(steps * batch);
    for (b, sq) in seqs.iter().enumerate() {
        for t in 0..sq.nrows().min(steps) {
            out.row_mut(t * batch + b).assign(&sq.row(t));
            w[t * batch + b] = T::one();
        }
    }
    (out, w)
}
