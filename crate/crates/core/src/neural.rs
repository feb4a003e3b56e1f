//! Learned goal direction from raw rays: encoders, a four-block bottleneck,
//! an optional residual LSTM, a per-direction logit decoder, the BCE
//! objective and the top-k acceleration decode.

pub mod adam;
pub mod checkpoint;
pub mod layers;
mod tape;

use std::sync::Arc;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::raycast::{DirectionSet, RayBundle};
use crate::rmp::{learned_goal_policy, GoalOutput, Planner, PlannerContext, RolloutError};
use crate::rng::Rng;
use crate::scalar::sigmoid;
use crate::Real;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_params, load_params_expecting, save_params, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
use layers::{Block, LayerNorm, Linear, Lstm};
pub use tape::{time_major, SeqBatch};

pub const DEFAULT_K_TOP: usize = 50;
/// Width of the goal feature vector: unit direction and normalized distance.
pub const GOAL_FEATURES: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("zero-length direction label")]
    ZeroLabel,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_rays: usize,
    pub ray_widths: Vec<usize>,
    pub goal_widths: Vec<usize>,
    pub bottleneck_width: usize,
    pub bottleneck_layers: usize,
    pub use_lstm: bool,
    pub lstm_width: usize,
    pub k_top: usize,
    pub leaky_slope: f64,
    pub ln_eps: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::paper(crate::raycast::DEFAULT_RAYS)
    }
}

impl NetworkConfig {
    /// Full-size widths.
    pub fn paper(n_rays: usize) -> Self {
        Self {
            n_rays,
            ray_widths: vec![512, 256],
            goal_widths: vec![64],
            bottleneck_width: 320,
            bottleneck_layers: 4,
            use_lstm: false,
            lstm_width: 320,
            k_top: DEFAULT_K_TOP.min(n_rays),
            leaky_slope: 0.01,
            ln_eps: 1e-5,
        }
    }

    /// Full-size widths with every width ≥ 128 divided by 4.
    pub fn desk(n_rays: usize) -> Self {
        let quarter = |w: usize| if w >= 128 { w / 4 } else { w };
        let p = Self::paper(n_rays);
        Self {
            ray_widths: p.ray_widths.iter().map(|&w| quarter(w)).collect(),
            goal_widths: p.goal_widths.iter().map(|&w| quarter(w)).collect(),
            bottleneck_width: quarter(p.bottleneck_width),
            lstm_width: quarter(p.lstm_width),
            ..p
        }
    }

    /// Every hidden width set to `width`.
    pub fn uniform(n_rays: usize, width: usize) -> Self {
        Self {
            n_rays,
            ray_widths: vec![width, width],
            goal_widths: vec![width],
            bottleneck_width: width,
            bottleneck_layers: 4,
            use_lstm: false,
            lstm_width: width,
            k_top: DEFAULT_K_TOP.min(n_rays),
            leaky_slope: 0.01,
            ln_eps: 1e-5,
        }
    }

    pub fn with_lstm(mut self, on: bool) -> Self {
        self.use_lstm = on;
        self
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::Config(m.to_string()));
        if self.n_rays == 0 {
            return bad("n_rays must be positive");
        }
        if self.ray_widths.is_empty() || self.goal_widths.is_empty() {
            return bad("encoders need at least one layer");
        }
        if self.bottleneck_layers == 0 || self.bottleneck_width == 0 {
            return bad("bottleneck needs at least one layer of positive width");
        }
        if self.ray_widths.iter().chain(&self.goal_widths).any(|&w| w == 0) {
            return bad("layer widths must be positive");
        }
        if self.k_top == 0 || self.k_top > self.n_rays {
            return bad("k_top must be in 1..=n_rays");
        }
        if self.use_lstm && self.lstm_width != self.bottleneck_width {
            return bad("the residual LSTM must match the bottleneck width");
        }
        if !(self.leaky_slope.is_finite() && self.ln_eps > 0.0) {
            return bad("leaky_slope must be finite and ln_eps positive");
        }
        Ok(())
    }

    pub fn concat_width(&self) -> usize {
        self.ray_widths.last().copied().unwrap_or(0) + self.goal_widths.last().copied().unwrap_or(0)
    }
}

/// Parameter groups, the unit of freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    RayEncoder,
    GoalEncoder,
    Bottleneck,
    Lstm,
    Decoder,
}

/// Groups whose gradients are forced to zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FreezeMask {
    pub ray_encoder: bool,
    pub goal_encoder: bool,
    pub bottleneck: bool,
    pub lstm: bool,
    pub decoder: bool,
}

impl FreezeMask {
    pub fn none() -> Self {
        Self::default()
    }

    /// Everything except the LSTM, for second-stage training.
    pub fn all_but_lstm() -> Self {
        Self {
            ray_encoder: true,
            goal_encoder: true,
            bottleneck: true,
            lstm: false,
            decoder: true,
        }
    }

    pub fn is_frozen(&self, g: Group) -> bool {
        match g {
            Group::RayEncoder => self.ray_encoder,
            Group::GoalEncoder => self.goal_encoder,
            Group::Bottleneck => self.bottleneck,
            Group::Lstm => self.lstm,
            Group::Decoder => self.decoder,
        }
    }

    pub fn trunk_frozen(&self) -> bool {
        self.ray_encoder && self.goal_encoder && self.bottleneck
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub ray_encoder: Vec<Block<T>>,
    pub goal_encoder: Vec<Block<T>>,
    pub bottleneck: Vec<Block<T>>,
    pub lstm: Option<Lstm<T>>,
    pub decoder: Linear<T>,
}

impl<T: Real> NetworkParams<T> {
    /// Shapes implied by `cfg`, all zeros.
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let blocks = |inp: usize, widths: &[usize]| {
            let mut prev = inp;
            widths
                .iter()
                .map(|&w| {
                    let b = Block {
                        linear: Linear::zeros(prev, w),
                        norm: LayerNorm::zeros(w),
                    };
                    prev = w;
                    b
                })
                .collect::<Vec<_>>()
        };
        let bn = vec![cfg.bottleneck_width; cfg.bottleneck_layers];
        Self {
            ray_encoder: blocks(cfg.n_rays, &cfg.ray_widths),
            goal_encoder: blocks(GOAL_FEATURES, &cfg.goal_widths),
            bottleneck: blocks(cfg.concat_width(), &bn),
            lstm: cfg.use_lstm.then(|| Lstm::zeros(cfg.bottleneck_width, cfg.lstm_width)),
            decoder: Linear::zeros(cfg.bottleneck_width, cfg.n_rays),
        }
    }

    /// He-normal linear weights, unit layer-norm gains, decoder bias at the
    /// uniform prior `−ln(N − 1)`, LSTM with a zero candidate gate (so the
    /// fresh LSTM leaves the latent untouched) and forget bias 1.
    pub fn init(cfg: &NetworkConfig, rng: &mut Rng) -> Result<Self, NeuralError> {
        cfg.validate()?;
        let mut p = Self::zeros(cfg);
        let mut normal = |a: &mut Array2<T>, std: f64| {
            let d = Normal::new(0.0, std).expect("positive std");
            a.mapv_inplace(|_| T::lit(d.sample(rng)));
        };
        for b in p.ray_encoder.iter_mut().chain(&mut p.goal_encoder).chain(&mut p.bottleneck) {
            let fan_in = b.linear.in_dim() as f64;
            normal(&mut b.linear.w, (2.0 / fan_in).sqrt());
            b.norm.gain.fill(T::one());
        }
        let fan_in = p.decoder.in_dim() as f64;
        normal(&mut p.decoder.w, (1.0 / fan_in).sqrt());
        let prior = -((cfg.n_rays.max(2) - 1) as f64).ln();
        p.decoder.b.fill(T::lit(prior));
        if let Some(l) = p.lstm.as_mut() {
            let h = l.hidden();
            let bound = 1.0 / (h as f64).sqrt();
            for w in [&mut l.w_ih, &mut l.w_hh] {
                w.mapv_inplace(|_| T::lit(rng.random_range(-bound..bound)));
                w.slice_mut(s![2 * h..3 * h, ..]).fill(T::zero());
            }
            l.b.slice_mut(s![h..2 * h]).fill(T::one());
        }
        Ok(p)
    }

    /// Named tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, Group, ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        for (prefix, group, blocks) in [
            ("ray_encoder", Group::RayEncoder, &self.ray_encoder),
            ("goal_encoder", Group::GoalEncoder, &self.goal_encoder),
            ("bottleneck", Group::Bottleneck, &self.bottleneck),
        ] {
            for (i, b) in blocks.iter().enumerate() {
                out.push((format!("{prefix}.{i}.linear.w"), group, b.linear.w.view().into_dyn()));
                out.push((format!("{prefix}.{i}.linear.b"), group, b.linear.b.view().into_dyn()));
                out.push((format!("{prefix}.{i}.norm.gain"), group, b.norm.gain.view().into_dyn()));
                out.push((format!("{prefix}.{i}.norm.bias"), group, b.norm.bias.view().into_dyn()));
            }
        }
        if let Some(l) = &self.lstm {
            out.push(("lstm.w_ih".into(), Group::Lstm, l.w_ih.view().into_dyn()));
            out.push(("lstm.w_hh".into(), Group::Lstm, l.w_hh.view().into_dyn()));
            out.push(("lstm.b".into(), Group::Lstm, l.b.view().into_dyn()));
        }
        out.push(("decoder.w".into(), Group::Decoder, self.decoder.w.view().into_dyn()));
        out.push(("decoder.b".into(), Group::Decoder, self.decoder.b.view().into_dyn()));
        out
    }

    /// Mutable counterpart of [`NetworkParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, Group, ArrayViewMutD<'_, T>)> {
        let mut out = Vec::new();
        for (prefix, group, blocks) in [
            ("ray_encoder", Group::RayEncoder, &mut self.ray_encoder),
            ("goal_encoder", Group::GoalEncoder, &mut self.goal_encoder),
            ("bottleneck", Group::Bottleneck, &mut self.bottleneck),
        ] {
            for (i, b) in blocks.iter_mut().enumerate() {
                out.push((format!("{prefix}.{i}.linear.w"), group, b.linear.w.view_mut().into_dyn()));
                out.push((format!("{prefix}.{i}.linear.b"), group, b.linear.b.view_mut().into_dyn()));
                out.push((format!("{prefix}.{i}.norm.gain"), group, b.norm.gain.view_mut().into_dyn()));
                out.push((format!("{prefix}.{i}.norm.bias"), group, b.norm.bias.view_mut().into_dyn()));
            }
        }
        if let Some(l) = &mut self.lstm {
            out.push(("lstm.w_ih".into(), Group::Lstm, l.w_ih.view_mut().into_dyn()));
            out.push(("lstm.w_hh".into(), Group::Lstm, l.w_hh.view_mut().into_dyn()));
            out.push(("lstm.b".into(), Group::Lstm, l.b.view_mut().into_dyn()));
        }
        out.push(("decoder.w".into(), Group::Decoder, self.decoder.w.view_mut().into_dyn()));
        out.push(("decoder.b".into(), Group::Decoder, self.decoder.b.view_mut().into_dyn()));
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, _, mut t) in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        let conv1 = |a: &Array1<T>| a.mapv(|v| U::lit(v.as_f64()));
        let conv2 = |a: &Array2<T>| a.mapv(|v| U::lit(v.as_f64()));
        let lin = |l: &Linear<T>| Linear { w: conv2(&l.w), b: conv1(&l.b) };
        let blk = |b: &Block<T>| Block {
            linear: lin(&b.linear),
            norm: LayerNorm {
                gain: conv1(&b.norm.gain),
                bias: conv1(&b.norm.bias),
            },
        };
        NetworkParams {
            ray_encoder: self.ray_encoder.iter().map(blk).collect(),
            goal_encoder: self.goal_encoder.iter().map(blk).collect(),
            bottleneck: self.bottleneck.iter().map(blk).collect(),
            lstm: self.lstm.as_ref().map(|l| Lstm {
                w_ih: conv2(&l.w_ih),
                w_hh: conv2(&l.w_hh),
                b: conv1(&l.b),
            }),
            decoder: lin(&self.decoder),
        }
    }

    /// Zeroes the gradients of frozen groups.
    pub fn apply_mask(&mut self, mask: &FreezeMask) {
        for (_, g, mut t) in self.tensors_mut() {
            if mask.is_frozen(g) {
                t.fill(T::zero());
            }
        }
    }

    /// Shapes must match `cfg` exactly.
    pub fn check_shapes(&self, cfg: &NetworkConfig) -> Result<(), NeuralError> {
        let want = Self::zeros(cfg);
        let a = want.tensors();
        let b = self.tensors();
        if a.len() != b.len() {
            return Err(NeuralError::Config(format!("expected {} tensors, found {}", a.len(), b.len())));
        }
        for ((na, _, ta), (nb, _, tb)) in a.iter().zip(&b) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(NeuralError::Shape {
                    name: na.clone(),
                    expected: ta.shape().to_vec(),
                    found: tb.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// `d/(2L)` up to `L`, then `σ(2(d − L)/L)`.
pub fn normalize_distance<T: Real>(d: T, max_range: T) -> T {
    if d <= max_range {
        d / (T::lit(2.0) * max_range)
    } else {
        sigmoid(T::lit(2.0) * (d - max_range) / max_range)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedInput<T> {
    /// Ray distances over the ray range, in `(0, 1]`.
    pub rays_rel: Vec<T>,
    /// Unit goal direction; zero at the goal.
    pub goal_dir: Vec3<T>,
    pub goal_dist_norm: T,
}

impl<T: Real> EncodedInput<T> {
    pub fn goal_features(&self) -> [T; GOAL_FEATURES] {
        [self.goal_dir.x, self.goal_dir.y, self.goal_dir.z, self.goal_dist_norm]
    }
}

pub fn encode<T: Real>(bundle: &RayBundle, x: &Vec3<f64>, goal: &Vec3<f64>) -> EncodedInput<T> {
    encode_distances(&bundle.distances, bundle.max_range, x, goal)
}

/// [`encode`] from raw distances.
pub fn encode_distances<T: Real>(distances: &[f64], max_range: f64, x: &Vec3<f64>, goal: &Vec3<f64>) -> EncodedInput<T> {
    let d = *goal - *x;
    let dist = d.norm();
    EncodedInput {
        rays_rel: distances.iter().map(|&r| T::lit(r / max_range)).collect(),
        goal_dir: d.normalize_or_zero().cast(),
        goal_dist_norm: T::lit(normalize_distance(dist, max_range)),
    }
}

/// Index of the direction closest to `y`; lowest index on ties.
pub fn label_one_hot<T: Real>(y: &Vec3<T>, set: &DirectionSet<T>) -> Result<usize, NeuralError> {
    if !(y.norm() > T::zero()) {
        return Err(NeuralError::ZeroLabel);
    }
    let mut best = 0;
    let mut best_dot = T::neg_infinity();
    for (i, r) in set.directions.iter().enumerate() {
        let d = y.dot(r);
        if d > best_dot {
            best = i;
            best_dot = d;
        }
    }
    Ok(best)
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Softmax over all logits, then the weighted sum of the directions of the
/// `k` largest (lowest index first on ties).
pub fn decode_topk<T: Real>(logits: &[T], set: &DirectionSet<T>, k: usize) -> Vec3<T> {
    assert!(logits.len() == set.len(), "logits and directions differ in length");
    let k = k.clamp(1, logits.len());
    let p = softmax(logits);
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    let order = |a: &usize, b: &usize| logits[*b].as_f64().total_cmp(&logits[*a].as_f64()).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx.iter().fold(Vec3::zeros(), |acc, &i| acc + set.directions[i] * p[i])
}

/// `‖post − pre‖ / (‖post − pre‖ + ‖pre‖)`, 0 when both vanish.
pub fn lstm_influence<T: Real>(pre: &[T], post: &[T]) -> T {
    let diff = pre.iter().zip(post).map(|(a, b)| (*b - *a) * (*b - *a)).sum::<T>().sqrt();
    let base = pre.iter().map(|a| *a * *a).sum::<T>().sqrt();
    if diff + base > T::zero() {
        diff / (diff + base)
    } else {
        T::zero()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState<T> {
    pub h: Array2<T>,
    pub c: Array2<T>,
}

impl<T: Real> RecurrentState<T> {
    pub fn zeros(batch: usize, width: usize) -> Self {
        Self {
            h: Array2::zeros((batch, width)),
            c: Array2::zeros((batch, width)),
        }
    }

    pub fn reset(&mut self) {
        self.h.fill(T::zero());
        self.c.fill(T::zero());
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    pub logits: Vec<T>,
    /// Bottleneck output before the LSTM.
    pub pre_latent: Vec<T>,
    /// Latent fed to the decoder (equal to `pre_latent` without LSTM).
    pub post_latent: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub params: NetworkParams<T>,
}

impl<T: Real> Network<T> {
    pub fn new(config: NetworkConfig, params: NetworkParams<T>) -> Result<Self, NeuralError> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn init(config: NetworkConfig, rng: &mut Rng) -> Result<Self, NeuralError> {
        let params = NetworkParams::init(&config, rng)?;
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn eps(&self) -> T {
        T::lit(self.config.ln_eps)
    }

    fn slope(&self) -> T {
        T::lit(self.config.leaky_slope)
    }

    /// Encoders and bottleneck for a batch of rows.
    pub fn latents(&self, rays: ArrayView2<'_, T>, goal: ArrayView2<'_, T>) -> Array2<T> {
        let (eps, slope) = (self.eps(), self.slope());
        let run = |x: ArrayView2<'_, T>, blocks: &[Block<T>]| {
            let mut h = x.to_owned();
            for b in blocks {
                h = b.infer(h.view(), eps, slope);
            }
            h
        };
        let r = run(rays, &self.params.ray_encoder);
        let g = run(goal, &self.params.goal_encoder);
        let cat = concatenate(Axis(1), &[r.view(), g.view()]).expect("same batch");
        run(cat.view(), &self.params.bottleneck)
    }

    /// One step for a batch of rows; `state` must be present iff the
    /// network has an LSTM.
    pub fn forward_batch(
        &self,
        rays: ArrayView2<'_, T>,
        goal: ArrayView2<'_, T>,
        state: Option<&mut RecurrentState<T>>,
    ) -> Result<(Array2<T>, Array2<T>, Array2<T>), NeuralError> {
        if rays.ncols() != self.config.n_rays || goal.ncols() != GOAL_FEATURES || rays.nrows() != goal.nrows() {
            return Err(NeuralError::Shape {
                name: "input".into(),
                expected: vec![rays.nrows(), self.config.n_rays, GOAL_FEATURES],
                found: vec![rays.nrows(), rays.ncols(), goal.ncols()],
            });
        }
        let pre = self.latents(rays, goal);
        let post = match (&self.params.lstm, state) {
            (Some(l), Some(st)) => {
                if st.h.dim() != (pre.nrows(), l.hidden()) {
                    return Err(NeuralError::Config("recurrent state shape does not match the batch".into()));
                }
                let (h, c, _) = l.step(pre.view(), st.h.view(), st.c.view());
                let post = &pre + &h;
                st.h = h;
                st.c = c;
                post
            }
            (None, None) => pre.clone(),
            (Some(_), None) => return Err(NeuralError::Config("recurrent network needs a state".into())),
            (None, Some(_)) => return Err(NeuralError::Config("feed-forward network takes no state".into())),
        };
        let logits = self.params.decoder.forward(post.view());
        Ok((logits, pre, post))
    }

    pub fn forward(&self, input: &EncodedInput<T>, state: Option<&mut RecurrentState<T>>) -> Result<ForwardOutput<T>, NeuralError> {
        let rays = ArrayView2::from_shape((1, input.rays_rel.len()), &input.rays_rel)
            .map_err(|e| NeuralError::Config(e.to_string()))?;
        let g = input.goal_features();
        let goal = ArrayView2::from_shape((1, GOAL_FEATURES), &g).expect("static shape");
        let (logits, pre, post) = self.forward_batch(rays, goal, state)?;
        let row = |a: Array2<T>| a.row(0).to_vec();
        Ok(ForwardOutput {
            logits: row(logits),
            pre_latent: row(pre),
            post_latent: row(post),
        })
    }

    pub fn fresh_state(&self) -> Option<RecurrentState<T>> {
        self.params.lstm.as_ref().map(|l| RecurrentState::zeros(1, l.hidden()))
    }
}

/// Flattened rows ready for [`Network::forward_batch`].
pub fn stack_inputs<T: Real>(inputs: &[EncodedInput<T>], n_rays: usize) -> (Array2<T>, Array2<T>) {
    let mut rays = Array2::zeros((inputs.len(), n_rays));
    let mut goal = Array2::zeros((inputs.len(), GOAL_FEATURES));
    for (i, e) in inputs.iter().enumerate() {
        rays.row_mut(i).assign(&Array1::from(e.rays_rel.clone()));
        goal.row_mut(i).assign(&Array1::from(e.goal_features().to_vec()));
    }
    (rays, goal)
}

/// Goal policy from the network's decoded direction.
pub struct LearnedPlanner<T: Real> {
    network: Arc<Network<T>>,
    set: Arc<DirectionSet<T>>,
    state: Option<RecurrentState<T>>,
    name: String,
}

impl<T: Real> LearnedPlanner<T> {
    pub fn new(network: Arc<Network<T>>) -> Self {
        let set = Arc::new(DirectionSet::halton(network.config.n_rays));
        let state = network.fresh_state();
        let name = if network.config.use_lstm { "rnn" } else { "ffn" }.to_string();
        Self {
            network,
            set,
            state,
            name,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn network(&self) -> &Arc<Network<T>> {
        &self.network
    }
}

impl<T: Real> Planner for LearnedPlanner<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {
        if let Some(s) = self.state.as_mut() {
            s.reset();
        }
    }

    fn goal_policy(&mut self, ctx: &PlannerContext<'_>) -> Result<GoalOutput, RolloutError> {
        if ctx.bundle.distances.len() != self.network.config.n_rays {
            return Err(RolloutError::Planner(format!(
                "network expects {} rays, bundle has {}",
                self.network.config.n_rays,
                ctx.bundle.distances.len()
            )));
        }
        let input = encode::<T>(ctx.bundle, &ctx.state.x, ctx.goal);
        let out = self
            .network
            .forward(&input, self.state.as_mut())
            .map_err(|e| RolloutError::Planner(e.to_string()))?;
        let y: Vec3<f64> = decode_topk(&out.logits, &self.set, self.network.config.k_top).cast();
        let influence = if self.network.config.use_lstm {
            lstm_influence(&out.pre_latent, &out.post_latent).as_f64()
        } else {
            0.0
        };
        Ok(GoalOutput {
            policy: learned_goal_policy(ctx.rmp, ctx.state, ctx.goal, &y),
            direction: y,
            lstm_influence: influence,
            give_up: false,
        })
    }
}
