//! Small fully-connected network with ReLU hidden layers and an L2-normalized
//! output, trained by hand-rolled backprop with decoupled-weight-decay Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Divisor floor inside the output normalization; rows shorter than this are
/// scaled by `1/NORM_EPS` instead of being normalized, which keeps the
/// all-zero network finite and gradient-safe.
pub const NORM_EPS: f64 = 1e-12;

/// Multi-layer perceptron `dims[0] -> dims[1] -> ... -> dims.last()`, ReLU
/// after every hidden layer, final output L2-normalized row-wise.
#[derive(Clone, Debug)]
pub struct Mlp {
    weights: Vec<Array2<f64>>, // [l]: dims[l] x dims[l+1]
    biases: Vec<Array1<f64>>,
}

/// Forward-pass intermediates needed by the backward pass.
pub struct ForwardCache {
    /// Post-activation of every layer, `activations[0]` being the input.
    activations: Vec<Array2<f64>>,
    /// Pre-normalization output of the last layer.
    pre_norm: Array2<f64>,
    /// Row norms of `pre_norm`, floored at [`NORM_EPS`].
    row_scale: Vec<f64>,
    /// Normalized output.
    pub output: Array2<f64>,
}

impl Mlp {
    /// Fresh network with weights uniform in
    /// `[-init_scale/sqrt(fan_in), +init_scale/sqrt(fan_in)]` and zero
    /// biases. The zero biases keep the network positively homogeneous in
    /// its input at initialization.
    pub fn new(dims: &[usize], init_scale: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParams(format!(
                "network needs at least input and output layers, got {dims:?}"
            )));
        }
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let a = init_scale / (dims[l] as f64).sqrt();
            let w = Array2::from_shape_fn((dims[l], dims[l + 1]), |_| {
                rng.gen::<f64>() * 2.0 * a - a
            });
            weights.push(w);
            biases.push(Array1::zeros(dims[l + 1]));
        }
        Ok(Self { weights, biases })
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.ncols())
    }

    /// Normalized features for a batch of inputs.
    pub fn features(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).output
    }

    /// Forward pass retaining intermediates for [`Mlp::backward`].
    pub fn forward(&self, x: ArrayView2<f64>) -> ForwardCache {
        let n_layers = self.n_layers();
        let mut activations = Vec::with_capacity(n_layers);
        activations.push(x.to_owned());
        let mut cur = x.to_owned();
        for l in 0..n_layers {
            let mut z = cur.dot(&self.weights[l]) + &self.biases[l];
            if l + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
                activations.push(z.clone());
                cur = z;
            } else {
                let mut output = z.clone();
                let mut row_scale = Vec::with_capacity(output.nrows());
                for mut row in output.rows_mut() {
                    let norm = row.dot(&row).sqrt();
                    let scale = norm.max(NORM_EPS);
                    row /= scale;
                    row_scale.push(scale);
                }
                return ForwardCache {
                    activations,
                    pre_norm: z,
                    row_scale,
                    output,
                };
            }
        }
        unreachable!("network has at least one layer");
    }

    /// Backpropagates `d_output` (gradient w.r.t. the normalized features)
    /// through the normalization and the affine/ReLU stack.
    pub fn backward(&self, cache: &ForwardCache, d_output: &Array2<f64>) -> Gradients {
        let n_layers = self.n_layers();
        // through row normalization: dz = (dy - (dy . y) y) / r, or dy / r on
        // the epsilon-guard path where y = z / NORM_EPS
        let mut d_z = d_output.clone();
        for (i, mut row) in d_z.rows_mut().into_iter().enumerate() {
            let r = cache.row_scale[i];
            let pre = cache.pre_norm.row(i);
            let pre_norm_val = pre.dot(&pre).sqrt();
            if pre_norm_val >= NORM_EPS {
                let y = cache.output.row(i);
                let along = row.dot(&y);
                for (d, &yv) in row.iter_mut().zip(y) {
                    *d = (*d - along * yv) / r;
                }
            } else {
                for d in row.iter_mut() {
                    *d /= NORM_EPS;
                }
            }
        }

        let mut d_weights = Vec::with_capacity(n_layers);
        let mut d_biases = Vec::with_capacity(n_layers);
        for l in (0..n_layers).rev() {
            let input = &cache.activations[l];
            d_weights.push(input.t().dot(&d_z));
            d_biases.push(d_z.sum_axis(Axis(0)));
            if l > 0 {
                let mut d_prev = d_z.dot(&self.weights[l].t());
                // ReLU mask: activations[l] is post-ReLU
                d_prev.zip_mut_with(&cache.activations[l], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                d_z = d_prev;
            }
        }
        d_weights.reverse();
        d_biases.reverse();
        Gradients {
            weights: d_weights,
            biases: d_biases,
        }
    }

    fn param_slots(&self) -> Vec<(usize, bool, usize)> {
        let mut slots = Vec::new();
        for l in 0..self.n_layers() {
            for i in 0..self.weights[l].len() {
                slots.push((l, false, i));
            }
            for i in 0..self.biases[l].len() {
                slots.push((l, true, i));
            }
        }
        slots
    }

    fn nudge(&mut self, slot: (usize, bool, usize), delta: f64) {
        let (l, is_bias, i) = slot;
        if is_bias {
            self.biases[l][i] += delta;
        } else {
            *self.weights[l].as_slice_mut().unwrap().get_mut(i).unwrap() += delta;
        }
    }
}

/// Per-parameter gradients matching an [`Mlp`]'s layout.
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Adam with decoupled weight decay (the update first shrinks the parameter
/// by `lr * weight_decay`, then applies the bias-corrected adaptive step).
#[derive(Clone, Debug)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl AdamW {
    pub fn new(mlp: &Mlp, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m_w: mlp.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: mlp.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: mlp.biases.iter().map(|b| Array1::zeros(b.dim())).collect(),
            v_b: mlp.biases.iter().map(|b| Array1::zeros(b.dim())).collect(),
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &Gradients, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for l in 0..mlp.n_layers() {
            Self::update(
                mlp.weights[l].as_slice_mut().unwrap(),
                grads.weights[l].as_slice().unwrap(),
                self.m_w[l].as_slice_mut().unwrap(),
                self.v_w[l].as_slice_mut().unwrap(),
                lr,
                self.weight_decay,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            Self::update(
                mlp.biases[l].as_slice_mut().unwrap(),
                grads.biases[l].as_slice().unwrap(),
                self.m_b[l].as_slice_mut().unwrap(),
                self.v_b[l].as_slice_mut().unwrap(),
                lr,
                self.weight_decay,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn update(
        params: &mut [f64],
        grads: &[f64],
        m: &mut [f64],
        v: &mut [f64],
        lr: f64,
        wd: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        bc1: f64,
        bc2: f64,
    ) {
        for i in 0..params.len() {
            params[i] *= 1.0 - lr * wd;
            m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[inline]
fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    let mut dst_chunks = dst.chunks_exact_mut(4);
    let mut src_chunks = src.chunks_exact(4);
    for (d, s) in dst_chunks.by_ref().zip(src_chunks.by_ref()) {
        d[0] += scale * s[0];
        d[1] += scale * s[1];
        d[2] += scale * s[2];
        d[3] += scale * s[3];
    }
    for (d, s) in dst_chunks
        .into_remainder()
        .iter_mut()
        .zip(src_chunks.remainder())
    {
        *d += scale * s;
    }
}

/// Minibatch contrastive loss on normalized features.
///
/// Rows `0..B` of `y` are anchors, rows `B..2B` their paired positives;
/// `negatives[i]` lists the rows serving as anchor `i`'s negatives. Returns
/// the mean per-anchor loss and its gradient w.r.t. `y`.
pub fn minibatch_contrastive_loss(
    y: &Array2<f64>,
    negatives: &[Vec<usize>],
) -> (f64, Array2<f64>) {
    let b = y.nrows() / 2;
    assert_eq!(negatives.len(), b, "one negative list per anchor");
    let h = y.ncols();
    let ys = y.as_slice().expect("contiguous feature matrix");
    let row = |i: usize| &ys[i * h..(i + 1) * h];
    let dot = crate::losses::dot_unrolled;

    let mut d_y = Array2::<f64>::zeros(y.dim());
    let dys = d_y.as_slice_mut().expect("contiguous gradient matrix");
    let inv_b = 1.0 / b as f64;
    let mut total = 0.0;
    let mut logits: Vec<f64> = Vec::new();
    for i in 0..b {
        let anchor = row(i);
        let pos = b + i;
        logits.clear();
        logits.push(dot(anchor, row(pos)));
        for &nrow in &negatives[i] {
            debug_assert!(nrow != i && nrow != pos, "negative equals the pair");
            logits.push(dot(anchor, row(nrow)));
        }
        let u_pos = logits[0];
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for z in logits.iter_mut() {
            *z = (*z - m).exp();
            sum += *z;
        }
        total += m + sum.ln() - u_pos;
        // logit gradients: softmax - e_0, scaled by 1/B
        for (slot, z) in logits.iter().enumerate() {
            let g = (z / sum - if slot == 0 { 1.0 } else { 0.0 }) * inv_b;
            let partner = if slot == 0 { pos } else { negatives[i][slot - 1] };
            axpy(&mut dys[i * h..(i + 1) * h], g, &ys[partner * h..(partner + 1) * h]);
            axpy(
                &mut dys[partner * h..(partner + 1) * h],
                g,
                &ys[i * h..(i + 1) * h],
            );
        }
    }
    (total * inv_b, d_y)
}

/// Validates the analytic minibatch gradient against central finite
/// differences on a tiny network (dims 2-5-5-4, three pairs, K = 2).
/// Returns the maximum relative error across all parameters.
///
/// Finite differences are meaningless across ReLU kinks or inside the
/// normalization guard, so seeds whose forward pass leaves pre-activations
/// within the differencing step of a kink are skipped deterministically
/// (seed, seed+1, ... until a clean configuration appears).
pub fn mlp_gradient_check(seed: u64) -> f64 {
    const DIMS: [usize; 4] = [2, 5, 5, 4];
    const PAIRS: usize = 3;
    const K: usize = 2;
    const STEP: f64 = 1e-5;
    // large init keeps the pre-normalization rows well away from the origin,
    // where 1/r^2 curvature would dominate the FD truncation error
    const INIT_SCALE: f64 = 2.0;

    let mut attempt = seed;
    loop {
        assert!(
            attempt < seed.wrapping_add(1000),
            "no kink-free configuration near seed {seed}"
        );
        let mut rng = crate::rng::substream(attempt, 0);
        let mlp = Mlp::new(&DIMS, INIT_SCALE, &mut rng).unwrap();
        let x = Array2::from_shape_fn((2 * PAIRS, DIMS[0]), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let negatives: Vec<Vec<usize>> = (0..PAIRS)
            .map(|i| {
                let mut rows = Vec::with_capacity(K);
                while rows.len() < K {
                    let r = rng.gen_range(0..2 * PAIRS);
                    if r != i && r != PAIRS + i && !rows.contains(&r) {
                        rows.push(r);
                    }
                }
                rows
            })
            .collect();

        if !kink_free(&mlp, &x) {
            attempt += 1;
            continue;
        }

        let loss_of = |net: &Mlp| -> f64 {
            let cache = net.forward(x.view());
            minibatch_contrastive_loss(&cache.output, &negatives).0
        };
        let cache = mlp.forward(x.view());
        let (_, d_y) = minibatch_contrastive_loss(&cache.output, &negatives);
        let analytic = mlp.backward(&cache, &d_y);

        let mut worst = 0.0f64;
        for slot in mlp.param_slots() {
            let mut plus = mlp.clone();
            plus.nudge(slot, STEP);
            let mut minus = mlp.clone();
            minus.nudge(slot, -STEP);
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * STEP);
            let (l, is_bias, i) = slot;
            let a = if is_bias {
                analytic.biases[l][i]
            } else {
                analytic.weights[l].as_slice().unwrap()[i]
            };
            let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        return worst;
    }
}

/// True when every hidden pre-activation is outside the FD step's reach of
/// the ReLU kink and every output row norm is large enough that the
/// normalization's curvature (which scales like 1/r^2) keeps the central
/// difference's truncation error well below the pass threshold.
fn kink_free(mlp: &Mlp, x: &Array2<f64>) -> bool {
    const KINK_MARGIN: f64 = 1e-3;
    const NORM_MARGIN: f64 = 0.1;
    let n_layers = mlp.n_layers();
    let mut cur = x.clone();
    for l in 0..n_layers {
        let z = cur.dot(&mlp.weights[l]) + &mlp.biases[l];
        if l + 1 < n_layers {
            if z.iter().any(|&v| v.abs() < KINK_MARGIN) {
                return false;
            }
            cur = z.mapv(|v| v.max(0.0));
        } else {
            for r in z.rows() {
                if r.dot(&r).sqrt() < NORM_MARGIN {
                    return false;
                }
            }
        }
    }
    true
}
