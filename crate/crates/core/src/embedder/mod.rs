//! Trainable embedding network plus the two constraint losses.
//!
//! The network is a stack of conv/relu/avg-pool blocks followed by a dense
//! projection to the embedding space. Pairs train against a thresholded
//! distance: must-link pairs are pulled to 0, cannot-link pairs are pushed
//! to the saturation point alpha, and pairs already beyond alpha stop
//! producing gradient. Triplets train on L2-normalized embeddings with
//! semi-hard negative mining inside the batch.

mod adam;
mod checkpoint;
pub mod layers;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constraints::{PairBatch, TripletBatch};
use crate::features::FeatureMap;
use crate::{Error, Result};
use layers::{Layer, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub out_ch: usize,
    pub kernel: usize,
    pub pool: usize,
}

/// Architecture description: single-channel input of `input` rows/columns,
/// conv blocks, then a dense head projecting to `embed_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input: (usize, usize),
    pub blocks: Vec<BlockConfig>,
    pub embed_dim: usize,
    /// The dense head is initialized at this fraction of its usual scale so
    /// a fresh network starts with small embedding spread (distances well
    /// below typical saturation points).
    #[serde(default = "default_head_scale")]
    pub head_init_scale: f64,
}

fn default_head_scale() -> f64 {
    0.05
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input: (100, 91),
            blocks: vec![
                BlockConfig { out_ch: 4, kernel: 3, pool: 3 },
                BlockConfig { out_ch: 8, kernel: 3, pool: 2 },
                BlockConfig { out_ch: 8, kernel: 3, pool: 2 },
            ],
            embed_dim: 12,
            head_init_scale: default_head_scale(),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input.0 == 0 || self.input.1 == 0 {
            return Err(Error::Config("network input must be non-empty".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if !(self.head_init_scale > 0.0 && self.head_init_scale <= 1.0) {
            return Err(Error::Config(format!(
                "head_init_scale {} outside (0, 1]",
                self.head_init_scale
            )));
        }
        for b in &self.blocks {
            if b.out_ch == 0 || b.kernel == 0 || b.pool == 0 {
                return Err(Error::Config("block sizes must be positive".into()));
            }
        }
        self.flat_dim()?;
        Ok(())
    }

    /// Width of the flattened activation entering the dense head.
    pub fn flat_dim(&self) -> Result<usize> {
        let (mut c, mut h, mut w) = (1usize, self.input.0, self.input.1);
        for b in &self.blocks {
            if h < b.kernel || w < b.kernel {
                return Err(Error::Config(format!(
                    "{}x{} kernel does not fit the {}x{} activation",
                    b.kernel, b.kernel, h, w
                )));
            }
            h -= b.kernel - 1;
            w -= b.kernel - 1;
            c = b.out_ch;
            h /= b.pool;
            w /= b.pool;
            if h == 0 || w == 0 {
                return Err(Error::Config(format!(
                    "pooling by {} collapses the activation to zero size",
                    b.pool
                )));
            }
        }
        Ok(c * h * w)
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetConfig,
    layers: Vec<Layer>,
    /// (offset, len) into the flat parameter vector, one entry per layer.
    param_spans: Vec<(usize, usize)>,
    n_params: usize,
}

impl Network {
    /// Build and randomly initialize a network: conv weights at He scale,
    /// the dense head damped by `head_init_scale`, biases zero.
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, std: f64| -> Vec<f64> {
            let dist = Normal::new(0.0, std).expect("std is finite and positive");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        let mut layers = Vec::new();
        let mut in_ch = 1usize;
        for b in &cfg.blocks {
            let fan_in = in_ch * b.kernel * b.kernel;
            let weight = Array2::from_shape_vec(
                (b.out_ch, fan_in),
                draw(b.out_ch * fan_in, (2.0 / fan_in as f64).sqrt()),
            )
            .expect("shape matches draw length");
            layers.push(Layer::Conv2d {
                in_ch,
                out_ch: b.out_ch,
                kh: b.kernel,
                kw: b.kernel,
                weight,
                bias: vec![0.0; b.out_ch],
            });
            layers.push(Layer::Relu);
            layers.push(Layer::AvgPool2d { kh: b.pool, kw: b.pool });
            in_ch = b.out_ch;
        }
        layers.push(Layer::Flatten);
        let flat = cfg.flat_dim()?;
        let std = cfg.head_init_scale * (2.0 / flat as f64).sqrt();
        let weight =
            Array2::from_shape_vec((cfg.embed_dim, flat), draw(cfg.embed_dim * flat, std))
                .expect("shape matches draw length");
        layers.push(Layer::Dense {
            in_dim: flat,
            out_dim: cfg.embed_dim,
            weight,
            bias: vec![0.0; cfg.embed_dim],
        });
        let mut param_spans = Vec::with_capacity(layers.len());
        let mut off = 0;
        for l in &layers {
            let n = l.n_params();
            param_spans.push((off, n));
            off += n;
        }
        Ok(Self { cfg: cfg.clone(), layers, param_spans, n_params: off })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params);
        for l in &self.layers {
            l.append_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::ShapeMismatch(format!(
                "network has {} parameters, got {}",
                self.n_params,
                params.len()
            )));
        }
        for (l, (off, n)) in self.layers.iter_mut().zip(&self.param_spans) {
            l.load_params(&params[*off..off + n]);
        }
        Ok(())
    }

    fn input_tensor(&self, fm: &FeatureMap) -> Result<Tensor> {
        let (h, w) = fm.shape();
        if (h, w) != self.cfg.input {
            return Err(Error::ShapeMismatch(format!(
                "network expects {}x{} features, got {h}x{w}",
                self.cfg.input.0, self.cfg.input.1
            )));
        }
        Ok(Tensor::Chw { data: fm.data.iter().copied().collect(), c: 1, h, w })
    }

    pub fn forward(&self, fm: &FeatureMap) -> Result<Vec<f64>> {
        let mut t = self.input_tensor(fm)?;
        for l in &self.layers {
            t = l.forward(&t)?;
        }
        Ok(t.data().to_vec())
    }

    /// Embed a batch into a (batch, embed_dim) matrix.
    pub fn forward_batch(&self, fms: &[FeatureMap]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((fms.len(), self.embed_dim()));
        for (b, fm) in fms.iter().enumerate() {
            let e = self.forward(fm)?;
            for (slot, v) in out.row_mut(b).iter_mut().zip(&e) {
                *slot = *v;
            }
        }
        Ok(out)
    }

    /// Forward pass that keeps each layer's input for a later backward pass.
    fn forward_cached(&self, fm: &FeatureMap) -> Result<(Vec<f64>, Vec<Tensor>)> {
        let mut t = self.input_tensor(fm)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let next = l.forward(&t)?;
            caches.push(t);
            t = next;
        }
        Ok((t.data().to_vec(), caches))
    }

    /// Accumulate parameter gradients for one sample given the gradient of
    /// the loss with respect to its embedding.
    fn backward(&self, caches: &[Tensor], d_embed: &[f64], grads: &mut [f64]) -> Result<()> {
        if grads.len() != self.n_params {
            return Err(Error::ShapeMismatch(format!(
                "gradient buffer holds {}, network has {} parameters",
                grads.len(),
                self.n_params
            )));
        }
        let mut dy = Tensor::Flat(d_embed.to_vec());
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (off, n) = self.param_spans[i];
            dy = l.backward(&caches[i], &dy, &mut grads[off..off + n])?;
        }
        Ok(())
    }
}

/// Saturating ramp: distances below `alpha` pass through, anything at or
/// beyond `alpha` returns `alpha` (and contributes no gradient).
pub fn thresholded_relu(x: f64, alpha: f64) -> f64 {
    x.clamp(0.0, alpha)
}

pub fn embedding_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Siamese output for a pair: the embedding distance clamped into
/// [0, alpha].
pub fn siamese_distance(
    net: &Network,
    a: &FeatureMap,
    b: &FeatureMap,
    alpha: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArg(format!("alpha {alpha} must be positive")));
    }
    let ea = net.forward(a)?;
    let eb = net.forward(b)?;
    Ok(thresholded_relu(embedding_distance(&ea, &eb), alpha))
}

/// Mean squared error between thresholded pair distances and their 0/alpha
/// targets, with gradients. Pairs saturated at alpha and pairs at exactly
/// zero distance contribute loss but no gradient.
pub fn pairwise_loss_and_grads(
    net: &Network,
    batch: &PairBatch,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("pair batch is empty".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArg(format!("alpha {alpha} must be positive")));
    }
    let mut grads = vec![0.0; net.n_params()];
    let mut loss = 0.0;
    let inv_b = 1.0 / batch.len() as f64;
    for b in 0..batch.len() {
        let (e1, c1) = net.forward_cached(&batch.left[b])?;
        let (e2, c2) = net.forward_cached(&batch.right[b])?;
        let diff: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| a - b).collect();
        let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = thresholded_relu(d, alpha);
        let t = batch.targets[b];
        loss += (s - t) * (s - t) * inv_b;
        if d > 0.0 && d < alpha {
            let scale = 2.0 * (s - t) * inv_b / d;
            let g: Vec<f64> = diff.iter().map(|v| v * scale).collect();
            net.backward(&c1, &g, &mut grads)?;
            let g_neg: Vec<f64> = g.iter().map(|v| -v).collect();
            net.backward(&c2, &g_neg, &mut grads)?;
        }
    }
    Ok((loss, grads))
}

/// One optimizer step on a pair batch; returns the batch loss.
pub fn pairwise_step(
    net: &mut Network,
    batch: &PairBatch,
    alpha: f64,
    adam: &mut AdamState,
) -> Result<f64> {
    let (loss, grads) = pairwise_loss_and_grads(net, batch, alpha)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: adam.t() + 1 });
    }
    let mut params = net.params();
    adam.update(&mut params, &grads)?;
    net.set_params(&params)?;
    Ok(loss)
}

/// Pick a negative for an anchor-positive pair: the closest candidate whose
/// distance falls inside (d_ap, d_ap + margin); if the band is empty, the
/// closest candidate overall. Candidates are (tag, distance) tuples and the
/// chosen tag comes back.
pub fn select_semi_hard(d_ap: f64, candidates: &[(usize, f64)], margin: f64) -> Option<usize> {
    let mut band: Option<(usize, f64)> = None;
    let mut global: Option<(usize, f64)> = None;
    for &(tag, d) in candidates {
        if global.map_or(true, |(_, gd)| d < gd) {
            global = Some((tag, d));
        }
        if d > d_ap && d < d_ap + margin && band.map_or(true, |(_, bd)| d < bd) {
            band = Some((tag, d));
        }
    }
    band.or(global).map(|(tag, _)| tag)
}

fn l2_normalized(e: &[f64]) -> Vec<f64> {
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return vec![0.0; e.len()];
    }
    e.iter().map(|v| v / norm).collect()
}

/// Gradient through u = e / |e|: de = (g - (g.u) u) / |e|.
fn l2_normalize_backward(e: &[f64], g: &[f64]) -> Vec<f64> {
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return vec![0.0; e.len()];
    }
    let u: Vec<f64> = e.iter().map(|v| v / norm).collect();
    let gu: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
    g.iter().zip(&u).map(|(gv, uv)| (gv - gu * uv) / norm).collect()
}

/// Hinge loss max(0, d(a,p) - d(a,n) + margin) over distances of
/// L2-normalized embeddings with in-batch semi-hard negative mining. Rows
/// whose hinge is inactive contribute nothing.
pub fn triplet_loss_and_grads(
    net: &Network,
    batch: &TripletBatch,
    margin: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("triplet batch is empty".into()));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::InvalidArg(format!("margin {margin} must be positive")));
    }
    let bsz = batch.len();
    let embed = |fms: &[FeatureMap]| -> Result<Vec<Vec<f64>>> {
        fms.iter().map(|f| net.forward(f)).collect()
    };
    let ea = embed(&batch.anchor)?;
    let ep = embed(&batch.positive)?;
    let en = embed(&batch.negative)?;
    let ua: Vec<Vec<f64>> = ea.iter().map(|e| l2_normalized(e)).collect();
    let up: Vec<Vec<f64>> = ep.iter().map(|e| l2_normalized(e)).collect();
    let un: Vec<Vec<f64>> = en.iter().map(|e| l2_normalized(e)).collect();

    let dim = net.embed_dim();
    let mut dua = vec![vec![0.0; dim]; bsz];
    let mut dup = vec![vec![0.0; dim]; bsz];
    let mut dun = vec![vec![0.0; dim]; bsz];
    let mut loss = 0.0;
    let inv_b = 1.0 / bsz as f64;
    for b in 0..bsz {
        let d_ap = embedding_distance(&ua[b], &up[b]);
        let candidates: Vec<(usize, f64)> = (0..bsz)
            .filter(|&m| batch.negative_label[m] != batch.anchor_label[b])
            .map(|m| (m, embedding_distance(&ua[b], &un[m])))
            .collect();
        let Some(sel) = select_semi_hard(d_ap, &candidates, margin) else { continue };
        let d_an = embedding_distance(&ua[b], &un[sel]);
        let l = d_ap - d_an + margin;
        if l <= 0.0 {
            continue;
        }
        loss += l * inv_b;
        // d(d_ap)/d(ua) = (ua - up) / d_ap; zero-distance pairs get the
        // subgradient 0.
        for k in 0..dim {
            let g_ap = if d_ap > 0.0 { (ua[b][k] - up[b][k]) / d_ap * inv_b } else { 0.0 };
            let g_an = if d_an > 0.0 { (ua[b][k] - un[sel][k]) / d_an * inv_b } else { 0.0 };
            dua[b][k] += g_ap - g_an;
            dup[b][k] -= g_ap;
            dun[sel][k] += g_an;
        }
    }

    let mut grads = vec![0.0; net.n_params()];
    for (fms, es, dus) in
        [(&batch.anchor, &ea, &dua), (&batch.positive, &ep, &dup), (&batch.negative, &en, &dun)]
    {
        for b in 0..bsz {
            if dus[b].iter().all(|&v| v == 0.0) {
                continue;
            }
            let de = l2_normalize_backward(&es[b], &dus[b]);
            if de.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (_, caches) = net.forward_cached(&fms[b])?;
            net.backward(&caches, &de, &mut grads)?;
        }
    }
    Ok((loss, grads))
}

/// One optimizer step on a triplet batch; returns the batch loss.
pub fn triplet_step(
    net: &mut Network,
    batch: &TripletBatch,
    margin: f64,
    adam: &mut AdamState,
) -> Result<f64> {
    let (loss, grads) = triplet_loss_and_grads(net, batch, margin)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: adam.t() + 1 });
    }
    let mut params = net.params();
    adam.update(&mut params, &grads)?;
    net.set_params(&params)?;
    Ok(loss)
}

/// Compare analytic gradients against central differences over every
/// parameter. Returns the worst relative mismatch
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-4).
pub fn grad_check(
    net: &Network,
    eval: impl Fn(&Network) -> Result<(f64, Vec<f64>)>,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArg(format!("eps {eps} must be positive")));
    }
    let (_, analytic) = eval(net)?;
    let base = net.params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + eps;
        probe.set_params(&p)?;
        let (lp, _) = eval(&probe)?;
        p[i] = base[i] - eps;
        probe.set_params(&p)?;
        let (lm, _) = eval(&probe)?;
        let numeric = (lp - lm) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs()
            / analytic[i].abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    Ok(worst)
}
