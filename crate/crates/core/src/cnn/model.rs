use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{
    avgpool2_backward, avgpool2_forward, batch_moments, bn_relu_backward, bn_relu_forward, conv_backward, conv_forward,
    maxpool_forward, BnStats, Conv, View,
};
use super::{Batch, CnnError, DenseNetConfig};
use crate::rng::TaskRng;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BnParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> BnParams<T> {
    fn identity(c: usize) -> Self {
        BnParams {
            gamma: vec![T::one(); c],
            beta: vec![T::zero(); c],
        }
    }
}

/// Trainable arrays. The same shape holds gradients and momentum buffers.
///
/// Convolutions are ordered stem, dense layers block by block, then
/// transitions; batch norms are ordered stem, dense layers, transitions,
/// final.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Weights<T> {
    pub convs: Vec<Vec<T>>,
    pub bns: Vec<BnParams<T>>,
    /// `[2, final_channels]`
    pub fc_w: Vec<T>,
    pub fc_b: Vec<T>,
}

pub type Gradients<T> = Weights<T>;

impl<T: Scalar> Weights<T> {
    pub fn zeros_like(&self) -> Self {
        let z = |v: &Vec<T>| vec![T::zero(); v.len()];
        Weights {
            convs: self.convs.iter().map(z).collect(),
            bns: self
                .bns
                .iter()
                .map(|b| BnParams {
                    gamma: z(&b.gamma),
                    beta: z(&b.beta),
                })
                .collect(),
            fc_w: z(&self.fc_w),
            fc_b: z(&self.fc_b),
        }
    }

    /// Every array with a stable name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = Vec::new();
        for (i, w) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), w));
        }
        for (i, b) in self.bns.iter().enumerate() {
            out.push((format!("bn{i}.gamma"), &b.gamma));
            out.push((format!("bn{i}.beta"), &b.beta));
        }
        out.push(("fc.weight".into(), &self.fc_w));
        out.push(("fc.bias".into(), &self.fc_b));
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = self.convs.iter_mut().collect();
        for b in &mut self.bns {
            out.push(&mut b.gamma);
            out.push(&mut b.beta);
        }
        out.push(&mut self.fc_w);
        out.push(&mut self.fc_b);
        out
    }

    pub fn len(&self) -> usize {
        self.named().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm(&self) -> T {
        self.named()
            .iter()
            .flat_map(|(_, a)| a.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Parameters plus batch-norm running statistics. `version` advances on
/// every weight update and invalidates older activation caches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DenseNet<T> {
    pub config: DenseNetConfig,
    pub weights: Weights<T>,
    pub running: Vec<RunningStats<T>>,
    #[serde(default)]
    pub version: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

struct Geometry {
    stem: Conv,
    pool_len: usize,
    /// Per block: (input channels, length, dense conv geometries).
    blocks: Vec<(usize, usize, Vec<Conv>)>,
    transitions: Vec<Conv>,
    final_channels: usize,
    final_len: usize,
}

fn geometry(cfg: &DenseNetConfig) -> Geometry {
    let stem = Conv {
        c_in: cfg.input_channels,
        c_out: cfg.stem_channels,
        k: cfg.stem_kernel,
        stride: cfg.stem_stride,
        pad: cfg.stem_padding,
        l_in: cfg.input_length,
        l_out: cfg.stem_length(),
    };
    let lens = cfg.block_lengths();
    let cins = cfg.block_input_channels();
    let g = cfg.growth_rate;
    let mut blocks = Vec::new();
    let mut transitions = Vec::new();
    for (bi, &layers) in cfg.blocks.iter().enumerate() {
        let (c0, len) = (cins[bi], lens[bi]);
        let convs = (0..layers)
            .map(|j| Conv {
                c_in: c0 + j * g,
                c_out: g,
                k: 3,
                stride: 1,
                pad: 1,
                l_in: len,
                l_out: len,
            })
            .collect();
        blocks.push((c0, len, convs));
        if bi + 1 < cfg.blocks.len() {
            let c = c0 + layers * g;
            transitions.push(Conv {
                c_in: c,
                c_out: cfg.transition_channels(c),
                k: 1,
                stride: 1,
                pad: 0,
                l_in: len,
                l_out: len,
            });
        }
    }
    Geometry {
        stem,
        pool_len: lens[0],
        blocks,
        transitions,
        final_channels: cfg.final_channels(),
        final_len: cfg.final_length(),
    }
}

impl<T: Scalar> DenseNet<T> {
    /// Weights uniform in `±sqrt(6 / fan_in)`, batch norm at identity,
    /// classifier bias zero.
    pub fn init(config: DenseNetConfig, rng: &mut TaskRng) -> Result<Self, CnnError> {
        config.validate()?;
        let geo = geometry(&config);
        let mut uniform = |n: usize, fan_in: usize| -> Vec<T> {
            let b = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| T::lit(rng.random_range(-b..b))).collect()
        };
        let mut convs = Vec::new();
        let mut bn_channels = Vec::new();
        let s = &geo.stem;
        convs.push(uniform(s.c_out * s.c_in * s.k, s.c_in * s.k));
        bn_channels.push(s.c_out);
        for (_, _, layers) in &geo.blocks {
            for c in layers {
                convs.push(uniform(c.c_out * c.c_in * c.k, c.c_in * c.k));
                bn_channels.push(c.c_in);
            }
        }
        for t in &geo.transitions {
            convs.push(uniform(t.c_out * t.c_in, t.c_in));
            bn_channels.push(t.c_in);
        }
        bn_channels.push(geo.final_channels);
        let fc_w = uniform(2 * geo.final_channels, geo.final_channels);
        Ok(DenseNet {
            weights: Weights {
                convs,
                bns: bn_channels.iter().map(|&c| BnParams::identity(c)).collect(),
                fc_w,
                fc_b: vec![T::zero(); 2],
            },
            running: bn_channels
                .iter()
                .map(|&c| RunningStats {
                    mean: vec![T::zero(); c],
                    var: vec![T::one(); c],
                })
                .collect(),
            config,
            version: 0,
        })
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates (unbiased variance).
    pub fn absorb_batch_stats(&mut self, cache: &ForwardCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = T::lit(self.config.bn_momentum);
        for (run, st) in self.running.iter_mut().zip(cache.bn_stats()) {
            let cnt = st.count;
            let unbias = if cnt > 1 {
                T::from_usize_lossy(cnt) / T::from_usize_lossy(cnt - 1)
            } else {
                T::one()
            };
            for c in 0..run.mean.len() {
                run.mean[c] = (T::one() - m) * run.mean[c] + m * st.mean[c];
                run.var[c] = (T::one() - m) * run.var[c] + m * st.batch_var[c] * unbias;
            }
        }
    }

    /// `theta -= lr * step` and a version bump.
    pub fn apply_step(&mut self, step: &Weights<T>, lr: T) {
        for (p, s) in self.weights.arrays_mut().into_iter().zip(step.named()) {
            for (v, &d) in p.iter_mut().zip(s.1) {
                *v -= lr * d;
            }
        }
        self.version += 1;
    }

    pub fn mark_modified(&mut self) {
        self.version += 1;
    }
}

#[derive(Clone, Debug)]
struct LayerCache<T> {
    stats: BnStats<T>,
    /// ReLU(BN(input)), dense `[n, c_in, len]`.
    act: Vec<T>,
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    /// Concatenation of block input and every layer output.
    buffer: Vec<T>,
    channels: usize,
    c0: usize,
    len: usize,
    layers: Vec<LayerCache<T>>,
    transition: Option<(LayerCache<T>, usize)>, // (bn+relu cache, output channels)
}

/// Activations recorded by [`forward`] for [`backward`] and Grad-CAM.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub version: u64,
    pub mode: Mode,
    pub n: usize,
    input: Vec<T>,
    stem_out: Vec<T>,
    stem: LayerCache<T>,
    pool_arg: Vec<usize>,
    blocks: Vec<BlockCache<T>>,
    final_layer: LayerCache<T>,
    pooled: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub(crate) fn bn_stats(&self) -> Vec<&BnStats<T>> {
        let mut v = vec![&self.stem.stats];
        for b in &self.blocks {
            v.extend(b.layers.iter().map(|l| &l.stats));
        }
        for b in &self.blocks {
            if let Some((t, _)) = &b.transition {
                v.push(&t.stats);
            }
        }
        v.push(&self.final_layer.stats);
        v
    }

    /// The explained feature map `A` (final batch norm and ReLU applied),
    /// `[n, channels, length]`.
    pub fn final_activations(&self) -> &[T] {
        &self.final_layer.act
    }

    /// Whether two passes took the same branch at every ReLU and max pool,
    /// i.e. both lie on the same linear piece of the network.
    pub fn same_pattern(&self, other: &ForwardCache<T>) -> bool {
        self.pool_arg == other.pool_arg
            && self
                .activations()
                .iter()
                .zip(other.activations())
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (*x > T::zero()) == (*y > T::zero())))
    }

    fn activations(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = vec![&self.stem.act, &self.final_layer.act];
        for b in &self.blocks {
            v.extend(b.layers.iter().map(|l| l.act.as_slice()));
            if let Some((t, _)) = &b.transition {
                v.push(&t.act);
            }
        }
        v
    }

    /// Global-average-pooled features `[n, channels]`.
    pub fn pooled(&self) -> &[T] {
        &self.pooled
    }
}

pub struct ForwardOutput<T> {
    /// `[n]` pairs of (non-ARDS, ARDS) logits.
    pub logits: Vec<[T; 2]>,
    pub cache: ForwardCache<T>,
}

fn bn_stage<T: Scalar>(x: View<'_, T>, bn: &BnParams<T>, run: &RunningStats<T>, mode: Mode, eps: T) -> LayerCache<T> {
    let (mean, var) = match mode {
        Mode::Train => batch_moments(x),
        Mode::Eval => (run.mean.clone(), run.var.clone()),
    };
    let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let stats = BnStats {
        mean,
        inv_std,
        batch_var: if mode == Mode::Train { var } else { Vec::new() },
        count: x.n * x.len,
    };
    let mut act = vec![T::zero(); x.n * x.channels * x.len];
    bn_relu_forward(x, &stats, &bn.gamma, &bn.beta, &mut act);
    LayerCache { stats, act }
}

/// Runs the network on a batch. Train mode normalizes with batch statistics
/// (the caller may fold them into the running estimates with
/// [`DenseNet::absorb_batch_stats`]); eval mode uses the running estimates.
pub fn forward<T: Scalar>(net: &DenseNet<T>, x: &Batch<T>, mode: Mode) -> Result<ForwardOutput<T>, CnnError> {
    let cfg = &net.config;
    if x.channels != cfg.input_channels || x.length != cfg.input_length {
        return Err(CnnError::ShapeMismatch(format!(
            "input is {}x{}, network expects {}x{}",
            x.channels, x.length, cfg.input_channels, cfg.input_length
        )));
    }
    if x.data.len() != x.n * x.channels * x.length {
        return Err(CnnError::ShapeMismatch("batch data length".into()));
    }
    if mode == Mode::Train && x.n < 2 {
        return Err(CnnError::BatchTooSmall(x.n));
    }
    let geo = geometry(cfg);
    let w = &net.weights;
    let eps = T::lit(cfg.bn_eps);
    let n = x.n;

    let s = geo.stem;
    let mut stem_out = vec![T::zero(); n * s.c_out * s.l_out];
    conv_forward(
        &s,
        View::dense(&x.data, n, s.c_in, s.l_in),
        &w.convs[0],
        &mut stem_out,
        s.c_out,
        0,
    );
    let stem = bn_stage(
        View::dense(&stem_out, n, s.c_out, s.l_out),
        &w.bns[0],
        &net.running[0],
        mode,
        eps,
    );
    let (mut current, pool_arg) = maxpool_forward(
        &stem.act,
        n,
        s.c_out,
        s.l_out,
        cfg.pool_kernel,
        cfg.pool_stride,
        cfg.pool_padding,
        geo.pool_len,
    );

    let mut conv_i = 1;
    let mut bn_i = 1;
    let n_layers: usize = cfg.blocks.iter().sum();
    let mut trans_bn_i = 1 + n_layers;
    let mut trans_conv_i = 1 + n_layers;
    let mut blocks = Vec::with_capacity(geo.blocks.len());
    for (bi, (c0, len, convs)) in geo.blocks.iter().enumerate() {
        let (c0, len) = (*c0, *len);
        let total = c0 + convs.len() * cfg.growth_rate;
        let mut buffer = vec![T::zero(); n * total * len];
        for b in 0..n {
            buffer[b * total * len..b * total * len + c0 * len]
                .copy_from_slice(&current[b * c0 * len..(b + 1) * c0 * len]);
        }
        let mut layers = Vec::with_capacity(convs.len());
        for g in convs {
            let view = View {
                data: &buffer,
                n,
                channels: g.c_in,
                len,
                stride: total * len,
            };
            let lc = bn_stage(view, &w.bns[bn_i], &net.running[bn_i], mode, eps);
            let mut out = vec![T::zero(); n * g.c_out * len];
            conv_forward(
                g,
                View::dense(&lc.act, n, g.c_in, len),
                &w.convs[conv_i],
                &mut out,
                g.c_out,
                0,
            );
            for b in 0..n {
                let dst = b * total * len + g.c_in * len;
                buffer[dst..dst + g.c_out * len].copy_from_slice(&out[b * g.c_out * len..(b + 1) * g.c_out * len]);
            }
            layers.push(lc);
            conv_i += 1;
            bn_i += 1;
        }
        let transition = geo.transitions.get(bi).map(|t| {
            let lc = bn_stage(
                View::dense(&buffer, n, total, len),
                &w.bns[trans_bn_i],
                &net.running[trans_bn_i],
                mode,
                eps,
            );
            let mut out = vec![T::zero(); n * t.c_out * len];
            conv_forward(
                t,
                View::dense(&lc.act, n, total, len),
                &w.convs[trans_conv_i],
                &mut out,
                t.c_out,
                0,
            );
            current = avgpool2_forward(&out, n * t.c_out, len);
            trans_bn_i += 1;
            trans_conv_i += 1;
            (lc, t.c_out)
        });
        blocks.push(BlockCache {
            buffer,
            channels: total,
            c0,
            len,
            layers,
            transition,
        });
    }

    let last = blocks.last().expect("at least one block");
    let fbn = net.weights.bns.len() - 1;
    let final_layer = bn_stage(
        View::dense(&last.buffer, n, last.channels, last.len),
        &w.bns[fbn],
        &net.running[fbn],
        mode,
        eps,
    );
    let (fc, fl) = (geo.final_channels, geo.final_len);
    let inv_len = T::one() / T::from_usize_lossy(fl);
    let mut pooled = vec![T::zero(); n * fc];
    for (i, p) in pooled.iter_mut().enumerate() {
        *p = final_layer.act[i * fl..(i + 1) * fl].iter().copied().sum::<T>() * inv_len;
    }
    let logits = (0..n)
        .map(|b| {
            let z = &pooled[b * fc..(b + 1) * fc];
            let mut out = [T::zero(); 2];
            for (c, o) in out.iter_mut().enumerate() {
                *o = w.fc_b[c]
                    + w.fc_w[c * fc..(c + 1) * fc]
                        .iter()
                        .zip(z)
                        .map(|(&a, &b)| a * b)
                        .sum::<T>();
            }
            out
        })
        .collect();

    Ok(ForwardOutput {
        logits,
        cache: ForwardCache {
            version: net.version,
            mode,
            n,
            input: x.data.clone(),
            stem_out,
            stem,
            pool_arg,
            blocks,
            final_layer,
            pooled,
        },
    })
}

/// Numerically stable two-class softmax.
pub fn softmax<T: Scalar>(z: [T; 2]) -> [T; 2] {
    let m = z[0].max(z[1]);
    let (a, b) = ((z[0] - m).exp(), (z[1] - m).exp());
    let s = a + b;
    [a / s, b / s]
}

/// Mean cross-entropy of `logits` against class indices.
pub fn cross_entropy<T: Scalar>(logits: &[[T; 2]], labels: &[usize]) -> T {
    let n = T::from_usize_lossy(logits.len());
    logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let m = z[0].max(z[1]);
            let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
            lse - z[y]
        })
        .sum::<T>()
        / n
}

/// Gradient of the mean cross-entropy with respect to the logits.
pub fn loss_logit_gradient<T: Scalar>(logits: &[[T; 2]], labels: &[usize]) -> Vec<[T; 2]> {
    let n = T::from_usize_lossy(logits.len());
    logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let p = softmax(*z);
            let mut g = [p[0] / n, p[1] / n];
            g[y] -= T::one() / n;
            g
        })
        .collect()
}

/// Gradients of every weight for an arbitrary upstream gradient on the
/// logits. Train-mode caches differentiate through batch statistics.
pub fn backward_from_logits<T: Scalar>(
    net: &DenseNet<T>,
    cache: &ForwardCache<T>,
    dlogits: &[[T; 2]],
) -> Result<Gradients<T>, CnnError> {
    if cache.version != net.version {
        return Err(CnnError::StaleCache {
            cache: cache.version,
            params: net.version,
        });
    }
    if dlogits.len() != cache.n {
        return Err(CnnError::ShapeMismatch(format!(
            "{} logit gradients for a batch of {}",
            dlogits.len(),
            cache.n
        )));
    }
    let cfg = &net.config;
    let geo = geometry(cfg);
    let w = &net.weights;
    let train = cache.mode == Mode::Train;
    let n = cache.n;
    let mut grad = w.zeros_like();

    // classifier and global average pool
    let (fc, fl) = (geo.final_channels, geo.final_len);
    let mut d_pooled = vec![T::zero(); n * fc];
    for (b, dl) in dlogits.iter().enumerate() {
        let z = &cache.pooled[b * fc..(b + 1) * fc];
        for c in 0..2 {
            grad.fc_b[c] += dl[c];
            for k in 0..fc {
                grad.fc_w[c * fc + k] += dl[c] * z[k];
                d_pooled[b * fc + k] += w.fc_w[c * fc + k] * dl[c];
            }
        }
    }
    let inv_len = T::one() / T::from_usize_lossy(fl);
    let mut d_act = vec![T::zero(); n * fc * fl];
    for (i, &g) in d_pooled.iter().enumerate() {
        d_act[i * fl..(i + 1) * fl].iter_mut().for_each(|v| *v = g * inv_len);
    }

    let fbn = w.bns.len() - 1;
    let last = cache.blocks.last().expect("at least one block");
    let mut d_buffer = vec![T::zero(); n * last.channels * last.len];
    {
        let BnParams { gamma, .. } = &w.bns[fbn];
        let gb = &mut grad.bns[fbn];
        bn_relu_backward(
            View::dense(&last.buffer, n, last.channels, last.len),
            &cache.final_layer.act,
            &d_act,
            &cache.final_layer.stats,
            gamma,
            train,
            &mut gb.gamma,
            &mut gb.beta,
            &mut d_buffer,
            last.channels,
        );
    }

    let n_layers: usize = cfg.blocks.iter().sum();
    let layer_start: Vec<usize> = cfg
        .blocks
        .iter()
        .scan(1, |acc, &l| {
            let s = *acc;
            *acc += l;
            Some(s)
        })
        .collect();

    let mut d_block_input = Vec::new();
    for (bi, bc) in cache.blocks.iter().enumerate().rev() {
        let (total, len) = (bc.channels, bc.len);
        let convs = &geo.blocks[bi].2;
        for (j, g) in convs.iter().enumerate().rev() {
            let li = layer_start[bi] + j; // conv and bn index
            let lc = &bc.layers[j];
            let mut d_lact = vec![T::zero(); n * g.c_in * len];
            conv_backward(
                g,
                View::dense(&lc.act, n, g.c_in, len),
                &w.convs[li],
                &d_buffer,
                total,
                g.c_in,
                &mut grad.convs[li],
                Some(&mut d_lact),
            );
            let gb = &mut grad.bns[li];
            bn_relu_backward(
                View {
                    data: &bc.buffer,
                    n,
                    channels: g.c_in,
                    len,
                    stride: total * len,
                },
                &lc.act,
                &d_lact,
                &lc.stats,
                &w.bns[li].gamma,
                train,
                &mut gb.gamma,
                &mut gb.beta,
                &mut d_buffer,
                total,
            );
        }
        // gradient wrt block input: first c0 channels of the buffer gradient
        let c0 = bc.c0;
        let mut d_in = vec![T::zero(); n * c0 * len];
        for b in 0..n {
            d_in[b * c0 * len..(b + 1) * c0 * len]
                .copy_from_slice(&d_buffer[b * total * len..b * total * len + c0 * len]);
        }
        if bi == 0 {
            d_block_input = d_in;
            break;
        }
        // through the previous block's transition
        let prev = &cache.blocks[bi - 1];
        let (tc, c_out) = prev.transition.as_ref().expect("non-final blocks have a transition");
        let t = &geo.transitions[bi - 1];
        let ti_conv = 1 + n_layers + bi - 1;
        let ti_bn = 1 + n_layers + bi - 1;
        let d_tout = avgpool2_backward(&d_in, n * c_out, prev.len);
        let mut d_tact = vec![T::zero(); n * t.c_in * prev.len];
        conv_backward(
            t,
            View::dense(&tc.act, n, t.c_in, prev.len),
            &w.convs[ti_conv],
            &d_tout,
            *c_out,
            0,
            &mut grad.convs[ti_conv],
            Some(&mut d_tact),
        );
        d_buffer = vec![T::zero(); n * prev.channels * prev.len];
        let gb = &mut grad.bns[ti_bn];
        bn_relu_backward(
            View::dense(&prev.buffer, n, prev.channels, prev.len),
            &tc.act,
            &d_tact,
            &tc.stats,
            &w.bns[ti_bn].gamma,
            train,
            &mut gb.gamma,
            &mut gb.beta,
            &mut d_buffer,
            prev.channels,
        );
    }

    // max pool, stem batch norm, stem convolution
    let s = geo.stem;
    let mut d_stem_act = vec![T::zero(); n * s.c_out * s.l_out];
    for (&src, &g) in cache.pool_arg.iter().zip(&d_block_input) {
        d_stem_act[src] += g;
    }
    let mut d_stem_out = vec![T::zero(); n * s.c_out * s.l_out];
    {
        let gb = &mut grad.bns[0];
        bn_relu_backward(
            View::dense(&cache.stem_out, n, s.c_out, s.l_out),
            &cache.stem.act,
            &d_stem_act,
            &cache.stem.stats,
            &w.bns[0].gamma,
            train,
            &mut gb.gamma,
            &mut gb.beta,
            &mut d_stem_out,
            s.c_out,
        );
    }
    conv_backward(
        &s,
        View::dense(&cache.input, n, s.c_in, s.l_in),
        &w.convs[0],
        &d_stem_out,
        s.c_out,
        0,
        &mut grad.convs[0],
        None,
    );
    Ok(grad)
}

/// Gradients of the mean cross-entropy over the cached batch.
pub fn backward<T: Scalar>(
    net: &DenseNet<T>,
    cache: &ForwardCache<T>,
    logits: &[[T; 2]],
    labels: &[usize],
) -> Result<Gradients<T>, CnnError> {
    if labels.len() != cache.n || logits.len() != cache.n {
        return Err(CnnError::ShapeMismatch(format!(
            "{} labels and {} logits for a batch of {}",
            labels.len(),
            logits.len(),
            cache.n
        )));
    }
    backward_from_logits(net, cache, &loss_logit_gradient(logits, labels))
}
