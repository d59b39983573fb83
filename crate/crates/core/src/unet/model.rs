//! Encoder-decoder network with skip connections.
//!
//! Each "block" is conv 3×3 → ReLU → batch norm → squeeze-excitation. Every
//! level runs two blocks; the encoder then max-pools, the decoder first
//! upsamples bilinearly, applies a 2×2 conv halving the channels, and
//! concatenates the matching encoder features in front. A 1×1 conv produces
//! the single-channel artifact estimate with no output nonlinearity.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::bail;
use crate::math;
use crate::rng::SplitMix64;
use crate::{Error, Result};

use super::ops::{self, BnCache, BnStats, SeCache, SeGrads, SeWeights};
use super::tensor::Tensor;
use super::UNetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates and a recorded tape.
    Train,
    /// Running statistics only; nothing recorded.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    /// `(out, in, k, k)`
    pub weight: Tensor,
    /// `(out, 1, 1, 1)`
    pub bias: Tensor,
    pub pad: usize,
}

impl Conv {
    fn new(cin: usize, cout: usize, k: usize, rng: Option<&mut SplitMix64>) -> Self {
        let mut weight = Tensor::zeros([cout, cin, k, k]);
        if let Some(rng) = rng {
            let std = math::sqrt(2.0 / (cin * k * k) as f64);
            weight.data.iter_mut().for_each(|w| *w = std * rng.normal());
        }
        Self { weight, bias: Tensor::zeros([cout, 1, 1, 1]), pad: (k - 1) / 2 }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv2d(x, &self.weight, &self.bias, self.pad)
    }

    fn backward(&mut self, input: &Tensor, dout: &Tensor) -> Tensor {
        let mut dw = take_grad(&mut self.weight);
        let mut db = take_grad(&mut self.bias);
        let dx = ops::conv2d_backward(input, &self.weight, self.pad, dout, &mut dw, &mut db);
        self.weight.grad = Some(dw);
        self.bias.grad = Some(db);
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(c: usize) -> Self {
        Self {
            gamma: Tensor::filled([c, 1, 1, 1], 1.0),
            beta: Tensor::zeros([c, 1, 1, 1]),
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqueezeExcite {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl SqueezeExcite {
    fn new(c: usize, hidden: usize, rng: &mut SplitMix64) -> Self {
        let mut w1 = Tensor::zeros([hidden, c, 1, 1]);
        let mut w2 = Tensor::zeros([c, hidden, 1, 1]);
        let s1 = math::sqrt(2.0 / c as f64);
        let s2 = math::sqrt(1.0 / hidden as f64);
        w1.data.iter_mut().for_each(|w| *w = s1 * rng.normal());
        w2.data.iter_mut().for_each(|w| *w = s2 * rng.normal());
        Self { w1, b1: Tensor::zeros([hidden, 1, 1, 1]), w2, b2: Tensor::zeros([c, 1, 1, 1]) }
    }

    fn weights(&self) -> SeWeights<'_> {
        SeWeights { w1: &self.w1, b1: &self.b1, w2: &self.w2, b2: &self.b2 }
    }
}

/// conv 3×3 → ReLU → BN → SE
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub se: SqueezeExcite,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor,
    relu_out: Tensor,
    bn: BnCache,
    stats: BnStats,
    se: SeCache,
}

impl Block {
    fn new(cin: usize, cout: usize, se_reduction: usize, rng: &mut SplitMix64) -> Self {
        let conv = Conv::new(cin, cout, 3, Some(rng));
        let se = SqueezeExcite::new(cout, cout / se_reduction.min(cout), rng);
        Self { conv, bn: BatchNorm::new(cout), se }
    }

    fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let a = ops::relu(&self.conv.forward(x)?);
        let n = ops::batchnorm_eval(&a, &self.bn.gamma, &self.bn.beta, &self.bn.running_mean, &self.bn.running_var)?;
        Ok(ops::se_forward(n, self.se.weights())?.0)
    }

    fn forward_train(&self, x: Tensor) -> Result<(Tensor, BlockCache)> {
        let relu_out = ops::relu(&self.conv.forward(&x)?);
        let (n, bn, stats) = ops::batchnorm_train(&relu_out, &self.bn.gamma, &self.bn.beta)?;
        let (out, se) = ops::se_forward(n, self.se.weights())?;
        Ok((out, BlockCache { input: x, relu_out, bn, stats, se }))
    }

    fn backward(&mut self, cache: &BlockCache, dout: &Tensor) -> Tensor {
        let (mut gw1, mut gb1) = (take_grad(&mut self.se.w1), take_grad(&mut self.se.b1));
        let (mut gw2, mut gb2) = (take_grad(&mut self.se.w2), take_grad(&mut self.se.b2));
        let grads = SeGrads { w1: &mut gw1, b1: &mut gb1, w2: &mut gw2, b2: &mut gb2 };
        let d_bn = ops::se_backward(&cache.se, self.se.weights(), dout, grads);
        self.se.w1.grad = Some(gw1);
        self.se.b1.grad = Some(gb1);
        self.se.w2.grad = Some(gw2);
        self.se.b2.grad = Some(gb2);

        let (mut gg, mut gb) = (take_grad(&mut self.bn.gamma), take_grad(&mut self.bn.beta));
        let d_relu = ops::batchnorm_backward(&cache.bn, &self.bn.gamma, &d_bn, &mut gg, &mut gb);
        self.bn.gamma.grad = Some(gg);
        self.bn.beta.grad = Some(gb);

        let d_conv = ops::relu_backward(&cache.relu_out, &d_relu);
        self.conv.backward(&cache.input, &d_conv)
    }
}

fn take_grad(t: &mut Tensor) -> Vec<f64> {
    let n = t.len();
    t.grad.take().unwrap_or_else(|| vec![0.0; n])
}

/// A mutable view of one trainable tensor.
pub struct ParamMut<'a> {
    pub name: String,
    pub tensor: &'a mut Tensor,
    /// Whether the ℓ₂ penalty applies (conv and SE weights only).
    pub decay: bool,
}

/// All trainable tensors and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetParams {
    pub config: UNetConfig,
    /// Two blocks per level, `2 * depth` in total.
    pub encoder: Vec<Block>,
    pub bottleneck: Vec<Block>,
    /// 2×2 convs after upsampling, one per level.
    pub up: Vec<Conv>,
    /// Two blocks per level, indexed like `encoder`.
    pub decoder: Vec<Block>,
    /// 1×1 output conv, zero-initialized.
    pub head: Conv,
}

impl UNetParams {
    /// He-initialized weights from `seed`; the output conv starts at zero so
    /// an untrained network predicts no artifact.
    pub fn init(config: &UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::new(seed);
        let r = config.se_reduction;
        let ch = |l: usize| config.channels(l);
        let mut encoder = Vec::new();
        let mut decoder = Vec::new();
        let mut up = Vec::new();
        for l in 0..config.depth {
            let cin = if l == 0 { 1 } else { ch(l - 1) };
            encoder.push(Block::new(cin, ch(l), r, &mut rng));
            encoder.push(Block::new(ch(l), ch(l), r, &mut rng));
        }
        let d = config.depth;
        let bottleneck = vec![Block::new(ch(d - 1), ch(d), r, &mut rng), Block::new(ch(d), ch(d), r, &mut rng)];
        for l in 0..config.depth {
            up.push(Conv::new(ch(l + 1), ch(l), 2, Some(&mut rng)));
            decoder.push(Block::new(2 * ch(l), ch(l), r, &mut rng));
            decoder.push(Block::new(ch(l), ch(l), r, &mut rng));
        }
        let head = Conv::new(ch(0), 1, 1, None);
        Ok(Self { config: config.clone(), encoder, bottleneck, up, decoder, head })
    }

    /// Every trainable tensor in a fixed order with a stable name.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        fn conv<'a>(out: &mut Vec<ParamMut<'a>>, p: &str, c: &'a mut Conv) {
            out.push(ParamMut { name: format!("{p}.weight"), tensor: &mut c.weight, decay: true });
            out.push(ParamMut { name: format!("{p}.bias"), tensor: &mut c.bias, decay: false });
        }
        fn block<'a>(out: &mut Vec<ParamMut<'a>>, p: &str, b: &'a mut Block) {
            conv(out, &format!("{p}.conv"), &mut b.conv);
            out.push(ParamMut { name: format!("{p}.bn.gamma"), tensor: &mut b.bn.gamma, decay: false });
            out.push(ParamMut { name: format!("{p}.bn.beta"), tensor: &mut b.bn.beta, decay: false });
            out.push(ParamMut { name: format!("{p}.se.w1"), tensor: &mut b.se.w1, decay: true });
            out.push(ParamMut { name: format!("{p}.se.b1"), tensor: &mut b.se.b1, decay: false });
            out.push(ParamMut { name: format!("{p}.se.w2"), tensor: &mut b.se.w2, decay: true });
            out.push(ParamMut { name: format!("{p}.se.b2"), tensor: &mut b.se.b2, decay: false });
        }
        for (i, b) in self.encoder.iter_mut().enumerate() {
            block(&mut out, &format!("enc{}.{}", i / 2, i % 2), b);
        }
        for (i, b) in self.bottleneck.iter_mut().enumerate() {
            block(&mut out, &format!("mid.{i}"), b);
        }
        for (l, c) in self.up.iter_mut().enumerate() {
            conv(&mut out, &format!("up{l}"), c);
        }
        for (i, b) in self.decoder.iter_mut().enumerate() {
            block(&mut out, &format!("dec{}.{}", i / 2, i % 2), b);
        }
        conv(&mut out, "head", &mut self.head);
        out
    }

    /// `(name, tensor)` pairs in the order of [`Self::params_mut`].
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut copy = self.clone();
        copy.params_mut().into_iter().map(|p| (p.name, p.tensor.clone())).collect()
    }

    /// Batch-norm running statistics as `(name, values)`.
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::new();
        let groups: [(&str, &mut Vec<Block>); 3] =
            [("enc", &mut self.encoder), ("mid", &mut self.bottleneck), ("dec", &mut self.decoder)];
        for (prefix, blocks) in groups {
            for (i, b) in blocks.iter_mut().enumerate() {
                let p = if prefix == "mid" { format!("mid.{i}") } else { format!("{prefix}{}.{}", i / 2, i % 2) };
                out.push((format!("{p}.bn.running_mean"), &mut b.bn.running_mean));
                out.push((format!("{p}.bn.running_var"), &mut b.bn.running_var));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.clone().params_mut().iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.tensor.zero_grad();
        }
    }

    /// Fold the batch statistics of a train-mode pass into the running ones.
    pub fn apply_running_stats(&mut self, tape: &Tape) {
        let groups = [
            (&mut self.encoder, &tape.encoder),
            (&mut self.bottleneck, &tape.bottleneck),
            (&mut self.decoder, &tape.decoder),
        ];
        for (blocks, caches) in groups {
            for (b, c) in blocks.iter_mut().zip(caches) {
                if let Some(c) = c {
                    ops::update_running_stats(&mut b.bn.running_mean, &mut b.bn.running_var, &c.stats);
                }
            }
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let f = 1usize << self.config.depth;
        if x.channels() != 1 {
            bail!(ShapeMismatch, "network input must have one channel, got {}", x.channels());
        }
        if x.height() % f != 0 || x.width() % f != 0 || x.height() == 0 || x.width() == 0 {
            bail!(
                ShapeMismatch,
                "input {}x{} is not divisible by 2^{} = {f}",
                x.height(),
                x.width(),
                self.config.depth
            );
        }
        Ok(())
    }
}

/// Intermediates recorded by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    encoder: Vec<Option<BlockCache>>,
    bottleneck: Vec<Option<BlockCache>>,
    decoder: Vec<Option<BlockCache>>,
    /// per level: max-pool argmax and pre-pool shape
    pools: Vec<(Vec<usize>, [usize; 4])>,
    /// per level: pre-upsample shape and the upsampled tensor
    ups: Vec<Option<([usize; 4], Tensor)>>,
    /// per level: channels of the skip half of the concatenation
    skip_channels: Vec<usize>,
    head_input: Tensor,
}

/// Eval-mode forward pass; `input` is `(batch, 1, h, w)`.
pub fn forward_eval(params: &UNetParams, input: &Tensor) -> Result<Tensor> {
    params.check_input(input)?;
    let depth = params.config.depth;
    let mut x = input.clone();
    let mut skips = Vec::with_capacity(depth);
    for l in 0..depth {
        x = params.encoder[2 * l].forward_eval(&x)?;
        x = params.encoder[2 * l + 1].forward_eval(&x)?;
        let (p, _) = ops::maxpool2(&x)?;
        skips.push(x);
        x = p;
    }
    for b in &params.bottleneck {
        x = b.forward_eval(&x)?;
    }
    for l in (0..depth).rev() {
        let u = params.up[l].forward(&ops::upsample_bilinear2(&x))?;
        let skip = skips.pop().expect("one skip per level");
        x = ops::concat_channels(&skip, &u)?;
        x = params.decoder[2 * l].forward_eval(&x)?;
        x = params.decoder[2 * l + 1].forward_eval(&x)?;
    }
    params.head.forward(&x)
}

/// Train-mode forward pass. Parameters are not modified; call
/// [`UNetParams::apply_running_stats`] to fold in the batch statistics.
pub fn forward_train(params: &UNetParams, input: &Tensor) -> Result<(Tensor, Tape)> {
    params.check_input(input)?;
    let depth = params.config.depth;
    let mut tape = Tape {
        encoder: vec![None; 2 * depth],
        bottleneck: vec![None; 2],
        decoder: vec![None; 2 * depth],
        pools: Vec::with_capacity(depth),
        ups: vec![None; depth],
        skip_channels: vec![0; depth],
        head_input: Tensor::zeros([0, 0, 0, 0]),
    };
    let mut x = input.clone();
    let mut skips = Vec::with_capacity(depth);
    for l in 0..depth {
        for i in [2 * l, 2 * l + 1] {
            let (y, c) = params.encoder[i].forward_train(x)?;
            tape.encoder[i] = Some(c);
            x = y;
        }
        let (p, arg) = ops::maxpool2(&x)?;
        tape.pools.push((arg, x.shape));
        skips.push(x);
        x = p;
    }
    for i in 0..2 {
        let (y, c) = params.bottleneck[i].forward_train(x)?;
        tape.bottleneck[i] = Some(c);
        x = y;
    }
    for l in (0..depth).rev() {
        let shape = x.shape;
        let upsampled = ops::upsample_bilinear2(&x);
        let u = params.up[l].forward(&upsampled)?;
        tape.ups[l] = Some((shape, upsampled));
        let skip = skips.pop().expect("one skip per level");
        tape.skip_channels[l] = skip.channels();
        x = ops::concat_channels(&skip, &u)?;
        for i in [2 * l, 2 * l + 1] {
            let (y, c) = params.decoder[i].forward_train(x)?;
            tape.decoder[i] = Some(c);
            x = y;
        }
    }
    let out = params.head.forward(&x)?;
    tape.head_input = x;
    Ok((out, tape))
}

/// Reverse pass: accumulate `∂loss/∂θ` into each parameter's `grad`, given
/// `dout = ∂loss/∂output`.
pub fn backward(params: &mut UNetParams, tape: &Tape, dout: &Tensor) -> Result<()> {
    let depth = params.config.depth;
    let expected = [tape.head_input.batch(), 1, tape.head_input.height(), tape.head_input.width()];
    if dout.shape != expected {
        bail!(ShapeMismatch, "output gradient {:?} does not match the recorded output {expected:?}", dout.shape);
    }
    let missing = || Error::NoRecordedForward;
    let mut dx = params.head.backward(&tape.head_input, dout);
    let mut dskips = vec![None; depth];
    for l in 0..depth {
        for i in [2 * l + 1, 2 * l] {
            dx = params.decoder[i].backward(tape.decoder[i].as_ref().ok_or_else(missing)?, &dx);
        }
        let (dskip, du) = ops::split_channels(&dx, tape.skip_channels[l]);
        dskips[l] = Some(dskip);
        let (shape, upsampled) = tape.ups[l].as_ref().ok_or_else(missing)?;
        let dup = params.up[l].backward(upsampled, &du);
        dx = ops::upsample_bilinear2_backward(&dup, *shape);
    }
    for i in [1, 0] {
        dx = params.bottleneck[i].backward(tape.bottleneck[i].as_ref().ok_or_else(missing)?, &dx);
    }
    for l in (0..depth).rev() {
        let (arg, shape) = &tape.pools[l];
        let mut dh = ops::maxpool2_backward(arg, &dx, *shape);
        let dskip = dskips[l].take().ok_or_else(missing)?;
        dh.data.iter_mut().zip(&dskip.data).for_each(|(a, b)| *a += b);
        dx = dh;
        for i in [2 * l + 1, 2 * l] {
            dx = params.encoder[i].backward(tape.encoder[i].as_ref().ok_or_else(missing)?, &dx);
        }
    }
    Ok(())
}

/// Parameters plus the tape of the most recent train-mode forward pass.
#[derive(Debug, Clone)]
pub struct UNet {
    pub params: UNetParams,
    tape: Option<Tape>,
}

impl UNet {
    pub fn new(params: UNetParams) -> Self {
        Self { params, tape: None }
    }

    /// Train mode updates running statistics and records a tape; eval mode
    /// clears any recorded tape.
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Eval => {
                self.tape = None;
                forward_eval(&self.params, input)
            }
            Mode::Train => {
                let (out, tape) = forward_train(&self.params, input)?;
                self.params.apply_running_stats(&tape);
                self.tape = Some(tape);
                Ok(out)
            }
        }
    }

    /// Consumes the recorded tape.
    pub fn backward(&mut self, dout: &Tensor) -> Result<()> {
        let tape = self.tape.take().ok_or(Error::NoRecordedForward)?;
        backward(&mut self.params, &tape, dout)
    }
}
