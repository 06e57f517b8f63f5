//! Small from-scratch 2D U-Net: double-conv encoder with 2x2 max-pooling,
//! 2x2 stride-2 transposed-convolution decoder with skip concatenation,
//! and a 1x1 sigmoid head.
//!
//! Parameters live in one flat vector; batch-norm running statistics live
//! in a separate buffer vector so the optimiser only sees trainables.

pub mod adam;
pub mod augment;
pub mod checkpoint;
pub mod layers;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{combined_loss, combined_loss_grad, MaskedLossConfig, SliceTensor};
use crate::scalar::Real;
use crate::volume::Slice2D;

use layers::{BnCache, Tensor, BN_MOMENTUM};

pub use adam::{Adam, AdamConfig};
pub use augment::{augment_pair, AugmentParams, AugmentRanges};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use train::{
    masked_prediction, train, train_with, Dataset, EpochRecord, LossMode, Sample, TrainConfig, TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// Number of 2x2 poolings; inputs must be divisible by `2^levels`.
    pub levels: usize,
    /// Channels at the first level; doubled per level.
    pub base_channels: usize,
    pub use_batchnorm: bool,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 8,
            use_batchnorm: true,
            seed: 0,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::Config("levels must be >= 1".into()));
        }
        if self.base_channels < 1 {
            return Err(Error::Config("base_channels must be >= 1".into()));
        }
        if self.levels > 12 || self.base_channels.checked_shl(self.levels as u32).is_none() {
            return Err(Error::Config(format!("levels = {} is too deep", self.levels)));
        }
        Ok(())
    }

    /// Channels at encoder level `k`; the bottleneck reuses the last level's.
    pub fn channels(&self, k: usize) -> usize {
        self.base_channels << k.min(self.levels - 1)
    }

    pub fn divisor(&self) -> usize {
        1 << self.levels
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvSpec {
    cin: usize,
    cout: usize,
    k: usize,
    w: usize,
    b: usize,
}

impl ConvSpec {
    fn nw(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }
}

#[derive(Debug, Clone, Copy)]
struct BnSpec {
    c: usize,
    gamma: usize,
    beta: usize,
    /// Offset of running mean in the buffer vector; running var follows.
    buf: usize,
}

#[derive(Debug, Clone, Copy)]
struct DoubleConv {
    conv1: ConvSpec,
    bn1: Option<BnSpec>,
    conv2: ConvSpec,
    bn2: Option<BnSpec>,
}

#[derive(Debug, Clone, Copy)]
struct UpSpec {
    cin: usize,
    cout: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    enc: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    up: Vec<UpSpec>,
    dec: Vec<DoubleConv>,
    head: ConvSpec,
    n_params: usize,
    n_buffers: usize,
}

struct Alloc {
    params: usize,
    buffers: usize,
    bn: bool,
}

impl Alloc {
    fn conv(&mut self, cin: usize, cout: usize, k: usize) -> ConvSpec {
        let w = self.params;
        self.params += cout * cin * k * k;
        let b = self.params;
        self.params += cout;
        ConvSpec { cin, cout, k, w, b }
    }

    fn bn(&mut self, c: usize) -> Option<BnSpec> {
        if !self.bn {
            return None;
        }
        let gamma = self.params;
        let beta = gamma + c;
        self.params += 2 * c;
        let buf = self.buffers;
        self.buffers += 2 * c;
        Some(BnSpec { c, gamma, beta, buf })
    }

    fn double(&mut self, cin: usize, cout: usize) -> DoubleConv {
        let conv1 = self.conv(cin, cout, 3);
        let bn1 = self.bn(cout);
        let conv2 = self.conv(cout, cout, 3);
        let bn2 = self.bn(cout);
        DoubleConv { conv1, bn1, conv2, bn2 }
    }

    fn up(&mut self, cin: usize, cout: usize) -> UpSpec {
        let w = self.params;
        self.params += cin * cout * 4;
        let b = self.params;
        self.params += cout;
        UpSpec { cin, cout, w, b }
    }
}

impl Layout {
    fn new(cfg: &UNetConfig) -> Self {
        let mut a = Alloc {
            params: 0,
            buffers: 0,
            bn: cfg.use_batchnorm,
        };
        let mut enc = Vec::new();
        let mut cin = 1;
        for k in 0..cfg.levels {
            let c = cfg.channels(k);
            enc.push(a.double(cin, c));
            cin = c;
        }
        let bott_c = cfg.channels(cfg.levels);
        let bottleneck = a.double(cin, bott_c);
        let mut below = bott_c;
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for k in (0..cfg.levels).rev() {
            let c = cfg.channels(k);
            up.push(a.up(below, c));
            dec.push(a.double(2 * c, c));
            below = c;
        }
        let head = a.conv(below, 1, 1);
        Layout {
            enc,
            bottleneck,
            up,
            dec,
            head,
            n_params: a.params,
            n_buffers: a.buffers,
        }
    }
}

/// Network weights plus architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T = f64> {
    config: UNetConfig,
    params: Vec<T>,
    buffers: Vec<T>,
}

struct DcCache<T> {
    input: Tensor<T>,
    z1: Tensor<T>,
    bn1: Option<BnCache<T>>,
    a1: Tensor<T>,
    z2: Tensor<T>,
    bn2: Option<BnCache<T>>,
    a2: Tensor<T>,
}

/// Activations recorded by a training-mode forward pass.
pub struct ForwardCache<T> {
    enc: Vec<DcCache<T>>,
    pool_args: Vec<Vec<u8>>,
    bottleneck: DcCache<T>,
    up_in: Vec<Tensor<T>>,
    up_out_c: Vec<usize>,
    dec: Vec<DcCache<T>>,
    head_in: Tensor<T>,
    /// Sigmoid output, `N x 1 x H x W`.
    pub probs: Tensor<T>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Train,
    Eval,
}

fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl<T: Real> UNet<T> {
    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases, unit
    /// batch-norm scale.
    pub fn new(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![T::zero(); layout.n_params];
        let mut buffers = vec![T::zero(); layout.n_buffers];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let init_conv = |p: &mut [T], c: &ConvSpec, rng: &mut ChaCha8Rng| {
            let bound = (6.0 / (c.cin * c.k * c.k) as f64).sqrt();
            for v in &mut p[c.w..c.w + c.nw()] {
                *v = T::lit(rng.gen_range(-bound..bound));
            }
        };
        let init_bn = |p: &mut [T], b: &mut [T], s: &Option<BnSpec>| {
            if let Some(s) = s {
                p[s.gamma..s.gamma + s.c].fill(T::one());
                b[s.buf + s.c..s.buf + 2 * s.c].fill(T::one());
            }
        };
        let dcs: Vec<DoubleConv> = layout
            .enc
            .iter()
            .chain(std::iter::once(&layout.bottleneck))
            .copied()
            .collect();
        for dc in &dcs {
            init_conv(&mut params, &dc.conv1, &mut rng);
            init_bn(&mut params, &mut buffers, &dc.bn1);
            init_conv(&mut params, &dc.conv2, &mut rng);
            init_bn(&mut params, &mut buffers, &dc.bn2);
        }
        for (u, dc) in layout.up.iter().zip(&layout.dec) {
            let bound = (6.0 / u.cin as f64).sqrt();
            for v in &mut params[u.w..u.w + u.cin * u.cout * 4] {
                *v = T::lit(rng.gen_range(-bound..bound));
            }
            init_conv(&mut params, &dc.conv1, &mut rng);
            init_bn(&mut params, &mut buffers, &dc.bn1);
            init_conv(&mut params, &dc.conv2, &mut rng);
            init_bn(&mut params, &mut buffers, &dc.bn2);
        }
        init_conv(&mut params, &layout.head, &mut rng);
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    /// Rebuild from stored parameters and buffers.
    pub fn from_parts(config: UNetConfig, params: Vec<T>, buffers: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.n_params || buffers.len() != layout.n_buffers {
            return Err(Error::Shape(format!(
                "expected {} parameters and {} buffers, got {} and {}",
                layout.n_params,
                layout.n_buffers,
                params.len(),
                buffers.len()
            )));
        }
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[T] {
        &self.buffers
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Real>(&self) -> UNet<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        UNet {
            config: self.config,
            params: c(&self.params),
            buffers: c(&self.buffers),
        }
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    /// Spatial size of the bottleneck for an `h x w` input.
    pub fn bottleneck_shape(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.check_shape(h, w)?;
        Ok((h >> self.config.levels, w >> self.config.levels))
    }

    fn check_shape(&self, h: usize, w: usize) -> Result<()> {
        let d = self.config.divisor();
        if h == 0 || w == 0 || !h.is_multiple_of(d) || !w.is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by 2^{} = {d}",
                self.config.levels
            )));
        }
        Ok(())
    }

    fn stack(&self, images: &[&Slice2D<T>]) -> Result<Tensor<T>> {
        let first = images
            .first()
            .ok_or_else(|| Error::EmptySet("forward pass over an empty batch".into()))?;
        let (h, w) = (first.height, first.width);
        self.check_shape(h, w)?;
        let mut x = Tensor::zeros(images.len(), 1, h, w);
        for (n, img) in images.iter().enumerate() {
            if img.height != h || img.width != w {
                return Err(Error::Shape("batch images differ in shape".into()));
            }
            x.plane_mut(n, 0).copy_from_slice(&img.data);
        }
        Ok(x)
    }

    fn bn_fwd(&self, s: &Option<BnSpec>, x: Tensor<T>, mode: Mode) -> (Tensor<T>, Option<BnCache<T>>) {
        match (s, mode) {
            (None, _) => (x, None),
            (Some(s), Mode::Train) => {
                let (y, c) = layers::bn_forward_train(
                    &x,
                    &self.params[s.gamma..s.gamma + s.c],
                    &self.params[s.beta..s.beta + s.c],
                );
                (y, Some(c))
            }
            (Some(s), Mode::Eval) => (
                layers::bn_forward_eval(
                    &x,
                    &self.params[s.gamma..s.gamma + s.c],
                    &self.params[s.beta..s.beta + s.c],
                    &self.buffers[s.buf..s.buf + s.c],
                    &self.buffers[s.buf + s.c..s.buf + 2 * s.c],
                ),
                None,
            ),
        }
    }

    fn conv_fwd(&self, c: &ConvSpec, x: &Tensor<T>) -> Tensor<T> {
        layers::conv_forward(
            x,
            &self.params[c.w..c.w + c.nw()],
            &self.params[c.b..c.b + c.cout],
            c.cout,
            c.k,
        )
    }

    fn dc_fwd(&self, dc: &DoubleConv, x: Tensor<T>, mode: Mode) -> DcCache<T> {
        let z1 = self.conv_fwd(&dc.conv1, &x);
        let (mut a1, bn1) = self.bn_fwd(&dc.bn1, z1.clone(), mode);
        layers::relu_inplace(&mut a1);
        let z2 = self.conv_fwd(&dc.conv2, &a1);
        let (mut a2, bn2) = self.bn_fwd(&dc.bn2, z2.clone(), mode);
        layers::relu_inplace(&mut a2);
        DcCache {
            input: x,
            z1,
            bn1,
            a1,
            z2,
            bn2,
            a2,
        }
    }

    fn forward_tensor(&self, x: Tensor<T>, mode: Mode) -> ForwardCache<T> {
        let layout = self.layout();
        let mut enc = Vec::with_capacity(layout.enc.len());
        let mut pool_args = Vec::with_capacity(layout.enc.len());
        let mut cur = x;
        for dc in &layout.enc {
            let c = self.dc_fwd(dc, cur, mode);
            let (pooled, arg) = layers::maxpool_forward(&c.a2);
            pool_args.push(arg);
            enc.push(c);
            cur = pooled;
        }
        let bottleneck = self.dc_fwd(&layout.bottleneck, cur, mode);
        let mut cur = bottleneck.a2.clone();
        let mut up_in = Vec::new();
        let mut up_out_c = Vec::new();
        let mut dec = Vec::new();
        for (i, (u, dc)) in layout.up.iter().zip(&layout.dec).enumerate() {
            let up = layers::upconv_forward(
                &cur,
                &self.params[u.w..u.w + u.cin * u.cout * 4],
                &self.params[u.b..u.b + u.cout],
                u.cout,
            );
            up_in.push(cur);
            up_out_c.push(u.cout);
            let skip = &enc[enc.len() - 1 - i].a2;
            let cat = Tensor::concat_channels(skip, &up);
            let c = self.dc_fwd(dc, cat, mode);
            cur = c.a2.clone();
            dec.push(c);
        }
        let mut probs = self.conv_fwd(&layout.head, &cur);
        for v in &mut probs.data {
            *v = sigmoid(*v);
        }
        ForwardCache {
            enc,
            pool_args,
            bottleneck,
            up_in,
            up_out_c,
            dec,
            head_in: cur,
            probs,
        }
    }

    /// Inference-mode probability map (running batch-norm statistics).
    pub fn forward(&self, image: &Slice2D<T>) -> Result<Slice2D<T>> {
        let x = self.stack(&[image])?;
        let out = self.forward_tensor(x, Mode::Eval).probs;
        Slice2D::new(image.width, image.height, image.spacing, out.data)
    }

    /// Inference-mode forward over several images at once.
    pub fn forward_batch(&self, images: &[&Slice2D<T>]) -> Result<Vec<Slice2D<T>>> {
        let x = self.stack(images)?;
        let out = self.forward_tensor(x, Mode::Eval).probs;
        let p = out.plane_len();
        images
            .iter()
            .enumerate()
            .map(|(n, img)| {
                Slice2D::new(
                    img.width,
                    img.height,
                    img.spacing,
                    out.data[n * p..(n + 1) * p].to_vec(),
                )
            })
            .collect()
    }

    /// Training-mode forward pass (batch statistics) that records activations.
    pub fn forward_train(&self, images: &[&Slice2D<T>]) -> Result<ForwardCache<T>> {
        let x = self.stack(images)?;
        Ok(self.forward_tensor(x, Mode::Train))
    }

    fn dc_bwd(
        &self,
        dc: &DoubleConv,
        c: &DcCache<T>,
        mut g: Tensor<T>,
        grads: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        layers::relu_backward_inplace(&mut g, &c.a2);
        if let (Some(s), Some(bc)) = (&dc.bn2, &c.bn2) {
            let (dg, db) = split_pair(grads, s.gamma, s.beta, s.c);
            g = layers::bn_backward(&g, bc, &self.params[s.gamma..s.gamma + s.c], dg, db);
        }
        let mut g = self.conv_bwd(&dc.conv2, &c.a1, &g, grads, true).expect("dx requested");
        layers::relu_backward_inplace(&mut g, &c.a1);
        if let (Some(s), Some(bc)) = (&dc.bn1, &c.bn1) {
            let (dg, db) = split_pair(grads, s.gamma, s.beta, s.c);
            g = layers::bn_backward(&g, bc, &self.params[s.gamma..s.gamma + s.c], dg, db);
        }
        self.conv_bwd(&dc.conv1, &c.input, &g, grads, need_dx)
    }

    fn conv_bwd(
        &self,
        c: &ConvSpec,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let (gw, gb) = split_pair_unequal(grads, c.w, c.nw(), c.b, c.cout);
        layers::conv_backward(x, &self.params[c.w..c.w + c.nw()], dy, c.k, gw, gb, need_dx)
    }

    /// Parameter gradient given `dL/dP` for every pixel of every batch item.
    pub fn backward(&self, cache: &ForwardCache<T>, dprobs: &[T]) -> Result<Vec<T>> {
        if dprobs.len() != cache.probs.data.len() {
            return Err(Error::Shape(format!(
                "gradient has {} entries, output has {}",
                dprobs.len(),
                cache.probs.data.len()
            )));
        }
        let layout = self.layout();
        let mut grads = vec![T::zero(); self.params.len()];
        let mut dz = cache.probs.clone();
        for (d, (&p, &g)) in dz.data.iter_mut().zip(cache.probs.data.iter().zip(dprobs)) {
            *d = g * p * (T::one() - p);
        }
        let mut g = self
            .conv_bwd(&layout.head, &cache.head_in, &dz, &mut grads, true)
            .expect("dx requested");
        let levels = layout.enc.len();
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..levels).map(|_| None).collect();
        for (i, (u, dc)) in layout.up.iter().zip(&layout.dec).enumerate().rev() {
            let dcat = self
                .dc_bwd(dc, &cache.dec[i], g, &mut grads, true)
                .expect("dx requested");
            let skip_c = cache.enc[levels - 1 - i].a2.c;
            let (dskip, dup) = dcat.split_channels(skip_c);
            skip_grads[levels - 1 - i] = Some(dskip);
            let (gw, gb) = split_pair_unequal(&mut grads, u.w, u.cin * u.cout * 4, u.b, u.cout);
            debug_assert_eq!(cache.up_out_c[i], u.cout);
            g = layers::upconv_backward(
                &cache.up_in[i],
                &self.params[u.w..u.w + u.cin * u.cout * 4],
                &dup,
                gw,
                gb,
            );
        }
        g = self
            .dc_bwd(&layout.bottleneck, &cache.bottleneck, g, &mut grads, true)
            .expect("dx requested");
        for k in (0..levels).rev() {
            let c = &cache.enc[k];
            let mut ga = layers::maxpool_backward(&g, &cache.pool_args[k], c.a2.h, c.a2.w);
            if let Some(s) = skip_grads[k].take() {
                for (a, b) in ga.data.iter_mut().zip(s.data) {
                    *a += b;
                }
            }
            match self.dc_bwd(&layout.enc[k], c, ga, &mut grads, k > 0) {
                Some(d) => g = d,
                None => break,
            }
        }
        Ok(grads)
    }

    /// Blend batch statistics from a training pass into the running buffers.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        let layout = self.layout();
        let m = T::lit(BN_MOMENTUM);
        let mut pairs: Vec<(&DoubleConv, &DcCache<T>)> = layout.enc.iter().zip(&cache.enc).collect();
        pairs.push((&layout.bottleneck, &cache.bottleneck));
        pairs.extend(layout.dec.iter().zip(&cache.dec));
        for (dc, c) in pairs {
            for (spec, bc, z) in [(&dc.bn1, &c.bn1, &c.z1), (&dc.bn2, &c.bn2, &c.z2)] {
                let (Some(s), Some(bc)) = (spec, bc) else { continue };
                let nb = z.n * z.plane_len();
                let unbias = if nb > 1 {
                    T::from_usize_lossy(nb) / T::from_usize_lossy(nb - 1)
                } else {
                    T::one()
                };
                for ch in 0..s.c {
                    let rm = &mut self.buffers[s.buf + ch];
                    *rm = (T::one() - m) * *rm + m * bc.mean[ch];
                    let rv = &mut self.buffers[s.buf + s.c + ch];
                    *rv = (T::one() - m) * *rv + m * bc.var[ch] * unbias;
                }
            }
        }
    }

    /// Mean combined loss over a batch and its parameter gradient.
    ///
    /// `targets[i]` and `allow[i]` are flattened row-major like the images.
    pub fn loss_and_grad(
        &self,
        images: &[&Slice2D<T>],
        targets: &[&[T]],
        allow: &[&[T]],
        loss: &MaskedLossConfig,
    ) -> Result<(T, Vec<T>, ForwardCache<T>)> {
        if targets.len() != images.len() || allow.len() != images.len() {
            return Err(Error::Shape("images, targets and allow masks differ in count".into()));
        }
        let cache = self.forward_train(images)?;
        let (h, w) = (cache.probs.h, cache.probs.w);
        let p = h * w;
        let inv_n = T::one() / T::from_usize_lossy(images.len());
        let mut total = T::zero();
        let mut dprobs = vec![T::zero(); cache.probs.data.len()];
        for n in 0..images.len() {
            let t = SliceTensor::new(
                cache.probs.data[n * p..(n + 1) * p].to_vec(),
                targets[n].to_vec(),
                allow[n].to_vec(),
                h,
                w,
            )?;
            total += combined_loss(&t, loss)?;
            let g = combined_loss_grad(&t, loss)?;
            for (d, gv) in dprobs[n * p..(n + 1) * p].iter_mut().zip(g) {
                *d = gv * inv_n;
            }
        }
        let grads = self.backward(&cache, &dprobs)?;
        Ok((total * inv_n, grads, cache))
    }
}

fn split_pair<T>(g: &mut [T], a: usize, b: usize, len: usize) -> (&mut [T], &mut [T]) {
    split_pair_unequal(g, a, len, b, len)
}

/// Two disjoint mutable windows `[a, a + la)` and `[b, b + lb)` with `a < b`.
fn split_pair_unequal<T>(g: &mut [T], a: usize, la: usize, b: usize, lb: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(a + la <= b);
    let (lo, hi) = g.split_at_mut(b);
    (&mut lo[a..a + la], &mut hi[..lb])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, seed: u64) -> Slice2D<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        Slice2D::new(w, h, [1.0, 1.0], data).unwrap()
    }

    #[test]
    fn zero_network_outputs_one_half() {
        let cfg = UNetConfig {
            levels: 1,
            base_channels: 2,
            use_batchnorm: false,
            seed: 3,
        };
        let mut net = UNet::<f64>::new(cfg).unwrap();
        net.params_mut().fill(0.0);
        let out = net.forward(&image(8, 8, 1)).unwrap();
        assert!(out.data.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn inference_is_deterministic() {
        let net = UNet::<f64>::new(UNetConfig::default()).unwrap();
        let img = image(16, 16, 2);
        let a = net.forward(&img).unwrap();
        let b = net.forward(&img).unwrap();
        assert_eq!(a.data, b.data);
        assert!(a.data.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn bottleneck_of_64_with_three_levels_is_8() {
        let net = UNet::<f64>::new(UNetConfig::default()).unwrap();
        assert_eq!(net.bottleneck_shape(64, 64).unwrap(), (8, 8));
        let cache = net.forward_train(&[&image(64, 64, 4)]).unwrap();
        assert_eq!((cache.bottleneck.a2.h, cache.bottleneck.a2.w), (8, 8));
        assert_eq!((cache.probs.h, cache.probs.w), (64, 64));
    }

    #[test]
    fn indivisible_input_is_a_shape_error() {
        let net = UNet::<f64>::new(UNetConfig::default()).unwrap();
        assert!(matches!(net.forward(&image(12, 16, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn output_shape_matches_input_for_every_depth() {
        for levels in 1..=4 {
            let cfg = UNetConfig {
                levels,
                base_channels: 2,
                use_batchnorm: levels % 2 == 0,
                seed: levels as u64,
            };
            let net = UNet::<f64>::new(cfg).unwrap();
            let img = image(16, 32, 9);
            let out = net.forward(&img).unwrap();
            assert_eq!((out.width, out.height), (32, 16));
        }
    }

    #[test]
    fn channel_schedule_doubles_and_stops_at_bottleneck() {
        let cfg = UNetConfig {
            levels: 4,
            base_channels: 32,
            ..UNetConfig::default()
        };
        let c: Vec<usize> = (0..=4).map(|k| cfg.channels(k)).collect();
        assert_eq!(c, vec![32, 64, 128, 256, 256]);
    }

    #[test]
    fn f32_and_f64_nets_agree() {
        let net = UNet::<f64>::new(UNetConfig::default()).unwrap();
        let img = image(16, 16, 5);
        let a = net.forward(&img).unwrap();
        let net32 = net.cast::<f32>();
        let img32 = Slice2D::new(16, 16, [1.0f32, 1.0], img.data.iter().map(|&v| v as f32).collect()).unwrap();
        let b = net32.forward(&img32).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - *y as f64).abs() < 1e-4);
        }
    }
}
