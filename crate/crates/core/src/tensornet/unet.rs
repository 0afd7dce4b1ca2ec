//! Encoder-decoder segmentation network with skip connections.
//!
//! Level `k` of the encoder works at `base_features * 2^k` channels. Every
//! convolution is "same"-padded and followed by batch normalization and ReLU,
//! so the logits have the spatial size of the input.

use serde::{Deserialize, Serialize};

use super::layers::{self, BnCache, ConvGeom};
use super::params::{Init, ParamSpec, ParameterStore};
use super::tensor::{Scalar, Tensor4D};
use crate::error::{invalid, Error, Result};
use crate::rng::stream_rng;

/// How the decoder doubles spatial resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    /// 2x2 stride-2 transposed convolution.
    #[default]
    Transposed,
    /// Nearest-neighbour doubling followed by a `kernel_size` convolution.
    NearestConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub encoder_blocks: usize,
    pub base_features: usize,
    pub convs_per_block: usize,
    pub kernel_size: usize,
    pub out_channels: usize,
    /// Adds one log-variance channel per output channel.
    pub mve_head: bool,
    pub upsample: UpsampleMode,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels: 2,
            encoder_blocks: 3,
            base_features: 128,
            convs_per_block: 2,
            kernel_size: 3,
            out_channels: 1,
            mve_head: false,
            upsample: UpsampleMode::Transposed,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(invalid!("channel counts must be positive"));
        }
        if self.encoder_blocks == 0 || self.encoder_blocks > 12 {
            return Err(invalid!("encoder_blocks must be in 1..=12, got {}", self.encoder_blocks));
        }
        if self.base_features == 0 {
            return Err(invalid!("base_features must be at least 1"));
        }
        if self.convs_per_block == 0 {
            return Err(invalid!("convs_per_block must be at least 1"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(invalid!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return Err(invalid!("batch-norm momentum must be in [0,1] and eps positive"));
        }
        Ok(())
    }

    /// Channels of the final layer: logits, then log-variances if enabled.
    pub fn head_channels(&self) -> usize {
        self.out_channels * if self.mve_head { 2 } else { 1 }
    }

    pub fn features(&self, level: usize) -> usize {
        self.base_features << level
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.encoder_blocks
    }
}

/// Trainable scalars of one convolution.
pub fn conv_param_count(cin: usize, cout: usize, kernel: usize, bias: bool) -> usize {
    cin * cout * kernel * kernel + if bias { cout } else { 0 }
}

/// Closed-form trainable parameter count of the network described by `cfg`.
///
/// Convolutions that feed a batch normalization carry no bias (the
/// normalization's shift plays that role).
pub fn count_parameters(cfg: &UNetConfig) -> usize {
    let kk = cfg.kernel_size * cfg.kernel_size;
    let c = cfg.convs_per_block;
    let block = |cin: usize, cout: usize| kk * cin * cout + (c - 1) * kk * cout * cout + 2 * c * cout;
    let f = |k: usize| cfg.features(k);
    let b = cfg.encoder_blocks;
    let mut total = 0;
    for k in 0..b {
        let cin = if k == 0 { cfg.in_channels } else { f(k - 1) };
        total += block(cin, f(k));
        let up_taps = match cfg.upsample {
            UpsampleMode::Transposed => 4,
            UpsampleMode::NearestConv => kk,
        };
        total += up_taps * f(k + 1) * f(k) + f(k);
        total += block(2 * f(k), f(k));
    }
    total += block(f(b - 1), f(b));
    total + f(0) * cfg.head_channels() + cfg.head_channels()
}

/// Conv -> batch norm -> ReLU.
#[derive(Debug, Clone)]
struct Unit {
    weight: usize,
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
    geom: ConvGeom,
}

#[derive(Debug, Clone)]
struct Up {
    weight: usize,
    bias: usize,
    cin: usize,
    cout: usize,
}

#[derive(Debug, Clone)]
struct UnitTape<F> {
    input: Tensor4D<F>,
    bn: BnCache<F>,
}

/// Intermediate values retained by a training-mode forward pass.
#[derive(Debug, Clone)]
struct Tape<F> {
    enc: Vec<Vec<UnitTape<F>>>,
    pools: Vec<(Vec<u32>, [usize; 4])>,
    bottleneck: Vec<UnitTape<F>>,
    /// Input of each up layer (transposed mode) or its upsampled input
    /// (nearest mode), indexed by level.
    ups: Vec<Option<Tensor4D<F>>>,
    dec: Vec<Vec<UnitTape<F>>>,
    head_input: Tensor4D<F>,
    logits_shape: [usize; 4],
}

#[derive(Debug, Clone)]
pub struct UNet<F: Scalar = f32> {
    cfg: UNetConfig,
    store: ParameterStore<F>,
    enc: Vec<Vec<Unit>>,
    bottleneck: Vec<Unit>,
    ups: Vec<Up>,
    dec: Vec<Vec<Unit>>,
    head_weight: usize,
    head_bias: usize,
    tape: Option<Tape<F>>,
}

struct Builder<'a, F: Scalar> {
    store: &'a mut ParameterStore<F>,
    rng: crate::rng::StreamRng,
    k: usize,
}

impl<F: Scalar> Builder<'_, F> {
    fn param(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.store.add_param(&ParamSpec { name, shape, init }, &mut self.rng)
    }

    fn unit(&mut self, prefix: &str, cin: usize, cout: usize) -> Unit {
        let k = self.k;
        let weight = self.param(format!("{prefix}.weight"), vec![cout, cin, k, k], Init::He { fan_in: cin * k * k });
        let gamma = self.param(format!("{prefix}.bn.gamma"), vec![cout], Init::Ones);
        let beta = self.param(format!("{prefix}.bn.beta"), vec![cout], Init::Zeros);
        let running_mean = self.store.add_buffer(format!("{prefix}.bn.running_mean"), vec![F::zero(); cout]);
        let running_var = self.store.add_buffer(format!("{prefix}.bn.running_var"), vec![F::one(); cout]);
        Unit {
            weight,
            gamma,
            beta,
            running_mean,
            running_var,
            geom: ConvGeom { cin, cout, k },
        }
    }

    fn block(&mut self, prefix: &str, cin: usize, cout: usize, convs: usize) -> Vec<Unit> {
        (0..convs)
            .map(|i| self.unit(&format!("{prefix}.conv{i}"), if i == 0 { cin } else { cout }, cout))
            .collect()
    }
}

/// Allocate and He-initialize every parameter of the network.
pub fn build_unet<F: Scalar>(cfg: &UNetConfig, seed: u64) -> Result<UNet<F>> {
    cfg.validate()?;
    let mut store = ParameterStore::new();
    let mut b = Builder {
        store: &mut store,
        rng: stream_rng(seed, 0),
        k: cfg.kernel_size,
    };
    let levels = cfg.encoder_blocks;
    let c = cfg.convs_per_block;
    let mut enc = Vec::with_capacity(levels);
    for k in 0..levels {
        let cin = if k == 0 { cfg.in_channels } else { cfg.features(k - 1) };
        enc.push(b.block(&format!("enc{k}"), cin, cfg.features(k), c));
    }
    let bottleneck = b.block("bottleneck", cfg.features(levels - 1), cfg.features(levels), c);
    let mut ups = Vec::with_capacity(levels);
    let mut dec = Vec::with_capacity(levels);
    for k in (0..levels).rev() {
        let (cin, cout) = (cfg.features(k + 1), cfg.features(k));
        let (shape, fan_in) = match cfg.upsample {
            UpsampleMode::Transposed => (vec![cin, cout, 2, 2], cin),
            UpsampleMode::NearestConv => (vec![cout, cin, b.k, b.k], cin * b.k * b.k),
        };
        let weight = b.param(format!("up{k}.weight"), shape, Init::He { fan_in });
        let bias = b.param(format!("up{k}.bias"), vec![cout], Init::Zeros);
        ups.push(Up { weight, bias, cin, cout });
        dec.push(b.block(&format!("dec{k}"), 2 * cout, cout, c));
    }
    ups.reverse();
    dec.reverse();
    let hc = cfg.head_channels();
    let head_weight = b.param("head.weight".into(), vec![hc, cfg.features(0), 1, 1], Init::He { fan_in: cfg.features(0) });
    let head_bias = b.param("head.bias".into(), vec![hc], Init::Zeros);
    Ok(UNet {
        cfg: cfg.clone(),
        store,
        enc,
        bottleneck,
        ups,
        dec,
        head_weight,
        head_bias,
        tape: None,
    })
}

impl<F: Scalar> UNet<F> {
    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParameterStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore<F> {
        &mut self.store
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    /// Drop retained activations.
    pub fn clear_tape(&mut self) {
        self.tape = None;
    }

    /// Copy of the network in another scalar type (no tape, no optimizer state).
    pub fn cast<G: Scalar>(&self) -> UNet<G> {
        UNet {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            enc: self.enc.clone(),
            bottleneck: self.bottleneck.clone(),
            ups: self.ups.clone(),
            dec: self.dec.clone(),
            head_weight: self.head_weight,
            head_bias: self.head_bias,
            tape: None,
        }
    }

    fn check_input(&self, x: &Tensor4D<F>) -> Result<()> {
        let [n, c, h, w] = x.shape();
        if c != self.cfg.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input channels, got {c}",
                self.cfg.in_channels
            )));
        }
        let m = self.cfg.size_multiple();
        if n == 0 || h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::ShapeMismatch(format!(
                "input {h}x{w} (batch {n}) must be non-empty with sides divisible by {m}"
            )));
        }
        Ok(())
    }

    fn unit_eval(&self, u: &Unit, x: &Tensor4D<F>) -> Tensor4D<F> {
        let s = &self.store;
        let z = layers::conv2d_forward(x, &s.params[u.weight].value, None, &u.geom);
        let mut y = layers::batchnorm_eval(
            &z,
            &s.params[u.gamma].value,
            &s.params[u.beta].value,
            &s.buffers[u.running_mean].value,
            &s.buffers[u.running_var].value,
            self.cfg.bn_eps,
        );
        layers::relu_inplace(&mut y);
        y
    }

    fn unit_train(&mut self, u: &Unit, x: Tensor4D<F>) -> (Tensor4D<F>, UnitTape<F>) {
        let z = layers::conv2d_forward(&x, &self.store.params[u.weight].value, None, &u.geom);
        let gamma = self.store.params[u.gamma].value.clone();
        let beta = self.store.params[u.beta].value.clone();
        let (momentum, eps) = (self.cfg.bn_momentum, self.cfg.bn_eps);
        let (rm, rv) = self.store.buffer_pair_mut(u.running_mean, u.running_var);
        let (mut y, bn) = layers::batchnorm_train(&z, &gamma, &beta, rm, rv, momentum, eps);
        layers::relu_inplace(&mut y);
        (y, UnitTape { input: x, bn })
    }

    fn unit_backward(&mut self, u: &Unit, tape: &UnitTape<F>, mut dy: Tensor4D<F>, need_dx: bool) -> Option<Tensor4D<F>> {
        let gamma = &self.store.params[u.gamma].value;
        let beta = &self.store.params[u.beta].value;
        let [_, c, h, w] = dy.shape();
        let plane = h * w;
        // ReLU derivative from the normalized pre-activation, recomputed exactly
        layers::relu_backward_inplace(&mut dy, |j| {
            let ch = (j / plane) % c;
            gamma[ch] * tape.bn.xhat[j] + beta[ch] > F::zero()
        });
        let mut dgamma = vec![F::zero(); c];
        let mut dbeta = vec![F::zero(); c];
        let dz = layers::batchnorm_backward(&dy, &tape.bn, gamma, &mut dgamma, &mut dbeta);
        for (g, d) in self.store.params[u.gamma].grad.iter_mut().zip(&dgamma) {
            *g = *g + *d;
        }
        for (g, d) in self.store.params[u.beta].grad.iter_mut().zip(&dbeta) {
            *g = *g + *d;
        }
        let p = &mut self.store.params[u.weight];
        layers::conv2d_backward(&tape.input, &p.value, &dz, &u.geom, &mut p.grad, None, need_dx)
    }

    fn up_eval(&self, up: &Up, x: &Tensor4D<F>) -> Tensor4D<F> {
        let w = &self.store.params[up.weight].value;
        let b = &self.store.params[up.bias].value;
        match self.cfg.upsample {
            UpsampleMode::Transposed => layers::conv_transpose2_forward(x, w, b, up.cout),
            UpsampleMode::NearestConv => {
                let geom = ConvGeom {
                    cin: up.cin,
                    cout: up.cout,
                    k: self.cfg.kernel_size,
                };
                layers::conv2d_forward(&layers::upsample2_forward(x), w, Some(b), &geom)
            }
        }
    }

    fn up_backward(&mut self, up: &Up, saved: &Tensor4D<F>, dy: &Tensor4D<F>) -> Tensor4D<F> {
        let k = self.cfg.kernel_size;
        let mode = self.cfg.upsample;
        let (wi, bi) = (up.weight, up.bias);
        let mut dbias = vec![F::zero(); up.cout];
        let dx = {
            let p = &mut self.store.params[wi];
            match mode {
                UpsampleMode::Transposed => layers::conv_transpose2_backward(saved, &p.value, dy, up.cout, &mut p.grad, &mut dbias),
                UpsampleMode::NearestConv => {
                    let geom = ConvGeom {
                        cin: up.cin,
                        cout: up.cout,
                        k,
                    };
                    let d_up = layers::conv2d_backward(saved, &p.value, dy, &geom, &mut p.grad, Some(&mut dbias), true)
                        .expect("requested input gradient");
                    layers::upsample2_backward(&d_up)
                }
            }
        };
        for (g, d) in self.store.params[bi].grad.iter_mut().zip(&dbias) {
            *g = *g + *d;
        }
        dx
    }

    fn head_forward(&self, x: &Tensor4D<F>) -> Tensor4D<F> {
        let geom = ConvGeom {
            cin: self.cfg.features(0),
            cout: self.cfg.head_channels(),
            k: 1,
        };
        layers::conv2d_forward(
            x,
            &self.store.params[self.head_weight].value,
            Some(&self.store.params[self.head_bias].value),
            &geom,
        )
    }

    /// Inference with running batch-norm statistics. Does not modify the network.
    pub fn forward_eval(&self, x: &Tensor4D<F>) -> Result<Tensor4D<F>> {
        self.check_input(x)?;
        let levels = self.cfg.encoder_blocks;
        let mut skips = Vec::with_capacity(levels);
        let mut h = x.clone();
        for k in 0..levels {
            for u in &self.enc[k] {
                h = self.unit_eval(u, &h);
            }
            let pooled = layers::maxpool2_forward(&h).0;
            skips.push(h);
            h = pooled;
        }
        for u in &self.bottleneck {
            h = self.unit_eval(u, &h);
        }
        for k in (0..levels).rev() {
            let up = self.up_eval(&self.ups[k], &h);
            h = layers::concat_channels(&skips[k], &up);
            for u in &self.dec[k] {
                h = self.unit_eval(u, &h);
            }
        }
        Ok(self.head_forward(&h))
    }

    /// Training-mode pass: batch statistics, running-statistic update, and
    /// retention of everything [`UNet::backward`] needs.
    pub fn forward_train(&mut self, x: &Tensor4D<F>) -> Result<Tensor4D<F>> {
        self.check_input(x)?;
        self.tape = None;
        let levels = self.cfg.encoder_blocks;
        let enc_units = self.enc.clone();
        let bottleneck_units = self.bottleneck.clone();
        let dec_units = self.dec.clone();
        let mut enc_t = Vec::with_capacity(levels);
        let mut pools = Vec::with_capacity(levels);
        let mut skips = Vec::with_capacity(levels);
        let mut h = x.clone();
        for units in &enc_units {
            let mut tapes = Vec::with_capacity(units.len());
            for u in units {
                let (y, t) = self.unit_train(u, h);
                tapes.push(t);
                h = y;
            }
            enc_t.push(tapes);
            let (pooled, arg) = layers::maxpool2_forward(&h);
            pools.push((arg, h.shape()));
            skips.push(h);
            h = pooled;
        }
        let mut bott_t = Vec::with_capacity(bottleneck_units.len());
        for u in &bottleneck_units {
            let (y, t) = self.unit_train(u, h);
            bott_t.push(t);
            h = y;
        }
        let mut ups_t: Vec<Option<Tensor4D<F>>> = vec![None; levels];
        let mut dec_t: Vec<Vec<UnitTape<F>>> = vec![Vec::new(); levels];
        for k in (0..levels).rev() {
            let up = self.ups[k].clone();
            let upped = self.up_eval(&up, &h);
            ups_t[k] = Some(match self.cfg.upsample {
                UpsampleMode::Transposed => h,
                UpsampleMode::NearestConv => layers::upsample2_forward(&h),
            });
            h = layers::concat_channels(&skips[k], &upped);
            for u in &dec_units[k] {
                let (y, t) = self.unit_train(u, h);
                dec_t[k].push(t);
                h = y;
            }
        }
        let logits = self.head_forward(&h);
        self.tape = Some(Tape {
            enc: enc_t,
            pools,
            bottleneck: bott_t,
            ups: ups_t,
            dec: dec_t,
            head_input: h,
            logits_shape: logits.shape(),
        });
        Ok(logits)
    }

    /// Accumulate parameter gradients of a scalar loss given its gradient with
    /// respect to the logits of the last [`UNet::forward_train`]. Consumes the
    /// retained activations; gradients add to whatever the store holds.
    pub fn backward(&mut self, dlogits: &Tensor4D<F>) -> Result<()> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| invalid!("backward called without a retained training-mode forward pass"))?;
        if dlogits.shape() != tape.logits_shape {
            return Err(Error::ShapeMismatch(format!(
                "logit gradient {:?} does not match logits {:?}",
                dlogits.shape(),
                tape.logits_shape
            )));
        }
        let levels = self.cfg.encoder_blocks;
        let head_geom = ConvGeom {
            cin: self.cfg.features(0),
            cout: self.cfg.head_channels(),
            k: 1,
        };
        let mut dhead_b = vec![F::zero(); head_geom.cout];
        let mut d = {
            let p = &mut self.store.params[self.head_weight];
            layers::conv2d_backward(&tape.head_input, &p.value, dlogits, &head_geom, &mut p.grad, Some(&mut dhead_b), true)
                .expect("requested input gradient")
        };
        for (g, v) in self.store.params[self.head_bias].grad.iter_mut().zip(&dhead_b) {
            *g = *g + *v;
        }

        let units = (self.enc.clone(), self.bottleneck.clone(), self.ups.clone(), self.dec.clone());
        let (enc_u, bott_u, ups_u, dec_u) = units;
        let mut dskips: Vec<Option<Tensor4D<F>>> = vec![None; levels];
        for k in 0..levels {
            for (u, t) in dec_u[k].iter().zip(&tape.dec[k]).rev() {
                d = self.unit_backward(u, t, d, true).expect("requested input gradient");
            }
            let (dskip, dup) = layers::split_channels(&d, self.cfg.features(k));
            dskips[k] = Some(dskip);
            let saved = tape.ups[k].as_ref().expect("up layer input retained");
            d = self.up_backward(&ups_u[k], saved, &dup);
        }
        // `d` now holds the gradient at the bottleneck output, which is
        // processed first in the reverse sweep below.
        for (u, t) in bott_u.iter().zip(&tape.bottleneck).rev() {
            d = self.unit_backward(u, t, d, true).expect("requested input gradient");
        }
        for k in (0..levels).rev() {
            let (arg, shape) = &tape.pools[k];
            let mut dk = layers::maxpool2_backward(&d, arg, *shape);
            if let Some(s) = dskips[k].take() {
                for (a, b) in dk.data_mut().iter_mut().zip(s.data()) {
                    *a = *a + *b;
                }
            }
            d = dk;
            let n_units = enc_u[k].len();
            for (i, (u, t)) in enc_u[k].iter().zip(&tape.enc[k]).enumerate().rev() {
                let first_overall = k == 0 && i == 0;
                match self.unit_backward(u, t, d.clone(), !first_overall) {
                    Some(dx) => d = dx,
                    None => debug_assert!(first_overall && n_units > 0),
                }
            }
        }
        Ok(())
    }
}
