//! Named trainable tensors, batch-norm statistics and the Adam update.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::Scalar;
use crate::error::{invalid, Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Zero-mean normal with standard deviation `sqrt(2 / fan_in)`.
    He { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
    /// Adam first and second moments; empty until the first step.
    pub m: Vec<F>,
    pub v: Vec<F>,
}

impl<F: Scalar> Param<F> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Non-trainable state (batch-norm running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer<F> {
    pub name: String,
    pub value: Vec<F>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore<F> {
    pub params: Vec<Param<F>>,
    pub buffers: Vec<Buffer<F>>,
    /// Number of Adam steps taken.
    pub step: u64,
}

impl<F: Scalar> ParameterStore<F> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            buffers: Vec::new(),
            step: 0,
        }
    }

    /// Allocate and initialize `spec`, returning its index.
    pub fn add_param(&mut self, spec: &ParamSpec, rng: &mut StreamRng) -> usize {
        let n = spec.len();
        let value: Vec<F> = match spec.init {
            Init::He { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        F::of(z * std)
                    })
                    .collect()
            }
            Init::Zeros => vec![F::zero(); n],
            Init::Ones => vec![F::one(); n],
        };
        self.params.push(Param {
            name: spec.name.clone(),
            shape: spec.shape.clone(),
            grad: vec![F::zero(); n],
            value,
            m: Vec::new(),
            v: Vec::new(),
        });
        self.params.len() - 1
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Vec<F>) -> usize {
        self.buffers.push(Buffer {
            name: name.into(),
            value,
        });
        self.buffers.len() - 1
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    pub fn param(&self, name: &str) -> Option<&Param<F>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<F>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Buffer<F>> {
        self.buffers.iter().find(|b| b.name == name)
    }

    /// Mutable access to two distinct buffers at once.
    pub(crate) fn buffer_pair_mut(&mut self, a: usize, b: usize) -> (&mut [F], &mut [F]) {
        assert!(a < b, "buffer indices must be increasing");
        let (lo, hi) = self.buffers.split_at_mut(b);
        (&mut lo[a].value, &mut hi[0].value)
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g.f64() * g.f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Copy values and buffers (not gradients or moments) into another scalar type.
    pub fn cast<G: Scalar>(&self) -> ParameterStore<G> {
        let conv = |v: &[F]| v.iter().map(|x| G::of(x.f64())).collect::<Vec<G>>();
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: conv(&p.value),
                    grad: vec![G::zero(); p.len()],
                    m: Vec::new(),
                    v: Vec::new(),
                })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|b| Buffer {
                    name: b.name.clone(),
                    value: conv(&b.value),
                })
                .collect(),
            step: self.step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid!("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid!("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// One bias-corrected Adam step on every trainable parameter.
///
/// Increments the store's step counter first, so the first call uses `t = 1`.
/// Gradients are checked before anything is modified; a non-finite entry
/// leaves the store untouched.
pub fn adam_step<F: Scalar>(store: &mut ParameterStore<F>, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(invalid!("learning rate {lr} must be finite and non-negative"));
    }
    for p in &store.params {
        if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient {:?} in parameter {} at index {i} (step {})",
                p.grad[i],
                p.name,
                store.step + 1
            )));
        }
    }
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let (ob1, ob2) = (F::of(1.0 - cfg.beta1), F::of(1.0 - cfg.beta2));
    for p in &mut store.params {
        if p.m.len() != p.value.len() {
            p.m = vec![F::zero(); p.value.len()];
            p.v = vec![F::zero(); p.value.len()];
        }
        for i in 0..p.value.len() {
            let g = p.grad[i];
            p.m[i] = b1 * p.m[i] + ob1 * g;
            p.v[i] = b2 * p.v[i] + ob2 * g * g;
            let m_hat = p.m[i].f64() / c1;
            let v_hat = p.v[i].f64() / c2;
            let upd = lr * m_hat / (v_hat.sqrt() + cfg.eps);
            p.value[i] = p.value[i] - F::of(upd);
        }
    }
    Ok(())
}
