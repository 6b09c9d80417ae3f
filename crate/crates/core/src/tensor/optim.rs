use super::{Graph, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Named trainable tensors, kept in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Invalid(format!("duplicate parameter `{name}`")));
        }
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count over all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Adds the leaf gradients of every parameter bound in `graph`. Bound
    /// parameters the backward pass never reached receive zeros.
    pub fn accumulate_grads(&mut self, graph: &Graph) {
        for (id, grad) in graph.bound_params() {
            let p = &mut self.params[id.0];
            let acc = p
                .grad
                .get_or_insert_with(|| Tensor::zeros(p.value.shape().to_vec()));
            if let Some(g) = grad {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            if let Some(g) = p.grad.as_mut() {
                g.data_mut().fill(0.0);
            }
        }
    }

    /// Replaces the value of each named entry; shapes must match.
    pub fn load(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in entries {
            let id = self
                .find(name)
                .ok_or_else(|| Error::Shape(format!("checkpoint has unknown parameter `{name}`")))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{name}`: model {:?}, checkpoint {:?}",
                    p.value.shape(),
                    t.shape()
                )));
            }
            p.value = t.clone();
        }
        if let Some(missing) = self.params.iter().find(|p| !entries.iter().any(|(n, _)| *n == p.name)) {
            return Err(Error::Shape(format!("checkpoint lacks parameter `{}`", missing.name)));
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(p) = store.params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        if self.moments.is_empty() {
            self.moments = store
                .params
                .iter()
                .map(|p| (vec![0.0; p.value.numel()], vec![0.0; p.value.numel()]))
                .collect();
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (p, (m, v)) in store.params.iter_mut().zip(&mut self.moments) {
            let grad = p.grad.as_mut().expect("checked above");
            for (((w, g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
            grad.data_mut().fill(0.0);
        }
        Ok(())
    }
}
