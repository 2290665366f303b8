use super::graph::Gradients;
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW with bias-corrected moments and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.second[index]
    }

    /// One update at learning rate `lr`. Parameters without a gradient are
    /// still decayed; a non-finite gradient aborts before anything changes.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for (id, p) in store.iter() {
            if let Some(g) = grads.param(id) {
                if g.len() != p.value.len() {
                    return Err(Error::dim("adamw", p.value.shape(), g.shape()));
                }
                if !g.all_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite gradient for parameter `{}`",
                        p.name
                    )));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let decay = if p.decay { 1.0 - lr * c.weight_decay } else { 1.0 };
            let values = p.value.data_mut();
            let grad = grads.params()[i].as_ref().map(|g| g.data());
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..values.len() {
                let g = grad.map_or(0.0, |g| g[j]);
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                values[j] = values[j] * decay - lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate at `step` of `total_steps`.
pub fn cosine_anneal(lr0: f64, step: usize, total_steps: usize, lr_min: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Range("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::Range(format!("step {step} exceeds total_steps {total_steps}")));
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Graph, Tensor};

    fn single(value: f64, decay: bool) -> (ParamStore, crate::numcore::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![value]), decay);
        (store, id)
    }

    fn grads_for(store: &ParamStore, id: crate::numcore::ParamId, coeff: f64) -> Gradients {
        // loss = coeff * w  =>  dloss/dw = coeff
        let mut g = Graph::new(store);
        let w = g.param(id);
        let s = g.scale(w, coeff);
        let l = g.sum(s);
        g.backward(l).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut store, id) = single(1.5, true);
        let grads = grads_for(&store, id, 0.0);
        let mut opt = AdamW::new(
            &store,
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
        );
        opt.step(&mut store, &grads, 0.1).unwrap();
        assert_eq!(store.value(id).item(), 1.5);
    }

    #[test]
    fn zero_gradient_with_decay_scales_the_parameter() {
        let (mut store, id) = single(2.0, true);
        let grads = grads_for(&store, id, 0.0);
        let mut opt = AdamW::new(
            &store,
            AdamWConfig {
                weight_decay: 0.5,
                ..Default::default()
            },
        );
        opt.step(&mut store, &grads, 0.1).unwrap();
        assert!((store.value(id).item() - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut store, id) = single(0.0, false);
        let grads = grads_for(&store, id, 1.0);
        let mut opt = AdamW::new(&store, AdamWConfig::default());
        opt.step(&mut store, &grads, 0.1).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((store.value(id).item() - expected).abs() < 1e-15);
        assert_eq!(opt.steps(), 1);
        assert_eq!(opt.first_moment(0).len(), 1);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let (mut store, id) = single(0.0, false);
        let grads = grads_for(&store, id, f64::NAN);
        let mut opt = AdamW::new(&store, AdamWConfig::default());
        let err = opt.step(&mut store, &grads, 0.1).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_anneal(0.01, 0, 100, 0.0).unwrap(), 0.01);
        assert!((cosine_anneal(0.01, 100, 100, 0.001).unwrap() - 0.001).abs() < 1e-18);
        assert!((cosine_anneal(0.01, 50, 100, 0.0).unwrap() - 0.005).abs() < 1e-15);
        assert!(cosine_anneal(0.01, 101, 100, 0.0).is_err());
    }
}
