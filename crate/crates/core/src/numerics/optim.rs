use super::{Group, ParameterSet};

/// First-order update rule over the trainable groups of a [`ParameterSet`].
pub trait Optimizer {
    fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet, trainable: &[Group]);
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet, trainable: &[Group]) {
        params.axpy(-self.lr, grads, trainable);
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Option<ParameterSet>,
    v: Option<ParameterSet>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: None,
            v: None,
            t: 0,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet, trainable: &[Group]) {
        let m = self.m.get_or_insert_with(|| params.zeros_like());
        let v = self.v.get_or_insert_with(|| params.zeros_like());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for id in 0..params.len() {
            if !trainable.contains(&params.group(id)) {
                continue;
            }
            let g = grads.values(id);
            let mi = m.values_mut(id);
            for (a, &gi) in mi.iter_mut().zip(g) {
                *a = self.beta1 * *a + (1.0 - self.beta1) * gi;
            }
            let vi = v.values_mut(id);
            for (a, &gi) in vi.iter_mut().zip(g) {
                *a = self.beta2 * *a + (1.0 - self.beta2) * gi * gi;
            }
            let (mi, vi) = (m.values(id), v.values(id));
            for ((p, &mm), &vv) in params.values_mut(id).iter_mut().zip(mi).zip(vi) {
                *p -= self.lr * (mm / c1) / ((vv / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Named choice of update rule, for configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn build(self, lr: f64) -> Box<dyn Optimizer> {
        match self {
            OptimizerKind::Sgd => Box::new(Sgd { lr }),
            OptimizerKind::Adam => Box::new(Adam::new(lr)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(crate::error::Error::Config(format!(
                "unknown optimizer {other:?}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn quad() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("x", Group::Ilm, Tensor::vector(vec![3.0, -2.0]).unwrap())
            .unwrap();
        p.insert("y", Group::Encoder, Tensor::vector(vec![5.0]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn adam_minimizes_quadratic_on_trainable_groups_only() {
        let mut p = quad();
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let g = p.clone();
            opt.step(&mut p, &g, &[Group::Ilm]);
        }
        assert!(p.get("x").unwrap().data().iter().all(|v| v.abs() < 1e-2));
        assert_eq!(p.get("y").unwrap().data(), &[5.0]);
    }

    #[test]
    fn sgd_step() {
        let mut p = quad();
        let g = p.clone();
        Sgd { lr: 0.5 }.step(&mut p, &g, &Group::ALL);
        assert_eq!(p.get("x").unwrap().data(), &[1.5, -1.0]);
    }
}
