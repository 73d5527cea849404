use crate::numerics::{ParamStore, Real, Tensor};

/// SGD with classical momentum and L2 weight decay:
/// `v <- mu v + (g + wd w)`, `w <- w - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd<T: Real = f32> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(store: &ParamStore<T>, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        let (mu, wd, lr) = (T::lit(self.momentum), T::lit(self.weight_decay), T::lit(lr));
        for (p, v) in store.iter_mut().zip(self.velocity.iter_mut()) {
            let w = p.value.data_mut();
            for ((wi, &gi), vi) in w.iter_mut().zip(p.grad.data()).zip(v.data_mut()) {
                *vi = mu * *vi + gi + wd * *wi;
                *wi = *wi - lr * *vi;
            }
        }
    }
}
