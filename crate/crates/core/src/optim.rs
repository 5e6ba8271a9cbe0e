//! Adam over named parameter maps.

use crate::error::{Error, Result};
use crate::{Mat, Params};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Params::new(),
            v: Params::new(),
        }
    }

    /// Applies one update. Parameters without an entry in `grads` are left
    /// untouched.
    pub fn step(&mut self, params: &mut Params, grads: &Params) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Shape(format!("gradient for unknown parameter {name}")))?;
            if p.dim() != g.dim() {
                return Err(Error::Shape(format!("{name}: gradient shape {:?}", g.dim())));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Mat::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Mat::zeros(g.raw_dim()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}

/// `acc += g` entry-wise, inserting missing names.
pub fn accumulate(acc: &mut Params, g: Params) {
    for (name, t) in g {
        match acc.get_mut(&name) {
            Some(a) => *a += &t,
            None => {
                acc.insert(name, t);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Params::new();
        p.insert("w".into(), Mat::from_elem((1, 2), 1.0));
        let mut g = Params::new();
        g.insert("w".into(), Mat::from_shape_vec((1, 2), vec![3.0, -0.5]).unwrap());
        let mut adam = Adam::new(1e-3);
        adam.step(&mut p, &g).unwrap();
        assert!((p["w"][[0, 0]] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p["w"][[0, 1]] - (1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Params::new();
        p.insert("x".into(), Mat::from_elem((1, 1), 5.0));
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let mut g = Params::new();
            g.insert("x".into(), &p["x"] * 2.0);
            adam.step(&mut p, &g).unwrap();
        }
        assert!(p["x"][[0, 0]].abs() < 1e-2);
    }

    #[test]
    fn unknown_gradient_is_an_error() {
        let mut p = Params::new();
        let mut g = Params::new();
        g.insert("x".into(), Mat::zeros((1, 1)));
        assert!(Adam::new(1e-3).step(&mut p, &g).is_err());
    }
}
