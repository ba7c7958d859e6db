use rand::{Rng, RngCore};

use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::Matrix;

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` at train
/// time; evaluation mode is the identity.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut dyn RngCore>,
}

impl<'r> Dropout<'r> {
    pub fn eval() -> Self {
        Dropout {
            rate: 0.0,
            rng: None,
        }
    }

    pub fn train(rate: f64, rng: &'r mut dyn RngCore) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Dropout {
            rate,
            rng: Some(rng),
        }
    }

    pub fn is_active(&self) -> bool {
        self.rate > 0.0 && self.rng.is_some()
    }

    pub fn apply<'t>(&mut self, x: Var<'t>) -> Result<Var<'t>> {
        let rate = self.rate;
        let Some(rng) = self.rng.as_deref_mut().filter(|_| rate > 0.0) else {
            return Ok(x);
        };
        let (r, c) = x.shape();
        let keep = 1.0 / (1.0 - rate);
        let data = (0..r * c)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        x.mask(Matrix::new(r, c, data)?)
    }
}
