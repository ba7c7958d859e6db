//! Named parameter traversal shared by the optimizer and checkpoints.

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// A fixed, ordered collection of named tensors.
///
/// `named` and `named_mut` must list tensors in the same order; the order
/// defines the leaf layout used by [`Parameters::bind_leaves`].
pub trait Parameters: Clone {
    type Vars<'t>;

    fn named(&self) -> Vec<(String, &Matrix)>;
    fn named_mut(&mut self) -> Vec<(String, &mut Matrix)>;

    /// Rebuilds the structured view from leaves given in `named` order.
    fn vars_from<'t>(&self, leaves: &mut dyn Iterator<Item = Var<'t>>) -> Self::Vars<'t>;

    fn bind_leaves<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.named()
            .into_iter()
            .map(|(_, m)| tape.leaf(m.clone()))
            .collect()
    }

    fn bind<'t>(&self, tape: &'t Tape) -> (Vec<Var<'t>>, Self::Vars<'t>) {
        let leaves = self.bind_leaves(tape);
        let vars = self.vars_from(&mut leaves.clone().into_iter());
        (leaves, vars)
    }

    fn tensors(&self) -> Vec<Matrix> {
        self.named().into_iter().map(|(_, m)| m.clone()).collect()
    }

    /// Replaces every tensor, in `named` order, checking shapes.
    fn load_tensors(&mut self, tensors: Vec<Matrix>) -> Result<()> {
        let mut slots = self.named_mut();
        if slots.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "expected {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for ((name, slot), t) in slots.iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::invalid(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            **slot = t;
        }
        Ok(())
    }

    fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }
}

/// Pulls gradients for a leaf list, in order.
pub fn collect_grads(grads: &mut Gradients, leaves: &[Var<'_>]) -> Vec<Matrix> {
    leaves.iter().map(|v| grads.take(*v)).collect()
}

pub(crate) fn next_leaf<'t>(it: &mut dyn Iterator<Item = Var<'t>>) -> Var<'t> {
    it.next().expect("leaf layout shorter than parameter list")
}
