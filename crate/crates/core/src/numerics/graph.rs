use crate::error::Result;
use crate::numerics::{Gradients, ParamStore, Tape, Var};

/// A tape bound to a parameter store. Each parameter is copied onto the tape
/// at most once, on first use.
pub struct Graph<'p> {
    pub tape: Tape,
    params: &'p ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self.params.id(name)?;
        if let Some(v) = self.bound[id.0] {
            return Ok(v);
        }
        let v = self.tape.param(self.params, id);
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    /// `x·W + b` with parameters `{prefix}.w` and `{prefix}.b`.
    pub fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        self.tape.affine(x, w, b)
    }

    /// `x·W` with parameter `{prefix}.w`.
    pub fn linear_no_bias(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        self.tape.matmul(x, w)
    }

    pub fn layer_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let g = self.param(&format!("{prefix}.g"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        self.tape.layer_norm(x, g, b, 1e-5)
    }

    pub fn backward_into(&self, loss: Var, seed: f64, grads: &mut Gradients) {
        self.tape.backward_into(loss, seed, grads);
    }

    pub fn gradients(&self, loss: Var) -> Gradients {
        self.tape.backward(loss, self.params.len())
    }
}
