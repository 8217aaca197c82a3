//! Layer types composed by the models, in tape form and as plain array functions.

use rand::Rng;

use crate::array::DenseArray;
use crate::error::{NnError, Result};
use crate::kernels;
use crate::params::ParameterStore;
use crate::tape::{Mode, Tape, Var, PROB_FLOOR};

/// `W·x + b` using parameters `{name}.weight` and `{name}.bias`.
pub fn linear(tape: &mut Tape<'_>, name: &str, x: Var) -> Result<Var> {
    let w = tape.param(&format!("{name}.weight"))?;
    let b = tape.param(&format!("{name}.bias"))?;
    tape.affine(w, Some(b), x).map_err(|e| name_dim_error(name, e))
}

/// `W·x` without a bias, using parameter `name` directly.
pub fn project(tape: &mut Tape<'_>, name: &str, x: Var) -> Result<Var> {
    let w = tape.param(name)?;
    tape.affine(w, None, x).map_err(|e| name_dim_error(name, e))
}

fn name_dim_error(name: &str, e: NnError) -> NnError {
    match e {
        NnError::Dimension(msg) => NnError::Dimension(format!("`{name}`: {msg}")),
        other => other,
    }
}

/// Forward-only `linear` on plain arrays.
pub fn linear_array(store: &ParameterStore, name: &str, x: &DenseArray) -> Result<DenseArray> {
    let mut tape = Tape::new(store);
    let xv = tape.input(x);
    let y = linear(&mut tape, name, xv)?;
    Ok(tape.to_array(y))
}

pub fn tanh_act(x: &DenseArray) -> DenseArray {
    map_array(x, f64::tanh)
}

pub fn sigmoid_act(x: &DenseArray) -> DenseArray {
    map_array(x, kernels::sigmoid)
}

fn map_array(x: &DenseArray, f: impl Fn(f64) -> f64) -> DenseArray {
    let values = x.values().iter().map(|v| f(*v)).collect();
    DenseArray::new(x.shape().to_vec(), values).expect("same shape")
}

pub fn softmax(x: &DenseArray) -> Result<DenseArray> {
    Ok(DenseArray::vector(kernels::softmax(x.values())?))
}

/// `−ln max(probs[target], 1e−12)`.
pub fn cross_entropy(probs: &DenseArray, target: usize) -> Result<f64> {
    let p = probs.values();
    if target >= p.len() {
        return Err(NnError::Index {
            index: target,
            len: p.len(),
        });
    }
    Ok(-p[target].max(PROB_FLOOR).ln())
}

pub fn dropout<R: Rng + ?Sized>(x: &DenseArray, p: f64, mode: Mode, rng: &mut R) -> Result<DenseArray> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::Config(format!("dropout probability {p} not in [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = kernels::dropout_mask(x.len(), p, rng);
    let values = x.values().iter().zip(mask).map(|(v, m)| v * m).collect();
    DenseArray::new(x.shape().to_vec(), values)
}

/// Gated recurrent unit with the reset gate applied before the candidate
/// projection:
///
/// ```text
/// r  = σ(W_r x + U_r h + b_r)
/// z  = σ(W_z x + U_z h + b_z)
/// h̃  = tanh(W_h x + U_h (r ∘ h) + b_h)
/// h' = (1 − z) ∘ h + z ∘ h̃
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruCell {
    prefix: String,
    input_dim: usize,
    hidden_dim: usize,
}

impl GruCell {
    pub fn new(prefix: &str, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            input_dim,
            hidden_dim,
        }
    }

    /// Adds the nine GRU arrays to `store`.
    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        let (d_in, d_h) = (self.input_dim, self.hidden_dim);
        for gate in ["r", "z", "h"] {
            store.add_matrix(&self.name("w", gate), d_h, d_in, rng)?;
            store.add_matrix(&self.name("u", gate), d_h, d_h, rng)?;
            store.insert(&self.name("b", gate), DenseArray::zeros(&[d_h]), false)?;
        }
        Ok(())
    }

    fn name(&self, kind: &str, gate: &str) -> String {
        format!("{}.{kind}_{gate}", self.prefix)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h: Var) -> Result<Var> {
        if tape.shape(x) != [self.input_dim] || tape.shape(h) != [self.hidden_dim] {
            return Err(NnError::Dimension(format!(
                "gru `{}` expects x[{}], h[{}], got {:?} and {:?}",
                self.prefix,
                self.input_dim,
                self.hidden_dim,
                tape.shape(x),
                tape.shape(h)
            )));
        }
        let r = self.gate(tape, "r", x, h)?;
        let r = tape.sigmoid(r);
        let z = self.gate(tape, "z", x, h)?;
        let z = tape.sigmoid(z);
        let rh = tape.mul(r, h)?;
        let cand = self.gate(tape, "h", x, rh)?;
        let cand = tape.tanh(cand);
        let delta = tape.sub(cand, h)?;
        let step = tape.mul(z, delta)?;
        tape.add(h, step)
    }

    fn gate(&self, tape: &mut Tape<'_>, gate: &str, x: Var, h: Var) -> Result<Var> {
        let w = tape.param(&self.name("w", gate))?;
        let b = tape.param(&self.name("b", gate))?;
        let u = tape.param(&self.name("u", gate))?;
        let wx = tape.affine(w, Some(b), x)?;
        let uh = tape.affine(u, None, h)?;
        tape.add(wx, uh)
    }

    /// Forward-only single step on plain arrays.
    pub fn step_array(&self, store: &ParameterStore, x: &DenseArray, h: &DenseArray) -> Result<DenseArray> {
        let mut tape = Tape::new(store);
        let xv = tape.input(x);
        let hv = tape.input(h);
        let out = self.step(&mut tape, xv, hv)?;
        Ok(tape.to_array(out))
    }
}
