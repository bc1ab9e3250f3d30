//! Parameter-backed building blocks recorded on a tape.

use cchp_autodiff::{Array, ParameterStore, Tape, Var};
use rand::Rng;

use crate::error::Result;

/// Resolves a parameter name to a node on the current tape.
pub type Binder<'a> = dyn FnMut(&str) -> Result<Var> + 'a;

/// Binds stored parameters as trainable leaves, or as constants when
/// gradients are not needed.
pub fn store_binder<'a>(
    store: &'a ParameterStore,
    tape: &'a Tape,
    trainable: bool,
) -> impl FnMut(&str) -> Result<Var> + 'a {
    move |name| {
        Ok(if trainable {
            store.bind(tape, name)?
        } else {
            tape.constant_arc(store.require(name)?.clone())
        })
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
}

impl Linear {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = format!("{name}.w");
        let bias = format!("{name}.b");
        store.insert_glorot(&weight, fan_in, fan_out, rng)?;
        store.insert_zeros(&bias, &[fan_out])?;
        Ok(Self { weight, bias })
    }

    pub fn bind(&self, b: &mut Binder) -> Result<BoundLinear> {
        Ok(BoundLinear {
            w: b(&self.weight)?,
            b: b(&self.bias)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Var,
}

impl BoundLinear {
    pub fn apply(&self, tape: &Tape, x: Var) -> Result<Var> {
        Ok(tape.linear(x, self.w, self.b)?)
    }
}

/// Fully connected stack with ReLU after every layer but the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        input: usize,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::register(store, &format!("{name}.{i}"), fan_in, w, rng)?);
            fan_in = w;
        }
        Ok(Self { layers })
    }

    pub fn bind(&self, b: &mut Binder) -> Result<BoundMlp> {
        Ok(BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(b)).collect::<Result<_>>()?,
            final_relu: false,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub layers: Vec<BoundLinear>,
    pub final_relu: bool,
}

impl BoundMlp {
    pub fn apply(&self, tape: &Tape, mut x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.apply(tape, x)?;
            if i < last || self.final_relu {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }
}

/// LSTM cell with gate order (input, forget, candidate, output).
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input: Linear,
    pub recurrent: String,
    pub hidden: usize,
}

impl LstmCell {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let lin = Linear::register(store, &format!("{name}.x"), input, 4 * hidden, rng)?;
        let recurrent = format!("{name}.h.w");
        store.insert_glorot(&recurrent, hidden, 4 * hidden, rng)?;
        Ok(Self {
            input: lin,
            recurrent,
            hidden,
        })
    }

    pub fn bind(&self, b: &mut Binder) -> Result<BoundLstm> {
        Ok(BoundLstm {
            input: self.input.bind(b)?,
            recurrent: b(&self.recurrent)?,
            hidden: self.hidden,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &Tape, rows: usize, hidden: usize) -> Self {
        Self {
            h: tape.constant(Array::zeros(&[rows, hidden])),
            c: tape.constant(Array::zeros(&[rows, hidden])),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    pub input: BoundLinear,
    pub recurrent: Var,
    pub hidden: usize,
}

impl BoundLstm {
    pub fn step(&self, tape: &Tape, x: Var, s: LstmState) -> Result<LstmState> {
        let h = self.hidden;
        let gates = tape.add(self.input.apply(tape, x)?, tape.matmul(s.h, self.recurrent)?)?;
        let i = tape.sigmoid(tape.slice(gates, 0, h)?)?;
        let f = tape.sigmoid(tape.slice(gates, h, 2 * h)?)?;
        let g = tape.tanh(tape.slice(gates, 2 * h, 3 * h)?)?;
        let o = tape.sigmoid(tape.slice(gates, 3 * h, 4 * h)?)?;
        let c = tape.add(tape.mul(f, s.c)?, tape.mul(i, g)?)?;
        let h = tape.mul(o, tape.tanh(c)?)?;
        Ok(LstmState { h, c })
    }
}
