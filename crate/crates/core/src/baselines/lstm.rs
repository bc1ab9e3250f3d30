use std::io::{Read, Write};

use cchp_autodiff::checkpoint::{read_checkpoint, write_checkpoint};
use cchp_autodiff::{rng, Array, Gradients, ParameterStore, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::domain::{GestureFrame, OperationFrame, GESTURE_DIM, OPERATION_DIM};
use crate::error::{Error, Result};
use crate::model::layers::{store_binder, Binder, BoundLinear, BoundLstm, Linear, LstmCell, LstmState};
use crate::model::{check_same_layout, ElboDiagnostics, Normalizer};

pub const KIND_LSTM: &str = "lstm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub hidden_size: usize,
    pub layers: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            hidden_size: 128,
            layers: 2,
        }
    }
}

#[derive(Clone, Debug)]
struct Layers {
    cells: Vec<LstmCell>,
    out: Linear,
}

struct Bound {
    cells: Vec<BoundLstm>,
    out: BoundLinear,
}

/// Context-free stacked LSTM regressor from gestures to operations,
/// trained with squared error on standardized operations.
#[derive(Clone, Debug)]
pub struct LstmRegressor {
    pub config: LstmConfig,
    pub normalizer: Normalizer,
    pub params: ParameterStore,
    layers: Layers,
}

#[derive(Serialize, Deserialize)]
struct Metadata<T> {
    config: LstmConfig,
    normalizer: Normalizer,
    extra: T,
}

/// Target clips of equal length laid out one per row.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    pub rows: usize,
    x: Vec<Array>,
    y: Vec<Array>,
}

impl LstmRegressor {
    pub fn new(config: LstmConfig, normalizer: Normalizer, seed: u64) -> Result<Self> {
        if config.hidden_size == 0 || config.layers == 0 {
            return Err(Error::InvalidArgument(format!("invalid regressor size {config:?}")));
        }
        let mut params = ParameterStore::new();
        let mut r = rng::stream(seed, &[0x15f3]);
        let mut cells = Vec::with_capacity(config.layers);
        let mut input = GESTURE_DIM;
        for l in 0..config.layers {
            cells.push(LstmCell::register(&mut params, &format!("lstm.{l}"), input, config.hidden_size, &mut r)?);
            input = config.hidden_size;
        }
        let out = Linear::register(&mut params, "out", config.hidden_size, OPERATION_DIM, &mut r)?;
        Ok(Self {
            config,
            normalizer,
            params,
            layers: Layers { cells, out },
        })
    }

    fn bind(&self, b: &mut Binder) -> Result<Bound> {
        Ok(Bound {
            cells: self.layers.cells.iter().map(|c| c.bind(b)).collect::<Result<_>>()?,
            out: self.layers.out.bind(b)?,
        })
    }

    fn normalized_rows(&self, seqs: &[&[GestureFrame]], t: usize) -> Result<Array> {
        let mut data = Vec::with_capacity(seqs.len() * GESTURE_DIM);
        for s in seqs {
            self.normalizer.gesture(&s[t].keypoints, &mut data);
        }
        Ok(Array::new(vec![seqs.len(), GESTURE_DIM], data)?)
    }

    pub fn prepare(&self, clips: &[(&[GestureFrame], &[OperationFrame])]) -> Result<SequenceBatch> {
        let n = clips.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?.0.len();
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        if clips.iter().any(|(g, o)| g.len() != n || o.len() != n) {
            return Err(Error::Shape("batch sequences must share a length".into()));
        }
        let gs: Vec<&[GestureFrame]> = clips.iter().map(|c| c.0).collect();
        let x = (0..n).map(|t| self.normalized_rows(&gs, t)).collect::<Result<_>>()?;
        let y = (0..n)
            .map(|t| {
                let mut d = Vec::with_capacity(clips.len() * OPERATION_DIM);
                for (_, o) in clips {
                    self.normalizer.operation(&o[t].to_array(), &mut d);
                }
                Array::new(vec![clips.len(), OPERATION_DIM], d).map_err(Error::from)
            })
            .collect::<Result<_>>()?;
        Ok(SequenceBatch {
            rows: clips.len(),
            x,
            y,
        })
    }

    fn forward(&self, tape: &Tape, net: &Bound, xs: &[Var], rows: usize) -> Result<Vec<Var>> {
        let h = self.config.hidden_size;
        let mut states: Vec<LstmState> = net.cells.iter().map(|_| LstmState::zeros(tape, rows, h)).collect();
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let mut input = x;
            for (cell, s) in net.cells.iter().zip(states.iter_mut()) {
                *s = cell.step(tape, input, *s)?;
                input = s.h;
            }
            out.push(net.out.apply(tape, input)?);
        }
        Ok(out)
    }

    /// Summed squared error of the batch in standardized units.
    pub fn loss_on_tape(&self, tape: &Tape, trainable: bool, batch: &SequenceBatch) -> Result<Var> {
        let net = self.bind(&mut store_binder(&self.params, tape, trainable))?;
        let xs: Vec<Var> = batch.x.iter().map(|a| tape.constant(a.clone())).collect();
        let preds = self.forward(tape, &net, &xs, batch.rows)?;
        let terms = preds
            .iter()
            .zip(&batch.y)
            .map(|(&p, y)| {
                let d = tape.sub(p, tape.constant(y.clone()))?;
                Ok(tape.sum(tape.square(d)?)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(tape.add_n(&terms)?)
    }

    pub fn batch_gradients(&self, batch: &SequenceBatch) -> Result<(ElboDiagnostics, Gradients)> {
        let tape = Tape::new();
        let loss = self.loss_on_tape(&tape, true, batch)?;
        let grads = tape.backward(loss)?.named();
        let v = tape.value(loss).item();
        Ok((
            ElboDiagnostics {
                loss: v,
                nll: v,
                kl: 0.0,
            },
            grads,
        ))
    }

    /// Predicts one operation sequence per gesture sequence. All sequences
    /// must share a length.
    pub fn predict(&self, gestures: &[&[GestureFrame]]) -> Result<Vec<Vec<OperationFrame>>> {
        let n = gestures.first().map_or(0, |g| g.len());
        if gestures.iter().any(|g| g.len() != n) {
            return Err(Error::Shape("batch sequences must share a length".into()));
        }
        let tape = Tape::new();
        let net = self.bind(&mut store_binder(&self.params, &tape, false))?;
        let xs = (0..n)
            .map(|t| Ok(tape.constant(self.normalized_rows(gestures, t)?)))
            .collect::<Result<Vec<_>>>()?;
        let preds = self.forward(&tape, &net, &xs, gestures.len())?;
        let mut out = vec![Vec::with_capacity(n); gestures.len()];
        for p in preds {
            let v = tape.value(p);
            for (b, seq) in out.iter_mut().enumerate() {
                seq.push(OperationFrame::from_slice(&self.normalizer.operation_raw(v.row(b))));
            }
        }
        Ok(out)
    }

    pub fn save<W: Write, T: Serialize>(&self, mut w: W, extra: &T) -> Result<()> {
        let meta = serde_json::to_string(&Metadata {
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            extra,
        })?;
        write_checkpoint(&mut w, KIND_LSTM, &meta, &self.params)?;
        Ok(())
    }

    pub fn load<R: Read, T: for<'de> Deserialize<'de>>(mut r: R) -> Result<(Self, T)> {
        let (kind, meta, store) = read_checkpoint(&mut r)?;
        if kind != KIND_LSTM {
            return Err(Error::Parse(format!("checkpoint holds a `{kind}` model")));
        }
        let meta: Metadata<T> = serde_json::from_str(&meta)?;
        let mut model = Self::new(meta.config, meta.normalizer, 0)?;
        check_same_layout(&model.params, &store)?;
        model.params = store;
        Ok((model, meta.extra))
    }
}
