use std::io::{Read, Write};
use std::sync::Arc;

use cchp_autodiff::checkpoint::{read_checkpoint, write_checkpoint};
use cchp_autodiff::prob::{kl_on_tape, log_prob_on_tape, LOG_VARIANCE_MAX, LOG_VARIANCE_MIN};
use cchp_autodiff::{rng, Array, DiagGaussian, Gradients, ParameterStore, Tape, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::CchpConfig;
use super::layers::{store_binder, Binder, BoundLinear, BoundLstm, BoundMlp, Linear, LstmCell, LstmState, Mlp};
use super::normalizer::Normalizer;
use crate::domain::{ContextSet, GestureFrame, OperationFrame, TargetSet, OPERATION_DIM};
use crate::error::{Error, Result};

pub const SIGMA_FLOOR: f64 = 1e-4;
pub const KIND_CCHP: &str = "cchp";
pub const KIND_RANP: &str = "ranp";

/// Predicted operation distribution for one step, in m/s and rad/s.
#[derive(Clone, Debug, PartialEq)]
pub struct OperationGaussian {
    pub mean: [f64; OPERATION_DIM],
    pub sigma: [f64; OPERATION_DIM],
}

/// Per-episode randomness of one training objective evaluation: the latent
/// draw and, for every target step, whether the previous ground-truth
/// operation is fed back instead of the previous predicted mean.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeNoise {
    pub eps: Vec<f64>,
    pub teacher: Vec<bool>,
}

impl EpisodeNoise {
    pub fn draw(r: &mut impl Rng, latent_dim: usize, target_len: usize, p_tf: f64) -> Self {
        let eps = (0..latent_dim).map(|_| r.sample(StandardNormal)).collect();
        let teacher = (0..target_len).map(|t| t > 0 && r.random_bool(p_tf)).collect();
        Self { eps, teacher }
    }
}

/// Loss terms summed over the episodes of a batch.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    pub loss: Var,
    pub nll: Var,
    pub kl: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboDiagnostics {
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
}

/// Episodes of equal context and target length laid out one per row,
/// already normalized.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    pub rows: usize,
    ctx_x: Vec<Array>,
    ctx_y: Vec<Array>,
    ctx_values: Array,
    tgt_x: Vec<Array>,
    tgt_y: Vec<Array>,
    tgt_y_raw: Vec<Array>,
}

impl PreparedBatch {
    pub fn context_len(&self) -> usize {
        self.ctx_x.len()
    }

    pub fn target_len(&self) -> usize {
        self.tgt_x.len()
    }
}

fn frames_to_rows<'a, T: 'a>(
    items: &[&'a [T]],
    t: usize,
    width: usize,
    mut f: impl FnMut(&'a T, &mut Vec<f64>),
) -> Array {
    let mut data = Vec::with_capacity(items.len() * width);
    for seq in items {
        f(&seq[t], &mut data);
    }
    Array::new(vec![items.len(), width], data).expect("row width matches")
}

fn ops_raw(o: &OperationFrame, out: &mut Vec<f64>) {
    out.extend_from_slice(&o.to_array());
}

/// Layer handles; parameters live in the model's store.
#[derive(Clone, Debug)]
struct Layers {
    hand: Mlp,
    cell: LstmCell,
    proj: Linear,
    trunk: Mlp,
    mean: Linear,
    logvar: Linear,
    heads: Vec<Mlp>,
}

impl Layers {
    fn register(c: &CchpConfig, store: &mut ParameterStore, r: &mut impl Rng) -> Result<Self> {
        let hand = Mlp::register(store, "enc.hand", c.gesture_dim + c.hidden_size, &c.hand_widths, r)?;
        let cell = LstmCell::register(store, "enc.lstm", c.cell_input_dim(), c.hidden_size, r)?;
        let agg = c.trunk_widths[0];
        let proj = Linear::register(store, "agg.proj", c.hidden_size + c.operation_dim, agg, r)?;
        let trunk = Mlp::register(store, "latent.trunk", agg, &c.trunk_widths, r)?;
        let top = *c.trunk_widths.last().unwrap();
        let mean = Linear::register(store, "latent.mean", top, c.latent_dim, r)?;
        let logvar = Linear::register(store, "latent.logvar", top, c.latent_dim, r)?;
        let mut head_widths = c.head_widths.clone();
        head_widths.push(2);
        let heads = (0..c.operation_dim)
            .map(|d| Mlp::register(store, &format!("out.{d}"), c.head_input_dim(), &head_widths, r))
            .collect::<Result<_>>()?;
        Ok(Self {
            hand,
            cell,
            proj,
            trunk,
            mean,
            logvar,
            heads,
        })
    }
}

/// Parameters of one model recorded on one tape.
pub struct BoundNet {
    hand: BoundMlp,
    cell: BoundLstm,
    proj: BoundLinear,
    trunk: BoundMlp,
    mean: BoundLinear,
    logvar: BoundLinear,
    heads: Vec<BoundMlp>,
    y_mean: Var,
    y_std: Var,
    rows_zero_y: Option<(usize, Var)>,
}

/// The latent recurrent policy: a recurrent encoder summarizes demonstrations
/// into a latent Gaussian, and a decoder sharing the encoder cell attends
/// over the context states to predict each operation.
#[derive(Clone, Debug)]
pub struct CchpModel {
    pub config: CchpConfig,
    pub normalizer: Normalizer,
    pub params: ParameterStore,
    layers: Layers,
}

#[derive(Serialize, Deserialize)]
struct Metadata<T> {
    config: CchpConfig,
    normalizer: Normalizer,
    extra: T,
}

impl CchpModel {
    pub fn new(config: CchpConfig, normalizer: Normalizer, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        let layers = Layers::register(&config, &mut params, &mut rng::stream(seed, &[0x1a17]))?;
        Ok(Self {
            config,
            normalizer,
            params,
            layers,
        })
    }

    pub fn kind(&self) -> &'static str {
        if self.config.autoregressive {
            KIND_CCHP
        } else {
            KIND_RANP
        }
    }

    pub fn bind(&self, tape: &Tape, binder: &mut Binder) -> Result<BoundNet> {
        let l = &self.layers;
        let mut trunk = l.trunk.bind(binder)?;
        trunk.final_relu = true;
        Ok(BoundNet {
            hand: l.hand.bind(binder)?,
            cell: l.cell.bind(binder)?,
            proj: l.proj.bind(binder)?,
            trunk,
            mean: l.mean.bind(binder)?,
            logvar: l.logvar.bind(binder)?,
            heads: l.heads.iter().map(|h| h.bind(binder)).collect::<Result<_>>()?,
            y_mean: tape.constant(Array::vector(self.normalizer.y_mean.clone())),
            y_std: tape.constant(Array::vector(self.normalizer.y_std.clone())),
            rows_zero_y: None,
        })
    }

    pub fn bind_store(&self, tape: &Tape, trainable: bool) -> Result<BoundNet> {
        self.bind(tape, &mut store_binder(&self.params, tape, trainable))
    }

    /// Lays out episodes with equal context and target lengths.
    pub fn prepare(&self, episodes: &[(&ContextSet, &TargetSet)]) -> Result<PreparedBatch> {
        let Some((c0, t0)) = episodes.first() else {
            return Err(Error::InvalidArgument("empty batch".into()));
        };
        let (nc, nt) = (c0.len(), t0.len());
        if nc == 0 {
            return Err(Error::EmptyContext);
        }
        if nt == 0 {
            return Err(Error::EmptySequence);
        }
        let mut targets_ops = Vec::with_capacity(episodes.len());
        for (c, t) in episodes {
            if c.len() != nc || t.len() != nt || c.operations.len() != nc {
                return Err(Error::Shape(format!(
                    "batch episodes must share lengths ({nc}, {nt}); got ({}, {})",
                    c.len(),
                    t.len()
                )));
            }
            let ops = t.operations.as_deref().ok_or(Error::MissingLabels)?;
            if ops.len() != nt {
                return Err(Error::Shape("target operations and gestures differ in length".into()));
            }
            targets_ops.push(ops);
        }
        let n = &self.normalizer;
        let (dx, dy) = (self.config.gesture_dim, self.config.operation_dim);
        let cg: Vec<&[GestureFrame]> = episodes.iter().map(|(c, _)| c.gestures.as_slice()).collect();
        let co: Vec<&[OperationFrame]> = episodes.iter().map(|(c, _)| c.operations.as_slice()).collect();
        let tg: Vec<&[GestureFrame]> = episodes.iter().map(|(_, t)| t.gestures.as_slice()).collect();
        let ctx_x = (0..nc).map(|t| frames_to_rows(&cg, t, dx, |g, o| n.gesture(&g.keypoints, o))).collect();
        let ctx_y: Vec<Array> = (0..nc)
            .map(|t| frames_to_rows(&co, t, dy, |y, o| n.operation(&y.to_array(), o)))
            .collect();
        let mut values = Vec::with_capacity(episodes.len() * nc * dy);
        for b in 0..episodes.len() {
            for y in &ctx_y {
                values.extend_from_slice(y.row(b));
            }
        }
        let tgt_x = (0..nt).map(|t| frames_to_rows(&tg, t, dx, |g, o| n.gesture(&g.keypoints, o))).collect();
        let tgt_y = (0..nt)
            .map(|t| frames_to_rows(&targets_ops, t, dy, |y, o| n.operation(&y.to_array(), o)))
            .collect();
        let tgt_y_raw = (0..nt).map(|t| frames_to_rows(&targets_ops, t, dy, ops_raw)).collect();
        Ok(PreparedBatch {
            rows: episodes.len(),
            ctx_x,
            ctx_y,
            ctx_values: Array::new(vec![episodes.len(), nc, dy], values)?,
            tgt_x,
            tgt_y,
            tgt_y_raw,
        })
    }

    fn zero_y(&self, tape: &Tape, net: &mut BoundNet, rows: usize) -> Var {
        match net.rows_zero_y {
            Some((r, v)) if r == rows => v,
            _ => {
                let v = tape.constant(Array::zeros(&[rows, self.config.operation_dim]));
                net.rows_zero_y = Some((rows, v));
                v
            }
        }
    }

    /// One step of the shared recurrent cell.
    fn cell(&self, tape: &Tape, net: &BoundNet, x: Var, y_prev: Var, s: LstmState) -> Result<LstmState> {
        let feat = net.hand.apply(tape, tape.concat(&[x, s.h])?)?;
        let input = if self.config.autoregressive {
            tape.concat(&[feat, y_prev])?
        } else {
            feat
        };
        net.cell.step(tape, input, s)
    }

    fn project(&self, tape: &Tape, net: &BoundNet, h: Var, y: Var) -> Result<Var> {
        net.proj.apply(tape, tape.concat(&[h, y])?)
    }

    fn latent(&self, tape: &Tape, net: &BoundNet, a: Var) -> Result<(Var, Var)> {
        let t = net.trunk.apply(tape, a)?;
        let mean = net.mean.apply(tape, t)?;
        let lv = tape.clamp(net.logvar.apply(tape, t)?, LOG_VARIANCE_MIN, LOG_VARIANCE_MAX)?;
        Ok((mean, lv))
    }

    /// Output heads: normalized means and raw-unit mean and sigma.
    fn heads(&self, tape: &Tape, net: &BoundNet, feat: Var) -> Result<(Var, Var, Var)> {
        let mut mus = Vec::with_capacity(net.heads.len());
        let mut raws = Vec::with_capacity(net.heads.len());
        for h in &net.heads {
            let o = h.apply(tape, feat)?;
            mus.push(tape.slice(o, 0, 1)?);
            raws.push(tape.slice(o, 1, 2)?);
        }
        let mu_n = tape.concat(&mus)?;
        let raw = tape.concat(&raws)?;
        let mu = tape.add_row(tape.mul_row(mu_n, net.y_std)?, net.y_mean)?;
        let sigma = tape.add_scalar(tape.mul_row(tape.softplus(raw)?, net.y_std)?, SIGMA_FLOOR)?;
        Ok((mu_n, mu, sigma))
    }

    /// Encodes context rows; returns per-step hidden states, the summed
    /// projections, the final state, and the last operation consumed.
    fn encode_context(
        &self,
        tape: &Tape,
        net: &mut BoundNet,
        xs: &[Var],
        ys: &[Var],
        rows: usize,
    ) -> Result<(Vec<Var>, Vec<Var>, LstmState)> {
        let mut s = LstmState::zeros(tape, rows, self.config.hidden_size);
        let mut y_prev = self.zero_y(tape, net, rows);
        let mut hs = Vec::with_capacity(xs.len());
        let mut projs = Vec::with_capacity(xs.len());
        for (&x, &y) in xs.iter().zip(ys) {
            s = self.cell(tape, net, x, y_prev, s)?;
            hs.push(s.h);
            projs.push(self.project(tape, net, s.h, y)?);
            y_prev = y;
        }
        Ok((hs, projs, s))
    }

    /// The training objective on `batch`, summed over its rows.
    pub fn elbo_on_tape(
        &self,
        tape: &Tape,
        net: &mut BoundNet,
        batch: &PreparedBatch,
        noise: &[EpisodeNoise],
    ) -> Result<ElboTerms> {
        let rows = batch.rows;
        let (nc, nt) = (batch.context_len(), batch.target_len());
        let dz = self.config.latent_dim;
        if noise.len() != rows || noise.iter().any(|n| n.eps.len() != dz || n.teacher.len() != nt) {
            return Err(Error::Shape("episode noise does not match the batch".into()));
        }
        let cx: Vec<Var> = batch.ctx_x.iter().map(|a| tape.constant(a.clone())).collect();
        let cy: Vec<Var> = batch.ctx_y.iter().map(|a| tape.constant(a.clone())).collect();
        let tx: Vec<Var> = batch.tgt_x.iter().map(|a| tape.constant(a.clone())).collect();
        let ty: Vec<Var> = batch.tgt_y.iter().map(|a| tape.constant(a.clone())).collect();

        let (hc, projc, mut s) = self.encode_context(tape, net, &cx, &cy, rows)?;
        let sum_c = tape.add_n(&projc)?;
        let a_c = tape.scale(sum_c, 1.0 / nc as f64)?;
        let mut projt = Vec::with_capacity(nt + 1);
        projt.push(sum_c);
        let mut y_prev = *cy.last().unwrap();
        for (&x, &y) in tx.iter().zip(&ty) {
            s = self.cell(tape, net, x, y_prev, s)?;
            projt.push(self.project(tape, net, s.h, y)?);
            y_prev = y;
        }
        let a_t = tape.scale(tape.add_n(&projt)?, 1.0 / (nc + nt) as f64)?;
        let (mc, lc) = self.latent(tape, net, a_c)?;
        let (mt, lt) = self.latent(tape, net, a_t)?;
        let kl = kl_on_tape(tape, mt, lt, mc, lc)?;
        let eps = Array::new(vec![rows, dz], noise.iter().flat_map(|n| n.eps.iter().copied()).collect())?;
        let z = cchp_autodiff::prob::reparam_on_tape(tape, mt, lt, eps)?;

        let keys = tape.stack(&hc)?;
        let values = tape.constant(batch.ctx_values.clone());
        let dy = self.config.operation_dim;
        let mut s = LstmState::zeros(tape, rows, self.config.hidden_size);
        let mut y_prev = self.zero_y(tape, net, rows);
        let mut terms = Vec::with_capacity(nt);
        for t in 0..nt {
            s = self.cell(tape, net, tx[t], y_prev, s)?;
            let lambda = tape.softmax(tape.batch_dot(keys, s.h)?)?;
            let r = tape.batch_weighted(lambda, values)?;
            let (mu_n, mu, sigma) = self.heads(tape, net, tape.concat(&[r, s.h, z])?)?;
            let obs = tape.constant(batch.tgt_y_raw[t].clone());
            terms.push(log_prob_on_tape(tape, obs, mu, sigma)?);
            if t + 1 < nt {
                y_prev = self.feedback(tape, noise, t + 1, ty[t], mu_n, rows, dy)?;
            }
        }
        let nll = tape.scale(tape.add_n(&terms)?, -1.0)?;
        Ok(ElboTerms {
            loss: tape.add(nll, kl)?,
            nll,
            kl,
        })
    }

    /// Previous-operation input for step `t`: ground truth on rows whose
    /// teacher coin came up, the predicted mean elsewhere.
    #[allow(clippy::too_many_arguments)]
    fn feedback(
        &self,
        tape: &Tape,
        noise: &[EpisodeNoise],
        t: usize,
        truth: Var,
        predicted: Var,
        rows: usize,
        dy: usize,
    ) -> Result<Var> {
        let forced = noise.iter().filter(|n| n.teacher[t]).count();
        if forced == rows {
            return Ok(truth);
        }
        if forced == 0 {
            return Ok(predicted);
        }
        let mask: Vec<f64> = noise
            .iter()
            .flat_map(|n| std::iter::repeat_n(if n.teacher[t] { 1.0 } else { 0.0 }, dy))
            .collect();
        let inv: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
        let m = tape.constant(Array::new(vec![rows, dy], mask)?);
        let im = tape.constant(Array::new(vec![rows, dy], inv)?);
        Ok(tape.add(tape.mul(m, truth)?, tape.mul(im, predicted)?)?)
    }

    /// Loss and gradients of a batch averaged over its rows.
    pub fn batch_gradients(&self, batch: &PreparedBatch, noise: &[EpisodeNoise]) -> Result<(ElboDiagnostics, Gradients)> {
        let tape = Tape::new();
        let mut net = self.bind_store(&tape, true)?;
        let terms = self.elbo_on_tape(&tape, &mut net, batch, noise)?;
        let grads = tape.backward(terms.loss)?;
        Ok((diagnostics(&tape, terms), grads.named()))
    }

    /// Evaluates the objective of one episode. Draws the latent noise and
    /// teacher-forcing coins from `r`.
    pub fn elbo_loss(
        &self,
        context: &ContextSet,
        target: &TargetSet,
        p_tf: f64,
        r: &mut impl Rng,
    ) -> Result<ElboDiagnostics> {
        if target.operations.is_none() {
            return Err(Error::MissingLabels);
        }
        if !(0.0..=1.0).contains(&p_tf) {
            return Err(Error::InvalidArgument(format!("p_TF {p_tf} outside [0, 1]")));
        }
        let batch = self.prepare(&[(context, target)])?;
        let noise = EpisodeNoise::draw(r, self.config.latent_dim, target.len(), p_tf);
        let tape = Tape::new();
        let mut net = self.bind_store(&tape, false)?;
        let terms = self.elbo_on_tape(&tape, &mut net, &batch, &[noise])?;
        Ok(diagnostics(&tape, terms))
    }

    /// Latent posterior and hidden states of one demonstration sequence.
    pub fn encode_sequence(
        &self,
        gestures: &[GestureFrame],
        operations: &[OperationFrame],
    ) -> Result<(Vec<Vec<f64>>, DiagGaussian)> {
        if gestures.is_empty() {
            return Err(Error::EmptySequence);
        }
        if gestures.len() != operations.len() {
            return Err(Error::Shape("gesture and operation sequences differ in length".into()));
        }
        let ctx = ContextSet {
            user_id: String::new(),
            gestures: gestures.to_vec(),
            operations: operations.to_vec(),
        };
        let enc = self.encode_contexts(&[&ctx])?;
        let hs = enc.keys.data().chunks(self.config.hidden_size).map(<[f64]>::to_vec).collect();
        Ok((hs, enc.posteriors.into_iter().next().unwrap()))
    }

    fn encode_contexts(&self, contexts: &[&ContextSet]) -> Result<ContextEncoding> {
        let rows = contexts.len();
        let nc = contexts[0].len();
        if nc == 0 {
            return Err(Error::EmptyContext);
        }
        if contexts.iter().any(|c| c.len() != nc || c.operations.len() != nc) {
            return Err(Error::Shape("contexts in one session must share a length".into()));
        }
        let n = &self.normalizer;
        let (dx, dy) = (self.config.gesture_dim, self.config.operation_dim);
        let cg: Vec<&[GestureFrame]> = contexts.iter().map(|c| c.gestures.as_slice()).collect();
        let co: Vec<&[OperationFrame]> = contexts.iter().map(|c| c.operations.as_slice()).collect();
        let tape = Tape::new();
        let mut net = self.bind_store(&tape, false)?;
        let cx: Vec<Var> = (0..nc)
            .map(|t| tape.constant(frames_to_rows(&cg, t, dx, |g, o| n.gesture(&g.keypoints, o))))
            .collect();
        let ys: Vec<Array> = (0..nc)
            .map(|t| frames_to_rows(&co, t, dy, |y, o| n.operation(&y.to_array(), o)))
            .collect();
        let cy: Vec<Var> = ys.iter().map(|a| tape.constant(a.clone())).collect();
        let (hc, projc, _) = self.encode_context(&tape, &mut net, &cx, &cy, rows)?;
        let a = tape.scale(tape.add_n(&projc)?, 1.0 / nc as f64)?;
        let (m, lv) = self.latent(&tape, &net, a)?;
        let keys = tape.value(tape.stack(&hc)?);
        let mut values = Vec::with_capacity(rows * nc * dy);
        for b in 0..rows {
            for y in &ys {
                values.extend_from_slice(y.row(b));
            }
        }
        let (m, lv) = (tape.value(m), tape.value(lv));
        let dz = self.config.latent_dim;
        let posteriors = (0..rows)
            .map(|b| {
                DiagGaussian::new(
                    m.data()[b * dz..(b + 1) * dz].to_vec(),
                    lv.data()[b * dz..(b + 1) * dz].to_vec(),
                )
                .map_err(Error::from)
            })
            .collect::<Result<_>>()?;
        Ok(ContextEncoding {
            keys,
            values: Arc::new(Array::new(vec![rows, nc, dy], values)?),
            posteriors,
        })
    }

    /// Decodes target gestures autoregressively, feeding back predicted
    /// means. `z` is drawn from the context posterior, or set to its mean
    /// when `deterministic`.
    pub fn infer_sequence(
        &self,
        context: &ContextSet,
        gestures: &[GestureFrame],
        r: &mut impl Rng,
        deterministic: bool,
    ) -> Result<Vec<OperationFrame>> {
        let mut session = StreamSession::new(self);
        session.start(&[context], r, deterministic)?;
        gestures
            .iter()
            .map(|g| Ok(session.step(&[g])?.remove(0)))
            .map(|p: Result<OperationGaussian>| p.map(|p| OperationFrame::from_slice(&p.mean)))
            .collect()
    }

    pub fn save<W: Write, T: Serialize>(&self, mut w: W, extra: &T) -> Result<()> {
        let meta = serde_json::to_string(&Metadata {
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            extra,
        })?;
        write_checkpoint(&mut w, self.kind(), &meta, &self.params)?;
        Ok(())
    }

    pub fn load<R: Read, T: for<'de> Deserialize<'de>>(mut r: R) -> Result<(Self, T)> {
        let (kind, meta, store) = read_checkpoint(&mut r)?;
        if kind != KIND_CCHP && kind != KIND_RANP {
            return Err(Error::Parse(format!("checkpoint holds a `{kind}` model")));
        }
        let meta: Metadata<T> = serde_json::from_str(&meta)?;
        let mut model = Self::new(meta.config, meta.normalizer, 0)?;
        check_same_layout(&model.params, &store)?;
        model.params = store;
        Ok((model, meta.extra))
    }
}

pub(crate) fn check_same_layout(fresh: &ParameterStore, loaded: &ParameterStore) -> Result<()> {
    if fresh.len() != loaded.len() {
        return Err(Error::Parse(format!(
            "checkpoint holds {} parameters, model expects {}",
            loaded.len(),
            fresh.len()
        )));
    }
    for p in fresh.iter() {
        let q = loaded
            .get(&p.name)
            .ok_or_else(|| Error::Parse(format!("checkpoint lacks parameter {}", p.name)))?;
        if q.shape() != p.value.shape() {
            return Err(Error::Parse(format!("parameter {} has shape {:?}", p.name, q.shape())));
        }
    }
    Ok(())
}

fn diagnostics(tape: &Tape, t: ElboTerms) -> ElboDiagnostics {
    ElboDiagnostics {
        loss: tape.value(t.loss).item(),
        nll: tape.value(t.nll).item(),
        kl: tape.value(t.kl).item(),
    }
}

struct ContextEncoding {
    keys: Arc<Array>,
    values: Arc<Array>,
    posteriors: Vec<DiagGaussian>,
}

struct ActiveSession {
    keys: Arc<Array>,
    values: Arc<Array>,
    z: Arc<Array>,
    h: Arc<Array>,
    c: Arc<Array>,
    y_prev: Arc<Array>,
    steps: usize,
}

/// Online decoding: the context is encoded once, then each call consumes
/// one gesture frame per row and returns that step's operation.
pub struct StreamSession<'m> {
    model: &'m CchpModel,
    active: Option<ActiveSession>,
    attention: Option<Vec<Vec<Vec<f64>>>>,
}

impl<'m> StreamSession<'m> {
    pub fn new(model: &'m CchpModel) -> Self {
        Self {
            model,
            active: None,
            attention: None,
        }
    }

    /// Keep every step's attention weights for later export.
    pub fn record_attention(&mut self) {
        self.attention = Some(Vec::new());
    }

    /// Attention weights per row, one `N_C`-vector per step taken.
    pub fn attention(&self) -> Option<&[Vec<Vec<f64>>]> {
        self.attention.as_deref()
    }

    pub fn rows(&self) -> usize {
        self.active.as_ref().map_or(0, |a| a.h.rows())
    }

    pub fn steps(&self) -> usize {
        self.active.as_ref().map_or(0, |a| a.steps)
    }

    /// Encodes one context per row and draws each row's latent in order.
    pub fn start(&mut self, contexts: &[&ContextSet], r: &mut impl Rng, deterministic: bool) -> Result<()> {
        if contexts.is_empty() || contexts.iter().any(|c| c.is_empty()) {
            return Err(Error::EmptyContext);
        }
        let m = self.model;
        let enc = m.encode_contexts(contexts)?;
        let rows = contexts.len();
        let mut z = Vec::with_capacity(rows * m.config.latent_dim);
        for q in &enc.posteriors {
            if deterministic {
                z.extend_from_slice(q.mean());
            } else {
                z.extend(q.sample(r));
            }
        }
        let h = m.config.hidden_size;
        self.active = Some(ActiveSession {
            keys: enc.keys,
            values: enc.values,
            z: Arc::new(Array::new(vec![rows, m.config.latent_dim], z)?),
            h: Arc::new(Array::zeros(&[rows, h])),
            c: Arc::new(Array::zeros(&[rows, h])),
            y_prev: Arc::new(Array::zeros(&[rows, m.config.operation_dim])),
            steps: 0,
        });
        if let Some(a) = &mut self.attention {
            a.clear();
            a.resize(rows, Vec::new());
        }
        Ok(())
    }

    /// Advances every row by one frame.
    pub fn step(&mut self, frames: &[&GestureFrame]) -> Result<Vec<OperationGaussian>> {
        let m = self.model;
        let s = self
            .active
            .as_mut()
            .ok_or_else(|| Error::Session("session has not been started with a context".into()))?;
        let rows = s.h.rows();
        if frames.len() != rows {
            return Err(Error::Shape(format!("expected {rows} frames, got {}", frames.len())));
        }
        let dx = m.config.gesture_dim;
        let mut x = Vec::with_capacity(rows * dx);
        for f in frames {
            if f.keypoints.len() != dx {
                return Err(Error::Shape(format!("gesture frame has {} coordinates", f.keypoints.len())));
            }
            m.normalizer.gesture(&f.keypoints, &mut x);
        }
        let tape = Tape::new();
        let net = m.bind_store(&tape, false)?;
        let xv = tape.constant(Array::new(vec![rows, dx], x)?);
        let state = LstmState {
            h: tape.constant_arc(s.h.clone()),
            c: tape.constant_arc(s.c.clone()),
        };
        let y_prev = tape.constant_arc(s.y_prev.clone());
        let state = m.cell(&tape, &net, xv, y_prev, state)?;
        let keys = tape.constant_arc(s.keys.clone());
        let values = tape.constant_arc(s.values.clone());
        let z = tape.constant_arc(s.z.clone());
        let lambda = tape.softmax(tape.batch_dot(keys, state.h)?)?;
        let r = tape.batch_weighted(lambda, values)?;
        let (mu_n, mu, sigma) = m.heads(&tape, &net, tape.concat(&[r, state.h, z])?)?;
        s.h = tape.value(state.h);
        s.c = tape.value(state.c);
        s.y_prev = tape.value(mu_n);
        s.steps += 1;
        if let Some(att) = &mut self.attention {
            let l = tape.value(lambda);
            for (b, row) in att.iter_mut().enumerate() {
                row.push(l.row(b).to_vec());
            }
        }
        let (mu, sigma) = (tape.value(mu), tape.value(sigma));
        Ok((0..rows)
            .map(|b| OperationGaussian {
                mean: std::array::from_fn(|d| mu.row(b)[d]),
                sigma: std::array::from_fn(|d| sigma.row(b)[d]),
            })
            .collect())
    }
}

/// Single-row convenience for [`StreamSession::step`].
pub fn infer_stream(session: &mut StreamSession, frame: &GestureFrame) -> Result<OperationFrame> {
    let p = session.step(&[frame])?;
    Ok(OperationFrame::from_slice(&p[0].mean))
}

/// Softmax attention of one query over context hidden states.
pub fn context_attention(h_c: &[Vec<f64>], h_t: &[f64]) -> Result<Vec<f64>> {
    if h_c.is_empty() {
        return Err(Error::EmptyContext);
    }
    let tape = Tape::new();
    let keys = tape.constant(Array::new(
        vec![1, h_c.len(), h_t.len()],
        h_c.iter().flatten().copied().collect(),
    )?);
    let q = tape.constant(Array::new(vec![1, h_t.len()], h_t.to_vec())?);
    let l = tape.softmax(tape.batch_dot(keys, q)?)?;
    Ok(tape.value(l).data().to_vec())
}

/// Attention-weighted combination of context operations.
pub fn context_summary(weights: &[f64], y_c: &[[f64; OPERATION_DIM]]) -> Result<[f64; OPERATION_DIM]> {
    if weights.len() != y_c.len() {
        return Err(Error::Shape(format!("{} weights for {} operations", weights.len(), y_c.len())));
    }
    let tape = Tape::new();
    let w = tape.constant(Array::new(vec![1, weights.len()], weights.to_vec())?);
    let v = tape.constant(Array::new(
        vec![1, y_c.len(), OPERATION_DIM],
        y_c.iter().flatten().copied().collect(),
    )?);
    let r = tape.value(tape.batch_weighted(w, v)?);
    Ok(std::array::from_fn(|d| r.data()[d]))
}
