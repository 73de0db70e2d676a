//! RMSprop, the per-utterance training loop with early stopping, checkpoints,
//! and learning curves.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::dataset::{load_all, Example, FeatureSource};
use crate::error::{Error, Result};
use crate::loss::{loss_grads, utterance_loss, LossConfig, QualityLabel};
use crate::metrics::{evaluate_examples, EvalReport};
use crate::net::{backward, forward, init_model, ModelDims, ModelParams, ParamGrads, DEFAULT_FGB};
use crate::signal::{CorpusManifest, Q_MAX};
use crate::util::{rng_from, write_atomic};

/// Running mean-square accumulators and the RMSprop constants.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub v: ModelParams,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl RmsPropState {
    pub fn new(like: &ModelParams, lr: f64, rho: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) || !(rho > 0.0 && rho < 1.0) || !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("rmsprop lr={lr} rho={rho} eps={eps}")));
        }
        Ok(RmsPropState {
            v: ModelParams::zeros(like.dims),
            lr,
            rho,
            eps,
        })
    }
}

fn same_shapes(a: &ModelParams, b: &ModelParams) -> Result<()> {
    for (i, (x, y)) in a.tensors().iter().zip(b.tensors()).enumerate() {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "tensor {i}: {} vs {} entries",
                x.len(),
                y.len()
            )));
        }
    }
    Ok(())
}

/// One RMSprop update of every parameter.
pub fn rmsprop_step(params: &mut ModelParams, grads: &ParamGrads, state: &mut RmsPropState) -> Result<()> {
    same_shapes(params, grads)?;
    same_shapes(params, &state.v)?;
    let (lr, rho, eps) = (state.lr, state.rho, state.eps);
    for ((theta, g), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(state.v.tensors_mut()) {
        for ((t, &g), v) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = rho * *v + (1.0 - rho) * g * g;
            *t -= lr * g / (v.sqrt() + eps);
        }
    }
    Ok(())
}

/// Global L2 norm over every gradient tensor.
pub fn grad_norm(grads: &ParamGrads) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients together when their global norm exceeds `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut ParamGrads, clip_norm: f64) -> Result<f64> {
    if clip_norm.is_nan() || clip_norm <= 0.0 {
        return Err(Error::InvalidConfig(format!("clip_norm {clip_norm} must be positive")));
    }
    let norm = grad_norm(grads);
    if norm > clip_norm {
        let scale = clip_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= scale);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub shuffle_seed: u64,
    pub init_seed: u64,
    pub fgb: f64,
    pub alpha_enabled: bool,
    pub frame_term_mean: bool,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 15,
            patience: 3,
            lr: 1e-3,
            rho: 0.9,
            eps: 1e-7,
            clip_norm: 5.0,
            shuffle_seed: 1,
            init_seed: 1,
            fgb: DEFAULT_FGB,
            alpha_enabled: true,
            frame_term_mean: false,
            dims: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= patience ({}) <= max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 || !self.fgb.is_finite() {
            return Err(Error::InvalidConfig("clip_norm must be positive and fgb finite".into()));
        }
        self.dims.validate()?;
        RmsPropState::new(&ModelParams::zeros(ModelDims { input: 1, hidden: 1 }), self.lr, self.rho, self.eps)?;
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            q_max: Q_MAX,
            alpha_enabled: self.alpha_enabled,
            frame_term_mean: self.frame_term_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    /// NaN when the validation correlation is undefined.
    pub val_lcc: f64,
    pub val_srcc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "train_loss", "val_mse", "val_lcc", "val_srcc"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.8}", e.train_loss),
                format!("{:.8}", e.val_mse),
                format!("{:.8}", e.val_lcc),
                format!("{:.8}", e.val_srcc),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }

    pub fn best(&self) -> Option<&EpochStats> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }
}

/// One optimizer step on a single utterance; returns its loss.
pub fn train_step(
    params: &mut ModelParams,
    state: &mut RmsPropState,
    ex: &Example,
    loss_cfg: &LossConfig,
    clip_norm: f64,
) -> Result<f64> {
    let label = QualityLabel::new(ex.label, loss_cfg.q_max)?;
    let (result, trace) = forward(&ex.spec, params)?;
    let loss = utterance_loss(&label, &result, loss_cfg)?.total;
    let (d_utt, dq) = loss_grads(&label, &result, loss_cfg)?;
    let mut grads = backward(&trace, d_utt, &dq, params)?;
    clip_gradients(&mut grads, clip_norm)?;
    rmsprop_step(params, &grads, state)?;
    Ok(loss)
}

/// Trains on in-memory examples, keeping the parameters with the lowest
/// validation MSE and stopping after `patience` epochs without improvement.
pub fn train_examples(
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    if let Some(ex) = train.iter().chain(val).find(|e| e.spec.n_bins() != cfg.dims.input) {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} bins, model expects {}",
            ex.utterance_id,
            ex.spec.n_bins(),
            cfg.dims.input
        )));
    }
    let loss_cfg = cfg.loss_config();
    let mut params = init_model(cfg.dims, cfg.fgb, cfg.init_seed)?;
    let mut state = RmsPropState::new(&params, cfg.lr, cfg.rho, cfg.eps)?;
    let mut rng = rng_from(cfg.shuffle_seed, 0x5f);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            total += train_step(&mut params, &mut state, &train[i], &loss_cfg, cfg.clip_norm)?;
        }
        if !params.is_finite() {
            return Err(Error::InvalidConfig(format!("parameters diverged in epoch {epoch}")));
        }
        let report = evaluate_examples(&params, val, false)?;
        let stats = EpochStats {
            epoch,
            train_loss: total / train.len() as f64,
            val_mse: report.mse,
            val_lcc: report.lcc.unwrap_or(f64::NAN),
            val_srcc: report.srcc.unwrap_or(f64::NAN),
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_mse {:.4} val_lcc {:.4} val_srcc {:.4}",
            stats.train_loss,
            stats.val_mse,
            stats.val_lcc,
            stats.val_srcc
        );
        history.epochs.push(stats);
        if best.as_ref().is_none_or(|(m, _)| report.mse < *m) {
            best = Some((report.mse, params.clone()));
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (_, params) = best.expect("at least one epoch ran");
    Ok((params, history))
}

/// Loads features for both manifests and trains.
pub fn train(
    train_manifest: &CorpusManifest,
    val_manifest: &CorpusManifest,
    source: &FeatureSource,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    let train = load_all(train_manifest, source)?;
    let val = load_all(val_manifest, source)?;
    train_examples(&train, &val, cfg)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"QNET";
const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_HEADER: usize = 4 + 4 + 4 + 4 + 4;

/// Serializes parameters as 32-bit little-endian floats behind a small header.
pub fn encode_checkpoint(p: &ModelParams) -> Result<Vec<u8>> {
    p.check()?;
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("dimension {v} does not fit the checkpoint header")))
    };
    let mut out = Vec::with_capacity(CHECKPOINT_HEADER + 4 * p.n_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(p.dims.input)?.to_le_bytes());
    out.extend_from_slice(&to_u32(p.dims.hidden)?.to_le_bytes());
    out.extend_from_slice(&(p.fgb as f32).to_le_bytes());
    for t in p.tensors() {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a checkpoint; with `expected` set, differing dims are an error.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<ModelDims>) -> Result<ModelParams> {
    if bytes.len() < CHECKPOINT_HEADER {
        return Err(Error::CorruptCheckpoint(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = read_u32(bytes, 4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let dims = ModelDims {
        input: read_u32(bytes, 8) as usize,
        hidden: read_u32(bytes, 12) as usize,
    };
    if dims.validate().is_err() {
        return Err(Error::CorruptCheckpoint(format!("zero dimension in header {dims:?}")));
    }
    if let Some(exp) = expected {
        if exp != dims {
            return Err(Error::CheckpointDims {
                exp_f: exp.input,
                exp_h: exp.hidden,
                found_f: dims.input,
                found_h: dims.hidden,
            });
        }
    }
    let fgb = read_f32(bytes, 16) as f64;
    let mut p = ModelParams::zeros(dims);
    p.fgb = fgb;
    let body = &bytes[CHECKPOINT_HEADER..];
    if body.len() != 4 * p.n_params() {
        return Err(Error::CorruptCheckpoint(format!(
            "payload is {} bytes, dims imply {}",
            body.len(),
            4 * p.n_params()
        )));
    }
    let mut at = 0;
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = read_f32(body, at) as f64;
            at += 4;
        }
    }
    if !p.is_finite() {
        return Err(Error::CorruptCheckpoint("non-finite parameter".into()));
    }
    Ok(p)
}

pub fn save_checkpoint(p: &ModelParams, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(p)?)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, None)
}

/// Loads a checkpoint and insists on the given dims.
pub fn load_checkpoint_expecting(path: &Path, dims: ModelDims) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, Some(dims))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub size: usize,
    pub mse: f64,
    pub lcc: f64,
    pub srcc: f64,
}

/// The training subset used for a learning-curve point: the first `size`
/// indices of a seeded permutation, returned in original order.
pub fn subset_indices(len: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size == 0 || size > len {
        return Err(Error::InvalidConfig(format!("subset size {size} must be in 1..={len}")));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng_from(seed, 0x1c));
    idx.truncate(size);
    idx.sort_unstable();
    Ok(idx)
}

/// Trains one model per subset size and scores each on `test`.
pub fn learning_curve_examples(
    train: &[Example],
    val: &[Example],
    test: &[Example],
    sizes: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<CurvePoint>> {
    if sizes.is_empty() {
        return Err(Error::Empty("learning-curve sizes"));
    }
    for &s in sizes {
        subset_indices(train.len(), s, cfg.shuffle_seed)?;
    }
    sizes
        .iter()
        .map(|&size| {
            let subset: Vec<Example> = subset_indices(train.len(), size, cfg.shuffle_seed)?
                .into_iter()
                .map(|i| train[i].clone())
                .collect();
            let (params, _) = train_examples(&subset, val, cfg)?;
            let report: EvalReport = evaluate_examples(&params, test, false)?;
            Ok(CurvePoint {
                size,
                mse: report.mse,
                lcc: report.lcc.unwrap_or(f64::NAN),
                srcc: report.srcc.unwrap_or(f64::NAN),
            })
        })
        .collect()
}

pub fn learning_curve(
    train: &CorpusManifest,
    val: &CorpusManifest,
    test: &CorpusManifest,
    sizes: &[usize],
    source: &FeatureSource,
    cfg: &TrainConfig,
) -> Result<Vec<CurvePoint>> {
    for &s in sizes {
        subset_indices(train.len(), s, cfg.shuffle_seed)?;
    }
    learning_curve_examples(
        &load_all(train, source)?,
        &load_all(val, source)?,
        &load_all(test, source)?,
        sizes,
        cfg,
    )
}

pub fn curve_csv(points: &[CurvePoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["size", "mse", "lcc", "srcc"])?;
    for p in points {
        w.write_record([
            p.size.to_string(),
            format!("{:.8}", p.mse),
            format!("{:.8}", p.lcc),
            format!("{:.8}", p.srcc),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Manifest(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_dims() -> ModelDims {
        ModelDims { input: 1, hidden: 1 }
    }

    #[test]
    fn zero_gradient_only_decays_v() {
        let mut p = init_model(scalar_dims(), -3.0, 1).unwrap();
        let before = p.clone();
        let mut st = RmsPropState::new(&p, 0.01, 0.9, 1e-7).unwrap();
        st.v.tensors_mut().into_iter().for_each(|t| t.fill(2.0));
        rmsprop_step(&mut p, &ModelParams::zeros(scalar_dims()), &mut st).unwrap();
        assert_eq!(p, before);
        assert!(st.v.tensors().iter().all(|t| t.iter().all(|&v| (v - 1.8).abs() < 1e-15)));
    }

    #[test]
    fn scalar_rmsprop_examples() {
        let mut p = ModelParams::zeros(scalar_dims());
        let mut st = RmsPropState::new(&p, 0.01, 0.9, 1e-7).unwrap();
        let mut g = ModelParams::zeros(scalar_dims());
        g.out.b[0] = 3.0;
        rmsprop_step(&mut p, &g, &mut st).unwrap();
        assert_abs_diff_eq!(st.v.out.b[0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(p.out.b[0], -0.01 * 3.0 / (0.9f64.sqrt() + 1e-7), epsilon = 1e-15);
        assert_abs_diff_eq!(p.out.b[0], -0.0316228, epsilon = 1e-7);

        let mut p = ModelParams::zeros(scalar_dims());
        let mut st = RmsPropState::new(&p, 0.01, 0.9, 1e-7).unwrap();
        g.out.b[0] = 1.0;
        rmsprop_step(&mut p, &g, &mut st).unwrap();
        rmsprop_step(&mut p, &g, &mut st).unwrap();
        assert_abs_diff_eq!(st.v.out.b[0], 0.19, epsilon = 1e-15);
    }

    #[test]
    fn rmsprop_rejects_bad_constants() {
        let p = ModelParams::zeros(scalar_dims());
        assert!(RmsPropState::new(&p, 0.0, 0.9, 1e-7).is_err());
        assert!(RmsPropState::new(&p, 1e-3, 1.0, 1e-7).is_err());
    }

    #[test]
    fn clipping_examples() {
        let mut g = ModelParams::zeros(scalar_dims());
        g.out.w[[0, 0]] = 2.0;
        let before = g.clone();
        assert_eq!(clip_gradients(&mut g, 5.0).unwrap(), 2.0);
        assert_eq!(g, before);

        let mut g = ModelParams::zeros(scalar_dims());
        g.dense1.b[0] = 3.0;
        g.dense1.b[1] = 4.0;
        let before = g.clone();
        clip_gradients(&mut g, 5.0).unwrap();
        assert_eq!(g, before);

        g.dense1.b[0] = 6.0;
        g.dense1.b[1] = 8.0;
        assert_eq!(clip_gradients(&mut g, 5.0).unwrap(), 10.0);
        assert_abs_diff_eq!(g.dense1.b[0], 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.dense1.b[1], 4.0, epsilon = 1e-15);
        assert!(clip_gradients(&mut g, 0.0).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_errors() {
        let p = init_model(ModelDims { input: 5, hidden: 3 }, -3.0, 2).unwrap();
        let bytes = encode_checkpoint(&p).unwrap();
        let q = decode_checkpoint(&bytes, None).unwrap();
        assert_eq!(encode_checkpoint(&q).unwrap(), bytes);
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert_eq!(q.fgb, -3.0);
        let e = decode_checkpoint(&bytes[..bytes.len() - 3], None).unwrap_err();
        assert!(e.to_string().contains("corrupt checkpoint"));
        assert!(decode_checkpoint(&bytes[..10], None).is_err());
        let e = decode_checkpoint(&bytes, Some(ModelDims { input: 257, hidden: 100 })).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("257") && msg.contains('5'), "{msg}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, None).is_err());
    }

    #[test]
    fn subsets_are_sorted_prefixes_of_one_permutation() {
        let a = subset_indices(50, 10, 3).unwrap();
        let b = subset_indices(50, 25, 3).unwrap();
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|i| b.contains(i)));
        assert_eq!(subset_indices(50, 50, 3).unwrap(), (0..50).collect::<Vec<_>>());
        assert!(subset_indices(50, 0, 3).is_err());
        assert!(subset_indices(50, 51, 3).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 20,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
