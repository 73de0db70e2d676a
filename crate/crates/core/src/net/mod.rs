//! The frame-scoring BLSTM.
//!
//! Per frame: `[h_fwd ; h_bwd]` (2H) -> dense ELU (50) -> dense ELU (50) ->
//! linear (1) gives `q_t`; the utterance score is the mean of all `q_t`.
//! Everything runs in f64.

mod backward;
mod forward;
mod gradcheck;

pub use backward::backward;
pub use forward::{forward, lstm_cell, DirectionTrace, ForwardTrace};
pub use gradcheck::{analytic_grads, grad_check, grad_check_biased, GradCheckCase, GRAD_CHECK_FLOOR};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::util::rng_from;

/// Width of both hidden dense layers.
pub const DENSE_WIDTH: usize = 50;
/// Default forget-gate bias at initialization.
pub const DEFAULT_FGB: f64 = -3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Input features per frame.
    pub input: usize,
    /// LSTM units per direction.
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            input: 257,
            hidden: 100,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 {
            return Err(Error::DimensionMismatch(format!(
                "dims must be positive, got F={} H={}",
                self.input, self.hidden
            )));
        }
        Ok(())
    }
}

/// LSTM gate order within the fused `4H` axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

/// One LSTM direction. The four gates are fused along the column axis in
/// [`Gate`] order: column block `k*H..(k+1)*H` belongs to gate `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirectionParams {
    /// Input-to-gate weights, `F x 4H`.
    pub w: Array2<f64>,
    /// Recurrent weights, `H x 4H`.
    pub u: Array2<f64>,
    /// Gate biases, `4H`.
    pub b: Array1<f64>,
}

impl LstmDirectionParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmDirectionParams {
            w: Array2::zeros((input, 4 * hidden)),
            u: Array2::zeros((hidden, 4 * hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.nrows()
    }

    pub fn input(&self) -> usize {
        self.w.nrows()
    }

    fn block(&self, gate: Gate) -> std::ops::Range<usize> {
        let h = self.hidden();
        gate as usize * h..(gate as usize + 1) * h
    }

    pub fn w_gate(&self, gate: Gate) -> ArrayView2<'_, f64> {
        self.w.slice(s![.., self.block(gate)])
    }

    pub fn u_gate(&self, gate: Gate) -> ArrayView2<'_, f64> {
        self.u.slice(s![.., self.block(gate)])
    }

    pub fn b_gate(&self, gate: Gate) -> ArrayView1<'_, f64> {
        self.b.slice(s![self.block(gate)])
    }

    pub fn check(&self) -> Result<()> {
        let h = self.hidden();
        if self.u.ncols() != 4 * h || self.w.ncols() != 4 * h || self.b.len() != 4 * h {
            return Err(Error::DimensionMismatch(format!(
                "lstm params: w {:?}, u {:?}, b {}",
                self.w.dim(),
                self.u.dim(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `in x out`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        DenseParams {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }
}

/// All trainable tensors plus the dims and the forget-gate bias used at init.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub fgb: f64,
    pub fwd: LstmDirectionParams,
    pub bwd: LstmDirectionParams,
    pub dense1: DenseParams,
    pub dense2: DenseParams,
    pub out: DenseParams,
}

/// Gradients share the parameter layout.
pub type ParamGrads = ModelParams;

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let (f, h) = (dims.input, dims.hidden);
        ModelParams {
            dims,
            fgb: 0.0,
            fwd: LstmDirectionParams::zeros(f, h),
            bwd: LstmDirectionParams::zeros(f, h),
            dense1: DenseParams::zeros(2 * h, DENSE_WIDTH),
            dense2: DenseParams::zeros(DENSE_WIDTH, DENSE_WIDTH),
            out: DenseParams::zeros(DENSE_WIDTH, 1),
        }
    }

    /// Every tensor as a flat slice, in checkpoint order:
    /// fwd.{w,u,b}, bwd.{w,u,b}, dense1.{w,b}, dense2.{w,b}, out.{w,b}.
    pub fn tensors(&self) -> [&[f64]; 12] {
        [
            self.fwd.w.as_slice().expect("standard layout"),
            self.fwd.u.as_slice().expect("standard layout"),
            self.fwd.b.as_slice().expect("standard layout"),
            self.bwd.w.as_slice().expect("standard layout"),
            self.bwd.u.as_slice().expect("standard layout"),
            self.bwd.b.as_slice().expect("standard layout"),
            self.dense1.w.as_slice().expect("standard layout"),
            self.dense1.b.as_slice().expect("standard layout"),
            self.dense2.w.as_slice().expect("standard layout"),
            self.dense2.b.as_slice().expect("standard layout"),
            self.out.w.as_slice().expect("standard layout"),
            self.out.b.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 12] {
        [
            self.fwd.w.as_slice_mut().expect("standard layout"),
            self.fwd.u.as_slice_mut().expect("standard layout"),
            self.fwd.b.as_slice_mut().expect("standard layout"),
            self.bwd.w.as_slice_mut().expect("standard layout"),
            self.bwd.u.as_slice_mut().expect("standard layout"),
            self.bwd.b.as_slice_mut().expect("standard layout"),
            self.dense1.w.as_slice_mut().expect("standard layout"),
            self.dense1.b.as_slice_mut().expect("standard layout"),
            self.dense2.w.as_slice_mut().expect("standard layout"),
            self.dense2.b.as_slice_mut().expect("standard layout"),
            self.out.w.as_slice_mut().expect("standard layout"),
            self.out.b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Fails if any tensor's shape disagrees with `dims`.
    pub fn check(&self) -> Result<()> {
        self.dims.validate()?;
        let reference = ModelParams::zeros(self.dims);
        for (i, (a, b)) in self.tensors().iter().zip(reference.tensors()).enumerate() {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch(format!(
                    "tensor {i} has {} entries, dims imply {}",
                    a.len(),
                    b.len()
                )));
            }
        }
        self.fwd.check()?;
        self.bwd.check()?;
        if self.fwd.input() != self.dims.input || self.fwd.hidden() != self.dims.hidden {
            return Err(Error::DimensionMismatch("lstm dims disagree with model dims".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// The same network with the forward and backward directions exchanged.
    ///
    /// The concatenation `[h_fwd ; h_bwd]` is kept consistent by swapping the
    /// two row halves of the first dense layer as well.
    pub fn swap_directions(&self) -> ModelParams {
        let mut p = self.clone();
        std::mem::swap(&mut p.fwd, &mut p.bwd);
        let h = self.dims.hidden;
        let w = &self.dense1.w;
        p.dense1.w.slice_mut(s![..h, ..]).assign(&w.slice(s![h.., ..]));
        p.dense1.w.slice_mut(s![h.., ..]).assign(&w.slice(s![..h, ..]));
        p
    }
}

fn glorot_fill(rng: &mut ChaCha8Rng, a: &mut Array2<f64>, fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    a.iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
}

/// Glorot-uniform weights (fan counted per gate for LSTM blocks), zero
/// biases, and every forget-gate bias set to `fgb`.
pub fn init_model(dims: ModelDims, fgb: f64, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let mut rng = rng_from(seed, 0x1417);
    let mut p = ModelParams::zeros(dims);
    p.fgb = fgb;
    let (f, h) = (dims.input, dims.hidden);
    for dir in [&mut p.fwd, &mut p.bwd] {
        glorot_fill(&mut rng, &mut dir.w, f, h);
        glorot_fill(&mut rng, &mut dir.u, h, h);
        let forget = dir.block(Gate::Forget);
        dir.b.slice_mut(s![forget]).fill(fgb);
    }
    glorot_fill(&mut rng, &mut p.dense1.w, 2 * h, DENSE_WIDTH);
    glorot_fill(&mut rng, &mut p.dense2.w, DENSE_WIDTH, DENSE_WIDTH);
    glorot_fill(&mut rng, &mut p.out.w, DENSE_WIDTH, 1);
    Ok(p)
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of [`elu`].
pub(crate) fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Utterance score and per-frame scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentResult {
    utterance: f64,
    frames: Vec<f64>,
}

impl AssessmentResult {
    /// Builds a result whose utterance score is the left-to-right mean of `frames`.
    pub fn from_frames(frames: Vec<f64>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Empty("frame scores"));
        }
        let utterance = frames.iter().fold(0.0, |acc, q| acc + q) / frames.len() as f64;
        Ok(AssessmentResult { utterance, frames })
    }

    pub fn utterance_score(&self) -> f64 {
        self.utterance
    }

    pub fn frame_scores(&self) -> &[f64] {
        &self.frames
    }

    /// Copy with every score clamped to `[lo, hi]`, utterance score recomputed.
    pub fn clamped(&self, lo: f64, hi: f64) -> AssessmentResult {
        AssessmentResult::from_frames(self.frames.iter().map(|q| q.clamp(lo, hi)).collect())
            .expect("nonempty")
    }
}
