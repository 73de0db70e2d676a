use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{elu, sigmoid, AssessmentResult, LstmDirectionParams, ModelParams};
use crate::error::{Error, Result};
use crate::features::Spectrogram;

/// Activations of one LSTM direction, indexed by time (not by processing step).
#[derive(Debug, Clone)]
pub struct DirectionTrace {
    /// Activated gates `[i f g o]` per frame, `T x 4H`.
    pub gates: Array2<f64>,
    /// Cell states, `T x H`.
    pub c: Array2<f64>,
    /// `tanh(c)`, `T x H`.
    pub tanh_c: Array2<f64>,
    /// Hidden states, `T x H`.
    pub h: Array2<f64>,
    /// True for the direction that runs from the last frame to the first.
    pub reversed: bool,
}

impl DirectionTrace {
    /// Time index whose state feeds frame `t`, if any.
    pub fn prev(&self, t: usize) -> Option<usize> {
        if self.reversed {
            (t + 1 < self.h.nrows()).then_some(t + 1)
        } else {
            t.checked_sub(1)
        }
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// The input frames, `T x F`.
    pub x: Array2<f64>,
    pub fwd: DirectionTrace,
    pub bwd: DirectionTrace,
    /// `[h_fwd ; h_bwd]`, `T x 2H`.
    pub concat: Array2<f64>,
    pub pre1: Array2<f64>,
    pub act1: Array2<f64>,
    pub pre2: Array2<f64>,
    pub act2: Array2<f64>,
    pub frame_scores: Vec<f64>,
    pub utterance_score: f64,
}

impl ForwardTrace {
    pub fn n_frames(&self) -> usize {
        self.frame_scores.len()
    }
}

/// Gate nonlinearities and the cell/hidden update for one unit column block.
/// `z` holds preactivations `[i f g o]`; it is overwritten with activations.
fn cell_update(z: &mut [f64], c_prev: ArrayView1<'_, f64>, c: &mut [f64], tanh_c: &mut [f64], h: &mut [f64]) {
    let hid = c.len();
    for j in 0..hid {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[hid + j]);
        let g = z[2 * hid + j].tanh();
        let o = sigmoid(z[3 * hid + j]);
        z[j] = i;
        z[hid + j] = f;
        z[2 * hid + j] = g;
        z[3 * hid + j] = o;
        c[j] = f * c_prev[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }
}

/// One LSTM step: returns `(h_t, c_t)`.
pub fn lstm_cell(
    x: ArrayView1<'_, f64>,
    h_prev: ArrayView1<'_, f64>,
    c_prev: ArrayView1<'_, f64>,
    p: &LstmDirectionParams,
) -> Result<(Array1<f64>, Array1<f64>)> {
    p.check()?;
    let hid = p.hidden();
    if x.len() != p.input() || h_prev.len() != hid || c_prev.len() != hid {
        return Err(Error::DimensionMismatch(format!(
            "lstm_cell: x {} (want {}), h {} / c {} (want {hid})",
            x.len(),
            p.input(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let mut z = x.dot(&p.w) + h_prev.dot(&p.u) + &p.b;
    let mut c = Array1::zeros(hid);
    let mut tanh_c = Array1::zeros(hid);
    let mut h = Array1::zeros(hid);
    cell_update(
        z.as_slice_mut().expect("contiguous"),
        c_prev,
        c.as_slice_mut().expect("contiguous"),
        tanh_c.as_slice_mut().expect("contiguous"),
        h.as_slice_mut().expect("contiguous"),
    );
    Ok((h, c))
}

fn run_direction(x: ArrayView2<'_, f64>, p: &LstmDirectionParams, reversed: bool) -> DirectionTrace {
    let t_len = x.nrows();
    let hid = p.hidden();
    // input projections for every frame at once
    let mut gates = x.dot(&p.w);
    gates += &p.b;
    let mut c = Array2::zeros((t_len, hid));
    let mut tanh_c = Array2::zeros((t_len, hid));
    let mut h = Array2::<f64>::zeros((t_len, hid));
    let zero = Array1::<f64>::zeros(hid);
    let order: Box<dyn Iterator<Item = usize>> = if reversed {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    };
    let mut prev: Option<usize> = None;
    for t in order {
        if let Some(pt) = prev {
            let rec = h.row(pt).dot(&p.u);
            gates.row_mut(t).scaled_add(1.0, &rec);
        }
        let c_prev = match prev {
            Some(pt) => c.row(pt).to_owned(),
            None => zero.clone(),
        };
        let mut c_row = c.row_mut(t);
        let mut tc_row = tanh_c.row_mut(t);
        let mut h_row = h.row_mut(t);
        cell_update(
            gates.row_mut(t).as_slice_mut().expect("contiguous"),
            c_prev.view(),
            c_row.as_slice_mut().expect("contiguous"),
            tc_row.as_slice_mut().expect("contiguous"),
            h_row.as_slice_mut().expect("contiguous"),
        );
        prev = Some(t);
    }
    DirectionTrace {
        gates,
        c,
        tanh_c,
        h,
        reversed,
    }
}

/// Scores every frame of `spec` and averages them into the utterance score.
pub fn forward(spec: &Spectrogram, p: &ModelParams) -> Result<(AssessmentResult, ForwardTrace)> {
    p.check()?;
    let x = spec.frames();
    if x.ncols() != p.dims.input {
        return Err(Error::DimensionMismatch(format!(
            "spectrogram has {} bins, model expects {}",
            x.ncols(),
            p.dims.input
        )));
    }
    let fwd = run_direction(x.view(), &p.fwd, false);
    let bwd = run_direction(x.view(), &p.bwd, true);
    let h = p.dims.hidden;
    let mut concat = Array2::zeros((x.nrows(), 2 * h));
    concat.slice_mut(s![.., ..h]).assign(&fwd.h);
    concat.slice_mut(s![.., h..]).assign(&bwd.h);

    let pre1 = concat.dot(&p.dense1.w) + &p.dense1.b;
    let act1 = pre1.mapv(elu);
    let pre2 = act1.dot(&p.dense2.w) + &p.dense2.b;
    let act2 = pre2.mapv(elu);
    let q = act2.dot(&p.out.w) + &p.out.b;
    let frame_scores: Vec<f64> = q.index_axis(Axis(1), 0).to_vec();

    let result = AssessmentResult::from_frames(frame_scores.clone())?;
    let trace = ForwardTrace {
        x: x.clone(),
        fwd,
        bwd,
        concat,
        pre1,
        act1,
        pre2,
        act2,
        utterance_score: result.utterance_score(),
        frame_scores,
    };
    Ok((result, trace))
}
