use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{elu_grad, DirectionTrace, ForwardTrace, LstmDirectionParams, ModelParams, ParamGrads};
use crate::error::{Error, Result};

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Backpropagation through time for one direction.
///
/// `dh_out` holds the loss gradient arriving at each hidden state from the
/// dense head, indexed by time.
fn direction_backward(
    x: ArrayView2<'_, f64>,
    tr: &DirectionTrace,
    dh_out: ArrayView2<'_, f64>,
    p: &LstmDirectionParams,
) -> LstmDirectionParams {
    let t_len = tr.h.nrows();
    let hid = p.hidden();
    let mut dz = Array2::<f64>::zeros((t_len, 4 * hid));
    let mut h_prev = Array2::<f64>::zeros((t_len, hid));
    let mut dh_next = Array1::<f64>::zeros(hid);
    let mut dc_next = Array1::<f64>::zeros(hid);
    // undo the processing order: the last processed frame comes first
    let order: Box<dyn Iterator<Item = usize>> = if tr.reversed {
        Box::new(0..t_len)
    } else {
        Box::new((0..t_len).rev())
    };
    for t in order {
        let prev = tr.prev(t);
        if let Some(pt) = prev {
            h_prev.row_mut(t).assign(&tr.h.row(pt));
        }
        let gates = tr.gates.row(t);
        let tc = tr.tanh_c.row(t);
        let mut dzt = dz.row_mut(t);
        for j in 0..hid {
            let (i, f, g, o) = (gates[j], gates[hid + j], gates[2 * hid + j], gates[3 * hid + j]);
            let c_prev = prev.map_or(0.0, |pt| tr.c[[pt, j]]);
            let dh = dh_out[[t, j]] + dh_next[j];
            let d_o = dh * tc[j];
            let dc = dh * o * (1.0 - tc[j] * tc[j]) + dc_next[j];
            dzt[j] = dc * g * i * (1.0 - i);
            dzt[hid + j] = dc * c_prev * f * (1.0 - f);
            dzt[2 * hid + j] = dc * i * (1.0 - g * g);
            dzt[3 * hid + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        dh_next = p.u.dot(&dzt);
    }
    LstmDirectionParams {
        w: standard(x.t().dot(&dz)),
        u: standard(h_prev.t().dot(&dz)),
        b: dz.sum_axis(Axis(0)),
    }
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss partials `d_utt` (utterance score) and `dq` (frame scores).
///
/// The global average spreads `d_utt / T` onto every frame score.
pub fn backward(trace: &ForwardTrace, d_utt: f64, dq: &[f64], p: &ModelParams) -> Result<ParamGrads> {
    p.check()?;
    let t_len = trace.n_frames();
    if dq.len() != t_len {
        return Err(Error::LengthMismatch {
            left: dq.len(),
            right: t_len,
        });
    }
    let h = p.dims.hidden;
    if trace.x.ncols() != p.dims.input || trace.concat.ncols() != 2 * h || trace.act2.ncols() != p.out.w.nrows() {
        return Err(Error::DimensionMismatch("trace does not match parameters".into()));
    }
    let share = d_utt / t_len as f64;
    let g = Array2::from_shape_fn((t_len, 1), |(t, _)| dq[t] + share);

    let mut grads = ModelParams::zeros(p.dims);
    grads.fgb = p.fgb;
    grads.out.w = standard(trace.act2.t().dot(&g));
    grads.out.b = g.sum_axis(Axis(0));

    let mut d2 = g.dot(&p.out.w.t());
    d2.zip_mut_with(&trace.pre2, |d, &a| *d *= elu_grad(a));
    grads.dense2.w = standard(trace.act1.t().dot(&d2));
    grads.dense2.b = d2.sum_axis(Axis(0));

    let mut d1 = d2.dot(&p.dense2.w.t());
    d1.zip_mut_with(&trace.pre1, |d, &a| *d *= elu_grad(a));
    grads.dense1.w = standard(trace.concat.t().dot(&d1));
    grads.dense1.b = d1.sum_axis(Axis(0));

    let dconcat = d1.dot(&p.dense1.w.t());
    grads.fwd = direction_backward(trace.x.view(), &trace.fwd, dconcat.slice(s![.., ..h]), &p.fwd);
    grads.bwd = direction_backward(trace.x.view(), &trace.bwd, dconcat.slice(s![.., h..]), &p.bwd);
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Spectrogram;
    use crate::net::{forward, init_model, ModelDims};

    fn spec(t: usize, f: usize) -> Spectrogram {
        Spectrogram::from_frames(Array2::from_shape_fn((t, f), |(i, j)| ((i * 5 + j * 3) % 7) as f64 * 0.15))
            .unwrap()
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = init_model(ModelDims { input: 4, hidden: 3 }, -3.0, 1).unwrap();
        let (_, tr) = forward(&spec(5, 4), &p).unwrap();
        let g = backward(&tr, 0.0, &[0.0; 5], &p).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn dq_length_is_checked() {
        let p = init_model(ModelDims { input: 4, hidden: 3 }, -3.0, 1).unwrap();
        let (_, tr) = forward(&spec(5, 4), &p).unwrap();
        assert!(matches!(backward(&tr, 0.0, &[0.0; 4], &p), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn utterance_partial_equals_spread_frame_partials() {
        let p = init_model(ModelDims { input: 4, hidden: 3 }, -3.0, 2).unwrap();
        let (_, tr) = forward(&spec(4, 4), &p).unwrap();
        let a = backward(&tr, 2.0, &[0.0; 4], &p).unwrap();
        let b = backward(&tr, 0.0, &[0.5; 4], &p).unwrap();
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn forward_direction_ignores_later_frames() {
        // one-hot dq at t=1: the forward LSTM cannot see frames after t=1
        let p = init_model(ModelDims { input: 4, hidden: 3 }, -3.0, 3).unwrap();
        let s = spec(5, 4);
        let (_, tr) = forward(&s, &p).unwrap();
        let mut dq = [0.0; 5];
        dq[1] = 1.0;
        let g = backward(&tr, 0.0, &dq, &p).unwrap();
        // perturbing rows 2.. of the input cannot move q_1 through fwd, so the
        // input-weight gradient equals the one computed from frames 0..=1 only
        let head = Spectrogram::from_frames(s.frames().slice(s![..2, ..]).to_owned()).unwrap();
        let mut p2 = p.clone();
        p2.bwd = LstmDirectionParams::zeros(4, 3);
        let (_, tr_full) = forward(&s, &p2).unwrap();
        let (_, tr_head) = forward(&head, &p2).unwrap();
        let full = backward(&tr_full, 0.0, &dq, &p2).unwrap();
        let part = backward(&tr_head, 0.0, &dq[..2], &p2).unwrap();
        for (a, b) in full.fwd.w.iter().zip(part.fwd.w.iter()) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        assert!(g.fwd.w.iter().any(|&v| v != 0.0));
    }
}
