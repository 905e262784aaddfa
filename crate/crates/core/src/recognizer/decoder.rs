//! Attention decoding: additive attention over encoder states, an LSTM
//! decoder fed with the previous label embedding, the context vector and the
//! peak-attention one-hot, and greedy decoding with EOS termination.

use crate::error::{Error, Result};
use crate::ndops::{
    affine, affine_backward, lstm_step_backward, lstm_step_cached, softmax, softmax_backward,
    LstmCache, LstmGrads, LstmParams, Tensor,
};
use crate::recognizer::{AttentionStep, AttentionTrace, EncoderStates};

/// Additive attention scoring: z_j = v . tanh(W1 h + W2 e_j + b).
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w1: Tensor,
    pub w2: Tensor,
    pub b: Tensor,
    pub v: Tensor,
}

impl AttentionParams {
    pub fn dim(&self) -> usize {
        self.v.shape()[0]
    }
}

#[derive(Clone, Debug)]
pub struct AttentionGrads {
    pub w1: Tensor,
    pub w2: Tensor,
    pub b: Tensor,
    pub v: Tensor,
}

impl AttentionGrads {
    pub fn zeros_like(p: &AttentionParams) -> Self {
        AttentionGrads {
            w1: Tensor::zeros(p.w1.shape()),
            w2: Tensor::zeros(p.w2.shape()),
            b: Tensor::zeros(p.b.shape()),
            v: Tensor::zeros(p.v.shape()),
        }
    }
}

/// Saved pre-softmax activations of one attention evaluation.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    /// tanh(W1 h + W2 e_j + b) per column, [w, a].
    pub tanh_q: Tensor,
    pub alpha: Tensor,
}

fn matvec(m: &Tensor, x: &Tensor) -> Vec<f64> {
    // x[rows] . m[rows, cols] -> [cols]
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    debug_assert_eq!(x.shape()[0], rows);
    let mut out = vec![0.0; cols];
    let md = m.data();
    for k in 0..rows {
        let xv = x.data()[k];
        if xv == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(&md[k * cols..(k + 1) * cols]) {
            *o += xv * w;
        }
    }
    out
}

/// Attention weights over the encoder columns for one decode step.
pub fn attention_scores(
    h_dec_prev: &Tensor,
    enc: &EncoderStates,
    p: &AttentionParams,
) -> Result<Tensor> {
    Ok(attention_scores_cached(h_dec_prev, enc, p)?.0)
}

pub fn attention_scores_cached(
    h_dec_prev: &Tensor,
    enc: &EncoderStates,
    p: &AttentionParams,
) -> Result<(Tensor, AttentionCache)> {
    let w = enc.width();
    if w == 0 {
        return Err(Error::contract("attention needs at least one encoder state"));
    }
    let a = p.dim();
    if p.w1.shape()[0] != h_dec_prev.shape()[0]
        || p.w1.shape()[1] != a
        || p.w2.shape()[0] != enc.states[0].shape()[0]
        || p.w2.shape()[1] != a
        || p.b.shape()[0] != a
    {
        return Err(Error::dim("attention parameter shapes disagree"));
    }
    let q1 = matvec(&p.w1, h_dec_prev);
    let mut tanh_q = Tensor::zeros(&[w, a]);
    let mut z = Tensor::zeros(&[w]);
    for j in 0..w {
        let qj = matvec(&p.w2, &enc.states[j]);
        let mut zj = 0.0;
        for k in 0..a {
            let t = (q1[k] + qj[k] + p.b.data()[k]).tanh();
            tanh_q.set2(j, k, t);
            zj += p.v.data()[k] * t;
        }
        z.data_mut()[j] = zj;
    }
    let alpha = softmax(&z, 0)?;
    Ok((
        alpha.clone(),
        AttentionCache { tanh_q, alpha },
    ))
}

/// Backward through one attention evaluation.
///
/// Adds the per-column encoder-state gradients into `d_enc` and returns the
/// gradient on `h_dec_prev`.
pub fn attention_backward(
    cache: &AttentionCache,
    h_dec_prev: &Tensor,
    enc: &EncoderStates,
    p: &AttentionParams,
    d_alpha: &Tensor,
    grads: &mut AttentionGrads,
    d_enc: &mut [Tensor],
) -> Result<Tensor> {
    let w = enc.width();
    let a = p.dim();
    let dz = softmax_backward(&cache.alpha, d_alpha, 0)?;
    let mut dq_sum = vec![0.0; a];
    let enc_dim = enc.states[0].shape()[0];
    for j in 0..w {
        let dzj = dz.data()[j];
        if dzj == 0.0 {
            continue;
        }
        let mut dq = vec![0.0; a];
        for k in 0..a {
            let t = cache.tanh_q.get2(j, k);
            grads.v.data_mut()[k] += dzj * t;
            dq[k] = dzj * p.v.data()[k] * (1.0 - t * t);
            dq_sum[k] += dq[k];
            grads.b.data_mut()[k] += dq[k];
        }
        // dW2 += e_j (x) dq ; d_e_j += W2 . dq
        let e = &enc.states[j];
        let w2d = p.w2.data();
        let gw2 = grads.w2.data_mut();
        let dej = d_enc[j].data_mut();
        for r in 0..enc_dim {
            let ev = e.data()[r];
            let row = r * a;
            let mut acc = 0.0;
            for k in 0..a {
                gw2[row + k] += ev * dq[k];
                acc += w2d[row + k] * dq[k];
            }
            dej[r] += acc;
        }
    }
    // dW1 += h (x) dq_sum ; dh = W1 . dq_sum
    let m = h_dec_prev.shape()[0];
    let mut dh = Tensor::zeros(&[m]);
    let w1d = p.w1.data();
    let gw1 = grads.w1.data_mut();
    for r in 0..m {
        let hv = h_dec_prev.data()[r];
        let row = r * a;
        let mut acc = 0.0;
        for k in 0..a {
            gw1[row + k] += hv * dq_sum[k];
            acc += w1d[row + k] * dq_sum[k];
        }
        dh.data_mut()[r] = acc;
    }
    Ok(dh)
}

/// Weighted sum of encoder states under the attention distribution.
pub fn context_vector(alpha: &Tensor, enc: &EncoderStates) -> Result<Tensor> {
    if alpha.shape()[0] != enc.width() {
        return Err(Error::dim(format!(
            "alpha length {} != state count {}",
            alpha.shape()[0],
            enc.width()
        )));
    }
    let dim = enc.states[0].shape()[0];
    let mut g = Tensor::zeros(&[dim]);
    for (a, e) in alpha.data().iter().zip(&enc.states) {
        for (gv, ev) in g.data_mut().iter_mut().zip(e.data()) {
            *gv += a * ev;
        }
    }
    Ok(g)
}

/// Attention center: weighted average of per-column centers.
pub fn attention_center(alpha: &Tensor, column_centers: &[f64]) -> Result<f64> {
    if alpha.shape()[0] != column_centers.len() {
        return Err(Error::dim(format!(
            "alpha length {} != center count {}",
            alpha.shape()[0],
            column_centers.len()
        )));
    }
    Ok(alpha
        .data()
        .iter()
        .zip(column_centers)
        .map(|(a, p)| a * p)
        .sum())
}

/// Previous-label input to a decode step; a dedicated start token opens the
/// sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrevLabel {
    Start,
    Label(usize),
}

/// Embedding table, decoder cell and output projection.
#[derive(Clone, Debug)]
pub struct DecoderParams {
    /// [num_labels + 1, e]; the extra final row is the start token.
    pub embed: Tensor,
    pub lstm: LstmParams,
    /// [m + enc_dim, K]
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl DecoderParams {
    pub fn num_labels(&self) -> usize {
        self.out_b.shape()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.shape()[1]
    }

    fn embed_row(&self, prev: PrevLabel) -> Result<usize> {
        let rows = self.embed.shape()[0];
        match prev {
            PrevLabel::Start => Ok(rows - 1),
            PrevLabel::Label(i) if i < rows - 1 => Ok(i),
            PrevLabel::Label(i) => Err(Error::contract(format!("label {i} outside embedding table"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DecoderGrads {
    pub embed: Tensor,
    pub lstm: LstmGrads,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl DecoderGrads {
    pub fn zeros_like(p: &DecoderParams) -> Self {
        DecoderGrads {
            embed: Tensor::zeros(p.embed.shape()),
            lstm: LstmGrads::zeros_like(&p.lstm),
            out_w: Tensor::zeros(p.out_w.shape()),
            out_b: Tensor::zeros(p.out_b.shape()),
        }
    }
}

/// Recurrent decoder state.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub h: Tensor,
    pub c: Tensor,
}

impl DecoderState {
    pub fn initial(hidden: usize) -> Self {
        DecoderState {
            h: Tensor::zeros(&[hidden]),
            c: Tensor::zeros(&[hidden]),
        }
    }
}

fn assemble_input(
    p: &DecoderParams,
    prev: PrevLabel,
    g: &Tensor,
    u: &Tensor,
) -> Result<(Tensor, usize)> {
    let row = p.embed_row(prev)?;
    let e = p.embed_dim();
    let mut x = Vec::with_capacity(e + g.len() + u.len());
    x.extend_from_slice(&p.embed.data()[row * e..(row + 1) * e]);
    x.extend_from_slice(g.data());
    x.extend_from_slice(u.data());
    if x.len() != p.lstm.input_dim() {
        return Err(Error::dim(format!(
            "decoder input length {} != lstm input dim {}",
            x.len(),
            p.lstm.input_dim()
        )));
    }
    Ok((Tensor::from_vec(x), row))
}

/// One decode step: the LSTM consumes [embed(y_prev); g; u] and the logits
/// read the new hidden state concatenated with the context vector.
pub fn decode_step(
    state: &DecoderState,
    y_prev: PrevLabel,
    g: &Tensor,
    u: &Tensor,
    p: &DecoderParams,
) -> Result<(Tensor, DecoderState)> {
    let (logits, next, _) = decode_step_cached(state, y_prev, g, u, p)?;
    Ok((logits, next))
}

pub(crate) struct StepCache {
    pub att: AttentionCache,
    pub g: Tensor,
    pub embed_idx: usize,
    pub lstm: LstmCache,
    pub h_out: Tensor,
}

fn decode_step_cached(
    state: &DecoderState,
    y_prev: PrevLabel,
    g: &Tensor,
    u: &Tensor,
    p: &DecoderParams,
) -> Result<(Tensor, DecoderState, (LstmCache, usize))> {
    let (x, row) = assemble_input(p, y_prev, g, u)?;
    let (h, c, lstm_cache) = lstm_step_cached(&x, &state.h, &state.c, &p.lstm)?;
    let mut hg = Vec::with_capacity(h.len() + g.len());
    hg.extend_from_slice(h.data());
    hg.extend_from_slice(g.data());
    let hg = Tensor::new(vec![1, hg.len()], hg)?;
    let logits = affine(&hg, &p.out_w, &p.out_b)?;
    let k = logits.len();
    Ok((
        logits.reshape(vec![k])?,
        DecoderState { h, c },
        (lstm_cache, row),
    ))
}

/// Lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn onehot(len: usize, index: usize, enabled: bool) -> Tensor {
    let mut t = Tensor::zeros(&[len]);
    if enabled {
        t.data_mut()[index] = 1.0;
    }
    t
}

/// Greedy decoding: argmax label each step, stopping at EOS or `max_len`.
///
/// Returns the label sequence (EOS excluded) and the per-step attention
/// trace (EOS step included).
pub fn decode_greedy(
    enc: &EncoderStates,
    att: &AttentionParams,
    dec: &DecoderParams,
    eos_index: usize,
    max_len: usize,
    use_pos_embed: bool,
) -> Result<(Vec<usize>, AttentionTrace)> {
    if max_len < 1 {
        return Err(Error::contract("max_len must be >= 1"));
    }
    let w = enc.width();
    let mut state = DecoderState::initial(dec.lstm.hidden());
    let mut prev = PrevLabel::Start;
    let mut labels = Vec::new();
    let mut trace = AttentionTrace::default();
    for _ in 0..max_len {
        let alpha = attention_scores(&state.h, enc, att)?;
        let delta = attention_center(&alpha, &enc.column_centers)?;
        let u_idx = argmax(alpha.data());
        let u = onehot(w, u_idx, use_pos_embed);
        let g = context_vector(&alpha, enc)?;
        let (logits, next) = decode_step(&state, prev, &g, &u, dec)?;
        let label = argmax(logits.data());
        trace.steps.push(AttentionStep {
            alpha: alpha.data().to_vec(),
            delta,
            label,
            onehot_index: u_idx,
        });
        if label == eos_index {
            break;
        }
        labels.push(label);
        prev = PrevLabel::Label(label);
        state = next;
    }
    Ok((labels, trace))
}

/// Step logits plus the attention record of a teacher-forced pass.
pub struct StepOutput {
    pub logits: Vec<Tensor>,
    pub trace: AttentionTrace,
}

/// Everything needed to run the backward pass of a teacher-forced decode.
pub struct TeacherCache {
    pub(crate) steps: Vec<StepCache>,
    pub use_pos_embed: bool,
}

/// Run the decoder with forced previous labels (`gt_labels` includes the
/// terminal EOS). One logit vector is produced per forced label.
pub fn teacher_forward(
    enc: &EncoderStates,
    att: &AttentionParams,
    dec: &DecoderParams,
    gt_labels: &[usize],
    use_pos_embed: bool,
) -> Result<(StepOutput, TeacherCache)> {
    if gt_labels.is_empty() {
        return Err(Error::contract("teacher forcing needs at least one label"));
    }
    let w = enc.width();
    let mut state = DecoderState::initial(dec.lstm.hidden());
    let mut logits_out = Vec::with_capacity(gt_labels.len());
    let mut trace = AttentionTrace::default();
    let mut caches = Vec::with_capacity(gt_labels.len());
    for (t, _) in gt_labels.iter().enumerate() {
        let prev = if t == 0 {
            PrevLabel::Start
        } else {
            PrevLabel::Label(gt_labels[t - 1])
        };
        let (alpha, att_cache) = attention_scores_cached(&state.h, enc, att)?;
        let delta = attention_center(&alpha, &enc.column_centers)?;
        let u_idx = argmax(alpha.data());
        let u = onehot(w, u_idx, use_pos_embed);
        let g = context_vector(&alpha, enc)?;
        let (logits, next, (lstm_cache, embed_idx)) = decode_step_cached(&state, prev, &g, &u, dec)?;
        trace.steps.push(AttentionStep {
            alpha: alpha.data().to_vec(),
            delta,
            label: argmax(logits.data()),
            onehot_index: u_idx,
        });
        caches.push(StepCache {
            att: att_cache,
            g,
            embed_idx,
            lstm: lstm_cache,
            h_out: next.h.clone(),
        });
        logits_out.push(logits);
        state = next;
    }
    Ok((
        StepOutput {
            logits: logits_out,
            trace,
        },
        TeacherCache {
            steps: caches,
            use_pos_embed,
        },
    ))
}

/// Backward through a teacher-forced decode.
///
/// `d_logits[t]` is the upstream gradient on step t's logits and
/// `d_delta[t]` the gradient on its attention center (zero when the
/// alignment loss does not apply). Returns per-column gradients on the
/// encoder states and accumulates attention/decoder parameter gradients.
pub fn teacher_backward(
    cache: &TeacherCache,
    enc: &EncoderStates,
    att: &AttentionParams,
    dec: &DecoderParams,
    d_logits: &[Tensor],
    d_delta: &[f64],
    att_grads: &mut AttentionGrads,
    dec_grads: &mut DecoderGrads,
) -> Result<Vec<Tensor>> {
    let steps = cache.steps.len();
    if d_logits.len() != steps || d_delta.len() != steps {
        return Err(Error::dim("teacher_backward gradient counts disagree"));
    }
    let w = enc.width();
    let enc_dim = enc.states[0].shape()[0];
    let m = dec.lstm.hidden();
    let e = dec.embed_dim();
    let mut d_enc: Vec<Tensor> = (0..w).map(|_| Tensor::zeros(&[enc_dim])).collect();
    let mut dh_next = Tensor::zeros(&[m]);
    let mut dc_next = Tensor::zeros(&[m]);
    for t in (0..steps).rev() {
        let sc = &cache.steps[t];
        // logits = [h; g] . out_w + out_b
        let mut hg = Vec::with_capacity(m + enc_dim);
        hg.extend_from_slice(sc.h_out.data());
        hg.extend_from_slice(sc.g.data());
        let hg = Tensor::new(vec![1, m + enc_dim], hg)?;
        let gl = d_logits[t].clone().reshape(vec![1, d_logits[t].len()])?;
        let (d_hg, d_w, d_b) = affine_backward(&hg, &dec.out_w, &gl)?;
        dec_grads.out_w.add_assign(&d_w);
        dec_grads.out_b.add_assign(&d_b);

        let mut dh = dh_next.clone();
        for (a, &g) in dh.data_mut().iter_mut().zip(&d_hg.data()[..m]) {
            *a += g;
        }
        let mut dg = Tensor::from_vec(d_hg.data()[m..].to_vec());

        // LSTM backward for this step
        let (dx, dh_prev_rec, dc_prev) =
            lstm_step_backward(&sc.lstm, &dec.lstm, &dh, &dc_next, &mut dec_grads.lstm);

        // split dx into embedding / context / one-hot parts
        let row = sc.embed_idx * e;
        for (k, &g) in dx.data()[..e].iter().enumerate() {
            dec_grads.embed.data_mut()[row + k] += g;
        }
        for (a, &g) in dg.data_mut().iter_mut().zip(&dx.data()[e..e + enc_dim]) {
            *a += g;
        }
        // the one-hot position input is discrete; no gradient flows through it

        // context vector backward: d_alpha_j = dg . e_j ; d_e_j += alpha_j dg
        let mut d_alpha = Tensor::zeros(&[w]);
        for j in 0..w {
            let a = sc.att.alpha.data()[j];
            let mut acc = 0.0;
            let ej = enc.states[j].data();
            let dej = d_enc[j].data_mut();
            for k in 0..enc_dim {
                acc += dg.data()[k] * ej[k];
                dej[k] += a * dg.data()[k];
            }
            d_alpha.data_mut()[j] = acc;
        }
        // attention-center backward: delta = sum_j alpha_j p_j
        if d_delta[t] != 0.0 {
            for j in 0..w {
                d_alpha.data_mut()[j] += d_delta[t] * enc.column_centers[j];
            }
        }

        // attention backward feeds the previous hidden state
        let h_prev = &sc.lstm.h_prev;
        let dh_att = attention_backward(&sc.att, h_prev, enc, att, &d_alpha, att_grads, &mut d_enc)?;

        dh_next = dh_prev_rec;
        dh_next.add_assign(&dh_att);
        dc_next = dc_prev;
    }
    Ok(d_enc)
}
