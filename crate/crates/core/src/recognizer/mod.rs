//! Word recognition branch: sequence encoding, attention decoding, and the
//! character-level supervision losses (alignment, mask, word).

mod decoder;
mod encoder;

pub use decoder::{
    attention_center, attention_scores, attention_scores_cached, context_vector, decode_greedy,
    decode_step, teacher_backward, teacher_forward, AttentionCache, AttentionGrads,
    AttentionParams, DecoderGrads, DecoderParams, DecoderState, PrevLabel, StepOutput,
    TeacherCache,
};
pub use encoder::{
    encode_sequence, encode_sequence_cached, encoder_backward, EncodeCache, EncoderGrads,
    EncoderParams,
};

use crate::error::{Error, Result};
use crate::geometry::Quadrilateral;
use crate::ndops::{ce_from_logits, Tensor};

/// Ordered symbol table for decoding. The end-of-sequence marker is a member
/// of the table; mask rasters get one extra background class past the labels.
#[derive(Clone, Debug, PartialEq)]
pub struct CharSet {
    symbols: Vec<char>,
    eos_index: usize,
    mask_background_index: usize,
}

pub const EOS_CHAR: char = '#';

impl CharSet {
    pub fn new(symbols: Vec<char>, eos_index: usize) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for &c in &symbols {
            if !seen.insert(c) {
                return Err(Error::contract(format!("duplicate symbol {c:?}")));
            }
        }
        if eos_index >= symbols.len() {
            return Err(Error::contract("eos index out of range"));
        }
        let mask_background_index = symbols.len();
        Ok(CharSet {
            symbols,
            eos_index,
            mask_background_index,
        })
    }

    /// Uppercase letters, digits, and the EOS marker.
    pub fn alnum_upper() -> Self {
        let mut symbols: Vec<char> = ('A'..='Z').collect();
        symbols.extend('0'..='9');
        symbols.push(EOS_CHAR);
        let eos = symbols.len() - 1;
        CharSet::new(symbols, eos).expect("builtin charset is valid")
    }

    pub fn num_labels(&self) -> usize {
        self.symbols.len()
    }

    /// Mask classes: one per label plus background.
    pub fn num_mask_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn eos_index(&self) -> usize {
        self.eos_index
    }

    pub fn mask_background_index(&self) -> usize {
        self.mask_background_index
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        self.symbols.get(index).copied()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == c)
    }

    /// Map a transcript to label indices (EOS not appended).
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.index_of(c)
                    .filter(|&i| i != self.eos_index)
                    .ok_or_else(|| Error::contract(format!("character {c:?} not in charset")))
            })
            .collect()
    }

    /// Render label indices back to a string, stopping at EOS.
    pub fn decode(&self, labels: &[usize]) -> String {
        labels
            .iter()
            .take_while(|&&i| i != self.eos_index)
            .filter_map(|&i| self.symbol(i))
            .collect()
    }
}

/// Encoded sequence features plus the per-column axis centers they came from.
#[derive(Clone, Debug)]
pub struct EncoderStates {
    /// One vector (length 2m) per grid column.
    pub states: Vec<Tensor>,
    /// Scalar center of each column along the source quad's reading axis.
    pub column_centers: Vec<f64>,
}

impl EncoderStates {
    pub fn width(&self) -> usize {
        self.states.len()
    }
}

/// One decode step of the attention record.
#[derive(Clone, Debug)]
pub struct AttentionStep {
    /// Attention weights over the w columns; nonnegative, sums to 1.
    pub alpha: Vec<f64>,
    /// Attention center: weighted average of column centers (pixels).
    pub delta: f64,
    /// Predicted label index.
    pub label: usize,
    /// Peak attention column (argmax of alpha).
    pub onehot_index: usize,
}

/// Per-step attention weights, centers and labels for one decoded word.
#[derive(Clone, Debug, Default)]
pub struct AttentionTrace {
    pub steps: Vec<AttentionStep>,
}

impl AttentionTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Ground-truth character geometry used by the alignment and mask losses.
///
/// `center` and `width` are projections onto the owning word's reading axis
/// in image pixels; `quad` is the character's box in image coordinates and
/// can be re-projected onto any other reference quad.
#[derive(Clone, Debug)]
pub struct CharAnnotation {
    pub label: usize,
    pub quad: Quadrilateral,
    pub center: f64,
    pub width: f64,
}

impl CharAnnotation {
    /// Re-project the character box onto `reference`'s reading axis,
    /// returning (center, width) in that frame.
    pub fn projected_center_width(&self, reference: &Quadrilateral) -> Result<(f64, f64)> {
        let c = crate::geometry::project_onto_axis(self.quad.centroid(), reference)?;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in self.quad.corners() {
            let s = crate::geometry::project_onto_axis(*p, reference)?;
            lo = lo.min(s);
            hi = hi.max(s);
        }
        Ok((c, hi - lo))
    }
}

/// Dense map of class indices (row-major h x w).
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMap {
    pub h: usize,
    pub w: usize,
    pub classes: Vec<usize>,
}

impl ClassMap {
    pub fn filled(h: usize, w: usize, class: usize) -> Self {
        ClassMap {
            h,
            w,
            classes: vec![class; h * w],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> usize {
        self.classes[i * self.w + j]
    }

    pub fn set(&mut self, i: usize, j: usize, class: usize) {
        self.classes[i * self.w + j] = class;
    }
}

/// Squared attention-to-character offset, normalized by half the character
/// width, summed over the annotated characters.
pub fn align_loss(trace: &AttentionTrace, anns: &[CharAnnotation]) -> Result<f64> {
    if trace.len() < anns.len() {
        return Err(Error::contract(format!(
            "trace has {} steps but {} characters are annotated",
            trace.len(),
            anns.len()
        )));
    }
    let mut loss = 0.0;
    for (step, ann) in trace.steps.iter().zip(anns) {
        if ann.width <= 0.0 {
            return Err(Error::contract("character width must be > 0"));
        }
        let d = (step.delta - ann.center) / (0.5 * ann.width);
        loss += d * d;
    }
    Ok(loss)
}

/// d(align_loss)/d(delta_t) for each step (zero past the annotations).
pub fn align_loss_grad(trace: &AttentionTrace, anns: &[CharAnnotation]) -> Result<Vec<f64>> {
    if trace.len() < anns.len() {
        return Err(Error::contract("trace shorter than annotations"));
    }
    let mut grads = vec![0.0; trace.len()];
    for (t, ann) in anns.iter().enumerate() {
        if ann.width <= 0.0 {
            return Err(Error::contract("character width must be > 0"));
        }
        let half = 0.5 * ann.width;
        grads[t] = 2.0 * (trace.steps[t].delta - ann.center) / (half * half);
    }
    Ok(grads)
}

/// Mean per-pixel cross-entropy of softmax over classes.
///
/// `mask_logits` has shape [H, W, K+1] (background included); `mask_gt`
/// holds class indices.
pub fn mask_loss(mask_logits: &Tensor, mask_gt: &ClassMap) -> Result<f64> {
    Ok(mask_loss_with_grad(mask_logits, mask_gt)?.0)
}

/// Mask loss and its gradient w.r.t. the logits.
pub fn mask_loss_with_grad(mask_logits: &Tensor, mask_gt: &ClassMap) -> Result<(f64, Tensor)> {
    if mask_logits.rank() != 3 {
        return Err(Error::dim("mask_loss expects logits [H,W,K+1]"));
    }
    let (h, w, k) = (
        mask_logits.shape()[0],
        mask_logits.shape()[1],
        mask_logits.shape()[2],
    );
    if mask_gt.h != h || mask_gt.w != w {
        return Err(Error::dim("mask ground truth spatial dims disagree"));
    }
    if let Some(&bad) = mask_gt.classes.iter().find(|&&c| c >= k) {
        return Err(Error::contract(format!(
            "class index {bad} out of range (K+1 = {k})"
        )));
    }
    let n = (h * w) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[h, w, k]);
    let ld = mask_logits.data();
    let gd = grad.data_mut();
    for px in 0..h * w {
        let logits = &ld[px * k..(px + 1) * k];
        let target = mask_gt.classes[px];
        let (l, probs) = ce_from_logits(logits, target);
        loss += l;
        for (j, p) in probs.iter().enumerate() {
            gd[px * k + j] = (p - if j == target { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Sum over decode steps of cross-entropy against the forced labels.
pub fn word_loss(step_logits: &[Tensor], gt_labels: &[usize]) -> Result<f64> {
    Ok(word_loss_with_grad(step_logits, gt_labels)?.0)
}

/// Word loss and per-step logits gradients.
pub fn word_loss_with_grad(step_logits: &[Tensor], gt_labels: &[usize]) -> Result<(f64, Vec<Tensor>)> {
    if step_logits.len() != gt_labels.len() {
        return Err(Error::contract(format!(
            "{} logit vectors for {} labels",
            step_logits.len(),
            gt_labels.len()
        )));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(step_logits.len());
    for (logits, &target) in step_logits.iter().zip(gt_labels) {
        if target >= logits.len() {
            return Err(Error::contract(format!("label {target} out of range")));
        }
        let (l, probs) = ce_from_logits(logits.data(), target);
        loss += l;
        let mut g = Tensor::from_vec(probs);
        g.data_mut()[target] -= 1.0;
        grads.push(g);
    }
    Ok((loss, grads))
}
