//! Pooled-feature to sequence encoding: convolution blocks that collapse the
//! grid height to one row, then a bidirectional LSTM over the columns.

use crate::error::{Error, Result};
use crate::ndops::{
    add_channel_bias, bilstm_backward, bilstm_encode_cached, channel_bias_backward, conv2d,
    conv2d_backward, relu, relu_backward, BilstmCache, Conv2dSpec, LstmGrads, LstmParams, Tensor,
};
use crate::recognizer::EncoderStates;
use crate::text_align::PooledFeature;

/// Height-collapsing convolutions plus the two LSTM directions.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

#[derive(Clone, Debug)]
pub struct EncoderGrads {
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub fwd: LstmGrads,
    pub bwd: LstmGrads,
}

impl EncoderGrads {
    pub fn zeros_like(p: &EncoderParams) -> Self {
        EncoderGrads {
            conv1_w: Tensor::zeros(p.conv1_w.shape()),
            conv1_b: Tensor::zeros(p.conv1_b.shape()),
            conv2_w: Tensor::zeros(p.conv2_w.shape()),
            conv2_b: Tensor::zeros(p.conv2_b.shape()),
            fwd: LstmGrads::zeros_like(&p.fwd),
            bwd: LstmGrads::zeros_like(&p.bwd),
        }
    }
}

const BLOCK_SPEC: Conv2dSpec = Conv2dSpec {
    stride: (2, 1),
    pad: (1, 1),
};

pub struct EncodeCache {
    pub chw: Tensor,
    pub pre1: Tensor,
    pub post1: Tensor,
    pub pre2: Tensor,
    pub post2: Tensor,
    pub seq: Vec<Tensor>,
    pub bilstm: BilstmCache,
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: usize,
}

fn hwc_to_chw(t: &Tensor) -> Tensor {
    let (h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let src = t.data();
    let mut out = Tensor::zeros(&[c, h, w]);
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * c;
            for k in 0..c {
                dst[(k * h + y) * w + x] = src[base + k];
            }
        }
    }
    out
}

fn chw_to_hwc(t: &Tensor) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let src = t.data();
    let mut out = Tensor::zeros(&[h, w, c]);
    let dst = out.data_mut();
    for k in 0..c {
        for y in 0..h {
            for x in 0..w {
                dst[(y * w + x) * c + k] = src[(k * h + y) * w + x];
            }
        }
    }
    out
}

/// Encode a pooled region into per-column context states.
///
/// The two stride-(2,1) convolution blocks must collapse the grid height to
/// exactly one row (grid heights 1-4 qualify); the column count is preserved
/// and `column_centers` are copied from the sampling grid.
pub fn encode_sequence(pooled: &PooledFeature, p: &EncoderParams) -> Result<EncoderStates> {
    Ok(encode_sequence_cached(pooled, p)?.0)
}

pub fn encode_sequence_cached(
    pooled: &PooledFeature,
    p: &EncoderParams,
) -> Result<(EncoderStates, EncodeCache)> {
    let (h, w, c) = (
        pooled.tensor.shape()[0],
        pooled.tensor.shape()[1],
        pooled.tensor.shape()[2],
    );
    if w < 1 {
        return Err(Error::contract("encoder needs at least one column"));
    }
    let chw = hwc_to_chw(&pooled.tensor);
    let pre1 = add_channel_bias(&conv2d(&chw, &p.conv1_w, BLOCK_SPEC)?, &p.conv1_b)?;
    let post1 = relu(&pre1);
    let pre2 = add_channel_bias(&conv2d(&post1, &p.conv2_w, BLOCK_SPEC)?, &p.conv2_b)?;
    let post2 = relu(&pre2);
    let (c2, h2, w2) = (post2.shape()[0], post2.shape()[1], post2.shape()[2]);
    if h2 != 1 {
        return Err(Error::dim(format!(
            "convolution blocks left height {h2}; grid height {h} too large to collapse"
        )));
    }
    debug_assert_eq!(w2, w);
    let seq: Vec<Tensor> = (0..w)
        .map(|j| Tensor::from_fn(&[c2], |k| post2.data()[k * w + j]))
        .collect();
    let (states, bilstm) = bilstm_encode_cached(&seq, &p.fwd, &p.bwd)?;
    Ok((
        EncoderStates {
            states,
            column_centers: pooled.grid.column_centers.clone(),
        },
        EncodeCache {
            chw,
            pre1,
            post1,
            pre2,
            post2,
            seq,
            bilstm,
            grid_h: h,
            grid_w: w,
            channels: c,
        },
    ))
}

/// Backward through the encoder; returns the gradient on the pooled tensor
/// ([h, w, C]) and accumulates parameter gradients.
pub fn encoder_backward(
    cache: &EncodeCache,
    p: &EncoderParams,
    d_states: &[Tensor],
    grads: &mut EncoderGrads,
) -> Result<Tensor> {
    let w = cache.grid_w;
    let d_seq = bilstm_backward(
        &cache.bilstm,
        &p.fwd,
        &p.bwd,
        d_states,
        &mut grads.fwd,
        &mut grads.bwd,
    );
    let c2 = cache.post2.shape()[0];
    let mut d_post2 = Tensor::zeros(cache.post2.shape());
    for (j, dx) in d_seq.iter().enumerate() {
        for k in 0..c2 {
            d_post2.data_mut()[k * w + j] = dx.data()[k];
        }
    }
    let d_pre2 = relu_backward(&cache.pre2, &d_post2);
    grads.conv2_b.add_assign(&channel_bias_backward(&d_pre2));
    let (d_post1, d_k2) = conv2d_backward(&cache.post1, &p.conv2_w, BLOCK_SPEC, &d_pre2)?;
    grads.conv2_w.add_assign(&d_k2);
    let d_pre1 = relu_backward(&cache.pre1, &d_post1);
    grads.conv1_b.add_assign(&channel_bias_backward(&d_pre1));
    let (d_chw, d_k1) = conv2d_backward(&cache.chw, &p.conv1_w, BLOCK_SPEC, &d_pre1)?;
    grads.conv1_w.add_assign(&d_k1);
    Ok(chw_to_hwc(&d_chw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, Quadrilateral};
    use crate::ndops::grad_check_sampled;
    use crate::text_align::text_align_pool;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub(crate) fn tiny_encoder(c: usize, c1: usize, c2: usize, m: usize, seed: u64) -> EncoderParams {
        let mut r = rng(seed);
        EncoderParams {
            conv1_w: Tensor::uniform(&[c1, c, 3, 3], -0.1, 0.1, &mut r),
            conv1_b: Tensor::uniform(&[c1], -0.1, 0.1, &mut r),
            conv2_w: Tensor::uniform(&[c2, c1, 3, 3], -0.1, 0.1, &mut r),
            conv2_b: Tensor::uniform(&[c2], -0.1, 0.1, &mut r),
            fwd: LstmParams::uniform(c2, m, 0.1, &mut r),
            bwd: LstmParams::uniform(c2, m, 0.1, &mut r),
        }
    }

    fn pooled_from(fmap: &Tensor, w: usize, h: usize) -> PooledFeature {
        let q = Quadrilateral::axis_rect(
            Point::new(0.5, 0.5),
            Point::new(fmap.shape()[1] as f64 - 1.5, fmap.shape()[0] as f64 - 1.5),
        )
        .unwrap();
        text_align_pool(fmap, &q, w, h).unwrap()
    }

    #[test]
    fn zero_params_give_zero_states_of_correct_count() {
        let fmap = Tensor::filled(&[8, 12, 3], 0.5);
        let pooled = pooled_from(&fmap, 6, 4);
        let p = EncoderParams {
            conv1_w: Tensor::zeros(&[4, 3, 3, 3]),
            conv1_b: Tensor::zeros(&[4]),
            conv2_w: Tensor::zeros(&[5, 4, 3, 3]),
            conv2_b: Tensor::zeros(&[5]),
            fwd: LstmParams::zeros(5, 3),
            bwd: LstmParams::zeros(5, 3),
        };
        let enc = encode_sequence(&pooled, &p).unwrap();
        assert_eq!(enc.states.len(), 6);
        assert!(enc
            .states
            .iter()
            .all(|s| s.data().iter().all(|&v| v == 0.0)));
        assert_eq!(enc.column_centers, pooled.grid.column_centers);
    }

    #[test]
    fn state_count_equals_grid_width() {
        let mut r = rng(1);
        let fmap = Tensor::uniform(&[8, 16, 2], -1.0, 1.0, &mut r);
        let p = tiny_encoder(2, 3, 4, 3, 2);
        for w in [1usize, 3, 9] {
            let pooled = pooled_from(&fmap, w, 4);
            let enc = encode_sequence(&pooled, &p).unwrap();
            assert_eq!(enc.states.len(), w);
            assert_eq!(enc.states[0].shape(), &[6]);
        }
    }

    #[test]
    fn fixed_seed_is_byte_identical_across_runs() {
        let mut r = rng(3);
        let fmap = Tensor::uniform(&[8, 12, 2], -1.0, 1.0, &mut r);
        let pooled = pooled_from(&fmap, 5, 4);
        let run = || {
            let p = tiny_encoder(2, 3, 4, 3, 17);
            encode_sequence(&pooled, &p).unwrap()
        };
        let a = run();
        let b = run();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            for (va, vb) in sa.data().iter().zip(sb.data()) {
                assert_eq!(va.to_bits(), vb.to_bits());
            }
        }
    }

    #[test]
    fn encoder_backward_passes_sampled_central_differences() {
        let mut r = rng(4);
        let fmap = Tensor::uniform(&[8, 10, 2], -1.0, 1.0, &mut r);
        let pooled = pooled_from(&fmap, 4, 4);
        let p = tiny_encoder(2, 3, 4, 3, 5);
        let rvecs: Vec<Tensor> = (0..4)
            .map(|_| Tensor::uniform(&[6], -1.0, 1.0, &mut r))
            .collect();

        // loss as a function of the pooled tensor
        let pooled_clone = pooled.clone();
        let p2 = p.clone();
        let rv = rvecs.clone();
        let loss = move |ins: &[Tensor]| -> crate::Result<f64> {
            let mut pl = pooled_clone.clone();
            pl.tensor = ins[0].clone();
            let enc = encode_sequence(&pl, &p2)?;
            Ok(enc
                .states
                .iter()
                .zip(&rv)
                .map(|(s, r)| s.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>())
                .sum())
        };
        let (enc, cache) = encode_sequence_cached(&pooled, &p).unwrap();
        assert_eq!(enc.states.len(), 4);
        let mut grads = EncoderGrads::zeros_like(&p);
        let d_pooled = encoder_backward(&cache, &p, &rvecs, &mut grads).unwrap();
        let report = grad_check_sampled(
            loss,
            &[d_pooled],
            &[pooled.tensor.clone()],
            1e-5,
            1e-6,
            24,
            99,
        )
        .unwrap();
        assert!(report.passed, "rel err {}", report.max_rel_error);
    }

    #[test]
    fn grid_height_too_large_is_rejected() {
        let fmap = Tensor::filled(&[16, 16, 2], 0.1);
        let pooled = pooled_from(&fmap, 4, 8);
        let p = tiny_encoder(2, 3, 4, 3, 6);
        assert!(encode_sequence(&pooled, &p).is_err());
    }
}
