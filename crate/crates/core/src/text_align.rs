//! Quadrilateral-aligned feature pooling.
//!
//! A fixed h x w grid of sample points is laid out inside an arbitrary
//! convex quadrilateral (bilinear blend of the four corners at cell
//! centers); each point reads the feature map through differentiable
//! bilinear interpolation with zero padding outside the map. RoI-pool and
//! RoI-align baselines over the axis-aligned bounding rectangle are provided
//! for ablation comparisons.

use crate::error::{Error, Result};
use crate::geometry::{project_onto_axis, Point, Quadrilateral};
use crate::ndops::Tensor;

/// Sample locations for one pooled region.
#[derive(Clone, Debug)]
pub struct SamplingGrid {
    pub h: usize,
    pub w: usize,
    /// Row-major h x w sample points in feature-map pixel coordinates.
    pub points: Vec<Point>,
    /// Per-column scalar centers along the quad's reading axis.
    pub column_centers: Vec<f64>,
}

impl SamplingGrid {
    pub fn point(&self, i: usize, j: usize) -> Point {
        self.points[i * self.w + j]
    }
}

/// Fixed-size feature tensor pooled from a quadrilateral region.
#[derive(Clone, Debug)]
pub struct PooledFeature {
    /// Shape [h, w, C].
    pub tensor: Tensor,
    pub grid: SamplingGrid,
    pub source_quad: Quadrilateral,
}

/// Lay out an h x w grid of points inside `q`.
///
/// Point (i, j) is the bilinear blend of the corners at normalized cell
/// centers ((j+0.5)/w, (i+0.5)/h); `column_centers[j]` is the projection of
/// column j's mean point onto the reading axis.
pub fn build_grid(q: &Quadrilateral, w: usize, h: usize) -> Result<SamplingGrid> {
    if w < 1 || h < 1 {
        return Err(Error::contract("grid dims must be >= 1"));
    }
    if q.is_degenerate() {
        return Err(Error::contract("cannot build grid on a degenerate quad"));
    }
    let c = q.corners();
    let mut points = Vec::with_capacity(h * w);
    for i in 0..h {
        let v = (i as f64 + 0.5) / h as f64;
        for j in 0..w {
            let u = (j as f64 + 0.5) / w as f64;
            let top = c[0].scale(1.0 - u).add(c[1].scale(u));
            let bottom = c[3].scale(1.0 - u).add(c[2].scale(u));
            points.push(top.scale(1.0 - v).add(bottom.scale(v)));
        }
    }
    let mut column_centers = Vec::with_capacity(w);
    for j in 0..w {
        let mut mean = Point::new(0.0, 0.0);
        for i in 0..h {
            mean = mean.add(points[i * w + j]);
        }
        mean = mean.scale(1.0 / h as f64);
        column_centers.push(project_onto_axis(mean, q)?);
    }
    Ok(SamplingGrid {
        h,
        w,
        points,
        column_centers,
    })
}

/// The four lattice neighbors of `p` with their interpolation weights
/// g(px,pix)*g(py,piy), g(m,n) = max(0, 1-|m-n|). Out-of-bounds neighbors
/// are dropped (zero-padding semantics); dropped slots have row == usize::MAX.
pub fn bilinear_weights(p: Point, height: usize, width: usize) -> [(usize, usize, f64); 4] {
    let x0 = p.x.floor();
    let y0 = p.y.floor();
    let fx = p.x - x0;
    let fy = p.y - y0;
    let mut out = [(usize::MAX, usize::MAX, 0.0); 4];
    let mut n = 0;
    let mut push = |xi: f64, yi: f64, wgt: f64| {
        if wgt == 0.0 {
            return;
        }
        if xi >= 0.0 && yi >= 0.0 && (xi as usize) < width && (yi as usize) < height {
            out[n] = (yi as usize, xi as usize, wgt);
            n += 1;
        }
    };
    push(x0, y0, (1.0 - fx) * (1.0 - fy));
    push(x0 + 1.0, y0, fx * (1.0 - fy));
    push(x0, y0 + 1.0, (1.0 - fx) * fy);
    push(x0 + 1.0, y0 + 1.0, fx * fy);
    out
}

/// Read all channels of `fmap[H,W,C]` at fractional point `p`.
pub fn bilinear_sample(fmap: &Tensor, p: Point) -> Result<Tensor> {
    if fmap.rank() != 3 {
        return Err(Error::dim("bilinear_sample expects fmap[H,W,C]"));
    }
    let (h, w, c) = (fmap.shape()[0], fmap.shape()[1], fmap.shape()[2]);
    let mut out = Tensor::zeros(&[c]);
    let od = out.data_mut();
    let fd = fmap.data();
    for (yi, xi, wgt) in bilinear_weights(p, h, w) {
        if yi == usize::MAX {
            continue;
        }
        let base = (yi * w + xi) * c;
        for (o, v) in od.iter_mut().zip(&fd[base..base + c]) {
            *o += wgt * v;
        }
    }
    Ok(out)
}

/// Sparse gradient of [`bilinear_sample`] w.r.t. the feature map: per
/// in-bounds neighbor, `(row, col, weight)` where the full per-channel
/// gradient is `weight * grad_out`.
pub fn bilinear_backward(p: Point, fmap_h: usize, fmap_w: usize) -> Vec<(usize, usize, f64)> {
    bilinear_weights(p, fmap_h, fmap_w)
        .into_iter()
        .filter(|&(y, _, _)| y != usize::MAX)
        .collect()
}

fn pool_with_grid(fmap: &Tensor, grid: SamplingGrid, quad: Quadrilateral) -> Result<PooledFeature> {
    let c = fmap.shape()[2];
    let (h, w) = (grid.h, grid.w);
    let mut tensor = Tensor::zeros(&[h, w, c]);
    let td = tensor.data_mut();
    let fd = fmap.data();
    let (fh, fw) = (fmap.shape()[0], fmap.shape()[1]);
    for (n, p) in grid.points.iter().enumerate() {
        let base = n * c;
        for (yi, xi, wgt) in bilinear_weights(*p, fh, fw) {
            if yi == usize::MAX {
                continue;
            }
            let src = (yi * fw + xi) * c;
            for k in 0..c {
                td[base + k] += wgt * fd[src + k];
            }
        }
    }
    Ok(PooledFeature {
        tensor,
        grid,
        source_quad: quad,
    })
}

/// Pool a fixed h x w feature tensor from inside quadrilateral `q`.
pub fn text_align_pool(fmap: &Tensor, q: &Quadrilateral, w: usize, h: usize) -> Result<PooledFeature> {
    if fmap.rank() != 3 {
        return Err(Error::dim("text_align_pool expects fmap[H,W,C]"));
    }
    let grid = build_grid(q, w, h)?;
    pool_with_grid(fmap, grid, *q)
}

/// Scatter pooled-feature gradients back into a dense feature-map gradient.
pub fn text_align_pool_backward(
    grid: &SamplingGrid,
    grad: &Tensor,
    fmap_h: usize,
    fmap_w: usize,
) -> Tensor {
    let c = grad.shape()[2];
    assert_eq!(grad.shape()[0], grid.h);
    assert_eq!(grad.shape()[1], grid.w);
    let mut dfmap = Tensor::zeros(&[fmap_h, fmap_w, c]);
    let dd = dfmap.data_mut();
    let gd = grad.data();
    for (n, p) in grid.points.iter().enumerate() {
        let base = n * c;
        for (yi, xi, wgt) in bilinear_weights(*p, fmap_h, fmap_w) {
            if yi == usize::MAX {
                continue;
            }
            let dst = (yi * fmap_w + xi) * c;
            for k in 0..c {
                dd[dst + k] += wgt * gd[base + k];
            }
        }
    }
    dfmap
}

/// RoI-align baseline: identical sampling scheme but over the axis-aligned
/// bounding rectangle of `q` instead of `q` itself.
pub fn roi_align_baseline(fmap: &Tensor, q: &Quadrilateral, w: usize, h: usize) -> Result<PooledFeature> {
    if fmap.rank() != 3 {
        return Err(Error::dim("roi_align_baseline expects fmap[H,W,C]"));
    }
    let rect = q.bounding_rect()?;
    let grid = build_grid(&rect, w, h)?;
    pool_with_grid(fmap, grid, *q)
}

/// Argmax bookkeeping for the max-pool baseline backward pass.
#[derive(Clone, Debug)]
pub struct RoiPoolCache {
    /// Per output element (row-major over [h, w, C]): source (row, col).
    pub argmax: Vec<(usize, usize)>,
}

/// RoI-pool baseline: integer-quantized bins over the axis-aligned bounding
/// rectangle of `q`, max within each bin. An empty bin after quantization
/// replicates the nearest valid cell.
pub fn roi_pool_baseline(
    fmap: &Tensor,
    q: &Quadrilateral,
    w: usize,
    h: usize,
) -> Result<(PooledFeature, RoiPoolCache)> {
    if fmap.rank() != 3 {
        return Err(Error::dim("roi_pool_baseline expects fmap[H,W,C]"));
    }
    if w < 1 || h < 1 {
        return Err(Error::contract("grid dims must be >= 1"));
    }
    if q.is_degenerate() {
        return Err(Error::contract("cannot pool a degenerate quad"));
    }
    let (fh, fw, c) = (fmap.shape()[0], fmap.shape()[1], fmap.shape()[2]);
    let (min, max) = q.bounds();
    let x0 = min.x.floor() as isize;
    let y0 = min.y.floor() as isize;
    let x1 = max.x.ceil() as isize;
    let y1 = max.y.ceil() as isize;
    let region_w = (x1 - x0).max(1) as usize;
    let region_h = (y1 - y0).max(1) as usize;

    let clamp = |v: isize, hi: usize| -> usize { v.clamp(0, hi as isize - 1) as usize };
    let mut tensor = Tensor::zeros(&[h, w, c]);
    let mut argmax = vec![(0usize, 0usize); h * w * c];
    let fd = fmap.data();
    for i in 0..h {
        let by0 = y0 + (i * region_h / h) as isize;
        let by1 = y0 + ((i + 1) * region_h).div_ceil(h) as isize;
        for j in 0..w {
            let bx0 = x0 + (j * region_w / w) as isize;
            let bx1 = x0 + ((j + 1) * region_w).div_ceil(w) as isize;
            // valid lattice cells of this bin
            let ys = by0.max(0)..by1.min(fh as isize);
            let xs = bx0.max(0)..bx1.min(fw as isize);
            let cells: Vec<(usize, usize)> = if ys.is_empty() || xs.is_empty() {
                // bin fell off the map: replicate the nearest valid cell
                let cy = clamp((by0 + by1 - 1) / 2, fh);
                let cx = clamp((bx0 + bx1 - 1) / 2, fw);
                vec![(cy, cx)]
            } else {
                ys.flat_map(|y| xs.clone().map(move |x| (y as usize, x as usize)))
                    .collect()
            };
            for k in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_cell = cells[0];
                for &(yy, xx) in &cells {
                    let v = fd[(yy * fw + xx) * c + k];
                    if v > best {
                        best = v;
                        best_cell = (yy, xx);
                    }
                }
                let out_idx = (i * w + j) * c + k;
                tensor.data_mut()[out_idx] = best;
                argmax[out_idx] = best_cell;
            }
        }
    }
    // nominal grid: quantized bin centers, projected onto the rect's axis
    let rect = q.bounding_rect()?;
    let mut points = Vec::with_capacity(h * w);
    for i in 0..h {
        let by0 = y0 + (i * region_h / h) as isize;
        let by1 = y0 + ((i + 1) * region_h).div_ceil(h) as isize;
        for j in 0..w {
            let bx0 = x0 + (j * region_w / w) as isize;
            let bx1 = x0 + ((j + 1) * region_w).div_ceil(w) as isize;
            points.push(Point::new(
                (bx0 + bx1 - 1) as f64 / 2.0,
                (by0 + by1 - 1) as f64 / 2.0,
            ));
        }
    }
    let mut column_centers = Vec::with_capacity(w);
    for j in 0..w {
        let mut mean = Point::new(0.0, 0.0);
        for i in 0..h {
            mean = mean.add(points[i * w + j]);
        }
        column_centers.push(project_onto_axis(mean.scale(1.0 / h as f64), &rect)?);
    }
    Ok((
        PooledFeature {
            tensor,
            grid: SamplingGrid {
                h,
                w,
                points,
                column_centers,
            },
            source_quad: *q,
        },
        RoiPoolCache { argmax },
    ))
}

/// Route max-pool gradients back to their argmax cells.
pub fn roi_pool_backward(cache: &RoiPoolCache, grad: &Tensor, fmap_h: usize, fmap_w: usize) -> Tensor {
    let c = grad.shape()[2];
    let mut dfmap = Tensor::zeros(&[fmap_h, fmap_w, c]);
    let dd = dfmap.data_mut();
    for (out_idx, &(y, x)) in cache.argmax.iter().enumerate() {
        let k = out_idx % c;
        dd[(y * fmap_w + x) * c + k] += grad.data()[out_idx];
    }
    dfmap
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{decode_rbox, RBox};
    use crate::ndops::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Quadrilateral {
        Quadrilateral::axis_rect(Point::new(x0, y0), Point::new(x1, y1)).unwrap()
    }

    #[test]
    fn grid_centers_on_axis_aligned_rect() {
        let q = rect(0.0, 0.0, 8.0, 2.0);
        let g = build_grid(&q, 4, 2).unwrap();
        let xs: Vec<f64> = (0..4).map(|j| g.point(0, j).x).collect();
        assert_eq!(xs, vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(g.point(0, 0).y, 0.5);
        assert_eq!(g.point(1, 0).y, 1.5);
        assert_eq!(g.column_centers, vec![1.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn single_cell_grid_is_corner_blend_centroid() {
        let q = rect(0.0, 0.0, 4.0, 2.0);
        let g = build_grid(&q, 1, 1).unwrap();
        assert_eq!(g.points.len(), 1);
        assert!((g.point(0, 0).x - 2.0).abs() < 1e-12);
        assert!((g.point(0, 0).y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_grid_is_rotation_of_axis_aligned_grid() {
        let rb0 = RBox::new(Point::new(0.0, 0.0), 1.0, 1.0, 4.0, 4.0, 0.0).unwrap();
        let angle = 0.6;
        let rb1 = RBox::new(Point::new(0.0, 0.0), 1.0, 1.0, 4.0, 4.0, angle).unwrap();
        let g0 = build_grid(&decode_rbox(&rb0), 6, 3).unwrap();
        let g1 = build_grid(&decode_rbox(&rb1), 6, 3).unwrap();
        for (p0, p1) in g0.points.iter().zip(&g1.points) {
            let expect = p0.rotated(angle);
            assert!((p1.x - expect.x).abs() < 1e-12);
            assert!((p1.y - expect.y).abs() < 1e-12);
        }
        // projections are rotation-invariant
        for (a, b) in g0.column_centers.iter().zip(&g1.column_centers) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn column_centers_strictly_increasing() {
        let mut r = rng(1);
        for _ in 0..20 {
            let rb = RBox::new(
                Point::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)),
                r.random_range(0.5..2.0),
                r.random_range(0.5..2.0),
                r.random_range(1.0..4.0),
                r.random_range(1.0..4.0),
                r.random_range(-1.2..1.2),
            )
            .unwrap();
            let g = build_grid(&decode_rbox(&rb), 8, 3).unwrap();
            for w in g.column_centers.windows(2) {
                assert!(w[1] > w[0]);
            }
        }
    }

    #[test]
    fn degenerate_quad_rejected() {
        let rb = RBox::new(Point::new(0.0, 0.0), 0.0, 0.0, 2.0, 2.0, 0.0).unwrap();
        assert!(matches!(
            build_grid(&decode_rbox(&rb), 4, 2),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn sample_at_lattice_point_is_exact() {
        let fmap = Tensor::from_fn(&[4, 5, 2], |i| i as f64 * 0.37 - 1.0);
        let v = bilinear_sample(&fmap, Point::new(3.0, 2.0)).unwrap();
        assert_eq!(v.data()[0], fmap.get3(2, 3, 0));
        assert_eq!(v.data()[1], fmap.get3(2, 3, 1));
    }

    #[test]
    fn sample_at_cell_center_averages_corners() {
        // corner channel values 0,0,0,4 -> equal weights 0.25 -> 1.0
        let mut fmap = Tensor::zeros(&[2, 2, 1]);
        fmap.set3(1, 1, 0, 4.0);
        let v = bilinear_sample(&fmap, Point::new(0.5, 0.5)).unwrap();
        assert!((v.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bilinear_reproduces_affine_fields_exactly() {
        // f(x, y) = 2x + 3y + 1
        let fmap = Tensor::from_fn(&[6, 7, 1], |i| {
            let y = (i / 7) as f64;
            let x = (i % 7) as f64;
            2.0 * x + 3.0 * y + 1.0
        });
        let mut r = rng(2);
        for _ in 0..200 {
            let p = Point::new(r.random_range(0.0..6.0), r.random_range(0.0..5.0));
            let v = bilinear_sample(&fmap, p).unwrap();
            assert!((v.data()[0] - (2.0 * p.x + 3.0 * p.y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_bounds_neighbors_contribute_zero() {
        let fmap = Tensor::filled(&[3, 3, 1], 2.0);
        // halfway off the left edge: two in-bounds neighbors at weight 0.25 each
        let v = bilinear_sample(&fmap, Point::new(-0.5, 1.0)).unwrap();
        assert!((v.data()[0] - 1.0).abs() < 1e-15);
        // fully outside
        let v = bilinear_sample(&fmap, Point::new(-2.0, 1.0)).unwrap();
        assert_eq!(v.data()[0], 0.0);
    }

    #[test]
    fn backward_weights_at_lattice_node_and_center() {
        let w = bilinear_backward(Point::new(2.0, 1.0), 4, 4);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0], (1, 2, 1.0));
        let w = bilinear_backward(Point::new(0.5, 0.5), 4, 4);
        assert_eq!(w.len(), 4);
        for &(_, _, wgt) in &w {
            assert!((wgt - 0.25).abs() < 1e-15);
        }
        // interior weights sum to 1
        let w = bilinear_backward(Point::new(1.3, 2.7), 4, 4);
        let sum: f64 = w.iter().map(|&(_, _, wgt)| wgt).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&(_, _, wgt)| wgt >= 0.0));
    }

    #[test]
    fn bilinear_gradient_passes_central_differences() {
        let mut r = rng(3);
        let fmap = Tensor::uniform(&[4, 5, 2], -1.0, 1.0, &mut r);
        // points away from lattice lines
        for _ in 0..20 {
            let p = Point::new(
                r.random_range(0..4) as f64 + r.random_range(0.1..0.9),
                r.random_range(0..3) as f64 + r.random_range(0.1..0.9),
            );
            let rvec = Tensor::uniform(&[2], -1.0, 1.0, &mut r);
            let loss = |ins: &[Tensor]| -> crate::Result<f64> {
                let v = bilinear_sample(&ins[0], p)?;
                Ok(v.data().iter().zip(rvec.data()).map(|(a, b)| a * b).sum())
            };
            let mut analytic = Tensor::zeros(&[4, 5, 2]);
            for (y, x, wgt) in bilinear_backward(p, 4, 5) {
                for k in 0..2 {
                    let idx = (y * 5 + x) * 2 + k;
                    analytic.data_mut()[idx] += wgt * rvec.data()[k];
                }
            }
            let report = grad_check(loss, &[analytic], &[fmap.clone()], 1e-5, 1e-6).unwrap();
            assert!(report.passed, "rel err {}", report.max_rel_error);
        }
    }

    #[test]
    fn pool_constant_map_gives_constant_output() {
        let fmap = Tensor::filled(&[8, 8, 3], 1.5);
        let q = rect(1.0, 1.0, 6.0, 5.0);
        let pooled = text_align_pool(&fmap, &q, 4, 2).unwrap();
        assert!(pooled.tensor.data().iter().all(|&v| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn pool_translation_equivariance() {
        let mut r = rng(4);
        let base = Tensor::uniform(&[6, 6, 2], -1.0, 1.0, &mut r);
        // embed base at (0,0) and at (2,1) in a larger map
        let mut fmap_a = Tensor::zeros(&[12, 12, 2]);
        let mut fmap_b = Tensor::zeros(&[12, 12, 2]);
        for y in 0..6 {
            for x in 0..6 {
                for k in 0..2 {
                    let v = base.get3(y, x, k);
                    fmap_a.set3(y, x, k, v);
                    fmap_b.set3(y + 1, x + 2, k, v);
                }
            }
        }
        let q = rect(0.5, 0.5, 5.0, 4.5);
        let pa = text_align_pool(&fmap_a, &q, 5, 3).unwrap();
        let pb = text_align_pool(&fmap_b, &q.translated(2.0, 1.0), 5, 3).unwrap();
        assert!(pa.tensor.max_abs_diff(&pb.tensor) < 1e-12);
    }

    #[test]
    fn rotated_pool_on_x_field_returns_grid_xs() {
        let fmap = Tensor::from_fn(&[16, 16, 1], |i| (i % 16) as f64);
        let rb = RBox::new(Point::new(7.5, 7.5), 1.5, 1.5, 4.0, 4.0, 0.5).unwrap();
        let q = decode_rbox(&rb);
        let pooled = text_align_pool(&fmap, &q, 6, 2).unwrap();
        for i in 0..2 {
            for j in 0..6 {
                let expect = pooled.grid.point(i, j).x;
                let got = pooled.tensor.get3(i, j, 0);
                assert!((got - expect).abs() < 1e-12, "({i},{j}) {got} vs {expect}");
            }
        }
    }

    #[test]
    fn pool_backward_passes_central_differences() {
        let mut r = rng(5);
        let fmap = Tensor::uniform(&[6, 7, 2], -1.0, 1.0, &mut r);
        let rb = RBox::new(Point::new(3.2, 2.7), 1.3, 1.1, 2.2, 2.4, 0.35).unwrap();
        let q = decode_rbox(&rb);
        let rvec = Tensor::uniform(&[2, 3, 2], -1.0, 1.0, &mut r);
        let loss = |ins: &[Tensor]| -> crate::Result<f64> {
            let p = text_align_pool(&ins[0], &q, 3, 2)?;
            Ok(p.tensor
                .data()
                .iter()
                .zip(rvec.data())
                .map(|(a, b)| a * b)
                .sum())
        };
        let grid = build_grid(&q, 3, 2).unwrap();
        let analytic = text_align_pool_backward(&grid, &rvec, 6, 7);
        let report = grad_check(loss, &[analytic], &[fmap], 1e-5, 1e-6).unwrap();
        assert!(report.passed, "rel err {}", report.max_rel_error);
    }

    #[test]
    fn roi_align_equals_text_align_on_axis_aligned_quads() {
        let mut r = rng(6);
        let fmap = Tensor::uniform(&[10, 12, 3], -1.0, 1.0, &mut r);
        let q = rect(2.0, 1.0, 9.0, 6.0);
        let a = text_align_pool(&fmap, &q, 8, 4).unwrap();
        let b = roi_align_baseline(&fmap, &q, 8, 4).unwrap();
        assert!(a.tensor.max_abs_diff(&b.tensor) < 1e-15);
    }

    #[test]
    fn roi_align_differs_from_text_align_on_rotated_quads() {
        let mut r = rng(7);
        let fmap = Tensor::uniform(&[12, 12, 1], -1.0, 1.0, &mut r);
        let rb = RBox::new(Point::new(6.0, 6.0), 1.5, 1.5, 3.5, 3.5, 0.7).unwrap();
        let q = decode_rbox(&rb);
        let a = text_align_pool(&fmap, &q, 6, 2).unwrap();
        let b = roi_align_baseline(&fmap, &q, 6, 2).unwrap();
        assert!(a.tensor.max_abs_diff(&b.tensor) > 1e-6);
    }

    #[test]
    fn roi_align_constant_map_constant_output() {
        let fmap = Tensor::filled(&[12, 12, 2], 0.7);
        let rb = RBox::new(Point::new(6.0, 6.0), 2.0, 2.0, 3.0, 3.0, -0.4).unwrap();
        let q = decode_rbox(&rb);
        let out = roi_align_baseline(&fmap, &q, 5, 2).unwrap();
        assert!(out.tensor.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn roi_pool_exact_bins_on_lattice_rect() {
        // quad spans [0,4)x[0,2) exactly; w=4,h=2 -> one lattice cell per bin
        let fmap = Tensor::from_fn(&[4, 6, 1], |i| i as f64);
        let q = rect(0.0, 0.0, 4.0, 2.0);
        let (pooled, _) = roi_pool_baseline(&fmap, &q, 4, 2).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                assert_eq!(pooled.tensor.get3(i, j, 0), fmap.get3(i, j, 0));
            }
        }
    }

    #[test]
    fn roi_pool_rotated_quad_sees_outside_values() {
        // the bounding rect contains cells the rotated quad misses; the max
        // picks one of them when it dominates
        let mut fmap = Tensor::zeros(&[8, 8, 1]);
        fmap.set3(0, 0, 0, 100.0);
        let rb = RBox::new(Point::new(3.5, 3.5), 2.5, 2.5, 2.5, 2.5, 0.8).unwrap();
        let q = decode_rbox(&rb);
        assert!(!q.contains(Point::new(0.0, 0.0)));
        let (pooled, _) = roi_pool_baseline(&fmap, &q, 2, 2).unwrap();
        let has_outside_value = pooled.tensor.data().iter().any(|&v| v == 100.0);
        assert!(has_outside_value);
    }

    // Direct nested-loop pooling oracle over the same quantized bins.
    #[test]
    fn roi_pool_matches_bruteforce_oracle() {
        let mut r = rng(8);
        let fmap = Tensor::uniform(&[9, 11, 2], -1.0, 1.0, &mut r);
        let rb = RBox::new(Point::new(5.0, 4.0), 2.2, 1.7, 3.4, 2.9, 0.3).unwrap();
        let q = decode_rbox(&rb);
        let (pooled, _) = roi_pool_baseline(&fmap, &q, 4, 2).unwrap();
        let (min, max) = q.bounds();
        let (x0, y0) = (min.x.floor() as isize, min.y.floor() as isize);
        let (x1, y1) = (max.x.ceil() as isize, max.y.ceil() as isize);
        let (rw, rh) = ((x1 - x0) as usize, (y1 - y0) as usize);
        for i in 0..2usize {
            for j in 0..4usize {
                for k in 0..2usize {
                    let mut best = f64::NEG_INFINITY;
                    for yy in (y0 + (i * rh / 2) as isize)..(y0 + ((i + 1) * rh).div_ceil(2) as isize) {
                        for xx in
                            (x0 + (j * rw / 4) as isize)..(x0 + ((j + 1) * rw).div_ceil(4) as isize)
                        {
                            if yy >= 0 && yy < 9 && xx >= 0 && xx < 11 {
                                best = best.max(fmap.get3(yy as usize, xx as usize, k));
                            }
                        }
                    }
                    assert_eq!(pooled.tensor.get3(i, j, k), best);
                }
            }
        }
    }

    #[test]
    fn output_shape_fixed_regardless_of_quad() {
        let fmap = Tensor::zeros(&[16, 16, 4]);
        let mut r = rng(9);
        for _ in 0..10 {
            let rb = RBox::new(
                Point::new(r.random_range(4.0..12.0), r.random_range(4.0..12.0)),
                r.random_range(0.5..3.0),
                r.random_range(0.5..3.0),
                r.random_range(0.5..3.0),
                r.random_range(0.5..3.0),
                r.random_range(-1.0..1.0),
            )
            .unwrap();
            let q = decode_rbox(&rb);
            assert_eq!(text_align_pool(&fmap, &q, 7, 3).unwrap().tensor.shape(), &[3, 7, 4]);
            assert_eq!(roi_align_baseline(&fmap, &q, 7, 3).unwrap().tensor.shape(), &[3, 7, 4]);
            assert_eq!(roi_pool_baseline(&fmap, &q, 7, 3).unwrap().0.tensor.shape(), &[3, 7, 4]);
        }
    }
}
