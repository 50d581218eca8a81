//! Bilinear warps expressed as sparse linear maps over flat image
//! tensors, so patch transforms stay differentiable end to end.

use crate::geometry::Box2;
use crate::tape::SparseMap;
use crate::tensor::Tensor;

use super::TransformParams;

/// Builds the sparse map for "rotate/scale about `center`, then translate"
/// applied to a full H×W×C image. Inverse mapping with bilinear weights;
/// source samples outside the image contribute nothing.
pub fn affine_warp_map(h: usize, w: usize, c: usize, center: (f32, f32), t: &TransformParams) -> SparseMap {
    let (cx, cy) = center;
    let cos = t.rotation.cos();
    let sin = t.rotation.sin();
    let inv_scale = 1.0 / t.scale;
    let mut triplets = Vec::new();

    for oy in 0..h {
        for ox in 0..w {
            // undo translation, then rotate/scale back about the center
            let px = ox as f32 + 0.5 - t.dx - cx;
            let py = oy as f32 + 0.5 - t.dy - cy;
            let sx = (cos * px + sin * py) * inv_scale + cx - 0.5;
            let sy = (-sin * px + cos * py) * inv_scale + cy - 0.5;

            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let corners = [
                (x0 as isize, y0 as isize, (1.0 - fx) * (1.0 - fy)),
                (x0 as isize + 1, y0 as isize, fx * (1.0 - fy)),
                (x0 as isize, y0 as isize + 1, (1.0 - fx) * fy),
                (x0 as isize + 1, y0 as isize + 1, fx * fy),
            ];
            for (gx, gy, weight) in corners {
                if weight <= 0.0 || gx < 0 || gy < 0 || gx >= w as isize || gy >= h as isize {
                    continue;
                }
                for ch in 0..c {
                    let out_idx = ((oy * w + ox) * c + ch) as u32;
                    let in_idx = ((gy as usize * w + gx as usize) * c + ch) as u32;
                    triplets.push((out_idx, in_idx, weight));
                }
            }
        }
    }
    SparseMap {
        out_shape: vec![h, w, c],
        triplets,
    }
}

/// Remaps a box-confined perturbation onto a new box: bilinear resample
/// of the source region to the destination size plus translation.
/// Everything outside `to` is exactly zero.
pub fn remap_patch(delta: &Tensor, from: &Box2, to: &Box2) -> Tensor {
    let shape = delta.shape();
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let mut out = vec![0.0f32; delta.numel()];

    let (fx0, fy0, fx1, fy1) = from.corners();
    let (tx0, ty0, tx1, ty1) = to.corners();
    let sx = (fx1 - fx0) / (tx1 - tx0).max(1e-6);
    let sy = (fy1 - fy0) / (ty1 - ty0).max(1e-6);

    let x_lo = tx0.floor().max(0.0) as usize;
    let x_hi = (tx1.ceil() as usize).min(w);
    let y_lo = ty0.floor().max(0.0) as usize;
    let y_hi = (ty1.ceil() as usize).min(h);

    for oy in y_lo..y_hi {
        let oyc = oy as f32 + 0.5;
        if oyc < ty0 || oyc > ty1 {
            continue;
        }
        let src_y = fy0 + (oyc - ty0) * sy - 0.5;
        for ox in x_lo..x_hi {
            let oxc = ox as f32 + 0.5;
            if oxc < tx0 || oxc > tx1 {
                continue;
            }
            let src_x = fx0 + (oxc - tx0) * sx - 0.5;
            let x0 = src_x.floor();
            let y0 = src_y.floor();
            let fx = src_x - x0;
            let fy = src_y - y0;
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (gx, gy, wgt) in [
                    (x0 as isize, y0 as isize, (1.0 - fx) * (1.0 - fy)),
                    (x0 as isize + 1, y0 as isize, fx * (1.0 - fy)),
                    (x0 as isize, y0 as isize + 1, (1.0 - fx) * fy),
                    (x0 as isize + 1, y0 as isize + 1, fx * fy),
                ] {
                    if wgt <= 0.0 || gx < 0 || gy < 0 || gx >= w as isize || gy >= h as isize {
                        continue;
                    }
                    acc += wgt * delta.data()[(gy as usize * w + gx as usize) * c + ch];
                }
                out[(oy * w + ox) * c + ch] = acc;
            }
        }
    }
    Tensor::from_vec(shape, out).expect("same shape")
}
