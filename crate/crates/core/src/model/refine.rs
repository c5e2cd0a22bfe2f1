//! Lightweight refinement: strided-conv downsample by 2, residual conv
//! blocks at half resolution, a conv to `2 * 4` channels and a sub-pixel
//! shuffle back to full size, plus a global residual. The tail starts at
//! zero so a fresh module is the identity.

use rand::Rng;

use super::RefinementConfig;
use crate::nn::{init_conv, BoundParams, Graph, ParamSet, Tensor, Var};

pub const FACTOR: usize = 2;

pub(super) fn init_params<R: Rng>(
    cfg: &RefinementConfig,
    k: usize,
    ps: &mut ParamSet,
    rng: &mut R,
) {
    let c = cfg.channels;
    let (w, b) = init_conv(rng, c, 2, k);
    ps.add("refine.head.w", w);
    ps.add("refine.head.b", b);
    for i in 0..cfg.blocks {
        for j in 0..2 {
            let (w, b) = init_conv(rng, c, c, k);
            ps.add(format!("refine.block{i}.conv{j}.w"), w);
            ps.add(format!("refine.block{i}.conv{j}.b"), b);
        }
    }
    let out = 2 * FACTOR * FACTOR;
    ps.add("refine.tail.w", Tensor::zeros([out, c, k, k]));
    ps.add("refine.tail.b", Tensor::zeros([out, 1, 1, 1]));
}

fn var(ps: &ParamSet, bound: &BoundParams, name: &str) -> Var {
    bound.var(
        ps.index_of(name)
            .unwrap_or_else(|| panic!("missing parameter {name}")),
    )
}

/// `(T, 2, H, W) -> (T, 2, H, W)`; `H` and `W` must be even.
pub(super) fn forward(
    cfg: &RefinementConfig,
    ps: &ParamSet,
    bound: &BoundParams,
    g: &mut Graph,
    x: Var,
) -> Var {
    let head = g.conv2d(
        x,
        var(ps, bound, "refine.head.w"),
        Some(var(ps, bound, "refine.head.b")),
        FACTOR,
    );
    let mut h = g.relu(head);
    for i in 0..cfg.blocks {
        let a = g.conv2d(
            h,
            var(ps, bound, &format!("refine.block{i}.conv0.w")),
            Some(var(ps, bound, &format!("refine.block{i}.conv0.b"))),
            1,
        );
        let a = g.relu(a);
        let r = g.conv2d(
            a,
            var(ps, bound, &format!("refine.block{i}.conv1.w")),
            Some(var(ps, bound, &format!("refine.block{i}.conv1.b"))),
            1,
        );
        h = g.add(h, r);
    }
    let t = g.conv2d(
        h,
        var(ps, bound, "refine.tail.w"),
        Some(var(ps, bound, "refine.tail.b")),
        1,
    );
    let up = g.pixel_shuffle(t, FACTOR);
    g.add(x, up)
}
