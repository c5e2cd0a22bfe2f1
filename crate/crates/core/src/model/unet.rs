//! Frame-by-frame U-Net baseline: one weight-shared U-Net repeated over
//! cascades, each followed by a residual add and data consistency.

use std::sync::Arc;

use rand::Rng;

use super::UNetConfig;
use crate::nn::{init_conv, BoundParams, DcTarget, Graph, ParamSet, Tensor, Var};

fn add_conv<R: Rng>(ps: &mut ParamSet, rng: &mut R, name: &str, cout: usize, cin: usize, k: usize) {
    let (w, b) = init_conv(rng, cout, cin, k);
    ps.add(format!("{name}.w"), w);
    ps.add(format!("{name}.b"), b);
}

pub(super) fn init_params<R: Rng>(cfg: &UNetConfig, ps: &mut ParamSet, rng: &mut R) {
    let (b, k) = (cfg.channels, cfg.kernel_size);
    let width = |level: usize| b << level;
    let mut cin = 2;
    for l in 0..=cfg.levels {
        add_conv(ps, rng, &format!("unet.down{l}.conv0"), width(l), cin, k);
        add_conv(
            ps,
            rng,
            &format!("unet.down{l}.conv1"),
            width(l),
            width(l),
            k,
        );
        cin = width(l);
    }
    for l in (0..cfg.levels).rev() {
        add_conv(
            ps,
            rng,
            &format!("unet.up{l}.conv0"),
            width(l),
            width(l + 1) + width(l),
            k,
        );
        add_conv(ps, rng, &format!("unet.up{l}.conv1"), width(l), width(l), k);
    }
    add_conv(ps, rng, "unet.out", 2, b, 1);
    ps.add("unet.log_lambda", Tensor::scalar(cfg.dc_log_lambda_init));
}

fn var(ps: &ParamSet, bound: &BoundParams, name: &str) -> Var {
    bound.var(
        ps.index_of(name)
            .unwrap_or_else(|| panic!("missing parameter {name}")),
    )
}

fn conv_relu(g: &mut Graph, ps: &ParamSet, bound: &BoundParams, x: Var, name: &str) -> Var {
    let y = g.conv2d(
        x,
        var(ps, bound, &format!("{name}.w")),
        Some(var(ps, bound, &format!("{name}.b"))),
        1,
    );
    g.relu(y)
}

fn unet(cfg: &UNetConfig, ps: &ParamSet, bound: &BoundParams, g: &mut Graph, x: Var) -> Var {
    let mut skips = Vec::with_capacity(cfg.levels);
    let mut h = x;
    for l in 0..=cfg.levels {
        if l > 0 {
            h = g.avg_pool2(h);
        }
        h = conv_relu(g, ps, bound, h, &format!("unet.down{l}.conv0"));
        h = conv_relu(g, ps, bound, h, &format!("unet.down{l}.conv1"));
        if l < cfg.levels {
            skips.push(h);
        }
    }
    for l in (0..cfg.levels).rev() {
        let up = g.upsample2(h);
        h = g.concat(&[up, skips[l]]);
        h = conv_relu(g, ps, bound, h, &format!("unet.up{l}.conv0"));
        h = conv_relu(g, ps, bound, h, &format!("unet.up{l}.conv1"));
    }
    g.conv2d(
        h,
        var(ps, bound, "unet.out.w"),
        Some(var(ps, bound, "unet.out.b")),
        1,
    )
}

/// Frames ride on the batch axis, so no information crosses frames.
pub(super) fn forward(
    cfg: &UNetConfig,
    ps: &ParamSet,
    bound: &BoundParams,
    g: &mut Graph,
    input: Var,
    target: &Arc<DcTarget>,
) -> Var {
    let ll = var(ps, bound, "unet.log_lambda");
    let mut x = input;
    for _ in 0..cfg.cascades {
        let r = unet(cfg, ps, bound, g, x);
        let xr = g.add(x, r);
        x = g.data_consistency(xr, ll, Arc::clone(target));
    }
    x
}
