//! CRNN backbone: per cascade a bidirectional recurrent unit (optionally
//! two), three iteration-recurrent units, a plain conv back to the complex
//! pair, a residual connection and data consistency.

use std::sync::Arc;

use rand::Rng;

use super::ReconModelConfig;
use crate::nn::{init_conv, BoundParams, DcTarget, Graph, ParamSet, Tensor, Var};

/// Number of iteration-recurrent (CRNN-i) units per cascade.
pub const CRNN_I_UNITS: usize = 3;

/// Graph handles of one bidirectional unit. The forward and backward time
/// sweeps share these weights.
#[derive(Debug, Clone, Copy)]
pub struct BcrnnVars {
    pub w_layer: Var,
    pub bias: Var,
    pub w_time: Var,
    pub w_iter: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct CrnnIVars {
    pub w_layer: Var,
    pub bias: Var,
    pub w_iter: Var,
}

/// `h_t = relu(W_l x_t + b + W_t h_{t-1} + W_i h_t^iter)`, swept forward and
/// backward over time and summed. `x` is `(T, C_in, H, W)`; zero hidden
/// states at both sequence ends and when `prev_iter` is `None`.
pub fn bcrnn_unit(g: &mut Graph, x: Var, prev_iter: Option<Var>, p: &BcrnnVars) -> Var {
    let t = g.shape(x)[0];
    let mut pre = g.conv2d(x, p.w_layer, Some(p.bias), 1);
    if let Some(h) = prev_iter {
        let hi = g.conv2d(h, p.w_iter, None, 1);
        pre = g.add(pre, hi);
    }
    let frames: Vec<Var> = (0..t).map(|i| g.select(pre, i)).collect();
    let sweep = |g: &mut Graph, order: &mut dyn Iterator<Item = usize>| {
        let mut out: Vec<Option<Var>> = vec![None; t];
        let mut prev: Option<Var> = None;
        for i in order {
            let mut z = frames[i];
            if let Some(h) = prev {
                let ht = g.conv2d(h, p.w_time, None, 1);
                z = g.add(z, ht);
            }
            let h = g.relu(z);
            out[i] = Some(h);
            prev = Some(h);
        }
        out.into_iter()
            .map(|v| v.expect("every frame visited"))
            .collect::<Vec<_>>()
    };
    let fwd = sweep(g, &mut (0..t));
    let bwd = sweep(g, &mut (0..t).rev());
    let summed: Vec<Var> = fwd.into_iter().zip(bwd).map(|(a, b)| g.add(a, b)).collect();
    g.stack(&summed)
}

/// `h = relu(W_l x + b + W_i h^iter)` on every frame independently.
pub fn crnn_i_unit(g: &mut Graph, x: Var, prev_iter: Option<Var>, p: &CrnnIVars) -> Var {
    let mut z = g.conv2d(x, p.w_layer, Some(p.bias), 1);
    if let Some(h) = prev_iter {
        let hi = g.conv2d(h, p.w_iter, None, 1);
        z = g.add(z, hi);
    }
    g.relu(z)
}

fn block_prefix(cfg: &ReconModelConfig, cascade: usize) -> String {
    if cfg.weight_sharing {
        "crnn.shared".to_string()
    } else {
        format!("crnn.c{cascade}")
    }
}

fn add_conv<R: Rng>(
    ps: &mut ParamSet,
    rng: &mut R,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
    bias: bool,
) {
    let (w, b) = init_conv(rng, cout, cin, k);
    ps.add(format!("{name}.w"), w);
    if bias {
        ps.add(format!("{name}.b"), b);
    }
}

pub(super) fn init_params<R: Rng>(cfg: &ReconModelConfig, ps: &mut ParamSet, rng: &mut R) {
    let (c, k) = (cfg.channels, cfg.kernel_size);
    let blocks = if cfg.weight_sharing { 1 } else { cfg.cascades };
    for cascade in 0..blocks {
        let p = block_prefix(cfg, cascade);
        let n_bcrnn = if cfg.extra_bcrnn { 2 } else { 1 };
        for u in 0..n_bcrnn {
            let cin = if u == 0 { 2 } else { c };
            add_conv(ps, rng, &format!("{p}.bcrnn{u}.layer"), c, cin, k, true);
            add_conv(ps, rng, &format!("{p}.bcrnn{u}.time"), c, c, k, false);
            add_conv(ps, rng, &format!("{p}.bcrnn{u}.iter"), c, c, k, false);
        }
        for u in 0..CRNN_I_UNITS {
            add_conv(ps, rng, &format!("{p}.crnni{u}.layer"), c, c, k, true);
            add_conv(ps, rng, &format!("{p}.crnni{u}.iter"), c, c, k, false);
        }
        add_conv(ps, rng, &format!("{p}.out"), 2, c, k, true);
        ps.add(
            format!("{p}.log_lambda"),
            Tensor::scalar(cfg.dc_log_lambda_init),
        );
    }
}

fn var(ps: &ParamSet, bound: &BoundParams, name: &str) -> Var {
    let id = ps
        .index_of(name)
        .unwrap_or_else(|| panic!("missing parameter {name}"));
    bound.var(id)
}

/// Number of iteration-state slots threaded across cascades.
pub fn state_slots(cfg: &ReconModelConfig) -> usize {
    CRNN_I_UNITS + if cfg.extra_bcrnn { 2 } else { 1 }
}

/// Run all cascades on a `(T, 2, H, W)` input; returns the last DC output.
pub(super) fn forward(
    cfg: &ReconModelConfig,
    ps: &ParamSet,
    bound: &BoundParams,
    g: &mut Graph,
    input: Var,
    target: &Arc<DcTarget>,
) -> Var {
    let mut x = input;
    let mut states: Vec<Option<Var>> = vec![None; state_slots(cfg)];
    for cascade in 0..cfg.cascades {
        let p = block_prefix(cfg, cascade);
        let n_bcrnn = if cfg.extra_bcrnn { 2 } else { 1 };
        let mut h = x;
        for (u, state) in states.iter_mut().take(n_bcrnn).enumerate() {
            let vars = BcrnnVars {
                w_layer: var(ps, bound, &format!("{p}.bcrnn{u}.layer.w")),
                bias: var(ps, bound, &format!("{p}.bcrnn{u}.layer.b")),
                w_time: var(ps, bound, &format!("{p}.bcrnn{u}.time.w")),
                w_iter: var(ps, bound, &format!("{p}.bcrnn{u}.iter.w")),
            };
            h = bcrnn_unit(g, h, *state, &vars);
            *state = Some(h);
        }
        for u in 0..CRNN_I_UNITS {
            let vars = CrnnIVars {
                w_layer: var(ps, bound, &format!("{p}.crnni{u}.layer.w")),
                bias: var(ps, bound, &format!("{p}.crnni{u}.layer.b")),
                w_iter: var(ps, bound, &format!("{p}.crnni{u}.iter.w")),
            };
            let slot = n_bcrnn + u;
            h = crnn_i_unit(g, h, states[slot], &vars);
            states[slot] = Some(h);
        }
        let out_w = var(ps, bound, &format!("{p}.out.w"));
        let out_b = var(ps, bound, &format!("{p}.out.b"));
        let r = g.conv2d(h, out_w, Some(out_b), 1);
        let xr = g.add(x, r);
        let ll = var(ps, bound, &format!("{p}.log_lambda"));
        x = g.data_consistency(xr, ll, Arc::clone(target));
    }
    x
}
