//! Reconstruction networks: the CRNN backbone with optional refinement,
//! the U-Net baseline, the standalone data-consistency operator and
//! checkpoint files.

mod checkpoint;
pub mod crnn;
mod refine;
mod unet;

use std::sync::Arc;

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_SCHEMA};
pub use crnn::{bcrnn_unit, crnn_i_unit, BcrnnVars, CrnnIVars};

use crate::error::{ReconError, Result};
use crate::kspace::{CineSlice, KSpaceData};
use crate::losses::{LossConfig, LossRouting, LossValue};
use crate::nn::{dc_forward, BoundParams, DcTarget, Graph, ParamSet, Tensor, Var};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    #[default]
    None,
    Sequential,
    EndToEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    pub channels: usize,
    pub blocks: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            channels: 32,
            blocks: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconModelConfig {
    pub cascades: usize,
    pub channels: usize,
    pub weight_sharing: bool,
    pub extra_bcrnn: bool,
    pub refinement: Refinement,
    pub dc_log_lambda_init: f64,
    pub kernel_size: usize,
    pub refine: RefinementConfig,
}

impl Default for ReconModelConfig {
    fn default() -> Self {
        ReconModelConfig {
            cascades: 6,
            channels: 48,
            weight_sharing: false,
            extra_bcrnn: true,
            refinement: Refinement::None,
            dc_log_lambda_init: 0.1f64.ln(),
            kernel_size: 3,
            refine: RefinementConfig::default(),
        }
    }
}

fn check_kernel(k: usize) -> Result<()> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(ReconError::Config(format!(
            "kernel_size must be odd, got {k}"
        )));
    }
    Ok(())
}

impl ReconModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cascades == 0 || self.channels == 0 {
            return Err(ReconError::Config(
                "cascades and channels must be at least 1".into(),
            ));
        }
        check_kernel(self.kernel_size)?;
        if !self.dc_log_lambda_init.is_finite() {
            return Err(ReconError::Config(
                "dc_log_lambda_init must be finite".into(),
            ));
        }
        if self.refinement != Refinement::None
            && (self.refine.channels == 0 || self.refine.blocks == 0)
        {
            return Err(ReconError::Config(
                "refinement needs channels and blocks of at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub cascades: usize,
    pub channels: usize,
    pub levels: usize,
    pub kernel_size: usize,
    pub dc_log_lambda_init: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            cascades: 3,
            channels: 48,
            levels: 2,
            kernel_size: 3,
            dc_log_lambda_init: 0.1f64.ln(),
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cascades == 0 || self.channels == 0 {
            return Err(ReconError::Config(
                "U-Net cascades and channels must be at least 1".into(),
            ));
        }
        check_kernel(self.kernel_size)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Crnn(ReconModelConfig),
    Unet(UNetConfig),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Crnn(c) => c.validate(),
            ModelConfig::Unet(c) => c.validate(),
        }
    }

    /// Spatial dims must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        match self {
            ModelConfig::Crnn(c) if c.refinement != Refinement::None => refine::FACTOR,
            ModelConfig::Crnn(_) => 1,
            ModelConfig::Unet(c) => 1 << c.levels,
        }
    }
}

/// Standalone soft data consistency: sampled bins of `F x` become
/// `(F x + lambda y) / (1 + lambda)`, `lambda = exp(log_lambda)`.
pub fn data_consistency(x_pred: &CineSlice, y: &KSpaceData, log_lambda: f64) -> Result<CineSlice> {
    if x_pred.dims() != y.dims() {
        let (a, b, c) = y.dims();
        let (p, q, r) = x_pred.dims();
        return Err(ReconError::shape(&[a, b, c], &[p, q, r]));
    }
    if log_lambda.is_nan() {
        return Err(ReconError::validation("log_lambda is NaN"));
    }
    let target = dc_target(y);
    let out = dc_forward(&Tensor::from_complex(x_pred.data()), log_lambda, &target);
    CineSlice::new(out.to_complex())
}

/// Measured data in the form the DC node consumes.
pub fn dc_target(y: &KSpaceData) -> DcTarget {
    let (t, h, w) = y.dims();
    DcTarget::new(
        t,
        h,
        w,
        y.data().iter().copied().collect(),
        y.column_weights(),
    )
}

/// A network together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconModel {
    config: ModelConfig,
    params: ParamSet,
}

impl ReconModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        match &config {
            ModelConfig::Crnn(c) => {
                crnn::init_params(c, &mut params, &mut rng);
                if c.refinement != Refinement::None {
                    refine::init_params(&c.refine, c.kernel_size, &mut params, &mut rng);
                }
            }
            ModelConfig::Unet(c) => unet::init_params(c, &mut params, &mut rng),
        }
        Ok(ReconModel { config, params })
    }

    pub fn crnn(config: ReconModelConfig, seed: u64) -> Result<Self> {
        ReconModel::new(ModelConfig::Crnn(config), seed)
    }

    pub fn unet(config: UNetConfig, seed: u64) -> Result<Self> {
        ReconModel::new(ModelConfig::Unet(config), seed)
    }

    /// Rebuild from stored parameters; names and shapes must match `config`.
    pub fn from_parts(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let fresh = ReconModel::new(config.clone(), 0)?;
        if fresh.params.len() != params.len() {
            return Err(ReconError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for (a, b) in fresh.params.iter().zip(params.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(ReconError::Checkpoint(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(ReconModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Copy every parameter whose name starts with `prefix` from `other`.
    pub fn copy_params_from(&mut self, other: &ReconModel, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for id in self.params.ids().collect::<Vec<_>>() {
            let name = self.params.name(id).to_string();
            if !name.starts_with(prefix) {
                continue;
            }
            let src = other
                .params
                .index_of(&name)
                .ok_or_else(|| ReconError::Checkpoint(format!("source model lacks {name}")))?;
            let value = other.params.get(src);
            if value.shape() != self.params.get(id).shape() {
                return Err(ReconError::Checkpoint(format!("shape mismatch for {name}")));
            }
            *self.params.get_mut(id) = value.clone();
            copied += 1;
        }
        Ok(copied)
    }

    fn check_inputs(&self, zero_filled: &CineSlice, target: &DcTarget) -> Result<()> {
        let (t, h, w) = target.dims();
        if zero_filled.dims() != (t, h, w) {
            let (p, q, r) = zero_filled.dims();
            return Err(ReconError::shape(&[t, h, w], &[p, q, r]));
        }
        let m = self.config.spatial_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(ReconError::validation(format!(
                "image {h}x{w} not divisible by {m}; pad to a compatible canvas first"
            )));
        }
        Ok(())
    }

    /// Append the network to `g`; `input` is `(T, 2, H, W)`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        input: Var,
        target: &Arc<DcTarget>,
    ) -> Var {
        self.forward_stages(g, bound, input, target).0
    }

    /// Final output and, when a refinement module follows, the CRNN output
    /// it refines.
    pub fn forward_stages(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        input: Var,
        target: &Arc<DcTarget>,
    ) -> (Var, Option<Var>) {
        match &self.config {
            ModelConfig::Crnn(c) => {
                let x = crnn::forward(c, &self.params, bound, g, input, target);
                if c.refinement == Refinement::None {
                    (x, None)
                } else {
                    (
                        refine::forward(&c.refine, &self.params, bound, g, x),
                        Some(x),
                    )
                }
            }
            ModelConfig::Unet(c) => (
                unet::forward(c, &self.params, bound, g, input, target),
                None,
            ),
        }
    }

    /// Reconstruct from the zero-filled image and the measured k-space.
    pub fn reconstruct(&self, zero_filled: &CineSlice, y: &KSpaceData) -> Result<CineSlice> {
        self.reconstruct_with(zero_filled, &Arc::new(dc_target(y)))
    }

    pub fn reconstruct_with(
        &self,
        zero_filled: &CineSlice,
        target: &Arc<DcTarget>,
    ) -> Result<CineSlice> {
        Ok(self.reconstruct_stages(zero_filled, target)?.0)
    }

    /// [`ReconModel::reconstruct_with`] plus the pre-refinement CRNN output.
    pub fn reconstruct_stages(
        &self,
        zero_filled: &CineSlice,
        target: &Arc<DcTarget>,
    ) -> Result<(CineSlice, Option<CineSlice>)> {
        self.check_inputs(zero_filled, target)?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, |_| false);
        let input = g.constant(Tensor::from_complex(zero_filled.data()));
        let (out, inner) = self.forward_stages(&mut g, &bound, input, target);
        let inner = inner
            .map(|v| CineSlice::new(g.value(v).to_complex()))
            .transpose()?;
        Ok((CineSlice::new(g.value(out).to_complex())?, inner))
    }

    /// Loss against `reference` and gradients for every parameter whose
    /// name passes `trainable` (`None` for frozen ones).
    pub fn loss_and_grads(
        &self,
        zero_filled: &CineSlice,
        y: &KSpaceData,
        reference: &Array3<C64>,
        loss: &LossConfig,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<(LossValue, Vec<Option<Tensor>>)> {
        self.loss_and_grads_with(
            zero_filled,
            &Arc::new(dc_target(y)),
            reference,
            loss,
            trainable,
        )
    }

    pub fn loss_and_grads_with(
        &self,
        zero_filled: &CineSlice,
        target: &Arc<DcTarget>,
        reference: &Array3<C64>,
        loss: &LossConfig,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<(LossValue, Vec<Option<Tensor>>)> {
        self.routed_loss_and_grads(
            zero_filled,
            target,
            reference,
            &LossRouting::single(loss.clone()),
            trainable,
        )
    }

    /// Like [`ReconModel::loss_and_grads_with`] with a loss per output; the
    /// returned value sums both losses and carries the final-output gradient.
    pub fn routed_loss_and_grads(
        &self,
        zero_filled: &CineSlice,
        target: &Arc<DcTarget>,
        reference: &Array3<C64>,
        routing: &LossRouting,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<(LossValue, Vec<Option<Tensor>>)> {
        self.check_inputs(zero_filled, target)?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, &trainable);
        let input = g.constant(Tensor::from_complex(zero_filled.data()));
        let (out, inner) = self.forward_stages(&mut g, &bound, input, target);
        let pred = g.value(out).to_complex();
        let inner_pred = inner.map(|v| g.value(v).to_complex());
        let (mut value, inner_value) = routing.evaluate(&pred, inner_pred.as_ref(), reference)?;
        let mut seeds = vec![(out, Tensor::from_complex(&value.grad))];
        if let (Some(v), Some(iv)) = (inner, inner_value) {
            seeds.push((v, Tensor::from_complex(&iv.grad)));
            value.total += iv.total;
            value.breakdown.extend(iv.breakdown);
        }
        let mut grads = g.backward(seeds);
        let per_param = self
            .params
            .ids()
            .map(|id| {
                if trainable(self.params.name(id)) {
                    Some(
                        grads
                            .take(bound.var(id))
                            .unwrap_or_else(|| Tensor::zeros(self.params.get(id).shape())),
                    )
                } else {
                    None
                }
            })
            .collect();
        Ok((value, per_param))
    }
}
