//! Turning stored slices into network inputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array3;

use crate::error::{ReconError, Result};
use crate::io::{load_entry, LoadedSlice, Manifest};
use crate::kspace::{
    adjoint_operator, center_crop, fft2c_frames, resample_column_weights, zero_pad, CineSlice,
    KSpaceData,
};
use crate::nn::DcTarget;
use crate::phantom::Split;

/// One (slice, acceleration) pair ready for the network.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub acceleration: usize,
    /// Network input, on the canvas when one is configured.
    pub zero_filled: CineSlice,
    pub target: Arc<DcTarget>,
    /// Fully sampled image on the same grid as `zero_filled`.
    pub reference: Array3<crate::C64>,
    /// Acquired image size, used to crop outputs.
    pub original: (usize, usize),
}

/// Zero-filled input and DC target for `k`, optionally moved onto `canvas`.
pub fn prepare_input(
    k: &KSpaceData,
    canvas: Option<(usize, usize)>,
) -> Result<(CineSlice, Arc<DcTarget>)> {
    let zf = adjoint_operator(k);
    let (t, h, w) = k.dims();
    match canvas {
        Some(c) if c != (h, w) => {
            let padded = zero_pad(&zf, c)?;
            let y = fft2c_frames(padded.data())?;
            let weights = resample_column_weights(&k.column_weights(), c.1);
            let target = DcTarget::new(t, c.0, c.1, y.iter().copied().collect(), weights);
            Ok((padded, Arc::new(target)))
        }
        _ => Ok((zf, Arc::new(crate::model::dc_target(k)))),
    }
}

pub fn prepare(
    id: &str,
    image: &CineSlice,
    acceleration: usize,
    k: &KSpaceData,
    canvas: Option<(usize, usize)>,
) -> Result<Prepared> {
    if image.dims() != k.dims() {
        let (a, b, c) = image.dims();
        let (p, q, r) = k.dims();
        return Err(ReconError::shape(&[a, b, c], &[p, q, r]));
    }
    let (zero_filled, target) = prepare_input(k, canvas)?;
    let reference = match canvas {
        Some(c) => zero_pad(image, c)?.into_data(),
        None => image.data().clone(),
    };
    Ok(Prepared {
        id: id.to_string(),
        acceleration,
        zero_filled,
        target,
        reference,
        original: image.original_size(),
    })
}

/// Undo canvas padding on a network output.
pub fn crop_output(out: CineSlice, original: (usize, usize)) -> Result<CineSlice> {
    let (_, h, w) = out.dims();
    if (h, w) == original {
        Ok(out)
    } else {
        center_crop(&out, original)
    }
}

/// Reference image on the acquired grid.
pub fn reference_slice(p: &Prepared) -> Result<CineSlice> {
    crop_output(CineSlice::new(p.reference.clone())?, p.original)
}

/// All slices of one split from a dataset directory.
pub fn load_split(dir: &Path, manifest: &Manifest, split: Split) -> Result<Vec<LoadedSlice>> {
    manifest
        .entries_in(split)
        .map(|e| load_entry(dir, e))
        .collect()
}

/// `prepared[slice][acceleration]` for every configured acceleration.
pub fn prepare_all(
    slices: &[LoadedSlice],
    accelerations: &[usize],
    canvas: Option<(usize, usize)>,
) -> Result<Vec<BTreeMap<usize, Prepared>>> {
    slices
        .iter()
        .map(|s| {
            accelerations
                .iter()
                .map(|&ar| {
                    let k = s.kspace.get(&ar).ok_or_else(|| {
                        ReconError::MissingData(format!(
                            "{} has no {ar}x k-space; regenerate the dataset",
                            s.id
                        ))
                    })?;
                    Ok((ar, prepare(&s.id, &s.image, ar, k, canvas)?))
                })
                .collect()
        })
        .collect()
}
