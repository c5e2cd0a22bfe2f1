//! On-disk formats: complex volumes as `.npz` archives holding `real` and
//! `imag` `(T, H, W)` arrays with a JSON sidecar, sampling masks as JSON line
//! arrays with their parameter record, and the dataset manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array3, Zip};
use ndarray_npy::{NpzReader, NpzWriter};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{ReconError, Result};
use crate::kspace::{CineSlice, KSpaceData, MaskParams, Padding, Sampling, SamplingMask};
use crate::phantom::{PhantomSample, PhantomSpec, Split};
use crate::C64;

pub const VOLUME_SCHEMA: &str = "cinerecon.volume/v1";
pub const MASK_SCHEMA: &str = "cinerecon.mask/v1";
pub const MANIFEST_SCHEMA: &str = "cinerecon.manifest/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeKind {
    Image,
    Kspace,
}

/// Sidecar record stored next to every volume archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub schema: String,
    pub kind: VolumeKind,
    pub shape: [usize; 3],
    pub original_size: (usize, usize),
    pub padding: Padding,
    #[serde(default)]
    pub sampling: Option<Sampling>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub frame_rate_hint: Option<f64>,
}

/// Sidecar path for a volume archive: `x.npz -> x.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| ReconError::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| ReconError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| ReconError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ReconError::format(path, e.to_string()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| ReconError::io(dir, e))?;
    }
    Ok(())
}

fn write_complex_npz(path: &Path, data: &Array3<C64>) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| ReconError::io(path, e))?;
    let mut npz = NpzWriter::new(BufWriter::new(file));
    let re = data.mapv(|v| v.re);
    let im = data.mapv(|v| v.im);
    let fail = |e: ndarray_npy::WriteNpzError| ReconError::format(path, e.to_string());
    npz.add_array("real", &re).map_err(fail)?;
    npz.add_array("imag", &im).map_err(fail)?;
    npz.finish().map_err(fail)?;
    Ok(())
}

fn read_complex_npz(path: &Path) -> Result<Array3<C64>> {
    let file = File::open(path).map_err(|e| ReconError::io(path, e))?;
    let fail = |e: ndarray_npy::ReadNpzError| ReconError::format(path, e.to_string());
    let mut npz = NpzReader::new(file).map_err(fail)?;
    let re: Array3<f64> = npz.by_name("real").map_err(fail)?;
    let im: Array3<f64> = npz.by_name("imag").map_err(fail)?;
    if re.dim() != im.dim() {
        return Err(ReconError::format(path, "real and imag shapes differ"));
    }
    let mut out = Array3::zeros(re.dim());
    Zip::from(&mut out)
        .and(&re)
        .and(&im)
        .for_each(|o, &r, &i| *o = C64::new(r, i));
    Ok(out)
}

fn shape3(data: &Array3<C64>) -> [usize; 3] {
    let (t, h, w) = data.dim();
    [t, h, w]
}

pub fn write_image(path: &Path, slice: &CineSlice, seed: Option<u64>) -> Result<()> {
    write_complex_npz(path, slice.data())?;
    let meta = VolumeMeta {
        schema: VOLUME_SCHEMA.to_string(),
        kind: VolumeKind::Image,
        shape: shape3(slice.data()),
        original_size: slice.original_size(),
        padding: slice.padding(),
        sampling: None,
        seed,
        frame_rate_hint: slice.frame_rate_hint(),
    };
    write_json(&sidecar_path(path), &meta)
}

fn read_meta(path: &Path, kind: VolumeKind) -> Result<VolumeMeta> {
    let side = sidecar_path(path);
    let meta: VolumeMeta = read_json(&side)?;
    if meta.schema != VOLUME_SCHEMA {
        return Err(ReconError::format(
            &side,
            format!("unsupported schema '{}'", meta.schema),
        ));
    }
    if meta.kind != kind {
        return Err(ReconError::format(
            &side,
            format!("expected a {kind:?} volume, found {:?}", meta.kind),
        ));
    }
    Ok(meta)
}

fn check_shape(path: &Path, meta: &VolumeMeta, data: &Array3<C64>) -> Result<()> {
    if meta.shape != shape3(data) {
        return Err(ReconError::format(
            path,
            format!(
                "sidecar shape {:?} does not match archive {:?}",
                meta.shape,
                shape3(data)
            ),
        ));
    }
    Ok(())
}

pub fn read_image(path: &Path) -> Result<(CineSlice, VolumeMeta)> {
    let meta = read_meta(path, VolumeKind::Image)?;
    let data = read_complex_npz(path)?;
    check_shape(path, &meta, &data)?;
    let mut slice = CineSlice::new(data).map_err(|e| ReconError::format(path, e.to_string()))?;
    if let Some(hint) = meta.frame_rate_hint {
        slice = slice.with_frame_rate_hint(hint)?;
    }
    Ok((slice.with_padding(meta.padding), meta))
}

pub fn write_kspace(
    path: &Path,
    kspace: &KSpaceData,
    original_size: (usize, usize),
    seed: Option<u64>,
) -> Result<()> {
    write_complex_npz(path, kspace.data())?;
    let padding = if original_size == (kspace.dims().1, kspace.dims().2) {
        Padding::Original
    } else {
        Padding::Padded {
            original: original_size,
        }
    };
    let meta = VolumeMeta {
        schema: VOLUME_SCHEMA.to_string(),
        kind: VolumeKind::Kspace,
        shape: shape3(kspace.data()),
        original_size,
        padding,
        sampling: Some(kspace.sampling().clone()),
        seed,
        frame_rate_hint: None,
    };
    write_json(&sidecar_path(path), &meta)
}

pub fn read_kspace(path: &Path) -> Result<(KSpaceData, VolumeMeta)> {
    let meta = read_meta(path, VolumeKind::Kspace)?;
    let data = read_complex_npz(path)?;
    check_shape(path, &meta, &data)?;
    let sampling = meta.sampling.clone().ok_or_else(|| {
        ReconError::format(
            sidecar_path(path),
            "k-space sidecar lacks a sampling record",
        )
    })?;
    let k = KSpaceData::new(data, sampling).map_err(|e| ReconError::format(path, e.to_string()))?;
    Ok((k, meta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MaskFile {
    schema: String,
    params: MaskParams,
    lines: Vec<bool>,
}

pub fn write_mask(path: &Path, mask: &SamplingMask) -> Result<()> {
    ensure_parent(path)?;
    let file = MaskFile {
        schema: MASK_SCHEMA.to_string(),
        params: mask.params(),
        lines: mask.lines().to_vec(),
    };
    write_json(path, &file)
}

/// Read a mask; the stored lines must match the ones its parameters generate.
pub fn read_mask(path: &Path) -> Result<SamplingMask> {
    let file: MaskFile = read_json(path)?;
    if file.schema != MASK_SCHEMA {
        return Err(ReconError::format(
            path,
            format!("unsupported schema '{}'", file.schema),
        ));
    }
    SamplingMask::from_lines(Array1::from_vec(file.lines), file.params)
        .map_err(|e| ReconError::format(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub spec: PhantomSpec,
    /// Paths relative to the manifest directory.
    pub image: String,
    pub kspace: BTreeMap<usize, String>,
    pub masks: BTreeMap<usize, String>,
    pub mask_params: BTreeMap<usize, MaskParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub eval: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub seed: u64,
    pub template: PhantomSpec,
    pub accelerations: Vec<usize>,
    pub counts: SplitCounts,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(ReconError::MissingData(format!(
                "no dataset manifest at {}; run gen-data first",
                path.display()
            )));
        }
        let m: Manifest = read_json(&path)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(ReconError::format(
                &path,
                format!("unsupported schema '{}'", m.schema),
            ));
        }
        Ok(m)
    }
}

/// One slice loaded from a dataset directory.
#[derive(Debug, Clone)]
pub struct LoadedSlice {
    pub id: String,
    pub image: CineSlice,
    pub kspace: BTreeMap<usize, KSpaceData>,
}

pub fn load_entry(dir: &Path, entry: &ManifestEntry) -> Result<LoadedSlice> {
    let need = |rel: &str| {
        let p = dir.join(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(ReconError::MissingData(format!(
                "{} listed in manifest but missing",
                p.display()
            )))
        }
    };
    let (image, _) = read_image(&need(&entry.image)?)?;
    let mut kspace = BTreeMap::new();
    for (&ar, rel) in &entry.kspace {
        kspace.insert(ar, read_kspace(&need(rel)?)?.0);
    }
    Ok(LoadedSlice {
        id: entry.id.clone(),
        image,
        kspace,
    })
}

/// Write every sample plus `manifest.json` into `dir`.
pub fn write_dataset(
    dir: &Path,
    samples: &[PhantomSample],
    template: &PhantomSpec,
    seed: u64,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| ReconError::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    let mut counts = SplitCounts {
        train: 0,
        eval: 0,
        test: 0,
    };
    let mut accelerations: Vec<usize> = Vec::new();
    for s in samples {
        match s.split {
            Split::Train => counts.train += 1,
            Split::Eval => counts.eval += 1,
            Split::Test => counts.test += 1,
        }
        let image = format!("{}/image.npz", s.id);
        write_image(&dir.join(&image), &s.image, Some(s.spec.seed))?;
        let mut kspace = BTreeMap::new();
        let mut masks = BTreeMap::new();
        let mut mask_params = BTreeMap::new();
        for (ar, k) in &s.undersampled {
            if !accelerations.contains(ar) {
                accelerations.push(*ar);
            }
            let rel = format!("{}/kspace_x{ar}.npz", s.id);
            write_kspace(
                &dir.join(&rel),
                k,
                s.image.original_size(),
                Some(s.spec.seed),
            )?;
            kspace.insert(*ar, rel);
            if let Sampling::Masked(mask) = k.sampling() {
                let rel = format!("{}/mask_x{ar}.json", s.id);
                write_mask(&dir.join(&rel), mask)?;
                masks.insert(*ar, rel);
                mask_params.insert(*ar, mask.params());
            }
        }
        entries.push(ManifestEntry {
            id: s.id.clone(),
            split: s.split,
            seed: s.spec.seed,
            spec: s.spec.clone(),
            image,
            kspace,
            masks,
            mask_params,
        });
    }
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.to_string(),
        seed,
        template: template.clone(),
        accelerations,
        counts,
        entries,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
