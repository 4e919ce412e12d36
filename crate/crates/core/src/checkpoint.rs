//! Parameter archives in the safetensors format.
//!
//! Every parameter is stored under its hierarchical name. The model
//! architecture is stored in the archive metadata, so a checkpoint can be
//! evaluated without the config it was trained with. The metadata is packed
//! into a single `key=value` entry because safetensors writes its metadata
//! map in hash order, which would make identical runs differ on disk.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, View};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::lcl::LclConfig;
use crate::model::{GglNet, ModelConfig, VariantConfig};
use crate::nn::ParamStore;
use crate::tensor::{Float, Tensor};

const FORMAT: &str = "gglnet-1";
const META_KEY: &str = "gglnet";

struct Entry {
    shape: Vec<usize>,
    bytes: Vec<u8>,
    dtype: Dtype,
}

impl View for &Entry {
    fn dtype(&self) -> Dtype {
        self.dtype
    }

    fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn data(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(&self.bytes)
    }

    fn data_len(&self) -> usize {
        self.bytes.len()
    }
}

fn encode<T: Float>(t: &Tensor<T>) -> Entry {
    let (dtype, bytes) = if T::DTYPE == "f64" {
        let b = t.data().iter().flat_map(|v| v.to_f64().unwrap().to_le_bytes()).collect();
        (Dtype::F64, b)
    } else {
        let b = t.data().iter().flat_map(|v| v.to_f32().unwrap().to_le_bytes()).collect();
        (Dtype::F32, b)
    };
    Entry {
        shape: t.shape().to_vec(),
        bytes,
        dtype,
    }
}

fn decode<T: Float>(name: &str, dtype: Dtype, bytes: &[u8]) -> Result<Vec<T>> {
    let values = match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().unwrap())).unwrap())
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        other => {
            return Err(Error::Checkpoint(format!("{name}: unsupported dtype {other:?}")));
        }
    };
    Ok(values)
}

/// Architecture description stored alongside the weights.
pub fn model_metadata(config: &ModelConfig) -> BTreeMap<String, String> {
    let v = &config.variant;
    let join = |xs: &[usize]| xs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
    BTreeMap::from([
        ("format".into(), FORMAT.into()),
        ("main_input".into(), v.main_input.to_string()),
        (
            "supp_input".into(),
            v.supp_input.map_or("none".into(), |s| s.to_string()),
        ),
        ("gsm_mode".into(), v.gsm_mode.to_string()),
        ("fusion_mode".into(), v.fusion_mode.to_string()),
        ("lcl".into(), v.lcl.enabled.to_string()),
        ("lcl_kernel".into(), v.lcl.kernel.to_string()),
        ("channels".into(), join(&config.channels)),
        ("se_ratio".into(), config.se_ratio.to_string()),
        ("reduction".into(), config.reduction.to_string()),
    ])
}

fn pack(meta: &BTreeMap<String, String>) -> HashMap<String, String> {
    let lines: Vec<_> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
    HashMap::from([(META_KEY.to_string(), lines.join("\n"))])
}

fn unpack(raw: &HashMap<String, String>) -> Result<BTreeMap<String, String>> {
    let text = raw
        .get(META_KEY)
        .ok_or_else(|| Error::Checkpoint(format!("metadata has no {META_KEY:?} entry")))?;
    text.lines()
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Checkpoint(format!("bad metadata line {l:?}")))
        })
        .collect()
}

pub fn model_from_metadata(meta: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let get = |k: &str| {
        meta.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("metadata is missing {k:?}")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("metadata {k:?} is not an integer")))
    };
    if get("format")? != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", get("format")?)));
    }
    let supp = get("supp_input")?;
    let variant = VariantConfig {
        main_input: get("main_input")?.parse()?,
        supp_input: if supp == "none" { None } else { Some(supp.parse()?) },
        gsm_mode: get("gsm_mode")?.parse()?,
        fusion_mode: get("fusion_mode")?.parse()?,
        lcl: LclConfig {
            enabled: get("lcl")? == "true",
            kernel: num("lcl_kernel")?,
        },
    };
    let channels = get("channels")?
        .split(',')
        .map(|c| c.parse().map_err(|_| Error::Checkpoint(format!("bad channel list {c:?}"))))
        .collect::<Result<Vec<usize>>>()?;
    Ok(ModelConfig {
        variant,
        channels,
        se_ratio: num("se_ratio")?,
        reduction: num("reduction")?,
    })
}

pub fn save<T: Float>(store: &ParamStore<T>, config: &ModelConfig, path: &Path) -> Result<()> {
    let entries: Vec<(String, Entry)> = store
        .entries()
        .iter()
        .map(|e| (e.name.clone(), encode(e.value())))
        .collect();
    let views = entries.iter().map(|(n, e)| (n.as_str(), e));
    safetensors::serialize_to_file(views, &Some(pack(&model_metadata(config))), path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse<'a>(path: &Path, bytes: &'a [u8]) -> Result<SafeTensors<'a>> {
    SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Architecture recorded in a checkpoint.
pub fn read_model_config(path: &Path) -> Result<ModelConfig> {
    let bytes = read(path)?;
    let (_, meta) = SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let map = meta
        .metadata()
        .as_ref()
        .ok_or_else(|| Error::Checkpoint(format!("{}: no metadata", path.display())))?;
    model_from_metadata(&unpack(map)?)
}

/// Overwrites every parameter in `store` from the archive. Names and shapes
/// must match exactly; the first mismatch is reported by name.
pub fn load_into<T: Float>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = read(path)?;
    let st = parse(path, &bytes)?;
    let mut values = Vec::with_capacity(store.len());
    for id in store.ids() {
        let name = store.name(id);
        let view = st
            .tensor(name)
            .map_err(|_| Error::Checkpoint(format!("parameter {name} is missing from {}", path.display())))?;
        let expected = store.get(id).shape();
        if view.shape() != expected {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                view.shape(),
                expected
            )));
        }
        values.push((id, Tensor::from_vec(expected, decode(name, view.dtype(), view.data())?)?));
    }
    let mut extra: Vec<_> = st.names().into_iter().filter(|n| store.find(n).is_none()).collect();
    extra.sort();
    if let Some(name) = extra.first() {
        return Err(Error::Checkpoint(format!(
            "parameter {name} in {} does not exist in the model",
            path.display()
        )));
    }
    for (id, v) in values {
        store.set(id, v)?;
    }
    Ok(())
}

/// Rebuilds the network from a checkpoint. `config` overrides the recorded
/// architecture (and must then match it).
pub fn load_model<T: Float>(path: &Path, config: Option<ModelConfig>) -> Result<(GglNet, ParamStore<T>)> {
    let config = match config {
        Some(c) => c,
        None => read_model_config(path)?,
    };
    let (net, mut store) = GglNet::init::<T>(config, 0)?;
    load_into(&mut store, path)?;
    Ok((net, store))
}
