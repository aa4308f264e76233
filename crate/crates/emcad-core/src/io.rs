//! Binary tensor/weight serialization and the structured run config.
//!
//! Tensor file layout (all little-endian): magic "EMCT", version u16,
//! rank u16 (1..=4), rank x u32 dims, then product(dims) IEEE-754 f32
//! values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::blocks::MsdcArrangement;
use crate::decoder::{Decoder, DecoderConfig};
use crate::error::{Error, Result};
use crate::tensor::{Tensor4D, UpsampleMode};

pub const TENSOR_MAGIC: &[u8; 4] = b"EMCT";
pub const BUNDLE_MAGIC: &[u8; 4] = b"EMCW";
pub const FORMAT_VERSION: u16 = 1;

pub fn write_tensor_dims(w: &mut impl Write, dims: &[u32], data: &[f32]) -> Result<()> {
    if dims.is_empty() || dims.len() > 4 {
        return Err(Error::format("tensor rank must be in 1..=4"));
    }
    let expect: u64 = dims.iter().map(|&d| d as u64).product();
    if expect != data.len() as u64 {
        return Err(Error::format("payload length does not match dims product"));
    }
    w.write_all(TENSOR_MAGIC)?;
    w.write_u16::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u16::<LittleEndian>(dims.len() as u16)?;
    for &d in dims {
        w.write_u32::<LittleEndian>(d)?;
    }
    for &v in data {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor4D) -> Result<()> {
    let (n, c, h, wd) = t.shape();
    write_tensor_dims(w, &[n as u32, c as u32, h as u32, wd as u32], t.data())
}

pub fn read_tensor_dims(r: &mut impl Read) -> Result<(Vec<u32>, Vec<f32>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::format("bad magic: not a tensor file"));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(format!("unsupported tensor version {version}")));
    }
    let rank = r.read_u16::<LittleEndian>()? as usize;
    if rank == 0 || rank > 4 {
        return Err(Error::format(format!("tensor rank {rank} out of range 1..=4")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.read_u32::<LittleEndian>()?);
    }
    let len: u64 = dims.iter().map(|&d| d as u64).product();
    let mut data = vec![0.0f32; len as usize];
    r.read_f32_into::<LittleEndian>(&mut data)?;
    Ok((dims, data))
}

/// Reads a tensor file, promoting lower ranks with leading 1-dims.
pub fn read_tensor4d(r: &mut impl Read) -> Result<Tensor4D> {
    let (dims, data) = read_tensor_dims(r)?;
    let mut d4 = [1u32; 4];
    d4[4 - dims.len()..].copy_from_slice(&dims);
    Tensor4D::new(d4[0] as usize, d4[1] as usize, d4[2] as usize, d4[3] as usize, data)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor4D) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor4D> {
    read_tensor4d(&mut BufReader::new(File::open(path)?))
}

/// One named tensor from a weight/feature bundle.
#[derive(Debug, Clone)]
pub struct BundleEntry {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

/// Writes named tensors as a bundle: magic "EMCW", version, entry count,
/// then per entry a length-prefixed name and an embedded tensor record.
pub fn write_bundle<'a>(
    w: &mut impl Write,
    entries: impl IntoIterator<Item = (&'a str, &'a [u32], &'a [f32])>,
) -> Result<()> {
    let entries: Vec<_> = entries.into_iter().collect();
    w.write_all(BUNDLE_MAGIC)?;
    w.write_u16::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(entries.len() as u32)?;
    for (name, dims, values) in entries {
        let bytes = name.as_bytes();
        w.write_u16::<LittleEndian>(bytes.len() as u16)?;
        w.write_all(bytes)?;
        write_tensor_dims(w, dims, values)?;
    }
    Ok(())
}

pub fn read_bundle(r: &mut impl Read) -> Result<Vec<BundleEntry>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BUNDLE_MAGIC {
        return Err(Error::format("bad magic: not a weight bundle"));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(format!("unsupported bundle version {version}")));
    }
    let count = r.read_u32::<LittleEndian>()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.read_u16::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::format("entry name is not utf-8"))?;
        let (dims, values) = read_tensor_dims(r)?;
        out.push(BundleEntry { name, dims, values });
    }
    Ok(out)
}

/// Serializes a decoder's learnable parameters in canonical build order.
pub fn write_weight_bundle(w: &mut impl Write, dec: &Decoder) -> Result<()> {
    let entries = dec.param_entries();
    write_bundle(
        w,
        entries
            .iter()
            .map(|e| (e.name.as_str(), e.dims.as_slice(), e.values)),
    )
}

/// Loads a weight bundle back into a decoder built from the same config.
pub fn apply_weight_bundle(dec: &mut Decoder, entries: &[BundleEntry]) -> Result<()> {
    let pairs: Vec<(String, Vec<f32>)> = entries
        .iter()
        .map(|e| (e.name.clone(), e.values.clone()))
        .collect();
    dec.load_params(&pairs)
}

fn default_seed() -> u64 {
    0
}
fn default_res() -> usize {
    224
}
fn default_batch() -> usize {
    1
}

/// The structured config file: DecoderConfig fields plus run settings.
/// Unknown keys are rejected to catch typos in ablation toggles.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub channels: [usize; 4],
    #[serde(default = "defaults::kernel_set")]
    pub kernel_set: Vec<usize>,
    #[serde(default = "defaults::arrangement")]
    pub msdc_arrangement: MsdcArrangement,
    #[serde(default = "defaults::expansion")]
    pub expansion_factor: usize,
    #[serde(default)]
    pub lgag_group_count: usize,
    #[serde(default)]
    pub lgag_intermediate: usize,
    #[serde(default = "defaults::classes")]
    pub num_classes: usize,
    #[serde(default = "defaults::yes")]
    pub use_lgag: bool,
    #[serde(default = "defaults::yes")]
    pub use_mscam: bool,
    #[serde(default = "defaults::yes")]
    pub cascaded: bool,
    #[serde(default = "defaults::upsample")]
    pub upsample_mode: UpsampleMode,
    #[serde(default = "defaults::cab_ratio")]
    pub cab_reduction_ratio: f64,
    #[serde(default = "defaults::sab_kernel")]
    pub sab_kernel: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_res")]
    pub input_h: usize,
    #[serde(default = "default_res")]
    pub input_w: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

mod defaults {
    use super::{MsdcArrangement, UpsampleMode};
    pub fn kernel_set() -> Vec<usize> {
        vec![1, 3, 5]
    }
    pub fn arrangement() -> MsdcArrangement {
        MsdcArrangement::Parallel
    }
    pub fn expansion() -> usize {
        2
    }
    pub fn classes() -> usize {
        9
    }
    pub fn yes() -> bool {
        true
    }
    pub fn upsample() -> UpsampleMode {
        UpsampleMode::Nearest
    }
    pub fn cab_ratio() -> f64 {
        1.0 / 16.0
    }
    pub fn sab_kernel() -> usize {
        7
    }
}

impl ConfigFile {
    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            channels: self.channels,
            kernel_set: self.kernel_set.clone(),
            msdc_arrangement: self.msdc_arrangement,
            expansion_factor: self.expansion_factor,
            lgag_group_count: self.lgag_group_count,
            lgag_intermediate: self.lgag_intermediate,
            num_classes: self.num_classes,
            use_lgag: self.use_lgag,
            use_mscam: self.use_mscam,
            cascaded: self.cascaded,
            upsample_mode: self.upsample_mode,
            cab_reduction_ratio: self.cab_reduction_ratio,
            sab_kernel: self.sab_kernel,
        }
    }

    pub fn from_decoder_config(cfg: &DecoderConfig) -> Self {
        ConfigFile {
            channels: cfg.channels,
            kernel_set: cfg.kernel_set.clone(),
            msdc_arrangement: cfg.msdc_arrangement,
            expansion_factor: cfg.expansion_factor,
            lgag_group_count: cfg.lgag_group_count,
            lgag_intermediate: cfg.lgag_intermediate,
            num_classes: cfg.num_classes,
            use_lgag: cfg.use_lgag,
            use_mscam: cfg.use_mscam,
            cascaded: cfg.cascaded,
            upsample_mode: cfg.upsample_mode,
            cab_reduction_ratio: cfg.cab_reduction_ratio,
            sab_kernel: cfg.sab_kernel,
            seed: 0,
            input_h: 224,
            input_w: 224,
            batch: 1,
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let cfg: ConfigFile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    cfg.decoder_config().validate()?;
    Ok(cfg)
}
