//! `L3UW` weight files.
//!
//! Layout: magic `L3UW`, version byte, record count (u32 LE), then per
//! record: name length (u16 LE), UTF-8 name, dtype byte, rank byte, rank
//! dims (u32 LE each), raw little-endian data. Records are named
//! `<layer>.weight` (rank 4, `out, in, kh, kw`) and `<layer>.bias` (rank 1).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::graph::ModelGraph;
use crate::tensor::{Data, Dtype, Kernel4D};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"L3UW";
pub const WEIGHTS_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Data,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightFile {
    pub records: Vec<WeightRecord>,
}

impl WeightFile {
    /// Collects every kernel of `g`, in layer order.
    pub fn from_graph(g: &ModelGraph) -> Self {
        let mut records = Vec::new();
        for (name, k) in g.kernels() {
            records.push(WeightRecord {
                name: format!("{name}.weight"),
                dims: [k.out_channels, k.in_channels, k.kh, k.kw].map(|d| d as u32).to_vec(),
                data: k.weights().clone(),
            });
            records.push(WeightRecord {
                name: format!("{name}.bias"),
                dims: vec![k.out_channels as u32],
                data: k.bias().clone(),
            });
        }
        WeightFile { records }
    }

    /// Installs the records into `g`. Every convolution layer must receive
    /// exactly one weight and one bias record and no record may be left over.
    pub fn bind(&self, g: &mut ModelGraph) -> Result<()> {
        let mut by_name: BTreeMap<&str, &WeightRecord> = BTreeMap::new();
        for r in &self.records {
            if by_name.insert(&r.name, r).is_some() {
                return Err(Error::WeightBinding(format!("duplicate record `{}`", r.name)));
            }
        }
        let names: Vec<String> = g.kernels().map(|(n, _)| n.to_string()).collect();
        for name in &names {
            let w = by_name
                .remove(format!("{name}.weight").as_str())
                .ok_or_else(|| Error::WeightBinding(format!("missing `{name}.weight`")))?;
            let b = by_name
                .remove(format!("{name}.bias").as_str())
                .ok_or_else(|| Error::WeightBinding(format!("missing `{name}.bias`")))?;
            let [o, i, kh, kw] = w.dims[..] else {
                return Err(Error::WeightBinding(format!("`{}` must have rank 4", w.name)));
            };
            if b.dims.len() != 1 {
                return Err(Error::WeightBinding(format!("`{}` must have rank 1", b.name)));
            }
            let kernel =
                Kernel4D::new(o as usize, i as usize, kh as usize, kw as usize, w.data.clone(), b.data.clone())
                    .map_err(|e| Error::WeightBinding(format!("layer `{name}`: {e}")))?;
            g.set_kernel(name, kernel)?;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::WeightBinding(format!("record `{extra}` matches no layer")));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&[WEIGHTS_VERSION])?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for r in &self.records {
            let name = r.name.as_bytes();
            let len =
                u16::try_from(name.len()).map_err(|_| Error::Format(format!("record name too long: {}", r.name)))?;
            let rank = u8::try_from(r.dims.len()).map_err(|_| Error::Format("rank exceeds 255".into()))?;
            let expected: u64 = r.dims.iter().map(|&d| d as u64).product();
            if expected != r.data.len() as u64 {
                return Err(Error::Format(format!("record `{}` dims do not match its data length", r.name)));
            }
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[r.data.dtype() as u8, rank])?;
            for d in &r.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            r.data.write_le(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated weight file: {e}")))?;
            Ok(b)
        }
        if &take::<4, _>(r)? != WEIGHTS_MAGIC {
            return Err(Error::Format("missing L3UW magic".into()));
        }
        let [version] = take::<1, _>(r)?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!("unsupported weight file version {version}")));
        }
        let count = u32::from_le_bytes(take(r)?);
        let mut records = Vec::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(take(r)?) as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|e| Error::Format(format!("truncated record name: {e}")))?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("record name is not UTF-8".into()))?;
            let [dtype, rank] = take::<2, _>(r)?;
            let dtype = Dtype::from_byte(dtype)?;
            let dims = (0..rank).map(|_| take(r).map(u32::from_le_bytes)).collect::<Result<Vec<_>>>()?;
            let len: u64 = dims.iter().map(|&d| d as u64).product();
            let data = Data::read_le(r, dtype, len as usize)
                .map_err(|e| Error::Format(format!("truncated data for `{name}`: {e}")))?;
            records.push(WeightRecord { name, dims, data });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after weight records".into()));
        }
        Ok(WeightFile { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        WeightFile::read_from(&mut bytes.as_slice())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}
