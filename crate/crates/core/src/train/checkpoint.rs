//! Checkpoint files: one JSON header line followed by concatenated CTB1
//! parameter payloads. Offsets count bytes from the end of the header line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Regime};
use crate::error::{Error, Result};
use crate::feature::NormStats;
use crate::fusion::Network;
use crate::tensor::{read_ctb, write_ctb};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub normalization_stats: Option<NormStats>,
    pub regime: Regime,
    pub parameters: Vec<ManifestEntry>,
}

pub fn write_checkpoint<W: Write>(w: &mut W, net: &Network) -> Result<()> {
    let mut payload = Vec::new();
    let mut parameters = Vec::with_capacity(net.store.len());
    for (_, p) in net.store.iter() {
        parameters.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: payload.len() as u64,
        });
        write_ctb(&mut payload, &p.value)?;
    }
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        model_config: net.config.clone(),
        normalization_stats: net.norm.clone(),
        regime: net.regime(),
        parameters,
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_header<R: BufRead>(r: &mut R) -> Result<CheckpointHeader> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    Ok(header)
}

/// Rebuilds the network from the header's configuration and overwrites
/// every parameter. Missing, extra, or misshapen entries are errors.
pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<Network> {
    let header = read_header(r)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let mut net = Network::new(header.model_config)?;
    if header.parameters.len() != net.store.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {} parameters, the configured model has {}",
            header.parameters.len(),
            net.store.len()
        )));
    }
    for e in &header.parameters {
        let id = net
            .store
            .find(&e.name)
            .ok_or_else(|| Error::Format(format!("checkpoint parameter {} is not part of the model", e.name)))?;
        let start = usize::try_from(e.offset)
            .ok()
            .filter(|&o| o < payload.len())
            .ok_or_else(|| Error::Format(format!("offset of {} lies outside the payload", e.name)))?;
        let t = read_ctb(&mut Cursor::new(&payload[start..]))?;
        if t.shape() != e.shape.as_slice() || t.shape() != net.store.value(id).shape() {
            return Err(Error::Format(format!(
                "parameter {}: stored {:?}, manifest {:?}, model {:?}",
                e.name,
                t.shape(),
                e.shape,
                net.store.value(id).shape()
            )));
        }
        *net.store.value_mut(id) = t;
    }
    net.norm = header.normalization_stats;
    net.set_regime(header.regime)?;
    Ok(net)
}

pub fn save_checkpoint(path: &Path, net: &Network) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let file = File::open(path).map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))?;
    read_checkpoint(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelKind, Regime};
    use crate::tensor::Tensor;

    #[test]
    fn round_trip_restores_every_parameter() {
        let mut net = Network::new(ModelConfig::miniature().with_seed(9)).unwrap();
        net.set_regime(Regime::Fusion).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net).unwrap();
        let back = read_checkpoint(&mut Cursor::new(&buf)).unwrap();
        assert_eq!(back.regime(), Regime::Fusion);
        for ((_, a), (_, b)) in net.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
            assert_eq!(a.frozen, b.frozen);
        }
    }

    #[test]
    fn header_is_one_json_line_with_offsets() {
        let net = Network::new(ModelConfig::miniature().with_kind(ModelKind::Feature)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net).unwrap();
        let h = read_header(&mut Cursor::new(&buf)).unwrap();
        assert_eq!(h.parameters[0].offset, 0);
        let first = &h.parameters[0];
        let n: usize = first.shape.iter().product();
        // CTB1: magic, rank byte, extents, payload.
        assert_eq!(h.parameters[1].offset as usize, 4 + 1 + 8 * first.shape.len() + 8 * n);
    }

    #[test]
    fn mismatches_are_rejected() {
        let net = Network::new(ModelConfig::miniature()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net).unwrap();
        let split = buf.iter().position(|&b| b == b'\n').unwrap();
        let mut header: CheckpointHeader = serde_json::from_slice(&buf[..split]).unwrap();

        let mut renamed = header.clone();
        renamed.parameters[0].name = "context.nope".into();
        let mut bad = serde_json::to_vec(&renamed).unwrap();
        bad.extend_from_slice(&buf[split..]);
        assert!(read_checkpoint(&mut Cursor::new(&bad)).is_err());

        header.parameters.pop();
        let mut bad = serde_json::to_vec(&header).unwrap();
        bad.extend_from_slice(&buf[split..]);
        assert!(read_checkpoint(&mut Cursor::new(&bad)).is_err());

        let mut other = Network::new(ModelConfig::miniature()).unwrap();
        let id = other.store.find("fusion.out.weight").unwrap();
        *other.store.value_mut(id) = Tensor::zeros(&[1, 1]);
        let mut buf2 = Vec::new();
        write_checkpoint(&mut buf2, &other).unwrap();
        assert!(read_checkpoint(&mut Cursor::new(&buf2)).is_err());
        assert!(read_checkpoint(&mut Cursor::new(b"not json\n".to_vec())).is_err());
    }
}
