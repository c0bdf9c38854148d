//! `BGNW` weight files.
//!
//! Layout (little-endian): magic `BGNW`, u32 version, u64 schema hash, u32-prefixed UTF-8
//! metadata text, u32 layer-size count and sizes, hidden activation tag and slope (f64),
//! output activation tag, frozen flag, input and output normalization (mean then scale),
//! then each layer's row-major weights followed by its bias, all as f64.

use std::path::Path;

use super::network::{Dense, HiddenActivation, Network, Normalization, OutputActivation};
use crate::binio::{ByteReader, ByteWriter};
use crate::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"BGNW";
pub const WEIGHTS_VERSION: u32 = 1;

/// A network plus the compatibility data stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub network: Network,
    /// Hash of the condition space the network was trained against; 0 when unbound.
    pub schema_hash: u64,
    /// Free-form `key = value` lines, used for training configs.
    pub metadata: String,
}

impl WeightFile {
    pub fn new(network: Network) -> Self {
        Self {
            network,
            schema_hash: 0,
            metadata: String::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.network;
        let mut w = ByteWriter::new();
        w.bytes(WEIGHTS_MAGIC);
        w.u32(WEIGHTS_VERSION);
        w.u64(self.schema_hash);
        w.blob(self.metadata.as_bytes());
        let sizes = net.layer_sizes();
        w.u32(sizes.len() as u32);
        for s in &sizes {
            w.u32(*s as u32);
        }
        match net.hidden_activation() {
            HiddenActivation::Relu => {
                w.u8(0);
                w.f64(0.0);
            }
            HiddenActivation::LeakyRelu(s) => {
                w.u8(1);
                w.f64(s);
            }
        }
        w.u8(match net.output_activation() {
            OutputActivation::Linear => 0,
            OutputActivation::Sigmoid => 1,
        });
        w.u8(net.is_frozen() as u8);
        for norm in [net.input_norm(), net.output_norm()] {
            w.f64s(&norm.mean);
            w.f64s(&norm.scale);
        }
        for layer in net.layers() {
            w.f64s(&layer.weights);
            w.f64s(&layer.bias);
        }
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(data, "weight");
        let wf = Self::read(&mut r)?;
        r.finish()?;
        Ok(wf)
    }

    pub(crate) fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        r.magic(WEIGHTS_MAGIC)?;
        r.version(WEIGHTS_VERSION)?;
        let schema_hash = r.u64()?;
        let metadata = r.string()?;
        let n_sizes = r.u32()? as usize;
        if !(2..=64).contains(&n_sizes) {
            return Err(r.corrupt(format!("implausible layer count {n_sizes}")));
        }
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            let s = r.u32()? as usize;
            if s == 0 || s > 1 << 24 {
                return Err(r.corrupt(format!("implausible layer size {s}")));
            }
            sizes.push(s);
        }
        let hidden = match (r.u8()?, r.f64()?) {
            (0, _) => HiddenActivation::Relu,
            (1, s) => HiddenActivation::LeakyRelu(s),
            (t, _) => return Err(r.corrupt(format!("unknown hidden activation tag {t}"))),
        };
        let output = match r.u8()? {
            0 => OutputActivation::Linear,
            1 => OutputActivation::Sigmoid,
            t => return Err(r.corrupt(format!("unknown output activation tag {t}"))),
        };
        let frozen = match r.u8()? {
            0 => false,
            1 => true,
            t => return Err(r.corrupt(format!("bad frozen flag {t}"))),
        };
        let in_dim = sizes[0];
        let out_dim = *sizes.last().unwrap();
        let input_norm = Normalization {
            mean: r.f64s(in_dim)?,
            scale: r.f64s(in_dim)?,
        };
        let output_norm = Normalization {
            mean: r.f64s(out_dim)?,
            scale: r.f64s(out_dim)?,
        };
        let mut layers = Vec::with_capacity(n_sizes - 1);
        for w in sizes.windows(2) {
            let weights = r.f64s(w[0] * w[1])?;
            let bias = r.f64s(w[1])?;
            layers.push(Dense::new(w[0], w[1], weights, bias)?);
        }
        let mut network = Network::from_layers(layers, hidden, output)?;
        network.set_input_norm(input_norm)?;
        network.set_output_norm(output_norm)?;
        if frozen {
            network.freeze();
        }
        if !network.all_finite() {
            return Err(r.corrupt("non-finite parameter"));
        }
        Ok(Self {
            network,
            schema_hash,
            metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&data)
    }
}

/// Writes a bare network (no schema binding, no metadata).
pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    WeightFile::new(net.clone()).save(path)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Network> {
    Ok(WeightFile::load(path)?.network)
}

/// Loads a network and checks it against the expected layer sizes.
pub fn load_weights_expecting(path: impl AsRef<Path>, layer_sizes: &[usize]) -> Result<Network> {
    let net = load_weights(path)?;
    net.check_architecture(layer_sizes)?;
    Ok(net)
}
