//! `SDCN` checkpoint files.
//!
//! Layout: the magic bytes `SDCN`, version byte `0x01`, a little-endian `u32`
//! length `L`, `L` bytes of UTF-8 JSON (network config plus layer shape
//! manifest), then every layer's weights followed by its biases as
//! little-endian `f32`, in layer order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConvLayer, DeepCNet, DeepCNetConfig, Scalar};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SDCN";
const VERSION: u8 = 0x01;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerManifest {
    filter: usize,
    inputs: usize,
    outputs: usize,
    weights: usize,
    biases: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: DeepCNetConfig,
    layers: Vec<LayerManifest>,
}

fn bad(message: impl Into<String>) -> Error {
    Error::format("checkpoint", message)
}

pub fn write_checkpoint<T: Scalar, W: Write>(net: &DeepCNet<T>, mut out: W) -> Result<()> {
    let header = Header {
        config: net.config().clone(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerManifest {
                filter: l.filter,
                inputs: l.inputs,
                outputs: l.outputs,
                weights: l.weights.len(),
                biases: l.biases.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION])?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    for layer in net.layers() {
        for &x in layer.weights.iter().chain(&layer.biases) {
            out.write_all(&x.to_f32().unwrap().to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_f32s<R: Read, T: Scalar>(input: &mut R, n: usize, what: &str) -> Result<Vec<T>> {
    let mut bytes = vec![0u8; n * 4];
    input
        .read_exact(&mut bytes)
        .map_err(|_| bad(format!("truncated {what}")))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<DeepCNet<T>> {
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic).map_err(|_| bad("missing header"))?;
    if &magic[..4] != MAGIC {
        return Err(bad("magic bytes are not SDCN"));
    }
    if magic[4] != VERSION {
        return Err(bad(format!("unsupported version {}", magic[4])));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len).map_err(|_| bad("missing header length"))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&json)?;
    header.config.validate()?;
    let expected = header.config.layer_shapes();
    if header.layers.len() != expected.len() {
        return Err(bad(format!(
            "manifest lists {} layers, config implies {}",
            header.layers.len(),
            expected.len()
        )));
    }
    let mut layers = Vec::with_capacity(expected.len());
    for (i, (m, &(f, inp, out))) in header.layers.iter().zip(&expected).enumerate() {
        if (m.filter, m.inputs, m.outputs) != (f, inp, out) || m.weights != f * f * inp * out || m.biases != out {
            return Err(bad(format!("layer {} manifest disagrees with config", i + 1)));
        }
        let weights = read_f32s(&mut input, m.weights, &format!("layer {} weights", i + 1))?;
        let biases = read_f32s(&mut input, m.biases, &format!("layer {} biases", i + 1))?;
        layers.push(ConvLayer {
            filter: f,
            inputs: inp,
            outputs: out,
            weights,
            biases,
        });
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after parameters"));
    }
    DeepCNet::from_layers(header.config, layers)
}

pub fn save_checkpoint<T: Scalar>(net: &DeepCNet<T>, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(net, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<DeepCNet<T>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn net() -> DeepCNet<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cfg = DeepCNetConfig::new(2, 3, 7, 4);
        cfg.dropout = vec![0.0, 0.1, 0.2, 0.3];
        DeepCNet::new(cfg, &mut rng).unwrap()
    }

    #[test]
    fn layout_is_bit_exact() {
        let net = net();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SDCN");
        assert_eq!(buf[4], 0x01);
        let len = u32::from_le_bytes(buf[5..9].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&buf[9..9 + len]).unwrap();
        assert_eq!(header["config"]["depth"], 2);
        assert_eq!(header["layers"][0]["weights"], 9 * 7 * 3);
        let body = &buf[9 + len..];
        assert_eq!(body.len(), net.parameter_count() * 4);
        let first = f32::from_le_bytes(body[..4].try_into().unwrap());
        assert_eq!(first, net.layers()[0].weights[0]);
        let second_layer = (9 * 7 * 3 + 3) * 4;
        let w = f32::from_le_bytes(body[second_layer..second_layer + 4].try_into().unwrap());
        assert_eq!(w, net.layers()[1].weights[0]);
    }

    #[test]
    fn round_trip() {
        let net = net();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let back: DeepCNet<f32> = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.config(), net.config());
        assert_eq!(back.layers(), net.layers());
    }

    #[test]
    fn rejects_corruption() {
        let net = net();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let truncated = &buf[..buf.len() - 3];
        assert!(read_checkpoint::<f32, _>(truncated).is_err());
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint::<f32, _>(&wrong[..]).is_err());
        let mut version = buf.clone();
        version[4] = 2;
        assert!(read_checkpoint::<f32, _>(&version[..]).is_err());
        let mut extra = buf;
        extra.push(0);
        assert!(read_checkpoint::<f32, _>(&extra[..]).is_err());
    }
}
