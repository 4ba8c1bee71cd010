//! Binary model files.
//!
//! Layout: the 8-byte magic `XNEMODEL`, a little-endian `u32` header length `H`, `H` bytes of
//! UTF-8 TOML describing the [`NetworkSpec`] (thresholds included), then the weights of every
//! layer in order as little-endian 128-bit words in canonical layout. Nothing may follow the
//! last weight word.

use std::path::Path;

use crate::bintensor::{words_from_le_bytes, words_to_le_bytes, Network, NetworkSpec, WORD_BYTES};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"XNEMODEL";

pub fn encode(net: &Network) -> Result<Vec<u8>> {
    let header = toml::to_string(&net.spec)
        .map_err(|e| Error::Config(format!("cannot serialize network header: {e}")))?;
    let mut out = Vec::with_capacity(12 + header.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for w in &net.weights {
        out.extend_from_slice(&words_to_le_bytes(w));
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::parse("offset 0", "not a model file (bad magic)"));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header = bytes
        .get(12..12 + h)
        .ok_or_else(|| Error::parse("offset 8", format!("header length {h} exceeds file")))?;
    let header = std::str::from_utf8(header)
        .map_err(|e| Error::parse("header", format!("invalid UTF-8: {e}")))?;
    let spec: NetworkSpec =
        toml::from_str(header).map_err(|e| Error::parse("header", e.to_string()))?;
    let geos = spec.geometries()?;
    let mut blob = &bytes[12 + h..];
    let mut weights = Vec::with_capacity(geos.len());
    for (i, geo) in geos.iter().enumerate() {
        let n = geo.weight_words() * WORD_BYTES;
        if blob.len() < n {
            return Err(Error::parse(
                "weights",
                format!("layer {i} needs {n} bytes, {} left", blob.len()),
            ));
        }
        weights.push(words_from_le_bytes(&blob[..n])?);
        blob = &blob[n..];
    }
    if !blob.is_empty() {
        return Err(Error::parse(
            "weights",
            format!("{} trailing bytes", blob.len()),
        ));
    }
    Network::new(spec, weights)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    decode(&std::fs::read(path)?)
}
