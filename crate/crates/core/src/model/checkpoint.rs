//! Parameter checkpoints.
//!
//! A text manifest followed by raw little-endian values:
//!
//! ```text
//! msplab-checkpoint 1
//! kind backbone
//! dtype f64
//! params 2
//! text_embed 27x32
//! patch_proj.b 32
//! end
//! <27·32 + 32 little-endian f64 values>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::ParamSet;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &str = "msplab-checkpoint 1";

pub fn encode_checkpoint<S: Scalar>(kind: &str, params: &ParamSet<S>) -> Vec<u8> {
    let mut out = Vec::new();
    let mut header = format!("{MAGIC}\nkind {kind}\ndtype {}\nparams {}\n", S::DTYPE, params.len());
    for (name, t) in params.iter() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("{name} {}\n", dims.join("x")));
    }
    header.push_str("end\n");
    out.extend_from_slice(header.as_bytes());
    for (_, t) in params.iter() {
        for &x in t.data() {
            x.write_le(&mut out);
        }
    }
    out
}

/// Decodes a checkpoint whose manifest must match `template` exactly
/// (kind, dtype, names, shapes, order).
pub fn decode_checkpoint<S: Scalar>(bytes: &[u8], kind: &str, template: &ParamSet<S>) -> Result<ParamSet<S>> {
    let err = |m: String| Error::Checkpoint(m);
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err("truncated manifest".into()))?;
        pos += nl + 1;
        std::str::from_utf8(&rest[..nl]).map_err(|_| err("manifest is not UTF-8".into()))
    };
    if next_line()? != MAGIC {
        return Err(err("not a checkpoint file".into()));
    }
    let expect = |line: &str, key: &str, want: &str| -> Result<()> {
        match line.strip_prefix(key).map(str::trim) {
            Some(v) if v == want => Ok(()),
            Some(v) => Err(err(format!("{key} is \"{v}\", expected \"{want}\""))),
            None => Err(err(format!("expected \"{key}\" line, got \"{line}\""))),
        }
    };
    expect(next_line()?, "kind", kind)?;
    expect(next_line()?, "dtype", S::DTYPE)?;
    expect(next_line()?, "params", &template.len().to_string())?;
    for (name, t) in template.iter() {
        let line = next_line()?;
        let (n, dims) = line
            .rsplit_once(' ')
            .ok_or_else(|| err(format!("malformed manifest entry \"{line}\"")))?;
        let shape: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse().map_err(|_| err(format!("bad shape in \"{line}\""))))
            .collect::<Result<_>>()?;
        if n != name || shape != t.shape() {
            return Err(err(format!(
                "manifest entry {n} {shape:?} does not match expected {name} {:?}",
                t.shape()
            )));
        }
    }
    if next_line()? != "end" {
        return Err(err("manifest has extra entries".into()));
    }
    let body = &bytes[pos..];
    let need = template.numel() * S::BYTES;
    if body.len() != need {
        return Err(err(format!("payload has {} bytes, expected {need}", body.len())));
    }
    let mut out = ParamSet::new();
    let mut off = 0;
    for (name, t) in template.iter() {
        let data = (0..t.numel())
            .map(|i| S::read_le(&body[off + i * S::BYTES..]))
            .collect();
        off += t.numel() * S::BYTES;
        out.insert(name, Tensor::new(t.shape().to_vec(), data)?);
    }
    Ok(out)
}

pub fn save_checkpoint<S: Scalar>(path: impl AsRef<Path>, kind: &str, params: &ParamSet<S>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_checkpoint(kind, params))
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>, kind: &str, template: &ParamSet<S>) -> Result<ParamSet<S>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, kind, template)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::vector(vec![0.1, -2.5, f64::MIN_POSITIVE]));
        p.insert("b.w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 1e-300]).unwrap());
        p
    }

    #[test]
    fn roundtrip_bitwise() {
        let p = set();
        let bytes = encode_checkpoint("head", &p);
        let back = decode_checkpoint(&bytes, "head", &p).unwrap();
        assert_eq!(back.hash(), p.hash());
    }

    #[test]
    fn mismatches_fail() {
        let p = set();
        let bytes = encode_checkpoint("head", &p);
        assert!(decode_checkpoint(&bytes, "backbone", &p).is_err());
        let mut other = ParamSet::new();
        other.insert("a", Tensor::vector(vec![0.0; 3]));
        other.insert("b.w", Tensor::<f64>::zeros(&[4, 1]));
        assert!(decode_checkpoint(&bytes, "head", &other).is_err());
        assert!(decode_checkpoint::<f32>(&bytes, "head", &ParamSet::new()).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], "head", &p).is_err());
    }
}
