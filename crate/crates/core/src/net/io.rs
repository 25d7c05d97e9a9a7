//! Checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "CNMKWTS\0"
//! version      u32
//! arch_hash    u64
//! width        u32
//! layer_count  u32
//! per layer:   k u32, cin u32, cout u32, has_bn u8,
//!              kernel f32[k*k*cin*cout], bias f32[cout],
//!              if has_bn: gamma, beta, running_mean, running_var f32[width] each
//! ```

use super::{arch_hash, Detector, DetectorWeights, LayerParams, CONV_LAYERS};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Tensor};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 8] = *b"CNMKWTS\0";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_floats(out: &mut Vec<u8>, t: &Tensor<f32>) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_weights(w: &DetectorWeights, mut sink: impl Write) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    out.extend_from_slice(&w.arch_hash().to_le_bytes());
    put_u32(&mut out, w.width() as u32);
    put_u32(&mut out, w.layers.len() as u32);
    for l in &w.layers {
        put_u32(&mut out, l.kernel_size() as u32);
        put_u32(&mut out, l.in_channels() as u32);
        put_u32(&mut out, l.out_channels() as u32);
        out.push(l.bn.is_some() as u8);
        put_floats(&mut out, &l.kernel);
        put_floats(&mut out, &l.bias);
        if let Some(bn) = &l.bn {
            for t in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                put_floats(&mut out, t);
            }
        }
    }
    sink.write_all(&out)?;
    Ok(())
}

pub fn save_weights(w: &DetectorWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    write_weights(w, std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated at byte {} while reading {what}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self, shape: &[usize], what: &str) -> Result<Tensor<f32>> {
        let len: usize = shape.iter().product();
        let bytes = self.take(len * 4, what)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_vec(shape, data)
    }
}

pub fn read_weights(mut source: impl Read) -> Result<DetectorWeights> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Corrupt("not a detector checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Incompatible(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let hash = r.u64("arch hash")?;
    let width = r.u32("width")? as usize;
    if width == 0 || width > 1 << 16 {
        return Err(Error::Corrupt(format!("implausible width {width}")));
    }
    if hash != arch_hash(width) {
        return Err(Error::Incompatible(format!(
            "architecture hash {hash:016x} does not match {:016x} for width {width}",
            arch_hash(width)
        )));
    }
    let count = r.u32("layer count")? as usize;
    if count != CONV_LAYERS {
        return Err(Error::Incompatible(format!(
            "{count} layers, expected {CONV_LAYERS}"
        )));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let k = r.u32("kernel size")? as usize;
        let cin = r.u32("input channels")? as usize;
        let cout = r.u32("output channels")? as usize;
        if k > 3 || cin > 1 << 16 || cout > 1 << 16 {
            return Err(Error::Corrupt(format!("layer {i}: implausible header")));
        }
        let has_bn = match r.take(1, "batch norm flag")?[0] {
            0 => false,
            1 => true,
            f => return Err(Error::Corrupt(format!("layer {i}: bad batch norm flag {f}"))),
        };
        let kernel = r.tensor(&[k, k, cin, cout], "kernel")?;
        let bias = r.tensor(&[cout], "bias")?;
        let bn = if has_bn {
            Some(BatchNorm {
                gamma: r.tensor(&[width], "gamma")?,
                beta: r.tensor(&[width], "beta")?,
                running_mean: r.tensor(&[width], "running mean")?,
                running_var: r.tensor(&[width], "running variance")?,
            })
        } else {
            None
        };
        layers.push(LayerParams { kernel, bias, bn });
    }
    if r.pos != buf.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after the last layer",
            buf.len() - r.pos
        )));
    }
    Detector::from_layers(width, layers).map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<DetectorWeights> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_weights(std::io::BufReader::new(file))
}

/// Hex SHA-256 of the serialized weights, first 16 digits.
pub fn weights_digest(w: &DetectorWeights) -> String {
    use sha2::{Digest, Sha256};
    let mut buf = Vec::new();
    write_weights(w, &mut buf).expect("writing to memory");
    Sha256::digest(&buf)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(w: &DetectorWeights) -> Vec<u8> {
        let mut out = Vec::new();
        write_weights(w, &mut out).unwrap();
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut w = DetectorWeights::new(8, 3);
        w.layers[4].bn.as_mut().unwrap().running_var.data_mut()[2] = 0.123456789;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save_weights(&w, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(w, back);
        assert_eq!(bytes(&back), std::fs::read(&path).unwrap());
    }

    #[test]
    fn header_layout() {
        let b = bytes(&DetectorWeights::new(8, 0));
        assert_eq!(&b[..8], b"CNMKWTS\0");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(u64::from_le_bytes(b[12..20].try_into().unwrap()), arch_hash(8));
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(b[24..28].try_into().unwrap()), 14);
    }

    #[test]
    fn truncation_is_reported_as_corruption() {
        let b = bytes(&DetectorWeights::new(8, 0));
        for cut in [4, 27, 40, b.len() - 1] {
            let err = read_weights(&b[..cut]).unwrap_err();
            assert!(matches!(err, Error::Corrupt(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn foreign_architecture_is_rejected() {
        let mut b = bytes(&DetectorWeights::new(8, 0));
        b[12] ^= 0xff;
        let err = read_weights(&b[..]).unwrap_err();
        assert!(matches!(err, Error::Incompatible(_)));
        assert!(err.to_string().contains("architecture hash"));

        let mut b = bytes(&DetectorWeights::new(8, 0));
        b[8] = 9;
        assert!(matches!(read_weights(&b[..]), Err(Error::Incompatible(_))));
    }
}
