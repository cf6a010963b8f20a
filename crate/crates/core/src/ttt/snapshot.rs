//! Fast-weight snapshots: one JSON header line, then raw little-endian `f64`s.
//!
//! For every layer the body holds `chunks_absorbed` followed by the params,
//! momentum and initial params of each head, each as gate, up, down.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::FastWeightState;
use crate::error::{Error, Result};
use crate::numerics::SwigluParams;

const FORMAT: &str = "hybridmem-fast-weights";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub layers: Vec<LayerShape>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub heads: usize,
    pub head_dim: usize,
    pub hidden: usize,
}

impl LayerShape {
    fn values(&self) -> usize {
        1 + self.heads * 3 * 3 * self.head_dim * self.hidden
    }
}

pub fn write_snapshot<W: Write>(states: &[FastWeightState], mut w: W) -> Result<()> {
    let layers = states
        .iter()
        .map(|s| LayerShape {
            heads: s.heads(),
            head_dim: s.head_dim(),
            hidden: s.params.first().map_or(0, SwigluParams::hidden),
        })
        .collect();
    let header = SnapshotHeader {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f64-le".into(),
        layers,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for s in states {
        w.write_all(&(s.chunks_absorbed as f64).to_le_bytes())?;
        for group in [&s.params, &s.momentum, &s.initial_params] {
            for p in group {
                for v in p.flatten() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot<R: BufRead>(mut r: R) -> Result<Vec<FastWeightState>> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: SnapshotHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Data(format!("snapshot header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION || header.dtype != "f64-le" {
        return Err(Error::Data(format!(
            "unsupported snapshot {} v{} ({})",
            header.format, header.version, header.dtype
        )));
    }
    let mut out = Vec::with_capacity(header.layers.len());
    for shape in &header.layers {
        let mut buf = vec![0u8; 8 * shape.values()];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Data("snapshot body shorter than its header".into()))?;
        let vals: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let count = vals[0];
        if !(count >= 0.0) || count.fract() != 0.0 {
            return Err(Error::Data(format!("invalid chunk counter {count}")));
        }
        let template = SwigluParams::zeros(shape.head_dim, shape.hidden);
        let per = template.num_params();
        let mut offset = 1;
        let mut next_group = || -> Result<Vec<SwigluParams>> {
            let mut g = Vec::with_capacity(shape.heads);
            for _ in 0..shape.heads {
                g.push(template.with_flat(&vals[offset..offset + per])?);
                offset += per;
            }
            Ok(g)
        };
        let params = next_group()?;
        let momentum = next_group()?;
        let initial_params = next_group()?;
        out.push(FastWeightState {
            params,
            momentum,
            chunks_absorbed: count as u64,
            initial_params,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Data("trailing bytes after snapshot body".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{RngState, Tensor};
    use crate::ttt::{update_on_pairs, TttConfig};

    #[test]
    fn round_trip_is_exact() {
        let cfg = TttConfig {
            head_dim: 4,
            ..TttConfig::default()
        };
        let mut rng = RngState::new(3);
        let mut s = FastWeightState::random(2, &cfg, &mut rng);
        let k = vec![Tensor::randn(5, 4, 1.0, &mut rng), Tensor::randn(5, 4, 1.0, &mut rng)];
        s = update_on_pairs(&s, &k, &k, &cfg).unwrap();
        let states = vec![s.clone(), FastWeightState::random(2, &cfg, &mut rng)];
        let mut buf = Vec::new();
        write_snapshot(&states, &mut buf).unwrap();
        let back = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back, states);
    }

    #[test]
    fn truncated_and_garbage_inputs_fail() {
        let cfg = TttConfig {
            head_dim: 4,
            ..TttConfig::default()
        };
        let mut rng = RngState::new(4);
        let mut buf = Vec::new();
        write_snapshot(&[FastWeightState::random(1, &cfg, &mut rng)], &mut buf).unwrap();
        assert!(read_snapshot(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_snapshot(extra.as_slice()).is_err());
        assert!(read_snapshot(&b"{\"format\":\"other\"}\n"[..]).is_err());
    }

    #[test]
    fn size_is_independent_of_updates() {
        let cfg = TttConfig {
            head_dim: 4,
            learning_rate: 1e-3,
            ..TttConfig::default()
        };
        let mut rng = RngState::new(5);
        let mut s = FastWeightState::random(1, &cfg, &mut rng);
        let k = vec![Tensor::randn(6, 4, 1.0, &mut rng)];
        let v = vec![Tensor::randn(6, 4, 1.0, &mut rng)];
        let size = |s: &FastWeightState| {
            let mut b = Vec::new();
            write_snapshot(std::slice::from_ref(s), &mut b).unwrap();
            b.len()
        };
        let first = size(&s);
        for _ in 0..100 {
            s = update_on_pairs(&s, &k, &v, &cfg).unwrap();
            assert_eq!(size(&s), first);
        }
        assert_eq!(s.chunks_absorbed, 100);
    }
}
