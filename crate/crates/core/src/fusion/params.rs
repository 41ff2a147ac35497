use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::param_specs;
use super::{FusionConfig, FusionError};

/// Named matrices.
pub type Tensors = BTreeMap<String, Array2<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Uniform,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: (usize, usize),
    pub init: Init,
}

/// Named matrices for every layer a configuration uses, with matching
/// gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    cfg: FusionConfig,
    pub(crate) values: Tensors,
    pub(crate) grads: Tensors,
}

impl ParamStore {
    /// Weights uniform in `(−1/√d, 1/√d)`, biases zero, norm gains one.
    /// Parameters are drawn in name order from one seeded stream.
    pub fn new(cfg: &FusionConfig, seed: u64) -> Result<Self, FusionError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (cfg.d as f64).sqrt();
        let mut specs = param_specs(cfg);
        specs.sort_by(|a, b| a.name.cmp(&b.name));
        let mut values = Tensors::new();
        for s in specs {
            let m = match s.init {
                Init::Uniform => Array2::from_shape_fn(s.shape, |_| rng.gen_range(-bound..bound)),
                Init::Zeros => Array2::zeros(s.shape),
                Init::Ones => Array2::ones(s.shape),
            };
            values.insert(s.name, m);
        }
        let grads = zeros_like(&values);
        Ok(Self {
            cfg: cfg.clone(),
            values,
            grads,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.values.get_mut(name)
    }

    pub fn grad(&self, name: &str) -> Option<&Array2<f64>> {
        self.grads.get(name)
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.values_mut() {
            g.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.values.values().map(Array2::len).sum()
    }

    /// Copies every tensor whose name starts with `from` onto the same name
    /// with prefix `to`.
    pub fn copy_block(&mut self, from: &str, to: &str) -> Result<(), FusionError> {
        let pairs: Vec<(String, Array2<f64>)> = self
            .values
            .iter()
            .filter(|(k, _)| k.starts_with(from))
            .map(|(k, v)| (format!("{to}{}", &k[from.len()..]), v.clone()))
            .collect();
        for (k, v) in pairs {
            match self.values.get_mut(&k) {
                Some(dst) if dst.dim() == v.dim() => *dst = v,
                _ => return Err(FusionError::Shape(format!("no parameter `{k}` of matching shape"))),
            }
        }
        Ok(())
    }

    fn check_against_config(&self) -> Result<(), FusionError> {
        let specs = param_specs(&self.cfg);
        if specs.len() != self.values.len() {
            return Err(FusionError::Format(format!(
                "expected {} tensors for this configuration, found {}",
                specs.len(),
                self.values.len()
            )));
        }
        for s in specs {
            match self.values.get(&s.name) {
                Some(v) if v.dim() == s.shape => {}
                Some(v) => {
                    return Err(FusionError::Format(format!(
                        "`{}` has shape {:?}, expected {:?}",
                        s.name,
                        v.dim(),
                        s.shape
                    )))
                }
                None => return Err(FusionError::Format(format!("missing tensor `{}`", s.name))),
            }
        }
        Ok(())
    }
}

pub(crate) fn zeros_like(t: &Tensors) -> Tensors {
    t.iter().map(|(k, v)| (k.clone(), Array2::zeros(v.dim()))).collect()
}

const WEIGHTS_MAGIC: &[u8; 4] = b"NWT1";

/// `"NWT1" | u32 config-JSON length | config JSON | u32 tensor count |
/// per tensor { u16 name length | name | u32 rows | u32 cols | rows·cols f64 }`,
/// little endian.
pub fn encode_weights(ps: &ParamStore) -> Vec<u8> {
    let cfg = serde_json::to_vec(&ps.cfg).expect("config serializes");
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(ps.values.len() as u32).to_le_bytes());
    for (name, m) in &ps.values {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    raw: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FusionError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.raw.len());
        let end = end.ok_or_else(|| FusionError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.raw[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, FusionError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FusionError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_weights(raw: &[u8]) -> Result<ParamStore, FusionError> {
    let mut c = Cursor { raw, pos: 0 };
    if c.take(4)? != WEIGHTS_MAGIC {
        return Err(FusionError::Format("bad magic".into()));
    }
    let n = c.u32()? as usize;
    let cfg: FusionConfig = serde_json::from_slice(c.take(n)?)
        .map_err(|e| FusionError::Format(format!("config: {e}")))?;
    cfg.validate()?;
    let count = c.u32()?;
    let mut values = Tensors::new();
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| FusionError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let bytes = c.take(rows.saturating_mul(cols).saturating_mul(8))?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let m = Array2::from_shape_vec((rows, cols), data).map_err(|e| FusionError::Format(e.to_string()))?;
        if values.insert(name.clone(), m).is_some() {
            return Err(FusionError::Format(format!("duplicate tensor `{name}`")));
        }
    }
    if c.pos != raw.len() {
        return Err(FusionError::Format(format!("{} trailing bytes", raw.len() - c.pos)));
    }
    let grads = zeros_like(&values);
    let ps = ParamStore { cfg, values, grads };
    ps.check_against_config()?;
    Ok(ps)
}

pub fn save_weights(ps: &ParamStore, path: impl AsRef<Path>) -> Result<(), FusionError> {
    fs::write(path, encode_weights(ps))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ParamStore, FusionError> {
    decode_weights(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{Cutoff, Strategy};

    #[test]
    fn seeded_init_is_deterministic() {
        let cfg = FusionConfig::default();
        let a = ParamStore::new(&cfg, 7).unwrap();
        assert_eq!(a, ParamStore::new(&cfg, 7).unwrap());
        assert_ne!(a, ParamStore::new(&cfg, 8).unwrap());
        let bound = 1.0 / 8.0;
        for (name, v) in &a.values {
            if name.ends_with(".w") || name.contains(".w") {
                assert!(v.iter().all(|x| x.abs() < bound), "{name}");
            }
        }
        assert!(a.get("dec.0.bq").unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn weights_round_trip_and_validation() {
        let cfg = FusionConfig {
            d: 8,
            patch: 4,
            ..FusionConfig::default()
        }
        .with_strategy(Strategy::Symmetric, Cutoff::Decoder);
        let ps = ParamStore::new(&cfg, 1).unwrap();
        let bytes = encode_weights(&ps);
        assert_eq!(decode_weights(&bytes).unwrap(), ps);
        assert!(decode_weights(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_weights(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode_weights(&bad).is_err());
    }
}
