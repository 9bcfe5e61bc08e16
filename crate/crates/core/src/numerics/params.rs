use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::tape::Tape;
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"IVLM1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One learnable array with its freeze flag and optimizer moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub tensor: Tensor,
    pub frozen: bool,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

impl Param {
    pub fn new(mut tensor: Tensor) -> Self {
        let n = tensor.len();
        tensor.requires_grad = true;
        tensor.grad = Some(vec![0.0; n]);
        Param { tensor, frozen: false, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn grad(&self) -> &[f64] {
        self.tensor.grad.as_deref().expect("params always carry a grad buffer")
    }
}

/// Every learnable array of the model, keyed by dotted name.
#[derive(Debug, Clone, Default)]
pub struct ModelParams {
    params: BTreeMap<String, Param>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.params.insert(name.into(), Param::new(tensor));
    }

    /// Inserts a tensor drawn from N(0, std²).
    pub fn insert_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) {
        let normal = Normal::new(0.0, std).expect("positive std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape matches"));
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.tensor.len()).sum()
    }

    /// Freezes (or unfreezes) every parameter whose name starts with one of `prefixes`.
    pub fn set_frozen_by_prefix(&mut self, prefixes: &[&str], frozen: bool) {
        for (name, p) in &mut self.params {
            if prefixes.iter().any(|pre| name.starts_with(pre)) {
                p.frozen = frozen;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            if let Some(g) = p.tensor.grad.as_mut() {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Rescales the gradients of unfrozen parameters so their joint L2 norm
    /// is at most `max_norm`. Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self
            .params
            .values()
            .filter(|p| !p.frozen)
            .flat_map(|p| p.grad().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm && norm > 0.0 {
            let k = max_norm / norm;
            for p in self.params.values_mut().filter(|p| !p.frozen) {
                p.tensor.grad.as_mut().expect("grad buffer").iter_mut().for_each(|g| *g *= k);
            }
        }
        norm
    }

    /// Adds `scale ×` the tape gradients of every bound parameter into the
    /// stored gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, scale: f64) {
        for (var, name) in tape.bindings() {
            let Some(g) = tape.grad(*var) else { continue };
            let p = self.params.get_mut(name).expect("binding refers to a known parameter");
            if p.frozen {
                continue;
            }
            let dst = p.tensor.grad.as_mut().expect("grad buffer");
            for (d, s) in dst.iter_mut().zip(g) {
                *d += scale * s;
            }
        }
    }

    /// Writes every parameter in name order.
    ///
    /// Layout: magic `IVLM1`, version `u32`, then per tensor: name length
    /// `u32`, UTF-8 name, rank `u32`, dims `u64` each, payload `f64`. All
    /// integers and floats are little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for (name, p) in &self.params {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            let shape = p.tensor.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut payload = Vec::with_capacity(p.tensor.len() * 8);
            for v in p.tensor.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&payload)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut cur = Cursor { buf: &buf, pos: 0 };
        if cur.take(5)? != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint magic mismatch"));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let mut params = ModelParams::new();
        while cur.pos < buf.len() {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| Error::format("parameter name is not UTF-8"))?
                .to_string();
            let rank = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = cur.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(name, Tensor::new(shape, data)?);
        }
        Ok(params)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format("checkpoint truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn checkpoint_layout_is_exact() {
        let mut params = ModelParams::new();
        params.insert("w", Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap());
        let mut bytes = Vec::new();
        params.write_checkpoint(&mut bytes).unwrap();

        let mut expect = b"IVLM1".to_vec();
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.extend(b"w");
        expect.extend(2u32.to_le_bytes());
        expect.extend(1u64.to_le_bytes());
        expect.extend(2u64.to_le_bytes());
        expect.extend(1.5f64.to_le_bytes());
        expect.extend((-2.0f64).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn clip_grad_norm_skips_frozen() {
        let mut params = ModelParams::new();
        params.insert("a", Tensor::zeros(&[2]));
        params.insert("b", Tensor::zeros(&[1]));
        params.get_mut("a").unwrap().tensor.grad = Some(vec![3.0, 4.0]);
        params.get_mut("b").unwrap().tensor.grad = Some(vec![100.0]);
        params.get_mut("b").unwrap().frozen = true;
        assert_eq!(params.clip_grad_norm(1.0), 5.0);
        let a = params.get("a").unwrap().grad().to_vec();
        assert!((a[0] - 0.6).abs() < 1e-15 && (a[1] - 0.8).abs() < 1e-15);
        assert_eq!(params.get("b").unwrap().grad(), &[100.0]);
        assert!((params.clip_grad_norm(10.0) - 1.0).abs() < 1e-15);
        assert_eq!(params.get("a").unwrap().grad(), &a[..]);
    }

    #[test]
    fn checkpoint_rejects_bad_magic_and_truncation() {
        assert!(ModelParams::read_checkpoint(&b"IVLM2\x01\0\0\0"[..]).is_err());
        let mut params = ModelParams::new();
        params.insert("a", Tensor::zeros(&[3]));
        let mut bytes = Vec::new();
        params.write_checkpoint(&mut bytes).unwrap();
        bytes.pop();
        assert!(ModelParams::read_checkpoint(&bytes[..]).is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_round_trips(
            tensors in proptest::collection::btree_map(
                "[a-z.]{1,12}",
                (1usize..4, 1usize..5).prop_flat_map(|(r, c)| {
                    proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), r * c)
                        .prop_map(move |d| (r, c, d))
                }),
                1..5,
            )
        ) {
            let mut params = ModelParams::new();
            for (name, (r, c, d)) in &tensors {
                params.insert(name.clone(), Tensor::new(vec![*r, *c], d.clone()).unwrap());
            }
            let mut bytes = Vec::new();
            params.write_checkpoint(&mut bytes).unwrap();
            let back = ModelParams::read_checkpoint(&bytes[..]).unwrap();
            prop_assert_eq!(back.len(), params.len());
            for (name, p) in params.iter() {
                let q = back.get(name).unwrap();
                prop_assert_eq!(q.tensor.shape(), p.tensor.shape());
                prop_assert_eq!(q.tensor.data(), p.tensor.data());
            }
        }
    }
}
