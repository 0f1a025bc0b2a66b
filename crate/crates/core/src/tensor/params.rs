use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Result, Tensor, TensorError};

const MAGIC: &[u8; 4] = b"DAF1";

/// Named trainable tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a parameter; it is marked as requiring grad.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        self.tensors.insert(name, tensor.with_grad());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect()
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &[f64], scale: f64) -> Result<()> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?
            .accumulate_grad(g, scale)
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    /// Moves every entry of `other` into this set.
    pub fn extend(&mut self, other: ParameterSet) -> Result<()> {
        for (k, v) in other.tensors {
            self.insert(k, v)?;
        }
        Ok(())
    }

    /// Subset of entries whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParameterSet {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// SHA-256 over the serialized checkpoint bytes, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("in-memory write");
        hex(&Sha256::digest(&buf))
    }

    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| TensorError::Checkpoint(format!("name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&[t.shape().len() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let count = read_u32(&mut r)?;
        let mut set = ParameterSet::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| TensorError::Checkpoint("name is not UTF-8".into()))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let shape = (0..rank[0])
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            set.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_checkpoint(bytes.as_slice())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Summed gradients keyed by parameter name, used to reduce per-sample tapes.
#[derive(Clone, Debug, Default)]
pub struct GradBuffer {
    grads: BTreeMap<String, Vec<f64>>,
}

impl GradBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, g: &[f64]) {
        match self.grads.get_mut(name) {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += x),
            None => {
                self.grads.insert(name.to_string(), g.to_vec());
            }
        }
    }

    pub fn merge(&mut self, grads: Vec<(String, Vec<f64>)>) {
        for (name, g) in grads {
            self.add(&name, &g);
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Writes `scale * grad` into the parameters' gradient buffers.
    pub fn apply(&self, params: &mut ParameterSet, scale: f64) -> Result<()> {
        for (name, g) in &self.grads {
            params.accumulate_grad(name, g, scale)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("b.w", Tensor::matrix(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap())
            .unwrap();
        p.insert("a.b", Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = sample();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"DAF1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 2);
        let q = ParameterSet::read_checkpoint(buf.as_slice()).unwrap();
        let mut buf2 = Vec::new();
        q.write_checkpoint(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        assert_eq!(q.names().collect::<Vec<_>>(), vec!["a.b", "b.w"]);
        assert_eq!(q.get("b.w").unwrap().data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn duplicate_rejected() {
        let mut p = sample();
        assert!(p.insert("a.b", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(ParameterSet::read_checkpoint(&b"NOPE\0\0\0\0"[..]).is_err());
    }
}
