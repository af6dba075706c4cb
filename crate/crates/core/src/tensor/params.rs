//! Named parameter storage and the binary checkpoint format.
//!
//! Checkpoint body (inside the framing of [`crate::codec`], magic `GCKP`):
//!
//! ```text
//! metadata   u64 length + UTF-8 (free-form, JSON by convention)
//! count      u32
//! count × {
//!     name   u64 length + UTF-8
//!     dtype  u8 (0 = f32, 1 = f64)
//!     ndim   u32, then ndim × u64 dims
//!     data   u64 element count + little-endian payload
//! }
//! ```

use std::path::Path;

use super::{lit, DType, Gradients, Scalar, Tensor, TensorError};
use crate::codec::{self, CodecError, Decoder, Encoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Accumulated gradient; `None` until a backward pass touches it.
    pub grad: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the parameter gradients of a reverse pass into the grad buffers.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(existing) => existing.data_mut().iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
                None => p.grad = Some(Tensor::new(p.value.shape().to_vec(), g.clone()).expect("grad shape")),
            }
        }
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| NamedTensor::from_tensor(&p.name, &p.value))
            .collect()
    }

    /// Overwrites parameter values from named tensors. Every parameter must be
    /// present with a matching shape.
    pub fn load_named(&mut self, tensors: &[NamedTensor]) -> Result<(), TensorError> {
        for p in &mut self.params {
            let t = tensors
                .iter()
                .find(|t| t.name == p.name)
                .ok_or_else(|| TensorError::UnknownParam(p.name.clone()))?;
            if t.shape != p.value.shape() {
                return Err(TensorError::Shape(format!(
                    "parameter {}: checkpoint shape {:?}, model shape {:?}",
                    p.name,
                    t.shape,
                    p.value.shape()
                )));
            }
            p.value = t.to_tensor()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn from_tensor<T: Scalar>(name: &str, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => TensorData::F32(t.data().iter().map(|v| v.to_f32().unwrap()).collect()),
            DType::F64 => TensorData::F64(t.data().iter().map(|v| v.to_f64().unwrap()).collect()),
        };
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data,
        }
    }

    pub fn from_vec<T: Scalar>(name: &str, values: &[T]) -> Self {
        Self::from_tensor(name, &Tensor::new(vec![values.len()], values.to_vec()).expect("1-D"))
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>, TensorError> {
        let data = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| lit::<T>(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| lit::<T>(x)).collect(),
        };
        Tensor::new(self.shape.clone(), data)
    }
}

const CKPT_MAGIC: [u8; 4] = *b"GCKP";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(&self.metadata);
        enc.u32(self.tensors.len() as u32);
        for t in &self.tensors {
            enc.str(&t.name);
            match &t.data {
                TensorData::F32(_) => enc.u8(0),
                TensorData::F64(_) => enc.u8(1),
            }
            enc.u32(t.shape.len() as u32);
            for &d in &t.shape {
                enc.u64(d as u64);
            }
            match &t.data {
                TensorData::F32(v) => enc.f32s(v),
                TensorData::F64(v) => enc.f64s(v),
            }
        }
        codec::seal(CKPT_MAGIC, CKPT_VERSION, &enc.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let body = codec::unseal(CKPT_MAGIC, CKPT_VERSION, bytes)?;
        let mut dec = Decoder::new(body);
        let metadata = dec.str()?;
        let count = dec.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = dec.str()?;
            let dtype = dec.u8()?;
            let ndim = dec.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(dec.len()?);
            }
            let data = match dtype {
                0 => TensorData::F32(dec.f32s()?),
                1 => TensorData::F64(dec.f64s()?),
                other => return Err(CodecError::Format(format!("unknown dtype tag {other}"))),
            };
            if shape.iter().product::<usize>() != data.len() {
                return Err(CodecError::Format(format!("tensor {name}: shape {shape:?} vs {} values", data.len())));
            }
            tensors.push(NamedTensor { name, shape, data });
        }
        dec.expect_end()?;
        Ok(Self { metadata, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        codec::write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        Self::from_bytes(&codec::read_file(path.as_ref())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            metadata: r#"{"kind":"test"}"#.into(),
            tensors: vec![
                NamedTensor {
                    name: "a.weight".into(),
                    shape: vec![2, 3],
                    data: TensorData::F32(vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, 7.0]),
                },
                NamedTensor {
                    name: "b".into(),
                    shape: vec![],
                    data: TensorData::F64(vec![std::f64::consts::PI]),
                },
            ],
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        sample().write(&path).unwrap();
        assert_eq!(Checkpoint::read(&path).unwrap(), sample());
    }

    #[test]
    fn corrupted_checkpoint_is_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CodecError::Checksum { .. })));
    }

    #[test]
    fn store_load_checks_shapes() {
        let mut store = ParamStore::<f32>::new();
        store.add("a.weight", Tensor::zeros(&[2, 3]));
        store.load_named(&sample().tensors).unwrap();
        assert_eq!(store.value(ParamId(0)).data()[2], 3.5);

        let mut wrong = ParamStore::<f32>::new();
        wrong.add("a.weight", Tensor::zeros(&[3, 2]));
        assert!(wrong.load_named(&sample().tensors).is_err());
        let mut missing = ParamStore::<f32>::new();
        missing.add("zzz", Tensor::zeros(&[1]));
        assert!(matches!(missing.load_named(&sample().tensors), Err(TensorError::UnknownParam(_))));
    }
}
