use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::diff::{Grads, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::io::{read_blocks, write_blocks, Block};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in the store, which is also the index into a bound var list.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    value: Tensor<f64>,
    trainable: bool,
}

/// Named parameter tensors plus non-trainable buffers (running norm
/// statistics, frozen input standardization), in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<f64>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, value, trainable });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<f64> {
        &self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<f64>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::Dimension(format!(
                "parameter '{}' is {:?}, got {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Puts every entry on the tape. With `grad_params`, trainable entries
    /// become differentiable leaves; otherwise everything is constant.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, grad_params: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|e| {
                let t = e.value.cast::<T>();
                if grad_params && e.trainable {
                    tape.param(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect()
    }

    /// Trainable values concatenated in creation order.
    pub fn flat(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .flat_map(|e| e.value.data().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_trainable() {
            return Err(Error::Dimension(format!(
                "{} values for {} trainable parameters",
                flat.len(),
                self.num_trainable()
            )));
        }
        let mut at = 0;
        for e in self.entries.iter_mut().filter(|e| e.trainable) {
            let n = e.value.len();
            e.value.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Gradient of the trainable entries in [`ParamStore::flat`] order,
    /// reading one component (real part or tangent) of each adjoint.
    pub fn flat_grad<T: Scalar>(&self, vars: &[Var], grads: &Grads<T>, part: impl Fn(T) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_trainable());
        for (e, v) in self.entries.iter().zip(vars) {
            if !e.trainable {
                continue;
            }
            match grads.get(*v) {
                Some(g) => out.extend(g.data().iter().map(|x| part(*x))),
                None => out.extend(std::iter::repeat_n(0.0, e.value.len())),
            }
        }
        out
    }

    pub fn to_blocks(&self) -> Vec<Block> {
        self.entries
            .iter()
            .map(|e| Block {
                name: e.name.clone(),
                rows: e.value.rows(),
                cols: e.value.cols(),
                data: e.value.data().to_vec(),
            })
            .collect()
    }

    /// Loads values by name into an already-shaped store. Every entry must
    /// be present with a matching shape.
    pub fn load_blocks(&mut self, blocks: &[Block]) -> Result<()> {
        let by_name: HashMap<&str, &Block> = blocks.iter().map(|b| (b.name.as_str(), b)).collect();
        for e in &mut self.entries {
            let b = by_name
                .get(e.name.as_str())
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter '{}'", e.name)))?;
            if (b.rows, b.cols) != e.value.shape() {
                return Err(Error::Dimension(format!(
                    "checkpoint '{}' is {}x{}, model expects {:?}",
                    e.name,
                    b.rows,
                    b.cols,
                    e.value.shape()
                )));
            }
            e.value = Tensor::new(b.rows, b.cols, b.data.clone())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_blocks(path, &self.to_blocks())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        self.load_blocks(&read_blocks(path)?)
    }
}

/// `U(-bound, bound)` entries.
pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })
        .collect();
    Tensor::new(rows, cols, data).expect("shape matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn flat_round_trip_skips_buffers() {
        let mut s = ParamStore::new();
        let mut rng = stream(0, "p");
        s.add("a", uniform(2, 3, 1.0, &mut rng), true).unwrap();
        s.add("buf", Tensor::zeros(1, 3), false).unwrap();
        s.add("b", uniform(1, 2, 1.0, &mut rng), true).unwrap();
        assert_eq!(s.num_trainable(), 8);
        let mut flat = s.flat();
        flat[7] = 42.0;
        s.set_flat(&flat).unwrap();
        assert_eq!(s.get(s.id("b").unwrap()).data()[1], 42.0);
        assert!(s.add("a", Tensor::zeros(1, 1), true).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = stream(1, "p");
        let mut s = ParamStore::new();
        s.add("w", uniform(3, 2, 1.0, &mut rng), true).unwrap();
        s.add("mean", uniform(1, 2, 1.0, &mut rng), false).unwrap();
        let mut t = s.clone();
        t.set_flat(&[0.0; 6]).unwrap();
        t.load_blocks(&s.to_blocks()).unwrap();
        assert_eq!(s, t);
        let mut wrong = ParamStore::new();
        wrong.add("w", Tensor::zeros(2, 2), true).unwrap();
        assert!(wrong.load_blocks(&s.to_blocks()).is_err());
    }
}
