//! FIFO dictionary of negative style codes, one ring buffer per layer.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projector::StyleCode;

pub const DEFAULT_CAPACITY: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct StyleBank {
    capacity: usize,
    dims: Vec<usize>,
    /// Row-major `capacity × dims[l]` storage per layer.
    buffers: Vec<Vec<f32>>,
    cursor: usize,
    occupancy: usize,
}

/// Scalar bookkeeping persisted next to the buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankState {
    pub capacity: usize,
    pub dims: Vec<usize>,
    pub cursor: usize,
    pub occupancy: usize,
}

impl StyleBank {
    pub fn new(dims: &[usize], capacity: usize) -> Result<Self> {
        if capacity == 0 || dims.is_empty() || dims.contains(&0) {
            return Err(Error::arg("bank capacity and dims must be positive"));
        }
        Ok(Self {
            capacity,
            dims: dims.to_vec(),
            buffers: dims.iter().map(|d| vec![0f32; capacity * d]).collect(),
            cursor: 0,
            occupancy: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Appends every row of `code`, evicting the oldest entries when full.
    /// Values are copied, so no gradient can reach the bank.
    pub fn push(&mut self, code: &StyleCode) -> Result<()> {
        if code.dims() != self.dims {
            return Err(Error::arg(format!(
                "code dims {:?} do not match bank dims {:?}",
                code.dims(),
                self.dims
            )));
        }
        let rows: Vec<Vec<f32>> = code
            .codes
            .iter()
            .map(|c| Ok(c.detach().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?))
            .collect::<Result<_>>()?;
        for b in 0..code.batch() {
            for (l, d) in self.dims.iter().enumerate() {
                let dst = self.cursor * d;
                self.buffers[l][dst..dst + d].copy_from_slice(&rows[l][b * d..(b + 1) * d]);
            }
            self.cursor = (self.cursor + 1) % self.capacity;
            self.occupancy = (self.occupancy + 1).min(self.capacity);
        }
        Ok(())
    }

    /// Stored codes of layer `l`, oldest first.
    pub fn layer_rows(&self, l: usize) -> Vec<&[f32]> {
        let d = self.dims[l];
        let start = if self.occupancy < self.capacity { 0 } else { self.cursor };
        (0..self.occupancy)
            .map(|k| {
                let slot = (start + k) % self.capacity;
                &self.buffers[l][slot * d..(slot + 1) * d]
            })
            .collect()
    }

    /// One `N × K_l` matrix per layer (oldest first), freshly copied.
    pub fn negatives(&self, dtype: DType, device: &Device) -> Result<Vec<Tensor>> {
        (0..self.dims.len())
            .map(|l| {
                let d = self.dims[l];
                let flat: Vec<f32> = self.layer_rows(l).concat();
                Ok(Tensor::from_vec(flat, (self.occupancy, d), device)?.to_dtype(dtype)?)
            })
            .collect()
    }

    pub fn state(&self) -> BankState {
        BankState {
            capacity: self.capacity,
            dims: self.dims.clone(),
            cursor: self.cursor,
            occupancy: self.occupancy,
        }
    }

    /// Raw ring buffers keyed `layer{l}`.
    pub fn export(&self, device: &Device) -> Result<HashMap<String, Tensor>> {
        self.buffers
            .iter()
            .enumerate()
            .map(|(l, buf)| {
                Ok((format!("layer{l}"), Tensor::from_vec(buf.clone(), (self.capacity, self.dims[l]), device)?))
            })
            .collect()
    }

    pub fn import(state: &BankState, tensors: &HashMap<String, Tensor>) -> Result<Self> {
        let mut bank = Self::new(&state.dims, state.capacity)?;
        if state.cursor >= state.capacity || state.occupancy > state.capacity {
            return Err(Error::Checkpoint("inconsistent bank cursor/occupancy".into()));
        }
        for l in 0..state.dims.len() {
            let t = tensors
                .get(&format!("layer{l}"))
                .ok_or_else(|| Error::Checkpoint(format!("bank archive missing layer{l}")))?;
            if t.dims() != [state.capacity, state.dims[l]] {
                return Err(Error::Checkpoint(format!("bank layer{l} has shape {:?}", t.dims())));
            }
            bank.buffers[l] = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        }
        bank.cursor = state.cursor;
        bank.occupancy = state.occupancy;
        Ok(bank)
    }

    /// Most similar pairs of stored codes in layer `l`, by cosine similarity.
    pub fn nearest_pairs(&self, l: usize, top: usize) -> Vec<(usize, usize, f32)> {
        let rows = self.layer_rows(l);
        let mut pairs = Vec::new();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let s: f32 = rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum();
                pairs.push((i, j, s));
            }
        }
        pairs.sort_by(|a, b| b.2.total_cmp(&a.2));
        pairs.truncate(top);
        pairs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn code_from(values: &[f32], dims: &[usize]) -> StyleCode {
        // layer l holds `values` scaled by (l + 1) and repeated to dims[l]
        let codes = dims
            .iter()
            .enumerate()
            .map(|(l, &d)| {
                let rows: Vec<f32> = values
                    .iter()
                    .flat_map(|v| std::iter::repeat_n(v * (l as f32 + 1.0), d))
                    .collect();
                Tensor::from_vec(rows, (values.len(), d), &Device::Cpu).unwrap()
            })
            .collect();
        StyleCode::new(codes).unwrap()
    }

    #[test]
    fn single_push_sets_occupancy() {
        let mut bank = StyleBank::new(&[2, 3], 8).unwrap();
        assert_eq!(bank.negatives(DType::F32, &Device::Cpu).unwrap()[0].dims(), &[0, 2]);
        bank.push(&code_from(&[0.5], &[2, 3])).unwrap();
        assert_eq!(bank.occupancy(), 1);
        let neg = bank.negatives(DType::F32, &Device::Cpu).unwrap();
        assert_eq!(neg[1].to_vec2::<f32>().unwrap(), vec![vec![1.0; 3]]);
    }

    #[test]
    fn full_bank_evicts_oldest() {
        let mut bank = StyleBank::new(&[1], DEFAULT_CAPACITY).unwrap();
        for i in 0..DEFAULT_CAPACITY + 3 {
            bank.push(&code_from(&[i as f32], &[1])).unwrap();
        }
        assert_eq!(bank.occupancy(), DEFAULT_CAPACITY);
        let stored: Vec<f32> = bank.layer_rows(0).iter().map(|r| r[0]).collect();
        let expect: Vec<f32> = (3..DEFAULT_CAPACITY + 3).map(|i| i as f32).collect();
        assert_eq!(stored, expect);
    }

    #[test]
    fn overfull_negatives_are_capped() {
        let mut bank = StyleBank::new(&[2], DEFAULT_CAPACITY).unwrap();
        let batch: Vec<f32> = (0..100).map(|i| i as f32).collect();
        for _ in 0..50 {
            bank.push(&code_from(&batch, &[2])).unwrap();
        }
        assert_eq!(bank.negatives(DType::F32, &Device::Cpu).unwrap()[0].dims(), &[4096, 2]);
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let mut bank = StyleBank::new(&[2, 3], 8).unwrap();
        assert!(bank.push(&code_from(&[1.0], &[2, 4])).is_err());
    }

    #[test]
    fn negatives_do_not_alias_later_pushes() {
        let mut bank = StyleBank::new(&[1], 4).unwrap();
        bank.push(&code_from(&[1.0], &[1])).unwrap();
        let before = bank.negatives(DType::F32, &Device::Cpu).unwrap();
        bank.push(&code_from(&[2.0], &[1])).unwrap();
        assert_eq!(before[0].to_vec2::<f32>().unwrap(), vec![vec![1.0]]);
    }

    proptest! {
        #[test]
        fn matches_naive_list_model(capacity in 1usize..12, pushes in prop::collection::vec(prop::collection::vec(-5i32..5, 1..4), 0..20)) {
            let mut bank = StyleBank::new(&[1, 2], capacity).unwrap();
            let mut model: Vec<f32> = Vec::new();
            for batch in &pushes {
                let vals: Vec<f32> = batch.iter().map(|&v| v as f32).collect();
                bank.push(&code_from(&vals, &[1, 2])).unwrap();
                model.extend(&vals);
            }
            let keep = model.len().min(capacity);
            let expect = &model[model.len() - keep..];
            let got0: Vec<f32> = bank.layer_rows(0).iter().map(|r| r[0]).collect();
            let got1: Vec<f32> = bank.layer_rows(1).iter().map(|r| r[1]).collect();
            prop_assert_eq!(&got0[..], expect);
            let doubled: Vec<f32> = expect.iter().map(|v| v * 2.0).collect();
            prop_assert_eq!(got1, doubled);
            prop_assert_eq!(bank.occupancy(), keep);
        }
    }
}
