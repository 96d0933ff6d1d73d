//! Model identity: a bit-mask over the `p` candidate predictors. The
//! intercept is part of every model and never has a bit.

use crate::error::{BvsError, Result};

/// Largest supported predictor count (masks are `u32`).
pub const MAX_PREDICTORS: usize = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelIndicator {
    bits: u32,
    p: u8,
}

impl ModelIndicator {
    pub fn new(bits: u32, p: usize) -> Result<Self> {
        if p == 0 || p > MAX_PREDICTORS {
            return Err(BvsError::InvalidParameter(format!(
                "predictor count {p} outside 1..={MAX_PREDICTORS}"
            )));
        }
        if bits >> p != 0 {
            return Err(BvsError::InvalidParameter(format!(
                "mask {bits:#b} sets bits above p = {p}"
            )));
        }
        Ok(Self { bits, p: p as u8 })
    }

    pub fn null(p: usize) -> Result<Self> {
        Self::new(0, p)
    }

    pub fn full(p: usize) -> Result<Self> {
        Self::new(full_mask(p), p)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn p(&self) -> usize {
        self.p as usize
    }

    /// Model size `k`.
    pub fn size(&self) -> usize {
        self.bits.count_ones() as usize
    }

    /// Whether predictor `j` (0-based) is included.
    pub fn includes(&self, j: usize) -> bool {
        j < self.p() && (self.bits >> j) & 1 == 1
    }

    /// Included predictors in ascending order (0-based).
    pub fn predictors(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.p()).filter(move |&j| self.includes(j))
    }

    /// Design-matrix columns of this model: intercept (column 0) then
    /// predictor `j` at column `j + 1`.
    pub fn columns(&self) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.predictors().map(|j| j + 1))
            .collect()
    }

    /// Whether `self` strictly nests `other`.
    pub fn strictly_nests(&self, other: &ModelIndicator) -> bool {
        self.bits != other.bits && self.bits & other.bits == other.bits
    }
}

pub fn full_mask(p: usize) -> u32 {
    if p >= 32 {
        u32::MAX
    } else {
        (1u32 << p) - 1
    }
}

/// Number of models in the space, `2^p`.
pub fn model_count(p: usize) -> usize {
    1usize << p
}

/// All models in canonical (ascending mask) order.
pub fn all_models(p: usize) -> Result<impl Iterator<Item = ModelIndicator>> {
    ModelIndicator::null(p)?;
    Ok((0..model_count(p) as u32).map(move |bits| ModelIndicator { bits, p: p as u8 }))
}

/// Strict supersets of `mask` within `p` predictors.
pub fn strict_supersets(mask: u32, p: usize) -> impl Iterator<Item = u32> {
    let free = full_mask(p) & !mask;
    // enumerate non-empty submasks of `free` in descending order
    let mut sub = free;
    let mut done = free == 0;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let out = mask | sub;
        sub = (sub.wrapping_sub(1)) & free;
        if sub == 0 {
            done = true;
        }
        Some(out)
    })
}
