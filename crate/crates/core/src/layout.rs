//! Variable layout: the partition of system scalars into slow continuous,
//! slow discrete, fast, and algebraic classes, with stable names.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::LayoutError;

/// Partition class of a scalar variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarClass {
    /// Slow continuous state (governor stages, limiter integrators, load recovery).
    SlowContinuous,
    /// Slow discrete state (transformer tap ratios).
    SlowDiscrete,
    /// Fast continuous state (machine and regulator dynamics).
    Fast,
    /// Algebraic variable (couplings, powers, bus voltages and angles).
    Algebraic,
}

impl VarClass {
    pub const ALL: [VarClass; 4] = [
        VarClass::SlowContinuous,
        VarClass::SlowDiscrete,
        VarClass::Fast,
        VarClass::Algebraic,
    ];
}

impl fmt::Display for VarClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VarClass::SlowContinuous => "z_c",
            VarClass::SlowDiscrete => "z_d",
            VarClass::Fast => "x",
            VarClass::Algebraic => "y",
        };
        f.write_str(s)
    }
}

/// Immutable name map for the flat state vector.
///
/// The flat vector is ordered `[z_c | z_d | x | y]`; every scalar has a unique
/// `device.variable` name. Construction checks the bijection.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    names: Vec<String>,
    class_of: Vec<VarClass>,
    // offsets into the flat vector, in partition order
    n_slow: usize,
    n_discrete: usize,
    n_fast: usize,
    n_alg: usize,
    index: HashMap<String, usize>,
}

impl Layout {
    /// Build a layout from per-class name lists. Fails on duplicate names.
    pub fn new(
        slow: Vec<String>,
        discrete: Vec<String>,
        fast: Vec<String>,
        algebraic: Vec<String>,
    ) -> Result<Self, LayoutError> {
        let n_slow = slow.len();
        let n_discrete = discrete.len();
        let n_fast = fast.len();
        let n_alg = algebraic.len();
        let mut names = Vec::with_capacity(n_slow + n_discrete + n_fast + n_alg);
        let mut class_of = Vec::with_capacity(names.capacity());
        for (list, class) in [
            (slow, VarClass::SlowContinuous),
            (discrete, VarClass::SlowDiscrete),
            (fast, VarClass::Fast),
            (algebraic, VarClass::Algebraic),
        ] {
            for n in list {
                names.push(n);
                class_of.push(class);
            }
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(LayoutError::DuplicateName(n.clone()));
            }
        }
        Ok(Self {
            names,
            class_of,
            n_slow,
            n_discrete,
            n_fast,
            n_alg,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn n_slow(&self) -> usize {
        self.n_slow
    }

    pub fn n_discrete(&self) -> usize {
        self.n_discrete
    }

    pub fn n_fast(&self) -> usize {
        self.n_fast
    }

    pub fn n_algebraic(&self) -> usize {
        self.n_alg
    }

    pub fn dim_of(&self, class: VarClass) -> usize {
        match class {
            VarClass::SlowContinuous => self.n_slow,
            VarClass::SlowDiscrete => self.n_discrete,
            VarClass::Fast => self.n_fast,
            VarClass::Algebraic => self.n_alg,
        }
    }

    /// Start offset of a partition in the flat vector.
    pub fn offset_of(&self, class: VarClass) -> usize {
        match class {
            VarClass::SlowContinuous => 0,
            VarClass::SlowDiscrete => self.n_slow,
            VarClass::Fast => self.n_slow + self.n_discrete,
            VarClass::Algebraic => self.n_slow + self.n_discrete + self.n_fast,
        }
    }

    pub fn range_of(&self, class: VarClass) -> std::ops::Range<usize> {
        let o = self.offset_of(class);
        o..o + self.dim_of(class)
    }

    /// Flat index of a named scalar.
    pub fn index_of(&self, name: &str) -> Result<usize, LayoutError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| LayoutError::UnknownName(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn class_of(&self, flat: usize) -> VarClass {
        self.class_of[flat]
    }

    pub fn name_of(&self, flat: usize) -> &str {
        &self.names[flat]
    }

    /// All names in flat order (z_c, z_d, x, y).
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Names of one partition, in order.
    pub fn names_of(&self, class: VarClass) -> &[String] {
        &self.names[self.range_of(class)]
    }

    /// Index within the fast partition of a named fast variable.
    pub fn fast_index_of(&self, name: &str) -> Result<usize, LayoutError> {
        let i = self.index_of(name)?;
        if self.class_of[i] != VarClass::Fast {
            return Err(LayoutError::WrongClass {
                name: name.to_string(),
                expected: VarClass::Fast,
                actual: self.class_of[i],
            });
        }
        Ok(i - self.offset_of(VarClass::Fast))
    }
}

/// One point of the model: flat values plus the shared layout dimensions.
///
/// States are cheap to clone and are treated as immutable snapshots; all
/// evaluation functions take `&PartitionedState` and write into caller
/// buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedState {
    values: Vec<f64>,
    n_slow: usize,
    n_discrete: usize,
    n_fast: usize,
}

impl PartitionedState {
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            values: vec![0.0; layout.dim()],
            n_slow: layout.n_slow(),
            n_discrete: layout.n_discrete(),
            n_fast: layout.n_fast(),
        }
    }

    pub fn from_flat(layout: &Layout, values: Vec<f64>) -> Result<Self, LayoutError> {
        if values.len() != layout.dim() {
            return Err(LayoutError::DimensionMismatch {
                expected: layout.dim(),
                actual: values.len(),
            });
        }
        Ok(Self {
            values,
            n_slow: layout.n_slow(),
            n_discrete: layout.n_discrete(),
            n_fast: layout.n_fast(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slow(&self) -> &[f64] {
        &self.values[..self.n_slow]
    }

    pub fn slow_mut(&mut self) -> &mut [f64] {
        &mut self.values[..self.n_slow]
    }

    pub fn discrete(&self) -> &[f64] {
        &self.values[self.n_slow..self.n_slow + self.n_discrete]
    }

    pub fn discrete_mut(&mut self) -> &mut [f64] {
        &mut self.values[self.n_slow..self.n_slow + self.n_discrete]
    }

    pub fn fast(&self) -> &[f64] {
        let o = self.n_slow + self.n_discrete;
        &self.values[o..o + self.n_fast]
    }

    pub fn fast_mut(&mut self) -> &mut [f64] {
        let o = self.n_slow + self.n_discrete;
        &mut self.values[o..o + self.n_fast]
    }

    pub fn algebraic(&self) -> &[f64] {
        &self.values[self.n_slow + self.n_discrete + self.n_fast..]
    }

    pub fn algebraic_mut(&mut self) -> &mut [f64] {
        &mut self.values[self.n_slow + self.n_discrete + self.n_fast..]
    }

    pub fn get(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    pub fn set(&mut self, flat: usize, v: f64) {
        self.values[flat] = v;
    }

    /// Sup-norm distance over the fast and algebraic partitions.
    pub fn fast_algebraic_distance(&self, other: &PartitionedState) -> f64 {
        let o = self.n_slow + self.n_discrete;
        self.values[o..]
            .iter()
            .zip(&other.values[o..])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Sup-norm distance over the entire flat vector.
    pub fn distance(&self, other: &PartitionedState) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn layout_is_a_bijection() {
        let l = Layout::new(
            names(&["tg1.x_g1"]),
            names(&["ltc1.m"]),
            names(&["gen1.delta", "gen1.omega"]),
            names(&["bus1.v", "bus1.theta"]),
        )
        .unwrap();
        assert_eq!(l.dim(), 6);
        // every scalar belongs to exactly one class and round-trips by name
        for i in 0..l.dim() {
            let n = l.name_of(i).to_string();
            assert_eq!(l.index_of(&n).unwrap(), i);
        }
        assert_eq!(l.range_of(VarClass::Fast), 2..4);
        assert_eq!(l.fast_index_of("gen1.omega").unwrap(), 1);
        assert!(l.fast_index_of("bus1.v").is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = Layout::new(names(&["a.x"]), vec![], names(&["a.x"]), vec![]).unwrap_err();
        assert!(matches!(err, LayoutError::DuplicateName(_)));
    }

    #[test]
    fn state_partitions_slice_in_order() {
        let l = Layout::new(
            names(&["s1", "s2"]),
            names(&["d1"]),
            names(&["f1"]),
            names(&["a1", "a2"]),
        )
        .unwrap();
        let mut s = PartitionedState::zeros(&l);
        for i in 0..6 {
            s.set(i, i as f64);
        }
        assert_eq!(s.slow(), &[0.0, 1.0]);
        assert_eq!(s.discrete(), &[2.0]);
        assert_eq!(s.fast(), &[3.0]);
        assert_eq!(s.algebraic(), &[4.0, 5.0]);
    }
}
