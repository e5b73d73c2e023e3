use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{Array, NumResult, NumericsError, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named learnable arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    arrays: Vec<Array<F>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            arrays: Vec::new(),
        }
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array<F>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.arrays.push(value);
        ParamId(self.arrays.len() - 1)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.insert(name, Array::zeros(rows, cols))
    }

    pub fn ones(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.insert(name, Array::filled(rows, cols, F::one()))
    }

    /// Glorot-uniform initialization.
    pub fn glorot(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bounds");
        let data = (0..rows * cols).map(|_| F::lit(dist.sample(rng))).collect();
        self.insert(name, Array::from_vec(rows, cols, data).expect("sized"))
    }

    pub fn normal(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| F::lit(dist.sample(rng))).collect();
        self.insert(name, Array::from_vec(rows, cols, data).expect("sized"))
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array<F> {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<F> {
        &mut self.arrays[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array<F>)> {
        self.names
            .iter()
            .zip(&self.arrays)
            .enumerate()
            .map(|(i, (n, a))| (ParamId(i), n.as_str(), a))
    }

    pub fn arrays(&self) -> &[Array<F>] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Array<F>] {
        &mut self.arrays
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            arrays: self.arrays.iter().map(Array::cast).collect(),
        }
    }

    /// Replaces every array with the same-named one from `other`, checking shapes.
    pub fn load_from(&mut self, other: &ParamStore<F>) -> NumResult<()> {
        for (i, name) in self.names.iter().enumerate() {
            let j = other
                .id_of(name)
                .ok_or_else(|| NumericsError::Invalid(format!("missing parameter {name}")))?;
            let src = other.get(j);
            if src.shape() != self.arrays[i].shape() {
                return Err(NumericsError::Invalid(format!(
                    "parameter {name}: shape {:?} does not match expected {:?}",
                    src.shape(),
                    self.arrays[i].shape()
                )));
            }
        }
        if let Some((_, extra, _)) = other.iter().find(|(_, n, _)| self.id_of(n).is_none()) {
            return Err(NumericsError::Invalid(format!("unexpected parameter {extra}")));
        }
        for (i, name) in self.names.iter().enumerate() {
            let j = other.id_of(name).expect("checked above");
            self.arrays[i] = other.get(j).clone();
        }
        Ok(())
    }
}

/// Per-parameter gradients, aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    pub grads: Vec<Array<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Gradients {
            grads: store
                .arrays()
                .iter()
                .map(|a| Array::zeros(a.rows(), a.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array<F> {
        &self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients<F>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: F) {
        for g in &mut self.grads {
            g.scale_in_place(s);
        }
    }
}
