//! Named parameter arrays and gradient collections.

use indexmap::IndexMap;

use crate::error::{check_dim, Error, Result};
use crate::numcore::Matrix;

/// Anything that owns named parameter arrays in a fixed order.
pub trait Parameterized {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Matrix));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, m| n += m.len());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _| names.push(name));
        names
    }

    /// Concatenation of every array in visiting order.
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(&mut |_, m| out.extend_from_slice(m.data()));
        out
    }

    fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("set_from_flat", self.param_count(), flat.len())?;
        let mut offset = 0;
        self.visit_params_mut(&mut |_, m| {
            let n = m.len();
            m.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }

    fn sum_sq_params(&self) -> f64 {
        let mut s = 0.0;
        self.visit_params(&mut |_, m| s += m.sum_sq());
        s
    }
}

/// Parameter id → gradient array, ordered as the parameters are visited.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientSet {
    entries: IndexMap<String, Matrix>,
}

impl GradientSet {
    pub fn new() -> Self {
        GradientSet::default()
    }

    /// Copies every array of `p` under its parameter id.
    pub fn collect(p: &dyn Parameterized) -> Self {
        let mut g = GradientSet::new();
        p.visit_params(&mut |name, m| {
            g.entries.insert(name, m.clone());
        });
        g
    }

    pub fn insert(&mut self, name: String, grad: Matrix) {
        self.entries.insert(name, grad);
    }

    /// Appends all entries of `other`; ids must be disjoint.
    pub fn extend(&mut self, other: GradientSet) -> Result<()> {
        for (k, v) in other.entries {
            if self.entries.contains_key(&k) {
                return Err(Error::InvalidArgument(format!("duplicate gradient id {k}")));
            }
            self.entries.insert(k, v);
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// `self += alpha · other`; both sets must carry the same ids and shapes.
    pub fn add_scaled(&mut self, alpha: f64, other: &GradientSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::InvalidArgument(
                "gradient sets cover different parameters".into(),
            ));
        }
        for (k, v) in self.entries.iter_mut() {
            let o = other
                .entries
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("missing gradient id {k}")))?;
            v.axpy(alpha, o)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.entries.values_mut().for_each(|m| m.scale(alpha));
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.entries.values().flat_map(|m| m.data().iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Matrix::is_finite)
    }
}
