//! Empirical distributions over molecule size and (property bin, size).

use rand::Rng;

use crate::error::{EdmError, Result};
use crate::molecule::Molecule;

/// Categorical distribution `p(M)` of molecule sizes fitted on a training
/// set. Support covers only observed sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeDistribution {
    sizes: Vec<usize>,
    probs: Vec<f64>,
}

impl SizeDistribution {
    pub fn fit(mols: &[Molecule]) -> Result<Self> {
        if mols.is_empty() {
            return Err(EdmError::EmptyInput("size distribution needs a nonempty dataset".into()));
        }
        let mut counts = std::collections::BTreeMap::new();
        for m in mols {
            *counts.entry(m.size()).or_insert(0usize) += 1;
        }
        let total = mols.len() as f64;
        let sizes: Vec<usize> = counts.keys().copied().collect();
        let probs: Vec<f64> = counts.values().map(|&c| c as f64 / total).collect();
        Ok(SizeDistribution { sizes, probs })
    }

    pub fn from_parts(sizes: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if sizes.is_empty() || sizes.len() != probs.len() {
            return Err(EdmError::Checkpoint("malformed size distribution".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(EdmError::Checkpoint(format!("size probabilities sum to {total}, not 1")));
        }
        Ok(SizeDistribution { sizes, probs })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `ln p(M)`; `-inf` outside the support.
    pub fn log_prob(&self, m: usize) -> f64 {
        match self.sizes.iter().position(|&s| s == m) {
            Some(i) => self.probs[i].ln(),
            None => f64::NEG_INFINITY,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut r = rng.gen::<f64>();
        for (&s, &p) in self.sizes.iter().zip(&self.probs) {
            r -= p;
            if r <= 0.0 {
                return s;
            }
        }
        *self.sizes.last().unwrap()
    }
}

/// Joint categorical over (property bin, molecule size) with uniform-width
/// bins over the observed property range.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionDistribution {
    lo: f64,
    hi: f64,
    n_bins: usize,
    sizes: Vec<usize>,
    /// Row-major `n_bins x sizes.len()`, sums to 1.
    probs: Vec<f64>,
}

impl ConditionDistribution {
    pub fn fit(mols: &[Molecule], values: &[f64], n_bins: usize) -> Result<Self> {
        if mols.is_empty() || mols.len() != values.len() {
            return Err(EdmError::EmptyInput(
                "condition distribution needs one property value per molecule".into(),
            ));
        }
        assert!(n_bins >= 1, "need at least one bin");
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            // Degenerate range: widen so the single value keeps its center.
            hi = lo + 1e-9_f64.max(lo.abs() * 1e-12);
        }
        let mut size_set = std::collections::BTreeSet::new();
        for m in mols {
            size_set.insert(m.size());
        }
        let sizes: Vec<usize> = size_set.into_iter().collect();
        let mut probs = vec![0.0; n_bins * sizes.len()];
        let mut this = ConditionDistribution { lo, hi, n_bins, sizes, probs: Vec::new() };
        for (mol, &v) in mols.iter().zip(values) {
            let b = this.bin_of(v);
            let s = this.sizes.iter().position(|&x| x == mol.size()).unwrap();
            probs[b * this.sizes.len() + s] += 1.0;
        }
        let total = mols.len() as f64;
        for p in &mut probs {
            *p /= total;
        }
        this.probs = probs;
        Ok(this)
    }

    pub fn from_parts(lo: f64, hi: f64, n_bins: usize, sizes: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if sizes.is_empty() || probs.len() != n_bins * sizes.len() {
            return Err(EdmError::Checkpoint("malformed condition distribution".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(EdmError::Checkpoint(format!("condition probabilities sum to {total}, not 1")));
        }
        Ok(ConditionDistribution { lo, hi, n_bins, sizes, probs })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn bin_of(&self, c: f64) -> usize {
        let width = (self.hi - self.lo) / self.n_bins as f64;
        let b = ((c - self.lo) / width).floor();
        (b.max(0.0) as usize).min(self.n_bins - 1)
    }

    pub fn bin_center(&self, b: usize) -> f64 {
        let width = (self.hi - self.lo) / self.n_bins as f64;
        self.lo + (b as f64 + 0.5) * width
    }

    /// Joint draw `(c, M)`; the property comes back as its bin center.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, usize) {
        let mut r = rng.gen::<f64>();
        for (i, &p) in self.probs.iter().enumerate() {
            r -= p;
            if r <= 0.0 {
                return (self.bin_center(i / self.sizes.len()), self.sizes[i % self.sizes.len()]);
            }
        }
        let last = self.probs.len() - 1;
        (self.bin_center(last / self.sizes.len()), self.sizes[last % self.sizes.len()])
    }

    /// Draw a size conditioned on the bin containing `c`. Rejected when the
    /// training set put no mass in that bin.
    pub fn sample_size_given<R: Rng + ?Sized>(&self, c: f64, rng: &mut R) -> Result<usize> {
        let b = self.bin_of(c);
        let row = &self.probs[b * self.sizes.len()..(b + 1) * self.sizes.len()];
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            return Err(EdmError::Contract(format!(
                "no training mass in the property bin containing c = {c}"
            )));
        }
        let mut r = rng.gen::<f64>() * total;
        for (s, &p) in self.sizes.iter().zip(row) {
            r -= p;
            if r <= 0.0 {
                return Ok(*s);
            }
        }
        Ok(*self.sizes.last().unwrap())
    }

    /// Marginal over the property: the plain size distribution.
    pub fn marginal_sizes(&self) -> SizeDistribution {
        let mut probs = vec![0.0; self.sizes.len()];
        for b in 0..self.n_bins {
            for (s, p) in probs.iter_mut().enumerate() {
                *p += self.probs[b * self.sizes.len() + s];
            }
        }
        SizeDistribution { sizes: self.sizes.clone(), probs }
    }
}
