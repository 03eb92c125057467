//! Shared molecule representation.

/// A molecule: positions in dataset length units (angstrom in files), atom
/// types as indices into an element vocabulary, and integer atom charges.
#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    /// Flat `M x 3` coordinates.
    pub positions: Vec<f64>,
    /// Vocabulary index per atom; each defines one one-hot row of width
    /// `n_types`.
    pub types: Vec<usize>,
    /// Integer charge per atom (the nuclear charge column of the file
    /// format).
    pub charges: Vec<i64>,
    /// One-hot width `K` (vocabulary size).
    pub n_types: usize,
}

impl Molecule {
    pub fn new(positions: Vec<f64>, types: Vec<usize>, charges: Vec<i64>, n_types: usize) -> Self {
        assert_eq!(positions.len(), types.len() * 3, "positions must be M x 3");
        assert_eq!(types.len(), charges.len(), "types and charges must have equal length");
        assert!(!types.is_empty(), "molecule must have at least one atom");
        assert!(types.iter().all(|&t| t < n_types), "type index out of vocabulary range");
        Molecule { positions, types, charges, n_types }
    }

    /// Number of atoms.
    pub fn size(&self) -> usize {
        self.types.len()
    }

    /// Dense `M x K` one-hot matrix; exactly one 1 per row.
    pub fn onehot(&self) -> Vec<f64> {
        let m = self.size();
        let mut out = vec![0.0; m * self.n_types];
        for (i, &t) in self.types.iter().enumerate() {
            out[i * self.n_types + t] = 1.0;
        }
        out
    }

    /// Pairwise Euclidean distances for atom pairs `i < j`, in position
    /// units.
    pub fn pairwise_distances(&self) -> Vec<f64> {
        let m = self.size();
        let mut out = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in (i + 1)..m {
                let a = &self.positions[i * 3..i * 3 + 3];
                let b = &self.positions[j * 3..j * 3 + 3];
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                out.push(d2.sqrt());
            }
        }
        out
    }
}
