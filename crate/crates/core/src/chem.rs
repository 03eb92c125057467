//! Distance-based bond inference, valency stability metrics, and
//! distribution distances between molecule sets.
//!
//! Bond orders are predicted from inter-atomic distances against typical
//! bond lengths (picometers) with per-order margins. An atom is stable when
//! its valency (sum of inferred bond orders) equals an allowed value for its
//! element; a molecule is stable when all its atoms are.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use crate::error::{EdmError, Result};
use crate::molecule::Molecule;

/// Elements covered by the bond-distance tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    H,
    C,
    O,
    N,
    P,
    S,
    F,
    Si,
    Cl,
    Br,
    I,
    B,
    As,
    Al,
}

pub const ELEMENTS: [Element; 14] = [
    Element::H,
    Element::C,
    Element::O,
    Element::N,
    Element::P,
    Element::S,
    Element::F,
    Element::Si,
    Element::Cl,
    Element::Br,
    Element::I,
    Element::B,
    Element::As,
    Element::Al,
];

impl Element {
    pub fn from_symbol(sym: &str) -> Result<Element> {
        ELEMENTS
            .iter()
            .find(|e| e.symbol() == sym)
            .copied()
            .ok_or_else(|| EdmError::UnknownElement(sym.to_string()))
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::O => "O",
            Element::N => "N",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Si => "Si",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
            Element::B => "B",
            Element::As => "As",
            Element::Al => "Al",
        }
    }

    fn index(&self) -> usize {
        ELEMENTS.iter().position(|e| e == self).unwrap()
    }

    /// Allowed valencies (bond-order sums) per element.
    pub fn allowed_valencies(&self) -> &'static [u32] {
        match self {
            Element::H | Element::F | Element::Cl | Element::Br | Element::I => &[1],
            Element::O => &[2],
            Element::N | Element::B | Element::As | Element::Al => &[3],
            Element::C | Element::Si | Element::S => &[4],
            Element::P => &[3, 5],
        }
    }
}

// Typical bond distances in picometers, indexed [element][element] in the
// order of `ELEMENTS`. Zero means no bond of that order exists for the pair.
#[rustfmt::skip]
const SINGLE_PM: [[f64; 14]; 14] = [
    //        H     C     O     N     P     S     F    Si    Cl    Br     I     B    As   Al
    /*H */ [ 74.0,109.0, 96.0,101.0,144.0,134.0, 92.0,148.0,127.0,141.0,161.0,119.0,152.0, 0.0],
    /*C */ [109.0,154.0,143.0,147.0,184.0,182.0,135.0,185.0,177.0,194.0,214.0,  0.0,  0.0, 0.0],
    /*O */ [ 96.0,143.0,148.0,140.0,163.0,151.0,142.0,163.0,164.0,172.0,194.0,  0.0,  0.0, 0.0],
    /*N */ [101.0,147.0,140.0,145.0,177.0,168.0,136.0,  0.0,175.0,214.0,222.0,  0.0,  0.0, 0.0],
    /*P */ [144.0,184.0,163.0,177.0,221.0,210.0,156.0,  0.0,203.0,222.0,  0.0,  0.0,  0.0, 0.0],
    /*S */ [134.0,182.0,151.0,168.0,210.0,204.0,158.0,200.0,207.0,225.0,234.0,  0.0,  0.0, 0.0],
    /*F */ [ 92.0,135.0,142.0,136.0,156.0,158.0,142.0,160.0,166.0,178.0,187.0,  0.0,  0.0, 0.0],
    /*Si*/ [148.0,185.0,163.0,  0.0,  0.0,200.0,160.0,233.0,202.0,215.0,243.0,  0.0,  0.0, 0.0],
    /*Cl*/ [127.0,177.0,164.0,175.0,203.0,207.0,166.0,202.0,199.0,214.0,  0.0,175.0,  0.0, 0.0],
    /*Br*/ [141.0,194.0,172.0,214.0,222.0,225.0,178.0,215.0,214.0,228.0,  0.0,  0.0,  0.0, 0.0],
    /*I */ [161.0,214.0,194.0,222.0,  0.0,234.0,187.0,243.0,  0.0,  0.0,266.0,  0.0,  0.0, 0.0],
    /*B */ [119.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,175.0,  0.0,  0.0,  0.0,  0.0, 0.0],
    /*As*/ [152.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0, 0.0],
    /*Al*/ [  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0, 0.0],
];

#[rustfmt::skip]
const DOUBLE_PM: [[f64; 14]; 14] = {
    let mut t = [[0.0; 14]; 14];
    // C O N P S block (indices 1..=5 in ELEMENTS order C, O, N, P, S).
    t[1][1] = 134.0; t[1][2] = 120.0; t[1][3] = 129.0; t[1][5] = 160.0;
    t[2][1] = 120.0; t[2][2] = 121.0; t[2][3] = 121.0; t[2][4] = 150.0;
    t[3][1] = 129.0; t[3][2] = 121.0; t[3][3] = 125.0;
    t[4][2] = 150.0; t[4][5] = 186.0;
    t[5][1] = 160.0; t[5][4] = 186.0;
    t
};

#[rustfmt::skip]
const TRIPLE_PM: [[f64; 14]; 14] = {
    let mut t = [[0.0; 14]; 14];
    t[1][1] = 120.0; t[1][2] = 113.0; t[1][3] = 116.0;
    t[2][1] = 113.0;
    t[3][1] = 116.0; t[3][3] = 110.0;
    t
};

/// Typical-distance tables plus the margins added on top of them when
/// testing whether a pair is bonded.
#[derive(Debug, Clone, PartialEq)]
pub struct BondTables {
    /// Margins for single, double, triple bonds, in pm.
    pub margins: [f64; 3],
}

impl Default for BondTables {
    fn default() -> Self {
        BondTables { margins: [10.0, 5.0, 3.0] }
    }
}

impl BondTables {
    /// Typical distance in pm for a bond of `order` (1..=3) between two
    /// elements; `None` when no such bond exists. Lookup is symmetric.
    pub fn typical(&self, a: Element, b: Element, order: u8) -> Option<f64> {
        let table = match order {
            1 => &SINGLE_PM,
            2 => &DOUBLE_PM,
            3 => &TRIPLE_PM,
            _ => panic!("bond order must be 1..=3, got {order}"),
        };
        let v = table[a.index()][b.index()];
        (v > 0.0).then_some(v)
    }

    pub fn margin(&self, order: u8) -> f64 {
        self.margins[order as usize - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: u8,
}

/// Inferred bond multigraph: no self-edges, at most one edge per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BondGraph {
    pub n: usize,
    pub bonds: Vec<Bond>,
}

impl BondGraph {
    /// Sum of bond orders at each atom.
    pub fn valencies(&self) -> Vec<u32> {
        let mut v = vec![0u32; self.n];
        for bond in &self.bonds {
            v[bond.a] += bond.order as u32;
            v[bond.b] += bond.order as u32;
        }
        v
    }
}

/// Predict bonds from pairwise distances. Each pair is tested highest order
/// first (3, then 2, then 1); the first order whose table entry exists and
/// whose typical distance plus margin covers the observed distance is
/// assigned. `unit_to_pm` converts position units to picometers (100 for
/// angstrom).
pub fn infer_bonds(
    positions: &[f64],
    unit_to_pm: f64,
    elements: &[Element],
    tables: &BondTables,
) -> BondGraph {
    let n = elements.len();
    assert_eq!(positions.len(), n * 3, "positions must be M x 3");
    let mut bonds = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let pa = &positions[i * 3..i * 3 + 3];
            let pb = &positions[j * 3..j * 3 + 3];
            let d2: f64 = pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum();
            let dist_pm = d2.sqrt() * unit_to_pm;
            for order in (1..=3).rev() {
                if let Some(typ) = tables.typical(elements[i], elements[j], order) {
                    if dist_pm <= typ + tables.margin(order) {
                        bonds.push(Bond { a: i, b: j, order });
                        break;
                    }
                }
            }
        }
    }
    BondGraph { n, bonds }
}

/// Per-atom valency verdicts and the aggregate stability metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub valencies: Vec<u32>,
    pub atom_stable: Vec<bool>,
    pub atom_stable_fraction: f64,
    pub molecule_stable: bool,
}

pub fn stability(elements: &[Element], graph: &BondGraph, _tables: &BondTables) -> StabilityReport {
    assert_eq!(elements.len(), graph.n, "graph does not match the atom list");
    let valencies = graph.valencies();
    let atom_stable: Vec<bool> = elements
        .iter()
        .zip(&valencies)
        .map(|(e, v)| e.allowed_valencies().contains(v))
        .collect();
    let stable_count = atom_stable.iter().filter(|&&s| s).count();
    StabilityReport {
        atom_stable_fraction: stable_count as f64 / elements.len() as f64,
        molecule_stable: stable_count == elements.len(),
        valencies,
        atom_stable,
    }
}

/// Normalized histogram over a fixed uniform binning.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub probs: Vec<f64>,
}

/// Binning for inter-atomic distance histograms: 100 uniform bins over
/// [0, 1500] pm, with additive smoothing 1e-10 before normalization.
pub const DISTANCE_BINS: usize = 100;
pub const DISTANCE_RANGE_PM: (f64, f64) = (0.0, 1500.0);
const HISTOGRAM_SMOOTHING: f64 = 1e-10;

/// Histogram of relative distances between all atom pairs within each
/// molecule, pooled over the set. Distances beyond the range land in the
/// last bin.
pub fn distance_histogram(mols: &[Molecule], unit_to_pm: f64) -> Histogram {
    let (lo, hi) = DISTANCE_RANGE_PM;
    let mut counts = vec![HISTOGRAM_SMOOTHING; DISTANCE_BINS];
    let width = (hi - lo) / DISTANCE_BINS as f64;
    for mol in mols {
        for d in mol.pairwise_distances() {
            let pm = d * unit_to_pm;
            let bin = (((pm - lo) / width).floor().max(0.0) as usize).min(DISTANCE_BINS - 1);
            counts[bin] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    for c in &mut counts {
        *c /= total;
    }
    Histogram { lo, hi, probs: counts }
}

/// Jensen-Shannon divergence (natural log) between two normalized
/// histograms over identical bins. Lies in [0, ln 2].
pub fn js_divergence(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.probs.len() != b.probs.len() || a.lo != b.lo || a.hi != b.hi {
        return Err(EdmError::Contract(format!(
            "histogram bins differ: {} bins on [{}, {}] vs {} bins on [{}, {}]",
            a.probs.len(),
            a.lo,
            a.hi,
            b.probs.len(),
            b.lo,
            b.hi
        )));
    }
    fn kl_term(p: f64, m: f64) -> f64 {
        if p > 0.0 {
            p * (p / m).ln()
        } else {
            0.0
        }
    }
    let mut js = 0.0;
    for (&p, &q) in a.probs.iter().zip(&b.probs) {
        let m = 0.5 * (p + q);
        if m > 0.0 {
            js += 0.5 * kl_term(p, m) + 0.5 * kl_term(q, m);
        }
    }
    Ok(js)
}

/// 1-D Wasserstein-1 distance between two empirical samples via the
/// quantile coupling of their empirical CDFs. Handles unequal sample
/// counts.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(EdmError::EmptyInput("wasserstein1 needs nonempty samples".into()));
    }
    let mut av = a.to_vec();
    let mut bv = b.to_vec();
    av.sort_by(|x, y| x.partial_cmp(y).unwrap());
    bv.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut all: Vec<f64> = av.iter().chain(bv.iter()).copied().collect();
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let na = av.len() as f64;
    let nb = bv.len() as f64;
    let mut w = 0.0;
    for k in 0..all.len() - 1 {
        let v0 = all[k];
        let v1 = all[k + 1];
        if v1 <= v0 {
            continue;
        }
        let fa = av.partition_point(|&x| x <= v0) as f64 / na;
        let fb = bv.partition_point(|&x| x <= v0) as f64 / nb;
        w += (fa - fb).abs() * (v1 - v0);
    }
    Ok(w)
}

/// Canonical hash of (element multiset + bond multigraph) by iterative
/// neighborhood refinement: stable under any relabeling of the atoms.
pub fn canonical_hash(elements: &[Element], graph: &BondGraph) -> u64 {
    let n = elements.len();
    assert_eq!(n, graph.n, "graph does not match the atom list");
    let mut adjacency: Vec<Vec<(u8, usize)>> = vec![Vec::new(); n];
    for bond in &graph.bonds {
        adjacency[bond.a].push((bond.order, bond.b));
        adjacency[bond.b].push((bond.order, bond.a));
    }
    let mut labels: Vec<u64> = elements
        .iter()
        .map(|e| {
            let mut h = DefaultHasher::new();
            e.symbol().hash(&mut h);
            h.finish()
        })
        .collect();
    for _ in 0..n {
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let mut neighborhood: Vec<(u8, u64)> =
                adjacency[i].iter().map(|&(order, j)| (order, labels[j])).collect();
            neighborhood.sort_unstable();
            let mut h = DefaultHasher::new();
            labels[i].hash(&mut h);
            neighborhood.hash(&mut h);
            next.push(h.finish());
        }
        labels = next;
    }
    labels.sort_unstable();
    let mut h = DefaultHasher::new();
    labels.hash(&mut h);
    h.finish()
}

/// Fraction of structurally distinct molecules under [`canonical_hash`].
pub fn uniqueness_fraction(items: &[(Vec<Element>, BondGraph)]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let distinct: HashSet<u64> =
        items.iter().map(|(els, graph)| canonical_hash(els, graph)).collect();
    distinct.len() as f64 / items.len() as f64
}
