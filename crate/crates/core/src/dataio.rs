//! Dataset ingestion: extended-XYZ molecules with charges and optional
//! property values, deterministic splits, and the synthetic rigid-body
//! dataset used by the acceptance tests.
//!
//! File grammar, per molecule: line 1 is the atom count; line 2 holds
//! optional `key=value` property pairs (may be empty); then M lines of
//! `ELEMENT x y z charge`. Positions are in angstrom.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::chem::Element;
use crate::error::{EdmError, Result};
use crate::geometry;
use crate::molecule::Molecule;

/// File positions are angstrom; bond inference works in picometers.
pub const ANGSTROM_TO_PM: f64 = 100.0;

/// Parsed molecules with their property maps and the element vocabulary
/// that defines one-hot indexing. Vocabulary order is stable and travels
/// with checkpoints; one-hot semantics must never drift between training
/// and sampling.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub molecules: Vec<Molecule>,
    /// Per-molecule `key=value` properties, parallel to `molecules`.
    pub properties: Vec<BTreeMap<String, f64>>,
    pub vocab: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    /// Element per atom of one molecule.
    pub fn elements(&self, mol: &Molecule) -> Result<Vec<Element>> {
        mol.types.iter().map(|&t| Element::from_symbol(&self.vocab[t])).collect()
    }

    /// Property column shared by every molecule, or `None` if any molecule
    /// lacks it.
    pub fn property_column(&self, name: &str) -> Option<Vec<f64>> {
        self.properties.iter().map(|p| p.get(name).copied()).collect()
    }

    /// Property names present on every molecule.
    pub fn shared_property_names(&self) -> Vec<String> {
        let Some(first) = self.properties.first() else {
            return Vec::new();
        };
        first
            .keys()
            .filter(|k| self.properties.iter().all(|p| p.contains_key(*k)))
            .cloned()
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            molecules: indices.iter().map(|&i| self.molecules[i].clone()).collect(),
            properties: indices.iter().map(|&i| self.properties[i].clone()).collect(),
            vocab: self.vocab.clone(),
        }
    }
}

struct RawMolecule {
    symbols: Vec<String>,
    positions: Vec<f64>,
    charges: Vec<i64>,
    properties: BTreeMap<String, f64>,
}

/// Parse extended-XYZ text. With `vocab`, element symbols must come from it
/// and define the one-hot indexing; without, the vocabulary is built in
/// first-appearance order. Malformed input is rejected with a line number.
pub fn parse_extended_xyz(text: &str, vocab: Option<&[String]>) -> Result<Dataset> {
    let lines: Vec<&str> = text.lines().collect();
    let mut raw = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let header_line = i + 1;
        let m: usize = lines[i].trim().parse().map_err(|_| EdmError::Parse {
            line: header_line,
            msg: format!("bad atom count header `{}`", lines[i].trim()),
        })?;
        if m == 0 {
            return Err(EdmError::Parse {
                line: header_line,
                msg: "molecule must have at least one atom".into(),
            });
        }
        i += 1;
        if i >= lines.len() {
            return Err(EdmError::Parse {
                line: header_line,
                msg: "missing property line after atom count".into(),
            });
        }
        let properties = parse_properties(lines[i], i + 1)?;
        i += 1;
        if i + m > lines.len() {
            return Err(EdmError::Parse {
                line: header_line,
                msg: format!(
                    "molecule declares {m} atoms but only {} atom lines follow",
                    lines.len() - i
                ),
            });
        }
        let mut symbols = Vec::with_capacity(m);
        let mut positions = Vec::with_capacity(m * 3);
        let mut charges = Vec::with_capacity(m);
        for k in 0..m {
            let line_no = i + k + 1;
            let fields: Vec<&str> = lines[i + k].split_whitespace().collect();
            if fields.len() != 5 {
                return Err(EdmError::Parse {
                    line: line_no,
                    msg: format!("expected `ELEMENT x y z charge`, got {} fields", fields.len()),
                });
            }
            // Reject symbols outside the known element set early.
            Element::from_symbol(fields[0]).map_err(|_| EdmError::Parse {
                line: line_no,
                msg: format!("unknown element symbol `{}`", fields[0]),
            })?;
            symbols.push(fields[0].to_string());
            for f in &fields[1..4] {
                positions.push(f.parse::<f64>().map_err(|_| EdmError::Parse {
                    line: line_no,
                    msg: format!("non-numeric coordinate `{f}`"),
                })?);
            }
            charges.push(fields[4].parse::<i64>().map_err(|_| EdmError::Parse {
                line: line_no,
                msg: format!("non-integer charge `{}`", fields[4]),
            })?);
        }
        raw.push((header_line, RawMolecule { symbols, positions, charges, properties }));
        i += m;
    }

    let vocab: Vec<String> = match vocab {
        Some(v) => v.to_vec(),
        None => {
            let mut v: Vec<String> = Vec::new();
            for (_, mol) in &raw {
                for s in &mol.symbols {
                    if !v.contains(s) {
                        v.push(s.clone());
                    }
                }
            }
            v
        }
    };

    let mut molecules = Vec::with_capacity(raw.len());
    let mut properties = Vec::with_capacity(raw.len());
    for (header_line, mol) in raw {
        let types: Vec<usize> = mol
            .symbols
            .iter()
            .map(|s| {
                vocab.iter().position(|v| v == s).ok_or_else(|| EdmError::Parse {
                    line: header_line,
                    msg: format!("element `{s}` is not in the vocabulary {vocab:?}"),
                })
            })
            .collect::<Result<_>>()?;
        molecules.push(Molecule::new(mol.positions, types, mol.charges, vocab.len()));
        properties.push(mol.properties);
    }
    Ok(Dataset { molecules, properties, vocab })
}

fn parse_properties(line: &str, line_no: usize) -> Result<BTreeMap<String, f64>> {
    let mut props = BTreeMap::new();
    for token in line.split_whitespace() {
        let (key, value) = token.split_once('=').ok_or_else(|| EdmError::Parse {
            line: line_no,
            msg: format!("property `{token}` is not of the form key=value"),
        })?;
        let v: f64 = value.parse().map_err(|_| EdmError::Parse {
            line: line_no,
            msg: format!("non-numeric property value `{value}`"),
        })?;
        props.insert(key.to_string(), v);
    }
    Ok(props)
}

/// Serialize to extended-XYZ. Floats use shortest round-trip formatting, so
/// emit -> parse reproduces coordinates exactly.
pub fn emit_extended_xyz(dataset: &Dataset) -> String {
    let mut out = String::new();
    for (mol, props) in dataset.molecules.iter().zip(&dataset.properties) {
        out.push_str(&format!("{}\n", mol.size()));
        let prop_line: Vec<String> = props.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out.push_str(&prop_line.join(" "));
        out.push('\n');
        for i in 0..mol.size() {
            let p = &mol.positions[i * 3..i * 3 + 3];
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                dataset.vocab[mol.types[i]],
                p[0],
                p[1],
                p[2],
                mol.charges[i]
            ));
        }
    }
    out
}

/// Center every molecule's positions; pairwise distances are untouched.
pub fn center_dataset(d: &Dataset) -> Dataset {
    let molecules = d
        .molecules
        .iter()
        .map(|m| {
            let mut mol = m.clone();
            geometry::remove_cog_in_place(&mut mol.positions);
            mol
        })
        .collect();
    Dataset { molecules, properties: d.properties.clone(), vocab: d.vocab.clone() }
}

/// Template for the toy rigid dataset: an isoceles triangle of two hydrogens
/// and one oxygen (angstrom), already centered.
pub fn toy_template() -> Molecule {
    let mut positions = vec![-0.8, 0.0, 0.0, 0.8, 0.0, 0.0, 0.0, 0.6, 0.0];
    geometry::remove_cog_in_place(&mut positions);
    Molecule::new(positions, vec![0, 0, 1], vec![1, 1, 8], 2)
}

/// `n` copies of the fixed 3-atom template, each independently rotated by a
/// random orthogonal transform (reflections included with probability 1/2)
/// and centered. Every sample shares the same pairwise-distance multiset and
/// element multiset.
pub fn make_toy_rigid_dataset<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Dataset {
    assert!(n >= 1, "need at least one molecule");
    let template = toy_template();
    let mut molecules = Vec::with_capacity(n);
    for _ in 0..n {
        let r = geometry::random_orthogonal(rng, true);
        let mut positions = geometry::apply_orthogonal(&r, &template.positions);
        geometry::remove_cog_in_place(&mut positions);
        molecules.push(Molecule::new(
            positions,
            template.types.clone(),
            template.charges.clone(),
            template.n_types,
        ));
    }
    let properties = vec![BTreeMap::new(); n];
    Dataset { molecules, properties, vocab: vec!["H".into(), "O".into()] }
}

/// Deterministic shuffled split by fractions (must sum to 1).
pub fn split_fractions(
    d: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fe) = fractions;
    if (ft + fv + fe - 1.0).abs() > 1e-9 || ft < 0.0 || fv < 0.0 || fe < 0.0 {
        return Err(EdmError::Contract(format!(
            "split fractions must be nonnegative and sum to 1, got ({ft}, {fv}, {fe})"
        )));
    }
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = ((ft * n as f64).round() as usize).min(n);
    let n_val = ((fv * n as f64).round() as usize).min(n - n_train);
    let (train_idx, rest) = order.split_at(n_train);
    let (val_idx, test_idx) = rest.split_at(n_val);
    Ok((d.subset(train_idx), d.subset(val_idx), d.subset(test_idx)))
}

/// Split from an index file of three labeled lines of comma-separated
/// zero-based indices: `train: ...`, `val: ...`, `test: ...`. Indices must
/// be disjoint and cover the dataset.
pub fn split_index_file(d: &Dataset, text: &str) -> Result<(Dataset, Dataset, Dataset)> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (label, rest) = line.split_once(':').ok_or_else(|| EdmError::Parse {
            line: lineno + 1,
            msg: "expected `train:`, `val:` or `test:` prefix".into(),
        })?;
        let label = label.trim();
        if !matches!(label, "train" | "val" | "test") {
            return Err(EdmError::Parse {
                line: lineno + 1,
                msg: format!("unknown split label `{label}`"),
            });
        }
        let mut indices = Vec::new();
        for tok in rest.split(',') {
            let tok = tok.trim();
            if tok.is_empty() {
                continue;
            }
            let idx: usize = tok.parse().map_err(|_| EdmError::Parse {
                line: lineno + 1,
                msg: format!("bad index `{tok}`"),
            })?;
            if idx >= d.len() {
                return Err(EdmError::Parse {
                    line: lineno + 1,
                    msg: format!("index {idx} out of range for {} molecules", d.len()),
                });
            }
            indices.push(idx);
        }
        groups.insert(label, indices);
    }
    let train = groups.remove("train").unwrap_or_default();
    let val = groups.remove("val").unwrap_or_default();
    let test = groups.remove("test").unwrap_or_default();
    let mut seen = vec![false; d.len()];
    for &i in train.iter().chain(&val).chain(&test) {
        if seen[i] {
            return Err(EdmError::Contract(format!("index {i} appears in more than one split")));
        }
        seen[i] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(EdmError::Contract(format!(
            "index {missing} is not assigned to any split"
        )));
    }
    Ok((d.subset(&train), d.subset(&val), d.subset(&test)))
}
