use std::collections::HashSet;

use super::dataset::{Cell, Dataset};
use super::split::CellSplit;
use crate::error::{Error, Result};

/// One prediction task: the target cell plus the training-set history of its
/// drug row and disease column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BehaviorSample {
    pub drug: usize,
    pub disease: usize,
    /// `(disease, label)` pairs from the drug's row, ascending by disease.
    pub drug_seq: Vec<(usize, u8)>,
    /// `(drug, label)` pairs from the disease's column, ascending by drug.
    pub disease_seq: Vec<(usize, u8)>,
    pub label: u8,
}

impl BehaviorSample {
    pub fn target(&self) -> Cell {
        Cell::new(self.drug, self.disease)
    }
}

/// Per-row and per-column views of a split's training cells, built once and
/// shared by every sample drawn from that split.
#[derive(Clone, Debug)]
pub struct SequenceIndex {
    rows: Vec<Vec<(usize, u8)>>,
    cols: Vec<Vec<(usize, u8)>>,
    train: HashSet<Cell>,
    labels: Vec<u8>,
    n_diseases: usize,
}

impl SequenceIndex {
    pub fn new(ds: &Dataset, split: &CellSplit) -> Result<Self> {
        split.check_bounds(ds)?;
        let mut rows = vec![Vec::new(); ds.n_drugs()];
        let mut cols = vec![Vec::new(); ds.n_diseases()];
        // train cells are sorted row-major, so both views come out ascending
        for &c in &split.train {
            let y = ds.label(c);
            rows[c.drug].push((c.disease, y));
            cols[c.disease].push((c.drug, y));
        }
        Ok(Self {
            rows,
            cols,
            train: split.train.iter().copied().collect(),
            labels: ds.labels().to_vec(),
            n_diseases: ds.n_diseases(),
        })
    }

    pub fn in_train(&self, c: Cell) -> bool {
        self.train.contains(&c)
    }

    pub fn row(&self, drug: usize) -> &[(usize, u8)] {
        &self.rows[drug]
    }

    pub fn col(&self, disease: usize) -> &[(usize, u8)] {
        &self.cols[disease]
    }

    /// Sample for `target` with the target itself excluded from both
    /// sequences; valid for training cells as well as held-out ones.
    pub fn sample(&self, target: Cell) -> BehaviorSample {
        let drug_seq = self.rows[target.drug]
            .iter()
            .copied()
            .filter(|&(j, _)| j != target.disease)
            .collect();
        let disease_seq = self.cols[target.disease]
            .iter()
            .copied()
            .filter(|&(i, _)| i != target.drug)
            .collect();
        BehaviorSample {
            drug: target.drug,
            disease: target.disease,
            drug_seq,
            disease_seq,
            label: self.labels[target.drug * self.n_diseases + target.disease],
        }
    }
}

/// Builds the sample for a held-out `target`.
pub fn build_sample(ds: &Dataset, split: &CellSplit, target: Cell) -> Result<BehaviorSample> {
    if target.drug >= ds.n_drugs() || target.disease >= ds.n_diseases() {
        return Err(Error::Range(format!(
            "target ({}, {}) outside a {}x{} dataset",
            target.drug,
            target.disease,
            ds.n_drugs(),
            ds.n_diseases()
        )));
    }
    if split.train.binary_search(&target).is_ok() {
        return Err(Error::Contract(format!(
            "target ({}, {}) is a training cell",
            target.drug, target.disease
        )));
    }
    Ok(SequenceIndex::new(ds, split)?.sample(target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split::{coldstart_split, cv_split, split_folds};
    use crate::numcore::Tensor;
    use proptest::prelude::*;

    fn grid3() -> Dataset {
        let a = Tensor::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]]).unwrap();
        Dataset::new(&a, Tensor::eye(3), Tensor::eye(3), None, None).unwrap()
    }

    #[test]
    fn three_by_three_sequences() {
        let ds = grid3();
        let train: Vec<Cell> = ds.cells().filter(|&c| c != Cell::new(0, 0)).collect();
        let split = CellSplit::new(train, vec![Cell::new(0, 0)]).unwrap();
        let s = build_sample(&ds, &split, Cell::new(0, 0)).unwrap();
        assert_eq!(s.drug_seq, vec![(1, 0), (2, 1)]);
        assert_eq!(s.disease_seq, vec![(1, 0), (2, 1)]);
        assert_eq!(s.label, 1);
    }

    #[test]
    fn training_target_is_rejected() {
        let ds = grid3();
        let split = CellSplit::new(ds.cells().collect(), vec![]).unwrap();
        assert!(matches!(
            build_sample(&ds, &split, Cell::new(1, 1)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn cold_row_gives_empty_drug_sequence() {
        let a = Tensor::from_rows(&[
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        let ds = Dataset::new(&a, Tensor::eye(3), Tensor::eye(4), None, None).unwrap();
        let split = coldstart_split(&ds, 0, 9).unwrap().unwrap();
        let index = SequenceIndex::new(&ds, &split).unwrap();
        for m in 0..4 {
            let s = build_sample(&ds, &split, Cell::new(0, m)).unwrap();
            assert!(s.drug_seq.is_empty());
            assert_eq!(s.disease_seq, index.col(m).to_vec());
        }
    }

    /// Direct transcription of the sequence definition, evaluated by scanning
    /// the whole grid.
    fn brute_force(ds: &Dataset, train: &HashSet<Cell>, t: Cell) -> BehaviorSample {
        let mut drug_seq = Vec::new();
        for j in 0..ds.n_diseases() {
            let c = Cell::new(t.drug, j);
            if j != t.disease && train.contains(&c) {
                drug_seq.push((j, ds.label(c)));
            }
        }
        let mut disease_seq = Vec::new();
        for i in 0..ds.n_drugs() {
            let c = Cell::new(i, t.disease);
            if i != t.drug && train.contains(&c) {
                disease_seq.push((i, ds.label(c)));
            }
        }
        BehaviorSample {
            drug: t.drug,
            disease: t.disease,
            drug_seq,
            disease_seq,
            label: ds.label(t),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn samples_match_brute_force_and_never_leak(
            bits in proptest::collection::vec(prop::bool::weighted(0.25), 300),
            seed in any::<u64>(),
            fold in 0usize..10,
        ) {
            let data: Vec<f64> = bits.iter().map(|&b| f64::from(u8::from(b))).collect();
            let a = Tensor::new(vec![20, 15], data).unwrap();
            let ds = Dataset::new(&a, Tensor::eye(20), Tensor::eye(15), None, None).unwrap();
            prop_assume!(ds.positives() >= 10 && ds.positives() <= 150);
            let plan = split_folds(&ds, 10, seed).unwrap();
            let split = cv_split(&plan, fold).unwrap();
            let train: HashSet<Cell> = split.train.iter().copied().collect();
            let index = SequenceIndex::new(&ds, &split).unwrap();
            for &t in split.test.iter().chain(split.train.iter().take(20)) {
                let s = index.sample(t);
                prop_assert_eq!(&s, &brute_force(&ds, &train, t));
                for &(j, _) in &s.drug_seq {
                    let c = Cell::new(t.drug, j);
                    prop_assert!(c != t && train.contains(&c));
                }
                for &(i, _) in &s.disease_seq {
                    let c = Cell::new(i, t.disease);
                    prop_assert!(c != t && train.contains(&c));
                }
            }
        }
    }
}
