use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{Cell, Dataset};
use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 10;

/// Mixes a base seed with stream identifiers (repeat, fold, ...) into an
/// independent seed.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    stream
        .iter()
        .fold(splitmix(base), |acc, &s| splitmix(acc ^ splitmix(s)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Train/test partition of association cells. Both lists are sorted and
/// duplicate-free.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellSplit {
    pub train: Vec<Cell>,
    pub test: Vec<Cell>,
}

impl CellSplit {
    pub fn new(mut train: Vec<Cell>, mut test: Vec<Cell>) -> Result<Self> {
        train.sort_unstable();
        train.dedup();
        test.sort_unstable();
        test.dedup();
        let train_set: HashSet<Cell> = train.iter().copied().collect();
        if let Some(c) = test.iter().find(|c| train_set.contains(c)) {
            return Err(Error::Split(format!(
                "cell ({}, {}) is in both train and test",
                c.drug, c.disease
            )));
        }
        Ok(Self { train, test })
    }

    pub fn train_counts(&self, ds: &Dataset) -> (usize, usize) {
        let pos = self.train.iter().filter(|&&c| ds.is_positive(c)).count();
        (pos, self.train.len() - pos)
    }

    /// Errors unless the training side has both classes.
    pub fn ensure_trainable(&self, ds: &Dataset) -> Result<()> {
        let (pos, neg) = self.train_counts(ds);
        if pos == 0 || neg == 0 {
            return Err(Error::Split(format!(
                "training split needs positives and negatives, has {pos} and {neg}"
            )));
        }
        Ok(())
    }

    pub fn check_bounds(&self, ds: &Dataset) -> Result<()> {
        for c in self.train.iter().chain(&self.test) {
            if c.drug >= ds.n_drugs() || c.disease >= ds.n_diseases() {
                return Err(Error::Range(format!(
                    "cell ({}, {}) outside a {}x{} dataset",
                    c.drug,
                    c.disease,
                    ds.n_drugs(),
                    ds.n_diseases()
                )));
            }
        }
        Ok(())
    }

    /// Text form: a header of `key=value` lines, then `train`/`test` cell
    /// lists with one `drug disease` pair per line.
    pub fn to_manifest(&self, protocol: &str, seed: u64, fold: Option<usize>) -> String {
        let mut out = String::new();
        writeln!(out, "protocol={protocol}").unwrap();
        writeln!(out, "seed={seed}").unwrap();
        if let Some(f) = fold {
            writeln!(out, "fold={f}").unwrap();
        }
        for (name, cells) in [("train", &self.train), ("test", &self.test)] {
            writeln!(out, "{name}={}", cells.len()).unwrap();
            for c in cells {
                writeln!(out, "{} {}", c.drug, c.disease).unwrap();
            }
        }
        out
    }

    pub fn write_manifest(&self, path: &Path, protocol: &str, seed: u64, fold: Option<usize>) -> Result<()> {
        fs::write(path, self.to_manifest(protocol, seed, fold))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read_manifest(path: &Path) -> Result<SplitManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        SplitManifest::parse(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitManifest {
    pub protocol: String,
    pub seed: u64,
    pub fold: Option<usize>,
    pub split: CellSplit,
}

impl SplitManifest {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut protocol = None;
        let mut seed = None;
        let mut fold = None;
        let mut lists: [Vec<Cell>; 2] = [Vec::new(), Vec::new()];
        let mut current: Option<(usize, usize)> = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| format!("line {}: {m}", n + 1);
            if let Some((k, v)) = line.split_once('=') {
                if let Some((_, left)) = current {
                    if left > 0 {
                        return Err(err("cell list shorter than its declared count"));
                    }
                }
                match k {
                    "protocol" => protocol = Some(v.to_string()),
                    "seed" => seed = Some(v.parse().map_err(|_| err("bad seed"))?),
                    "fold" => fold = Some(v.parse().map_err(|_| err("bad fold"))?),
                    "train" | "test" => {
                        let count = v.parse().map_err(|_| err("bad count"))?;
                        current = Some((usize::from(k == "test"), count));
                    }
                    _ => return Err(err(&format!("unknown key `{k}`"))),
                }
                continue;
            }
            let Some((list, left)) = current.as_mut() else {
                return Err(err("cell before any list header"));
            };
            if *left == 0 {
                return Err(err("more cells than the declared count"));
            }
            let mut parts = line.split_whitespace().map(str::parse::<usize>);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(k)), Some(Ok(m)), None) => lists[*list].push(Cell::new(k, m)),
                _ => return Err(err("expected `drug disease`")),
            }
            *left -= 1;
        }
        if matches!(current, Some((_, left)) if left > 0) {
            return Err("cell list shorter than its declared count".into());
        }
        let [train, test] = lists;
        let split = CellSplit::new(train, test).map_err(|e| e.to_string())?;
        Ok(Self {
            protocol: protocol.ok_or("missing protocol")?,
            seed: seed.ok_or("missing seed")?,
            fold,
            split,
        })
    }
}

/// Positive cells partitioned into folds, each paired with an equally sized
/// fold of sampled zero cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub positive_folds: Vec<Vec<Cell>>,
    pub negative_folds: Vec<Vec<Cell>>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n_folds(&self) -> usize {
        self.positive_folds.len()
    }
}

pub fn split_folds(ds: &Dataset, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::Split(format!("need at least 2 folds, got {n_folds}")));
    }
    let mut positives = ds.positive_cells();
    if positives.len() < n_folds {
        return Err(Error::Split(format!(
            "{} positive cells cannot fill {n_folds} folds",
            positives.len()
        )));
    }
    let zeros = ds.zero_cells();
    if zeros.len() < positives.len() {
        return Err(Error::Split(format!(
            "{} zero cells cannot match {} positives",
            zeros.len(),
            positives.len()
        )));
    }
    let mut rng = rng(seed);
    positives.shuffle(&mut rng);
    let negatives: Vec<Cell> = index::sample(&mut rng, zeros.len(), positives.len())
        .into_iter()
        .map(|i| zeros[i])
        .collect();
    let base = positives.len() / n_folds;
    let extra = positives.len() % n_folds;
    let mut positive_folds = Vec::with_capacity(n_folds);
    let mut negative_folds = Vec::with_capacity(n_folds);
    let mut start = 0;
    for f in 0..n_folds {
        let size = base + usize::from(f < extra);
        let mut p = positives[start..start + size].to_vec();
        let mut n = negatives[start..start + size].to_vec();
        p.sort_unstable();
        n.sort_unstable();
        positive_folds.push(p);
        negative_folds.push(n);
        start += size;
    }
    Ok(FoldPlan {
        positive_folds,
        negative_folds,
        seed,
    })
}

pub fn cv_split(plan: &FoldPlan, test_fold: usize) -> Result<CellSplit> {
    if test_fold >= plan.n_folds() {
        return Err(Error::Range(format!(
            "test fold {test_fold} outside 0..{}",
            plan.n_folds()
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for f in 0..plan.n_folds() {
        let target = if f == test_fold { &mut test } else { &mut train };
        target.extend_from_slice(&plan.positive_folds[f]);
        target.extend_from_slice(&plan.negative_folds[f]);
    }
    CellSplit::new(train, test)
}

/// Holds out every cell of one drug's row. `Ok(None)` means the drug has no
/// known association and should be skipped.
pub fn coldstart_split(ds: &Dataset, drug: usize, seed: u64) -> Result<Option<CellSplit>> {
    if drug >= ds.n_drugs() {
        return Err(Error::Range(format!("drug {drug} outside 0..{}", ds.n_drugs())));
    }
    if ds.n_drugs() < 2 {
        return Err(Error::Split("cold start needs at least two drugs".into()));
    }
    if ds.row_positives(drug) == 0 {
        return Ok(None);
    }
    let test: Vec<Cell> = (0..ds.n_diseases()).map(|m| Cell::new(drug, m)).collect();
    let positives: Vec<Cell> = ds.positive_cells().into_iter().filter(|c| c.drug != drug).collect();
    if positives.is_empty() {
        return Err(Error::Split(format!(
            "masking drug {drug} leaves no training positives"
        )));
    }
    let zeros: Vec<Cell> = ds.zero_cells().into_iter().filter(|c| c.drug != drug).collect();
    if zeros.is_empty() {
        return Err(Error::Split(format!(
            "masking drug {drug} leaves no training negatives"
        )));
    }
    // dense matrices may not have enough zeros to match; then all are used
    let negatives = positives.len().min(zeros.len());
    let mut rng = rng(seed);
    let mut train = positives.clone();
    train.extend(
        index::sample(&mut rng, zeros.len(), negatives)
            .into_iter()
            .map(|i| zeros[i]),
    );
    CellSplit::new(train, test).map(Some)
}

/// Number of training positives retained at fraction `lambda`.
pub fn sparse_keep(lambda: f64, positives: usize) -> usize {
    // the product is only meaningful to ~1e-9; keeps 0.1 * 1740 at 174
    ((lambda * positives as f64 - 1e-9).ceil() as usize).clamp(1, positives)
}

/// Keeps a uniformly sampled fraction `lambda` of the training positives;
/// training negatives and the test side are untouched.
pub fn sparsify(ds: &Dataset, split: &CellSplit, lambda: f64, seed: u64) -> Result<CellSplit> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Range(format!("lambda {lambda} outside (0, 1]")));
    }
    let (positives, negatives): (Vec<Cell>, Vec<Cell>) = split.train.iter().partition(|&&c| ds.is_positive(c));
    if positives.is_empty() {
        return Err(Error::Split("sparsify needs at least one training positive".into()));
    }
    let keep = sparse_keep(lambda, positives.len());
    let mut rng = rng(seed);
    let mut train: Vec<Cell> = index::sample(&mut rng, positives.len(), keep)
        .into_iter()
        .map(|i| positives[i])
        .collect();
    train.extend(negatives);
    CellSplit::new(train, split.test.clone())
}

/// Every positive plus an equal number of sampled zero cells for training;
/// the remaining zero cells form the test side.
pub fn full_split(ds: &Dataset, seed: u64) -> Result<CellSplit> {
    let positives = ds.positive_cells();
    let zeros = ds.zero_cells();
    if positives.is_empty() || zeros.len() < positives.len() {
        return Err(Error::Split(format!(
            "cannot pair {} positives with as many of {} zero cells",
            positives.len(),
            zeros.len()
        )));
    }
    let mut rng = rng(seed);
    let mut chosen = vec![false; zeros.len()];
    for i in index::sample(&mut rng, zeros.len(), positives.len()) {
        chosen[i] = true;
    }
    let mut train = positives;
    let mut test = Vec::new();
    for (c, pick) in zeros.into_iter().zip(chosen) {
        if pick {
            train.push(c);
        } else {
            test.push(c);
        }
    }
    CellSplit::new(train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    /// 5×6 dataset with positives on `(k, m)` where `(k + m) % 3 == 0`.
    fn toy(n_drugs: usize, n_diseases: usize) -> Dataset {
        let mut a = Tensor::zeros(&[n_drugs, n_diseases]);
        for k in 0..n_drugs {
            for m in 0..n_diseases {
                if (k + 2 * m) % 3 == 0 {
                    a.set(k, m, 1.0);
                }
            }
        }
        Dataset::new(&a, Tensor::eye(n_drugs), Tensor::eye(n_diseases), None, None).unwrap()
    }

    #[test]
    fn twenty_positives_give_ten_folds_of_two() {
        let mut a = Tensor::zeros(&[10, 5]);
        for k in 0..10 {
            a.set(k, 0, 1.0);
            a.set(k, 1, 1.0);
        }
        let ds = Dataset::new(&a, Tensor::eye(10), Tensor::eye(5), None, None).unwrap();
        let plan = split_folds(&ds, 10, 3).unwrap();
        assert!(plan.positive_folds.iter().all(|f| f.len() == 2));
        assert!(plan.negative_folds.iter().all(|f| f.len() == 2));
        let negs: HashSet<Cell> = plan.negative_folds.iter().flatten().copied().collect();
        assert_eq!(negs.len(), 20);
        assert!(negs.iter().all(|&c| !ds.is_positive(c)));
    }

    #[test]
    fn fold_plan_is_a_partition_and_deterministic() {
        let ds = toy(12, 9);
        let plan = split_folds(&ds, 10, 7).unwrap();
        assert_eq!(plan, split_folds(&ds, 10, 7).unwrap());
        assert_ne!(plan, split_folds(&ds, 10, 8).unwrap());
        let mut all: Vec<Cell> = plan.positive_folds.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, ds.positive_cells());
        let sizes: Vec<usize> = plan.positive_folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for (p, n) in plan.positive_folds.iter().zip(&plan.negative_folds) {
            assert_eq!(p.len(), n.len());
        }
    }

    #[test]
    fn too_few_positives_is_a_split_error() {
        let ds = toy(3, 3);
        assert!(matches!(split_folds(&ds, 10, 0), Err(Error::Split(_))));
    }

    #[test]
    fn cv_rotations_cover_positives_once() {
        let ds = toy(12, 9);
        let plan = split_folds(&ds, 10, 1).unwrap();
        let mut seen = Vec::new();
        for f in 0..10 {
            let split = cv_split(&plan, f).unwrap();
            let train: HashSet<Cell> = split.train.iter().copied().collect();
            assert!(split.test.iter().all(|c| !train.contains(c)));
            let (tp, _) = split.train_counts(&ds);
            assert_eq!(tp, ds.positives() - plan.positive_folds[f].len());
            seen.extend(split.test.iter().copied().filter(|&c| ds.is_positive(c)));
        }
        seen.sort();
        assert_eq!(seen, ds.positive_cells());
        assert!(cv_split(&plan, 10).is_err());
    }

    #[test]
    fn coldstart_masks_the_whole_row() {
        let ds = toy(8, 7);
        for k in 0..8 {
            let split = coldstart_split(&ds, k, 5).unwrap().unwrap();
            assert_eq!(split.test.len(), 7);
            assert!(split.train.iter().all(|c| c.drug != k));
            let (p, n) = split.train_counts(&ds);
            assert_eq!(p, ds.positives() - ds.row_positives(k));
            assert_eq!(p, n);
        }
    }

    #[test]
    fn coldstart_degenerate_cases() {
        let mut a = Tensor::zeros(&[3, 4]);
        a.set(0, 0, 1.0);
        a.set(1, 2, 1.0);
        let ds = Dataset::new(&a, Tensor::eye(3), Tensor::eye(4), None, None).unwrap();
        assert_eq!(coldstart_split(&ds, 2, 0).unwrap(), None);
        let one = Dataset::new(
            &Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            Tensor::eye(1),
            Tensor::eye(2),
            None,
            None,
        )
        .unwrap();
        assert!(matches!(coldstart_split(&one, 0, 0), Err(Error::Split(_))));
    }

    #[test]
    fn coldstart_uses_every_zero_when_short() {
        // 3 positives and 1 zero outside row 0
        let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let ds = Dataset::new(&a, Tensor::eye(3), Tensor::eye(2), None, None).unwrap();
        let split = coldstart_split(&ds, 0, 1).unwrap().unwrap();
        assert_eq!(split.train_counts(&ds), (3, 1));
        let full = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let ds = Dataset::new(&full, Tensor::eye(2), Tensor::eye(2), None, None).unwrap();
        assert!(matches!(coldstart_split(&ds, 0, 1), Err(Error::Split(_))));
    }

    #[test]
    fn sparsify_keeps_ceiling_fraction() {
        assert_eq!(sparse_keep(0.1, 1740), 174);
        assert_eq!(sparse_keep(0.3, 10), 3);
        assert_eq!(sparse_keep(0.25, 10), 3);
        assert_eq!(sparse_keep(1.0, 10), 10);
        assert_eq!(sparse_keep(1e-6, 10), 1);

        let ds = toy(12, 9);
        let plan = split_folds(&ds, 10, 1).unwrap();
        let split = cv_split(&plan, 0).unwrap();
        assert_eq!(sparsify(&ds, &split, 1.0, 4).unwrap(), split);
        let half = sparsify(&ds, &split, 0.5, 4).unwrap();
        assert_eq!(half, sparsify(&ds, &split, 0.5, 4).unwrap());
        assert_eq!(half.test, split.test);
        let (p0, n0) = split.train_counts(&ds);
        let (p1, n1) = half.train_counts(&ds);
        assert_eq!(n0, n1);
        assert_eq!(p1, sparse_keep(0.5, p0));
        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(sparsify(&ds, &split, bad, 4), Err(Error::Range(_))));
        }
    }

    #[test]
    fn full_split_trains_on_every_positive() {
        let ds = toy(6, 6);
        let split = full_split(&ds, 2).unwrap();
        let (p, n) = split.train_counts(&ds);
        assert_eq!((p, n), (ds.positives(), ds.positives()));
        assert_eq!(split.train.len() + split.test.len(), 36);
    }

    #[test]
    fn manifest_round_trip() {
        let ds = toy(6, 6);
        let split = full_split(&ds, 2).unwrap();
        let text = split.to_manifest("cv", 42, Some(3));
        let back = SplitManifest::parse(&text).unwrap();
        assert_eq!(back.protocol, "cv");
        assert_eq!(back.seed, 42);
        assert_eq!(back.fold, Some(3));
        assert_eq!(back.split, split);
        assert!(SplitManifest::parse("protocol=cv\nseed=1\ntrain=2\n0 0\n").is_err());
    }
}
