use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Symmetry tolerance for similarity matrices.
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Drug,
    Disease,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Drug => "drug",
            Domain::Disease => "disease",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "drug" => Some(Domain::Drug),
            "disease" => Some(Domain::Disease),
            _ => None,
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One drug–disease cell of the association matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub drug: usize,
    pub disease: usize,
}

impl Cell {
    pub fn new(drug: usize, disease: usize) -> Self {
        Self { drug, disease }
    }
}

/// Association matrix plus both similarity matrices. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n_drugs: usize,
    n_diseases: usize,
    assoc: Vec<u8>,
    drug_sim: Tensor,
    disease_sim: Tensor,
    drug_ids: Vec<String>,
    disease_ids: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct DatasetPaths {
    pub association: PathBuf,
    pub drug_similarity: PathBuf,
    pub disease_similarity: PathBuf,
    pub drug_ids: Option<PathBuf>,
    pub disease_ids: Option<PathBuf>,
}

/// Counts recomputed from the loaded files.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadReport {
    pub n_drugs: usize,
    pub n_diseases: usize,
    pub positives: usize,
    pub sparsity: f64,
    pub warnings: Vec<String>,
}

impl Dataset {
    /// Validates and assembles a dataset from in-memory parts. Missing ID
    /// lists default to `drug{i}` / `disease{j}`.
    pub fn new(
        assoc: &Tensor,
        drug_sim: Tensor,
        disease_sim: Tensor,
        drug_ids: Option<Vec<String>>,
        disease_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let origin = PathBuf::from("<memory>");
        Self::validated(
            &origin,
            assoc,
            (&origin, drug_sim),
            (&origin, disease_sim),
            drug_ids,
            disease_ids,
        )
    }

    fn validated(
        assoc_path: &Path,
        assoc: &Tensor,
        (drug_path, drug_sim): (&Path, Tensor),
        (disease_path, disease_sim): (&Path, Tensor),
        drug_ids: Option<Vec<String>>,
        disease_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        if assoc.ndim() != 2 {
            return Err(Error::dim("association", assoc.shape(), &[2]));
        }
        let (n_drugs, n_diseases) = (assoc.shape()[0], assoc.shape()[1]);
        let mut bits = Vec::with_capacity(assoc.len());
        for (i, &v) in assoc.data().iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::Load {
                    path: assoc_path.to_path_buf(),
                    row: i / n_diseases,
                    col: i % n_diseases,
                    message: format!("association value {v} is not 0 or 1"),
                });
            }
            bits.push(v as u8);
        }
        check_similarity(drug_path, &drug_sim, n_drugs, "drug")?;
        check_similarity(disease_path, &disease_sim, n_diseases, "disease")?;
        let drug_ids = drug_ids.unwrap_or_else(|| (0..n_drugs).map(|i| format!("drug{i}")).collect());
        let disease_ids = disease_ids.unwrap_or_else(|| (0..n_diseases).map(|i| format!("disease{i}")).collect());
        if drug_ids.len() != n_drugs {
            return Err(Error::Validation(format!(
                "{} drug IDs for {n_drugs} association rows",
                drug_ids.len()
            )));
        }
        if disease_ids.len() != n_diseases {
            return Err(Error::Validation(format!(
                "{} disease IDs for {n_diseases} association columns",
                disease_ids.len()
            )));
        }
        Ok(Self {
            n_drugs,
            n_diseases,
            assoc: bits,
            drug_sim,
            disease_sim,
            drug_ids,
            disease_ids,
        })
    }

    pub fn load(paths: &DatasetPaths) -> Result<(Self, LoadReport)> {
        let assoc = read_matrix(&paths.association)?;
        let drug_sim = read_matrix(&paths.drug_similarity)?;
        let disease_sim = read_matrix(&paths.disease_similarity)?;
        let drug_ids = paths.drug_ids.as_deref().map(read_ids).transpose()?;
        let disease_ids = paths.disease_ids.as_deref().map(read_ids).transpose()?;
        let ds = Self::validated(
            &paths.association,
            &assoc,
            (&paths.drug_similarity, drug_sim),
            (&paths.disease_similarity, disease_sim),
            drug_ids,
            disease_ids,
        )?;
        let report = ds.report();
        Ok((ds, report))
    }

    pub fn report(&self) -> LoadReport {
        let positives = self.positives();
        let mut warnings = Vec::new();
        if positives == 0 {
            warnings.push("association matrix has no positive entries".to_string());
        }
        LoadReport {
            n_drugs: self.n_drugs,
            n_diseases: self.n_diseases,
            positives,
            sparsity: positives as f64 / (self.n_drugs * self.n_diseases) as f64,
            warnings,
        }
    }

    pub fn n_drugs(&self) -> usize {
        self.n_drugs
    }

    pub fn n_diseases(&self) -> usize {
        self.n_diseases
    }

    pub fn n_entities(&self, domain: Domain) -> usize {
        match domain {
            Domain::Drug => self.n_drugs,
            Domain::Disease => self.n_diseases,
        }
    }

    pub fn label(&self, cell: Cell) -> u8 {
        self.assoc[cell.drug * self.n_diseases + cell.disease]
    }

    pub fn is_positive(&self, cell: Cell) -> bool {
        self.label(cell) == 1
    }

    pub fn positives(&self) -> usize {
        self.assoc.iter().filter(|&&v| v == 1).count()
    }

    pub fn positive_cells(&self) -> Vec<Cell> {
        self.cells().filter(|&c| self.is_positive(c)).collect()
    }

    pub fn zero_cells(&self) -> Vec<Cell> {
        self.cells().filter(|&c| !self.is_positive(c)).collect()
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_drugs).flat_map(move |k| (0..self.n_diseases).map(move |m| Cell::new(k, m)))
    }

    pub fn row_positives(&self, drug: usize) -> usize {
        self.assoc[drug * self.n_diseases..(drug + 1) * self.n_diseases]
            .iter()
            .filter(|&&v| v == 1)
            .count()
    }

    pub fn similarity(&self, domain: Domain) -> &Tensor {
        match domain {
            Domain::Drug => &self.drug_sim,
            Domain::Disease => &self.disease_sim,
        }
    }

    pub fn drug_similarity(&self, a: usize, b: usize) -> f64 {
        self.drug_sim.get(a, b)
    }

    pub fn disease_similarity(&self, a: usize, b: usize) -> f64 {
        self.disease_sim.get(a, b)
    }

    pub fn drug_ids(&self) -> &[String] {
        &self.drug_ids
    }

    pub fn disease_ids(&self) -> &[String] {
        &self.disease_ids
    }

    pub fn ids(&self, domain: Domain) -> &[String] {
        match domain {
            Domain::Drug => &self.drug_ids,
            Domain::Disease => &self.disease_ids,
        }
    }

    /// Row-major 0/1 labels.
    pub fn labels(&self) -> &[u8] {
        &self.assoc
    }

    /// Association matrix as a dense 0/1 tensor.
    pub fn association(&self) -> Tensor {
        let data = self.assoc.iter().map(|&v| f64::from(v)).collect();
        Tensor::new(vec![self.n_drugs, self.n_diseases], data).expect("validated extents")
    }

    /// Copy with one association overwritten; used to probe label leakage.
    pub fn with_label(&self, cell: Cell, value: u8) -> Self {
        assert!(value <= 1);
        let mut out = self.clone();
        out.assoc[cell.drug * self.n_diseases + cell.disease] = value;
        out
    }

    /// Shape fingerprint stored alongside trained models.
    pub fn fingerprint(&self) -> String {
        format!("{}x{}:{}", self.n_drugs, self.n_diseases, self.positives())
    }

    /// Writes the dataset in the plain-text layout accepted by [`Dataset::load`].
    pub fn save(&self, dir: &Path) -> Result<DatasetPaths> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let paths = DatasetPaths {
            association: dir.join("association.txt"),
            drug_similarity: dir.join("drug_similarity.txt"),
            disease_similarity: dir.join("disease_similarity.txt"),
            drug_ids: Some(dir.join("drug_ids.txt")),
            disease_ids: Some(dir.join("disease_ids.txt")),
        };
        write_matrix(&paths.association, &self.association())?;
        write_matrix(&paths.drug_similarity, &self.drug_sim)?;
        write_matrix(&paths.disease_similarity, &self.disease_sim)?;
        write_lines(paths.drug_ids.as_ref().expect("set"), &self.drug_ids)?;
        write_lines(paths.disease_ids.as_ref().expect("set"), &self.disease_ids)?;
        Ok(paths)
    }
}

fn check_similarity(path: &Path, s: &Tensor, n: usize, what: &str) -> Result<()> {
    if s.ndim() != 2 || s.shape() != [n, n] {
        return Err(Error::Validation(format!(
            "{}: {what} similarity has shape {:?}, expected [{n}, {n}]",
            path.display(),
            s.shape()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let v = s.get(i, j);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Load {
                    path: path.to_path_buf(),
                    row: i,
                    col: j,
                    message: format!("{what} similarity {v} outside [0, 1]"),
                });
            }
            if j > i && (v - s.get(j, i)).abs() > SYMMETRY_TOL {
                return Err(Error::Load {
                    path: path.to_path_buf(),
                    row: i,
                    col: j,
                    message: format!(
                        "{what} similarity is asymmetric: {v} vs {} at the transposed position",
                        s.get(j, i)
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Reads a numeric text matrix: one row per line, entries separated by
/// whitespace and/or commas. Blank lines and `#` comments are skipped.
pub fn read_matrix(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_matrix(path, &text)
}

pub fn parse_matrix(path: &Path, text: &str) -> Result<Tensor> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row_idx = rows.len();
        let mut row = Vec::new();
        for (col, tok) in line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .enumerate()
        {
            let v: f64 = tok.parse().map_err(|_| Error::Load {
                path: path.to_path_buf(),
                row: row_idx,
                col,
                message: format!("cannot parse `{tok}` as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Load {
                    path: path.to_path_buf(),
                    row: row_idx,
                    col,
                    message: format!("non-finite value `{tok}`"),
                });
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Load {
                    path: path.to_path_buf(),
                    row: row_idx,
                    col: row.len().min(first.len()),
                    message: format!("ragged row: {} entries, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "matrix file is empty".into(),
        });
    }
    Tensor::from_rows(&rows)
}

pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn write_matrix(path: &Path, t: &Tensor) -> Result<()> {
    let mut out = String::new();
    for r in 0..t.rows() {
        let line: Vec<String> = t.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut out = lines.join("\n");
    out.push('\n');
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
