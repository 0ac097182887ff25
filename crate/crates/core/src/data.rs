//! Weighted brain-network samples: a planted two-level community generator
//! and the directory-based dataset format.
//!
//! On disk a dataset is a directory holding `manifest.json` plus one text
//! file per sample. A matrix file starts with a line containing `V`,
//! followed by `V` rows of `V` space-separated values printed with 17
//! significant digits, which round-trips every `f64` exactly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One sample: a square weighted adjacency matrix with a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct BrainGraph {
    pub id: String,
    pub adjacency: Tensor,
    pub label: usize,
}

impl BrainGraph {
    pub fn nodes(&self) -> usize {
        self.adjacency.rows()
    }

    /// Square, finite and symmetric within 1e-9.
    pub fn check(&self) -> std::result::Result<(), String> {
        let a = &self.adjacency;
        if a.rows() != a.cols() {
            return Err(format!("adjacency is {}x{}, not square", a.rows(), a.cols()));
        }
        if !a.is_finite() {
            return Err("adjacency has non-finite entries".into());
        }
        for i in 0..a.rows() {
            for j in (i + 1)..a.cols() {
                if (a.get(i, j) - a.get(j, i)).abs() > SYMMETRY_TOL {
                    return Err(format!("adjacency is not symmetric at ({i}, {j})"));
                }
            }
        }
        Ok(())
    }
}

/// Per-node community labels at two granularities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub fine: Vec<usize>,
    pub coarse: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub nodes: usize,
    pub graphs: Vec<BrainGraph>,
    pub truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    /// Entrywise mean adjacency over the selected samples.
    pub fn mean_adjacency(&self, indices: &[usize]) -> Tensor {
        let mut mean = Tensor::zeros(self.nodes, self.nodes);
        for &i in indices {
            for (m, v) in mean.data_mut().iter_mut().zip(self.graphs[i].adjacency.data()) {
                *m += v;
            }
        }
        let n = indices.len().max(1) as f64;
        mean.map(|v| v / n)
    }
}

/// Planted two-level block structure with an optional class effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedSpec {
    pub nodes: usize,
    pub fine_blocks: usize,
    pub coarse_blocks: usize,
    /// Mean connectivity inside a fine block.
    pub within: f64,
    /// Mean between fine blocks of the same coarse block; defaults to the
    /// midpoint of `within` and `between`.
    pub within_coarse: Option<f64>,
    /// Mean between coarse blocks.
    pub between: f64,
    /// Standard deviation of the Gaussian entry noise.
    pub noise: f64,
    /// Added to the effect blocks for class-1 samples.
    pub class_shift: f64,
    /// Fine block pairs whose mean differs between classes.
    pub effect_blocks: Vec<[usize; 2]>,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            nodes: 60,
            fine_blocks: 6,
            coarse_blocks: 3,
            within: 0.8,
            within_coarse: None,
            between: 0.2,
            noise: 0.1,
            class_shift: 0.15,
            effect_blocks: vec![[0, 0], [1, 3]],
            seed: 0,
        }
    }
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DataError::Spec(m));
        if self.coarse_blocks == 0 || self.fine_blocks < self.coarse_blocks || self.nodes < self.fine_blocks {
            return fail(format!(
                "need nodes >= fine_blocks >= coarse_blocks >= 1, got {} >= {} >= {}",
                self.nodes, self.fine_blocks, self.coarse_blocks
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise must be a finite value >= 0, got {}", self.noise));
        }
        let mid = self.within_coarse_mean();
        if ![self.within, mid, self.between, self.class_shift].iter().all(|v| v.is_finite()) {
            return fail("block means and class shift must be finite".into());
        }
        if self.within <= self.between {
            return fail(format!(
                "within-community mean {} must exceed between-community mean {}",
                self.within, self.between
            ));
        }
        if let Some(bad) = self.effect_blocks.iter().find(|p| p.iter().any(|&b| b >= self.fine_blocks)) {
            return fail(format!("effect block {bad:?} is out of range for {} fine blocks", self.fine_blocks));
        }
        Ok(())
    }

    pub fn within_coarse_mean(&self) -> f64 {
        self.within_coarse.unwrap_or(0.5 * (self.within + self.between))
    }

    /// Fine block of each node; contiguous, sizes differ by at most one.
    pub fn fine_labels(&self) -> Vec<usize> {
        (0..self.nodes).map(|i| i * self.fine_blocks / self.nodes).collect()
    }

    /// Coarse block containing each fine block.
    pub fn coarse_of_fine(&self) -> Vec<usize> {
        (0..self.fine_blocks).map(|f| f * self.coarse_blocks / self.fine_blocks).collect()
    }

    pub fn truth(&self) -> GroundTruth {
        let fine = self.fine_labels();
        let parent = self.coarse_of_fine();
        let coarse = fine.iter().map(|&f| parent[f]).collect();
        GroundTruth { fine, coarse }
    }

    /// Noise-free block means for a class.
    pub fn template(&self, label: usize) -> Tensor {
        let fine = self.fine_labels();
        let parent = self.coarse_of_fine();
        let mid = self.within_coarse_mean();
        Tensor::from_fn(self.nodes, self.nodes, |i, j| {
            let (a, b) = (fine[i], fine[j]);
            let mut v = if a == b {
                self.within
            } else if parent[a] == parent[b] {
                mid
            } else {
                self.between
            };
            if label == 1
                && self
                    .effect_blocks
                    .iter()
                    .any(|&[x, y]| (x == a && y == b) || (x == b && y == a))
            {
                v += self.class_shift;
            }
            v
        })
    }
}

/// Draws `samples` graphs: half per class in shuffled order, each the class
/// template plus symmetric Gaussian noise from a per-sample stream.
pub fn generate(spec: &PlantedSpec, samples: usize) -> Result<Dataset> {
    spec.validate()?;
    if samples == 0 {
        return Err(DataError::Spec("sample count must be positive".into()));
    }
    let mut labels: Vec<usize> = (0..samples).map(|i| usize::from(i >= samples / 2)).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let templates = [spec.template(0), spec.template(1)];
    let normal = Normal::new(0.0, spec.noise).map_err(|e| DataError::Spec(e.to_string()))?;
    let n = spec.nodes;
    let make = |i: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64 + 1);
        let mut adjacency = templates[labels[i]].clone();
        if spec.noise > 0.0 {
            for r in 0..n {
                for c in r..n {
                    let e = normal.sample(&mut rng);
                    adjacency.set(r, c, adjacency.get(r, c) + e);
                    if c != r {
                        adjacency.set(c, r, adjacency.get(c, r) + e);
                    }
                }
            }
        }
        BrainGraph {
            id: format!("s{i:05}"),
            adjacency,
            label: labels[i],
        }
    };
    #[cfg(feature = "parallel")]
    let graphs = {
        use rayon::prelude::*;
        (0..samples).into_par_iter().map(make).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let graphs = (0..samples).map(make).collect();
    Ok(Dataset {
        nodes: n,
        graphs,
        truth: Some(spec.truth()),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    nodes: usize,
    samples: Vec<SampleEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth: Option<GroundTruth>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleEntry {
    id: String,
    label: usize,
    file: String,
}

/// Writes the manifest and one matrix file per sample into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut samples = Vec::with_capacity(dataset.len());
    for g in &dataset.graphs {
        let file = format!("{}.txt", g.id);
        let path = dir.join(&file);
        write_matrix(&g.adjacency, &path)?;
        samples.push(SampleEntry {
            id: g.id.clone(),
            label: g.label,
            file,
        });
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        nodes: dataset.nodes,
        samples,
        truth: dataset.truth.clone(),
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn write_matrix(m: &Tensor, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(m.len() * 24 + 16);
    out.push_str(&format!("{}\n", m.rows()));
    for r in 0..m.rows() {
        let line: Vec<String> = m.row_slice(r).iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(out.as_bytes()).map_err(io_err(path))
}

pub fn read_matrix(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parse_err = |line: usize, message: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty matrix file".into()))?;
    let n: usize = header
        .trim()
        .parse()
        .map_err(|_| parse_err(1, format!("expected the node count, got `{}`", header.trim())))?;
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows == n {
            return Err(parse_err(lineno, format!("more than {n} rows")));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(lineno, format!("`{tok}` is not a number")))?;
            data.push(v);
        }
        if data.len() - before != n {
            return Err(parse_err(
                lineno,
                format!("row has {} values, expected {n}", data.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(text.lines().count(), format!("found {rows} rows, expected {n}")));
    }
    Ok(Tensor::new(n, n, data).expect("size checked"))
}

/// Reads a dataset directory written by [`save_dataset`] or by hand.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DataError::Parse {
        path: manifest_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let at_manifest = |message: String| DataError::Parse {
        path: manifest_path.clone(),
        line: 0,
        message,
    };
    if manifest.version != FORMAT_VERSION {
        return Err(at_manifest(format!("unsupported version {}", manifest.version)));
    }
    if let Some(t) = &manifest.truth {
        if t.fine.len() != manifest.nodes || t.coarse.len() != manifest.nodes {
            return Err(at_manifest(format!(
                "truth labels cover {}/{} nodes, expected {}",
                t.fine.len(),
                t.coarse.len(),
                manifest.nodes
            )));
        }
    }
    let mut graphs = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        let path = dir.join(&s.file);
        if !path.is_file() {
            return Err(DataError::Io {
                path,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "matrix file referenced by the manifest is missing"),
            });
        }
        let adjacency = read_matrix(&path)?;
        if adjacency.rows() != manifest.nodes {
            return Err(DataError::Parse {
                path,
                line: 1,
                message: format!("matrix has {} nodes, manifest says {}", adjacency.rows(), manifest.nodes),
            });
        }
        let g = BrainGraph {
            id: s.id.clone(),
            adjacency,
            label: s.label,
        };
        g.check().map_err(|message| DataError::Parse {
            path: path.clone(),
            line: 0,
            message,
        })?;
        graphs.push(g);
    }
    Ok(Dataset {
        nodes: manifest.nodes,
        graphs,
        truth: manifest.truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_reproduces_template() {
        let spec = PlantedSpec {
            noise: 0.0,
            ..Default::default()
        };
        let d = generate(&spec, 8).unwrap();
        for g in &d.graphs {
            assert_eq!(g.adjacency, spec.template(g.label));
        }
        assert_eq!(d.labels().iter().filter(|&&l| l == 1).count(), 4);
    }

    #[test]
    fn fine_partition_refines_coarse() {
        let spec = PlantedSpec {
            nodes: 37,
            fine_blocks: 7,
            coarse_blocks: 3,
            ..Default::default()
        };
        let t = spec.truth();
        for i in 0..37 {
            for j in 0..37 {
                if t.fine[i] == t.fine[j] {
                    assert_eq!(t.coarse[i], t.coarse[j]);
                }
            }
        }
        let mut coarse_ids = t.coarse.clone();
        coarse_ids.dedup();
        assert_eq!(coarse_ids, vec![0, 1, 2]);
    }

    #[test]
    fn template_block_means() {
        let spec = PlantedSpec::default();
        let t0 = spec.template(0);
        // nodes 0 and 5 share fine block 0; node 10 is fine 1 (coarse 0); node 20 is coarse 1
        assert_eq!(t0.get(0, 5), 0.8);
        assert_eq!(t0.get(0, 10), 0.5);
        assert_eq!(t0.get(0, 20), 0.2);
        let t1 = spec.template(1);
        assert!((t1.get(0, 5) - 0.95).abs() < 1e-15);
        assert!((t1.get(10, 30) - (0.2 + 0.15)).abs() < 1e-15);
        assert_eq!(t1.get(20, 20), 0.8);
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        let bad = [
            PlantedSpec {
                noise: -0.1,
                ..Default::default()
            },
            PlantedSpec {
                fine_blocks: 2,
                coarse_blocks: 3,
                ..Default::default()
            },
            PlantedSpec {
                nodes: 4,
                ..Default::default()
            },
            PlantedSpec {
                within: 0.1,
                ..Default::default()
            },
            PlantedSpec {
                effect_blocks: vec![[0, 6]],
                ..Default::default()
            },
        ];
        for spec in bad {
            assert!(matches!(generate(&spec, 4), Err(DataError::Spec(_))), "{spec:?}");
        }
        assert!(generate(&PlantedSpec::default(), 0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = PlantedSpec::default();
        assert_eq!(generate(&spec, 6).unwrap(), generate(&spec, 6).unwrap());
        let other = PlantedSpec { seed: 1, ..spec };
        assert_ne!(generate(&other, 6).unwrap().graphs[0], generate(&PlantedSpec::default(), 6).unwrap().graphs[0]);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate(&PlantedSpec::default(), 5).unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, d);
        for (a, b) in back.graphs.iter().zip(&d.graphs) {
            assert!(a
                .adjacency
                .data()
                .iter()
                .zip(b.adjacency.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn missing_matrix_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate(&PlantedSpec::default(), 2).unwrap();
        save_dataset(&d, dir.path()).unwrap();
        fs::remove_file(dir.path().join("s00001.txt")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("s00001.txt"), "{err}");
    }

    #[test]
    fn malformed_rows_report_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        fs::write(&p, "2\n1 2\n2 x\n").unwrap();
        match read_matrix(&p).unwrap_err() {
            DataError::Parse { line, path, .. } => {
                assert_eq!(line, 3);
                assert_eq!(path, p);
            }
            e => panic!("{e}"),
        }
        fs::write(&p, "3\n1 2 3\n2 1 0\n").unwrap();
        assert!(matches!(read_matrix(&p), Err(DataError::Parse { .. })));
        fs::write(&p, "2\n1 2 3\n2 1\n").unwrap();
        assert!(matches!(read_matrix(&p), Err(DataError::Parse { line: 2, .. })));
    }
}
