//! Seeded random problem generation and dataset directories.
//!
//! Problem `index` of a dataset is drawn from a ChaCha8 stream keyed by the
//! config seed, with the stream number set to `index`. ChaCha8 is a
//! counter-based generator, so datasets are byte-identical across platforms
//! and problems can be generated in any order or in parallel.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::polyset::{parse_problem, serialize_problem, Monomial, Polynomial, PolysetError, ProblemInstance};

const MAX_REJECTIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_vars: usize,
    /// Inclusive range of the number of polynomials.
    pub n_polys: (usize, usize),
    /// Inclusive range of the number of sampled terms per polynomial.
    pub monomials: (usize, usize),
    pub max_degree: u32,
    /// Inclusive coefficient range; zero is never drawn.
    pub coeffs: (i64, i64),
    /// Probability that a variable appears in a sampled term.
    pub density: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_vars: 3,
            n_polys: (1, 4),
            monomials: (1, 8),
            max_degree: 6,
            coeffs: (-100, 100),
            density: 0.7,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("dataset count must be at least 1")]
    EmptyDataset,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: PolysetError,
    },
    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("no .poly files in {0}")]
    NoProblems(PathBuf),
    #[error("{path}: content hash does not match manifest")]
    HashMismatch { path: PathBuf },
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |msg: &str| Err(GenError::Config(msg.to_string()));
        if self.n_vars == 0 {
            return bad("n_vars must be positive");
        }
        if self.n_polys.0 == 0 || self.n_polys.0 > self.n_polys.1 {
            return bad("n_polys range must be nonempty and start at 1 or more");
        }
        if self.monomials.0 == 0 || self.monomials.0 > self.monomials.1 {
            return bad("monomials range must be nonempty and start at 1 or more");
        }
        if self.max_degree == 0 {
            return bad("max_degree must be at least 1");
        }
        if self.coeffs.0 > self.coeffs.1 || self.coeffs == (0, 0) {
            return bad("coefficient range must contain a nonzero integer");
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad("density must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn var_names(&self) -> Vec<String> {
        if self.n_vars <= 3 {
            ["x", "y", "z"][..self.n_vars].iter().map(|s| s.to_string()).collect()
        } else {
            (1..=self.n_vars).map(|i| format!("x{i}")).collect()
        }
    }
}

fn sample_coeff(rng: &mut ChaCha8Rng, (lo, hi): (i64, i64)) -> i64 {
    if lo > 0 || hi < 0 {
        return rng.random_range(lo..=hi);
    }
    // zero lies inside the range: draw from one fewer value and skip it
    let c = rng.random_range(lo..hi);
    if c >= 0 {
        c + 1
    } else {
        c
    }
}

fn sample_polynomial(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Option<Polynomial> {
    let k = rng.random_range(cfg.monomials.0..=cfg.monomials.1);
    let terms = (0..k)
        .map(|_| {
            let degrees = (0..cfg.n_vars)
                .map(|_| {
                    if rng.random_bool(cfg.density) {
                        rng.random_range(1..=cfg.max_degree)
                    } else {
                        0
                    }
                })
                .collect();
            Monomial::new(sample_coeff(rng, cfg.coeffs), degrees)
        })
        .collect();
    Polynomial::new(terms).ok().filter(|p| !p.is_constant())
}

/// Problem number `index` of the dataset described by `cfg`.
pub fn random_problem(cfg: &GenConfig, index: u64) -> Result<ProblemInstance, GenError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let n_polys = rng.random_range(cfg.n_polys.0..=cfg.n_polys.1);
    let polys = (0..n_polys)
        .map(|_| {
            (0..MAX_REJECTIONS)
                .find_map(|_| sample_polynomial(&mut rng, cfg))
                .unwrap_or_else(|| {
                    let mut degrees = vec![0; cfg.n_vars];
                    degrees[rng.random_range(0..cfg.n_vars)] = 1;
                    Polynomial::new(vec![Monomial::new(1, degrees)]).expect("nonzero term")
                })
        })
        .collect();
    let pr = ProblemInstance::new(cfg.var_names(), polys).expect("generator respects invariants");
    Ok(pr.with_id(format!("rnd-{}-{}", cfg.seed, index)))
}

pub fn random_dataset(cfg: &GenConfig, count: usize) -> Result<Vec<ProblemInstance>, GenError> {
    if count == 0 {
        return Err(GenError::EmptyDataset);
    }
    cfg.validate()?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| random_problem(cfg, i))
        .collect()
}

/// `{x^2*y + z, x*z^2 - 1}`
pub fn e1() -> ProblemInstance {
    parse_problem("vars: x,y,z\nx^2*y + z\nx*z^2 - 1").unwrap().with_id("E1")
}

/// `{x^3 + y*z, y^2 - x}`
pub fn e2() -> ProblemInstance {
    parse_problem("vars: x,y,z\nx^3 + y*z\ny^2 - x").unwrap().with_id("E2")
}

/// `{x^2 + x}` over `x, y, z`: two terms but one polynomial contain `x`.
pub fn e3() -> ProblemInstance {
    parse_problem("vars: x,y,z\nx^2 + x").unwrap().with_id("E3")
}

pub fn hand_instances() -> Vec<ProblemInstance> {
    vec![e1(), e2(), e3()]
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of a dataset: ids and canonical serializations, in order.
pub fn dataset_fingerprint(problems: &[ProblemInstance]) -> String {
    let mut h = Sha256::new();
    for pr in problems {
        h.update(pr.label().as_bytes());
        h.update(b"\n");
        h.update(serialize_problem(pr).as_bytes());
        h.update(b"\0");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

/// `manifest.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<GenConfig>,
    pub count: usize,
    pub files: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GenError + '_ {
    move |source| GenError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn file_stem_id(pr: &ProblemInstance, i: usize) -> String {
    pr.id().map(str::to_string).unwrap_or_else(|| format!("problem-{i}"))
}

/// Writes one `<id>.poly` file per problem and a `manifest.json`.
pub fn write_dataset(
    dir: &Path,
    problems: &[ProblemInstance],
    config: Option<&GenConfig>,
) -> Result<DatasetManifest, GenError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::with_capacity(problems.len());
    for (i, pr) in problems.iter().enumerate() {
        let name = format!("{}.poly", file_stem_id(pr, i));
        let text = serialize_problem(pr);
        let path = dir.join(&name);
        fs::write(&path, &text).map_err(io_err(&path))?;
        files.push(ManifestEntry {
            file: name,
            sha256: sha256_hex(text.as_bytes()),
        });
    }
    let manifest = DatasetManifest {
        config: config.cloned(),
        count: problems.len(),
        files,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_problem_file(path: &Path) -> Result<ProblemInstance, GenError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let pr = parse_problem(&text).map_err(|source| GenError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    Ok(match id {
        Some(id) => pr.with_id(id),
        None => pr,
    })
}

/// Loads a dataset directory. With a manifest, files are read in manifest
/// order and their hashes checked; otherwise every `.poly` file is read in
/// file-name order.
pub fn read_dataset(dir: &Path) -> Result<Vec<ProblemInstance>, GenError> {
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|source| GenError::Manifest {
            path: manifest_path.clone(),
            source,
        })?;
        if manifest.files.is_empty() {
            return Err(GenError::NoProblems(dir.to_path_buf()));
        }
        return manifest
            .files
            .iter()
            .map(|entry| {
                let path = dir.join(&entry.file);
                let bytes = fs::read(&path).map_err(io_err(&path))?;
                if sha256_hex(&bytes) != entry.sha256 {
                    return Err(GenError::HashMismatch { path });
                }
                read_problem_file(&path)
            })
            .collect();
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "poly"))
        .collect();
    if paths.is_empty() {
        return Err(GenError::NoProblems(dir.to_path_buf()));
    }
    paths.sort();
    paths.iter().map(|p| read_problem_file(p)).collect()
}
