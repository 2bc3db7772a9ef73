//! Exhaustive search over ordered feature triplets.
//!
//! Every ordered selection of three distinct features from a pool is turned
//! into a frozen heuristic network (base weight chosen per triplet over the
//! evaluation dataset), its orderings are priced by a cost oracle, and the
//! triplets are ranked by total cost. Triplets containing averaged features
//! can take fractional values, for which the radix argument behind the
//! network does not hold; those are flagged and ordered by [`lex_order`].
//!
//! Long runs can checkpoint to an append-only journal of
//! `triplet_index,total_cost` lines and resume from it.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::costmodel::{checked, CostError, CostOracle, ProblemCost};
use crate::datagen::dataset_fingerprint;
use crate::features::{brown_features, eval_all_vars, FeatureDescriptor, FeatureError, FeatureSet, FeatureValue, Triplet};
use crate::heuristics::{base_weight_for, lex_order, FeatureMatrix, HeuristicError, HeuristicNetwork, VariableOrder};
use crate::polyset::ProblemInstance;

pub const DEFAULT_CHECKPOINT_EVERY: usize = 256;
const JOURNAL_MAGIC: &str = "# cadorder-search-journal";

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("a triplet search needs at least 3 features, the pool has {0}")]
    TooFewFeatures(usize),
    #[error("evaluation dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("journal {path}: {message}")]
    Journal { path: PathBuf, message: String },
    #[error("journal {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One evaluated triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletCandidate {
    /// Position in [`enumerate_triplets`] order; absent for a baseline
    /// outside the pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triplet_index: Option<usize>,
    pub features: [u32; 3],
    pub descriptions: [String; 3],
    pub w: u64,
    /// Set when orderings came from [`lex_order`] instead of the network.
    pub lexicographic: bool,
    pub total_cost: f64,
    /// Problems on which this triplet is strictly cheaper than Brown's.
    pub wins_vs_brown: usize,
    pub per_problem: Vec<ProblemCost>,
}

impl TripletCandidate {
    pub fn triplet(&self) -> Triplet {
        self.features
            .map(|c| FeatureDescriptor::from_code(c).expect("candidate ids are valid codes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub rank: usize,
    #[serde(flatten)]
    pub candidate: TripletCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub dataset_id: String,
    pub dataset_size: usize,
    pub oracle_id: String,
    pub pool_size: usize,
    pub triplets_evaluated: usize,
    pub baseline: TripletCandidate,
    /// Rank of Brown's triplet when all three of its features are in the pool.
    pub baseline_rank: Option<usize>,
    pub candidates: Vec<RankedCandidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    /// Number of ranked candidates kept in the report; 0 keeps all.
    pub top_k: usize,
    pub checkpoint_every: usize,
    pub journal: Option<PathBuf>,
    /// Continue from the entries already in `journal` instead of starting over.
    pub resume: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            top_k: 10,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            journal: None,
            resume: false,
        }
    }
}

fn triplet_positions(k: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(k * k.saturating_sub(1) * k.saturating_sub(2));
    for i in 0..k {
        for j in (0..k).filter(|&j| j != i) {
            for l in (0..k).filter(|&l| l != i && l != j) {
                out.push([i, j, l]);
            }
        }
    }
    out
}

/// All ordered triplets of distinct pool features, lexicographic in pool
/// positions. There are `k(k-1)(k-2)` of them.
pub fn enumerate_triplets(fs: &FeatureSet) -> Result<Vec<Triplet>, SearchError> {
    if fs.len() < 3 {
        return Err(SearchError::TooFewFeatures(fs.len()));
    }
    let d = fs.descriptors();
    Ok(triplet_positions(fs.len())
        .into_iter()
        .map(|p| p.map(|i| d[i]))
        .collect())
}

/// Feature values `[problem][variable]` for one descriptor.
type Column = Vec<Vec<FeatureValue>>;

fn column(fd: &FeatureDescriptor, dataset: &[ProblemInstance]) -> Result<Column, FeatureError> {
    dataset.iter().map(|pr| eval_all_vars(fd, pr)).collect()
}

/// Oracle costs memoized per (problem, ordering), so a pair is priced once
/// per run however many triplets choose it.
struct Evaluator<'a> {
    dataset: &'a [ProblemInstance],
    oracle: &'a dyn CostOracle,
    costs: Vec<Mutex<HashMap<VariableOrder, f64>>>,
}

struct Evaluation {
    w: u64,
    lexicographic: bool,
    orders: Vec<VariableOrder>,
    costs: Vec<f64>,
    total: f64,
}

impl<'a> Evaluator<'a> {
    fn new(dataset: &'a [ProblemInstance], oracle: &'a dyn CostOracle) -> Self {
        Evaluator {
            dataset,
            oracle,
            costs: dataset.iter().map(|_| Mutex::new(HashMap::new())).collect(),
        }
    }

    fn cost(&self, i: usize, ord: &VariableOrder) -> Result<f64, CostError> {
        if let Some(&c) = self.costs[i].lock().expect("cost cache").get(ord) {
            return Ok(c);
        }
        let c = checked(self.oracle.cost(&self.dataset[i], ord)?)?;
        Ok(*self.costs[i].lock().expect("cost cache").entry(ord.clone()).or_insert(c))
    }

    fn evaluate(&self, triplet: &Triplet, cols: [&Column; 3]) -> Result<Evaluation, SearchError> {
        let matrices: Vec<FeatureMatrix> = (0..self.dataset.len())
            .map(|p| {
                let rows = (0..cols[0][p].len())
                    .map(|v| [cols[0][p][v].clone(), cols[1][p][v].clone(), cols[2][p][v].clone()])
                    .collect();
                FeatureMatrix::new(rows)
            })
            .collect();
        let bw = base_weight_for(&matrices)?;
        let lexicographic = bw.fractional || triplet.iter().any(FeatureDescriptor::uses_average);
        let net = HeuristicNetwork::frozen(*triplet, bw.w);
        let orders = matrices
            .iter()
            .zip(self.dataset)
            .map(|(fm, pr)| {
                if lexicographic {
                    Ok(lex_order(fm))
                } else {
                    // w was chosen over this very dataset, so the weight
                    // condition cannot fail here
                    net.order_matrix(fm, pr)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let costs = orders
            .iter()
            .enumerate()
            .map(|(i, o)| self.cost(i, o))
            .collect::<Result<Vec<_>, _>>()?;
        let total = costs.iter().sum();
        Ok(Evaluation {
            w: bw.w,
            lexicographic,
            orders,
            costs,
            total,
        })
    }

    fn candidate(&self, triplet: &Triplet, index: Option<usize>, ev: Evaluation, brown: Option<&[f64]>) -> TripletCandidate {
        let wins_vs_brown = brown.map_or(0, |b| ev.costs.iter().zip(b).filter(|(c, b)| c < b).count());
        TripletCandidate {
            triplet_index: index,
            features: triplet.map(|f| f.code()),
            descriptions: triplet.map(|f| f.description()),
            w: ev.w,
            lexicographic: ev.lexicographic,
            total_cost: ev.total,
            wins_vs_brown,
            per_problem: self
                .dataset
                .iter()
                .zip(ev.orders.iter().zip(&ev.costs))
                .map(|(pr, (o, &cost))| ProblemCost {
                    problem_id: pr.label().to_string(),
                    ordering: o.display(pr),
                    cost,
                })
                .collect(),
        }
    }

    fn evaluate_standalone(&self, triplet: &Triplet) -> Result<Evaluation, SearchError> {
        let cols = triplet
            .iter()
            .map(|fd| column(fd, self.dataset))
            .collect::<Result<Vec<_>, _>>()?;
        self.evaluate(triplet, [&cols[0], &cols[1], &cols[2]])
    }
}

/// Prices one triplet over a dataset, with wins counted against Brown's
/// triplet on the same data.
pub fn evaluate_triplet(
    triplet: &Triplet,
    dataset: &[ProblemInstance],
    oracle: &dyn CostOracle,
) -> Result<TripletCandidate, SearchError> {
    if dataset.is_empty() {
        return Err(SearchError::EmptyDataset);
    }
    let ev = Evaluator::new(dataset, oracle);
    let brown = ev.evaluate_standalone(&brown_features())?;
    let own = ev.evaluate_standalone(triplet)?;
    Ok(ev.candidate(triplet, None, own, Some(&brown.costs)))
}

/// [`search_triplets_with`] with default options and the given `top_k`.
pub fn search_triplets(
    fs: &FeatureSet,
    dataset: &[ProblemInstance],
    oracle: &dyn CostOracle,
    top_k: usize,
) -> Result<SearchReport, SearchError> {
    let opts = SearchOptions {
        top_k,
        ..SearchOptions::default()
    };
    search_triplets_with(fs, dataset, oracle, &opts)
}

/// Evaluates every triplet of the pool and ranks them by total cost, ties
/// broken by triplet index. The report does not depend on the number of
/// worker threads.
pub fn search_triplets_with(
    fs: &FeatureSet,
    dataset: &[ProblemInstance],
    oracle: &dyn CostOracle,
    opts: &SearchOptions,
) -> Result<SearchReport, SearchError> {
    if fs.len() < 3 {
        return Err(SearchError::TooFewFeatures(fs.len()));
    }
    if dataset.is_empty() {
        return Err(SearchError::EmptyDataset);
    }
    let pool = fs.descriptors();
    let positions = triplet_positions(pool.len());
    let dataset_id = dataset_fingerprint(dataset);
    let oracle_id = oracle.id();

    let columns: Vec<Column> = pool
        .par_iter()
        .map(|fd| column(fd, dataset))
        .collect::<Result<_, _>>()?;
    let ev = Evaluator::new(dataset, oracle);
    let triplet_at = |p: &[usize; 3]| -> Triplet { p.map(|i| pool[i]) };
    let cols_at = |p: &[usize; 3]| [&columns[p[0]], &columns[p[1]], &columns[p[2]]];

    let mut totals: Vec<Option<f64>> = vec![None; positions.len()];
    let mut journal = match &opts.journal {
        Some(path) => {
            let header = journal_header(pool, &dataset_id, &oracle_id);
            Some(Journal::open(path, &header, opts.resume, &mut totals)?)
        }
        None => None,
    };

    let pending: Vec<usize> = (0..positions.len()).filter(|&i| totals[i].is_none()).collect();
    for chunk in pending.chunks(opts.checkpoint_every.max(1)) {
        let results = chunk
            .par_iter()
            .map(|&i| {
                let p = &positions[i];
                ev.evaluate(&triplet_at(p), cols_at(p)).map(|e| e.total)
            })
            .collect::<Result<Vec<f64>, _>>()?;
        for (&i, &total) in chunk.iter().zip(&results) {
            totals[i] = Some(total);
        }
        if let Some(j) = journal.as_mut() {
            j.append(chunk.iter().copied().zip(results))?;
        }
    }
    let totals: Vec<f64> = totals.into_iter().map(|t| t.expect("every triplet evaluated")).collect();

    let mut ranking: Vec<usize> = (0..positions.len()).collect();
    ranking.sort_by(|&a, &b| totals[a].total_cmp(&totals[b]).then(a.cmp(&b)));

    let brown = brown_features();
    let brown_eval = ev.evaluate_standalone(&brown)?;
    let brown_costs = brown_eval.costs.clone();
    let brown_index = positions.iter().position(|p| triplet_at(p) == brown);
    let baseline_rank = brown_index.map(|bi| ranking.iter().position(|&i| i == bi).expect("in ranking") + 1);
    let baseline = ev.candidate(&brown, brown_index, brown_eval, None);

    let keep = if opts.top_k == 0 {
        ranking.len()
    } else {
        opts.top_k.min(ranking.len())
    };
    let candidates = ranking[..keep]
        .par_iter()
        .enumerate()
        .map(|(r, &i)| {
            let p = &positions[i];
            let t = triplet_at(p);
            let mut e = ev.evaluate(&t, cols_at(p))?;
            e.total = totals[i];
            Ok(RankedCandidate {
                rank: r + 1,
                candidate: ev.candidate(&t, Some(i), e, Some(&brown_costs)),
            })
        })
        .collect::<Result<Vec<_>, SearchError>>()?;

    Ok(SearchReport {
        dataset_id,
        dataset_size: dataset.len(),
        oracle_id,
        pool_size: pool.len(),
        triplets_evaluated: positions.len(),
        baseline,
        baseline_rank,
        candidates,
    })
}

fn journal_header(pool: &[FeatureDescriptor], dataset_id: &str, oracle_id: &str) -> String {
    let mut h = Sha256::new();
    for fd in pool {
        h.update(fd.code().to_le_bytes());
    }
    format!(
        "{JOURNAL_MAGIC} pool={} dataset={dataset_id} oracle={oracle_id}",
        hex::encode(h.finalize())
    )
}

struct Journal {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Journal {
    /// Opens or creates the journal. When resuming, complete entries are
    /// loaded into `totals` and a partially written last line is dropped.
    fn open(path: &Path, header: &str, resume: bool, totals: &mut [Option<f64>]) -> Result<Self, SearchError> {
        let io = |source| SearchError::Io {
            path: path.to_path_buf(),
            source,
        };
        let bad = |message: String| SearchError::Journal {
            path: path.to_path_buf(),
            message,
        };
        let existing = if resume && path.exists() {
            Some(fs::read_to_string(path).map_err(io)?)
        } else {
            None
        };
        let mut valid_len = 0;
        if let Some(text) = &existing {
            let mut lines = text.split_inclusive('\n').filter(|l| l.ends_with('\n'));
            match lines.next() {
                Some(first) if first.trim_end() == header => valid_len += first.len(),
                Some(_) => return Err(bad("written for a different pool, dataset or oracle".into())),
                None => {}
            }
            for (n, line) in lines.enumerate() {
                let entry = line.trim_end();
                let (idx, total) = entry
                    .split_once(',')
                    .and_then(|(i, t)| Some((i.parse::<usize>().ok()?, t.parse::<f64>().ok()?)))
                    .ok_or_else(|| bad(format!("malformed entry on line {}: `{entry}`", n + 2)))?;
                let slot = totals
                    .get_mut(idx)
                    .ok_or_else(|| bad(format!("triplet index {idx} out of range on line {}", n + 2)))?;
                *slot = Some(total);
                valid_len += line.len();
            }
        }
        let file = if valid_len > 0 {
            let f = OpenOptions::new().write(true).open(path).map_err(io)?;
            f.set_len(valid_len as u64).map_err(io)?;
            drop(f);
            OpenOptions::new().append(true).open(path).map_err(io)?
        } else {
            let mut f = File::create(path).map_err(io)?;
            writeln!(f, "{header}").map_err(io)?;
            f
        };
        Ok(Journal {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    fn append(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) -> Result<(), SearchError> {
        let io = |source| SearchError::Io {
            path: self.path.clone(),
            source,
        };
        for (i, total) in entries {
            writeln!(self.out, "{i},{total}").map_err(io)?;
        }
        self.out.flush().map_err(io)?;
        self.out.get_ref().sync_data().map_err(io)
    }
}

/// CSV mirror of the ranked candidates: `rank,f1,f2,f3,total_cost,wins_vs_brown`
/// with feature ids as in the feature-set JSON.
pub fn write_report_csv<W: Write>(report: &SearchReport, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "f1", "f2", "f3", "total_cost", "wins_vs_brown"])?;
    for rc in &report.candidates {
        let c = &rc.candidate;
        w.write_record([
            rc.rank.to_string(),
            c.features[0].to_string(),
            c.features[1].to_string(),
            c.features[2].to_string(),
            c.total_cost.to_string(),
            c.wins_vs_brown.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::SyntheticCostModel;
    use crate::datagen::{e1, e2, random_dataset, GenConfig};
    use crate::features::selected_triplet;

    fn six_pool() -> FeatureSet {
        let mut d: Vec<FeatureDescriptor> = brown_features().into_iter().chain(selected_triplet()).collect();
        d.sort();
        FeatureSet::from_descriptors(d)
    }

    struct Flat;

    impl CostOracle for Flat {
        fn id(&self) -> String {
            "flat".into()
        }
        fn cost(&self, _: &ProblemInstance, _: &VariableOrder) -> Result<f64, CostError> {
            Ok(1.0)
        }
    }

    #[test]
    fn triplet_counts() {
        for k in [3usize, 4, 6, 10] {
            let fs = FeatureSet::from_descriptors(crate::features::enumerate_descriptors()[..k].to_vec());
            let ts = enumerate_triplets(&fs).unwrap();
            assert_eq!(ts.len(), k * (k - 1) * (k - 2));
            assert!(ts.iter().all(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2]));
        }
        let fs = FeatureSet::from_descriptors(brown_features()[..2].to_vec());
        assert!(matches!(enumerate_triplets(&fs), Err(SearchError::TooFewFeatures(2))));
    }

    #[test]
    fn brown_on_hand_pair() {
        // E1 under x>z>y costs 19; E2 m = (4,3,1) under x>y>z costs 23
        let c = evaluate_triplet(&brown_features(), &[e1(), e2()], &SyntheticCostModel::default()).unwrap();
        assert_eq!(c.total_cost, 42.0);
        assert_eq!(c.per_problem[0].ordering, "x>z>y");
        assert_eq!(c.per_problem[1].ordering, "x>y>z");
        assert_eq!(c.wins_vs_brown, 0);
        assert!(!c.lexicographic);
    }

    #[test]
    fn single_problem_total_is_its_cost() {
        let oracle = SyntheticCostModel::default();
        let c = evaluate_triplet(&selected_triplet(), &[e1()], &oracle).unwrap();
        let o = VariableOrder::parse(&c.per_problem[0].ordering, &e1()).unwrap();
        assert_eq!(c.total_cost, oracle.cost(&e1(), &o).unwrap());
    }

    #[test]
    fn top1_of_three_pool() {
        let fs = FeatureSet::from_descriptors(brown_features().to_vec());
        let ds = random_dataset(&GenConfig::default(), 30).unwrap();
        let oracle = SyntheticCostModel::default();
        let r = search_triplets(&fs, &ds, &oracle, 1).unwrap();
        assert_eq!(r.candidates.len(), 1);
        assert_eq!(r.triplets_evaluated, 6);
        let best = enumerate_triplets(&fs)
            .unwrap()
            .iter()
            .map(|t| evaluate_triplet(t, &ds, &oracle).unwrap().total_cost)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.candidates[0].candidate.total_cost, best);
        assert!(r.candidates[0].candidate.total_cost <= r.baseline.total_cost);
        assert!(r.baseline_rank.is_some());
    }

    #[test]
    fn flat_oracle_ranks_by_index() {
        let r = search_triplets(&six_pool(), &[e1(), e2()], &Flat, 0).unwrap();
        assert_eq!(r.candidates.len(), 120);
        for (n, rc) in r.candidates.iter().enumerate() {
            assert_eq!(rc.rank, n + 1);
            assert_eq!(rc.candidate.triplet_index, Some(n));
            assert_eq!(rc.candidate.total_cost, 2.0);
        }
    }

    #[test]
    fn averaged_triplets_are_flagged() {
        use crate::features::{Aggregator::*, BaseKernel::Degree};
        let av = FeatureDescriptor::new(Degree, [AvM, AvP, Id, Id]);
        let t = [av, brown_features()[0], brown_features()[1]];
        let c = evaluate_triplet(&t, &[e1(), e2()], &SyntheticCostModel::default()).unwrap();
        assert!(c.lexicographic);
    }

    #[test]
    fn resume_reproduces_full_run() {
        let dir = tempfile::tempdir().unwrap();
        let journal = dir.path().join("search.journal");
        let ds = random_dataset(&GenConfig { seed: 5, ..GenConfig::default() }, 20).unwrap();
        let oracle = SyntheticCostModel::default();
        let opts = SearchOptions {
            top_k: 5,
            checkpoint_every: 7,
            journal: Some(journal.clone()),
            resume: false,
        };
        let full = search_triplets_with(&six_pool(), &ds, &oracle, &opts).unwrap();
        let text = fs::read_to_string(&journal).unwrap();
        assert_eq!(text.lines().count(), 121);
        // keep the header, half the entries and a torn final line
        let kept: Vec<&str> = text.lines().take(61).collect();
        fs::write(&journal, kept.join("\n") + "\n17,3").unwrap();
        let resumed = search_triplets_with(&six_pool(), &ds, &oracle, &SearchOptions { resume: true, ..opts.clone() }).unwrap();
        assert_eq!(full, resumed);
        assert_eq!(fs::read_to_string(&journal).unwrap().lines().count(), 121);

        let other = random_dataset(&GenConfig { seed: 6, ..GenConfig::default() }, 20).unwrap();
        assert!(matches!(
            search_triplets_with(&six_pool(), &other, &oracle, &SearchOptions { resume: true, ..opts }),
            Err(SearchError::Journal { .. })
        ));
    }

    #[test]
    fn csv_layout() {
        let r = search_triplets(&six_pool(), &[e1(), e2()], &SyntheticCostModel::default(), 3).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "rank,f1,f2,f3,total_cost,wins_vs_brown");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,"));
    }
}
