use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{eval_all_vars, FeatureDescriptor, FeatureError, FeatureValue};
use crate::datagen::{self, GenConfig};
use crate::polyset::ProblemInstance;

/// A set of pairwise non-equivalent features. `members[i]` lists every
/// candidate merged into `descriptors[i]`, the representative included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSet {
    descriptors: Vec<FeatureDescriptor>,
    members: Vec<Vec<FeatureDescriptor>>,
}

/// One entry of the exported feature-set JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub id: u32,
    pub kernel: super::BaseKernel,
    pub pipeline: [super::Aggregator; 4],
    pub description: String,
    pub class_size: usize,
    #[serde(default)]
    pub members: Vec<u32>,
}

impl FeatureSet {
    /// A pool taken as-is, one singleton class per descriptor.
    pub fn from_descriptors(descriptors: Vec<FeatureDescriptor>) -> Self {
        let members = descriptors.iter().map(|d| vec![*d]).collect();
        FeatureSet { descriptors, members }
    }

    pub fn descriptors(&self) -> &[FeatureDescriptor] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    /// Candidates merged into the representative `fd`.
    pub fn provenance(&self, fd: &FeatureDescriptor) -> Option<&[FeatureDescriptor]> {
        self.descriptors
            .iter()
            .position(|d| d == fd)
            .map(|i| self.members[i].as_slice())
    }

    /// The representative of the class containing `fd`, if any.
    pub fn class_of(&self, fd: &FeatureDescriptor) -> Option<FeatureDescriptor> {
        self.members
            .iter()
            .position(|ms| ms.contains(fd))
            .map(|i| self.descriptors[i])
    }

    pub fn to_records(&self) -> Vec<FeatureRecord> {
        self.descriptors
            .iter()
            .zip(&self.members)
            .map(|(d, ms)| FeatureRecord {
                id: d.code(),
                kernel: d.kernel,
                pipeline: d.pipeline,
                description: d.description(),
                class_size: ms.len(),
                members: ms.iter().map(FeatureDescriptor::code).collect(),
            })
            .collect()
    }

    pub fn from_records(records: &[FeatureRecord]) -> Result<Self, FeatureError> {
        let mut descriptors = Vec::with_capacity(records.len());
        let mut members = Vec::with_capacity(records.len());
        for r in records {
            let fd = FeatureDescriptor::new(r.kernel, r.pipeline);
            fd.validate()?;
            let mut ms: Vec<FeatureDescriptor> =
                r.members.iter().filter_map(|&c| FeatureDescriptor::from_code(c)).collect();
            if !ms.contains(&fd) {
                ms.insert(0, fd);
            }
            descriptors.push(fd);
            members.push(ms);
        }
        Ok(FeatureSet { descriptors, members })
    }
}

/// Merges candidates whose exact values agree on every (problem, variable)
/// pair of the probe set. Each class keeps its simplest member as
/// representative; classes are returned in canonical descriptor order.
pub fn dedup_features(
    candidates: &[FeatureDescriptor],
    probe: &[ProblemInstance],
) -> Result<FeatureSet, FeatureError> {
    let first = probe.first().ok_or(FeatureError::EmptyProbe)?;
    if let Some(bad) = probe.iter().find(|p| p.n_vars() != first.n_vars()) {
        return Err(FeatureError::MixedProbeArity {
            expected: first.n_vars(),
            found: bad.n_vars(),
        });
    }
    for fd in candidates {
        fd.validate()?;
    }

    let signatures: Vec<Vec<FeatureValue>> = candidates
        .par_iter()
        .map(|fd| {
            probe
                .iter()
                .flat_map(|pr| eval_all_vars(fd, pr).expect("validated descriptor"))
                .collect()
        })
        .collect();

    let mut class_of_sig: HashMap<&[FeatureValue], usize> = HashMap::new();
    let mut classes: Vec<Vec<FeatureDescriptor>> = Vec::new();
    for (fd, sig) in candidates.iter().zip(&signatures) {
        let next = classes.len();
        let idx = *class_of_sig.entry(sig.as_slice()).or_insert(next);
        if idx == next {
            classes.push(Vec::new());
        }
        if !classes[idx].contains(fd) {
            classes[idx].push(*fd);
        }
    }

    let mut out: Vec<(FeatureDescriptor, Vec<FeatureDescriptor>)> = classes
        .into_iter()
        .map(|mut ms| {
            ms.sort();
            let rep = *ms
                .iter()
                .min_by_key(|d| d.simplicity_key())
                .expect("classes are nonempty");
            (rep, ms)
        })
        .collect();
    out.sort_by_key(|(rep, _)| *rep);
    let (descriptors, members) = out.into_iter().unzip();
    Ok(FeatureSet { descriptors, members })
}

/// Seeded random problems plus the hand-built separating instances.
pub fn default_probe() -> Vec<ProblemInstance> {
    let cfg = GenConfig {
        seed: 0,
        ..GenConfig::default()
    };
    let mut probe = datagen::random_dataset(&cfg, 200).expect("count is positive");
    probe.extend(datagen::hand_instances());
    probe
}
