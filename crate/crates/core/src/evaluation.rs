//! Evaluation harness: per-joint error tables, realizability through the oracle, posterior
//! coverage, the redundancy (multimodality) probe, principal-component embeddings, the
//! sampling-strategy ablation, and the CSV/SVG/summary writers.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::backward::{select_expert, train_bgn, Bgn, BgnConfig};
use crate::dataset::{
    generate, pathology_conditions, quantize, sample_conditions, sample_grid, ConditionSample,
    Dataset, DatasetTuple, SamplingStrategy,
};
use crate::forward::{rollout, train_fgn, FgnConfig};
use crate::gait::{joint_angle_error_deg, AngleStats, ConditionSpace, GaitPattern};
use crate::nn::Network;
use crate::oracle::Oracle;
use crate::{Error, Result};

/// Joint-average error (degrees) a case must not exceed to count as realizable.
pub const REALIZABLE_DEG: f64 = 10.0;
/// Default posterior sample count for coverage and multimodality probes.
pub const DEFAULT_SAMPLES: usize = 1000;
/// Nearest-neighbour percentile used by the coverage rule.
pub const COVERAGE_PERCENTILE: f64 = 0.95;
/// Normalized distance within which a sample counts as reaching a redundant solution.
pub const MULTIMODAL_TOL: f64 = 0.15;

/// Per-joint error statistics of one evaluated case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseErrors {
    pub label: String,
    pub joints: Vec<AngleStats>,
}

impl CaseErrors {
    pub fn joint_average(&self) -> f64 {
        mean(self.joints.iter().map(|s| s.mean))
    }
}

/// Per-case and pooled per-joint angle errors.
///
/// Every case covers the same number of frames, so the pooled mean is the mean of case means
/// and the pooled variance is the mean of case variances plus the variance of case means.
#[derive(Debug, Clone, PartialEq)]
pub struct JointErrorTable {
    pub joint_names: Vec<String>,
    pub cases: Vec<CaseErrors>,
}

impl JointErrorTable {
    pub fn pooled(&self) -> Vec<AngleStats> {
        (0..self.joint_names.len())
            .map(|j| {
                let means: Vec<f64> = self.cases.iter().map(|c| c.joints[j].mean).collect();
                let between = AngleStats::from_samples(&means);
                let within = mean(self.cases.iter().map(|c| c.joints[j].variance));
                AngleStats {
                    mean: between.mean,
                    variance: within + between.variance,
                }
            })
            .collect()
    }

    /// Mean over joints of the pooled per-joint mean.
    pub fn joint_average(&self) -> f64 {
        mean(self.pooled().iter().map(|s| s.mean))
    }

    /// One row per case: label, per-joint mean and variance, joint average.
    pub fn cases_csv(&self) -> String {
        let mut out = String::from("case,label");
        for j in &self.joint_names {
            let _ = write!(out, ",{j}_mean,{j}_var");
        }
        out.push_str(",joint_avg\n");
        for (i, c) in self.cases.iter().enumerate() {
            let _ = write!(out, "{i},{}", c.label);
            for s in &c.joints {
                let _ = write!(out, ",{},{}", s.mean, s.variance);
            }
            let _ = writeln!(out, ",{}", c.joint_average());
        }
        out
    }

    /// One row per joint plus a final `joint_avg` row.
    pub fn pooled_csv(&self) -> String {
        let mut out = String::from("joint,mean_deg,var_deg2\n");
        let pooled = self.pooled();
        for (name, s) in self.joint_names.iter().zip(&pooled) {
            let _ = writeln!(out, "{name},{},{}", s.mean, s.variance);
        }
        let _ = writeln!(out, "joint_avg,{},", self.joint_average());
        out
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Labels for holdout tuples: the oracle preset name when the tuple is that preset at the
/// reference gait condition, otherwise `case<i>`.
pub fn holdout_labels(oracle: &Oracle, holdout: &Dataset) -> Vec<String> {
    let space = oracle.space();
    let presets: Vec<(String, ConditionSample)> = pathology_conditions(oracle)
        .into_iter()
        .map(|(n, c)| (n, quantize(&c, space)))
        .collect();
    (0..holdout.len())
        .map(|i| {
            let anatomy = holdout.anatomy(i);
            let gait = holdout.gait_condition(i);
            presets
                .iter()
                .find(|(_, c)| c.anatomy == anatomy && c.gait == gait)
                .map(|(n, _)| n.clone())
                .unwrap_or_else(|| format!("case{i}"))
        })
        .collect()
}

/// Compares `predict(index, tuple)` with each holdout gait. Cases run in parallel; results keep
/// holdout order.
pub fn eval_patterns<F>(
    oracle: &Oracle,
    holdout: &Dataset,
    predict: F,
) -> Result<JointErrorTable>
where
    F: Fn(usize, &DatasetTuple) -> Result<GaitPattern> + Sync,
{
    let labels = holdout_labels(oracle, holdout);
    let cases = (0..holdout.len())
        .into_par_iter()
        .map(|i| {
            let t = holdout.tuple(i);
            let predicted = predict(i, &t)?;
            Ok(CaseErrors {
                label: labels[i].clone(),
                joints: joint_angle_error_deg(&predicted, &t.gait)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(JointErrorTable {
        joint_names: oracle.joints().to_vec(),
        cases,
    })
}

/// Forward-network rollouts against the holdout gaits.
pub fn eval_forward(fgn: &Network, oracle: &Oracle, holdout: &Dataset) -> Result<JointErrorTable> {
    let space = oracle.space();
    eval_patterns(oracle, holdout, |_, t| {
        rollout(fgn, space, &t.anatomy, &t.gait_condition)
    })
}

/// A muscle prediction together with the expert that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MusclePrediction {
    pub expert: usize,
    pub muscle: Vec<f64>,
}

/// Oracle re-simulation of predicted muscle conditions (true skeleton and gait condition).
#[derive(Debug, Clone, PartialEq)]
pub struct RealizabilityReport {
    pub errors: JointErrorTable,
    pub predictions: Vec<MusclePrediction>,
    pub threshold_deg: f64,
}

impl RealizabilityReport {
    pub fn passed(&self) -> Vec<bool> {
        self.errors
            .cases
            .iter()
            .map(|c| c.joint_average() <= self.threshold_deg)
            .collect()
    }

    pub fn passed_count(&self) -> usize {
        self.passed().into_iter().filter(|&p| p).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("case,label,expert,joint_avg_deg,pass\n");
        for (i, ((c, p), ok)) in self
            .errors
            .cases
            .iter()
            .zip(&self.predictions)
            .zip(self.passed())
            .enumerate()
        {
            let _ = writeln!(
                out,
                "{i},{},{},{},{}",
                c.label,
                p.expert,
                c.joint_average(),
                ok
            );
        }
        out
    }
}

/// Realizability for an arbitrary muscle predictor.
pub fn eval_realizability_with<F>(
    oracle: &Oracle,
    holdout: &Dataset,
    predict: F,
) -> Result<RealizabilityReport>
where
    F: Fn(&DatasetTuple) -> Result<MusclePrediction> + Sync,
{
    let predictions = (0..holdout.len())
        .into_par_iter()
        .map(|i| predict(&holdout.tuple(i)))
        .collect::<Result<Vec<_>>>()?;
    let space = oracle.space();
    let errors = eval_patterns(oracle, holdout, |i, t| {
        let mut anatomy = t.anatomy.clone();
        anatomy.muscle = clamp_muscle(space, &predictions[i].muscle);
        oracle.simulate(&anatomy, &t.gait_condition)
    });
    Ok(RealizabilityReport {
        errors: errors?,
        predictions,
        threshold_deg: REALIZABLE_DEG,
    })
}

fn clamp_muscle(space: &ConditionSpace, muscle: &[f64]) -> Vec<f64> {
    space
        .muscle()
        .iter()
        .zip(muscle)
        .map(|(p, &v)| v.clamp(p.min, p.max))
        .collect()
}

/// Realizability of the selected expert's posterior-mean prediction.
pub fn eval_realizability(
    experts: &[Bgn],
    fgn: &Network,
    oracle: &Oracle,
    holdout: &Dataset,
) -> Result<RealizabilityReport> {
    let space = oracle.space();
    eval_realizability_with(oracle, holdout, |t| {
        let (expert, muscle) = select_expert(
            experts,
            fgn,
            space,
            &t.gait,
            &t.gait_condition,
            &t.anatomy.skeleton,
        )?;
        Ok(MusclePrediction { expert, muscle })
    })
}

/// Mean `|ĉ − 1|` over the oracle-inert muscle parameters of every prediction, or `None`
/// when the oracle has no inert muscle parameter.
pub fn inert_deviation(oracle: &Oracle, predictions: &[MusclePrediction]) -> Option<f64> {
    let n_skeleton = oracle.space().n_skeleton();
    let inert: Vec<usize> = oracle
        .inert_params()
        .into_iter()
        .filter(|&p| p >= n_skeleton)
        .map(|p| p - n_skeleton)
        .collect();
    if inert.is_empty() || predictions.is_empty() {
        return None;
    }
    Some(mean(predictions.iter().flat_map(|p| {
        inert.iter().map(move |&k| (p.muscle[k] - 1.0).abs())
    })))
}

/// Outcome of the nearest-neighbour coverage rule for one case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageStats {
    pub covered: bool,
    /// Distance from the ground truth to its nearest sample.
    pub truth_distance: f64,
    /// Percentile of the samples' own nearest-neighbour distances.
    pub threshold: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Covered when the truth's nearest-sample distance does not exceed the 95th percentile
/// (nearest rank) of the samples' nearest-neighbour distances.
pub fn coverage(samples: &[Vec<f64>], truth: &[f64]) -> Result<CoverageStats> {
    if samples.is_empty() {
        return Err(Error::Config("coverage needs at least one sample".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.len() != truth.len()) {
        return Err(Error::Dimension {
            what: "coverage sample",
            expected: truth.len(),
            got: s.len(),
        });
    }
    let n = samples.len();
    let mut nn: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| dist(&samples[i], &samples[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let threshold = if n == 1 {
        0.0
    } else {
        nn.sort_by(f64::total_cmp);
        let rank = (COVERAGE_PERCENTILE * n as f64).ceil() as usize;
        nn[rank.clamp(1, n) - 1]
    };
    let truth_distance = samples
        .iter()
        .map(|s| dist(s, truth))
        .fold(f64::INFINITY, f64::min);
    Ok(CoverageStats {
        covered: truth_distance <= threshold,
        truth_distance,
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub labels: Vec<String>,
    pub experts: Vec<usize>,
    pub cases: Vec<CoverageStats>,
}

impl CoverageReport {
    pub fn covered_fraction(&self) -> f64 {
        if self.cases.is_empty() {
            return 0.0;
        }
        self.cases.iter().filter(|c| c.covered).count() as f64 / self.cases.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("case,label,expert,truth_nn_distance,threshold,covered\n");
        for (i, c) in self.cases.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{}",
                self.labels[i], self.experts[i], c.truth_distance, c.threshold, c.covered
            );
        }
        out
    }
}

/// Per-case sample seed: decorrelates cases while staying a pure function of `seed`.
fn case_seed(seed: u64, case: usize) -> u64 {
    seed ^ (case as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Coverage of the ground-truth muscle condition by `n` samples of the selected expert,
/// measured in normalized muscle space.
pub fn eval_coverage(
    experts: &[Bgn],
    fgn: &Network,
    oracle: &Oracle,
    holdout: &Dataset,
    n: usize,
    seed: u64,
) -> Result<CoverageReport> {
    let space = oracle.space();
    let rows = (0..holdout.len())
        .into_par_iter()
        .map(|i| {
            let t = holdout.tuple(i);
            let skeleton = &t.anatomy.skeleton;
            let (e, _) = select_expert(experts, fgn, space, &t.gait, &t.gait_condition, skeleton)?;
            let samples: Vec<Vec<f64>> = experts[e]
                .posterior_samples(space, &t.gait, &t.gait_condition, skeleton, n, case_seed(seed, i))?
                .into_iter()
                .map(|p| space.normalize_muscle(&p.muscle))
                .collect();
            Ok((e, coverage(&samples, &space.normalize_muscle(&t.anatomy.muscle))?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (experts_used, cases) = rows.into_iter().unzip();
    Ok(CoverageReport {
        labels: holdout_labels(oracle, holdout),
        experts: experts_used,
        cases,
    })
}

/// Posterior samples for a gait with two oracle-certified solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalityReport {
    pub preset: String,
    pub redundancy: String,
    pub expert: usize,
    /// Normalized muscle conditions of the two solutions.
    pub solution_a: Vec<f64>,
    pub solution_b: Vec<f64>,
    /// Muscle indices along which the two solutions differ.
    pub coordinates: Vec<usize>,
    /// Nearest-sample distances over `coordinates`.
    pub nearest_a: f64,
    pub nearest_b: f64,
    /// Nearest-sample distances over the full muscle vector.
    pub nearest_a_full: f64,
    pub nearest_b_full: f64,
    pub tolerance: f64,
    pub samples: Vec<Vec<f64>>,
}

impl MultimodalityReport {
    pub fn passed(&self) -> bool {
        self.nearest_a <= self.tolerance && self.nearest_b <= self.tolerance
    }
}

/// Probes the posterior for the gait of oracle preset `preset`, paired with the point the
/// first redundancy touching the preset reaches at its largest valid magnitude.
pub fn eval_multimodality(
    experts: &[Bgn],
    fgn: &Network,
    oracle: &Oracle,
    preset: &str,
    n: usize,
    seed: u64,
) -> Result<MultimodalityReport> {
    let space = oracle.space();
    let a = oracle
        .preset(preset)
        .ok_or_else(|| Error::Config(format!("oracle has no preset `{preset}`")))?;
    let touched: Vec<usize> = oracle
        .presets()
        .iter()
        .find(|p| p.name == preset)
        .map(|p| p.values.iter().map(|&(i, _)| i).collect())
        .unwrap_or_default();
    let (r_idx, r) = oracle
        .redundancies()
        .iter()
        .enumerate()
        .find(|(_, r)| r.direction.iter().any(|(i, _)| touched.contains(i)))
        .ok_or_else(|| Error::Config(format!("no redundancy involves preset `{preset}`")))?;
    let (lo, hi) = oracle.redundancy_span(&a, r_idx)?;
    let magnitude = if hi.abs() >= lo.abs() { hi } else { lo };
    if magnitude == 0.0 {
        return Err(Error::Config(format!(
            "redundancy `{}` has no room around preset `{preset}`",
            r.name
        )));
    }
    let b = oracle.redundant_pair(&a, r_idx, magnitude)?;
    let gait_condition = space.reference_gait();
    let gait = oracle.simulate(&a, &gait_condition)?;
    let (expert, _) = select_expert(experts, fgn, space, &gait, &gait_condition, &a.skeleton)?;
    let samples: Vec<Vec<f64>> = experts[expert]
        .posterior_samples(space, &gait, &gait_condition, &a.skeleton, n, seed)?
        .into_iter()
        .map(|p| space.normalize_muscle(&p.muscle))
        .collect();
    let na = space.normalize_muscle(&a.muscle);
    let nb = space.normalize_muscle(&b.muscle);
    let n_skeleton = space.n_skeleton();
    let coordinates: Vec<usize> = r
        .direction
        .iter()
        .filter(|&&(i, _)| i >= n_skeleton)
        .map(|&(i, _)| i - n_skeleton)
        .collect();
    let project = |v: &[f64]| -> Vec<f64> { coordinates.iter().map(|&k| v[k]).collect() };
    let nearest = |target: &[f64], proj: bool| {
        let t = if proj { project(target) } else { target.to_vec() };
        samples
            .iter()
            .map(|s| {
                if proj {
                    dist(&project(s), &t)
                } else {
                    dist(s, &t)
                }
            })
            .fold(f64::INFINITY, f64::min)
    };
    Ok(MultimodalityReport {
        preset: preset.to_string(),
        redundancy: r.name.clone(),
        expert,
        nearest_a: nearest(&na, true),
        nearest_b: nearest(&nb, true),
        nearest_a_full: nearest(&na, false),
        nearest_b_full: nearest(&nb, false),
        solution_a: na,
        solution_b: nb,
        coordinates,
        tolerance: MULTIMODAL_TOL,
        samples,
    })
}

/// Samples and ground truth projected onto the samples' top two principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub samples: Vec<[f64; 2]>,
    pub truth: [f64; 2],
    /// Fraction of total sample variance along each component.
    pub explained: [f64; 2],
}

impl Embedding {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,index,pc1,pc2\n");
        for (i, p) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "sample,{i},{},{}", p[0], p[1]);
        }
        let _ = writeln!(out, "truth,0,{},{}", self.truth[0], self.truth[1]);
        out
    }

    pub fn to_svg(&self, title: &str) -> String {
        let all: Vec<[f64; 2]> = self.samples.iter().copied().chain([self.truth]).collect();
        let frame = PlotFrame::fit(
            all.iter().map(|p| p[0]),
            all.iter().map(|p| p[1]),
        );
        let mut body = String::new();
        for p in &self.samples {
            let (x, y) = frame.map(p[0], p[1]);
            let _ = writeln!(
                body,
                r##"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="#4477aa" fill-opacity="0.5"/>"##
            );
        }
        let (x, y) = frame.map(self.truth[0], self.truth[1]);
        let _ = writeln!(
            body,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="6" fill="none" stroke="#cc3311" stroke-width="2.5"/>"##
        );
        let caption = format!(
            "PC1 {:.1}% / PC2 {:.1}% of variance; principal-component projection, ring = ground truth",
            100.0 * self.explained[0],
            100.0 * self.explained[1]
        );
        frame.document(title, &caption, &body)
    }
}

/// Principal-component projection of `samples` (and `truth`) to two dimensions. Components
/// are signed so their largest-magnitude entry is positive.
pub fn embed_2d(samples: &[Vec<f64>], truth: &[f64]) -> Result<Embedding> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Config("embedding needs at least one sample".into()));
    }
    let d = truth.len();
    if let Some(s) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::Dimension {
            what: "embedding sample",
            expected: d,
            got: s.len(),
        });
    }
    let centre: Vec<f64> = (0..d)
        .map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for s in samples {
        for a in 0..d {
            let da = s[a] - centre[a];
            for b in 0..d {
                cov[(a, b)] += da * (s[b] - centre[b]);
            }
        }
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut axes = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0; 2];
    for (slot, &k) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes[slot] = v;
        explained[slot] = if total > 0.0 {
            eig.eigenvalues[k].max(0.0) / total
        } else {
            0.0
        };
    }
    let project = |p: &[f64]| -> [f64; 2] {
        let c = |axis: &[f64]| {
            p.iter()
                .zip(&centre)
                .zip(axis)
                .map(|((x, m), a)| (x - m) * a)
                .sum()
        };
        [c(&axes[0]), c(&axes[1])]
    };
    Ok(Embedding {
        samples: samples.iter().map(|s| project(s)).collect(),
        truth: project(truth),
        explained,
    })
}

/// Data-sampling strategy pair: forward-network data, then backward-network data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategyPair {
    pub forward: SamplingStrategy,
    pub backward: SamplingStrategy,
}

impl StrategyPair {
    pub const ALL: [StrategyPair; 3] = [
        StrategyPair::new(SamplingStrategy::Uniform, SamplingStrategy::Uniform),
        StrategyPair::new(SamplingStrategy::Uniform, SamplingStrategy::Grid),
        StrategyPair::new(SamplingStrategy::Grid, SamplingStrategy::Grid),
    ];

    pub const fn new(forward: SamplingStrategy, backward: SamplingStrategy) -> Self {
        Self { forward, backward }
    }

    pub fn name(&self) -> String {
        let cap = |s: SamplingStrategy| match s {
            SamplingStrategy::Uniform => "Uniform",
            SamplingStrategy::Grid => "Grid",
        };
        format!("{}-{}", cap(self.forward), cap(self.backward))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    /// Training tuples per strategy and seed.
    pub n_tuples: usize,
    /// Corner conditions in the extreme holdout (pathology presets are added on top).
    pub n_extreme: usize,
    pub holdout_seed: u64,
    pub fgn: FgnConfig,
    pub bgn: BgnConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub pair: StrategyPair,
    /// Joint-average realizability error per seed.
    pub per_seed: Vec<f64>,
    /// All seeds' cases pooled.
    pub errors: JointErrorTable,
}

impl AblationRow {
    pub fn joint_average(&self) -> f64 {
        mean(self.per_seed.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, pair: StrategyPair) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.pair == pair)
    }

    /// Table layout: one row per strategy pair, mean and variance per joint, joint average.
    pub fn to_csv(&self) -> String {
        let Some(first) = self.rows.first() else {
            return String::from("setting\n");
        };
        let mut out = String::from("setting");
        for j in &first.errors.joint_names {
            let _ = write!(out, ",{j}_mean,{j}_var");
        }
        out.push_str(",joint_avg\n");
        for r in &self.rows {
            out.push_str(&r.pair.name());
            for s in r.errors.pooled() {
                let _ = write!(out, ",{},{}", s.mean, s.variance);
            }
            let _ = writeln!(out, ",{}", r.joint_average());
        }
        out
    }
}

/// The shared extreme-condition holdout: oracle pathology presets plus corner conditions.
pub fn extreme_holdout(oracle: &Oracle, n_corners: usize, seed: u64) -> Result<Dataset> {
    let space = oracle.space();
    let mut conditions: Vec<ConditionSample> = pathology_conditions(oracle)
        .into_iter()
        .map(|(_, c)| c)
        .collect();
    conditions.extend(sample_grid(n_corners, space, seed));
    generate(&conditions, oracle, SamplingStrategy::Grid, seed)
}

/// Trains each strategy pair per seed (a forward network per data strategy, a single
/// backward network per pair) and measures realizability on the extreme holdout.
pub fn run_ablation(oracle: &Oracle, cfg: &AblationConfig) -> Result<AblationReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let space = oracle.space();
    let holdout = extreme_holdout(oracle, cfg.n_extreme, cfg.holdout_seed)?;
    let mut rows: Vec<AblationRow> = StrategyPair::ALL
        .iter()
        .map(|&pair| AblationRow {
            pair,
            per_seed: Vec::new(),
            errors: JointErrorTable {
                joint_names: oracle.joints().to_vec(),
                cases: Vec::new(),
            },
        })
        .collect();
    for &seed in &cfg.seeds {
        let data = |strategy| -> Result<Dataset> {
            let conds = sample_conditions(strategy, cfg.n_tuples, space, seed);
            generate(&conds, oracle, strategy, seed)
        };
        let uniform = data(SamplingStrategy::Uniform)?;
        let grid = data(SamplingStrategy::Grid)?;
        let pick = |s| match s {
            SamplingStrategy::Uniform => &uniform,
            SamplingStrategy::Grid => &grid,
        };
        let fgn_cfg = FgnConfig {
            seed: cfg.fgn.seed.wrapping_add(seed),
            ..cfg.fgn.clone()
        };
        let bgn_cfg = BgnConfig {
            seed: cfg.bgn.seed.wrapping_add(seed),
            ..cfg.bgn.clone()
        };
        let fgn_u = train_fgn(&uniform, space, &fgn_cfg)?.0;
        let fgn_g = train_fgn(&grid, space, &fgn_cfg)?.0;
        for row in rows.iter_mut() {
            let fgn = match row.pair.forward {
                SamplingStrategy::Uniform => &fgn_u,
                SamplingStrategy::Grid => &fgn_g,
            };
            let bgn = train_bgn(pick(row.pair.backward), space, fgn, &bgn_cfg)?.0;
            let report = eval_realizability(std::slice::from_ref(&bgn), fgn, oracle, &holdout)?;
            row.per_seed.push(report.errors.joint_average());
            row.errors.cases.extend(report.errors.cases);
        }
    }
    Ok(AblationReport { rows })
}

struct PlotFrame {
    x: (f64, f64),
    y: (f64, f64),
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 480.0;
const MARGIN: f64 = 60.0;

impl PlotFrame {
    fn fit(xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it
                .filter(|v| v.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                    (a.min(v), b.max(v))
                });
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let (mut xs, mut ys) = (xs, ys);
        Self {
            x: span(&mut xs),
            y: span(&mut ys),
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (PLOT_W - 2.0 * MARGIN);
        let py = PLOT_H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (PLOT_H - 2.0 * MARGIN);
        (px, py)
    }

    fn document(&self, title: &str, caption: &str, body: &str) -> String {
        let (x0, y0) = (MARGIN, PLOT_H - MARGIN);
        let (x1, y1) = (PLOT_W - MARGIN, MARGIN);
        format!(
            r##"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_W}" height="{PLOT_H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{cx}" y="24" text-anchor="middle" font-size="15">{title}</text>
<rect x="{x0}" y="{y1}" width="{w}" height="{h}" fill="none" stroke="#888"/>
<text x="{x0}" y="{ly}" >{xlo:.3}</text><text x="{x1}" y="{ly}" text-anchor="end">{xhi:.3}</text>
<text x="{lx}" y="{y0}" text-anchor="end">{ylo:.3}</text><text x="{lx}" y="{y1t}" text-anchor="end">{yhi:.3}</text>
{body}<text x="{cx}" y="{cy}" text-anchor="middle" fill="#555">{caption}</text>
</svg>
"##,
            cx = PLOT_W / 2.0,
            w = x1 - x0,
            h = y0 - y1,
            ly = y0 + 16.0,
            lx = x0 - 6.0,
            y1t = y1 + 10.0,
            cy = PLOT_H - 12.0,
            xlo = self.x.0,
            xhi = self.x.1,
            ylo = self.y.0,
            yhi = self.y.1,
            title = xml_escape(title),
            caption = xml_escape(caption),
        )
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot of per-epoch losses (log10 scale), one polyline per series.
pub fn loss_curve_svg(title: &str, series: &[(&str, &[f64])]) -> String {
    const COLOURS: [&str; 6] = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"];
    let log = |v: f64| v.max(1e-300).log10();
    let xs = series.iter().flat_map(|(_, v)| (0..v.len()).map(|i| i as f64));
    let ys = series.iter().flat_map(|(_, v)| v.iter().map(|&x| log(x)));
    let frame = PlotFrame::fit(xs, ys);
    let mut body = String::new();
    for (k, (name, values)) in series.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (x, y) = frame.map(i as f64, log(v));
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            body,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            body,
            r#"<text x="{}" y="{}" fill="{colour}">{}</text>"#,
            PLOT_W - MARGIN - 4.0,
            MARGIN + 16.0 * (k as f64 + 1.0),
            xml_escape(name)
        );
    }
    frame.document(title, "epoch vs log10 loss", &body)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        })
    }
}

/// One line of the evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub id: u32,
    pub name: String,
    pub status: Status,
    pub detail: String,
}

impl Criterion {
    pub fn check(id: u32, name: &str, ok: bool, detail: String) -> Self {
        Self {
            id,
            name: name.to_string(),
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
        }
    }

    pub fn skip(id: u32, name: &str, why: &str) -> Self {
        Self {
            id,
            name: name.to_string(),
            status: Status::Skip,
            detail: why.to_string(),
        }
    }
}

/// Plain-text summary: one `[STATUS] id name: detail` line per criterion and a footer.
pub fn summary_text(criteria: &[Criterion]) -> String {
    let mut out = String::from("gaitnet evaluation summary\n\n");
    for c in criteria {
        let _ = writeln!(out, "[{}] {:>2} {}: {}", c.status, c.id, c.name, c.detail);
    }
    out.push_str(
        "\nThresholds (8 deg forward, 10 deg realizability, 80% coverage, 0.15 redundancy \
         distance, 0.1 inert deviation) are desk-scale analogs measured against a synthetic \
         oracle, not results of the full-scale physics pipeline.\n\
         2D embeddings use a principal-component projection.\n",
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gait::{rot_decode, rot_encode, joint_rotation};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn holdout(n: usize, seed: u64) -> (Oracle, Dataset) {
        let o = Oracle::desk();
        let conds = crate::dataset::sample_uniform(n, o.space(), seed);
        let ds = generate(&conds, &o, SamplingStrategy::Uniform, seed).unwrap();
        (o, ds)
    }

    fn rotate_joint(p: &GaitPattern, joint: usize, deg: f64) -> GaitPattern {
        let layout = p.layout();
        let mut data = p.as_slice().to_vec();
        let extra = joint_rotation(deg.to_radians(), 0.0, 0.0);
        for k in 0..crate::gait::FRAMES {
            let off = k * layout.dim() + layout.joint_offset(joint);
            let r = rot_decode(&data[off..off + 6]).unwrap() * extra;
            data[off..off + 6].copy_from_slice(&rot_encode(&r));
        }
        GaitPattern::from_flat(layout, data).unwrap()
    }

    #[test]
    fn perfect_predictor_scores_zero() {
        let (o, ds) = holdout(6, 1);
        let t = eval_patterns(&o, &ds, |_, t| Ok(t.gait.clone())).unwrap();
        assert_eq!(t.cases.len(), 6);
        assert!(t.pooled().iter().all(|s| s.mean < 1e-5 && s.variance < 1e-9));
        let r = eval_realizability_with(&o, &ds, |t| {
            Ok(MusclePrediction {
                expert: 0,
                muscle: t.anatomy.muscle.clone(),
            })
        })
        .unwrap();
        assert_eq!(r.passed_count(), 6);
        assert!(r.errors.joint_average() < 1e-5);
    }

    #[test]
    fn constant_offset_shows_on_one_joint() {
        let (o, ds) = holdout(4, 2);
        let t = eval_patterns(&o, &ds, |_, t| Ok(rotate_joint(&t.gait, 4, 5.0))).unwrap();
        let pooled = t.pooled();
        for (j, s) in pooled.iter().enumerate() {
            if j == 4 {
                assert!((s.mean - 5.0).abs() < 1e-6, "{}", s.mean);
                assert!(s.variance < 1e-9);
            } else {
                assert!(s.mean < 1e-5);
            }
        }
        assert!((t.joint_average() - 5.0 / 9.0).abs() < 1e-6);
    }

    #[test]
    fn pooled_stats_are_recomputable_from_frames() {
        let (o, ds) = holdout(5, 3);
        let offsets = [1.0, 2.0, 4.0, 0.5, 3.0];
        let t = eval_patterns(&o, &ds, |i, t| {
            Ok(rotate_joint(&t.gait, 0, offsets[i]))
        })
        .unwrap();
        // Pooled over every (case, frame) sample directly.
        let mut all = Vec::new();
        for (i, _) in offsets.iter().enumerate() {
            let t2 = ds.tuple(i);
            let e = crate::gait::joint_angle_errors_deg(
                &rotate_joint(&t2.gait, 0, offsets[i]),
                &t2.gait,
            )
            .unwrap();
            all.extend_from_slice(&e[0]);
        }
        let direct = AngleStats::from_samples(&all);
        let p = t.pooled()[0];
        assert!((p.mean - direct.mean).abs() < 1e-9);
        assert!((p.variance - direct.variance).abs() < 1e-9);
        // And the CSV carries enough to redo it.
        let csv = t.cases_csv();
        let means: Vec<f64> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        assert!((means.iter().sum::<f64>() / 5.0 - p.mean).abs() < 1e-9);
    }

    #[test]
    fn labels_name_the_presets() {
        let o = Oracle::desk();
        let forced: Vec<ConditionSample> =
            pathology_conditions(&o).into_iter().map(|(_, c)| c).collect();
        let ds = generate(&forced, &o, SamplingStrategy::Uniform, 0).unwrap();
        let names: Vec<String> = o.presets().iter().map(|p| p.name.clone()).collect();
        assert_eq!(holdout_labels(&o, &ds), names);
    }

    #[test]
    fn inert_deviation_of_reference_is_zero() {
        let o = Oracle::desk();
        let p = MusclePrediction {
            expert: 0,
            muscle: o.space().reference_anatomy().muscle,
        };
        assert_eq!(inert_deviation(&o, &[p]), Some(0.0));
    }

    #[test]
    fn coverage_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cloud: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let c = coverage(&cloud, &cloud[17]).unwrap();
        assert!(c.covered && c.truth_distance == 0.0);
        // 10x the cloud diameter away.
        let far = coverage(&cloud, &[10.0 * 3f64.sqrt() + 1.0, 0.0, 0.0]).unwrap();
        assert!(!far.covered);
        assert!(coverage(&[], &[0.0]).is_err());
        assert!(coverage(&[vec![0.0, 1.0]], &[0.0]).is_err());
        let single = coverage(&[vec![0.5]], &[0.5]).unwrap();
        assert!(single.covered);
    }

    #[test]
    fn coverage_threshold_is_nearest_rank_percentile() {
        // Points on a line at 0, 1, 3, 6, ... gaps 1..=20; NN distances are known.
        let mut xs = vec![0.0];
        for g in 1..=20 {
            xs.push(xs.last().unwrap() + g as f64);
        }
        let samples: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let mut nn: Vec<f64> = (0..21)
            .map(|i: usize| {
                let left = if i > 0 { i as f64 } else { f64::INFINITY };
                let right = if i < 20 { (i + 1) as f64 } else { f64::INFINITY };
                left.min(right)
            })
            .collect();
        nn.sort_by(f64::total_cmp);
        // ceil(0.95 * 21) = 20th smallest.
        let c = coverage(&samples, &[1000.0]).unwrap();
        assert_eq!(c.threshold, nn[19]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn coverage_is_permutation_invariant(seed in 0u64..1000, truth in prop::collection::vec(-1.0f64..2.0, 2)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cloud: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random(), rng.random()]).collect();
            let mut shuffled = cloud.clone();
            for i in (1..shuffled.len()).rev() {
                let j = rng.random_range(0..=i);
                shuffled.swap(i, j);
            }
            prop_assert_eq!(coverage(&cloud, &truth).unwrap(), coverage(&shuffled, &truth).unwrap());
        }
    }

    #[test]
    fn isotropic_cloud_splits_variance_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud: Vec<Vec<f64>> = (0..20_000)
            .map(|_| (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let e = embed_2d(&cloud, &[0.0, 0.0]).unwrap();
        assert!((e.explained[0] - 0.5).abs() < 0.02, "{:?}", e.explained);
        assert!((e.explained[1] - 0.5).abs() < 0.02);
        assert_eq!(e.to_csv().lines().count(), 1 + cloud.len() + 1);
    }

    #[test]
    fn one_axis_cloud_is_one_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dir = [0.6, 0.0, -0.8, 0.0];
        let cloud: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let t: f64 = rng.sample(StandardNormal);
                dir.iter()
                    .map(|d| 3.0 * t * d + 1e-3 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let e = embed_2d(&cloud, &[0.0; 4]).unwrap();
        assert!(e.explained[0] > 0.99);
        let svg = e.to_svg("cloud");
        assert!(svg.starts_with("<svg") && svg.contains("ground truth"));
        assert_eq!(svg.matches("<circle").count(), 501);
    }

    #[test]
    fn embedding_rejects_bad_input() {
        assert!(embed_2d(&[], &[0.0]).is_err());
        assert!(embed_2d(&[vec![1.0, 2.0]], &[0.0]).is_err());
    }

    #[test]
    fn strategy_pair_names() {
        let names: Vec<String> = StrategyPair::ALL.iter().map(|p| p.name()).collect();
        assert_eq!(names, ["Uniform-Uniform", "Uniform-Grid", "Grid-Grid"]);
    }

    #[test]
    fn extreme_holdout_is_presets_then_corners() {
        let o = Oracle::desk();
        let h = extreme_holdout(&o, 5, 9).unwrap();
        assert_eq!(h.len(), o.presets().len() + 5);
        let s = o.space();
        for i in o.presets().len()..h.len() {
            let v = h.anatomy(i).to_vec();
            for (x, p) in v.iter().zip(s.anatomy()) {
                assert!((x - p.min).abs() < 1e-6 || (x - p.max).abs() < 1e-6);
            }
        }
    }

    fn collapsed_oracle() -> Oracle {
        let text: String = crate::oracle::DESK_ORACLE
            .lines()
            .filter(|l| !(l.starts_with("preset ") && l.contains('=')))
            .map(|l| {
                let f: Vec<&str> = l.split_whitespace().collect();
                if f.first() == Some(&"param") {
                    format!("param {} {} {r} {r} {r}\n", f[1], f[2], r = f[5])
                } else {
                    format!("{l}\n")
                }
            })
            .collect();
        Oracle::from_text(&text).unwrap()
    }

    #[test]
    fn collapsed_ranges_give_identical_ablation_rows() {
        let o = collapsed_oracle();
        let cfg = AblationConfig {
            seeds: vec![1],
            n_tuples: 4,
            n_extreme: 3,
            holdout_seed: 2,
            fgn: FgnConfig {
                hidden: vec![8],
                batch_size: 30,
                epochs: 2,
                pairs_per_epoch: 60,
                ..FgnConfig::default()
            },
            bgn: BgnConfig {
                encoder_hidden: vec![8],
                decoder_hidden: vec![8],
                latent: 2,
                batch_size: 2,
                epochs: 1,
                ..BgnConfig::default()
            },
        };
        let r = run_ablation(&o, &cfg).unwrap();
        assert_eq!(r.rows.len(), 3);
        let a = &r.rows[0];
        for b in &r.rows[1..] {
            assert_eq!(a.per_seed, b.per_seed);
            assert_eq!(a.errors.cases, b.errors.cases);
        }
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 1 + 2 * 9 + 1);
    }

    #[test]
    fn summary_lists_every_criterion() {
        let c = vec![
            Criterion::check(1, "first", true, "ok".into()),
            Criterion::check(2, "second", false, "bad".into()),
            Criterion::skip(3, "third", "not run"),
        ];
        let s = summary_text(&c);
        assert!(s.contains("[PASS]  1 first: ok"));
        assert!(s.contains("[FAIL]  2 second: bad"));
        assert!(s.contains("[SKIP]  3 third: not run"));
    }

    #[test]
    fn loss_svg_has_one_line_per_series() {
        let a = [1.0, 0.5, 0.25];
        let b = [2.0, 1.0];
        let svg = loss_curve_svg("loss", &[("fgn", &a), ("bgn", &b)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
