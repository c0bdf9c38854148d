//! Config-driven pipeline stages shared by the command-line tool and the end-to-end tests:
//! data generation, training, prediction from an observed gait, and the evaluation report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backward::{expert_presets, train_experts, BgnConfig, BgnReport, ExpertBundle};
use crate::binio::{ByteReader, ByteWriter};
use crate::dataset::{
    generate, pathology_conditions, sample_conditions, split_holdout_with, ConditionSample,
    Dataset, SamplingStrategy,
};
use crate::evaluation::{
    embed_2d, eval_coverage, eval_forward, eval_multimodality, eval_realizability,
    inert_deviation, loss_curve_svg, run_ablation, summary_text, AblationConfig, AblationReport,
    CoverageReport, Criterion, JointErrorTable, MultimodalityReport, RealizabilityReport,
    StrategyPair,
};
use crate::forward::{train_fgn, FgnConfig, TrainingReport};
use crate::gait::{joint_angle_error_deg, AnatomyCondition, GaitCondition, GaitPattern};
use crate::nn::{gradient_suite, Network};
use crate::oracle::Oracle;
use crate::{Error, Result};

pub const OBSERVATION_MAGIC: &[u8; 4] = b"BGNO";
pub const OBSERVATION_VERSION: u32 = 1;

/// Name that selects the built-in oracle instead of a schema file.
pub const BUILTIN_ORACLE: &str = "desk";

/// Forward joint-average error limit, degrees.
pub const FORWARD_LIMIT_DEG: f64 = 8.0;
/// Fraction of holdout cases that must be realizable (45 of 51).
pub const REALIZABLE_FRACTION: f64 = 45.0 / 51.0;
pub const COVERAGE_FRACTION: f64 = 0.8;
pub const INERT_LIMIT: f64 = 0.1;
pub const GRADCHECK_NETS: usize = 25;
pub const GRADCHECK_MAX_PARAMS: usize = 1000;
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `"desk"` or a path to an oracle schema file (relative paths resolve against the
    /// config file's directory).
    pub oracle: String,
    /// `"uniform"` or `"grid"`.
    pub strategy: String,
    pub n_tuples: usize,
    pub seed: u64,
    pub n_holdout: usize,
    pub holdout_seed: u64,
    /// Start the holdout with the oracle's pathology presets.
    pub pathology_holdout: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            oracle: BUILTIN_ORACLE.into(),
            strategy: "grid".into(),
            n_tuples: 50_000,
            seed: 1,
            n_holdout: 51,
            holdout_seed: 2,
            pathology_holdout: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Posterior draws per case for coverage, embeddings and the redundancy probe.
    pub samples: usize,
    pub seed: u64,
    /// Oracle preset whose gait has two certified solutions.
    pub redundancy_preset: String,
    /// Holdout labels (preset names or `case<i>`) to export 2D embeddings for.
    pub embed: Vec<String>,
    /// Run the gradient-check suite as part of the report.
    pub gradient_suite: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            seed: 7,
            redundancy_preset: "trendelenburg".into(),
            embed: vec!["normal".into(), "crouch".into(), "trendelenburg".into()],
            gradient_suite: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub enabled: bool,
    pub seeds: Vec<u64>,
    pub n_tuples: usize,
    pub n_extreme: usize,
    pub holdout_seed: u64,
    pub fgn: FgnConfig,
    pub bgn: BgnConfig,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            enabled: false,
            seeds: vec![1, 2, 3],
            n_tuples: 20_000,
            n_extreme: 51,
            holdout_seed: 11,
            fgn: FgnConfig {
                hidden: vec![96, 96, 96],
                epochs: 4,
                pairs_per_epoch: 200_000,
                ..FgnConfig::default()
            },
            bgn: BgnConfig {
                encoder_hidden: vec![128, 128, 128],
                decoder_hidden: vec![128, 128, 128],
                epochs: 2,
                examples_per_epoch: 8_000,
                ..BgnConfig::default()
            },
        }
    }
}

impl AblationSection {
    pub fn to_config(&self) -> AblationConfig {
        AblationConfig {
            seeds: self.seeds.clone(),
            n_tuples: self.n_tuples,
            n_extreme: self.n_extreme,
            holdout_seed: self.holdout_seed,
            fgn: self.fgn.clone(),
            bgn: self.bgn.clone(),
        }
    }
}

/// The whole pipeline configuration; every section and key is optional, unknown keys are
/// errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub fgn: FgnConfig,
    /// Shared settings of the three experts; masks, loss weights and seeds come from the
    /// expert presets.
    pub bgn: BgnConfig,
    pub eval: EvalConfig,
    pub ablation: AblationSection,
    #[serde(skip)]
    base_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy()?;
        self.fgn.validate()?;
        self.bgn.validate()?;
        self.ablation.fgn.validate()?;
        self.ablation.bgn.validate()?;
        if self.eval.samples == 0 {
            return Err(Error::Config("eval.samples must be positive".into()));
        }
        Ok(())
    }

    pub fn strategy(&self) -> Result<SamplingStrategy> {
        SamplingStrategy::parse(&self.data.strategy).ok_or_else(|| {
            Error::Config(format!(
                "data.strategy: unknown sampling strategy `{}` (expected `uniform` or `grid`)",
                self.data.strategy
            ))
        })
    }

    pub fn oracle(&self) -> Result<Oracle> {
        if self.data.oracle == BUILTIN_ORACLE {
            return Ok(Oracle::desk());
        }
        let mut path = PathBuf::from(&self.data.oracle);
        if path.is_relative() {
            if let Some(dir) = &self.base_dir {
                path = dir.join(path);
            }
        }
        Oracle::load(&path)
    }

    pub fn expert_configs(&self) -> [BgnConfig; 3] {
        expert_presets(&self.bgn)
    }
}

/// Training and holdout datasets as the config describes them.
pub fn generate_data(cfg: &PipelineConfig) -> Result<(Dataset, Dataset)> {
    let oracle = cfg.oracle()?;
    let strategy = cfg.strategy()?;
    let d = &cfg.data;
    let conds = sample_conditions(strategy, d.n_tuples, oracle.space(), d.seed);
    let ds = generate(&conds, &oracle, strategy, d.seed)?;
    let forced: Vec<ConditionSample> = if d.pathology_holdout && d.n_holdout > 0 {
        pathology_conditions(&oracle)
            .into_iter()
            .map(|(_, c)| c)
            .take(d.n_holdout)
            .collect()
    } else {
        Vec::new()
    };
    let n_holdout = d.n_holdout.min(ds.len() + forced.len());
    split_holdout_with(&ds, n_holdout, d.holdout_seed, &forced)
}

pub fn train_forward(cfg: &PipelineConfig, train: &Dataset) -> Result<(Network, TrainingReport)> {
    let oracle = train.oracle()?;
    train_fgn(train, oracle.space(), &cfg.fgn)
}

pub fn train_backward(
    cfg: &PipelineConfig,
    train: &Dataset,
    fgn: &Network,
) -> Result<(ExpertBundle, Vec<BgnReport>)> {
    let oracle = train.oracle()?;
    let trained = train_experts(train, oracle.space(), fgn, &cfg.expert_configs())?;
    let (experts, reports) = trained.into_iter().unzip();
    Ok((
        ExpertBundle {
            oracle_source: oracle.source().to_string(),
            forward: fgn.clone(),
            experts,
        },
        reports,
    ))
}

/// An observed gait with its measured skeleton and gait conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub schema_hash: u64,
    pub skeleton: Vec<f64>,
    pub gait_condition: GaitCondition,
    pub gait: GaitPattern,
}

impl Observation {
    pub fn from_tuple(ds: &Dataset, i: usize) -> Self {
        let t = ds.tuple(i);
        Self {
            schema_hash: ds.schema_hash(),
            skeleton: t.anatomy.skeleton,
            gait_condition: t.gait_condition,
            gait: t.gait,
        }
    }

    /// The oracle's gait for `anatomy` at `gait_condition`.
    pub fn simulated(
        oracle: &Oracle,
        anatomy: &AnatomyCondition,
        gait_condition: GaitCondition,
    ) -> Result<Self> {
        Ok(Self {
            schema_hash: oracle.space().hash(),
            skeleton: anatomy.skeleton.clone(),
            gait_condition,
            gait: oracle.simulate(anatomy, &gait_condition)?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(OBSERVATION_MAGIC);
        w.u32(OBSERVATION_VERSION);
        w.u64(self.schema_hash);
        w.u32(self.skeleton.len() as u32);
        w.u32(self.gait.layout().joints as u32);
        w.f64s(&self.skeleton);
        w.f64s(&self.gait_condition.to_array());
        w.f64s(self.gait.as_slice());
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(data, "observation");
        r.magic(OBSERVATION_MAGIC)?;
        r.version(OBSERVATION_VERSION)?;
        let schema_hash = r.u64()?;
        let n_skeleton = r.u32()? as usize;
        let joints_at = r.offset();
        let joints = r.u32()? as usize;
        if joints == 0 || joints > 1024 {
            return Err(Error::Corrupt {
                what: "observation",
                reason: format!("implausible joint count {joints}"),
                offset: joints_at,
            });
        }
        let skeleton = r.f64s(n_skeleton)?;
        let g = r.f64s(2)?;
        let layout = crate::gait::PoseLayout::new(joints);
        let gait_at = r.offset();
        let flat = r.f64s(layout.pattern_dim())?;
        r.finish()?;
        if let Some(k) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::Corrupt {
                what: "observation",
                reason: "non-finite gait value".into(),
                offset: gait_at + 8 * k,
            });
        }
        Ok(Self {
            schema_hash,
            skeleton,
            gait_condition: GaitCondition {
                stride: g[0],
                cadence: g[1],
            },
            gait: GaitPattern::from_flat(layout, flat)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&data)
    }
}

/// Posterior for one observation from the selected expert.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub expert: usize,
    pub mean_muscle: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    /// Per-joint error of the oracle re-simulation of `mean_muscle`, degrees.
    pub resim_error_deg: Vec<f64>,
}

impl Prediction {
    pub fn resim_joint_average(&self) -> f64 {
        self.resim_error_deg.iter().sum::<f64>() / self.resim_error_deg.len().max(1) as f64
    }

    pub fn samples_csv(&self, muscle_names: &[&str]) -> String {
        let mut out = String::from("sample");
        for n in muscle_names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for (i, s) in self.samples.iter().enumerate() {
            let _ = write!(out, "{i}");
            for v in s {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn report(&self, muscle_names: &[&str], joint_names: &[String]) -> String {
        let mut out = format!("expert,{}\n", self.expert);
        out.push_str("parameter,posterior_mean\n");
        for (n, v) in muscle_names.iter().zip(&self.mean_muscle) {
            let _ = writeln!(out, "{n},{v}");
        }
        out.push_str("joint,resim_error_deg\n");
        for (n, v) in joint_names.iter().zip(&self.resim_error_deg) {
            let _ = writeln!(out, "{n},{v}");
        }
        let _ = writeln!(out, "joint_avg,{}", self.resim_joint_average());
        out
    }
}

pub fn predict(bundle: &ExpertBundle, obs: &Observation, n: usize, seed: u64) -> Result<Prediction> {
    let oracle = bundle.oracle()?;
    let space = oracle.space();
    if obs.schema_hash != space.hash() {
        return Err(Error::SchemaMismatch {
            expected: space.hash(),
            found: obs.schema_hash,
        });
    }
    let (expert, mean_muscle) = crate::backward::select_expert(
        &bundle.experts,
        &bundle.forward,
        space,
        &obs.gait,
        &obs.gait_condition,
        &obs.skeleton,
    )?;
    let samples = bundle.experts[expert]
        .posterior_samples(space, &obs.gait, &obs.gait_condition, &obs.skeleton, n, seed)?
        .into_iter()
        .map(|p| p.muscle)
        .collect();
    let anatomy = AnatomyCondition {
        skeleton: obs.skeleton.clone(),
        muscle: mean_muscle.clone(),
    };
    let resim = oracle.simulate(&anatomy, &obs.gait_condition)?;
    let resim_error_deg = joint_angle_error_deg(&resim, &obs.gait)?
        .iter()
        .map(|s| s.mean)
        .collect();
    Ok(Prediction {
        expert,
        mean_muscle,
        samples,
        resim_error_deg,
    })
}

/// Everything the evaluation stage computed.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub forward: JointErrorTable,
    pub realizability: RealizabilityReport,
    pub coverage: CoverageReport,
    pub multimodality: MultimodalityReport,
    pub inert: Option<f64>,
    pub ablation: Option<AblationReport>,
    pub criteria: Vec<Criterion>,
    files: Vec<(String, String)>,
}

impl EvalOutcome {
    /// Report files as (name, contents), in write order.
    pub fn files(&self) -> &[(String, String)] {
        &self.files
    }

    pub fn summary(&self) -> String {
        summary_text(&self.criteria)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

/// Evaluates a trained bundle on `holdout`. `reference_fgn` is the forward network as saved
/// before backward training; when given, the bundle's copy must match it bit for bit.
pub fn evaluate(
    cfg: &PipelineConfig,
    bundle: &ExpertBundle,
    holdout: &Dataset,
    reference_fgn: Option<&Network>,
    with_ablation: bool,
) -> Result<EvalOutcome> {
    let oracle = bundle.oracle()?;
    holdout.check_schema(oracle.space().hash())?;
    let fgn = &bundle.forward;
    let e = &cfg.eval;
    let mut criteria = Vec::new();
    let mut files: Vec<(String, String)> = Vec::new();

    if e.gradient_suite {
        let checks = gradient_suite(GRADCHECK_NETS, GRADCHECK_MAX_PARAMS, e.seed)?;
        let worst = checks.iter().map(|c| c.max_error()).fold(0.0, f64::max);
        criteria.push(Criterion::check(
            1,
            "gradient check",
            worst <= GRADCHECK_TOL,
            format!("{} networks, worst relative error {worst:.2e}", checks.len()),
        ));
    } else {
        criteria.push(Criterion::skip(1, "gradient check", "disabled in config"));
    }

    let forward = eval_forward(fgn, &oracle, holdout)?;
    let fwd_avg = forward.joint_average();
    criteria.push(Criterion::check(
        2,
        "forward joint error",
        fwd_avg <= FORWARD_LIMIT_DEG,
        format!(
            "joint-average mean {fwd_avg:.3} deg over {} cases (limit {FORWARD_LIMIT_DEG})",
            forward.cases.len()
        ),
    ));
    files.push(("forward_cases.csv".into(), forward.cases_csv()));
    files.push(("forward_joints.csv".into(), forward.pooled_csv()));

    let realizability = eval_realizability(&bundle.experts, fgn, &oracle, holdout)?;
    let n = holdout.len();
    let needed = (REALIZABLE_FRACTION * n as f64 - 1e-9).ceil() as usize;
    let passed = realizability.passed_count();
    criteria.push(Criterion::check(
        3,
        "backward realizability",
        n > 0 && passed >= needed,
        format!(
            "{passed} of {n} cases re-simulate within {} deg (need {needed})",
            realizability.threshold_deg
        ),
    ));
    files.push(("realizability.csv".into(), realizability.to_csv()));
    files.push(("realizability_joints.csv".into(), realizability.errors.pooled_csv()));

    let ablation = if with_ablation {
        let report = run_ablation(&oracle, &cfg.ablation.to_config())?;
        let uu = report.row(StrategyPair::ALL[0]).map(|r| r.joint_average());
        let gg = report.row(StrategyPair::ALL[2]).map(|r| r.joint_average());
        let (uu, gg) = (uu.unwrap_or(f64::NAN), gg.unwrap_or(f64::NAN));
        criteria.push(Criterion::check(
            4,
            "grid vs uniform ablation",
            gg <= uu,
            format!(
                "Grid-Grid {gg:.3} deg vs Uniform-Uniform {uu:.3} deg over {} seeds",
                cfg.ablation.seeds.len()
            ),
        ));
        files.push(("ablation.csv".into(), report.to_csv()));
        Some(report)
    } else {
        criteria.push(Criterion::skip(
            4,
            "grid vs uniform ablation",
            "not requested",
        ));
        None
    };

    let multimodality = eval_multimodality(
        &bundle.experts,
        fgn,
        &oracle,
        &e.redundancy_preset,
        e.samples,
        e.seed,
    )?;
    criteria.push(Criterion::check(
        5,
        "redundancy multimodality",
        multimodality.passed(),
        format!(
            "nearest sample to each solution over the redundant coordinates: {:.3} / {:.3} \
             (limit {}); over all muscles: {:.3} / {:.3}",
            multimodality.nearest_a,
            multimodality.nearest_b,
            multimodality.tolerance,
            multimodality.nearest_a_full,
            multimodality.nearest_b_full
        ),
    ));
    files.push(("multimodality.csv".into(), multimodality_csv(&multimodality)));
    let emb = embed_2d(&multimodality.samples, &multimodality.solution_b)?;
    files.push(("embedding_redundancy.csv".into(), emb.to_csv()));
    files.push((
        "embedding_redundancy.svg".into(),
        emb.to_svg(&format!(
            "{} posterior (ring: redundant solution)",
            multimodality.preset
        )),
    ));

    let coverage = eval_coverage(&bundle.experts, fgn, &oracle, holdout, e.samples, e.seed)?;
    let frac = coverage.covered_fraction();
    criteria.push(Criterion::check(
        6,
        "posterior coverage",
        frac >= COVERAGE_FRACTION,
        format!(
            "{:.1}% of {} cases covered (need {:.0}%)",
            100.0 * frac,
            coverage.cases.len(),
            100.0 * COVERAGE_FRACTION
        ),
    ));
    files.push(("coverage.csv".into(), coverage.to_csv()));
    for label in &e.embed {
        if let Some(i) = coverage.labels.iter().position(|l| l == label) {
            let t = holdout.tuple(i);
            let space = oracle.space();
            let expert = coverage.experts[i];
            let samples: Vec<Vec<f64>> = bundle.experts[expert]
                .posterior_samples(
                    space,
                    &t.gait,
                    &t.gait_condition,
                    &t.anatomy.skeleton,
                    e.samples,
                    e.seed,
                )?
                .into_iter()
                .map(|p| space.normalize_muscle(&p.muscle))
                .collect();
            let emb = embed_2d(&samples, &space.normalize_muscle(&t.anatomy.muscle))?;
            files.push((format!("embedding_{label}.csv"), emb.to_csv()));
            files.push((
                format!("embedding_{label}.svg"),
                emb.to_svg(&format!("{label}: posterior samples and ground truth")),
            ));
        }
    }

    let inert = inert_deviation(&oracle, &realizability.predictions);
    criteria.push(match inert {
        Some(d) => Criterion::check(
            7,
            "inert muscle regularization",
            d <= INERT_LIMIT,
            format!("mean |c - 1| over inert parameters {d:.4} (limit {INERT_LIMIT})"),
        ),
        None => Criterion::skip(7, "inert muscle regularization", "oracle has no inert muscle"),
    });

    criteria.push(match reference_fgn {
        Some(reference) => {
            let same = reference.parameter_digest() == fgn.parameter_digest();
            Criterion::check(
                8,
                "frozen forward network",
                same,
                format!(
                    "bundle forward-network digest {} the saved weights",
                    if same { "matches" } else { "differs from" }
                ),
            )
        }
        None => Criterion::skip(8, "frozen forward network", "no reference weights given"),
    });
    criteria.push(Criterion::skip(
        9,
        "determinism",
        "needs two runs; compare report directories",
    ));
    criteria.push(Criterion::skip(
        10,
        "serialization",
        "exercised by the test suite",
    ));

    let mut outcome = EvalOutcome {
        forward,
        realizability,
        coverage,
        multimodality,
        inert,
        ablation,
        criteria,
        files,
    };
    outcome
        .files
        .push(("summary.txt".into(), outcome.summary()));
    Ok(outcome)
}

fn multimodality_csv(m: &MultimodalityReport) -> String {
    let mut out = String::from("field,value\n");
    let _ = writeln!(out, "preset,{}", m.preset);
    let _ = writeln!(out, "redundancy,{}", m.redundancy);
    let _ = writeln!(out, "expert,{}", m.expert);
    let _ = writeln!(out, "nearest_a,{}", m.nearest_a);
    let _ = writeln!(out, "nearest_b,{}", m.nearest_b);
    let _ = writeln!(out, "nearest_a_full,{}", m.nearest_a_full);
    let _ = writeln!(out, "nearest_b_full,{}", m.nearest_b_full);
    let _ = writeln!(out, "tolerance,{}", m.tolerance);
    let _ = writeln!(out, "passed,{}", m.passed());
    out
}

/// Loss-history plot for a forward report and any number of expert reports.
pub fn loss_plot(forward: Option<&TrainingReport>, experts: &[BgnReport]) -> String {
    let mut owned: Vec<(String, Vec<f64>)> = Vec::new();
    if let Some(f) = forward {
        owned.push(("forward".into(), f.epoch_loss.clone()));
    }
    for (i, r) in experts.iter().enumerate() {
        owned.push((
            format!("expert {i}"),
            r.epochs.iter().map(|t| t.total).collect(),
        ));
    }
    let series: Vec<(&str, &[f64])> = owned
        .iter()
        .map(|(n, v)| (n.as_str(), v.as_slice()))
        .collect();
    loss_curve_svg("training loss", &series)
}
