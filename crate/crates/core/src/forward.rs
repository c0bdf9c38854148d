//! Phase-conditioned forward regressor: `(phase, anatomy, gait condition) → pose`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::gait::{
    d_pose_grad, decode_joints, frame_phase, AnatomyCondition, ConditionSpace, GaitCondition,
    GaitPattern, PoseLayout, PoseWeights, FRAMES,
};
use crate::nn::{
    AdamConfig, AdamState, HiddenActivation, Matrix, Network, Normalization, OutputActivation,
    WeightFile,
};
use crate::{Error, Result};

/// Phase features `(cos φ/2, sin φ/2)`: one turn over the two gait cycles of a pattern.
pub fn phase_features(phi: f64) -> [f64; 2] {
    let (s, c) = (0.5 * phi).sin_cos();
    [c, s]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FgnConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate reached by the last epoch, via cosine decay; equal to `learning_rate`
    /// for a constant rate.
    pub final_learning_rate: f64,
    pub epochs: usize,
    /// (tuple, frame) draws per epoch; 0 means one draw per (tuple, frame) pair.
    pub pairs_per_epoch: usize,
    /// Stop once the best epoch loss improved by less than this fraction over `patience` epochs.
    pub min_improvement: f64,
    pub patience: usize,
    pub w_height: f64,
    pub w_velocity: f64,
    pub seed: u64,
}

impl Default for FgnConfig {
    /// Desk-scale preset.
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            batch_size: 256,
            learning_rate: 3e-3,
            final_learning_rate: 1e-4,
            epochs: 6,
            pairs_per_epoch: 500_000,
            min_improvement: 1e-4,
            patience: 5,
            w_height: 1.0,
            w_velocity: 1.0,
            seed: 1,
        }
    }
}

impl FgnConfig {
    /// Layer sizes and optimizer settings reported for the full-scale model.
    pub fn full_scale() -> Self {
        Self {
            hidden: vec![512, 512, 512],
            batch_size: 65536,
            learning_rate: 1e-5,
            final_learning_rate: 1e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("fgn: {m}")));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes must be nonempty and positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.final_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.w_height >= 0.0 && self.w_velocity >= 0.0) {
            return bad("pose weights must be nonnegative");
        }
        Ok(())
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        self.final_learning_rate + (self.learning_rate - self.final_learning_rate) * cos
    }

    pub fn pose_weights(&self) -> PoseWeights {
        PoseWeights {
            height: self.w_height,
            velocity: self.w_velocity,
        }
    }

    pub(crate) fn to_metadata(&self) -> String {
        toml::to_string(&ForwardMetadata {
            forward: self.clone(),
        })
        .expect("config serializes")
    }

    pub(crate) fn from_metadata(text: &str) -> Result<Self> {
        toml::from_str::<ForwardMetadata>(text)
            .map(|m| m.forward)
            .map_err(|e| Error::Architecture(format!("weight file is not a forward network: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForwardMetadata {
    forward: FgnConfig,
}

pub fn fgn_input_dim(space: &ConditionSpace) -> usize {
    2 + space.n_anatomy() + space.n_gait()
}

/// Untrained forward network for `space` and `layout`; ReLU hidden layers, linear output.
pub fn build_fgn(cfg: &FgnConfig, space: &ConditionSpace, layout: PoseLayout) -> Result<Network> {
    cfg.validate()?;
    let mut sizes = vec![fgn_input_dim(space)];
    sizes.extend(&cfg.hidden);
    sizes.push(layout.dim());
    Network::new(
        &sizes,
        HiddenActivation::Relu,
        OutputActivation::Linear,
        cfg.seed,
    )
}

/// Writes `[phase features ‖ anatomy ‖ gait]` for frame `k` into `row`.
#[inline]
pub(crate) fn write_input_row(row: &mut [f64], conditions: &[f64], k: usize) {
    row[..2].copy_from_slice(&phase_features(frame_phase(k)));
    row[2..].copy_from_slice(conditions);
}

/// Normalized anatomy followed by normalized gait condition.
pub fn normalized_conditions(
    space: &ConditionSpace,
    anatomy: &AnatomyCondition,
    gait: &GaitCondition,
) -> Vec<f64> {
    let mut c = space.normalize_anatomy(anatomy);
    c.extend(space.normalize_gait(gait));
    c
}

/// The 60 network inputs of one condition.
pub fn rollout_inputs(conditions: &[f64]) -> Matrix {
    let d = 2 + conditions.len();
    let mut m = Matrix::zeros(FRAMES, d);
    for k in 0..FRAMES {
        write_input_row(m.row_mut(k), conditions, k);
    }
    m
}

/// Evaluates the network at the 60 canonical phases.
pub fn rollout(
    fgn: &Network,
    space: &ConditionSpace,
    anatomy: &AnatomyCondition,
    gait: &GaitCondition,
) -> Result<GaitPattern> {
    space.check_anatomy(anatomy)?;
    space.check_gait(gait)?;
    rollout_normalized(fgn, &normalized_conditions(space, anatomy, gait))
}

pub(crate) fn rollout_normalized(fgn: &Network, conditions: &[f64]) -> Result<GaitPattern> {
    let out = fgn.forward(&rollout_inputs(conditions))?;
    let joints = (fgn.output_dim() - PoseLayout::ROOT) / 6;
    GaitPattern::from_flat(PoseLayout::new(joints), out.into_vec())
}

/// Dataset views shared by the trainers: normalized conditions per tuple in canonical order.
pub(crate) struct TrainingView<'a> {
    pub ds: &'a Dataset,
    /// Canonical position → dataset index.
    pub order: Vec<usize>,
    /// Normalized `[anatomy ‖ gait]` per canonical position.
    pub conditions: Vec<Vec<f64>>,
}

impl<'a> TrainingView<'a> {
    pub fn new(ds: &'a Dataset, space: &ConditionSpace) -> Self {
        let order = ds.canonical_order();
        let conditions = order
            .iter()
            .map(|&i| normalized_conditions(space, &ds.anatomy(i), &ds.gait_condition(i)))
            .collect();
        Self {
            ds,
            order,
            conditions,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn target(&self, pos: usize, k: usize) -> Vec<f64> {
        let d = self.ds.layout().dim();
        self.ds.gait_row(self.order[pos])[k * d..(k + 1) * d]
            .iter()
            .map(|&v| v as f64)
            .collect()
    }
}

fn fit_normalization(net: &mut Network, view: &TrainingView<'_>) -> Result<()> {
    let in_dim = net.input_dim();
    let inputs = view.conditions.iter().flat_map(|c| {
        (0..FRAMES).map(move |k| {
            let mut row = vec![0.0; in_dim];
            write_input_row(&mut row, c, k);
            row
        })
    });
    net.set_input_norm(Normalization::fit(in_dim, inputs))?;
    let targets = (0..view.len()).flat_map(|p| (0..FRAMES).map(move |k| view.target(p, k)));
    net.set_output_norm(Normalization::fit(view.ds.layout().dim(), targets))
}

/// Summed pose distance over `(canonical position, frame)` pairs, optionally with its gradient
/// w.r.t. the network output scaled by `grad_scale`.
fn pair_losses(
    net: &Network,
    view: &TrainingView<'_>,
    pairs: &[(usize, usize)],
    weights: PoseWeights,
    grad_scale: Option<f64>,
) -> Result<(f64, Option<(Matrix, crate::nn::ForwardTrace)>)> {
    let layout = view.ds.layout();
    let mut x = Matrix::zeros(pairs.len(), net.input_dim());
    for (r, &(p, k)) in pairs.iter().enumerate() {
        write_input_row(x.row_mut(r), &view.conditions[p], k);
    }
    let (out, trace) = net.forward_traced(&x)?;
    let mut grad = Matrix::zeros(pairs.len(), layout.dim());
    let mut total = 0.0;
    for (r, &(p, k)) in pairs.iter().enumerate() {
        let target = view.target(p, k);
        let rots = decode_joints(&target, layout)?;
        total += d_pose_grad(
            out.row(r),
            &target,
            &rots,
            layout,
            weights,
            1.0,
            grad.row_mut(r),
        )?;
    }
    if !total.is_finite() {
        return Err(Error::Divergence(
            "forward training loss is not finite".into(),
        ));
    }
    Ok((
        total,
        grad_scale.map(|s| {
            grad.data_mut().iter_mut().for_each(|g| *g *= s);
            (grad, trace)
        }),
    ))
}

/// Sum of pose distances between the network and the dataset over `pairs` of
/// `(dataset index, frame)`; the quantity the trainer minimizes, before averaging.
pub fn fgn_loss(
    net: &Network,
    ds: &Dataset,
    space: &ConditionSpace,
    pairs: &[(usize, usize)],
    weights: PoseWeights,
) -> Result<f64> {
    let view = TrainingView::new(ds, space);
    let mut pos = vec![0; ds.len()];
    for (p, &i) in view.order.iter().enumerate() {
        pos[i] = p;
    }
    let mapped: Vec<(usize, usize)> = pairs.iter().map(|&(i, k)| (pos[i], k)).collect();
    Ok(pair_losses(net, &view, &mapped, weights, None)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: u64,
    pub stopped_early: bool,
}

impl TrainingReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_loss.last().copied().unwrap_or(f64::NAN)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in self.epoch_loss.iter().enumerate() {
            let _ = writeln!(s, "{},{}", e + 1, l);
        }
        s
    }
}

/// True once the best loss of the last `patience` epochs is not a `min_improvement` fraction
/// better than the best loss before them.
pub(crate) fn plateaued(losses: &[f64], patience: usize, min_improvement: f64) -> bool {
    if patience == 0 || losses.len() <= patience {
        return false;
    }
    let split = losses.len() - patience;
    let before = losses[..split]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let recent = losses[split..]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    before - recent < min_improvement * before.abs()
}

/// Fits input/output normalization on `ds`, then minimizes the mean pose distance over random
/// `(tuple, frame)` minibatches with Adam. The returned network is frozen.
///
/// Tuples are visited in a canonical order, so the result does not depend on dataset order.
pub fn train_fgn(
    ds: &Dataset,
    space: &ConditionSpace,
    cfg: &FgnConfig,
) -> Result<(Network, TrainingReport)> {
    cfg.validate()?;
    ds.check_schema(space.hash())?;
    if ds.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let total_pairs = ds.len() * FRAMES;
    if cfg.batch_size > total_pairs {
        return Err(Error::Config(format!(
            "fgn: batch_size {} exceeds the {total_pairs} (tuple, frame) pairs in the dataset",
            cfg.batch_size
        )));
    }
    let mut net = build_fgn(cfg, space, ds.layout())?;
    let view = TrainingView::new(ds, space);
    fit_normalization(&mut net, &view)?;

    let mut adam = AdamState::new(&net, AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_edf0);
    let per_epoch = if cfg.pairs_per_epoch == 0 {
        total_pairs
    } else {
        cfg.pairs_per_epoch
    };
    let steps_per_epoch = per_epoch.div_ceil(cfg.batch_size);
    let mut report = TrainingReport {
        epoch_loss: Vec::new(),
        steps: 0,
        stopped_early: false,
    };
    let mut pairs = vec![(0, 0); cfg.batch_size];
    for epoch in 0..cfg.epochs {
        adam.config.learning_rate = cfg.learning_rate_at(epoch);
        let mut sum = 0.0;
        for _ in 0..steps_per_epoch {
            for p in pairs.iter_mut() {
                *p = (rng.random_range(0..view.len()), rng.random_range(0..FRAMES));
            }
            let b = pairs.len() as f64;
            let (loss, traced) =
                pair_losses(&net, &view, &pairs, cfg.pose_weights(), Some(1.0 / b))?;
            let (grad, trace) = traced.unwrap();
            let grads = net.backward_params(&trace, &grad)?;
            adam.step(&mut net, &grads).map_err(|e| match e {
                Error::NonFinite(m) => Error::Divergence(format!("forward training: {m}")),
                other => other,
            })?;
            sum += loss / b;
            report.steps += 1;
        }
        report.epoch_loss.push(sum / steps_per_epoch as f64);
        if plateaued(&report.epoch_loss, cfg.patience, cfg.min_improvement) {
            report.stopped_early = true;
            break;
        }
    }
    net.freeze();
    Ok((net, report))
}

pub fn save_fgn(
    net: &Network,
    cfg: &FgnConfig,
    space: &ConditionSpace,
    path: impl AsRef<Path>,
) -> Result<()> {
    WeightFile {
        network: net.clone(),
        schema_hash: space.hash(),
        metadata: cfg.to_metadata(),
    }
    .save(path)
}

/// Loads a forward network with its training config and checks it against `space` and
/// `layout`.
pub fn load_fgn(
    path: impl AsRef<Path>,
    space: &ConditionSpace,
    layout: PoseLayout,
) -> Result<(Network, FgnConfig)> {
    let wf = WeightFile::load(path)?;
    if wf.schema_hash != space.hash() {
        return Err(Error::SchemaMismatch {
            expected: space.hash(),
            found: wf.schema_hash,
        });
    }
    let cfg = FgnConfig::from_metadata(&wf.metadata)?;
    let net = wf.network;
    if net.input_dim() != fgn_input_dim(space) || net.output_dim() != layout.dim() {
        return Err(Error::Architecture(format!(
            "forward network maps {} → {}, expected {} → {}",
            net.input_dim(),
            net.output_dim(),
            fgn_input_dim(space),
            layout.dim()
        )));
    }
    Ok((net, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, sample_uniform, ConditionSample, SamplingStrategy};
    use crate::gait::{d_gait, d_pose_flat};
    use crate::oracle::Oracle;

    #[test]
    fn phase_features_fixed_points() {
        assert_eq!(phase_features(0.0), [1.0, 0.0]);
        let half = phase_features(2.0 * std::f64::consts::PI);
        assert!((half[0] + 1.0).abs() < 1e-15 && half[1].abs() < 1e-15);
        let wrap = phase_features(4.0 * std::f64::consts::PI);
        assert!((wrap[0] - 1.0).abs() < 1e-15 && wrap[1].abs() < 1e-15);
        let feats: Vec<[f64; 2]> = (0..FRAMES)
            .map(|k| phase_features(frame_phase(k)))
            .collect();
        for i in 0..FRAMES {
            for j in 0..i {
                assert!(
                    (feats[i][0] - feats[j][0]).abs() + (feats[i][1] - feats[j][1]).abs() > 1e-3
                );
            }
        }
    }

    #[test]
    fn desk_dimensions() {
        let o = Oracle::desk();
        let net = build_fgn(&FgnConfig::default(), o.space(), o.layout()).unwrap();
        assert_eq!((net.input_dim(), net.output_dim()), (42, 57));
        let full = build_fgn(&FgnConfig::full_scale(), o.space(), o.layout()).unwrap();
        assert_eq!(full.layer_sizes(), vec![42, 512, 512, 512, 57]);
    }

    fn small_dataset(n: usize, seed: u64) -> (Oracle, Dataset) {
        let o = Oracle::desk();
        let ds = generate(
            &sample_uniform(n, o.space(), seed),
            &o,
            SamplingStrategy::Uniform,
            seed,
        )
        .unwrap();
        (o, ds)
    }

    #[test]
    fn rollout_matches_per_frame_evaluation() {
        let o = Oracle::desk();
        let s = o.space();
        let net = build_fgn(&FgnConfig::default(), s, o.layout()).unwrap();
        let (a, g) = (s.reference_anatomy(), s.reference_gait());
        let m = rollout(&net, s, &a, &g).unwrap();
        let c = normalized_conditions(s, &a, &g);
        for k in [0, 17, 59] {
            let mut row = Matrix::zeros(1, net.input_dim());
            write_input_row(row.row_mut(0), &c, k);
            assert_eq!(net.forward(&row).unwrap().row(0), m.frame(k));
        }
        assert_eq!(rollout(&net, s, &a, &g).unwrap(), m);
    }

    #[test]
    fn trainer_loss_matches_pose_distances() {
        let (o, ds) = small_dataset(12, 3);
        let s = o.space();
        let cfg = FgnConfig {
            batch_size: 16,
            epochs: 1,
            pairs_per_epoch: 16,
            ..FgnConfig::default()
        };
        let (net, _) = train_fgn(&ds, s, &cfg).unwrap();
        let pairs: Vec<(usize, usize)> = (0..ds.len()).map(|i| (i, (7 * i) % FRAMES)).collect();
        let w = PoseWeights {
            height: 2.0,
            velocity: 0.5,
        };
        let trainer = fgn_loss(&net, &ds, s, &pairs, w).unwrap();
        let mut independent = 0.0;
        for &(i, k) in &pairs {
            let pred = rollout(&net, s, &ds.anatomy(i), &ds.gait_condition(i)).unwrap();
            independent += d_pose_flat(pred.frame(k), ds.gait(i).frame(k), ds.layout(), w).unwrap();
        }
        assert!((trainer - independent).abs() <= 1e-10 * independent.max(1.0));
    }

    #[test]
    fn overfits_a_single_constant_tuple() {
        let o = Oracle::desk();
        let s = o.space();
        let c = ConditionSample {
            anatomy: s.reference_anatomy(),
            gait: s.reference_gait(),
        };
        let ds = generate(std::slice::from_ref(&c), &o, SamplingStrategy::Uniform, 0).unwrap();
        let cfg = FgnConfig {
            hidden: vec![32, 32],
            batch_size: 60,
            learning_rate: 3e-3,
            final_learning_rate: 1e-5,
            epochs: 300,
            pairs_per_epoch: 1200,
            patience: 0,
            ..FgnConfig::default()
        };
        let (net, report) = train_fgn(&ds, s, &cfg).unwrap();
        assert!(report.final_loss() < 1e-4, "{}", report.final_loss());
        assert!(report.final_loss() < report.epoch_loss[0]);
        assert!(net.is_frozen());
        let m = rollout(&net, s, &c.anatomy, &c.gait).unwrap();
        assert!(d_gait(&m, &ds.gait(0), PoseWeights::default()).unwrap() < 1e-4);
    }

    #[test]
    fn training_ignores_tuple_order() {
        let (o, ds) = small_dataset(30, 5);
        let s = o.space();
        let reversed: Vec<usize> = (0..ds.len()).rev().collect();
        let shuffled = ds.subset(&reversed);
        let cfg = FgnConfig {
            hidden: vec![16],
            batch_size: 32,
            epochs: 3,
            pairs_per_epoch: 128,
            ..FgnConfig::default()
        };
        let (a, ra) = train_fgn(&ds, s, &cfg).unwrap();
        let (b, rb) = train_fgn(&shuffled, s, &cfg).unwrap();
        assert_eq!(ra.epoch_loss, rb.epoch_loss);
        assert_eq!(a.parameter_digest(), b.parameter_digest());
    }

    #[test]
    fn rejects_bad_inputs() {
        let (o, ds) = small_dataset(2, 1);
        let s = o.space();
        let cfg = FgnConfig {
            batch_size: 1000,
            ..FgnConfig::default()
        };
        assert!(matches!(train_fgn(&ds, s, &cfg), Err(Error::Config(_))));
        let empty = Dataset::empty(&o, SamplingStrategy::Uniform, 0);
        assert!(train_fgn(&empty, s, &FgnConfig::default()).is_err());
        let bad = FgnConfig {
            hidden: vec![0],
            ..FgnConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn save_load_and_schema_checks() {
        let o = Oracle::desk();
        let s = o.space();
        let cfg = FgnConfig::default();
        let net = build_fgn(&cfg, s, o.layout()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fgn.bgnw");
        save_fgn(&net, &cfg, s, &path).unwrap();
        let (back, back_cfg) = load_fgn(&path, s, o.layout()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back_cfg, cfg);
        let mut plain = WeightFile::new(net.clone());
        plain.schema_hash = s.hash();
        plain.save(&path).unwrap();
        assert!(matches!(
            load_fgn(&path, s, o.layout()),
            Err(Error::Architecture(_))
        ));
        save_fgn(&net, &cfg, s, &path).unwrap();

        let mut params = s.params().to_vec();
        params[0].max = 1.25;
        let other = ConditionSpace::new(params).unwrap();
        assert!(matches!(
            load_fgn(&path, &other, o.layout()),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn plateau_rule() {
        assert!(!plateaued(&[5.0, 4.0, 3.0], 5, 1e-4));
        assert!(plateaued(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0], 5, 1e-4));
        assert!(!plateaued(&[1.0, 1.0, 1.0, 1.0, 1.0, 0.9], 5, 1e-4));
    }
}
