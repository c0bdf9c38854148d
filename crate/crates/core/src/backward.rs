//! Conditional VAE over muscle conditions: an encoder from (gait, gait condition, skeleton) to a
//! diagonal Gaussian latent and a sigmoid pre-decoder from latent to normalized muscle values,
//! trained by reconstructing the gait through a frozen forward network.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{ByteReader, ByteWriter};
use crate::dataset::Dataset;
use crate::forward::{rollout_normalized, write_input_row, TrainingView};
use crate::gait::{
    d_gait, d_pose_grad, decode_joints, ConditionSpace, GaitCondition, GaitPattern, PoseLayout,
    PoseWeights, FRAMES,
};
use crate::nn::{
    clamp_log_sigma, kl_diag_gaussian, AdamConfig, AdamState, Gradients, HiddenActivation, Matrix,
    Network, Normalization, OutputActivation, WeightFile,
};
use crate::oracle::Oracle;
use crate::{Error, Result};

pub const BUNDLE_MAGIC: &[u8; 4] = b"BGNB";
pub const BUNDLE_VERSION: u32 = 1;

/// Mask entry selecting every muscle.
pub const ALL_MUSCLES: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BgnConfig {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub latent: usize,
    pub w_gait: f64,
    pub w_kl: f64,
    /// Pull of every predicted muscle value toward its reference.
    pub w_muscle: f64,
    /// Per-parameter replacements for `w_muscle`, keyed by parameter name.
    pub w_muscle_overrides: BTreeMap<String, f64>,
    /// Muscle-group name prefixes the model predicts, or `["all"]`.
    pub mask: Vec<String>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub epochs: usize,
    /// Examples drawn per epoch; 0 means one per training tuple.
    pub examples_per_epoch: usize,
    pub min_improvement: f64,
    pub patience: usize,
    pub w_height: f64,
    pub w_velocity: f64,
    pub seed: u64,
}

impl Default for BgnConfig {
    /// Desk-scale preset with the full muscle mask.
    fn default() -> Self {
        Self {
            encoder_hidden: vec![256, 256, 256],
            decoder_hidden: vec![256, 256, 256],
            latent: 32,
            w_gait: 1.0,
            w_kl: 1e-3,
            w_muscle: 1e-3,
            w_muscle_overrides: BTreeMap::new(),
            mask: vec![ALL_MUSCLES.to_string()],
            batch_size: 128,
            learning_rate: 1e-3,
            final_learning_rate: 1e-4,
            epochs: 3,
            examples_per_epoch: 20_000,
            min_improvement: 1e-4,
            patience: 5,
            w_height: 1.0,
            w_velocity: 1.0,
            seed: 1,
        }
    }
}

impl BgnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("bgn: {m}")));
        if self.encoder_hidden.is_empty()
            || self.decoder_hidden.is_empty()
            || self.encoder_hidden.contains(&0)
            || self.decoder_hidden.contains(&0)
        {
            return bad("hidden sizes must be nonempty and positive");
        }
        if self.latent == 0 {
            return bad("latent must be at least 1");
        }
        let weights = [
            self.w_gait,
            self.w_kl,
            self.w_muscle,
            self.w_height,
            self.w_velocity,
        ];
        if !weights
            .iter()
            .chain(self.w_muscle_overrides.values())
            .all(|w| *w >= 0.0)
        {
            return bad("loss weights must be nonnegative");
        }
        if self.mask.is_empty() {
            return bad("mask must name at least one muscle group");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.final_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    pub fn pose_weights(&self) -> PoseWeights {
        PoseWeights {
            height: self.w_height,
            velocity: self.w_velocity,
        }
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        self.final_learning_rate + (self.learning_rate - self.final_learning_rate) * cos
    }

    /// Indices into the muscle vector covered by the mask, ascending.
    pub fn resolve_mask(&self, space: &ConditionSpace) -> Result<Vec<usize>> {
        let names: Vec<&str> = space.muscle().iter().map(|p| p.name.as_str()).collect();
        if self.mask.iter().any(|m| m == ALL_MUSCLES) {
            return Ok((0..names.len()).collect());
        }
        for prefix in &self.mask {
            if !names.iter().any(|n| n.starts_with(prefix.as_str())) {
                return Err(Error::Config(format!(
                    "bgn: mask entry `{prefix}` matches no muscle"
                )));
            }
        }
        Ok(names
            .iter()
            .enumerate()
            .filter(|(_, n)| self.mask.iter().any(|p| n.starts_with(p.as_str())))
            .map(|(i, _)| i)
            .collect())
    }

    fn resolve_reg_weights(&self, space: &ConditionSpace, mask: &[usize]) -> Result<Vec<f64>> {
        let muscle = space.muscle();
        for name in self.w_muscle_overrides.keys() {
            if !muscle.iter().any(|p| &p.name == name) {
                return Err(Error::Config(format!(
                    "bgn: w_muscle_overrides names unknown muscle parameter `{name}`"
                )));
            }
        }
        Ok(mask
            .iter()
            .map(|&m| {
                self.w_muscle_overrides
                    .get(&muscle[m].name)
                    .copied()
                    .unwrap_or(self.w_muscle)
            })
            .collect())
    }

    fn to_metadata(&self) -> String {
        toml::to_string(&BackwardMetadata {
            backward: self.clone(),
        })
        .expect("config serializes")
    }

    fn from_metadata(text: &str) -> Result<Self> {
        toml::from_str::<BackwardMetadata>(text)
            .map(|m| m.backward)
            .map_err(|e| Error::Schema(format!("unreadable backward config: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackwardMetadata {
    backward: BgnConfig,
}

/// The three experts: knee/ankle muscles only, then the full set with light and heavier
/// regularization. Sizes and optimizer settings come from `base`.
pub fn expert_presets(base: &BgnConfig) -> [BgnConfig; 3] {
    let with = |i: u64, mask: &[&str], w: f64| BgnConfig {
        mask: mask.iter().map(|s| s.to_string()).collect(),
        w_gait: 1.0,
        w_kl: w,
        w_muscle: w,
        seed: base.seed.wrapping_add(i),
        ..base.clone()
    };
    [
        with(0, &["knee", "ankle"], 1e-3),
        with(1, &[ALL_MUSCLES], 1e-3),
        with(2, &[ALL_MUSCLES], 1e-2),
    ]
}

/// One posterior draw: the latent and its decoded physical muscle condition.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub z: Vec<f64>,
    pub muscle: Vec<f64>,
}

/// Encoder and pre-decoder of one backward model.
#[derive(Debug, Clone, PartialEq)]
pub struct Bgn {
    pub config: BgnConfig,
    pub encoder: Network,
    pub decoder: Network,
    mask: Vec<usize>,
    reg_weights: Vec<f64>,
}

pub fn encoder_input_dim(space: &ConditionSpace, layout: PoseLayout) -> usize {
    layout.pattern_dim() + space.n_gait() + space.n_skeleton()
}

/// Untrained backward model; leaky-ReLU hidden layers, linear encoder head, sigmoid
/// pre-decoder head.
pub fn build_bgn(cfg: &BgnConfig, space: &ConditionSpace, layout: PoseLayout) -> Result<Bgn> {
    cfg.validate()?;
    let mask = cfg.resolve_mask(space)?;
    let mut enc = vec![encoder_input_dim(space, layout)];
    enc.extend(&cfg.encoder_hidden);
    enc.push(2 * cfg.latent);
    let mut dec = vec![cfg.latent];
    dec.extend(&cfg.decoder_hidden);
    dec.push(mask.len());
    let encoder = Network::new(
        &enc,
        HiddenActivation::leaky(),
        OutputActivation::Linear,
        cfg.seed,
    )?;
    let decoder = Network::new(
        &dec,
        HiddenActivation::leaky(),
        OutputActivation::Sigmoid,
        cfg.seed.wrapping_add(0x9e37_79b9),
    )?;
    Bgn::from_parts(cfg.clone(), encoder, decoder, space, layout)
}

/// Writes `[gait pattern ‖ normalized gait condition ‖ normalized skeleton]` into `row`.
fn write_encoder_row(
    row: &mut [f64],
    gait: impl IntoIterator<Item = f64>,
    gait_norm: &[f64],
    skeleton_norm: &[f64],
) {
    let pd = row.len() - gait_norm.len() - skeleton_norm.len();
    for (dst, v) in row[..pd].iter_mut().zip(gait) {
        *dst = v;
    }
    row[pd..pd + gait_norm.len()].copy_from_slice(gait_norm);
    row[pd + gait_norm.len()..].copy_from_slice(skeleton_norm);
}

fn standard_normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    m.data_mut()
        .iter_mut()
        .for_each(|v| *v = StandardNormal.sample(rng));
    m
}

impl Bgn {
    /// Assembles a model from trained networks, checking their shapes against `space`.
    pub fn from_parts(
        config: BgnConfig,
        encoder: Network,
        decoder: Network,
        space: &ConditionSpace,
        layout: PoseLayout,
    ) -> Result<Self> {
        config.validate()?;
        let mask = config.resolve_mask(space)?;
        let reg_weights = config.resolve_reg_weights(space, &mask)?;
        let arch = |m: String| Err(Error::Architecture(m));
        if encoder.input_dim() != encoder_input_dim(space, layout)
            || encoder.output_dim() != 2 * config.latent
        {
            return arch(format!(
                "encoder maps {} → {}, expected {} → {}",
                encoder.input_dim(),
                encoder.output_dim(),
                encoder_input_dim(space, layout),
                2 * config.latent
            ));
        }
        if decoder.input_dim() != config.latent || decoder.output_dim() != mask.len() {
            return arch(format!(
                "pre-decoder maps {} → {}, expected {} → {}",
                decoder.input_dim(),
                decoder.output_dim(),
                config.latent,
                mask.len()
            ));
        }
        if decoder.output_activation() != OutputActivation::Sigmoid
            || !decoder.output_norm().is_identity()
        {
            return arch("pre-decoder must end in an unscaled sigmoid".into());
        }
        Ok(Self {
            config,
            encoder,
            decoder,
            mask,
            reg_weights,
        })
    }

    pub fn latent(&self) -> usize {
        self.config.latent
    }

    /// Muscle indices this model predicts; the rest stay at their reference values.
    pub fn mask(&self) -> &[usize] {
        &self.mask
    }

    pub fn encoder_input(
        &self,
        space: &ConditionSpace,
        gait: &GaitPattern,
        gait_condition: &GaitCondition,
        skeleton: &[f64],
    ) -> Result<Vec<f64>> {
        space.check_gait(gait_condition)?;
        if skeleton.len() != space.n_skeleton() {
            return Err(Error::Dimension {
                what: "skeleton condition",
                expected: space.n_skeleton(),
                got: skeleton.len(),
            });
        }
        for (p, &v) in space.skeleton().iter().zip(skeleton) {
            if !p.contains(v) {
                return Err(Error::OutOfRange {
                    name: p.name.clone(),
                    value: v,
                    min: p.min,
                    max: p.max,
                });
            }
        }
        if gait.as_slice().len() + space.n_gait() + space.n_skeleton() != self.encoder.input_dim() {
            return Err(Error::Dimension {
                what: "gait pattern",
                expected: self.encoder.input_dim() - space.n_gait() - space.n_skeleton(),
                got: gait.as_slice().len(),
            });
        }
        let mut row = vec![0.0; self.encoder.input_dim()];
        write_encoder_row(
            &mut row,
            gait.as_slice().iter().copied(),
            &space.normalize_gait(gait_condition),
            &space.normalize_skeleton(skeleton),
        );
        Ok(row)
    }

    /// Splits encoder output rows into `(mu, clamped log sigma, clamp side)`; the side is -1 or +1
    /// where the raw value was clamped at the lower or upper bound, else 0.
    fn split_heads(&self, out: &Matrix) -> (Matrix, Matrix, Vec<i8>) {
        let l = self.latent();
        let rows = out.rows();
        let mut mu = Matrix::zeros(rows, l);
        let mut ls = Matrix::zeros(rows, l);
        let mut pass = Vec::with_capacity(rows * l);
        for r in 0..rows {
            let o = out.row(r);
            mu.row_mut(r).copy_from_slice(&o[..l]);
            for (dst, &raw) in ls.row_mut(r).iter_mut().zip(&o[l..]) {
                let (v, inside) = clamp_log_sigma(raw);
                *dst = v;
                pass.push(match (inside, raw > 0.0) {
                    (true, _) => 0,
                    (false, true) => 1,
                    (false, false) => -1,
                });
            }
        }
        (mu, ls, pass)
    }

    /// Posterior `(mu, log sigma)` for one observation.
    pub fn encode(
        &self,
        space: &ConditionSpace,
        gait: &GaitPattern,
        gait_condition: &GaitCondition,
        skeleton: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let row = self.encoder_input(space, gait, gait_condition, skeleton)?;
        let out = self
            .encoder
            .forward(&Matrix::from_vec(1, row.len(), row)?)?;
        let (mu, ls, _) = self.split_heads(&out);
        Ok((mu.into_vec(), ls.into_vec()))
    }

    /// Normalized predictions for the masked muscles, one row per latent row.
    pub fn decode_normalized(&self, z: &Matrix) -> Result<Matrix> {
        self.decoder.forward(z)
    }

    /// Full physical muscle vector: masked entries from normalized values, the rest at reference.
    pub fn muscle_from_normalized(&self, space: &ConditionSpace, u: &[f64]) -> Vec<f64> {
        let mut muscle: Vec<f64> = space.muscle().iter().map(|p| p.reference).collect();
        for (&m, &v) in self.mask.iter().zip(u) {
            muscle[m] = space.muscle()[m].denormalize(v);
        }
        muscle
    }

    pub fn decode_muscle(&self, space: &ConditionSpace, z: &[f64]) -> Result<Vec<f64>> {
        let u = self.decode_normalized(&Matrix::from_vec(1, z.len(), z.to_vec())?)?;
        Ok(self.muscle_from_normalized(space, u.row(0)))
    }

    /// Muscle condition decoded from the posterior mean latent.
    pub fn posterior_mean(
        &self,
        space: &ConditionSpace,
        gait: &GaitPattern,
        gait_condition: &GaitCondition,
        skeleton: &[f64],
    ) -> Result<Vec<f64>> {
        let (mu, _) = self.encode(space, gait, gait_condition, skeleton)?;
        self.decode_muscle(space, &mu)
    }

    /// `n` reparameterized posterior draws, deterministic per `seed`.
    pub fn posterior_samples(
        &self,
        space: &ConditionSpace,
        gait: &GaitPattern,
        gait_condition: &GaitCondition,
        skeleton: &[f64],
        n: usize,
        seed: u64,
    ) -> Result<Vec<PosteriorSample>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let (mu, ls) = self.encode(space, gait, gait_condition, skeleton)?;
        let l = self.latent();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = standard_normal_matrix(&mut rng, n, l);
        for r in 0..n {
            for ((v, m), s) in z.row_mut(r).iter_mut().zip(&mu).zip(&ls) {
                *v = m + s.exp() * *v;
            }
        }
        let u = self.decode_normalized(&z)?;
        Ok((0..n)
            .map(|r| PosteriorSample {
                z: z.row(r).to_vec(),
                muscle: self.muscle_from_normalized(space, u.row(r)),
            })
            .collect())
    }

    fn reg_term(&self, space: &ConditionSpace, u: &[f64]) -> f64 {
        self.mask
            .iter()
            .zip(u)
            .zip(&self.reg_weights)
            .map(|((&m, &v), w)| {
                let c = space.muscle()[m].denormalize(v);
                w * (1.0 - c) * (1.0 - c)
            })
            .sum()
    }
}

/// Backward loss terms; each is a mean over examples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub regularization: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BgnReport {
    pub epochs: Vec<LossTerms>,
    pub steps: u64,
    pub stopped_early: bool,
}

impl BgnReport {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |t| t.total)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,total,reconstruction,kl,regularization\n");
        for (e, t) in self.epochs.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e + 1,
                t.total,
                t.reconstruction,
                t.kl,
                t.regularization
            );
        }
        s
    }
}

struct BatchGrads {
    encoder: Gradients,
    decoder: Gradients,
}

/// Everything one minibatch pass needs from the dataset and the frozen forward network.
struct BatchContext<'a> {
    bgn: &'a Bgn,
    fgn: &'a Network,
    space: &'a ConditionSpace,
    view: &'a TrainingView<'a>,
    weights: PoseWeights,
}

impl BatchContext<'_> {
    fn encoder_batch(&self, positions: &[usize]) -> Matrix {
        let ns = self.space.n_skeleton();
        let na = self.space.n_anatomy();
        let mut x = Matrix::zeros(positions.len(), self.bgn.encoder.input_dim());
        for (r, &p) in positions.iter().enumerate() {
            let c = &self.view.conditions[p];
            let gait = self.view.ds.gait_row(self.view.order[p]);
            write_encoder_row(
                x.row_mut(r),
                gait.iter().map(|&v| v as f64),
                &c[na..],
                &c[..ns],
            );
        }
        x
    }

    /// Loss sums over the batch and, when `train` is set, parameter gradients of the mean loss.
    fn run(
        &self,
        positions: &[usize],
        noise: &Matrix,
        train: bool,
    ) -> Result<(LossTerms, Option<BatchGrads>)> {
        let bgn = self.bgn;
        let cfg = &bgn.config;
        let b = positions.len();
        let bf = b as f64;
        let l = bgn.latent();
        let ns = self.space.n_skeleton();
        let layout = self.view.ds.layout();

        let (enc_out, enc_trace) = bgn.encoder.forward_traced(&self.encoder_batch(positions))?;
        let (mu, ls, pass) = bgn.split_heads(&enc_out);
        let mut z = Matrix::zeros(b, l);
        for r in 0..b {
            for j in 0..l {
                z.row_mut(r)[j] = mu.row(r)[j] + ls.row(r)[j].exp() * noise.row(r)[j];
            }
        }
        let (u, dec_trace) = bgn.decoder.forward_traced(&z)?;

        // Forward-network inputs: predicted muscles, true skeleton and gait condition.
        let ref_muscle = self.space.normalize_muscle(
            &self
                .space
                .muscle()
                .iter()
                .map(|p| p.reference)
                .collect::<Vec<_>>(),
        );
        let mut x = Matrix::zeros(b * FRAMES, self.fgn.input_dim());
        for (r, &p) in positions.iter().enumerate() {
            let mut cond = self.view.conditions[p].clone();
            cond[ns..ns + ref_muscle.len()].copy_from_slice(&ref_muscle);
            for (&m, &v) in bgn.mask.iter().zip(u.row(r)) {
                cond[ns + m] = v;
            }
            for k in 0..FRAMES {
                write_input_row(x.row_mut(r * FRAMES + k), &cond, k);
            }
        }
        let (pose, fgn_trace) = self.fgn.forward_traced(&x)?;

        let mut terms = LossTerms::default();
        let recon_scale = cfg.w_gait / (FRAMES as f64 * bf);
        let mut pose_grad = Matrix::zeros(b * FRAMES, layout.dim());
        for (r, &p) in positions.iter().enumerate() {
            let gait = self.view.ds.gait_row(self.view.order[p]);
            let mut recon = 0.0;
            for k in 0..FRAMES {
                let row = r * FRAMES + k;
                let target: Vec<f64> = gait[k * layout.dim()..(k + 1) * layout.dim()]
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                let rots = decode_joints(&target, layout)?;
                recon += d_pose_grad(
                    pose.row(row),
                    &target,
                    &rots,
                    layout,
                    self.weights,
                    1.0,
                    pose_grad.row_mut(row),
                )?;
            }
            terms.reconstruction += recon / FRAMES as f64;
            terms.kl += kl_diag_gaussian(mu.row(r), ls.row(r));
            terms.regularization += bgn.reg_term(self.space, u.row(r));
        }
        terms.total =
            cfg.w_gait * terms.reconstruction + cfg.w_kl * terms.kl + terms.regularization;
        if !terms.total.is_finite() {
            return Err(Error::Divergence(
                "backward training loss is not finite".into(),
            ));
        }
        if !train {
            return Ok((terms, None));
        }

        pose_grad
            .data_mut()
            .iter_mut()
            .for_each(|g| *g *= recon_scale);
        let x_grad = self.fgn.input_gradient(&fgn_trace, &pose_grad)?;
        let mut u_grad = Matrix::zeros(b, bgn.mask.len());
        for r in 0..b {
            let gr = u_grad.row_mut(r);
            for k in 0..FRAMES {
                let xg = x_grad.row(r * FRAMES + k);
                for (g, &m) in gr.iter_mut().zip(&bgn.mask) {
                    *g += xg[2 + ns + m];
                }
            }
            for ((g, &m), (&v, w)) in gr
                .iter_mut()
                .zip(&bgn.mask)
                .zip(u.row(r).iter().zip(&bgn.reg_weights))
            {
                let p = &self.space.muscle()[m];
                let c = p.denormalize(v);
                *g += -2.0 * w * (1.0 - c) * p.width() / bf;
            }
        }
        let (dec_grads, z_grad) = bgn.decoder.backward(&dec_trace, &u_grad)?;
        let kl_scale = cfg.w_kl / bf;
        let mut head_grad = Matrix::zeros(b, 2 * l);
        for r in 0..b {
            let hg = head_grad.row_mut(r);
            for j in 0..l {
                let (m, s, e, gz) = (
                    mu.row(r)[j],
                    ls.row(r)[j],
                    noise.row(r)[j],
                    z_grad.row(r)[j],
                );
                hg[j] = gz + kl_scale * m;
                let g = gz * s.exp() * e + kl_scale * (2.0 * s).exp_m1();
                // A clamped entry only passes gradient that would move it back inside.
                hg[l + j] = match pass[r * l + j] {
                    0 => g,
                    1 if g > 0.0 => g,
                    -1 if g < 0.0 => g,
                    _ => 0.0,
                };
            }
        }
        let enc_grads = bgn.encoder.backward_params(&enc_trace, &head_grad)?;
        Ok((
            terms,
            Some(BatchGrads {
                encoder: enc_grads,
                decoder: dec_grads,
            }),
        ))
    }
}

fn check_forward(fgn: &Network, space: &ConditionSpace, layout: PoseLayout) -> Result<()> {
    if !fgn.is_frozen() {
        return Err(Error::Config(
            "the forward network must be frozen before backward training".into(),
        ));
    }
    if fgn.input_dim() != crate::forward::fgn_input_dim(space) || fgn.output_dim() != layout.dim() {
        return Err(Error::Architecture(
            "forward network does not match the dataset's condition space".into(),
        ));
    }
    Ok(())
}

fn fit_encoder_normalization(
    bgn: &mut Bgn,
    ctx_view: &TrainingView<'_>,
    space: &ConditionSpace,
) -> Result<()> {
    let dim = bgn.encoder.input_dim();
    let ns = space.n_skeleton();
    let na = space.n_anatomy();
    let rows = (0..ctx_view.len()).map(|p| {
        let c = &ctx_view.conditions[p];
        let mut row = vec![0.0; dim];
        write_encoder_row(
            &mut row,
            ctx_view
                .ds
                .gait_row(ctx_view.order[p])
                .iter()
                .map(|&v| v as f64),
            &c[na..],
            &c[..ns],
        );
        row
    });
    bgn.encoder.set_input_norm(Normalization::fit(dim, rows))
}

/// Trains one backward model against the frozen forward network `fgn`.
///
/// Examples are visited through the dataset's canonical order; `fgn` is only read.
pub fn train_bgn(
    ds: &Dataset,
    space: &ConditionSpace,
    fgn: &Network,
    cfg: &BgnConfig,
) -> Result<(Bgn, BgnReport)> {
    cfg.validate()?;
    ds.check_schema(space.hash())?;
    check_forward(fgn, space, ds.layout())?;
    if ds.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size > ds.len() {
        return Err(Error::Config(format!(
            "bgn: batch_size {} exceeds the {} tuples in the dataset",
            cfg.batch_size,
            ds.len()
        )));
    }
    let digest = fgn.parameter_digest();
    let mut bgn = build_bgn(cfg, space, ds.layout())?;
    let view = TrainingView::new(ds, space);
    fit_encoder_normalization(&mut bgn, &view, space)?;

    let mut enc_adam = AdamState::new(
        &bgn.encoder,
        AdamConfig::with_learning_rate(cfg.learning_rate),
    );
    let mut dec_adam = AdamState::new(
        &bgn.decoder,
        AdamConfig::with_learning_rate(cfg.learning_rate),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xbac4_0a2d);
    let per_epoch = if cfg.examples_per_epoch == 0 {
        ds.len()
    } else {
        cfg.examples_per_epoch
    };
    let steps_per_epoch = per_epoch.div_ceil(cfg.batch_size);
    let mut report = BgnReport {
        epochs: Vec::new(),
        steps: 0,
        stopped_early: false,
    };
    let mut totals = Vec::new();
    let mut positions = vec![0; cfg.batch_size];
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        enc_adam.config.learning_rate = lr;
        dec_adam.config.learning_rate = lr;
        let mut sum = LossTerms::default();
        for _ in 0..steps_per_epoch {
            for p in positions.iter_mut() {
                *p = rand::Rng::random_range(&mut rng, 0..view.len());
            }
            let noise = standard_normal_matrix(&mut rng, positions.len(), cfg.latent);
            let ctx = BatchContext {
                bgn: &bgn,
                fgn,
                space,
                view: &view,
                weights: cfg.pose_weights(),
            };
            let (terms, grads) = ctx.run(&positions, &noise, true)?;
            let grads = grads.expect("requested");
            let diverged = |e: Error| match e {
                Error::NonFinite(m) => Error::Divergence(format!("backward training: {m}")),
                other => other,
            };
            enc_adam
                .step(&mut bgn.encoder, &grads.encoder)
                .map_err(diverged)?;
            dec_adam
                .step(&mut bgn.decoder, &grads.decoder)
                .map_err(diverged)?;
            let bf = positions.len() as f64;
            sum.total += terms.total / bf;
            sum.reconstruction += terms.reconstruction / bf;
            sum.kl += terms.kl / bf;
            sum.regularization += terms.regularization / bf;
            report.steps += 1;
        }
        let n = steps_per_epoch as f64;
        report.epochs.push(LossTerms {
            total: sum.total / n,
            reconstruction: sum.reconstruction / n,
            kl: sum.kl / n,
            regularization: sum.regularization / n,
        });
        totals.push(sum.total / n);
        if crate::forward::plateaued(&totals, cfg.patience, cfg.min_improvement) {
            report.stopped_early = true;
            break;
        }
    }
    if fgn.parameter_digest() != digest {
        return Err(Error::Config(
            "forward network changed during backward training".into(),
        ));
    }
    Ok((bgn, report))
}

/// Mean loss terms over dataset `indices` with one latent draw each, drawn from `seed`.
pub fn bgn_loss(
    bgn: &Bgn,
    fgn: &Network,
    ds: &Dataset,
    space: &ConditionSpace,
    indices: &[usize],
    seed: u64,
) -> Result<LossTerms> {
    check_forward(fgn, space, ds.layout())?;
    let view = TrainingView::new(ds, space);
    let mut pos = vec![0; ds.len()];
    for (p, &i) in view.order.iter().enumerate() {
        pos[i] = p;
    }
    let positions: Vec<usize> = indices.iter().map(|&i| pos[i]).collect();
    let noise = latent_noise(seed, indices.len(), bgn.latent());
    let ctx = BatchContext {
        bgn,
        fgn,
        space,
        view: &view,
        weights: bgn.config.pose_weights(),
    };
    let (t, _) = ctx.run(&positions, &noise, false)?;
    let n = indices.len().max(1) as f64;
    Ok(LossTerms {
        total: t.total / n,
        reconstruction: t.reconstruction / n,
        kl: t.kl / n,
        regularization: t.regularization / n,
    })
}

/// The standard-normal draws [`bgn_loss`] uses for `seed`, one row per example.
pub fn latent_noise(seed: u64, rows: usize, latent: usize) -> Matrix {
    standard_normal_matrix(&mut ChaCha8Rng::seed_from_u64(seed), rows, latent)
}

/// Trains each expert config independently (in parallel) against the same frozen network.
pub fn train_experts(
    ds: &Dataset,
    space: &ConditionSpace,
    fgn: &Network,
    configs: &[BgnConfig],
) -> Result<Vec<(Bgn, BgnReport)>> {
    configs
        .par_iter()
        .map(|cfg| train_bgn(ds, space, fgn, cfg))
        .collect()
}

/// Picks the expert whose posterior-mean reconstruction is closest to `gait`; ties go to the
/// lowest index. Returns the index and that expert's posterior-mean muscle condition.
pub fn select_expert(
    experts: &[Bgn],
    fgn: &Network,
    space: &ConditionSpace,
    gait: &GaitPattern,
    gait_condition: &GaitCondition,
    skeleton: &[f64],
) -> Result<(usize, Vec<f64>)> {
    if experts.is_empty() {
        return Err(Error::Config("no experts to select from".into()));
    }
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for (i, e) in experts.iter().enumerate() {
        let muscle = e.posterior_mean(space, gait, gait_condition, skeleton)?;
        let recon = reconstruct(fgn, space, skeleton, &muscle, gait_condition)?;
        let d = d_gait(&recon, gait, e.config.pose_weights())?;
        if best.as_ref().is_none_or(|(_, bd, _)| d < *bd) {
            best = Some((i, d, muscle));
        }
    }
    let (i, _, muscle) = best.unwrap();
    Ok((i, muscle))
}

/// Forward-network gait for a skeleton, physical muscle vector and gait condition.
pub fn reconstruct(
    fgn: &Network,
    space: &ConditionSpace,
    skeleton: &[f64],
    muscle: &[f64],
    gait_condition: &GaitCondition,
) -> Result<GaitPattern> {
    let mut c = space.normalize_skeleton(skeleton);
    c.extend(space.normalize_muscle(muscle));
    c.extend(space.normalize_gait(gait_condition));
    rollout_normalized(fgn, &c)
}

/// The trained experts plus the frozen forward network and oracle they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertBundle {
    pub oracle_source: String,
    pub forward: Network,
    pub experts: Vec<Bgn>,
}

impl ExpertBundle {
    pub fn oracle(&self) -> Result<Oracle> {
        Oracle::from_text(&self.oracle_source)
    }

    pub fn schema_hash(&self) -> Result<u64> {
        Ok(self.oracle()?.space().hash())
    }

    /// Layout (little-endian): magic `BGNB`, u32 version, u64 schema hash, oracle text blob,
    /// forward weight file, u32 expert count, then per expert a config blob (TOML), encoder
    /// and pre-decoder weight files.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let hash = self.schema_hash()?;
        let mut w = ByteWriter::new();
        w.bytes(BUNDLE_MAGIC);
        w.u32(BUNDLE_VERSION);
        w.u64(hash);
        w.blob(self.oracle_source.as_bytes());
        let wf = |net: &Network| WeightFile {
            network: net.clone(),
            schema_hash: hash,
            metadata: String::new(),
        };
        w.bytes(&wf(&self.forward).to_bytes());
        w.u32(self.experts.len() as u32);
        for e in &self.experts {
            w.blob(e.config.to_metadata().as_bytes());
            w.bytes(&wf(&e.encoder).to_bytes());
            w.bytes(&wf(&e.decoder).to_bytes());
        }
        Ok(w.buf)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(data, "expert bundle");
        r.magic(BUNDLE_MAGIC)?;
        r.version(BUNDLE_VERSION)?;
        let hash = r.u64()?;
        let oracle_source = r.string()?;
        let oracle = Oracle::from_text(&oracle_source)?;
        let space = oracle.space();
        if space.hash() != hash {
            return Err(r.corrupt("schema hash does not match the embedded oracle"));
        }
        let read_net = |r: &mut ByteReader<'_>| -> Result<Network> {
            let wf = WeightFile::read(r)?;
            if wf.schema_hash != hash {
                return Err(Error::SchemaMismatch {
                    expected: hash,
                    found: wf.schema_hash,
                });
            }
            Ok(wf.network)
        };
        let forward = read_net(&mut r)?;
        check_forward(&forward, space, oracle.layout())?;
        let n = r.u32()? as usize;
        let mut experts = Vec::with_capacity(n.min(16));
        for _ in 0..n {
            let cfg = BgnConfig::from_metadata(&r.string()?)?;
            let enc = read_net(&mut r)?;
            let dec = read_net(&mut r)?;
            experts.push(Bgn::from_parts(cfg, enc, dec, space, oracle.layout())?);
        }
        r.finish()?;
        Ok(Self {
            oracle_source,
            forward,
            experts,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
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

    /// Loads a bundle and checks it was trained on `schema_hash`.
    pub fn load_expecting(path: impl AsRef<Path>, schema_hash: u64) -> Result<Self> {
        let b = Self::load(path)?;
        let found = b.schema_hash()?;
        if found != schema_hash {
            return Err(Error::SchemaMismatch {
                expected: schema_hash,
                found,
            });
        }
        Ok(b)
    }
}
