//! Deterministic synthetic gait simulator.
//!
//! Every joint has three angle channels (flexion, abduction, rotation), each a short harmonic
//! series in the gait phase `φ` (period 2π, one gait cycle). Conditions shift the channel
//! coefficients linearly in `reference − value`, so each channel responds monotonically to each
//! parameter at every phase. Root height and planar velocity follow the same scheme; velocity
//! scales with `stride · cadence`. A small `sin(φ/2)` term on the flexion channels makes the two
//! cycles of a pattern differ.
//!
//! Parameter pairs with identical influence columns are declared as redundancy directions:
//! moving along one leaves the simulated gait unchanged.

use std::f64::consts::PI;
use std::fmt;

use crate::gait::{
    frame_phase, joint_rotation, rot_encode, text_hash, AnatomyCondition, ConditionSpace,
    GaitCondition, GaitPattern, ParamSpec, PoseLayout, FRAMES,
};
use crate::{Error, Result};

pub const ORACLE_HEADER: &str = "gaitnet-oracle";
pub const ORACLE_VERSION: u32 = 1;

/// The shipped desk-scale oracle: 9 joints, 16 lower-body muscle groups.
pub const DESK_ORACLE: &str = include_str!("../schemas/desk.oracle");

const SHAPES: [&str; 5] = ["const", "cos1", "sin1", "cos2", "sin2"];
const AXES: [&str; 3] = ["flex", "abd", "rot"];

/// Harmonic coefficients `[c0, a1, b1, a2, b2]` of `c0 + a1 cos φ + b1 sin φ + a2 cos 2φ + b2 sin 2φ`.
pub type Harmonics = [f64; 5];

fn harmonic_basis(phi: f64) -> Harmonics {
    [
        1.0,
        phi.cos(),
        phi.sin(),
        (2.0 * phi).cos(),
        (2.0 * phi).sin(),
    ]
}

#[inline]
fn eval(h: &Harmonics, basis: &Harmonics) -> f64 {
    h.iter().zip(basis).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Flex,
    Abd,
    Rot,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Flex, Axis::Abd, Axis::Rot];

    fn parse(s: &str) -> Option<Self> {
        AXES.iter().position(|a| *a == s).map(|i| Self::ALL[i])
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(AXES[*self as usize])
    }
}

/// One influence entry: `value · (reference − c[param])` added to harmonic `shape`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Influence {
    /// Index into the full parameter list (skeleton, muscle, gait).
    pub param: usize,
    pub shape: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Channel {
    base: Harmonics,
    influences: Vec<Influence>,
}

/// A direction in anatomy space (skeleton then muscle indices) along which the gait is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Redundancy {
    pub name: String,
    pub direction: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    /// Anatomy index and value; everything else stays at reference.
    pub values: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    source: String,
    joints: Vec<String>,
    space: ConditionSpace,
    /// `joint * 3 + axis`.
    channels: Vec<Channel>,
    height: Harmonics,
    height_influence: Vec<(usize, f64)>,
    velocity_fwd: Harmonics,
    velocity_lat: Harmonics,
    asymmetry_deg: f64,
    redundancies: Vec<Redundancy>,
    presets: Vec<Preset>,
}

fn schema_err(line: usize, msg: impl fmt::Display) -> Error {
    Error::Schema(format!("oracle line {line}: {msg}"))
}

fn parse_num(line: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| schema_err(line, format!("bad number `{s}`")))
}

fn parse_harmonics(line: usize, fields: &[&str]) -> Result<Harmonics> {
    if fields.len() != 5 {
        return Err(schema_err(line, "expected 5 harmonic coefficients"));
    }
    let mut h = [0.0; 5];
    for (v, f) in h.iter_mut().zip(fields) {
        *v = parse_num(line, f)?;
    }
    Ok(h)
}

impl Oracle {
    pub fn desk() -> Self {
        Self::from_text(DESK_ORACLE).expect("shipped oracle schema parses")
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap().trim()))
            .filter(|(_, l)| !l.is_empty())
            .map(|(n, l)| (n, l.split_whitespace().collect::<Vec<_>>()));

        match lines.next() {
            Some((n, f)) if f[0] == ORACLE_HEADER => {
                let v: u32 = f
                    .get(1)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| schema_err(n, "missing version"))?;
                if v != ORACLE_VERSION {
                    return Err(Error::Version {
                        what: "oracle schema",
                        found: v,
                        supported: ORACLE_VERSION,
                    });
                }
            }
            _ => return Err(Error::Schema(format!("missing `{ORACLE_HEADER}` header"))),
        }

        let mut joints: Vec<String> = Vec::new();
        let mut params: Vec<ParamSpec> = Vec::new();
        let mut bases: Vec<(usize, usize, Harmonics, usize)> = Vec::new();
        let mut infl: Vec<(usize, usize, usize, String, f64, usize)> = Vec::new();
        let mut height = None;
        let mut height_infl: Vec<(String, f64, usize)> = Vec::new();
        let mut vel_fwd = None;
        let mut vel_lat = None;
        let mut asymmetry = 0.0;
        let mut redundancy_lines: Vec<(usize, Vec<&str>)> = Vec::new();
        let mut preset_lines: Vec<(usize, Vec<&str>)> = Vec::new();

        let joint_index = |joints: &[String], n: usize, name: &str| {
            joints
                .iter()
                .position(|j| j == name)
                .ok_or_else(|| schema_err(n, format!("unknown joint `{name}`")))
        };
        let axis = |n: usize, s: &str| {
            Axis::parse(s).ok_or_else(|| schema_err(n, format!("unknown axis `{s}`")))
        };

        for (n, f) in lines {
            match f[0] {
                "frames" => {
                    let frames = f.get(1).and_then(|v| v.parse::<usize>().ok());
                    if frames != Some(FRAMES) {
                        return Err(schema_err(n, format!("only {FRAMES} frames are supported")));
                    }
                }
                "joint" if f.len() == 2 => joints.push(f[1].to_string()),
                "param" => {
                    params.push(ParamSpec::parse_fields(&f[1..]).map_err(|e| schema_err(n, e))?)
                }
                "base" if f.len() == 8 => {
                    let j = joint_index(&joints, n, f[1])?;
                    let a = axis(n, f[2])? as usize;
                    bases.push((j, a, parse_harmonics(n, &f[3..])?, n));
                }
                "height" => height = Some(parse_harmonics(n, &f[1..])?),
                "velocity" if f.len() == 7 && f[1] == "fwd" => {
                    vel_fwd = Some(parse_harmonics(n, &f[2..])?)
                }
                "velocity" if f.len() == 7 && f[1] == "lat" => {
                    vel_lat = Some(parse_harmonics(n, &f[2..])?)
                }
                "asymmetry" if f.len() == 2 => asymmetry = parse_num(n, f[1])?,
                "influence" if f.len() == 6 => {
                    let j = joint_index(&joints, n, f[1])?;
                    let a = axis(n, f[2])? as usize;
                    let s = SHAPES
                        .iter()
                        .position(|s| *s == f[3])
                        .ok_or_else(|| schema_err(n, format!("unknown shape `{}`", f[3])))?;
                    infl.push((j, a, s, f[4].to_string(), parse_num(n, f[5])?, n));
                }
                "height-influence" if f.len() == 3 => {
                    height_infl.push((f[1].to_string(), parse_num(n, f[2])?, n))
                }
                "redundancy" if f.len() >= 3 => redundancy_lines.push((n, f)),
                "preset" if f.len() >= 2 => preset_lines.push((n, f)),
                other => return Err(schema_err(n, format!("unexpected `{other}` line"))),
            }
        }

        if joints.is_empty() {
            return Err(Error::Schema("oracle declares no joints".into()));
        }
        let space = ConditionSpace::new(params)?;
        let param_index = |n: usize, name: &str| {
            space
                .index_of(name)
                .ok_or_else(|| schema_err(n, format!("unknown parameter `{name}`")))
        };

        let mut channels: Vec<Option<Channel>> = vec![None; joints.len() * 3];
        for (j, a, base, n) in bases {
            let slot = &mut channels[j * 3 + a];
            if slot.is_some() {
                return Err(schema_err(n, "duplicate base line"));
            }
            *slot = Some(Channel {
                base,
                influences: Vec::new(),
            });
        }
        let mut channels = channels
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| {
                    Error::Schema(format!(
                        "oracle has no base line for {} {}",
                        joints[i / 3],
                        AXES[i % 3]
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (j, a, shape, p, value, n) in infl {
            let param = param_index(n, &p)?;
            channels[j * 3 + a].influences.push(Influence {
                param,
                shape,
                value,
            });
        }
        let mut height_influence = Vec::new();
        for (p, v, n) in height_infl {
            let i = param_index(n, &p)?;
            if i >= space.n_anatomy() {
                return Err(schema_err(
                    n,
                    "height influences take anatomy parameters only",
                ));
            }
            height_influence.push((i, v));
        }

        let mut redundancies = Vec::new();
        for (n, f) in redundancy_lines {
            let mut direction = Vec::new();
            for term in &f[2..] {
                let (name, coef) = term.split_once(':').ok_or_else(|| {
                    schema_err(n, format!("expected `param:coefficient`, got `{term}`"))
                })?;
                let i = param_index(n, name)?;
                if i >= space.n_anatomy() {
                    return Err(schema_err(
                        n,
                        "redundancy directions span anatomy parameters only",
                    ));
                }
                direction.push((i, parse_num(n, coef)?));
            }
            redundancies.push(Redundancy {
                name: f[1].to_string(),
                direction,
            });
        }
        let mut presets = Vec::new();
        for (n, f) in preset_lines {
            let mut values = Vec::new();
            for term in &f[2..] {
                let (name, v) = term.split_once('=').ok_or_else(|| {
                    schema_err(n, format!("expected `param=value`, got `{term}`"))
                })?;
                let i = param_index(n, name)?;
                let v = parse_num(n, v)?;
                if i >= space.n_anatomy() || !space.params()[i].contains(v) {
                    return Err(schema_err(
                        n,
                        format!("preset value {name}={v} is out of range"),
                    ));
                }
                values.push((i, v));
            }
            presets.push(Preset {
                name: f[1].to_string(),
                values,
            });
        }

        let oracle = Self {
            source: text.to_string(),
            joints,
            space,
            channels,
            height: height.ok_or_else(|| Error::Schema("oracle has no height line".into()))?,
            height_influence,
            velocity_fwd: vel_fwd
                .ok_or_else(|| Error::Schema("oracle has no forward velocity".into()))?,
            velocity_lat: vel_lat
                .ok_or_else(|| Error::Schema("oracle has no lateral velocity".into()))?,
            asymmetry_deg: asymmetry,
            redundancies,
            presets,
        };
        oracle.verify_redundancies()?;
        Ok(oracle)
    }

    /// Checks that every declared direction cancels in every influence row.
    fn verify_redundancies(&self) -> Result<()> {
        for r in &self.redundancies {
            let column_sum = |entries: &mut dyn Iterator<Item = (usize, f64)>| {
                let mut acc = 0.0;
                for (p, v) in entries {
                    if let Some((_, c)) = r.direction.iter().find(|(i, _)| *i == p) {
                        acc += c * v;
                    }
                }
                acc
            };
            let mut worst: f64 = column_sum(&mut self.height_influence.iter().copied()).abs();
            for ch in &self.channels {
                for s in 0..5 {
                    let mut it = ch
                        .influences
                        .iter()
                        .filter(|e| e.shape == s)
                        .map(|e| (e.param, e.value));
                    worst = worst.max(column_sum(&mut it).abs());
                }
            }
            if worst > 1e-12 {
                return Err(Error::Schema(format!(
                    "redundancy `{}` is not in the null space of the oracle (residual {worst:e})",
                    r.name
                )));
            }
        }
        Ok(())
    }

    /// Canonical source text; its hash identifies the oracle in dataset files.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn hash(&self) -> u64 {
        text_hash(&self.source)
    }

    /// The per-parameter `[min, max]` table used by samplers and normalizers.
    pub fn valid_ranges(&self) -> &ConditionSpace {
        &self.space
    }

    pub fn space(&self) -> &ConditionSpace {
        &self.space
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j == name)
    }

    pub fn layout(&self) -> PoseLayout {
        PoseLayout::new(self.joints.len())
    }

    pub fn redundancies(&self) -> &[Redundancy] {
        &self.redundancies
    }

    pub fn presets(&self) -> &[Preset] {
        &self.presets
    }

    pub fn preset(&self, name: &str) -> Option<AnatomyCondition> {
        let p = self.presets.iter().find(|p| p.name == name)?;
        let mut v = self.space.reference_anatomy().to_vec();
        for &(i, x) in &p.values {
            v[i] = x;
        }
        self.space.anatomy_from_vec(&v).ok()
    }

    /// Influence entries of one joint channel.
    pub fn influences(&self, joint: usize, axis: Axis) -> &[Influence] {
        &self.channels[joint * 3 + axis as usize].influences
    }

    /// Parameters whose influence on every channel, height and velocity is zero.
    pub fn inert_params(&self) -> Vec<usize> {
        (0..self.space.n_anatomy())
            .filter(|&p| {
                self.channels
                    .iter()
                    .all(|c| c.influences.iter().all(|e| e.param != p || e.value == 0.0))
                    && self
                        .height_influence
                        .iter()
                        .all(|&(i, v)| i != p || v == 0.0)
            })
            .collect()
    }

    fn deltas(&self, anatomy: &AnatomyCondition, gait: &GaitCondition) -> Result<Vec<f64>> {
        self.space.check_anatomy(anatomy)?;
        self.space.check_gait(gait)?;
        let g = gait.to_array();
        let values = anatomy
            .skeleton
            .iter()
            .chain(&anatomy.muscle)
            .chain(&g)
            .copied();
        Ok(self
            .space
            .params()
            .iter()
            .zip(values)
            .map(|(p, v)| p.reference - v)
            .collect())
    }

    fn channel_harmonics(&self, deltas: &[f64]) -> Vec<Harmonics> {
        self.channels
            .iter()
            .map(|ch| {
                let mut h = ch.base;
                for e in &ch.influences {
                    h[e.shape] += e.value * deltas[e.param];
                }
                h
            })
            .collect()
    }

    /// Joint channel angles in degrees, indexed `[joint * 3 + axis][frame]`.
    pub fn channel_angles(
        &self,
        anatomy: &AnatomyCondition,
        gait: &GaitCondition,
    ) -> Result<Vec<[f64; FRAMES]>> {
        let deltas = self.deltas(anatomy, gait)?;
        let harmonics = self.channel_harmonics(&deltas);
        let mut out = vec![[0.0; FRAMES]; harmonics.len()];
        for k in 0..FRAMES {
            let phi = frame_phase(k);
            let basis = harmonic_basis(phi);
            let drift = self.asymmetry_deg * (0.5 * phi).sin();
            for (c, h) in harmonics.iter().enumerate() {
                let mut angle = eval(h, &basis);
                if c % 3 == Axis::Flex as usize {
                    angle += drift;
                }
                out[c][k] = angle;
            }
        }
        Ok(out)
    }

    pub fn simulate(
        &self,
        anatomy: &AnatomyCondition,
        gait: &GaitCondition,
    ) -> Result<GaitPattern> {
        let deltas = self.deltas(anatomy, gait)?;
        let angles = self.channel_angles(anatomy, gait)?;
        let layout = self.layout();
        let mut height = self.height;
        for &(p, v) in &self.height_influence {
            height[0] += v * deltas[p];
        }
        let speed = gait.stride * gait.cadence;
        let mut data = Vec::with_capacity(layout.pattern_dim());
        for k in 0..FRAMES {
            let basis = harmonic_basis(frame_phase(k));
            data.push(eval(&height, &basis));
            data.push(speed * eval(&self.velocity_fwd, &basis));
            data.push(speed * eval(&self.velocity_lat, &basis));
            for j in 0..self.joints.len() {
                let r = joint_rotation(
                    angles[3 * j][k].to_radians(),
                    angles[3 * j + 1][k].to_radians(),
                    angles[3 * j + 2][k].to_radians(),
                );
                data.extend_from_slice(&rot_encode(&r));
            }
        }
        GaitPattern::from_flat(layout, data)
    }

    /// `anatomy + magnitude · direction`, which simulates to the same gait.
    pub fn redundant_pair(
        &self,
        anatomy: &AnatomyCondition,
        direction: usize,
        magnitude: f64,
    ) -> Result<AnatomyCondition> {
        let r = self.redundancies.get(direction).ok_or_else(|| {
            Error::Schema(format!(
                "redundancy index {direction} out of range ({} declared)",
                self.redundancies.len()
            ))
        })?;
        self.space.check_anatomy(anatomy)?;
        let mut v = anatomy.to_vec();
        for &(i, c) in &r.direction {
            v[i] += magnitude * c;
        }
        let moved = self.space.anatomy_from_vec(&v)?;
        self.space.check_anatomy(&moved)?;
        Ok(moved)
    }

    /// Interval of magnitudes for which [`Oracle::redundant_pair`] stays inside the valid ranges.
    pub fn redundancy_span(&self, anatomy: &AnatomyCondition, direction: usize) -> Result<(f64, f64)> {
        let r = self.redundancies.get(direction).ok_or_else(|| {
            Error::Schema(format!(
                "redundancy index {direction} out of range ({} declared)",
                self.redundancies.len()
            ))
        })?;
        self.space.check_anatomy(anatomy)?;
        let v = anatomy.to_vec();
        let specs = self.space.anatomy();
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for &(i, c) in &r.direction {
            let (a, b) = ((specs[i].min - v[i]) / c, (specs[i].max - v[i]) / c);
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
        Ok((lo, hi))
    }

    /// Upper bound on `|simulate(c) − simulate(c')|₂ / |u − u'|₂`, where `u` is the condition
    /// normalized onto `[0, 1]` per parameter.
    ///
    /// Each rotation factor's derivative has Frobenius norm √2, so a joint's 6D code moves by at
    /// most √2 times the summed change of its three angles; the rest is the triangle inequality
    /// plus Cauchy–Schwarz over frames.
    pub fn lipschitz_bound(&self) -> f64 {
        let params = self.space.params();
        let n = params.len();
        let width: Vec<f64> = params.iter().map(|p| p.width()).collect();
        let mut per_frame = 0.0;
        for j in 0..self.joints.len() {
            let mut g = vec![0.0; n];
            for a in 0..3 {
                for e in &self.channels[j * 3 + a].influences {
                    g[e.param] += 2f64.sqrt() * (PI / 180.0) * e.value.abs() * width[e.param];
                }
            }
            per_frame += g.iter().map(|x| x * x).sum::<f64>();
        }
        let mut gh = vec![0.0; n];
        for &(p, v) in &self.height_influence {
            gh[p] += v.abs() * width[p];
        }
        per_frame += gh.iter().map(|x| x * x).sum::<f64>();
        let g = self.space.gait();
        let other_max = [g[1].max.abs(), g[0].max.abs()];
        for v in [&self.velocity_fwd, &self.velocity_lat] {
            let peak: f64 = v.iter().map(|c| c.abs()).sum();
            per_frame += (0..2)
                .map(|i| (peak * other_max[i] * g[i].width()).powi(2))
                .sum::<f64>();
        }
        (FRAMES as f64 * per_frame).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gait::{d_gait, joint_angle_error_deg, rot_decode, PoseWeights};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_anatomy(o: &Oracle, rng: &mut ChaCha8Rng) -> AnatomyCondition {
        let v: Vec<f64> = o
            .space()
            .anatomy()
            .iter()
            .map(|p| rng.random_range(p.min..=p.max))
            .collect();
        o.space().anatomy_from_vec(&v).unwrap()
    }

    fn random_gait(o: &Oracle, rng: &mut ChaCha8Rng) -> GaitCondition {
        let g = o.space().gait();
        GaitCondition {
            stride: rng.random_range(g[0].min..=g[0].max),
            cadence: rng.random_range(g[1].min..=g[1].max),
        }
    }

    /// Left-ankle flexion extracted from the encoded rotation, in degrees.
    fn ankle_flex_deg(o: &Oracle, m: &GaitPattern) -> Vec<f64> {
        let j = o.joint_index("ankle_l").unwrap();
        let off = m.layout().joint_offset(j);
        (0..FRAMES)
            .map(|k| {
                let r = rot_decode(&m.frame(k)[off..off + 6]).unwrap();
                (-r[(1, 2)]).atan2(r[(2, 2)]).to_degrees()
            })
            .collect()
    }

    #[test]
    fn desk_oracle_shape() {
        let o = Oracle::desk();
        let s = o.space();
        assert_eq!(o.joints().len(), 9);
        assert_eq!((s.n_skeleton(), s.n_muscle(), s.n_gait()), (6, 32, 2));
        assert_eq!(o.layout().dim(), 57);
        assert!(o.redundancies().len() >= 2);
        assert_eq!(o.presets().len(), 7);
        let inert: Vec<&str> = o
            .inert_params()
            .iter()
            .map(|&i| s.params()[i].name.as_str())
            .collect();
        assert_eq!(
            inert,
            ["hip_extensor_l.contracture", "hip_extensor_r.contracture"]
        );
    }

    #[test]
    fn ranges_are_proper_and_round_trip() {
        let o = Oracle::desk();
        let s = o.valid_ranges();
        assert!(s
            .params()
            .iter()
            .all(|p| p.min < p.max && p.contains(p.reference)));
        assert_eq!(&ConditionSpace::from_text(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn reference_condition_gives_the_base_trajectory() {
        let o = Oracle::desk();
        let s = o.space();
        let angles = o
            .channel_angles(&s.reference_anatomy(), &s.reference_gait())
            .unwrap();
        for (c, ch) in o.channels.iter().enumerate() {
            for k in 0..FRAMES {
                let phi = frame_phase(k);
                let mut expect = eval(&ch.base, &harmonic_basis(phi));
                if c % 3 == 0 {
                    expect += o.asymmetry_deg * (phi / 2.0).sin();
                }
                assert_eq!(angles[c][k], expect);
            }
        }
        let m = o
            .simulate(&s.reference_anatomy(), &s.reference_gait())
            .unwrap();
        for k in 0..FRAMES {
            let b = harmonic_basis(frame_phase(k));
            assert_eq!(m.frame(k)[0], eval(&o.height, &b));
            assert_eq!(m.frame(k)[1], eval(&o.velocity_fwd, &b));
        }
    }

    #[test]
    fn trendelenburg_pair_is_bit_identical() {
        let o = Oracle::desk();
        let s = o.space();
        let weak = o.preset("trendelenburg").unwrap();
        let contracted = o.redundant_pair(&weak, 0, 0.5).unwrap();
        let w = s.n_skeleton() + s.muscle_index("hip_abductor_l.weakness").unwrap();
        let c = s.n_skeleton() + s.muscle_index("hip_adductor_r.contracture").unwrap();
        assert_eq!((contracted.to_vec()[w], contracted.to_vec()[c]), (1.0, 0.5));
        let g = s.reference_gait();
        assert_eq!(
            o.simulate(&weak, &g).unwrap(),
            o.simulate(&contracted, &g).unwrap()
        );
        assert!(
            d_gait(
                &o.simulate(&weak, &g).unwrap(),
                &o.simulate(&s.reference_anatomy(), &g).unwrap(),
                PoseWeights::default()
            )
            .unwrap()
                > 1e-3
        );
    }

    #[test]
    fn redundant_pair_edges() {
        let o = Oracle::desk();
        let a = o.space().reference_anatomy();
        assert_eq!(o.redundant_pair(&a, 1, 0.0).unwrap(), a);
        assert!(matches!(
            o.redundant_pair(&a, 0, 0.8),
            Err(Error::OutOfRange { .. })
        ));
        assert!(o.redundant_pair(&a, 9, 0.1).is_err());
    }

    #[test]
    fn certified_redundancy_on_random_conditions() {
        let o = Oracle::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for d in 0..o.redundancies().len() {
            let mut checked = 0;
            while checked < 100 {
                let a = random_anatomy(&o, &mut rng);
                let g = random_gait(&o, &mut rng);
                let Ok(b) = o.redundant_pair(&a, d, rng.random_range(-0.5..0.5)) else {
                    continue;
                };
                let (ma, mb) = (o.simulate(&a, &g).unwrap(), o.simulate(&b, &g).unwrap());
                let worst = ma
                    .as_slice()
                    .iter()
                    .zip(mb.as_slice())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(worst <= 1e-12, "direction {d}: {worst}");
                checked += 1;
            }
        }
    }

    #[test]
    fn plantarflexor_weakness_reduces_push_off() {
        let o = Oracle::desk();
        let s = o.space();
        let idx = s.muscle_index("ankle_plantarflexor_l.weakness").unwrap();
        let g = s.reference_gait();
        let push_off = |w: f64| {
            let mut a = s.reference_anatomy();
            a.muscle[idx] = w;
            let angles = ankle_flex_deg(&o, &o.simulate(&a, &g).unwrap());
            -angles.iter().copied().fold(f64::INFINITY, f64::min)
        };
        let sweep: Vec<f64> = (0..10).map(|i| push_off(1.5 - i as f64 * 0.1)).collect();
        assert!(sweep.windows(2).all(|w| w[1] < w[0]), "{sweep:?}");
    }

    #[test]
    fn every_influence_is_monotone_on_its_channel() {
        let o = Oracle::desk();
        let s = o.space();
        let g = s.reference_gait();
        for (c, ch) in o.channels.iter().enumerate() {
            let mut params: Vec<usize> = ch
                .influences
                .iter()
                .filter(|e| e.param < s.n_anatomy())
                .map(|e| e.param)
                .collect();
            params.dedup();
            for p in params {
                let spec = &s.params()[p];
                let sweep: Vec<[f64; FRAMES]> = (0..10)
                    .map(|i| {
                        let mut v = s.reference_anatomy().to_vec();
                        v[p] = spec.min + spec.width() * i as f64 / 9.0;
                        o.channel_angles(&s.anatomy_from_vec(&v).unwrap(), &g)
                            .unwrap()[c]
                    })
                    .collect();
                for k in 0..FRAMES {
                    let col: Vec<f64> = sweep.iter().map(|a| a[k]).collect();
                    let up = col.windows(2).all(|w| w[1] >= w[0] - 1e-12);
                    let down = col.windows(2).all(|w| w[1] <= w[0] + 1e-12);
                    assert!(up || down, "channel {c} param {} frame {k}", spec.name);
                }
            }
        }
    }

    #[test]
    fn lipschitz_bound_holds_on_random_pairs() {
        let o = Oracle::desk();
        let s = o.space();
        let l = o.lipschitz_bound();
        assert!(l.is_finite() && l > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let (a, b) = (random_anatomy(&o, &mut rng), random_anatomy(&o, &mut rng));
            let (ga, gb) = (random_gait(&o, &mut rng), random_gait(&o, &mut rng));
            let ma = o.simulate(&a, &ga).unwrap();
            let mb = o.simulate(&b, &gb).unwrap();
            let dm = ma
                .as_slice()
                .iter()
                .zip(mb.as_slice())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            let mut ua = s.normalize_anatomy(&a);
            ua.extend(s.normalize_gait(&ga));
            let mut ub = s.normalize_anatomy(&b);
            ub.extend(s.normalize_gait(&gb));
            let du = ua
                .iter()
                .zip(&ub)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(dm <= l * du, "{dm} > {l} * {du}");
        }
    }

    #[test]
    fn out_of_range_conditions_are_rejected() {
        let o = Oracle::desk();
        let s = o.space();
        let mut a = s.reference_anatomy();
        a.muscle[0] = 0.4;
        assert!(matches!(
            o.simulate(&a, &s.reference_gait()),
            Err(Error::OutOfRange { .. })
        ));
        let g = GaitCondition {
            stride: 1.0,
            cadence: 1.4,
        };
        assert!(o.simulate(&s.reference_anatomy(), &g).is_err());
    }

    #[test]
    fn malformed_schemas_are_rejected() {
        assert!(matches!(
            Oracle::from_text("gaitnet-oracle 3\n"),
            Err(Error::Version { found: 3, .. })
        ));
        let broken = DESK_ORACLE.replace(
            "redundancy trendelenburg hip_abductor_l.weakness:1 hip_adductor_r.contracture:-1",
            "redundancy trendelenburg hip_abductor_l.weakness:1 hip_adductor_r.contracture:1",
        );
        assert!(Oracle::from_text(&broken).is_err());
        let missing = DESK_ORACLE.replace("base head rot", "# base head rot");
        assert!(Oracle::from_text(&missing).is_err());
    }

    #[test]
    fn joint_errors_between_presets_are_nonzero() {
        let o = Oracle::desk();
        let s = o.space();
        let g = s.reference_gait();
        let normal = o.simulate(&o.preset("normal").unwrap(), &g).unwrap();
        let crouch = o.simulate(&o.preset("crouch").unwrap(), &g).unwrap();
        let errs = joint_angle_error_deg(&normal, &crouch).unwrap();
        assert!(errs[o.joint_index("knee_l").unwrap()].mean > 5.0);
    }

    proptest! {
        #[test]
        fn simulate_is_pure(seed in any::<u64>()) {
            let o = Oracle::desk();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_anatomy(&o, &mut rng);
            let g = random_gait(&o, &mut rng);
            let m = o.simulate(&a, &g).unwrap();
            prop_assert_eq!(&m, &o.simulate(&a, &g).unwrap());
            prop_assert!((0..FRAMES).all(|k| m.frame(k)[0] > 0.0));
        }
    }
}
