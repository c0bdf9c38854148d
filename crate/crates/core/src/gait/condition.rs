use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Skeleton,
    Muscle,
    Gait,
}

impl ParamGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Skeleton => "skeleton",
            ParamGroup::Muscle => "muscle",
            ParamGroup::Gait => "gait",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "skeleton" => Some(ParamGroup::Skeleton),
            "muscle" => Some(ParamGroup::Muscle),
            "gait" => Some(ParamGroup::Gait),
            _ => None,
        }
    }
}

/// One named condition parameter with its valid range and reference value.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub group: ParamGroup,
    pub min: f64,
    pub max: f64,
    pub reference: f64,
}

impl ParamSpec {
    pub fn new(name: &str, group: ParamGroup, min: f64, max: f64, reference: f64) -> Self {
        Self {
            name: name.to_string(),
            group,
            min,
            max,
            reference,
        }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    /// Affine map of `value` onto `[0, 1]`; a collapsed range maps to 0.5.
    #[inline]
    pub fn normalize(&self, value: f64) -> f64 {
        let w = self.width();
        if w > 0.0 {
            (value - self.min) / w
        } else {
            0.5
        }
    }

    /// Inverse of [`ParamSpec::normalize`], clamped to `[min, max]`.
    #[inline]
    pub fn denormalize(&self, u: f64) -> f64 {
        (self.min + u * self.width()).clamp(self.min, self.max)
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    fn check(&self, value: f64) -> Result<()> {
        if self.contains(value) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                name: self.name.clone(),
                value,
                min: self.min,
                max: self.max,
            })
        }
    }

    pub(crate) fn to_line(&self) -> String {
        format!(
            "param {} {} {} {} {}",
            self.group.as_str(),
            self.name,
            self.min,
            self.max,
            self.reference
        )
    }

    /// Parses the fields after the `param` keyword.
    pub(crate) fn parse_fields(fields: &[&str]) -> std::result::Result<Self, String> {
        let [group, name, min, max, reference] = fields else {
            return Err("expected `param <group> <name> <min> <max> <reference>`".into());
        };
        let group = ParamGroup::parse(group).ok_or_else(|| format!("unknown group `{group}`"))?;
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad number `{s}`"))
        };
        Ok(Self::new(
            name,
            group,
            num(min)?,
            num(max)?,
            num(reference)?,
        ))
    }
}

/// Skeleton and muscle parameters of one body.
#[derive(Debug, Clone, PartialEq)]
pub struct AnatomyCondition {
    pub skeleton: Vec<f64>,
    /// `(weakness, contracture)` per muscle, flattened.
    pub muscle: Vec<f64>,
}

impl AnatomyCondition {
    /// Skeleton values followed by muscle values.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.skeleton.clone();
        v.extend_from_slice(&self.muscle);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitCondition {
    pub stride: f64,
    pub cadence: f64,
}

impl GaitCondition {
    pub fn reference() -> Self {
        Self {
            stride: 1.0,
            cadence: 1.0,
        }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.stride, self.cadence]
    }
}

/// Ordered parameter table: skeleton parameters, then muscle parameters, then the two gait
/// parameters (`stride`, `cadence`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSpace {
    params: Vec<ParamSpec>,
    n_skeleton: usize,
    n_muscle: usize,
}

pub const CONDITIONS_HEADER: &str = "gaitnet-conditions";
pub const CONDITIONS_VERSION: u32 = 1;

impl ConditionSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        let rank = |g: ParamGroup| match g {
            ParamGroup::Skeleton => 0,
            ParamGroup::Muscle => 1,
            ParamGroup::Gait => 2,
        };
        if params
            .windows(2)
            .any(|w| rank(w[0].group) > rank(w[1].group))
        {
            return Err(Error::Schema(
                "parameters must be ordered skeleton, muscle, gait".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &params {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::Schema(format!("duplicate parameter `{}`", p.name)));
            }
            if p.min.is_nan() || p.max.is_nan() || p.min > p.max || !p.contains(p.reference) {
                return Err(Error::Schema(format!(
                    "parameter `{}` needs min <= reference <= max, got [{}, {}] ref {}",
                    p.name, p.min, p.max, p.reference
                )));
            }
        }
        let n_skeleton = params
            .iter()
            .filter(|p| p.group == ParamGroup::Skeleton)
            .count();
        let n_muscle = params
            .iter()
            .filter(|p| p.group == ParamGroup::Muscle)
            .count();
        let gait: Vec<&str> = params
            .iter()
            .filter(|p| p.group == ParamGroup::Gait)
            .map(|p| p.name.as_str())
            .collect();
        if gait != ["stride", "cadence"] {
            return Err(Error::Schema(format!(
                "gait parameters must be exactly [stride, cadence], got {gait:?}"
            )));
        }
        if n_muscle == 0 || n_muscle % 2 != 0 {
            return Err(Error::Schema(format!(
                "muscle parameters come in (weakness, contracture) pairs, got {n_muscle}"
            )));
        }
        for pair in params[n_skeleton..n_skeleton + n_muscle].chunks(2) {
            let ok = match (
                pair[0].name.strip_suffix(".weakness"),
                pair[1].name.strip_suffix(".contracture"),
            ) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            };
            if !ok {
                return Err(Error::Schema(format!(
                    "expected `<muscle>.weakness` then `<muscle>.contracture`, got `{}`, `{}`",
                    pair[0].name, pair[1].name
                )));
            }
        }
        Ok(Self {
            params,
            n_skeleton,
            n_muscle,
        })
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn skeleton(&self) -> &[ParamSpec] {
        &self.params[..self.n_skeleton]
    }

    pub fn muscle(&self) -> &[ParamSpec] {
        &self.params[self.n_skeleton..self.n_skeleton + self.n_muscle]
    }

    /// Skeleton followed by muscle parameters.
    pub fn anatomy(&self) -> &[ParamSpec] {
        &self.params[..self.n_skeleton + self.n_muscle]
    }

    pub fn gait(&self) -> &[ParamSpec] {
        &self.params[self.n_skeleton + self.n_muscle..]
    }

    pub fn n_skeleton(&self) -> usize {
        self.n_skeleton
    }

    pub fn n_muscle(&self) -> usize {
        self.n_muscle
    }

    pub fn n_anatomy(&self) -> usize {
        self.n_skeleton + self.n_muscle
    }

    pub fn n_gait(&self) -> usize {
        2
    }

    /// Muscle names (without the `.weakness` / `.contracture` suffix).
    pub fn muscle_names(&self) -> Vec<&str> {
        self.muscle()
            .chunks(2)
            .map(|p| p[0].name.strip_suffix(".weakness").unwrap())
            .collect()
    }

    /// Index over all parameters (skeleton, muscle, gait).
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Index into the flattened muscle vector.
    pub fn muscle_index(&self, name: &str) -> Option<usize> {
        self.muscle().iter().position(|p| p.name == name)
    }

    pub fn reference_anatomy(&self) -> AnatomyCondition {
        AnatomyCondition {
            skeleton: self.skeleton().iter().map(|p| p.reference).collect(),
            muscle: self.muscle().iter().map(|p| p.reference).collect(),
        }
    }

    pub fn reference_gait(&self) -> GaitCondition {
        GaitCondition {
            stride: self.gait()[0].reference,
            cadence: self.gait()[1].reference,
        }
    }

    pub fn anatomy_from_vec(&self, values: &[f64]) -> Result<AnatomyCondition> {
        if values.len() != self.n_anatomy() {
            return Err(Error::Dimension {
                what: "anatomy vector",
                expected: self.n_anatomy(),
                got: values.len(),
            });
        }
        Ok(AnatomyCondition {
            skeleton: values[..self.n_skeleton].to_vec(),
            muscle: values[self.n_skeleton..].to_vec(),
        })
    }

    pub fn check_anatomy(&self, a: &AnatomyCondition) -> Result<()> {
        if a.skeleton.len() != self.n_skeleton {
            return Err(Error::Dimension {
                what: "skeleton condition",
                expected: self.n_skeleton,
                got: a.skeleton.len(),
            });
        }
        if a.muscle.len() != self.n_muscle {
            return Err(Error::Dimension {
                what: "muscle condition",
                expected: self.n_muscle,
                got: a.muscle.len(),
            });
        }
        for (spec, &v) in self
            .anatomy()
            .iter()
            .zip(a.skeleton.iter().chain(&a.muscle))
        {
            spec.check(v)?;
        }
        Ok(())
    }

    pub fn check_gait(&self, g: &GaitCondition) -> Result<()> {
        self.gait()[0].check(g.stride)?;
        self.gait()[1].check(g.cadence)
    }

    /// Skeleton then muscle values mapped onto `[0, 1]`.
    pub fn normalize_anatomy(&self, a: &AnatomyCondition) -> Vec<f64> {
        normalize_condition(&a.to_vec(), self.anatomy())
    }

    pub fn normalize_skeleton(&self, skeleton: &[f64]) -> Vec<f64> {
        normalize_condition(skeleton, self.skeleton())
    }

    pub fn normalize_muscle(&self, muscle: &[f64]) -> Vec<f64> {
        normalize_condition(muscle, self.muscle())
    }

    pub fn normalize_gait(&self, g: &GaitCondition) -> Vec<f64> {
        normalize_condition(&g.to_array(), self.gait())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{CONDITIONS_HEADER} {CONDITIONS_VERSION}\n");
        for p in &self.params {
            let _ = writeln!(s, "{}", p.to_line());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap().trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, l)) => {
                let mut f = l.split_whitespace();
                if f.next() != Some(CONDITIONS_HEADER) {
                    return Err(Error::Schema(format!(
                        "missing `{CONDITIONS_HEADER}` header line"
                    )));
                }
                let v: u32 = f
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Schema("missing version number".into()))?;
                if v != CONDITIONS_VERSION {
                    return Err(Error::Version {
                        what: "condition-space",
                        found: v,
                        supported: CONDITIONS_VERSION,
                    });
                }
            }
            None => return Err(Error::Schema("empty condition-space file".into())),
        }
        let mut params = Vec::new();
        for (n, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] != "param" {
                return Err(Error::Schema(format!(
                    "line {n}: unexpected `{}`",
                    fields[0]
                )));
            }
            params.push(
                ParamSpec::parse_fields(&fields[1..])
                    .map_err(|e| Error::Schema(format!("line {n}: {e}")))?,
            );
        }
        Self::new(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// First eight bytes of the SHA-256 of the canonical text form.
    pub fn hash(&self) -> u64 {
        text_hash(&self.to_text())
    }
}

pub(crate) fn text_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Per-dimension affine map of `values` onto `[0, 1]` using `specs`' ranges.
pub fn normalize_condition(values: &[f64], specs: &[ParamSpec]) -> Vec<f64> {
    debug_assert_eq!(values.len(), specs.len());
    values
        .iter()
        .zip(specs)
        .map(|(&v, s)| s.normalize(v))
        .collect()
}

/// Inverse of [`normalize_condition`], clamped into each range.
pub fn denormalize_condition(normalized: &[f64], specs: &[ParamSpec]) -> Vec<f64> {
    debug_assert_eq!(normalized.len(), specs.len());
    normalized
        .iter()
        .zip(specs)
        .map(|(&u, s)| s.denormalize(u))
        .collect()
}
