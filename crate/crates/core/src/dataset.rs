//! Condition sampling, bulk oracle evaluation and `BGND` dataset files.
//!
//! File layout (little-endian): magic `BGND`, u32 version, u64 condition-space hash, u64 oracle
//! hash, u8 sampling strategy, u64 generator seed, u32 joint count, u32 anatomy dimension,
//! u32 gait-condition dimension, u64 tuple count, u32-prefixed oracle schema text, then per
//! tuple the condition block (anatomy then gait condition) and the gait block, as f32.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binio::{ByteReader, ByteWriter};
use crate::gait::{AnatomyCondition, ConditionSpace, GaitCondition, GaitPattern, PoseLayout};
use crate::oracle::Oracle;
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"BGND";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplingStrategy {
    /// Every parameter i.i.d. uniform on its range.
    Uniform,
    /// Anatomy parameters at a random corner of their box; gait conditions stay uniform.
    Grid,
}

impl SamplingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingStrategy::Uniform => "uniform",
            SamplingStrategy::Grid => "grid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(SamplingStrategy::Uniform),
            "grid" => Some(SamplingStrategy::Grid),
            _ => None,
        }
    }

    fn tag(self) -> u8 {
        match self {
            SamplingStrategy::Uniform => 0,
            SamplingStrategy::Grid => 1,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(SamplingStrategy::Uniform),
            1 => Some(SamplingStrategy::Grid),
            _ => None,
        }
    }
}

impl std::fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSample {
    pub anatomy: AnatomyCondition,
    pub gait: GaitCondition,
}

fn uniform_gait(space: &ConditionSpace, rng: &mut ChaCha8Rng) -> GaitCondition {
    let g = space.gait();
    GaitCondition {
        stride: rng.random_range(g[0].min..=g[0].max),
        cadence: rng.random_range(g[1].min..=g[1].max),
    }
}

/// `n` conditions with every parameter i.i.d. uniform on its range.
pub fn sample_uniform(n: usize, space: &ConditionSpace, seed: u64) -> Vec<ConditionSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = space
                .anatomy()
                .iter()
                .map(|p| rng.random_range(p.min..=p.max))
                .collect();
            ConditionSample {
                anatomy: space.anatomy_from_vec(&v).unwrap(),
                gait: uniform_gait(space, &mut rng),
            }
        })
        .collect()
}

/// `n` conditions whose anatomy parameters each sit at their min or max with probability ½.
/// Gait conditions are drawn uniformly.
pub fn sample_grid(n: usize, space: &ConditionSpace, seed: u64) -> Vec<ConditionSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = space
                .anatomy()
                .iter()
                .map(|p| if rng.random_bool(0.5) { p.max } else { p.min })
                .collect();
            ConditionSample {
                anatomy: space.anatomy_from_vec(&v).unwrap(),
                gait: uniform_gait(space, &mut rng),
            }
        })
        .collect()
}

pub fn sample_conditions(
    strategy: SamplingStrategy,
    n: usize,
    space: &ConditionSpace,
    seed: u64,
) -> Vec<ConditionSample> {
    match strategy {
        SamplingStrategy::Uniform => sample_uniform(n, space, seed),
        SamplingStrategy::Grid => sample_grid(n, space, seed),
    }
}

/// Nearest f32 to `v` that still lies inside `[min, max]`.
fn f32_within(v: f64, min: f64, max: f64) -> f32 {
    let mut x = v as f32;
    if (x as f64) > max {
        x = x.next_down();
    }
    if (x as f64) < min {
        x = x.next_up();
    }
    x
}

/// Rounds a condition onto the f32 grid the dataset stores, staying inside every range.
pub fn quantize(sample: &ConditionSample, space: &ConditionSpace) -> ConditionSample {
    let q = |vals: &[f64], specs: &[crate::gait::ParamSpec]| -> Vec<f64> {
        vals.iter()
            .zip(specs)
            .map(|(&v, p)| f32_within(v, p.min, p.max) as f64)
            .collect()
    };
    let g = q(&sample.gait.to_array(), space.gait());
    ConditionSample {
        anatomy: AnatomyCondition {
            skeleton: q(&sample.anatomy.skeleton, space.skeleton()),
            muscle: q(&sample.anatomy.muscle, space.muscle()),
        },
        gait: GaitCondition {
            stride: g[0],
            cadence: g[1],
        },
    }
}

/// One (anatomy, gait condition, gait pattern) tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTuple {
    pub anatomy: AnatomyCondition,
    pub gait_condition: GaitCondition,
    pub gait: GaitPattern,
}

/// Oracle-generated tuples stored as f32 rows, exactly as in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    oracle_source: String,
    schema_hash: u64,
    oracle_hash: u64,
    strategy: SamplingStrategy,
    seed: u64,
    layout: PoseLayout,
    n_anatomy: usize,
    /// Taken from the embedded schema; not a header field.
    n_skeleton: usize,
    conditions: Vec<f32>,
    gaits: Vec<f32>,
}

impl Dataset {
    pub fn empty(oracle: &Oracle, strategy: SamplingStrategy, seed: u64) -> Self {
        Self {
            oracle_source: oracle.source().to_string(),
            schema_hash: oracle.space().hash(),
            oracle_hash: oracle.hash(),
            strategy,
            seed,
            layout: oracle.layout(),
            n_anatomy: oracle.space().n_anatomy(),
            n_skeleton: oracle.space().n_skeleton(),
            conditions: Vec::new(),
            gaits: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.conditions.len() / self.condition_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    pub fn oracle_hash(&self) -> u64 {
        self.oracle_hash
    }

    pub fn strategy(&self) -> SamplingStrategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layout(&self) -> PoseLayout {
        self.layout
    }

    pub fn n_anatomy(&self) -> usize {
        self.n_anatomy
    }

    /// Anatomy plus the two gait-condition values.
    pub fn condition_dim(&self) -> usize {
        self.n_anatomy + 2
    }

    pub fn gait_dim(&self) -> usize {
        self.layout.pattern_dim()
    }

    /// The oracle this dataset was generated with, parsed from the embedded schema text.
    pub fn oracle(&self) -> Result<Oracle> {
        Oracle::from_text(&self.oracle_source)
    }

    pub fn condition_row(&self, i: usize) -> &[f32] {
        let d = self.condition_dim();
        &self.conditions[i * d..(i + 1) * d]
    }

    pub fn gait_row(&self, i: usize) -> &[f32] {
        let d = self.gait_dim();
        &self.gaits[i * d..(i + 1) * d]
    }

    pub fn anatomy(&self, i: usize) -> AnatomyCondition {
        let row = self.condition_row(i);
        let s = self.n_skeleton;
        AnatomyCondition {
            skeleton: row[..s].iter().map(|&v| v as f64).collect(),
            muscle: row[s..self.n_anatomy].iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn gait_condition(&self, i: usize) -> GaitCondition {
        let row = self.condition_row(i);
        GaitCondition {
            stride: row[self.n_anatomy] as f64,
            cadence: row[self.n_anatomy + 1] as f64,
        }
    }

    pub fn gait(&self, i: usize) -> GaitPattern {
        GaitPattern::from_flat(
            self.layout,
            self.gait_row(i).iter().map(|&v| v as f64).collect(),
        )
        .unwrap()
    }

    pub fn tuple(&self, i: usize) -> DatasetTuple {
        DatasetTuple {
            anatomy: self.anatomy(i),
            gait_condition: self.gait_condition(i),
            gait: self.gait(i),
        }
    }

    /// Indices sorted by the bit patterns of each tuple's rows, so any permutation of the same
    /// tuples yields the same sequence.
    pub fn canonical_order(&self) -> Vec<usize> {
        let key = |i: usize| {
            self.condition_row(i)
                .iter()
                .chain(self.gait_row(i))
                .map(|v| v.to_bits())
        };
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| key(a).cmp(key(b)).then(a.cmp(&b)));
        idx
    }

    fn push_rows(&mut self, cond: &[f32], gait: &[f32]) {
        self.conditions.extend_from_slice(cond);
        self.gaits.extend_from_slice(gait);
    }

    /// Tuples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self {
            conditions: Vec::with_capacity(indices.len() * self.condition_dim()),
            gaits: Vec::with_capacity(indices.len() * self.gait_dim()),
            ..self.clone_header()
        };
        for &i in indices {
            out.push_rows(self.condition_row(i), self.gait_row(i));
        }
        out
    }

    fn clone_header(&self) -> Self {
        Self {
            oracle_source: self.oracle_source.clone(),
            conditions: Vec::new(),
            gaits: Vec::new(),
            ..*self
        }
    }

    /// Appends another dataset generated from the same oracle.
    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if other.oracle_hash != self.oracle_hash {
            return Err(Error::SchemaMismatch {
                expected: self.oracle_hash,
                found: other.oracle_hash,
            });
        }
        self.conditions.extend_from_slice(&other.conditions);
        self.gaits.extend_from_slice(&other.gaits);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        w.u64(self.schema_hash);
        w.u64(self.oracle_hash);
        w.u8(self.strategy.tag());
        w.u64(self.seed);
        w.u32(self.layout.joints as u32);
        w.u32(self.n_anatomy as u32);
        w.u32(2);
        w.u64(self.len() as u64);
        w.blob(self.oracle_source.as_bytes());
        for i in 0..self.len() {
            w.f32s(self.condition_row(i));
            w.f32s(self.gait_row(i));
        }
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(data, "dataset");
        r.magic(DATASET_MAGIC)?;
        r.version(DATASET_VERSION)?;
        let schema_hash = r.u64()?;
        let oracle_hash = r.u64()?;
        let strategy = r.u8()?;
        let strategy = SamplingStrategy::from_tag(strategy)
            .ok_or_else(|| r.corrupt(format!("unknown sampling strategy tag {strategy}")))?;
        let seed = r.u64()?;
        let joints = r.u32()? as usize;
        let n_anatomy = r.u32()? as usize;
        let n_gait = r.u32()? as usize;
        let count = r.u64()? as usize;
        let oracle_source = r.string()?;
        let oracle = Oracle::from_text(&oracle_source)?;
        if oracle.hash() != oracle_hash {
            return Err(Error::SchemaMismatch {
                expected: oracle_hash,
                found: oracle.hash(),
            });
        }
        if oracle.space().hash() != schema_hash {
            return Err(Error::SchemaMismatch {
                expected: schema_hash,
                found: oracle.space().hash(),
            });
        }
        if joints != oracle.joints().len() || n_anatomy != oracle.space().n_anatomy() || n_gait != 2
        {
            return Err(r.corrupt("header dimensions disagree with the embedded schema"));
        }
        let layout = PoseLayout::new(joints);
        let row = (n_anatomy + n_gait + layout.pattern_dim()) * 4;
        if count.checked_mul(row) != Some(r.remaining()) {
            return Err(r.corrupt(format!(
                "header announces {count} tuples of {row} bytes but {} bytes follow",
                r.remaining()
            )));
        }
        let mut conditions = Vec::with_capacity(count * (n_anatomy + n_gait));
        let mut gaits = Vec::with_capacity(count * layout.pattern_dim());
        for _ in 0..count {
            conditions.extend(r.f32s(n_anatomy + n_gait)?);
            gaits.extend(r.f32s(layout.pattern_dim())?);
        }
        r.finish()?;
        Ok(Self {
            oracle_source,
            schema_hash,
            oracle_hash,
            strategy,
            seed,
            layout,
            n_anatomy,
            n_skeleton: oracle.space().n_skeleton(),
            conditions,
            gaits,
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

    /// Loads a dataset and checks that it was generated over the expected condition space.
    pub fn load_expecting(path: impl AsRef<Path>, schema_hash: u64) -> Result<Self> {
        let ds = Self::load(path)?;
        ds.check_schema(schema_hash)?;
        Ok(ds)
    }

    pub fn check_schema(&self, schema_hash: u64) -> Result<()> {
        if self.schema_hash != schema_hash {
            return Err(Error::SchemaMismatch {
                expected: schema_hash,
                found: self.schema_hash,
            });
        }
        Ok(())
    }

    /// Writes one row per tuple: conditions by name, then `f<frame>_<component>` gait columns.
    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let oracle = self.oracle()?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header: Vec<String> = vec!["index".into()];
        header.extend(oracle.space().params().iter().map(|p| p.name.clone()));
        for k in 0..crate::gait::FRAMES {
            for c in 0..self.layout.dim() {
                header.push(format!("f{k}_{c}"));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            write!(out, "{i}")?;
            for v in self.condition_row(i).iter().chain(self.gait_row(i)) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Simulates every condition (after f32 rounding) and assembles the tuples in input order.
pub fn generate(
    conditions: &[ConditionSample],
    oracle: &Oracle,
    strategy: SamplingStrategy,
    seed: u64,
) -> Result<Dataset> {
    let space = oracle.space();
    let rows: Vec<(Vec<f32>, Vec<f32>)> = conditions
        .par_iter()
        .map(|c| {
            let q = quantize(c, space);
            let gait = oracle.simulate(&q.anatomy, &q.gait)?;
            let mut cond: Vec<f32> = q.anatomy.to_vec().iter().map(|&v| v as f32).collect();
            cond.push(q.gait.stride as f32);
            cond.push(q.gait.cadence as f32);
            Ok((cond, gait.as_slice().iter().map(|&v| v as f32).collect()))
        })
        .collect::<Result<_>>()?;
    let mut ds = Dataset::empty(oracle, strategy, seed);
    ds.conditions.reserve(rows.len() * ds.condition_dim());
    ds.gaits.reserve(rows.len() * ds.gait_dim());
    for (c, g) in &rows {
        ds.push_rows(c, g);
    }
    Ok(ds)
}

/// The oracle's named pathology presets at the reference gait condition.
pub fn pathology_conditions(oracle: &Oracle) -> Vec<(String, ConditionSample)> {
    let gait = oracle.space().reference_gait();
    oracle
        .presets()
        .iter()
        .map(|p| {
            (
                p.name.clone(),
                ConditionSample {
                    anatomy: oracle.preset(&p.name).unwrap(),
                    gait,
                },
            )
        })
        .collect()
}

/// Splits off `n_holdout` tuples chosen by `seed`; both halves keep dataset order.
pub fn split_holdout(ds: &Dataset, n_holdout: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    split_holdout_with(ds, n_holdout, seed, &[])
}

/// Like [`split_holdout`], but the holdout starts with the `forced` conditions (simulated with
/// the dataset's own oracle) and is filled up to `n_holdout` from the dataset.
pub fn split_holdout_with(
    ds: &Dataset,
    n_holdout: usize,
    seed: u64,
    forced: &[ConditionSample],
) -> Result<(Dataset, Dataset)> {
    if forced.len() > n_holdout {
        return Err(Error::Config(format!(
            "{} forced holdout cases exceed the holdout size {n_holdout}",
            forced.len()
        )));
    }
    let drawn = n_holdout - forced.len();
    if drawn > ds.len() {
        return Err(Error::Config(format!(
            "cannot hold out {drawn} of {} tuples",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher–Yates: the first `drawn` slots become the holdout.
    for i in 0..drawn {
        let j = rng.random_range(i..ds.len());
        order.swap(i, j);
    }
    let mut held: Vec<usize> = order[..drawn].to_vec();
    held.sort_unstable();
    let mut is_held = vec![false; ds.len()];
    for &i in &held {
        is_held[i] = true;
    }
    let train_idx: Vec<usize> = (0..ds.len()).filter(|&i| !is_held[i]).collect();

    let mut holdout = if forced.is_empty() {
        ds.clone_header()
    } else {
        let mut h = generate(forced, &ds.oracle()?, ds.strategy, ds.seed)?;
        h.seed = ds.seed;
        h
    };
    holdout.extend(&ds.subset(&held))?;
    Ok((ds.subset(&train_idx), holdout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gait::{ParamGroup, ParamSpec};

    fn cube3() -> ConditionSpace {
        ConditionSpace::new(vec![
            ParamSpec::new("scale", ParamGroup::Skeleton, 0.8, 1.2, 1.0),
            ParamSpec::new("m.weakness", ParamGroup::Muscle, 0.5, 1.5, 1.0),
            ParamSpec::new("m.contracture", ParamGroup::Muscle, 0.5, 1.5, 1.0),
            ParamSpec::new("stride", ParamGroup::Gait, 0.7, 1.3, 1.0),
            ParamSpec::new("cadence", ParamGroup::Gait, 0.7, 1.3, 1.0),
        ])
        .unwrap()
    }

    #[test]
    fn empty_requests_give_empty_samples() {
        assert!(sample_uniform(0, &cube3(), 1).is_empty());
        assert!(sample_grid(0, &cube3(), 1).is_empty());
    }

    #[test]
    fn uniform_samples_in_range_with_midpoint_means() {
        let s = cube3();
        let n = 100_000;
        let xs = sample_uniform(n, &s, 5);
        let mut sums = [0.0; 5];
        for x in &xs {
            let mut v = x.anatomy.to_vec();
            v.extend(x.gait.to_array());
            for ((sum, val), p) in sums.iter_mut().zip(&v).zip(s.params()) {
                assert!(p.contains(*val));
                *sum += val;
            }
        }
        for (sum, p) in sums.iter().zip(s.params()) {
            let sd = p.width() / 12f64.sqrt();
            let mid = 0.5 * (p.min + p.max);
            assert!(
                (sum / n as f64 - mid).abs() < 3.0 * sd / (n as f64).sqrt(),
                "{}",
                p.name
            );
        }
    }

    #[test]
    fn grid_samples_are_corners() {
        let s = cube3();
        let xs = sample_grid(200, &s, 7);
        let mut corners = std::collections::HashSet::new();
        for x in &xs {
            let v = x.anatomy.to_vec();
            for (val, p) in v.iter().zip(s.anatomy()) {
                assert!(*val == p.min || *val == p.max);
            }
            corners.insert(v.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert!(s.check_gait(&x.gait).is_ok());
        }
        assert_eq!(corners.len(), 8);

        let n = 20_000;
        let xs = sample_grid(n, &s, 8);
        for (j, p) in s.anatomy().iter().enumerate() {
            let at_min = xs.iter().filter(|x| x.anatomy.to_vec()[j] == p.min).count() as f64;
            assert!((at_min / n as f64 - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
        }
    }

    #[test]
    fn f32_rounding_stays_inside_ranges() {
        for (v, lo, hi) in [
            (1.2, 0.8, 1.2),
            (0.8, 0.8, 1.2),
            (1.3, 0.7, 1.3),
            (0.7, 0.7, 1.3),
        ] {
            let x = f32_within(v, lo, hi) as f64;
            assert!(x >= lo && x <= hi && (x - v).abs() < 1e-6);
        }
    }

    #[test]
    fn reference_condition_reproduces_the_base_trajectory() {
        let o = Oracle::desk();
        let s = o.space();
        let c = ConditionSample {
            anatomy: s.reference_anatomy(),
            gait: s.reference_gait(),
        };
        let ds = generate(std::slice::from_ref(&c), &o, SamplingStrategy::Uniform, 0).unwrap();
        assert_eq!(ds.len(), 1);
        let base = o.simulate(&c.anatomy, &c.gait).unwrap();
        let stored: Vec<f32> = base.as_slice().iter().map(|&v| v as f32).collect();
        assert_eq!(ds.gait_row(0), &stored[..]);
        assert_eq!(ds.anatomy(0), c.anatomy);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let o = Oracle::desk();
        let conds = sample_uniform(300, o.space(), 1);
        let ds = generate(&conds, &o, SamplingStrategy::Uniform, 1).unwrap();
        let (train, hold) = split_holdout(&ds, 0, 3).unwrap();
        assert_eq!(train, ds);
        assert!(hold.is_empty());

        let (train, hold) = split_holdout(&ds, 51, 3).unwrap();
        assert_eq!((train.len(), hold.len()), (249, 51));
        let rows = |d: &Dataset| {
            (0..d.len())
                .map(|i| d.condition_row(i).to_vec())
                .collect::<Vec<_>>()
        };
        let tr = rows(&train);
        assert!(rows(&hold).iter().all(|r| !tr.contains(r)));
        assert_eq!(split_holdout(&ds, 51, 3).unwrap(), (train, hold));

        let forced: Vec<ConditionSample> = pathology_conditions(&o)
            .into_iter()
            .map(|(_, c)| c)
            .collect();
        let (train, hold) = split_holdout_with(&ds, 51, 3, &forced).unwrap();
        assert_eq!((train.len(), hold.len()), (256, 51));
        assert_eq!(hold.anatomy(5), o.preset("trendelenburg").unwrap());
    }

    #[test]
    fn round_trip_and_schema_errors() {
        let o = Oracle::desk();
        let ds = generate(
            &sample_grid(20, o.space(), 2),
            &o,
            SamplingStrategy::Grid,
            2,
        )
        .unwrap();
        let bytes = ds.to_bytes();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_bytes(), bytes);

        let empty = Dataset::empty(&o, SamplingStrategy::Uniform, 0);
        assert_eq!(Dataset::from_bytes(&empty.to_bytes()).unwrap(), empty);

        assert!(matches!(
            Dataset::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Corrupt { .. })
        ));
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(
            Dataset::from_bytes(&wrong_version),
            Err(Error::Version { found: 9, .. })
        ));
        assert!(matches!(
            ds.check_schema(ds.schema_hash() ^ 1),
            Err(Error::SchemaMismatch { .. })
        ));
        let mut tampered = bytes;
        tampered[8] ^= 0xff;
        assert!(matches!(
            Dataset::from_bytes(&tampered),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn parallel_generation_is_order_deterministic() {
        let o = Oracle::desk();
        let conds = sample_uniform(64, o.space(), 4);
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let wide = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = serial.install(|| generate(&conds, &o, SamplingStrategy::Uniform, 4).unwrap());
        let b = wide.install(|| generate(&conds, &o, SamplingStrategy::Uniform, 4).unwrap());
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}
