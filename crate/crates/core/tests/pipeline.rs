use gaitnet_core::backward::ExpertBundle;
use gaitnet_core::evaluation::Status;
use gaitnet_core::pipeline::{self, Observation, PipelineConfig};
use gaitnet_core::Error;
use proptest::prelude::*;

const SMALL: &str = r#"
[data]
n_tuples = 150
n_holdout = 10
[fgn]
hidden = [24, 24]
epochs = 2
pairs_per_epoch = 4000
[bgn]
encoder_hidden = [24]
decoder_hidden = [24]
latent = 4
epochs = 1
examples_per_epoch = 96
[eval]
samples = 30
gradient_suite = false
embed = ["crouch"]
"#;

fn trained() -> (PipelineConfig, ExpertBundle, gaitnet_core::dataset::Dataset) {
    let cfg = PipelineConfig::from_toml(SMALL).unwrap();
    let (train, holdout) = pipeline::generate_data(&cfg).unwrap();
    let (fgn, _) = pipeline::train_forward(&cfg, &train).unwrap();
    let (bundle, reports) = pipeline::train_backward(&cfg, &train, &fgn).unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(bundle.forward, fgn);
    (cfg, bundle, holdout)
}

#[test]
fn small_pipeline_end_to_end() {
    let (cfg, bundle, holdout) = trained();
    let back = ExpertBundle::from_bytes(&bundle.to_bytes().unwrap()).unwrap();
    assert_eq!(back, bundle);

    let oracle = bundle.oracle().unwrap();
    let obs = Observation::from_tuple(&holdout, 0);
    let a = pipeline::predict(&bundle, &obs, 40, 9).unwrap();
    let b = pipeline::predict(&bundle, &obs, 40, 9).unwrap();
    assert_eq!(a, b);
    assert!(a.expert < 3);
    assert_eq!(a.samples.len(), 40);
    for s in a.samples.iter().chain(std::iter::once(&a.mean_muscle)) {
        for (v, spec) in s.iter().zip(oracle.space().muscle()) {
            assert!((spec.min..=spec.max).contains(v), "{v} outside {}", spec.name);
        }
    }
    assert_eq!(a.resim_error_deg.len(), oracle.joints().len());

    let mut foreign = obs.clone();
    foreign.schema_hash ^= 1;
    assert!(matches!(
        pipeline::predict(&bundle, &foreign, 5, 0),
        Err(Error::SchemaMismatch { .. })
    ));

    let outcome = pipeline::evaluate(&cfg, &bundle, &holdout, Some(&bundle.forward), false).unwrap();
    let ids: Vec<u32> = outcome.criteria.iter().map(|c| c.id).collect();
    assert_eq!(ids.len(), 10);
    for id in 1..=10 {
        assert!(ids.contains(&id));
    }
    let frozen = outcome.criteria.iter().find(|c| c.id == 8).unwrap();
    assert_eq!(frozen.status, Status::Pass);
    assert_eq!(outcome.forward.cases.len(), holdout.len());
    assert_eq!(outcome.coverage.cases.len(), holdout.len());

    let dir = tempfile::tempdir().unwrap();
    outcome.write(dir.path()).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert_eq!(summary, outcome.summary());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn damaged_observations_are_rejected_not_misread(cut in 0usize..200, flip in 0usize..24) {
        let oracle = gaitnet_core::oracle::Oracle::desk();
        let anatomy = oracle.preset("equinus").unwrap();
        let obs = Observation::simulated(&oracle, &anatomy, oracle.space().reference_gait()).unwrap();
        let bytes = obs.to_bytes();
        let truncated = &bytes[..bytes.len() - 1 - cut];
        let is_corrupt = matches!(Observation::from_bytes(truncated), Err(Error::Corrupt { .. }));
        prop_assert!(is_corrupt);

        // Damage in the header is caught too; only the schema hash bytes decode cleanly.
        let mut header = bytes.clone();
        header[flip] ^= 0x80;
        match Observation::from_bytes(&header) {
            Ok(o) => {
                prop_assert!((8..16).contains(&flip));
                prop_assert_ne!(o.schema_hash, obs.schema_hash);
            }
            Err(e) => {
                let corrupt = matches!(e, Error::Corrupt { .. } | Error::Version { .. });
                prop_assert!(corrupt, "{e:?}");
            }
        }
    }
}
