use std::path::Path;

use proptest::prelude::*;
use stzoo::checkpoint::Checkpoint;
use stzoo::config::{self, ExperimentConfig};
use stzoo::weights;
use stzoo::StzooError;
use stzoo_core::graph::WeightMap;
use stzoo_core::{assemble, ArchSpec, Backbone, Family, Init, Tensor};

fn weight_map() -> impl Strategy<Value = WeightMap<f32>> {
    let entry = ("[a-z][a-z0-9._]{0,12}", prop::collection::vec(1usize..4, 0..4)).prop_flat_map(|(name, shape)| {
        let n: usize = shape.iter().product();
        (Just(name), Just(shape), prop::collection::vec(-1e6f32..1e6, n))
    });
    prop::collection::vec(entry, 0..6).prop_map(|entries| {
        WeightMap(entries.into_iter().map(|(name, shape, data)| (name, Tensor::from_vec(&shape, data).unwrap())).collect())
    })
}

proptest! {
    #[test]
    fn archive_roundtrip(map in weight_map()) {
        let bytes = weights::encode(&map);
        let (back, used) = weights::decode(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, map);
    }

    #[test]
    fn truncated_archives_are_rejected(map in weight_map(), cut in 1usize..64) {
        let bytes = weights::encode(&map);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(weights::decode(&bytes[..keep]).is_err());
    }
}

#[test]
fn trailing_bytes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.stzw");
    let mut bytes = weights::encode(&WeightMap::new());
    bytes.push(0);
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(weights::load(&path), Err(StzooError::Format { .. })));
}

#[test]
fn explicit_pretrained_path_wins() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.stzw");
    let graph = stzoo_core::backbones::build_backbone::<f32>(Backbone::TinyNet, 3, stzoo_core::backbones::BackboneInit::Random { seed: 1 }).unwrap();
    weights::save(&graph.weights, &path).unwrap();
    assert_eq!(weights::load_pretrained(Backbone::TinyNet, Some(&path)).unwrap(), graph.weights);
    assert_eq!(weights::pretrained_file(Backbone::ResNet50), "resnet50.stzw");
}

fn tam() -> stzoo_core::AssembledModel<f32> {
    assemble(&ArchSpec::new(Family::Tam, Backbone::TinyNet, 8, 3), Init::Scratch { seed: 2 }).unwrap()
}

#[test]
fn checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = tam();
    Checkpoint::of(&model).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.arch, model.arch);
    let restored = back.into_model(Some(&model.arch), false, &[]).unwrap();
    assert_eq!(restored.params.to_weight_map(), model.params.to_weight_map());
}

#[test]
fn spec_mismatch_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::of(&tam()).save(&path).unwrap();
    let other = ArchSpec::new(Family::Tam, Backbone::TinyNet, 8, 5);
    let err = Checkpoint::load(&path).unwrap().into_model(Some(&other), false, &[]).unwrap_err();
    assert!(matches!(err, StzooError::SpecMismatch { .. }), "{err}");
    // the head shape differs, so forcing needs the head on the allowlist
    assert!(Checkpoint::load(&path).unwrap().into_model(Some(&other), true, &[]).is_err());
    let allow = vec!["fc.weight".to_string(), "fc.bias".to_string()];
    let forced = Checkpoint::load(&path).unwrap().into_model(Some(&other), true, &allow).unwrap();
    assert_eq!(forced.arch.num_classes, 5);
}

#[test]
fn checkpoint_with_bad_magic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    std::fs::write(&path, b"NOPE0000").unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn config_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    let mut cfg = ExperimentConfig::default();
    cfg.train.progressive = vec![8, 16];
    cfg.data.eval_manifest = Some("val.csv".into());
    config::save_config(&cfg, &path).unwrap();
    assert_eq!(config::load_config(&path).unwrap(), cfg);
    cfg.validate().unwrap();
}

#[test]
fn config_rejects_unknown_fields() {
    let text = toml::to_string(&ExperimentConfig::default()).unwrap().replace("frames =", "framez =");
    let err = config::parse_config(&text, Path::new("x.toml")).unwrap_err();
    assert!(err.to_string().contains("framez"), "{err}");
}

#[test]
fn empty_config_is_an_error() {
    assert!(matches!(config::parse_config("", Path::new("e.toml")), Err(StzooError::Config { .. })));
}

#[test]
fn broken_chain_in_config() {
    let mut cfg = ExperimentConfig::default();
    cfg.train.progressive = vec![16, 32];
    assert!(cfg.validate().is_err());
}
