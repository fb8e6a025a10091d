use selnet::checkpoint::{decode, encode, load, save, Checkpoint, Preprocessing, FORMAT_VERSION};
use selnet::Error;
use selnet_core::calibration::calibrate;
use selnet_core::data::{synth_classification, FeatureStats, SynthSpec};
use selnet_core::loss::{LossConfig, LossKind};
use selnet_core::optim::{train, OptimizerConfig, TrainConfig};
use selnet_core::{ArchitectureConfig, SelectiveNet};

fn trained() -> (Checkpoint, selnet_core::Tensor) {
    let data = synth_classification(&SynthSpec::new(2, 300, 3, 4, 0.2)).unwrap();
    let mut m = SelectiveNet::build(&ArchitectureConfig::classification(4, 3, &[8, 8]), 2).unwrap();
    let cfg = TrainConfig {
        optimizer: OptimizerConfig::adam(1e-2, 1e-4),
        epochs: 3,
        batch_size: 64,
        seed: 2,
        loss: LossConfig::new(0.7, LossKind::CrossEntropy),
        shuffle: true,
    };
    train(&mut m, &data.features, data.labels(), &cfg).unwrap();
    let cal = calibrate(&m, &data.features, 0.7, 0.05).unwrap();
    m.set_calibrated_threshold(Some(cal.threshold));
    let (stats, _) = FeatureStats::fit(&data.features).unwrap();
    let ck = Checkpoint {
        model: m,
        calibration: Some(cal),
        preprocessing: Preprocessing {
            features: Some(stats),
            target: None,
        },
        run: None,
    };
    (ck, data.features)
}

#[test]
fn round_trip_is_bit_exact() {
    let (ck, x) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save(&path, &ck).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back, ck);
    let (a, b) = (ck.model.infer(&x).unwrap(), back.model.infer(&x).unwrap());
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a.f.data()), bits(b.f.data()));
    assert_eq!(bits(a.g.as_deref().unwrap()), bits(b.g.as_deref().unwrap()));
    assert_eq!(encode(&back).unwrap(), encode(&ck).unwrap());
}

#[test]
fn baseline_round_trip() {
    let m = SelectiveNet::baseline(&ArchitectureConfig::regression(3), 9).unwrap();
    let ck = Checkpoint::new(m);
    assert_eq!(decode(&encode(&ck).unwrap()).unwrap(), ck);
}

#[test]
fn every_flipped_byte_is_detected() {
    let (ck, _) = trained();
    let bytes = encode(&ck).unwrap();
    for i in (12..bytes.len()).step_by(97) {
        let mut b = bytes.clone();
        b[i] ^= 0x10;
        assert!(matches!(decode(&b), Err(Error::Integrity(_))), "byte {i}");
    }
    assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Integrity(_))));
    assert!(matches!(decode(b"not a checkpoint"), Err(Error::Integrity(_))));
}

#[test]
fn future_version_is_refused() {
    let (ck, _) = trained();
    let mut b = encode(&ck).unwrap();
    b[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    match decode(&b) {
        Err(Error::Version { found, expected }) => assert_eq!((found, expected), (FORMAT_VERSION + 1, FORMAT_VERSION)),
        other => panic!("{other:?}"),
    }
}

mod properties {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn stored_numbers_survive_bit_exactly(
            seed in any::<u64>(),
            bits in prop::collection::vec(any::<u64>(), 8),
            coverage in prop::option::of(0.01..1.0f64),
        ) {
            let mut m = SelectiveNet::build(&ArchitectureConfig::regression(2), seed).unwrap();
            for (t, b) in m.parameters_mut().tensors_mut().iter_mut().zip(&bits) {
                let v = f64::from_bits(*b);
                t.data_mut()[0] = if v.is_finite() { v } else { -0.0 };
            }
            m.set_trained_coverage(coverage);
            let ck = Checkpoint::new(m);
            let back = decode(&encode(&ck).unwrap()).unwrap();
            for (a, b) in ck.model.parameters().tensors().iter().zip(back.model.parameters().tensors()) {
                let ab: Vec<u64> = a.data().iter().map(|x| x.to_bits()).collect();
                let bb: Vec<u64> = b.data().iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
            prop_assert_eq!(back.model.trained_coverage(), coverage);
        }
    }
}
