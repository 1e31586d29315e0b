//! Frozen outputs of the tiny model. A change here means the numerics moved;
//! regenerate only when that is intended.

use diarize_core::gradcore::Tensor;
use diarize_core::model::{AttentionKind, DiarizationModel, ModelConfig};

const FULL: [f64; 24] = [
    0.6550698931755535, 0.6164729719217764, 0.4751379847081149, 0.5109854490544685,
    0.5537780511245128, 0.45982007396050745, 0.5501604951562639, 0.5380286577085245,
    0.4682790085283056, 0.47604928799962404, 0.5636931907246129, 0.5286390709512652,
    0.2630436038496004, 0.4466145864563356, 0.6661109613113524, 0.3858042574816305,
    0.49246180286918595, 0.6834187964714531, 0.28698539978122234, 0.5670625930879135,
    0.6389631037865918, 0.3030989923846118, 0.6009373608111224, 0.6456247704692339,
];

const LINEAR: [f64; 24] = [
    0.6553491643813961, 0.61378287770454, 0.4774925069775822, 0.5010833959730671,
    0.5522112268230037, 0.4637368870708331, 0.540465654574285, 0.5386709102985019,
    0.47078643513002505, 0.4677884737605351, 0.5666325477051085, 0.530894437053499,
    0.28036927160109537, 0.4571080444534378, 0.6662069343454968, 0.403281456476489,
    0.5014082054792006, 0.6789439475221265, 0.2976819291875936, 0.5684530972457512,
    0.6401378036641936, 0.3135648823382888, 0.5979861055364469, 0.6451747759301044,
];

fn predict(attention: AttentionKind) -> Vec<f64> {
    let cfg = ModelConfig {
        attention,
        ..ModelConfig::tiny()
    };
    let model = DiarizationModel::new(cfg.clone(), 2024).unwrap();
    let n = 12 * cfg.feature_dim;
    let x = Tensor::matrix(12, cfg.feature_dim, (0..n).map(|i| (i * 37 % 23) as f64 / 11.0 - 1.0).collect())
        .unwrap();
    model.predict(&x).unwrap().data().to_vec()
}

fn assert_close(got: &[f64], want: &[f64]) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() < 1e-12, "entry {i}: {g} vs {w}");
    }
}

#[test]
fn tiny_model_full_attention() {
    assert_close(&predict(AttentionKind::Full), &FULL);
}

#[test]
fn tiny_model_linear_attention() {
    assert_close(&predict(AttentionKind::Linear), &LINEAR);
}
