use proptest::prelude::*;
use repsim::io::{
    matrix_from_csv, matrix_to_csv, read_act, read_capture_dir, read_checkpoint, write_act, write_capture,
    write_checkpoint, ActivationFile, ExperimentConfig, ModelCheckpoint,
};
use repsim::vae::{capture_activations, Architecture, ObjectiveSpec, VaeModel, LAYER_NAMES};
use repsim::Matrix;

fn finite_matrix() -> impl Strategy<Value = Matrix> {
    (0usize..6, 0usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(
            prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL,
            r * c,
        )
        .prop_map(move |d| Matrix::new(r, c, d).unwrap())
    })
}

proptest! {
    #[test]
    fn act_round_trip(m in finite_matrix(), layer in "[a-z_]{0,12}", id in "\\PC{0,10}", epoch: u32) {
        let f = ActivationFile { layer_name: layer, model_id: id, epoch, matrix: m };
        let bytes = write_act(&f).unwrap();
        prop_assert_eq!(read_act(bytes.as_slice()).unwrap(), f);
    }

    #[test]
    fn csv_round_trip(m in finite_matrix()) {
        prop_assume!(m.cols() > 0);
        prop_assert_eq!(matrix_from_csv(&matrix_to_csv(&m)).unwrap(), m);
    }

    #[test]
    fn checkpoint_round_trip(seed: u64, step: u64, d in 1usize..4, beta in 1.0f64..100.0) {
        let ckpt = ModelCheckpoint {
            model: VaeModel::new(Architecture::new(5, [4, 3], d), seed).unwrap(),
            objective: ObjectiveSpec::beta(beta),
            step,
            seed,
        };
        let bytes = write_checkpoint(&ckpt).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        prop_assert_eq!(write_checkpoint(&back).unwrap(), bytes);
        prop_assert_eq!(back, ckpt);
    }
}

#[test]
fn capture_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = VaeModel::new(Architecture::new(4, [3, 3], 2), 1).unwrap();
    let x = Matrix::from_fn(5, 4, |i, j| ((i + j) % 3) as f64 / 2.0);
    let mut cap = capture_activations(&model, &x, 2).unwrap();
    cap.model_id = "m1".into();
    cap.epoch = 40;
    let written = write_capture(dir.path(), "m1_step40", &cap).unwrap();
    assert_eq!(written.len(), LAYER_NAMES.len() + 1);
    assert_eq!(read_capture_dir(dir.path(), "m1_step40", &LAYER_NAMES).unwrap(), cap);
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.cfg");
    let mut cfg = ExperimentConfig::default();
    cfg.set("objective.c_max", "1").unwrap();
    cfg.set("train.pixel_reduction", "mean").unwrap();
    std::fs::write(&path, cfg.render()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
}
