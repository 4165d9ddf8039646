use repsim::heatmap::{average_heatmap, SimilarityHeatmap};
use repsim::metrics::{linear_cka, procrustes_similarity, MetricKind};
use repsim::rng::SplitMix64;
use repsim::vae::VaeModel;
use repsim::vae::{capture_activations, ActivationCapture, Architecture, LAYER_NAMES};
use repsim::{Error, Matrix};

fn eval_set() -> Matrix {
    let mut rng = SplitMix64::new(5);
    Matrix::from_fn(40, 9, |_, _| rng.next_f64())
}

fn captures(seeds: &[u64]) -> Vec<ActivationCapture> {
    let x = eval_set();
    seeds
        .iter()
        .map(|&s| {
            let model = VaeModel::new(Architecture::new(9, [6, 5], 2), s).unwrap();
            capture_activations(&model, &x, s).unwrap()
        })
        .collect()
}

fn assert_close(a: &SimilarityHeatmap, b: &SimilarityHeatmap, tol: f64) {
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x.unwrap() - y.unwrap()).abs() <= tol, "{x:?} vs {y:?}");
    }
}

#[test]
fn self_comparison_has_unit_diagonal_and_symmetry() {
    let caps = captures(&[1]);
    let h = average_heatmap(&caps, &caps, MetricKind::Cka).unwrap();
    let n = LAYER_NAMES.len();
    assert_eq!(h.row_layers, LAYER_NAMES.to_vec());
    for j in 0..n {
        assert!((h.get(j, j).unwrap() - 1.0).abs() < 1e-12);
        for k in 0..n {
            assert!((h.get(j, k).unwrap() - h.get(k, j).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn single_pair_equals_direct_score() {
    let (a, b) = (captures(&[1]), captures(&[2]));
    for metric in [MetricKind::Cka, MetricKind::Procrustes] {
        let h = average_heatmap(&a, &b, metric).unwrap();
        for (j, (_, x)) in a[0].layers().iter().enumerate() {
            for (k, (_, y)) in b[0].layers().iter().enumerate() {
                let direct = match metric {
                    MetricKind::Cka => linear_cka(x, y).unwrap().value,
                    MetricKind::Procrustes => procrustes_similarity(x, y).unwrap().value,
                };
                assert_eq!(h.get(j, k).unwrap(), direct);
            }
        }
    }
}

#[test]
fn two_by_two_is_hand_average() {
    let (a, b) = (captures(&[1, 2]), captures(&[3, 4]));
    let h = average_heatmap(&a, &b, MetricKind::Cka).unwrap();
    let (j, k) = (1, 6);
    let scores: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
        .iter()
        .map(|&(i, l)| linear_cka(&a[i].layers()[j].1, &b[l].layers()[k].1).unwrap().value)
        .collect();
    let hand = (scores[0] + scores[1] + scores[2] + scores[3]) / 4.0;
    assert!((h.get(j, k).unwrap() - hand).abs() < 1e-12);
    assert_eq!(h.n_seed_pairs, 4);
}

#[test]
fn averaging_is_linear_in_seed_lists() {
    let a = captures(&[1, 2]);
    let (b1, b2) = (captures(&[3]), captures(&[4, 5, 6]));
    let all: Vec<ActivationCapture> = b1.iter().chain(&b2).cloned().collect();
    let h1 = average_heatmap(&a, &b1, MetricKind::Cka).unwrap();
    let h2 = average_heatmap(&a, &b2, MetricKind::Cka).unwrap();
    let h = average_heatmap(&a, &all, MetricKind::Cka).unwrap();
    let mut weighted = h.clone();
    for (w, (x, y)) in weighted.values.iter_mut().zip(h1.values.iter().zip(&h2.values)) {
        *w = Some((x.unwrap() + 3.0 * y.unwrap()) / 4.0);
    }
    assert_close(&h, &weighted, 1e-12);
}

#[test]
fn degenerate_layers_are_masked() {
    let mut caps = captures(&[1]);
    let cap = caps.pop().unwrap();
    let mut layers = cap.layers().to_vec();
    layers[2].1 = Matrix::from_fn(40, 5, |_, _| 0.25);
    let constant = ActivationCapture::from_layers("c", 0, layers, cap.noise().clone()).unwrap();
    let h = average_heatmap(&[constant], &[cap], MetricKind::Cka).unwrap();
    assert!(h.get(2, 0).is_none() && h.get(2, 8).is_none());
    assert!(h.get(0, 0).is_some());
}

#[test]
fn mismatched_layer_lists_are_rejected() {
    let mut caps = captures(&[1, 2]);
    let last = caps.pop().unwrap();
    let renamed: Vec<(String, Matrix)> = last
        .layers()
        .iter()
        .map(|(n, m)| (format!("{n}_x"), m.clone()))
        .collect();
    caps.push(ActivationCapture::from_layers("r", 0, renamed, last.noise().clone()).unwrap());
    assert!(matches!(
        average_heatmap(&caps, &captures(&[3]), MetricKind::Cka),
        Err(Error::InvalidInput(_))
    ));
    assert!(average_heatmap(&[], &captures(&[3]), MetricKind::Cka).is_err());
}
