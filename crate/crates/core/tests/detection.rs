use dctdet_core::detection::{generate_priors, iou, nms, postprocess, BBox, PostprocessConfig, PriorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Suppression-list formulation: repeatedly take the best remaining box and
/// strike out everything overlapping it.
fn brute_force_nms(boxes: &[BBox], scores: &[f64], thr: f64, top_k: usize) -> Vec<usize> {
    let mut alive = vec![true; boxes.len()];
    let mut keep = Vec::new();
    while keep.len() < top_k {
        let mut best: Option<usize> = None;
        for i in 0..boxes.len() {
            if alive[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        keep.push(b);
        alive[b] = false;
        for j in 0..boxes.len() {
            if alive[j] && iou(&boxes[b], &boxes[j]) > thr {
                alive[j] = false;
            }
        }
    }
    keep
}

/// Boxes on a coarse grid with quantised scores, so exact IoU ties and score
/// ties both occur.
fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<BBox>, Vec<f64>) {
    let n = rng.random_range(0..=500);
    let boxes = (0..n)
        .map(|_| {
            let x = rng.random_range(0..20) as f64;
            let y = rng.random_range(0..20) as f64;
            let w = rng.random_range(1..8) as f64;
            let h = rng.random_range(1..8) as f64;
            BBox::new(x, y, x + w, y + h)
        })
        .collect();
    let scores = (0..n).map(|_| rng.random_range(0..50) as f64 / 50.0).collect();
    (boxes, scores)
}

#[test]
fn nms_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let (boxes, scores) = random_instance(&mut rng);
        let thr = [0.3, 0.45, 0.5, 0.7][case % 4];
        let top_k = if case % 3 == 0 { 20 } else { 500 };
        assert_eq!(
            nms(&boxes, &scores, thr, top_k),
            brute_force_nms(&boxes, &scores, thr, top_k),
            "case {case}"
        );
    }
}

#[test]
fn nms_depends_only_on_score_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let (boxes, scores) = random_instance(&mut rng);
        let a = rng.random_range(0.1..5.0);
        let b = rng.random_range(-3.0..3.0);
        let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp() + s.powi(3)).collect();
        assert_eq!(nms(&boxes, &scores, 0.45, 200), nms(&boxes, &mapped, 0.45, 200));
    }
}

#[test]
fn nms_output_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (boxes, scores) = random_instance(&mut rng);
        let keep = nms(&boxes, &scores, 0.5, 50);
        assert!(keep.len() <= boxes.len().min(50));
        for (i, &a) in keep.iter().enumerate() {
            for &b in &keep[i + 1..] {
                assert!(iou(&boxes[a], &boxes[b]) <= 0.5);
            }
        }
    }
}

#[test]
fn postprocess_is_thread_count_independent() {
    let heads = [(38, 38, 4), (19, 19, 6), (10, 10, 6), (5, 5, 6), (3, 3, 4), (1, 1, 4)];
    let priors = generate_priors(&heads, &PriorConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let loc: Vec<f32> = (0..priors.len() * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let conf: Vec<f32> = (0..priors.len() * 21).map(|_| rng.random_range(-4.0..4.0)).collect();
    let cfg = PostprocessConfig::default();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| postprocess(&loc, &conf, &priors, 21, &cfg).unwrap())
    };
    let one = run(1);
    assert!(!one.detections.is_empty());
    assert!(one.detections.len() <= 200);
    assert_eq!(one, run(4));
    assert_eq!(one, run(7));
}
