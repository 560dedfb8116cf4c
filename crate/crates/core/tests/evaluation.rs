use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use dctdet_core::evaluation::{
    average_precision, evaluate_map, read_detections, read_ground_truth, ApMode, DetectionRecord, EvalMode,
    GroundTruth, Label,
};
use proptest::prelude::*;

fn fixture() -> (Vec<GroundTruth>, Vec<DetectionRecord>, serde_json::Value) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../testdata/eval");
    let open = |n: &str| BufReader::new(File::open(dir.join(n)).unwrap());
    let gts = read_ground_truth(open("gt.jsonl")).unwrap();
    let dets = read_detections(open("dets.jsonl")).unwrap();
    let expected = serde_json::from_reader(open("expected.json")).unwrap();
    (gts, dets, expected)
}

#[test]
fn fixture_matches_oracle() {
    let (gts, dets, expected) = fixture();
    assert_eq!(gts.len(), 12);
    for (mode, key) in [
        (EvalMode::Voc11, "voc11"),
        (EvalMode::Area, "area"),
        (EvalMode::Coco, "coco"),
    ] {
        let report = evaluate_map(&dets, &gts, mode).unwrap();
        let want = &expected[key];
        assert!(
            (report.map - want["map"].as_f64().unwrap()).abs() < 1e-9,
            "{key} mAP {}",
            report.map
        );
        assert_eq!(report.classes.len(), 3);
        for c in &report.classes {
            let w = want["per_class"][&c.class].as_f64().unwrap();
            assert!((c.ap - w).abs() < 1e-9, "{key} {}: {} vs {w}", c.class, c.ap);
        }
    }
}

#[test]
fn ground_truth_as_detections_is_perfect() {
    let (gts, _, _) = fixture();
    let dets: Vec<DetectionRecord> = gts
        .iter()
        .map(|g| DetectionRecord {
            image: g.image.clone(),
            class: g.class.clone(),
            score: 1.0,
            bbox: g.bbox,
        })
        .collect();
    for mode in [EvalMode::Voc11, EvalMode::Area, EvalMode::Coco] {
        assert_eq!(evaluate_map(&dets, &gts, mode).unwrap().map, 1.0);
    }
}

#[test]
fn score_rescaling_does_not_change_results() {
    let (gts, dets, _) = fixture();
    let squashed: Vec<DetectionRecord> = dets
        .iter()
        .map(|d| DetectionRecord {
            score: (d.score * 7.0 - 2.0).tanh(),
            ..d.clone()
        })
        .collect();
    for mode in [EvalMode::Voc11, EvalMode::Area, EvalMode::Coco] {
        assert_eq!(
            evaluate_map(&dets, &gts, mode).unwrap(),
            evaluate_map(&squashed, &gts, mode).unwrap()
        );
    }
}

fn labels() -> impl Strategy<Value = Vec<Label>> {
    prop::collection::vec(
        prop_oneof![Just(Label::Tp), Just(Label::Fp), Just(Label::Ignored)],
        0..40,
    )
}

proptest! {
    #[test]
    fn ap_is_a_probability(l in labels(), extra in 0usize..5) {
        let tps = l.iter().filter(|x| **x == Label::Tp).count();
        for mode in [ApMode::Voc11, ApMode::Area] {
            let ap = average_precision(&l, tps + extra, mode).ap;
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }

    #[test]
    fn trailing_false_positive_never_helps(l in labels(), extra in 0usize..5) {
        let num_gt = l.iter().filter(|x| **x == Label::Tp).count() + extra;
        let mut longer = l.clone();
        longer.push(Label::Fp);
        for mode in [ApMode::Voc11, ApMode::Area] {
            prop_assert!(average_precision(&longer, num_gt, mode).ap <= average_precision(&l, num_gt, mode).ap);
        }
    }
}
