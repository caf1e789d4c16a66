//! Cross-module properties on small random corpora.

use std::collections::BTreeMap;

use annoqa_core::agreement::{alpha_from_coincidence, AgreementConfig, RatingTable};
use annoqa_core::curation::{build_gt_mixed, build_gt_single, drop_annotator};
use annoqa_core::datamodel::{AnnotationSet, Annotator, Assignment, BBox, ImageRef, LabeledBox, Tier};
use annoqa_core::detect_eval::{evaluate, iou, EvalConfig};
use annoqa_core::quality::vitality_all;
use proptest::prelude::*;

const LABELS: [&str; 2] = ["person", "vehicle"];

fn arb_box(w: u32, h: u32) -> impl Strategy<Value = BBox> {
    (1..=w, 1..=h).prop_flat_map(move |(bw, bh)| (0..=w - bw, 0..=h - bh).prop_map(move |(x, y)| BBox::new(x, y, bw, bh)))
}

/// 1-3 images of 16x12, 3-4 annotators who each process every image.
fn arb_corpus() -> impl Strategy<Value = AnnotationSet> {
    (1usize..=3, 3usize..=4).prop_flat_map(|(images, raters)| {
        let cell = (0..images, 0..raters, 0..2usize, arb_box(16, 12));
        prop::collection::vec(cell, 0..(images * raters * 3)).prop_map(move |raw| {
            let image_ids: Vec<String> = (0..images).map(|i| format!("im{i}")).collect();
            let annotators: Vec<String> = (0..raters).map(|r| format!("a{r}")).collect();
            AnnotationSet {
                images: image_ids.iter().map(|id| ImageRef::new(id.clone(), 16, 12)).collect(),
                annotators: annotators.iter().map(|a| Annotator::new(a.clone(), Tier::Experienced)).collect(),
                labels: LABELS.iter().map(|s| s.to_string()).collect(),
                boxes: raw
                    .into_iter()
                    .map(|(i, r, l, b)| LabeledBox::new(image_ids[i].clone(), annotators[r].clone(), LABELS[l], b))
                    .collect(),
                assignments: image_ids
                    .iter()
                    .flat_map(|i| annotators.iter().map(move |a| Assignment::new(i.clone(), a.clone())))
                    .collect(),
            }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha_never_exceeds_one(cols in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, 0u32..3), 30), 2..6)) {
        let table = RatingTable::from_columns(&cols, 3).unwrap();
        if let Ok(r) = table.coincidence().and_then(|cm| alpha_from_coincidence(&cm)) {
            prop_assert!(r.alpha <= 1.0 + 1e-12);
            if !r.degenerate {
                prop_assert_eq!(r.alpha == 1.0, r.observed == 0.0);
            }
        }
    }

    #[test]
    fn vitality_identities(set in arb_corpus(), seed: u64) {
        let cfg = AgreementConfig::with_seed(seed);
        let reports = vitality_all(&set, &cfg).unwrap();
        prop_assert_eq!(&reports, &vitality_all(&set, &cfg).unwrap());

        let mut per_image: BTreeMap<&str, Vec<(&str, f64, f64)>> = BTreeMap::new();
        for r in &reports {
            for p in &r.per_image {
                prop_assert_eq!(p.v, p.k_full - p.k_loo);
                per_image.entry(&p.image_id).or_default().push((&r.annotator_id, p.v, p.k_loo));
            }
        }
        for rows in per_image.values() {
            let min_v = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
            let max_loo = rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
            for r in rows.iter().filter(|r| r.2 == max_loo) {
                prop_assert_eq!(r.1, min_v);
            }
            if rows.iter().all(|r| r.2 == rows[0].2) {
                prop_assert!(rows.iter().all(|r| r.1 == rows[0].1));
            }
        }
    }

    #[test]
    fn ground_truth_provenance(set in arb_corpus(), seed: u64) {
        let top: Vec<String> = vec!["a0".into(), "a1".into()];
        type Build = fn(&AnnotationSet, &[String], &[String], u64) -> annoqa_core::Result<annoqa_core::curation::GroundTruthSet>;
        for build in [build_gt_mixed as Build, build_gt_single] {
            let gt = build(&set, &top, &[], seed).unwrap();
            prop_assert_eq!(gt.provenance.len(), set.images.len());
            prop_assert!(gt.provenance.values().all(|a| top.contains(a)));
            let expected: Vec<&LabeledBox> = set
                .boxes
                .iter()
                .filter(|b| gt.provenance.get(&b.image_id) == Some(&b.annotator_id))
                .collect();
            prop_assert_eq!(gt.base.boxes.iter().collect::<Vec<_>>(), expected);
            prop_assert_eq!(&gt, &build(&set, &top, &[], seed).unwrap());
        }
        let dropped = drop_annotator(&set, "a2").unwrap();
        prop_assert!(dropped.boxes.iter().all(|b| b.annotator_id != "a2"));
    }

    #[test]
    fn iou_symmetry_and_identity(a in arb_box(40, 40), b in arb_box(40, 40)) {
        prop_assert_eq!(iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(iou(&a, &a), 1.0);
        prop_assert!((0.0..=1.0).contains(&iou(&a, &b)));
    }

    #[test]
    fn recall_grows_with_cap(set in arb_corpus(), scores in prop::collection::vec(0.0f64..1.0, 36), k in 1usize..6) {
        let gt = AnnotationSet {
            boxes: set.boxes.iter().filter(|b| b.annotator_id == "a0").cloned().collect(),
            ..set.clone()
        };
        let preds = AnnotationSet {
            boxes: set
                .boxes
                .iter()
                .filter(|b| b.annotator_id != "a0")
                .zip(scores.iter().cycle())
                .map(|(b, s)| b.clone().with_score(*s))
                .collect(),
            ..set.clone()
        };
        let run = |cap| evaluate(&preds, &gt, &EvalConfig { cap: Some(cap), ..Default::default() }).unwrap().overall;
        let (small, large) = (run(k), run(k + 1));
        prop_assert!(large.tp >= small.tp);
        prop_assert!(large.recall >= small.recall);
    }
}
