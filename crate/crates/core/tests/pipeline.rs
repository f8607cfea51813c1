use std::collections::HashSet;

use detfusion::eval::evaluate;
use detfusion::harness::pipeline::{evaluate_detections, infer_scene, naive_union, per_scene};
use detfusion::harness::{run_pipeline, PipelineConfig};
use detfusion::model::{Detection, Provenance, Source};
use detfusion::sim::{decode_logits, generate, SimConfig};

fn small_net() -> PipelineConfig {
    PipelineConfig {
        d_h: 32,
        d_t: 64,
        ..PipelineConfig::default()
    }
}

fn split(cfg: SimConfig, n: usize) -> (detfusion::Dataset, detfusion::Dataset) {
    let train = generate(&SimConfig {
        scenes: n,
        first_scene: 0,
        ..cfg.clone()
    })
    .unwrap();
    let test = generate(&SimConfig {
        scenes: n,
        first_scene: n,
        ..cfg
    })
    .unwrap();
    (train, test)
}

#[test]
fn idle_fusion_path_matches_naive_union() {
    let sim = SimConfig {
        confusable_pairs: vec![],
        ..SimConfig::default()
    };
    let (train, test) = split(sim, 60);
    let out = run_pipeline(&train, &test, &small_net()).unwrap();
    assert_eq!(out.fusion.examples, 0);
    let union = evaluate_detections(&test, &per_scene(&test, naive_union)).unwrap();
    let diff = (out.report.map50_all.unwrap() - union.map50_all.unwrap()).abs();
    assert!(diff <= 0.02, "pipeline vs union mAP50_all differ by {diff}");
}

#[test]
fn confusable_pairs_leave_no_duplicates() {
    let (train, test) = split(SimConfig::default(), 40);
    let out = run_pipeline(&train, &test, &small_net()).unwrap();
    assert!(out.confusion.before_merge > 0);
    assert_eq!(out.confusion.after_merge, 0);
    assert_eq!(out.pseudo_labels.len(), 10);
}

#[test]
fn selected_detections_come_from_valid_regions() {
    let (train, test) = split(SimConfig::default(), 30);
    let cfg = small_net();
    let out = run_pipeline(&train, &test, &cfg).unwrap();
    for scene in &test.scenes {
        let r = infer_scene(scene, &out.fusion.params, &cfg).unwrap();
        for (source, prov, dets) in [
            (Source::Base, Provenance::Base, &r.base),
            (Source::Novel, Provenance::Novel, &r.novel),
        ] {
            let valid: HashSet<usize> = r.segregation.valid(source).iter().copied().collect();
            let allowed: Vec<Detection> = scene
                .output(source)
                .detections
                .iter()
                .filter(|d| valid.contains(&d.proposal_index))
                .map(|d| d.detection())
                .collect();
            assert!(dets
                .iter()
                .all(|d| d.provenance == prov && allowed.contains(d)));
        }
        for d in &r.merged {
            match d.provenance {
                Provenance::Base => assert!(r.base.contains(d)),
                Provenance::Novel => assert!(r.novel.contains(d)),
                Provenance::Fusion => assert!(r.fusion.contains(d)),
            }
        }
    }
}

#[test]
fn argmax_decoder_is_perfect_without_noise() {
    let cfg = SimConfig {
        scenes: 40,
        confusable_pairs: vec![],
        box_jitter: 0.0,
        feature_noise: 0.0,
        ..SimConfig::default()
    };
    let d = generate(&cfg).unwrap();
    let p = &d.header.partition;
    let dets = per_scene(&d, |s| {
        [Source::Base, Source::Novel]
            .into_iter()
            .flat_map(|src| {
                let range = match src {
                    Source::Base => p.base_ids(),
                    Source::Novel => p.novel_ids(),
                };
                s.output(src)
                    .proposals
                    .iter()
                    .filter_map(move |pr| {
                        let (class_id, prob) = decode_logits(&pr.logits, range.clone());
                        (prob >= 0.5).then(|| Detection {
                            bbox: pr.bbox,
                            class_id,
                            score: prob,
                            provenance: src.provenance(),
                        })
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    });
    let map = dets
        .iter()
        .map(|d| (d.image_id.clone(), d.detections.clone()))
        .collect();
    let r = evaluate(&d.scenes, &map, p).unwrap();
    assert_eq!(r.map50_all, Some(1.0));
}

#[test]
fn pipeline_is_deterministic() {
    let (train, test) = split(SimConfig::default(), 20);
    let a = run_pipeline(&train, &test, &small_net()).unwrap();
    let b = run_pipeline(&train, &test, &small_net()).unwrap();
    assert_eq!(a.detections, b.detections);
    assert_eq!(a.report, b.report);
    assert_eq!(a.fusion.params, b.fusion.params);
}
