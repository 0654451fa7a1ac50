use sgnms_core::data_io::{generate_synthetic, read_detections, write_detections, SynthConfig};
use sgnms_core::evaluation::OCCLUSION_BIN_EDGES;
use sgnms_core::{
    suppress_per_class, BBox32, Detection32, EvalReport, NmsAlgorithm, PhiFunction, PhiFunction64, Scene64,
};

fn corpus() -> Vec<Scene64> {
    let cfg = SynthConfig {
        seed: 21,
        scene_count: 40,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg).unwrap().scenes
}

#[test]
fn suppression_then_evaluation() {
    let scenes = corpus();
    let algo = NmsAlgorithm::Sg {
        nt: 0.5,
        phi: PhiFunction64::linear(1.7).unwrap(),
    };
    let kept: Vec<Scene64> = scenes
        .iter()
        .map(|s| Scene64 {
            detections: suppress_per_class(&s.detections, &algo).unwrap().kept_detections(),
            ..s.clone()
        })
        .collect();
    let before = EvalReport::evaluate(&scenes, 0.7, &OCCLUSION_BIN_EDGES).unwrap();
    let after = EvalReport::evaluate(&kept, 0.7, &OCCLUSION_BIN_EDGES).unwrap();
    // suppression removes only false positives here, never a recalled object
    assert_eq!(before.counts.tp, after.counts.tp);
    assert!(after.counts.fp < before.counts.fp);
    assert!(after.ap > before.ap);
}

#[test]
fn detections_survive_a_file_round_trip() {
    for scene in corpus().iter().take(5) {
        let files = write_detections(&scene.detections).unwrap();
        let back = read_detections::<f64>(&files.labels, files.embeddings.as_deref()).unwrap();
        assert_eq!(back.len(), scene.detections.len());
        for (a, b) in back.iter().zip(&scene.detections) {
            assert!((a.score - b.score).abs() <= 5e-5);
            assert_eq!(a.embedding.is_some(), b.embedding.is_some());
        }
    }
}

#[test]
fn single_precision_agrees_with_double() {
    for scene in corpus() {
        let dets32: Vec<Detection32> = scene
            .detections
            .iter()
            .map(|d| {
                let [x1, y1, x2, y2] = d.bbox.corners();
                Detection32::new(
                    BBox32::new(x1 as f32, y1 as f32, x2 as f32, y2 as f32),
                    d.score as f32,
                    d.class_id,
                )
                .with_embedding(d.embedding.unwrap().0 as f32)
            })
            .collect();
        let algo64 = NmsAlgorithm::Sg {
            nt: 0.5,
            phi: PhiFunction64::linear(1.7).unwrap(),
        };
        let algo32 = NmsAlgorithm::Sg {
            nt: 0.5f32,
            phi: PhiFunction::linear(1.7f32).unwrap(),
        };
        let k64 = algo64.run(&scene.detections).unwrap().kept_indices();
        let k32 = algo32.run(&dets32).unwrap().kept_indices();
        assert_eq!(k64, k32, "scene {}", scene.id);
    }
}
