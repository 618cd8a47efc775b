//! Random fixtures shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{
    assemble_window_graph, Detection, DetectorLabel, FrameInput, SceneGraph, StructureMask, ZeroAppearance,
    APPEARANCE_DIM,
};

pub fn random_frame(rng: &mut ChaCha8Rng, max_objects: usize) -> FrameInput {
    let n = rng.random_range(0..=max_objects);
    let detections = (0..n)
        .map(|i| {
            let label = DetectorLabel::ALL[rng.random_range(0..DetectorLabel::ALL.len())];
            Detection {
                label: label.as_str().into(),
                bbox: [
                    rng.random_range(0.05..0.95),
                    rng.random_range(0.05..0.95),
                    rng.random_range(0.02..0.3),
                    rng.random_range(0.02..0.3),
                ],
                score: rng.random_range(0.3..1.0),
                depth: rng.random_range(0.0..1.0),
                appearance: Some((0..APPEARANCE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()),
                track: Some(i as u32),
            }
        })
        .collect();
    let cells = (0..128).map(|_| u8::from(rng.random_bool(0.5))).collect();
    FrameInput {
        detections,
        mask: StructureMask::new(cells).unwrap(),
        gaze: Some((rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))),
        feature_grid: None,
    }
}

pub fn random_graph(seed: u64, window: usize, offsets: &[usize], max_objects: usize) -> SceneGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<_> = (0..window).map(|_| random_frame(&mut rng, max_objects)).collect();
    assemble_window_graph(&frames, offsets, &ZeroAppearance, (1.0, 1.0)).unwrap()
}
