use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    DetectorLabel, Edge, EdgeCategory, Node, NodeType, SceneGraph, APPEARANCE_DIM, EDGE_DIM, F_APPEARANCE, F_DEPTH,
    F_H, F_LABEL, F_SCORE, F_W, F_X, F_Y, GAZE_BOX, GAZE_SLOT, MASK_H, MASK_W, NODE_DIM, STRUCTURE_SLOT,
};
use crate::error::{Error, Result};

/// One object detection in normalised image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    /// `[cx, cy, w, h]`, all in `[0, 1]`.
    pub bbox: [f64; 4],
    pub score: f64,
    pub depth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<u32>,
}

/// Drivable-area mask, 16 wide × 8 high, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureMask(pub Vec<u8>);

impl Default for StructureMask {
    fn default() -> Self {
        Self(vec![0; MASK_W * MASK_H])
    }
}

impl StructureMask {
    pub fn new(cells: Vec<u8>) -> Result<Self> {
        if cells.len() != MASK_W * MASK_H {
            return Err(Error::Ingestion(format!(
                "structure mask needs {} cells, got {}",
                MASK_W * MASK_H,
                cells.len()
            )));
        }
        if cells.iter().any(|&c| c > 1) {
            return Err(Error::Ingestion("structure mask values must be 0 or 1".into()));
        }
        Ok(Self(cells))
    }

    /// Lower half of the frame marked drivable.
    pub fn lower_half() -> Self {
        let cells = (0..MASK_W * MASK_H)
            .map(|i| u8::from(i / MASK_W >= MASK_H / 2))
            .collect();
        Self(cells)
    }

    fn active(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| (i % MASK_W, i / MASK_W))
    }

    /// Centroid of active cell centres; the frame centre for an empty mask.
    pub fn centroid(&self) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (c, r) in self.active() {
            sx += (c as f64 + 0.5) / MASK_W as f64;
            sy += (r as f64 + 0.5) / MASK_H as f64;
            n += 1;
        }
        if n == 0 {
            (0.5, 0.5)
        } else {
            (sx / n as f64, sy / n as f64)
        }
    }

    /// Width and height of the active cells' bounding box.
    pub fn extent(&self) -> (f64, f64) {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for (c, r) in self.active() {
            bounds = Some(match bounds {
                None => (c, c, r, r),
                Some((c0, c1, r0, r1)) => (c0.min(c), c1.max(c), r0.min(r), r1.max(r)),
            });
        }
        match bounds {
            None => (0.0, 0.0),
            Some((c0, c1, r0, r1)) => (
                (c1 - c0 + 1) as f64 / MASK_W as f64,
                (r1 - r0 + 1) as f64 / MASK_H as f64,
            ),
        }
    }
}

/// Dense grid of appearance vectors covering the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub cols: usize,
    pub rows: usize,
    /// `rows × cols × 128`, row-major.
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(cols: usize, rows: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 || rows == 0 || data.len() != cols * rows * APPEARANCE_DIM {
            return Err(Error::Ingestion("feature grid has the wrong size".into()));
        }
        Ok(Self { cols, rows, data })
    }

    fn cell(&self, c: usize, r: usize) -> &[f64] {
        let i = (r * self.cols + c) * APPEARANCE_DIM;
        &self.data[i..i + APPEARANCE_DIM]
    }

    /// Bilinear interpolation between cell centres, clamped at the borders.
    pub fn sample(&self, x: f64, y: f64) -> Vec<f64> {
        bilinear(self.cols, self.rows, x, y, |c, r| self.cell(c, r).to_vec())
    }
}

fn bilinear(cols: usize, rows: usize, x: f64, y: f64, cell: impl Fn(usize, usize) -> Vec<f64>) -> Vec<f64> {
    let u = (x * cols as f64 - 0.5).clamp(0.0, (cols - 1) as f64);
    let v = (y * rows as f64 - 0.5).clamp(0.0, (rows - 1) as f64);
    let (c0, r0) = (u.floor() as usize, v.floor() as usize);
    let (c1, r1) = ((c0 + 1).min(cols - 1), (r0 + 1).min(rows - 1));
    let (fu, fv) = (u - c0 as f64, v - r0 as f64);
    let mut out = vec![0.0; APPEARANCE_DIM];
    for (c, r, w) in [
        (c0, r0, (1.0 - fu) * (1.0 - fv)),
        (c1, r0, fu * (1.0 - fv)),
        (c0, r1, (1.0 - fu) * fv),
        (c1, r1, fu * fv),
    ] {
        if w == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(cell(c, r)) {
            *o += w * a;
        }
    }
    out
}

/// Synchronised inputs for one graph timestep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameInput {
    pub detections: Vec<Detection>,
    pub mask: StructureMask,
    pub gaze: Option<(f64, f64)>,
    pub feature_grid: Option<Arc<FeatureGrid>>,
}

/// Source of the gaze node's appearance vector.
pub trait AppearanceProvider: Send + Sync {
    fn gaze_appearance(&self, frame: &FrameInput, gaze: (f64, f64)) -> Vec<f64>;
}

/// Always returns a zero vector.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroAppearance;

impl AppearanceProvider for ZeroAppearance {
    fn gaze_appearance(&self, _frame: &FrameInput, _gaze: (f64, f64)) -> Vec<f64> {
        vec![0.0; APPEARANCE_DIM]
    }
}

/// Bilinear lookup into the frame's feature grid. Without a supplied grid
/// it either rasterises the frame's detections onto a `cols × rows` grid
/// (each cell takes the appearance of the nearest detection covering its
/// centre) or returns zeros.
#[derive(Debug, Clone, Copy)]
pub struct GridAppearance {
    pub rasterize: Option<(usize, usize)>,
}

/// Default raster; cells are smaller than any synthetic bounding box.
pub const RASTER: (usize, usize) = (64, 32);

impl Default for GridAppearance {
    fn default() -> Self {
        Self {
            rasterize: Some(RASTER),
        }
    }
}

impl AppearanceProvider for GridAppearance {
    fn gaze_appearance(&self, frame: &FrameInput, (x, y): (f64, f64)) -> Vec<f64> {
        if let Some(grid) = &frame.feature_grid {
            return grid.sample(x, y);
        }
        let Some((cols, rows)) = self.rasterize else {
            return vec![0.0; APPEARANCE_DIM];
        };
        bilinear(cols, rows, x, y, |c, r| {
            let cx = (c as f64 + 0.5) / cols as f64;
            let cy = (r as f64 + 0.5) / rows as f64;
            frame
                .detections
                .iter()
                .filter(|d| (cx - d.bbox[0]).abs() <= d.bbox[2] / 2.0 && (cy - d.bbox[1]).abs() <= d.bbox[3] / 2.0)
                .min_by(|a, b| a.depth.total_cmp(&b.depth))
                .and_then(|d| d.appearance.clone())
                .unwrap_or_else(|| vec![0.0; APPEARANCE_DIM])
        })
    }
}

fn blank_features(slot: usize) -> Vec<f64> {
    let mut f = vec![0.0; NODE_DIM];
    f[F_LABEL + slot] = 1.0;
    f
}

fn check_unit(what: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Ingestion(format!("{what} {v} outside [0, 1]")))
    }
}

/// Nodes for one timestep: one per detection, then the gaze node, then the
/// structure node.
pub fn build_frame_nodes(
    frame: &FrameInput,
    gaze: (f64, f64),
    provider: &dyn AppearanceProvider,
    t: usize,
) -> Result<Vec<Node>> {
    let mut nodes = Vec::with_capacity(frame.detections.len() + 2);
    for det in &frame.detections {
        let label = DetectorLabel::parse(&det.label)?;
        let [cx, cy, w, h] = det.bbox;
        check_unit("bbox centre x", cx)?;
        check_unit("bbox centre y", cy)?;
        let mut f = blank_features(label.one_hot_slot());
        f[F_X] = cx;
        f[F_Y] = cy;
        f[F_W] = w;
        f[F_H] = h;
        f[F_SCORE] = det.score;
        if let Some(app) = &det.appearance {
            if app.len() != APPEARANCE_DIM {
                return Err(Error::Ingestion(format!(
                    "appearance vector has {} values, expected {APPEARANCE_DIM}",
                    app.len()
                )));
            }
            f[F_APPEARANCE..F_APPEARANCE + APPEARANCE_DIM].copy_from_slice(app);
        }
        f[F_DEPTH] = det.depth;
        nodes.push(Node {
            id: 0,
            node_type: label.node_type(),
            t,
            features: f,
            track: det.track,
        });
    }

    check_unit("gaze x", gaze.0)?;
    check_unit("gaze y", gaze.1)?;
    let mut f = blank_features(GAZE_SLOT);
    f[F_X] = gaze.0;
    f[F_Y] = gaze.1;
    f[F_W] = GAZE_BOX.0;
    f[F_H] = GAZE_BOX.1;
    f[F_SCORE] = 1.0;
    let app = provider.gaze_appearance(frame, gaze);
    f[F_APPEARANCE..F_APPEARANCE + APPEARANCE_DIM].copy_from_slice(&app);
    nodes.push(Node {
        id: 0,
        node_type: NodeType::Gaze,
        t,
        features: f,
        track: None,
    });

    let mut f = blank_features(STRUCTURE_SLOT);
    let (sx, sy) = frame.mask.centroid();
    let (sw, sh) = frame.mask.extent();
    f[F_X] = sx;
    f[F_Y] = sy;
    f[F_W] = sw;
    f[F_H] = sh;
    f[F_SCORE] = 1.0;
    for (slot, &cell) in f[F_APPEARANCE..F_APPEARANCE + APPEARANCE_DIM]
        .iter_mut()
        .zip(&frame.mask.0)
    {
        *slot = f64::from(cell);
    }
    nodes.push(Node {
        id: 0,
        node_type: NodeType::Structure,
        t,
        features: f,
        track: None,
    });
    Ok(nodes)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `[Δx, Δy, Δdepth, Δt, cos(appearance)]` from `src` to `dst`.
pub fn edge_affinity(src: &Node, dst: &Node) -> [f64; EDGE_DIM] {
    let (sx, sy) = src.position();
    let (dx, dy) = dst.position();
    [
        dx - sx,
        dy - sy,
        dst.depth() - src.depth(),
        dst.t as f64 - src.t as f64,
        cosine(dst.appearance(), src.appearance()),
    ]
}

/// Spatial edges in both directions between every distinct pair inside a
/// timestep, plus causal temporal edges from every node at `t − Δt` to
/// every node at `t` for each offset.
pub fn connect_edges(steps: &[&[Node]], offsets: &[usize]) -> Vec<Edge> {
    let mut offsets = offsets.to_vec();
    offsets.sort_unstable();
    offsets.dedup();
    let mut edges = Vec::new();
    for (ti, step) in steps.iter().enumerate() {
        for dst in step.iter() {
            for src in step.iter() {
                if src.id != dst.id {
                    edges.push(Edge {
                        src: src.id,
                        dst: dst.id,
                        category: EdgeCategory::Spatial,
                        affinity: edge_affinity(src, dst),
                    });
                }
            }
        }
        for &dt in &offsets {
            if dt == 0 || dt > ti {
                continue;
            }
            for dst in step.iter() {
                for src in steps[ti - dt].iter() {
                    edges.push(Edge {
                        src: src.id,
                        dst: dst.id,
                        category: EdgeCategory::Temporal,
                        affinity: edge_affinity(src, dst),
                    });
                }
            }
        }
    }
    edges
}

/// Scene graph over `frames.len()` timesteps; every frame must carry gaze.
pub fn assemble_window_graph(
    frames: &[FrameInput],
    offsets: &[usize],
    provider: &dyn AppearanceProvider,
    frame_dims: (f64, f64),
) -> Result<SceneGraph> {
    let steps = frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            let gaze = frame
                .gaze
                .ok_or_else(|| Error::Assembly(format!("missing gaze at timestep {}", i + 1)))?;
            build_frame_nodes(frame, gaze, provider, i + 1)
        })
        .collect::<Result<Vec<_>>>()?;
    SceneGraph::from_steps(steps, offsets, frame_dims)
}

/// Slide the window one step: drop the oldest timestep and append
/// `new_frame` with its gaze node at `sampled_gaze` clamped to `[0, 1]²`.
pub fn advance_window(
    g: &SceneGraph,
    new_frame: &FrameInput,
    sampled_gaze: (f64, f64),
    provider: &dyn AppearanceProvider,
) -> Result<SceneGraph> {
    let gaze = (sampled_gaze.0.clamp(0.0, 1.0), sampled_gaze.1.clamp(0.0, 1.0));
    let window = g.window();
    let offsets = g.offsets().to_vec();
    let dims = g.frame_dims();
    let mut steps = g.clone().into_steps();
    steps.remove(0);
    steps.push(build_frame_nodes(new_frame, gaze, provider, window)?);
    SceneGraph::from_steps(steps, &offsets, dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(label: &str, x: f64, y: f64) -> Detection {
        Detection {
            label: label.into(),
            bbox: [x, y, 0.1, 0.1],
            score: 0.9,
            depth: 0.4,
            appearance: None,
            track: None,
        }
    }

    fn frame(dets: Vec<Detection>, gaze: (f64, f64)) -> FrameInput {
        FrameInput {
            detections: dets,
            mask: StructureMask::lower_half(),
            gaze: Some(gaze),
            feature_grid: None,
        }
    }

    #[test]
    fn empty_frame_has_gaze_and_structure() {
        let nodes = build_frame_nodes(&frame(vec![], (0.5, 0.5)), (0.5, 0.5), &ZeroAppearance, 1).unwrap();
        assert_eq!(nodes.len(), 2);
        assert_eq!(nodes[0].node_type, NodeType::Gaze);
        assert_eq!(nodes[1].node_type, NodeType::Structure);
        assert!(nodes.iter().all(|n| n.features.len() == NODE_DIM));
    }

    #[test]
    fn labels_map_to_table_types() {
        let f = frame(vec![det("car", 0.2, 0.5), det("person", 0.7, 0.6)], (0.5, 0.5));
        let nodes = build_frame_nodes(&f, (0.5, 0.5), &ZeroAppearance, 1).unwrap();
        let types: Vec<_> = nodes.iter().map(|n| n.node_type).collect();
        assert_eq!(
            types,
            [NodeType::Vehicle, NodeType::Person, NodeType::Gaze, NodeType::Structure]
        );
        for n in &nodes {
            let hot: f64 = n.features[F_LABEL..].iter().sum();
            assert_eq!(hot, 1.0);
        }
        for (label, ty) in [
            ("bicycle", NodeType::Vehicle),
            ("motorcycle", NodeType::Vehicle),
            ("bus", NodeType::Vehicle),
            ("truck", NodeType::Vehicle),
            ("traffic light", NodeType::Static),
            ("stop sign", NodeType::Static),
        ] {
            assert_eq!(DetectorLabel::parse(label).unwrap().node_type(), ty);
        }
    }

    #[test]
    fn unknown_label_is_named() {
        let f = frame(vec![det("giraffe", 0.2, 0.5)], (0.5, 0.5));
        let err = build_frame_nodes(&f, (0.5, 0.5), &ZeroAppearance, 1).unwrap_err();
        assert!(err.to_string().contains("giraffe"));
    }

    #[test]
    fn gaze_box_is_fixed_fraction() {
        let nodes = build_frame_nodes(&frame(vec![], (0.5, 0.5)), (0.5, 0.5), &ZeroAppearance, 1).unwrap();
        let g = &nodes[0];
        assert_eq!(g.position(), (0.5, 0.5));
        assert_eq!((g.features[F_W], g.features[F_H]), (0.10, 0.20));
    }

    #[test]
    fn structure_node_carries_mask() {
        let nodes = build_frame_nodes(&frame(vec![], (0.5, 0.5)), (0.5, 0.5), &ZeroAppearance, 1).unwrap();
        let s = &nodes[1];
        assert_eq!(s.position(), (0.5, 0.75));
        assert_eq!((s.features[F_W], s.features[F_H]), (1.0, 0.5));
        assert_eq!(s.appearance().iter().sum::<f64>(), 64.0);
        assert_eq!(s.depth(), 0.0);
    }

    #[test]
    fn affinity_examples() {
        let mut a = build_frame_nodes(&frame(vec![], (0.2, 0.3)), (0.2, 0.3), &ZeroAppearance, 1)
            .unwrap()
            .remove(0);
        a.features[F_DEPTH] = 0.5;
        a.features[F_APPEARANCE] = 1.0;
        let self_aff = edge_affinity(&a, &a);
        assert_eq!(self_aff, [0.0, 0.0, 0.0, 0.0, 1.0]);
        let mut b = a.clone();
        b.features[F_X] = 0.5;
        b.features[F_APPEARANCE] = 0.0;
        b.features[F_APPEARANCE + 1] = 1.0;
        let aff = edge_affinity(&a, &b);
        assert!((aff[0] - 0.3).abs() < 1e-15);
        assert_eq!(&aff[1..], &[0.0, 0.0, 0.0, 0.0]);
        b.t = 5;
        assert_eq!(edge_affinity(&a, &b)[3], 4.0);
        // zero-norm appearance
        let z = build_frame_nodes(&frame(vec![], (0.2, 0.3)), (0.2, 0.3), &ZeroAppearance, 1)
            .unwrap()
            .remove(0);
        assert_eq!(edge_affinity(&z, &a)[4], 0.0);
    }

    #[test]
    fn edge_counts_small_windows() {
        let f = frame(vec![det("car", 0.2, 0.5)], (0.5, 0.5));
        let g = assemble_window_graph(std::slice::from_ref(&f), &[1, 2], &ZeroAppearance, (1.0, 1.0)).unwrap();
        assert_eq!(g.nodes().len(), 3);
        assert_eq!(g.edges().len(), 6);
        assert!(g.edges().iter().all(|e| e.category == EdgeCategory::Spatial));

        let two = frame(vec![], (0.5, 0.5));
        let g = assemble_window_graph(&[two.clone(), two], &[1], &ZeroAppearance, (1.0, 1.0)).unwrap();
        let temporal = g
            .edges()
            .iter()
            .filter(|e| e.category == EdgeCategory::Temporal)
            .count();
        assert_eq!((g.edges().len(), temporal), (8, 4));
    }

    #[test]
    fn twenty_step_window_node_count() {
        let f = frame(
            vec![det("car", 0.2, 0.5), det("bus", 0.5, 0.5), det("person", 0.8, 0.6)],
            (0.5, 0.5),
        );
        let frames = vec![f; 20];
        let g = assemble_window_graph(&frames, &super::super::DEFAULT_OFFSETS, &ZeroAppearance, (1.0, 1.0)).unwrap();
        assert_eq!(g.window(), 20);
        assert_eq!(g.nodes().len(), 100);
        assert!(g.steps().all(|s| s.len() == 5));
    }

    #[test]
    fn missing_gaze_is_assembly_error() {
        let mut f = frame(vec![], (0.5, 0.5));
        f.gaze = None;
        let err = assemble_window_graph(&[f], &[1], &ZeroAppearance, (1.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Assembly(_)));
    }

    #[test]
    fn advance_keeps_window_and_clamps() {
        let frames: Vec<_> = (0..4)
            .map(|i| frame(vec![det("car", 0.1 * i as f64 + 0.1, 0.5)], (0.5, 0.5)))
            .collect();
        let g = assemble_window_graph(&frames, &[1, 2], &ZeroAppearance, (1.0, 1.0)).unwrap();
        let next = frame(vec![det("car", 0.9, 0.5)], (0.0, 0.0));
        let g2 = advance_window(&g, &next, (1.4, -0.2), &ZeroAppearance).unwrap();
        assert_eq!(g2.window(), 4);
        assert_eq!(g2.current_gaze(), (1.0, 0.0));
        // the old step 2 becomes step 1
        assert_eq!(g2.step(1)[0].position(), g.step(2)[0].position());
        assert_eq!(g2.step(1)[0].t, 1);
        let g3 = advance_window(&g, &next, (1.4, -0.2), &ZeroAppearance).unwrap();
        assert_eq!(g2, g3);
    }

    #[test]
    fn grid_appearance_samples_covering_detection() {
        let mut d = det("car", 0.5, 0.5);
        d.bbox = [0.5, 0.5, 0.5, 0.5];
        let mut app = vec![0.0; APPEARANCE_DIM];
        app[3] = 1.0;
        d.appearance = Some(app.clone());
        let f = frame(vec![d], (0.5, 0.5));
        let got = GridAppearance::default().gaze_appearance(&f, (0.5, 0.5));
        assert_eq!(got, app);
        let far = GridAppearance::default().gaze_appearance(&f, (0.02, 0.02));
        assert!(far.iter().all(|&v| v == 0.0));
        let none = GridAppearance { rasterize: None }.gaze_appearance(&f, (0.5, 0.5));
        assert!(none.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smallest_box_is_resolved_by_default_raster() {
        let mut app = vec![0.0; APPEARANCE_DIM];
        app[7] = 1.0;
        for (x, y) in [(0.31, 0.47), (0.5, 0.5), (0.803, 0.222), (0.117, 0.9)] {
            let mut d = det("person", x, y);
            d.bbox = [x, y, 0.04, 0.04];
            d.appearance = Some(app.clone());
            let got = GridAppearance::default().gaze_appearance(&frame(vec![d], (x, y)), (x, y));
            assert!(got[7] > 0.0, "box at ({x}, {y}) missed");
        }
    }

    fn random_graph(seed: u64, window: usize, offsets: &[usize]) -> SceneGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<_> = (0..window)
            .map(|_| {
                let n = rng.random_range(0..4);
                let dets = (0..n)
                    .map(|_| {
                        let mut d = det("car", rng.random(), rng.random());
                        d.depth = rng.random();
                        d.appearance = Some((0..APPEARANCE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect());
                        d
                    })
                    .collect();
                frame(dets, (rng.random(), rng.random()))
            })
            .collect();
        assemble_window_graph(&frames, offsets, &ZeroAppearance, (1.0, 1.0)).unwrap()
    }

    proptest! {
        #[test]
        fn edge_counts_match_enumeration(seed in 0u64..500, window in 1usize..7) {
            let offsets = [1usize, 2, 4];
            let g = random_graph(seed, window, &offsets);
            let sizes: Vec<usize> = g.steps().map(|s| s.len()).collect();
            let spatial: usize = sizes.iter().map(|n| n * (n - 1)).sum();
            let mut temporal = 0;
            for &dt in &offsets {
                for t in dt..sizes.len() {
                    temporal += sizes[t - dt] * sizes[t];
                }
            }
            let (mut s, mut tm) = (0, 0);
            for e in g.edges() {
                let (src, dst) = (&g.nodes()[e.src], &g.nodes()[e.dst]);
                match e.category {
                    EdgeCategory::Spatial => { s += 1; prop_assert_eq!(src.t, dst.t); prop_assert!(e.src != e.dst); }
                    EdgeCategory::Temporal => {
                        tm += 1;
                        prop_assert!(dst.t > src.t);
                        prop_assert!(offsets.contains(&(dst.t - src.t)));
                    }
                }
            }
            prop_assert_eq!(s, spatial);
            prop_assert_eq!(tm, temporal);
            for step in g.steps() {
                prop_assert_eq!(step.iter().filter(|n| n.node_type == NodeType::Gaze).count(), 1);
                prop_assert_eq!(step.iter().filter(|n| n.node_type == NodeType::Structure).count(), 1);
            }
        }

        #[test]
        fn affinity_antisymmetry(seed in 0u64..500) {
            let g = random_graph(seed, 1, &[1]);
            let nodes = g.nodes();
            for a in nodes { for b in nodes {
                let ab = edge_affinity(a, b);
                let ba = edge_affinity(b, a);
                for k in 0..4 { prop_assert_eq!(ab[k], -ba[k]); }
                prop_assert!((ab[4] - ba[4]).abs() < 1e-15);
            }}
        }
    }
}
