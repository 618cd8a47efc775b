//! Spatio-temporal heterogeneous scene graphs.

mod build;
pub mod io;

use serde::{Deserialize, Serialize};

pub use build::{
    advance_window, assemble_window_graph, build_frame_nodes, connect_edges, edge_affinity, AppearanceProvider,
    Detection, FeatureGrid, FrameInput, GridAppearance, StructureMask, ZeroAppearance,
};

use crate::error::{Error, Result};

pub const NODE_DIM: usize = 144;
pub const EDGE_DIM: usize = 5;
pub const APPEARANCE_DIM: usize = 128;
pub const MASK_W: usize = 16;
pub const MASK_H: usize = 8;
pub const LABEL_DIM: usize = 10;

/// Gaze-node bounding box as a fraction of the frame (width, height).
pub const GAZE_BOX: (f64, f64) = (0.10, 0.20);

/// Default temporal offsets 𝒯_d.
pub const DEFAULT_OFFSETS: [usize; 5] = [1, 2, 4, 8, 16];
pub const DEFAULT_WINDOW: usize = 20;

// Feature layout: position(2) bbox(2) score(1) appearance(128) depth(1) one-hot(10).
pub const F_X: usize = 0;
pub const F_Y: usize = 1;
pub const F_W: usize = 2;
pub const F_H: usize = 3;
pub const F_SCORE: usize = 4;
pub const F_APPEARANCE: usize = 5;
pub const F_DEPTH: usize = F_APPEARANCE + APPEARANCE_DIM;
pub const F_LABEL: usize = F_DEPTH + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Vehicle,
    Person,
    Static,
    Gaze,
    Structure,
}

impl NodeType {
    pub const ALL: [NodeType; 5] = [
        NodeType::Vehicle,
        NodeType::Person,
        NodeType::Static,
        NodeType::Gaze,
        NodeType::Structure,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeType::Vehicle => "vehicle",
            NodeType::Person => "person",
            NodeType::Static => "static",
            NodeType::Gaze => "gaze",
            NodeType::Structure => "structure",
        }
    }

    pub fn is_object(self) -> bool {
        !matches!(self, NodeType::Gaze | NodeType::Structure)
    }
}

/// The eight detector classes that become object nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectorLabel {
    Car,
    Person,
    Bicycle,
    Motorcycle,
    Bus,
    Truck,
    TrafficLight,
    StopSign,
}

impl DetectorLabel {
    pub const ALL: [DetectorLabel; 8] = [
        DetectorLabel::Car,
        DetectorLabel::Person,
        DetectorLabel::Bicycle,
        DetectorLabel::Motorcycle,
        DetectorLabel::Bus,
        DetectorLabel::Truck,
        DetectorLabel::TrafficLight,
        DetectorLabel::StopSign,
    ];

    pub fn parse(label: &str) -> Result<Self> {
        Ok(match label.trim().to_ascii_lowercase().replace('_', " ").as_str() {
            "car" => DetectorLabel::Car,
            "person" => DetectorLabel::Person,
            "bicycle" => DetectorLabel::Bicycle,
            "motorcycle" => DetectorLabel::Motorcycle,
            "bus" => DetectorLabel::Bus,
            "truck" => DetectorLabel::Truck,
            "traffic light" => DetectorLabel::TrafficLight,
            "stop sign" => DetectorLabel::StopSign,
            _ => return Err(Error::UnknownLabel(label.to_string())),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorLabel::Car => "car",
            DetectorLabel::Person => "person",
            DetectorLabel::Bicycle => "bicycle",
            DetectorLabel::Motorcycle => "motorcycle",
            DetectorLabel::Bus => "bus",
            DetectorLabel::Truck => "truck",
            DetectorLabel::TrafficLight => "traffic light",
            DetectorLabel::StopSign => "stop sign",
        }
    }

    pub fn node_type(self) -> NodeType {
        match self {
            DetectorLabel::Car
            | DetectorLabel::Bicycle
            | DetectorLabel::Motorcycle
            | DetectorLabel::Bus
            | DetectorLabel::Truck => NodeType::Vehicle,
            DetectorLabel::Person => NodeType::Person,
            DetectorLabel::TrafficLight | DetectorLabel::StopSign => NodeType::Static,
        }
    }

    /// Slot in the 10-way one-hot (`gaze` = 8, `structure` = 9).
    pub fn one_hot_slot(self) -> usize {
        self as usize
    }
}

pub const GAZE_SLOT: usize = 8;
pub const STRUCTURE_SLOT: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub node_type: NodeType,
    /// Window-relative timestep in `1..=T`.
    pub t: usize,
    pub features: Vec<f64>,
    /// Track identity carried through from ingestion, when known.
    pub track: Option<u32>,
}

impl Node {
    pub fn position(&self) -> (f64, f64) {
        (self.features[F_X], self.features[F_Y])
    }

    pub fn depth(&self) -> f64 {
        self.features[F_DEPTH]
    }

    pub fn appearance(&self) -> &[f64] {
        &self.features[F_APPEARANCE..F_APPEARANCE + APPEARANCE_DIM]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeCategory {
    Spatial,
    Temporal,
}

/// Edge-type triplet φ = (source type, category, destination type).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeType {
    pub src: NodeType,
    pub category: EdgeCategory,
    pub dst: NodeType,
}

impl EdgeType {
    pub fn key(&self) -> String {
        let c = match self.category {
            EdgeCategory::Spatial => "spatial",
            EdgeCategory::Temporal => "temporal",
        };
        format!("{}-{}-{}", self.src.name(), c, self.dst.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub category: EdgeCategory,
    pub affinity: [f64; EDGE_DIM],
}

/// Typed nodes and typed directed edges over a `T`-step window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    window: usize,
    offsets: Vec<usize>,
    frame_dims: (f64, f64),
    /// `step_start[t-1]..step_start[t]` are the node ids at timestep `t`.
    step_start: Vec<usize>,
}

impl SceneGraph {
    /// Build from per-timestep node lists (timestep `t` = list index + 1);
    /// ids and `t` fields are rewritten and edges reconnected.
    pub fn from_steps(steps: Vec<Vec<Node>>, offsets: &[usize], frame_dims: (f64, f64)) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Assembly("window has no timesteps".into()));
        }
        let mut nodes = Vec::new();
        let mut step_start = vec![0];
        for (i, step) in steps.into_iter().enumerate() {
            let gaze = step.iter().filter(|n| n.node_type == NodeType::Gaze).count();
            let structure = step.iter().filter(|n| n.node_type == NodeType::Structure).count();
            if gaze != 1 || structure != 1 {
                return Err(Error::Assembly(format!(
                    "timestep {} has {gaze} gaze and {structure} structure nodes",
                    i + 1
                )));
            }
            for mut n in step {
                n.id = nodes.len();
                n.t = i + 1;
                nodes.push(n);
            }
            step_start.push(nodes.len());
        }
        let window = step_start.len() - 1;
        let slices: Vec<&[Node]> = step_start.windows(2).map(|w| &nodes[w[0]..w[1]]).collect();
        let edges = connect_edges(&slices, offsets);
        Ok(Self {
            nodes,
            edges,
            window,
            offsets: offsets.to_vec(),
            frame_dims,
            step_start,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn frame_dims(&self) -> (f64, f64) {
        self.frame_dims
    }

    /// Nodes at timestep `t ∈ 1..=T`.
    pub fn step(&self, t: usize) -> &[Node] {
        &self.nodes[self.step_start[t - 1]..self.step_start[t]]
    }

    pub fn steps(&self) -> impl Iterator<Item = &[Node]> {
        (1..=self.window).map(move |t| self.step(t))
    }

    pub fn last_step(&self) -> &[Node] {
        self.step(self.window)
    }

    pub fn edge_type(&self, e: &Edge) -> EdgeType {
        EdgeType {
            src: self.nodes[e.src].node_type,
            category: e.category,
            dst: self.nodes[e.dst].node_type,
        }
    }

    /// Gaze position at the final timestep.
    pub fn current_gaze(&self) -> (f64, f64) {
        self.last_step()
            .iter()
            .find(|n| n.node_type == NodeType::Gaze)
            .map(Node::position)
            .expect("every timestep has a gaze node")
    }

    /// Graph with explicit edges in a single timestep, bypassing the
    /// connectivity rules.
    #[cfg(test)]
    pub(crate) fn from_parts(nodes: Vec<Node>, edges: Vec<Edge>, frame_dims: (f64, f64)) -> Self {
        let n = nodes.len();
        Self {
            nodes,
            edges,
            window: 1,
            offsets: Vec::new(),
            frame_dims,
            step_start: vec![0, n],
        }
    }

    pub(crate) fn into_steps(self) -> Vec<Vec<Node>> {
        let mut out = Vec::with_capacity(self.window);
        let mut nodes = self.nodes.into_iter();
        for t in 0..self.window {
            let len = self.step_start[t + 1] - self.step_start[t];
            out.push(nodes.by_ref().take(len).collect());
        }
        out
    }
}
