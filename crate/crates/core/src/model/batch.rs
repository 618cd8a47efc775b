use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{EdgeType, NodeType, SceneGraph, EDGE_DIM, NODE_DIM};
use crate::math::{time_encoding, Tensor};

/// Edges of one triplet, contiguous in the batch's edge order.
#[derive(Debug, Clone)]
pub(crate) struct EdgeGroup {
    pub ty: EdgeType,
    /// Distinct source nodes of the group.
    pub sources: Arc<[usize]>,
}

/// Identity of a batch node in its source graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct NodeRef {
    pub graph: usize,
    pub id: usize,
    pub node_type: NodeType,
    pub track: Option<u32>,
}

/// Several scene graphs packed into one disjoint union. Nodes are ordered
/// by type and edges by triplet so that per-type and per-triplet
/// parameters act on contiguous blocks.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub(crate) n_graphs: usize,
    pub(crate) features: Tensor,
    pub(crate) time_enc: Tensor,
    /// Node indices per type, in `NodeType::ALL` order.
    pub(crate) type_nodes: Vec<Arc<[usize]>>,
    pub(crate) nodes: Vec<NodeRef>,
    pub(crate) positions: Vec<(f64, f64)>,
    pub(crate) edge_src: Arc<[usize]>,
    pub(crate) edge_dst: Arc<[usize]>,
    pub(crate) affinity: Tensor,
    pub(crate) edge_groups: Vec<EdgeGroup>,
    /// Per edge, the row of its source in the concatenated per-group
    /// projected sources.
    pub(crate) edge_source_row: Arc<[usize]>,
    /// Final-timestep nodes, type-ordered.
    pub(crate) last: Arc<[usize]>,
    /// Per type, positions within `last`.
    pub(crate) last_type_rows: Vec<Arc<[usize]>>,
    pub(crate) last_graph: Arc<[usize]>,
    pub(crate) targets: Option<Vec<(f64, f64)>>,
}

impl GraphBatch {
    /// Pack `graphs`; `targets` holds one next-gaze position per graph when
    /// the batch is used for a loss. `d` sets the time-encoding width.
    pub fn new(graphs: &[&SceneGraph], targets: Option<&[(f64, f64)]>, d: usize) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Contract("empty graph batch".into()));
        }
        if let Some(t) = targets {
            if t.len() != graphs.len() {
                return Err(Error::dim(
                    "GraphBatch::new",
                    format!("{} targets for {} graphs", t.len(), graphs.len()),
                ));
            }
        }

        // type-major order, graph then id order within a type
        let mut order: Vec<(usize, usize)> = Vec::new();
        for ty in NodeType::ALL {
            for (gi, g) in graphs.iter().enumerate() {
                for n in g.nodes() {
                    if n.node_type == ty {
                        order.push((gi, n.id));
                    }
                }
            }
        }
        let offsets: Vec<usize> = graphs
            .iter()
            .scan(0, |acc, g| {
                let start = *acc;
                *acc += g.nodes().len();
                Some(start)
            })
            .collect();
        let total = order.len();
        let mut slot = vec![0usize; total];
        for (i, &(gi, id)) in order.iter().enumerate() {
            slot[offsets[gi] + id] = i;
        }

        let max_t = graphs.iter().map(|g| g.window()).max().unwrap_or(1);
        let table: Vec<Tensor> = (0..=max_t).map(|t| time_encoding(t as i64, d)).collect::<Result<_>>()?;

        let mut features = Vec::with_capacity(total * NODE_DIM);
        let mut enc = Vec::with_capacity(total * d);
        let mut nodes = Vec::with_capacity(total);
        let mut positions = Vec::with_capacity(total);
        let mut type_nodes: Vec<Vec<usize>> = vec![Vec::new(); NodeType::ALL.len()];
        let mut last = Vec::new();
        let mut last_graph = Vec::new();
        let mut last_type_rows: Vec<Vec<usize>> = vec![Vec::new(); NodeType::ALL.len()];
        for (i, &(gi, id)) in order.iter().enumerate() {
            let g = graphs[gi];
            let n = &g.nodes()[id];
            features.extend_from_slice(&n.features);
            enc.extend_from_slice(table[n.t].data());
            nodes.push(NodeRef {
                graph: gi,
                id,
                node_type: n.node_type,
                track: n.track,
            });
            positions.push(n.position());
            type_nodes[n.node_type.index()].push(i);
            if n.t == g.window() {
                last_type_rows[n.node_type.index()].push(last.len());
                last.push(i);
                last_graph.push(gi);
            }
        }

        let mut edges: Vec<(EdgeType, usize, usize, [f64; EDGE_DIM])> = Vec::new();
        for (gi, g) in graphs.iter().enumerate() {
            for e in g.edges() {
                edges.push((
                    g.edge_type(e),
                    slot[offsets[gi] + e.src],
                    slot[offsets[gi] + e.dst],
                    e.affinity,
                ));
            }
        }
        edges.sort_by_key(|a| a.0);

        let mut edge_groups = Vec::new();
        let mut edge_source_row = Vec::with_capacity(edges.len());
        let mut start = 0;
        let mut base = 0;
        while start < edges.len() {
            let ty = edges[start].0;
            let mut end = start;
            let mut local: HashMap<usize, usize> = HashMap::new();
            let mut sources = Vec::new();
            while end < edges.len() && edges[end].0 == ty {
                let src = edges[end].1;
                let row = *local.entry(src).or_insert_with(|| {
                    sources.push(src);
                    sources.len() - 1
                });
                edge_source_row.push(base + row);
                end += 1;
            }
            base += sources.len();
            edge_groups.push(EdgeGroup {
                ty,
                sources: Arc::from(sources),
            });
            start = end;
        }

        let mut affinity = Vec::with_capacity(edges.len() * EDGE_DIM);
        for e in &edges {
            affinity.extend_from_slice(&e.3);
        }
        Ok(Self {
            n_graphs: graphs.len(),
            features: Tensor::from_matrix(total, NODE_DIM, features)?,
            time_enc: Tensor::from_matrix(total, d, enc)?,
            type_nodes: type_nodes.into_iter().map(Arc::from).collect(),
            nodes,
            positions,
            edge_src: edges.iter().map(|e| e.1).collect(),
            edge_dst: edges.iter().map(|e| e.2).collect(),
            affinity: Tensor::from_matrix(edges.len(), EDGE_DIM, affinity)?,
            edge_groups,
            edge_source_row: Arc::from(edge_source_row),
            last: Arc::from(last),
            last_type_rows: last_type_rows.into_iter().map(Arc::from).collect(),
            last_graph: Arc::from(last_graph),
            targets: targets.map(<[_]>::to_vec),
        })
    }

    pub fn n_graphs(&self) -> usize {
        self.n_graphs
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_src.len()
    }

    /// Batch row of node `id` in graph `graph`.
    pub fn row_of(&self, graph: usize, id: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.graph == graph && n.id == id)
    }
}
