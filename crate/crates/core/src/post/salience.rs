use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::NodeType;

/// Mixing weight of one final-step node, identified by its position among
/// that step's nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeWeight {
    pub slot: usize,
    pub node_type: NodeType,
    pub track: Option<u32>,
    pub weight: f64,
}

/// Weights recorded at one rollout step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameWeights {
    pub step: usize,
    pub weights: Vec<NodeWeight>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedObject {
    pub slot: usize,
    pub node_type: NodeType,
    pub track: Option<u32>,
    pub score: f64,
}

/// Per step: object weights summed over runs, softmax-renormalised and
/// divided by the step maximum, highest first.
pub fn rank_object_salience(runs: &[Vec<FrameWeights>]) -> Vec<Vec<RankedObject>> {
    let mut per_step: BTreeMap<usize, BTreeMap<usize, (NodeType, Option<u32>, f64)>> = BTreeMap::new();
    for run in runs {
        for fw in run {
            let step = per_step.entry(fw.step).or_default();
            for w in fw.weights.iter().filter(|w| w.node_type.is_object()) {
                step.entry(w.slot).or_insert((w.node_type, w.track, 0.0)).2 += w.weight;
            }
        }
    }
    let last = per_step.keys().next_back().map_or(0, |s| s + 1);
    (0..last)
        .map(|s| {
            let Some(nodes) = per_step.get(&s).filter(|n| !n.is_empty()) else {
                return Vec::new();
            };
            let m = nodes.values().map(|v| v.2).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<(usize, NodeType, Option<u32>, f64)> = nodes
                .iter()
                .map(|(&slot, &(ty, tr, v))| (slot, ty, tr, (v - m).exp()))
                .collect();
            let z: f64 = exps.iter().map(|e| e.3).sum();
            let top = exps.iter().map(|e| e.3 / z).fold(0.0, f64::max);
            let mut ranked: Vec<RankedObject> = exps
                .into_iter()
                .map(|(slot, node_type, track, e)| RankedObject {
                    slot,
                    node_type,
                    track,
                    score: e / z / top,
                })
                .collect();
            ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.slot.cmp(&b.slot)));
            ranked
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(slot: usize, node_type: NodeType, weight: f64) -> NodeWeight {
        NodeWeight {
            slot,
            node_type,
            track: Some(slot as u32),
            weight,
        }
    }

    fn frame(step: usize, weights: Vec<NodeWeight>) -> FrameWeights {
        FrameWeights { step, weights }
    }

    #[test]
    fn single_object_scores_one() {
        let r = rank_object_salience(&[vec![frame(
            0,
            vec![
                w(0, NodeType::Vehicle, 0.2),
                w(1, NodeType::Gaze, 0.7),
                w(2, NodeType::Structure, 0.1),
            ],
        )]]);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].len(), 1);
        assert_eq!(r[0][0].score, 1.0);
    }

    #[test]
    fn equal_sums_both_score_one() {
        let r = rank_object_salience(&[
            vec![frame(
                0,
                vec![w(0, NodeType::Vehicle, 0.3), w(1, NodeType::Person, 0.1)],
            )],
            vec![frame(
                0,
                vec![w(0, NodeType::Vehicle, 0.1), w(1, NodeType::Person, 0.3)],
            )],
        ]);
        assert!(r[0].iter().all(|o| o.score == 1.0));
    }

    #[test]
    fn distinct_sums_follow_direct_computation() {
        let sums = [0.9, 0.2, 0.5];
        let runs = vec![
            vec![frame(
                0,
                (0..3).map(|i| w(i, NodeType::Vehicle, sums[i] / 2.0)).collect(),
            )],
            vec![frame(
                0,
                (0..3).map(|i| w(i, NodeType::Vehicle, sums[i] / 2.0)).collect(),
            )],
        ];
        let r = rank_object_salience(&runs);
        let z: f64 = sums.iter().map(|s| f64::exp(*s)).sum();
        let soft: Vec<f64> = sums.iter().map(|s| s.exp() / z).collect();
        let top = soft.iter().copied().fold(0.0, f64::max);
        let slots: Vec<usize> = r[0].iter().map(|o| o.slot).collect();
        assert_eq!(slots, vec![0, 2, 1]);
        for o in &r[0] {
            assert!((o.score - soft[o.slot] / top).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_without_objects_is_empty() {
        let r = rank_object_salience(&[vec![
            frame(0, vec![w(0, NodeType::Gaze, 1.0)]),
            frame(1, vec![w(0, NodeType::Static, 1.0)]),
        ]]);
        assert!(r[0].is_empty());
        assert_eq!(r[1].len(), 1);
    }
}
