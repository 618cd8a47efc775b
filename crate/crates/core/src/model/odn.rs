use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Forward, GraphBatch, HeadKind};
use crate::error::{Error, Result};
use crate::graph::NodeType;
use crate::math::{Tape, Tensor, Var};

/// Log-density floor; `exp(-745)` is the smallest positive subnormal.
pub const LOG_DENSITY_FLOOR: f64 = -745.0;
const LOG_SIGMA_RANGE: (f64, f64) = (-16.0, 8.0);
const RHO_LOGIT_BOUND: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentNode {
    pub id: usize,
    pub node_type: NodeType,
    pub track: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub pi: f64,
    pub mu: (f64, f64),
    pub sigma: (f64, f64),
    pub rho: f64,
    /// Offset from the anchoring node position (zero anchor for MDN).
    pub delta: (f64, f64),
    pub node: Option<ComponentNode>,
}

/// Bivariate Gaussian mixture over the next gaze position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPrediction {
    pub components: Vec<Component>,
}

impl GmmPrediction {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn argmax(&self) -> Option<&Component> {
        self.components.iter().max_by(|a, b| a.pi.total_cmp(&b.pi))
    }

    fn check(&self) -> Result<()> {
        for c in &self.components {
            if !(c.rho.abs() < 1.0) || !(c.sigma.0 > 0.0 && c.sigma.1 > 0.0) {
                return Err(Error::Contract(format!(
                    "invalid mixture component: sigma {:?}, rho {}",
                    c.sigma, c.rho
                )));
            }
        }
        Ok(())
    }
}

fn component_log_density(c: &Component, (x, y): (f64, f64)) -> f64 {
    let zx = (x - c.mu.0) / c.sigma.0;
    let zy = (y - c.mu.1) / c.sigma.1;
    let om = (1.0 - c.rho) * (1.0 + c.rho);
    let q = zx * zx + zy * zy - 2.0 * c.rho * zx * zy;
    -(2.0 * PI).ln() - c.sigma.0.ln() - c.sigma.1.ln() - 0.5 * om.ln() - 0.5 * q / om
}

/// `log p(x, y)` via log-sum-exp over components, floored at −745.
pub fn log_density(pred: &GmmPrediction, point: (f64, f64)) -> Result<f64> {
    pred.check()?;
    let terms: Vec<f64> = pred
        .components
        .iter()
        .filter(|c| c.pi > 0.0)
        .map(|c| c.pi.ln() + component_log_density(c, point))
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(LOG_DENSITY_FLOOR);
    }
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    Ok(lse.max(LOG_DENSITY_FLOOR))
}

/// Mixture density at `point`.
pub fn gmm_density(pred: &GmmPrediction, point: (f64, f64)) -> Result<f64> {
    pred.check()?;
    Ok(pred
        .components
        .iter()
        .map(|c| c.pi * component_log_density(c, point).exp())
        .sum())
}

/// Mean negative log-likelihood of `targets` under `preds`.
pub fn nll_loss(preds: &[GmmPrediction], targets: &[(f64, f64)]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::dim(
            "nll_loss",
            format!("{} predictions, {} targets", preds.len(), targets.len()),
        ));
    }
    let mut total = 0.0;
    for (p, &t) in preds.iter().zip(targets) {
        total -= log_density(p, t)?;
    }
    Ok(total / preds.len() as f64)
}

/// Pick a component with probability `π_k`, then draw from it through the
/// Cholesky factor of its covariance.
pub fn sample_gaze<R: Rng + ?Sized>(pred: &GmmPrediction, rng: &mut R) -> Result<(f64, f64)> {
    pred.check()?;
    if pred.components.is_empty() {
        return Err(Error::Contract("cannot sample an empty mixture".into()));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = pred.components.len() - 1;
    for (i, c) in pred.components.iter().enumerate() {
        acc += c.pi;
        if u < acc {
            chosen = i;
            break;
        }
    }
    let c = &pred.components[chosen];
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let x = c.mu.0 + c.sigma.0 * z1;
    let y = c.mu.1 + c.sigma.1 * (c.rho * z1 + (1.0 - c.rho * c.rho).sqrt() * z2);
    Ok((x, y))
}

/// Mixture parameters recorded on a tape, one row per component.
pub struct MixtureVars {
    pub log_pi: Var,
    pub mu: Var,
    pub log_sigma: Var,
    pub rho: Var,
    pub delta: Var,
    /// Graph index per component.
    pub segments: Arc<[usize]>,
    pub n_graphs: usize,
    /// Batch node row per component (ODN only).
    pub rows: Option<Arc<[usize]>>,
}

impl MixtureVars {
    pub fn to_predictions(&self, tape: &Tape, b: &GraphBatch) -> Vec<GmmPrediction> {
        let lp = tape.value(self.log_pi).data();
        let mu = tape.value(self.mu).data();
        let ls = tape.value(self.log_sigma).data();
        let rho = tape.value(self.rho).data();
        let delta = tape.value(self.delta).data();
        let mut out = vec![GmmPrediction { components: Vec::new() }; self.n_graphs];
        for (i, &g) in self.segments.iter().enumerate() {
            let node = self.rows.as_ref().map(|rows| {
                let r = b.nodes[rows[i]];
                ComponentNode {
                    id: r.id,
                    node_type: r.node_type,
                    track: r.track,
                }
            });
            out[g].components.push(Component {
                pi: lp[i].exp(),
                mu: (mu[2 * i], mu[2 * i + 1]),
                sigma: (ls[2 * i].exp(), ls[2 * i + 1].exp()),
                rho: rho[i],
                delta: (delta[2 * i], delta[2 * i + 1]),
                node,
            });
        }
        out
    }
}

// Shared squashing of raw `[Δx, Δy, ŝx, ŝy, ρ̂, π̂]` rows into mixture
// parameters; `anchor` is added to the offset.
fn squash(
    tape: &mut Tape,
    raw: Var,
    delta: Var,
    anchor: Tensor,
    segments: Arc<[usize]>,
    n_graphs: usize,
) -> Result<MixtureVars> {
    let ls = tape.slice_cols(raw, 2, 2)?;
    let log_sigma = tape.clamp(ls, LOG_SIGMA_RANGE.0, LOG_SIGMA_RANGE.1);
    let r = tape.slice_cols(raw, 4, 1)?;
    let r = tape.clamp(r, -RHO_LOGIT_BOUND, RHO_LOGIT_BOUND);
    let rho = tape.tanh(r);
    let pi_hat = tape.slice_cols(raw, 5, 1)?;
    let lse = tape.segment_logsumexp(pi_hat, segments.clone(), n_graphs)?;
    let lse = tape.gather_rows(lse, segments.clone())?;
    let log_pi = tape.sub(pi_hat, lse)?;
    let anchor = tape.constant(anchor);
    let mu = tape.add(anchor, delta)?;
    Ok(MixtureVars {
        log_pi,
        mu,
        log_sigma,
        rho,
        delta,
        segments,
        n_graphs,
        rows: None,
    })
}

/// ODN: per-type linear head on final-timestep node vectors, each node
/// anchoring one component at its own position.
pub fn predict_params(f: &mut Forward, b: &GraphBatch, x: Var) -> Result<MixtureVars> {
    let xl = f.tape.gather_rows(x, b.last.clone())?;
    let raw = f.typed_linear(xl, &b.last_type_rows, "odn.{type}")?;
    let k = b.last.len();

    let mut keep = Vec::with_capacity(k);
    let mut anchor = Vec::with_capacity(2 * k);
    for &row in b.last.iter() {
        keep.push(if b.nodes[row].node_type == NodeType::Structure {
            0.0
        } else {
            1.0
        });
        let (px, py) = b.positions[row];
        anchor.push(px);
        anchor.push(py);
    }
    let dmax = f.config.delta_max;
    let tape = &mut f.tape;
    let dhat = tape.slice_cols(raw, 0, 2)?;
    let t = tape.tanh(dhat);
    let bounded = tape.scale(t, dmax);
    let keep_col = tape.constant(Tensor::column(keep.clone()));
    let free_col = tape.constant(Tensor::column(keep.iter().map(|v| 1.0 - v).collect()));
    let a = tape.mul_col(bounded, keep_col)?;
    let c = tape.mul_col(dhat, free_col)?;
    let delta = tape.add(a, c)?;
    let mut mix = squash(
        tape,
        raw,
        delta,
        Tensor::from_matrix(k, 2, anchor)?,
        b.last_graph.clone(),
        b.n_graphs,
    )?;
    mix.rows = Some(b.last.clone());
    Ok(mix)
}

/// MDN ablation: mean-pool final-timestep nodes per graph and emit
/// `k_fixed` free components around the frame centre.
pub fn mdn_predict(f: &mut Forward, b: &GraphBatch, x: Var, k_fixed: usize) -> Result<MixtureVars> {
    let g = b.n_graphs;
    let xl = f.tape.gather_rows(x, b.last.clone())?;
    let pooled = f.tape.segment_sum(xl, b.last_graph.clone(), g)?;
    let mut counts = vec![0.0; g];
    for &gi in b.last_graph.iter() {
        counts[gi] += 1.0;
    }
    let w = f.param("mdn.w")?;
    let bias = f.param("mdn.b")?;
    let tape = &mut f.tape;
    let inv = tape.constant(Tensor::column(counts.iter().map(|c| 1.0 / c).collect()));
    let pooled = tape.mul_col(pooled, inv)?;
    let out = tape.linear(pooled, w, Some(bias))?;
    let raw = tape.reshape(out, g * k_fixed, 6)?;
    let delta = tape.slice_cols(raw, 0, 2)?;
    let segments: Arc<[usize]> = (0..g * k_fixed).map(|i| i / k_fixed).collect();
    squash(tape, raw, delta, Tensor::filled(g * k_fixed, 2, 0.5), segments, g)
}

/// Head selected by the model configuration.
pub fn head_mixture(f: &mut Forward, b: &GraphBatch, x: Var) -> Result<MixtureVars> {
    match f.config.head {
        HeadKind::Odn => predict_params(f, b, x),
        HeadKind::Mdn { k } => mdn_predict(f, b, x, k),
    }
}

/// Mean NLL of the batch targets under `mix`, recorded on `tape`.
pub fn mixture_nll(tape: &mut Tape, mix: &MixtureVars, b: &GraphBatch) -> Result<Var> {
    let targets = b
        .targets
        .as_ref()
        .ok_or_else(|| Error::Contract("batch has no targets".into()))?;
    let k = mix.segments.len();
    let mut t = Vec::with_capacity(2 * k);
    for &g in mix.segments.iter() {
        t.push(targets[g].0);
        t.push(targets[g].1);
    }
    let t = tape.constant(Tensor::from_matrix(k, 2, t)?);
    let dx = tape.sub(t, mix.mu)?;
    let neg_ls = tape.scale(mix.log_sigma, -1.0);
    let inv_sigma = tape.exp(neg_ls);
    let z = tape.mul(dx, inv_sigma)?;
    let zx = tape.slice_cols(z, 0, 1)?;
    let zy = tape.slice_cols(z, 1, 1)?;
    let zx2 = tape.mul(zx, zx)?;
    let zy2 = tape.mul(zy, zy)?;
    let zxy = tape.mul(zx, zy)?;
    let rzxy = tape.mul(mix.rho, zxy)?;
    let rzxy2 = tape.scale(rzxy, 2.0);
    let q = tape.add(zx2, zy2)?;
    let q = tape.sub(q, rzxy2)?;
    // 1 − ρ² as (1 − ρ)(1 + ρ)
    let neg_rho = tape.scale(mix.rho, -1.0);
    let one_minus = tape.add_scalar(neg_rho, 1.0);
    let one_plus = tape.add_scalar(mix.rho, 1.0);
    let om = tape.mul(one_minus, one_plus)?;
    let log_om = tape.log(om);
    let neg_log_om = tape.scale(log_om, -1.0);
    let inv_om = tape.exp(neg_log_om);
    let quad = tape.mul(q, inv_om)?;
    let ones = tape.constant(Tensor::column(vec![1.0, 1.0]));
    let ls_sum = tape.matmul(mix.log_sigma, ones)?;

    let half_log_om = tape.scale(log_om, 0.5);
    let half_quad = tape.scale(quad, 0.5);
    let neg = tape.add(ls_sum, half_log_om)?;
    let neg = tape.add(neg, half_quad)?;
    let log_n = tape.scale(neg, -1.0);
    let log_n = tape.add_scalar(log_n, -(2.0 * PI).ln());
    let log_w = tape.add(mix.log_pi, log_n)?;
    let lse = tape.segment_logsumexp(log_w, mix.segments.clone(), mix.n_graphs)?;
    let lse = tape.clamp(lse, LOG_DENSITY_FLOOR, f64::INFINITY);
    let total = tape.sum(lse);
    Ok(tape.scale(total, -1.0 / mix.n_graphs as f64))
}
