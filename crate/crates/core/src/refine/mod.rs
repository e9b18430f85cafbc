//! Iterative grasp refinement against the refinement objective (contact
//! energy + interpenetration + distance to an anchor grasp).
//!
//! Two refiners are provided: [`refine_direct`] runs backtracking gradient
//! descent in the grasp tangent space, [`refine_learned`] applies a trained
//! [`ResidualNet`] that predicts the tangent update in one forward pass.

mod learned;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use learned::{
    apply_delta, grasp_point_distances, refine_learned, train_residual, ResidualNet, ResidualNetConfig,
    ResidualSample, ResidualTrainConfig,
};

use crate::error::{Error, Result};
use crate::geometry::SurfaceModel;
use crate::handkin::{clamp_joints, raw_to_tangent_gradient, Grasp, HandModel, TANGENT_DIM};
use crate::losses::{refinement_loss_with_gradient, LossBreakdown, LossWeights, CONTACT_ENERGY_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    /// Backtracking gradient descent on the objective.
    #[default]
    Direct,
    /// One residual-network pass per iteration.
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Outer rounds; the anchor grasp is reset at the start of each.
    pub iterations: usize,
    /// Gradient steps per round (direct mode).
    pub inner_steps: usize,
    /// Initial step length in tangent units (m / rad).
    pub step_size: f64,
    /// Backtracking gives up below this step length.
    pub min_step: f64,
    pub mode: RefineMode,
    /// Contact-energy distance `T` (m).
    pub contact_threshold: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            inner_steps: 25,
            step_size: 1e-2,
            min_step: 1e-5,
            mode: RefineMode::Direct,
            contact_threshold: CONTACT_ENERGY_THRESHOLD,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.min_step > 0.0) || self.min_step > self.step_size {
            return Err(Error::Config(format!(
                "refine step sizes must satisfy 0 < min_step ≤ step_size, got {} and {}",
                self.min_step, self.step_size
            )));
        }
        if !(self.contact_threshold > 0.0) {
            return Err(Error::Config(format!("contact_threshold must be positive, got {}", self.contact_threshold)));
        }
        Ok(())
    }
}

/// One accepted objective value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// 0 for the value at the start of the iteration.
    pub step: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug)]
pub struct Refined {
    pub grasp: Grasp,
    pub trace: Vec<TraceEntry>,
    /// Set when refinement stopped on a numerical failure; `grasp` is then
    /// the last valid iterate.
    pub failure: Option<Error>,
}

/// Gradient descent over the 26-dim grasp tangent. Every step moves along
/// the normalized negative gradient and is accepted only if the objective
/// strictly decreases, halving the step from `step_size` down to
/// `min_step`; the trace is therefore non-increasing.
pub fn refine_direct(
    model: &Arc<HandModel>,
    grasp: &Grasp,
    object: &SurfaceModel,
    weights: &LossWeights,
    cfg: &RefineConfig,
) -> Result<Refined> {
    cfg.validate()?;
    let mut g = Grasp::new(grasp.pose, clamp_joints(model, &grasp.joints));
    let mut trace = Vec::new();
    let eval = |g: &Grasp, anchor: &Grasp| -> Result<(LossBreakdown, [f64; TANGENT_DIM])> {
        let (b, raw) = refinement_loss_with_gradient(model, g, anchor, object, weights, cfg.contact_threshold)?;
        let t = raw_to_tangent_gradient(g, &raw);
        if t.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { term: "refinement gradient".into() });
        }
        Ok((b, t))
    };
    for it in 0..cfg.iterations {
        let anchor = g.clone();
        let (mut b, mut grad) = match eval(&g, &anchor) {
            Ok(v) => v,
            Err(e) => return Ok(Refined { grasp: g, trace, failure: Some(e) }),
        };
        trace.push(TraceEntry { iteration: it, step: 0, loss: b });
        for step in 1..=cfg.inner_steps {
            let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            let mut alpha = cfg.step_size;
            let mut accepted = false;
            while alpha >= cfg.min_step {
                let delta: Vec<f64> = grad.iter().map(|x| -alpha * x / norm).collect();
                let moved = g.retract(&delta);
                let cand = Grasp::new(moved.pose, clamp_joints(model, &moved.joints));
                match eval(&cand, &anchor) {
                    Ok((cb, cg)) if cb.total < b.total => {
                        g = cand;
                        b = cb;
                        grad = cg;
                        accepted = true;
                        break;
                    }
                    Ok(_) => alpha *= 0.5,
                    Err(e) => return Ok(Refined { grasp: g, trace, failure: Some(e) }),
                }
            }
            if !accepted {
                break;
            }
            trace.push(TraceEntry { iteration: it, step, loss: b });
        }
    }
    Ok(Refined { grasp: g, trace, failure: None })
}

pub const TRACE_HEADER: &str = "iteration,step,ce,p,d,total";

/// Writes a trace as CSV with [`TRACE_HEADER`] columns.
pub fn write_trace(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for t in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.iteration, t.step, t.loss.ce, t.loss.p, t.loss.d, t.loss.total
        ));
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
