use num_traits::Float;

use crate::encoders::{renormalize_row, EmbeddingTable, LayerGrad, Matrix, ModelParams, ProjectionLayer};
use crate::error::{Error, Result};
use crate::losses::TableGrad;

use super::Gradients;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// AdamW moments, shaped exactly like the parameters, and the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: ModelParams<f32>,
    pub second: ModelParams<f32>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams<f32>) -> Self {
        Self {
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }
}

/// One AdamW update of a single scalar at step `t` (1-based): decoupled
/// decay `θ(1 − lr·wd)` followed by the bias-corrected Adam step.
pub fn adamw_update<F: Float>(theta: &mut F, m: &mut F, v: &mut F, g: F, lr: F, wd: F, t: i32) {
    let c = |x: f64| F::from(x).unwrap();
    let (b1, b2) = (c(ADAM_BETA1), c(ADAM_BETA2));
    *m = b1 * *m + (F::one() - b1) * g;
    *v = b2 * *v + (F::one() - b2) * g * g;
    let m_hat = *m / (F::one() - b1.powi(t));
    let v_hat = *v / (F::one() - b2.powi(t));
    *theta = *theta * (F::one() - lr * wd) - lr * m_hat / (v_hat.sqrt() + c(ADAM_EPS));
}

struct Step {
    lr: f32,
    t: i32,
}

impl Step {
    fn slice(&self, p: &mut [f32], m: &mut [f32], v: &mut [f32], g: &[f64], wd: f32) {
        for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(g) {
            adamw_update(p, m, v, g as f32, self.lr, wd, self.t);
        }
    }

    fn layer(
        &self,
        p: &mut ProjectionLayer<f32>,
        m: &mut ProjectionLayer<f32>,
        v: &mut ProjectionLayer<f32>,
        g: &LayerGrad,
        wd: f32,
    ) -> Result<()> {
        for (a, b) in [(p.weight.data.len(), g.weight.len()), (p.bias.len(), g.bias.len())] {
            if a != b {
                return Err(Error::DimensionMismatch { expected: a, got: b });
            }
        }
        self.slice(
            &mut p.weight.data,
            &mut m.weight.data,
            &mut v.weight.data,
            &g.weight,
            wd,
        );
        self.slice(&mut p.bias, &mut m.bias, &mut v.bias, &g.bias, wd);
        Ok(())
    }

    /// Updates only the rows present in `g`.
    fn rows(
        &self,
        p: &mut Matrix<f32>,
        m: &mut Matrix<f32>,
        v: &mut Matrix<f32>,
        g: &std::collections::BTreeMap<usize, Vec<f64>>,
        wd: f32,
    ) -> Result<()> {
        for (&row, gr) in g {
            if row >= p.rows {
                return Err(Error::InvalidArgument(format!(
                    "gradient row {row} out of range ({} rows)",
                    p.rows
                )));
            }
            if gr.len() != p.cols {
                return Err(Error::DimensionMismatch {
                    expected: p.cols,
                    got: gr.len(),
                });
            }
            self.slice(p.row_mut(row), m.row_mut(row), v.row_mut(row), gr, wd);
        }
        Ok(())
    }

    fn tables(
        &self,
        p: &mut EmbeddingTable<f32>,
        m: &mut EmbeddingTable<f32>,
        v: &mut EmbeddingTable<f32>,
        g: &TableGrad,
        wd: f32,
    ) -> Result<()> {
        self.rows(&mut p.entity, &mut m.entity, &mut v.entity, &g.entity, wd)?;
        self.rows(&mut p.relation, &mut m.relation, &mut v.relation, &g.relation, wd)?;
        match (&mut p.normals, &mut m.normals, &mut v.normals) {
            (Some(pn), Some(mn), Some(vn)) => {
                self.rows(pn, mn, vn, &g.normals, wd)?;
                for &row in g.normals.keys() {
                    renormalize_row(pn.row_mut(row));
                }
            }
            _ if g.normals.is_empty() => {}
            _ => return Err(Error::InvalidArgument("normal gradient without TransH normals".into())),
        }
        Ok(())
    }
}

/// One AdamW step over every parameter. Dense layers are always updated;
/// table rows without a gradient are left untouched (no update, no decay).
/// Touched TransH normals are renormalized afterwards.
pub fn adamw_step(
    params: &mut ModelParams<f32>,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
    decay_embeddings: bool,
) -> Result<()> {
    if grads.fusion.len() != params.fusion.layers.len() {
        return Err(Error::DimensionMismatch {
            expected: params.fusion.layers.len(),
            got: grads.fusion.len(),
        });
    }
    state.step += 1;
    let step = Step {
        lr: lr as f32,
        t: i32::try_from(state.step).unwrap_or(i32::MAX),
    };
    let wd = weight_decay as f32;
    let (m, v) = (&mut state.first, &mut state.second);
    step.layer(&mut params.lp_img, &mut m.lp_img, &mut v.lp_img, &grads.lp_img, wd)?;
    step.layer(&mut params.lp_txt, &mut m.lp_txt, &mut v.lp_txt, &grads.lp_txt, wd)?;
    for (((p, mf), vf), g) in params
        .fusion
        .layers
        .iter_mut()
        .zip(&mut m.fusion.layers)
        .zip(&mut v.fusion.layers)
        .zip(&grads.fusion)
    {
        step.layer(p, mf, vf, g, wd)?;
    }
    let table_wd = if decay_embeddings { wd } else { 0.0 };
    step.tables(
        &mut params.tables,
        &mut m.tables,
        &mut v.tables,
        &grads.tables,
        table_wd,
    )
}

/// Sparse AdamW over the tables alone.
pub(crate) fn adamw_tables(
    table: &mut EmbeddingTable<f32>,
    first: &mut EmbeddingTable<f32>,
    second: &mut EmbeddingTable<f32>,
    grads: &TableGrad,
    step: u64,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let s = Step {
        lr: lr as f32,
        t: i32::try_from(step).unwrap_or(i32::MAX),
    };
    s.tables(table, first, second, grads, weight_decay as f32)
}

/// Cosine annealing from `base_lr` at step 0 to 0 at `total_steps`.
pub fn lr_at_step(step: u64, total_steps: u64, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let frac = (step.min(total_steps)) as f64 / total_steps as f64;
    (base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())).max(0.0)
}
