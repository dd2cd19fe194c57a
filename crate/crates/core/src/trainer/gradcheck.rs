use std::collections::{BTreeMap, BTreeSet};

use crate::encoders::ModelParams;
use crate::error::{Error, Result};
use crate::losses::LossConfig;

use super::{forward_backward, forward_loss, Batch};

/// Outcome of a finite-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked scalars of `|a − n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative of the worst scalar.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

/// Max relative error between the analytic gradient and central finite
/// differences of the total loss, over every scalar the batch touches.
pub fn grad_check(params: &ModelParams<f64>, batch: &Batch, cfg: &LossConfig, fd_step: f64) -> Result<f64> {
    Ok(grad_check_with(params, batch, cfg, fd_step, false)?.max_rel_error)
}

/// [`grad_check`] with a report. `corrupt` doubles the analytic gradient of
/// the image projection weight before comparing, which must make the
/// check fail.
pub fn grad_check_with(
    params: &ModelParams<f64>,
    batch: &Batch,
    cfg: &LossConfig,
    fd_step: f64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(Error::InvalidArgument(format!("fd step must be > 0, got {fd_step}")));
    }
    let (_, grads) = forward_backward(params, batch, cfg)?;

    let names: Vec<String> = params.tensors().into_iter().map(|(n, _, _)| n).collect();
    let d = params.d_e();
    let mut scalars: Vec<(usize, usize, f64)> = Vec::new();
    for (t, g) in grads.dense().into_iter().enumerate() {
        let scale = if corrupt && t == 0 { 2.0 } else { 1.0 };
        scalars.extend(g.iter().enumerate().map(|(i, &v)| (t, i, scale * v)));
    }

    let mut entity_rows: BTreeSet<usize> = batch.labels.iter().copied().collect();
    let mut relation_rows = BTreeSet::new();
    for bundle in &batch.ke {
        for t in bundle.positives.iter().chain(bundle.negatives.iter().flatten()) {
            entity_rows.insert(t.head);
            entity_rows.insert(t.tail);
            relation_rows.insert(t.relation);
        }
    }
    let table_start = grads.dense().len();
    let mut push_rows = |t: usize, rows: &BTreeSet<usize>, g: &BTreeMap<usize, Vec<f64>>| {
        for &r in rows {
            for c in 0..d {
                let a = g.get(&r).map_or(0.0, |row| row[c]);
                scalars.push((t, r * d + c, a));
            }
        }
    };
    push_rows(table_start, &entity_rows, &grads.tables.entity);
    push_rows(table_start + 1, &relation_rows, &grads.tables.relation);
    if params.tables.normals.is_some() {
        push_rows(table_start + 2, &relation_rows, &grads.tables.normals);
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: scalars.len(),
    };
    for (t, i, analytic) in scalars {
        let orig = set(&mut work, t, i, 0.0);
        set(&mut work, t, i, orig + fd_step);
        let plus = forward_loss(&work, batch, cfg);
        set(&mut work, t, i, orig - fd_step);
        let minus = forward_loss(&work, batch, cfg);
        set(&mut work, t, i, orig);
        let numeric = (plus?.total - minus?.total) / (2.0 * fd_step);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel;
            report.worst = Some((names[t].clone(), i));
            report.worst_values = (analytic, numeric);
        }
    }
    Ok(report)
}

fn set(params: &mut ModelParams<f64>, tensor: usize, index: usize, value: f64) -> f64 {
    std::mem::replace(&mut params.tensors_mut()[tensor].1[index], value)
}
