use crate::encoders::{
    encode_entity_backward, encode_entity_raw, fuse_backward, fuse_cached, project_backward, project_cached, LayerGrad,
    ModelParams, Scalar,
};
use crate::error::{Error, Result};
use crate::losses::{
    accumulate, ke_loss, proxy_loss, symmetric_contrastive_loss, symmetric_contrastive_with_grad, LossBreakdown,
    LossConfig, TableGrad,
};

use super::Batch;

/// Gradients of the total loss. Dense layers are full buffers; table
/// gradients hold only the rows the batch touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub lp_img: LayerGrad,
    pub lp_txt: LayerGrad,
    pub fusion: Vec<LayerGrad>,
    pub tables: TableGrad,
}

impl Gradients {
    pub fn zeros_like<T: Scalar>(params: &ModelParams<T>) -> Self {
        Self {
            lp_img: LayerGrad::zeros_like(&params.lp_img),
            lp_txt: LayerGrad::zeros_like(&params.lp_txt),
            fusion: params.fusion.layers.iter().map(LayerGrad::zeros_like).collect(),
            tables: TableGrad::default(),
        }
    }

    /// Same order as [`ModelParams::tensors`]; table entries are sparse so
    /// they are not included.
    pub(crate) fn dense(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            &self.lp_img.weight,
            &self.lp_img.bias,
            &self.lp_txt.weight,
            &self.lp_txt.bias,
        ];
        for l in &self.fusion {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }
}

fn finite(v: f64, term: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss(term))
    }
}

fn check_batch(batch: &Batch) -> Result<()> {
    let n = batch.len();
    let lens = [
        batch.input_image_raws.len(),
        batch.input_text_raws.len(),
        batch.entity_text_raws.len(),
        batch.entity_lead_raws.len(),
        batch.ke.len(),
    ];
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(&bad) = lens.iter().find(|&&l| l != n) {
        return Err(Error::DimensionMismatch { expected: n, got: bad });
    }
    Ok(())
}

/// Loss of one batch without gradients.
pub fn forward_loss<T: Scalar>(params: &ModelParams<T>, batch: &Batch, cfg: &LossConfig) -> Result<LossBreakdown> {
    run(params, batch, cfg, false).map(|(l, _)| l)
}

/// Loss of one batch and its exact gradient with respect to every
/// trainable parameter. Raw embeddings are inputs and get no gradient.
pub fn forward_backward<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let (loss, grads) = run(params, batch, cfg, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

fn run<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    cfg.validate()?;
    check_batch(batch)?;
    let n = batch.len();

    // Query side: z_input = fuse(LP₁(image), LP₂(text)).
    let mut p_cache = Vec::with_capacity(n);
    let mut q_cache = Vec::with_capacity(n);
    let mut f_cache = Vec::with_capacity(n);
    for i in 0..n {
        let p = project_cached(&batch.input_image_raws[i], &params.lp_img)?;
        let q = project_cached(&batch.input_text_raws[i], &params.lp_txt)?;
        f_cache.push(fuse_cached(&p.out, &q.out, &params.fusion)?);
        p_cache.push(p);
        q_cache.push(q);
    }
    let z: Vec<&[f64]> = f_cache.iter().map(|f| f.out.as_slice()).collect();
    let nodes = batch
        .labels
        .iter()
        .map(|&row| params.tables.lookup_entity(row).map(crate::encoders::to_f64))
        .collect::<Result<Vec<_>>>()?;

    // Entity side.
    let encs = (0..n)
        .map(|i| {
            encode_entity_raw(
                &batch.entity_text_raws[i],
                &batch.entity_lead_raws[i],
                &params.lp_img,
                &params.lp_txt,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let z_text: Vec<&[f64]> = encs.iter().map(|e| e.text.out.as_slice()).collect();
    let z_image: Vec<&[f64]> = encs.iter().map(|e| e.image_out.as_slice()).collect();

    let mut grads = want_grad.then(|| Gradients::zeros_like(params));

    let alignment;
    let proxy;
    let ke;
    let d = params.d_e();
    let mut g_z = vec![vec![0.0; d]; n];
    let mut g_text = vec![vec![0.0; d]; n];
    let mut g_image = vec![vec![0.0; d]; n];
    match grads.as_mut() {
        Some(g) => {
            let (la, gz, gn) = symmetric_contrastive_with_grad(&z, &nodes, cfg.tau, 1.0)?;
            alignment = finite(la, "alignment")?;
            g_z = gz;
            for (&row, gi) in batch.labels.iter().zip(&gn) {
                accumulate(&mut g.tables.entity, row, 1.0, gi);
            }
            if cfg.beta1 != 0.0 {
                let w = 0.5 * cfg.beta1;
                let (lt, gn_t, gt) = symmetric_contrastive_with_grad(&nodes, &z_text, cfg.tau, w)?;
                let (li, gn_i, gi) = symmetric_contrastive_with_grad(&nodes, &z_image, cfg.tau, w)?;
                proxy = finite(0.5 * lt + 0.5 * li, "proxy")?;
                for (k, &row) in batch.labels.iter().enumerate() {
                    accumulate(&mut g.tables.entity, row, 1.0, &gn_t[k]);
                    accumulate(&mut g.tables.entity, row, 1.0, &gn_i[k]);
                }
                g_text = gt;
                g_image = gi;
            } else {
                proxy = finite(proxy_loss(&nodes, &z_text, &z_image, cfg.tau)?, "proxy")?;
            }
            let weight = (cfg.beta2 != 0.0).then_some(cfg.beta2);
            ke = finite(
                ke_loss(&batch.ke, &params.tables, cfg, weight.map(|w| (&mut g.tables, w)))?,
                "ke",
            )?;
        }
        None => {
            alignment = finite(symmetric_contrastive_loss(&z, &nodes, cfg.tau)?, "alignment")?;
            proxy = finite(proxy_loss(&nodes, &z_text, &z_image, cfg.tau)?, "proxy")?;
            ke = finite(ke_loss(&batch.ke, &params.tables, cfg, None)?, "ke")?;
        }
    }
    let loss = LossBreakdown::new(alignment, proxy, ke, cfg.beta1, cfg.beta2);
    finite(loss.total, "total")?;

    if let Some(g) = grads.as_mut() {
        for i in 0..n {
            let (gp, gq) = fuse_backward(&params.fusion, &f_cache[i], &g_z[i], &mut g.fusion);
            project_backward(
                &params.lp_img,
                &batch.input_image_raws[i],
                &p_cache[i],
                &gp,
                &mut g.lp_img,
            );
            project_backward(
                &params.lp_txt,
                &batch.input_text_raws[i],
                &q_cache[i],
                &gq,
                &mut g.lp_txt,
            );
            if cfg.beta1 != 0.0 {
                encode_entity_backward(
                    &encs[i],
                    &batch.entity_text_raws[i],
                    &batch.entity_lead_raws[i],
                    &params.lp_img,
                    &params.lp_txt,
                    &g_text[i],
                    &g_image[i],
                    &mut g.lp_img,
                    &mut g.lp_txt,
                );
            }
        }
    }
    Ok((loss, grads))
}
