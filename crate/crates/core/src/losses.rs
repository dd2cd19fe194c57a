//! Loss kernels and knowledge-graph score functions, each with an analytic
//! gradient.
//!
//! Similarities inside the contrastive losses are cosine. For a similarity
//! matrix `S` (rows from `A`, columns from `B`) the directional loss is
//!
//! ```text
//! ℓ(A, B) = (1/N) Σ_i [ logsumexp_j(S_ij / τ) − S_ii / τ ]
//! ```
//!
//! and the symmetric loss averages `ℓ(A, B)` and `ℓ(B, A)`.
//!
//! The knowledge-embedding loss follows the per-entity / per-triple nesting:
//! every batch entity averages over its sampled triples, every triple term is
//! scaled by `1/|negatives|`, and the batch is summed or averaged according
//! to [`KeReduction`]. In the softmax form the denominator holds only the
//! negatives unless `include_positive_in_denominator` is set, so the loss can
//! be negative.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoders::{to_f64, EmbeddingTable, Scalar};
use crate::error::{Error, Result};
use crate::linalg::{self, cosine_with_grad, logsumexp, softmax};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KgeMethod {
    /// cos(h + r, t)
    #[default]
    TranseCos,
    /// ‖h + r − t‖₂, a distance trained with a margin loss.
    TranseEuclid,
    /// cos(h⊥ + r, t⊥) on the hyperplane with unit normal w_r.
    Transh,
    /// Σ h·r·t
    Distmult,
}

impl KgeMethod {
    pub fn is_distance(self) -> bool {
        self == KgeMethod::TranseEuclid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KeReduction {
    Sum,
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub kge_method: KgeMethod,
    pub margin: f64,
    pub ke_batch_reduction: KeReduction,
    pub include_positive_in_denominator: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            beta1: 1.0,
            beta2: 1.0,
            kge_method: KgeMethod::TranseCos,
            margin: 1.0,
            ke_batch_reduction: KeReduction::Mean,
            include_positive_in_denominator: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) {
            return Err(Error::Config("beta1 and beta2 must be >= 0".into()));
        }
        Ok(())
    }
}

/// Loss values of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub alignment: f64,
    pub proxy: f64,
    pub ke: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(alignment: f64, proxy: f64, ke: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            alignment,
            proxy,
            ke,
            total: total_loss(alignment, proxy, ke, beta1, beta2),
        }
    }
}

pub fn total_loss(alignment: f64, proxy: f64, ke: f64, beta1: f64, beta2: f64) -> f64 {
    alignment + beta1 * proxy + beta2 * ke
}

struct SimMatrix {
    n: usize,
    a_hat: Vec<Vec<f64>>,
    b_hat: Vec<Vec<f64>>,
    a_norm: Vec<f64>,
    b_norm: Vec<f64>,
    /// `s[i][j] = cos(a_i, b_j)`
    s: Vec<Vec<f64>>,
}

fn sim_matrix<V: AsRef<[f64]>, W: AsRef<[f64]>>(a: &[V], b: &[W]) -> Result<SimMatrix> {
    if a.is_empty() {
        return Err(Error::InvalidArgument("contrastive loss over an empty set".into()));
    }
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "contrastive sets differ in size: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dim = a[0].as_ref().len();
    let unit = |v: &[f64]| -> Result<(Vec<f64>, f64)> {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        linalg::normalize(v, "contrastive input")
    };
    let (a_hat, a_norm): (Vec<_>, Vec<_>) = a
        .iter()
        .map(|v| unit(v.as_ref()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let (b_hat, b_norm): (Vec<_>, Vec<_>) = b
        .iter()
        .map(|v| unit(v.as_ref()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let s = a_hat
        .iter()
        .map(|ai| b_hat.iter().map(|bj| linalg::dot(ai, bj)).collect())
        .collect();
    Ok(SimMatrix {
        n: a.len(),
        a_hat,
        b_hat,
        a_norm,
        b_norm,
        s,
    })
}

/// `ℓ(A, B)` read off rows of `s` (or columns when `transpose`).
fn directional(m: &SimMatrix, tau: f64, transpose: bool) -> f64 {
    let n = m.n;
    let mut acc = 0.0;
    let mut logits = vec![0.0; n];
    for i in 0..n {
        for (j, l) in logits.iter_mut().enumerate() {
            *l = if transpose { m.s[j][i] } else { m.s[i][j] } / tau;
        }
        acc += logsumexp(&logits) - logits[i];
    }
    acc / n as f64
}

/// Contrastive loss `ℓ(A, B)` with cosine similarity.
pub fn contrastive_loss<V: AsRef<[f64]>, W: AsRef<[f64]>>(a: &[V], b: &[W], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(directional(&sim_matrix(a, b)?, tau, false))
}

/// `½ (ℓ(A, B) + ℓ(B, A))`.
pub fn symmetric_contrastive_loss<V: AsRef<[f64]>, W: AsRef<[f64]>>(a: &[V], b: &[W], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let m = sim_matrix(a, b)?;
    Ok(0.5 * (directional(&m, tau, false) + directional(&m, tau, true)))
}

/// Symmetric contrastive loss and the gradients of `weight · ℓ_sym` with
/// respect to every vector of `A` and `B`.
pub fn symmetric_contrastive_with_grad<V: AsRef<[f64]>, W: AsRef<[f64]>>(
    a: &[V],
    b: &[W],
    tau: f64,
    weight: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_tau(tau)?;
    let m = sim_matrix(a, b)?;
    let n = m.n;
    let loss = 0.5 * (directional(&m, tau, false) + directional(&m, tau, true));

    // dL/dS
    let coef = weight * 0.5 / (n as f64 * tau);
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| m.s[i][j] / tau).collect();
        let col: Vec<f64> = (0..n).map(|j| m.s[j][i] / tau).collect();
        let p_row = softmax(&row);
        let p_col = softmax(&col);
        for j in 0..n {
            g[i][j] += coef * p_row[j];
            g[j][i] += coef * p_col[j];
        }
        g[i][i] -= 2.0 * coef;
    }

    let dim = m.a_hat[0].len();
    let mut ga = vec![vec![0.0; dim]; n];
    let mut gb = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let gij = g[i][j];
            if gij == 0.0 {
                continue;
            }
            let sij = m.s[i][j];
            // d cos(a_i, b_j) / d a_i = (b̂_j − s â_i) / |a_i|
            let ca = gij / m.a_norm[i];
            let cb = gij / m.b_norm[j];
            for k in 0..dim {
                ga[i][k] += ca * (m.b_hat[j][k] - sij * m.a_hat[i][k]);
                gb[j][k] += cb * (m.a_hat[i][k] - sij * m.b_hat[j][k]);
            }
        }
    }
    Ok((loss, ga, gb))
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")))
    }
}

/// Alignment loss between fused query embeddings and the node embeddings of
/// their labels.
pub fn alignment_loss<V: AsRef<[f64]>, W: AsRef<[f64]>>(z_inputs: &[V], node_embs: &[W], tau: f64) -> Result<f64> {
    symmetric_contrastive_loss(z_inputs, node_embs, tau)
}

/// Proxy loss: node embeddings against the entity text and image encodings,
/// weighted ½ each.
pub fn proxy_loss<V: AsRef<[f64]>, W: AsRef<[f64]>, X: AsRef<[f64]>>(
    node_embs: &[V],
    entity_text: &[W],
    entity_image: &[X],
    tau: f64,
) -> Result<f64> {
    let text = symmetric_contrastive_loss(node_embs, entity_text, tau)?;
    let image = symmetric_contrastive_loss(node_embs, entity_image, tau)?;
    Ok(0.5 * text + 0.5 * image)
}

/// Gradient of a triple score with respect to its arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrad {
    pub head: Vec<f64>,
    pub relation: Vec<f64>,
    pub tail: Vec<f64>,
    pub normal: Option<Vec<f64>>,
}

fn check_score_dims(h: &[f64], r: &[f64], t: &[f64], w: Option<&[f64]>) -> Result<()> {
    for v in [r, t].into_iter().chain(w) {
        if v.len() != h.len() {
            return Err(Error::DimensionMismatch {
                expected: h.len(),
                got: v.len(),
            });
        }
    }
    Ok(())
}

/// Scores a triple. TransE-Euclid returns a distance (lower is better);
/// every other method returns a similarity. TransH requires a unit normal.
pub fn score_triple(method: KgeMethod, h: &[f64], r: &[f64], t: &[f64], w: Option<&[f64]>) -> Result<f64> {
    if method == KgeMethod::Transh {
        let w = w.ok_or_else(|| Error::InvalidArgument("TransH needs a hyperplane normal".into()))?;
        let n = linalg::norm(w);
        if (n - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidArgument(format!(
                "TransH normal must be unit length, got norm {n}"
            )));
        }
    }
    Ok(score_with_grad(method, h, r, t, w)?.0)
}

fn hyperplane_project(x: &[f64], w: &[f64]) -> Vec<f64> {
    let c = linalg::dot(w, x);
    x.iter().zip(w).map(|(xi, wi)| xi - c * wi).collect()
}

/// Score and its gradient. The normal is used as given (not renormalized),
/// so the returned normal gradient is the unconstrained one.
pub fn score_with_grad(
    method: KgeMethod,
    h: &[f64],
    r: &[f64],
    t: &[f64],
    w: Option<&[f64]>,
) -> Result<(f64, ScoreGrad)> {
    check_score_dims(h, r, t, w)?;
    match method {
        KgeMethod::TranseCos => {
            let a = linalg::add(h, r);
            let (s, ga, gt) = cosine_with_grad(&a, t)?;
            Ok((
                s,
                ScoreGrad {
                    head: ga.clone(),
                    relation: ga,
                    tail: gt,
                    normal: None,
                },
            ))
        }
        KgeMethod::TranseEuclid => {
            let diff: Vec<f64> = h.iter().zip(r).zip(t).map(|((a, b), c)| a + b - c).collect();
            let d = linalg::norm(&diff);
            let g = if d > 0.0 {
                linalg::scale(&diff, 1.0 / d)
            } else {
                vec![0.0; diff.len()]
            };
            Ok((
                d,
                ScoreGrad {
                    head: g.clone(),
                    relation: g.clone(),
                    tail: linalg::scale(&g, -1.0),
                    normal: None,
                },
            ))
        }
        KgeMethod::Transh => {
            let w = w.ok_or_else(|| Error::InvalidArgument("TransH needs a hyperplane normal".into()))?;
            let h_perp = hyperplane_project(h, w);
            let t_perp = hyperplane_project(t, w);
            let a = linalg::add(&h_perp, r);
            let (s, ga, gtp) = cosine_with_grad(&a, &t_perp)?;
            // x⊥ = x − (wᵀx) w, so for upstream g:
            //   dx = g − (wᵀg) w,   dw = −(wᵀx) g − (gᵀw) x
            let back_x = |g: &[f64]| hyperplane_project(g, w);
            let back_w = |g: &[f64], x: &[f64]| -> Vec<f64> {
                let wx = linalg::dot(w, x);
                let gw = linalg::dot(g, w);
                g.iter().zip(x).map(|(gi, xi)| -wx * gi - gw * xi).collect()
            };
            let normal = linalg::add(&back_w(&ga, h), &back_w(&gtp, t));
            Ok((
                s,
                ScoreGrad {
                    head: back_x(&ga),
                    relation: ga,
                    tail: back_x(&gtp),
                    normal: Some(normal),
                },
            ))
        }
        KgeMethod::Distmult => {
            let s = h.iter().zip(r).zip(t).map(|((a, b), c)| a * b * c).sum();
            Ok((
                s,
                ScoreGrad {
                    head: r.iter().zip(t).map(|(b, c)| b * c).collect(),
                    relation: h.iter().zip(t).map(|(a, c)| a * c).collect(),
                    tail: h.iter().zip(r).map(|(a, b)| a * b).collect(),
                    normal: None,
                },
            ))
        }
    }
}

/// Table rows of a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TripleRows {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// One batch entity's sampled triples and, per triple, its negatives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeBundle {
    pub positives: Vec<TripleRows>,
    pub negatives: Vec<Vec<TripleRows>>,
}

/// Sparse gradient rows for the embedding tables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableGrad {
    pub entity: BTreeMap<usize, Vec<f64>>,
    pub relation: BTreeMap<usize, Vec<f64>>,
    pub normals: BTreeMap<usize, Vec<f64>>,
}

pub(crate) fn accumulate(map: &mut BTreeMap<usize, Vec<f64>>, row: usize, c: f64, g: &[f64]) {
    let slot = map.entry(row).or_insert_with(|| vec![0.0; g.len()]);
    linalg::axpy(slot, c, g);
}

impl TableGrad {
    fn add_score(&mut self, t: &TripleRows, c: f64, g: &ScoreGrad) {
        accumulate(&mut self.entity, t.head, c, &g.head);
        accumulate(&mut self.relation, t.relation, c, &g.relation);
        accumulate(&mut self.entity, t.tail, c, &g.tail);
        if let Some(n) = &g.normal {
            accumulate(&mut self.normals, t.relation, c, n);
        }
    }
}

struct TableView<'a, T> {
    table: &'a EmbeddingTable<T>,
    method: KgeMethod,
}

impl<T: Scalar> TableView<'_, T> {
    fn score(&self, t: &TripleRows) -> Result<(f64, ScoreGrad)> {
        let h = to_f64(self.table.lookup_entity(t.head)?);
        let r = to_f64(self.table.lookup_relation(t.relation)?);
        let tl = to_f64(self.table.lookup_entity(t.tail)?);
        let w = match self.method {
            KgeMethod::Transh => {
                Some(to_f64(self.table.lookup_normal(t.relation)?.ok_or_else(|| {
                    Error::InvalidArgument("TransH scoring without hyperplane normals".into())
                })?))
            }
            _ => None,
        };
        score_with_grad(self.method, &h, &r, &tl, w.as_deref())
    }
}

fn reduce(sum: f64, n: usize, reduction: KeReduction) -> f64 {
    match reduction {
        KeReduction::Sum => sum,
        KeReduction::Mean => sum / n as f64,
    }
}

/// Knowledge-embedding loss for `cfg.kge_method`, dispatching to the
/// softmax or margin form. When `grad` is given, gradients of
/// `weight · L_KE` are accumulated into it.
pub fn ke_loss<T: Scalar>(
    bundles: &[KeBundle],
    table: &EmbeddingTable<T>,
    cfg: &LossConfig,
    grad: Option<(&mut TableGrad, f64)>,
) -> Result<f64> {
    if cfg.kge_method.is_distance() {
        ke_margin_impl(bundles, table, cfg, grad)
    } else {
        ke_softmax_impl(bundles, table, cfg, grad)
    }
}

/// Softmax form of the knowledge-embedding loss.
pub fn ke_loss_softmax<T: Scalar>(bundles: &[KeBundle], table: &EmbeddingTable<T>, cfg: &LossConfig) -> Result<f64> {
    if cfg.kge_method.is_distance() {
        return Err(Error::InvalidArgument(
            "softmax KE loss needs a similarity score, not transe_euclid".into(),
        ));
    }
    ke_softmax_impl(bundles, table, cfg, None)
}

/// Margin form of the knowledge-embedding loss (TransE with Euclidean
/// distance).
pub fn ke_loss_margin<T: Scalar>(
    bundles: &[KeBundle],
    table: &EmbeddingTable<T>,
    margin: f64,
    reduction: KeReduction,
) -> Result<f64> {
    let cfg = LossConfig {
        kge_method: KgeMethod::TranseEuclid,
        margin,
        ke_batch_reduction: reduction,
        ..LossConfig::default()
    };
    ke_margin_impl(bundles, table, &cfg, None)
}

fn ke_softmax_impl<T: Scalar>(
    bundles: &[KeBundle],
    table: &EmbeddingTable<T>,
    cfg: &LossConfig,
    mut grad: Option<(&mut TableGrad, f64)>,
) -> Result<f64> {
    check_tau(cfg.tau)?;
    if bundles.is_empty() {
        return Ok(0.0);
    }
    let view = TableView {
        table,
        method: cfg.kge_method,
    };
    let tau = cfg.tau;
    let batch_scale = reduce(1.0, bundles.len(), cfg.ke_batch_reduction);
    let mut total = 0.0;
    for bundle in bundles {
        if bundle.positives.is_empty() {
            continue;
        }
        let per_triple = 1.0 / bundle.positives.len() as f64;
        let mut entity_sum = 0.0;
        for (pos, negs) in bundle.positives.iter().zip(&bundle.negatives) {
            if negs.is_empty() {
                return Err(Error::InvalidArgument("triple without negatives".into()));
            }
            let k = negs.len() as f64;
            let (sp, gp) = view.score(pos)?;
            let scored = negs.iter().map(|n| view.score(n)).collect::<Result<Vec<_>>>()?;
            let mut logits: Vec<f64> = scored.iter().map(|(s, _)| s / tau).collect();
            if cfg.include_positive_in_denominator {
                logits.push(sp / tau);
            }
            let term = (logsumexp(&logits) - sp / tau) / k;
            entity_sum += term;

            if let Some((g, weight)) = grad.as_mut() {
                let c = *weight * batch_scale * per_triple / k / tau;
                let p = softmax(&logits);
                let mut d_pos = -1.0;
                if cfg.include_positive_in_denominator {
                    d_pos += p[negs.len()];
                }
                g.add_score(pos, c * d_pos, &gp);
                for ((neg, (_, gn)), pk) in negs.iter().zip(&scored).zip(&p) {
                    g.add_score(neg, c * pk, gn);
                }
            }
        }
        total += per_triple * entity_sum;
    }
    Ok(reduce(total, bundles.len(), cfg.ke_batch_reduction))
}

fn ke_margin_impl<T: Scalar>(
    bundles: &[KeBundle],
    table: &EmbeddingTable<T>,
    cfg: &LossConfig,
    mut grad: Option<(&mut TableGrad, f64)>,
) -> Result<f64> {
    if bundles.is_empty() {
        return Ok(0.0);
    }
    let view = TableView {
        table,
        method: KgeMethod::TranseEuclid,
    };
    let batch_scale = reduce(1.0, bundles.len(), cfg.ke_batch_reduction);
    let mut total = 0.0;
    for bundle in bundles {
        if bundle.positives.is_empty() {
            continue;
        }
        let per_triple = 1.0 / bundle.positives.len() as f64;
        let mut entity_sum = 0.0;
        for (pos, negs) in bundle.positives.iter().zip(&bundle.negatives) {
            if negs.is_empty() {
                return Err(Error::InvalidArgument("triple without negatives".into()));
            }
            let k = negs.len() as f64;
            let (dp, gp) = view.score(pos)?;
            let mut triple_sum = 0.0;
            for neg in negs {
                let (dn, gn) = view.score(neg)?;
                let hinge = cfg.margin + dp - dn;
                if hinge > 0.0 {
                    triple_sum += hinge;
                    if let Some((g, weight)) = grad.as_mut() {
                        let c = *weight * batch_scale * per_triple / k;
                        g.add_score(pos, c, &gp);
                        g.add_score(neg, -c, &gn);
                    }
                }
            }
            entity_sum += triple_sum / k;
        }
        total += per_triple * entity_sum;
    }
    Ok(reduce(total, bundles.len(), cfg.ke_batch_reduction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Matrix;

    const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn ortho2() -> Vec<Vec<f64>> {
        vec![vec![1.0, 0.0], vec![0.0, 1.0]]
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let l = contrastive_loss(&[vec![1.0, 2.0]], &[vec![-3.0, 0.5]], 0.07).unwrap();
        assert!(l.abs() < 1e-15);
    }

    #[test]
    fn identical_vectors_give_ln_n() {
        for n in [2usize, 4, 8] {
            let a = vec![vec![0.3, -0.2, 0.9]; n];
            let l = contrastive_loss(&a, &a, 0.07).unwrap();
            assert!((l - (n as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn orthonormal_pair_hand_value() {
        // softmax row (e, 1): −ln(e / (e + 1)) = ln(1 + e⁻¹)
        let expect = (1.0 + (-1.0f64).exp()).ln();
        let a = ortho2();
        assert!((contrastive_loss(&a, &a, 1.0).unwrap() - expect).abs() < 1e-12);
        assert!((symmetric_contrastive_loss(&a, &a, 1.0).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn asymmetric_two_by_two_hand_value() {
        let a = ortho2();
        let b = vec![vec![1.0, 0.0], vec![SQRT_HALF, SQRT_HALF]];
        // S = [[1, h], [0, h]], h = √2/2
        let h = SQRT_HALF;
        let ab = 0.5 * ((-(1f64.exp() / (1f64.exp() + h.exp())).ln()) + (-(h.exp() / (1.0 + h.exp())).ln()));
        let ba = 0.5 * ((-(1f64.exp() / (1f64.exp() + 1.0)).ln()) + (-(h.exp() / (h.exp() + h.exp())).ln()));
        assert!((contrastive_loss(&a, &b, 1.0).unwrap() - ab).abs() < 1e-12);
        assert!((contrastive_loss(&b, &a, 1.0).unwrap() - ba).abs() < 1e-12);
        assert!((ab - 0.479110).abs() < 1e-6);
        assert!((ba - 0.503204).abs() < 1e-6);
        let sym = symmetric_contrastive_loss(&a, &b, 1.0).unwrap();
        assert!((sym - 0.491157).abs() < 1e-6);
        assert!((sym - 0.491160).abs() < 1e-5);
        assert_eq!(
            sym.to_bits(),
            symmetric_contrastive_loss(&b, &a, 1.0).unwrap().to_bits()
        );
    }

    #[test]
    fn contrastive_errors() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(contrastive_loss(&empty, &empty, 1.0).is_err());
        assert!(contrastive_loss(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]], 1.0).is_err());
        assert!(contrastive_loss(&ortho2(), &[vec![1.0, 0.0]], 1.0).is_err());
        assert!(contrastive_loss(&ortho2(), &ortho2(), 0.0).is_err());
    }

    #[test]
    fn alignment_near_zero_for_matched_orthonormal() {
        let a = ortho2();
        let l = alignment_loss(&a, &a, 0.07).unwrap();
        let expect = (1.0 + (-1.0f64 / 0.07).exp()).ln();
        assert!((l - expect).abs() < 1e-15);
        assert!(l < 1e-6);
        assert_eq!(l, symmetric_contrastive_loss(&a, &a, 0.07).unwrap());
    }

    #[test]
    fn proxy_loss_cases() {
        let node = vec![vec![1.0, 0.2], vec![-0.1, 1.0]];
        let text = vec![vec![0.9, 0.1], vec![0.3, 0.8]];
        let img = vec![vec![1.0, -0.3], vec![0.0, 1.0]];
        let sym = symmetric_contrastive_loss(&node, &text, 0.5).unwrap();
        assert!((proxy_loss(&node, &text, &text, 0.5).unwrap() - sym).abs() < 1e-15);
        assert_eq!(
            proxy_loss(&node, &text, &img, 0.5).unwrap(),
            proxy_loss(&node, &img, &text, 0.5).unwrap()
        );
    }

    #[test]
    fn proxy_loss_orthonormal_golden() {
        // node = text = I; image rows (1,0) and (√2/2, √2/2):
        // ½ ln(1 + e⁻¹) + ½ · 0.491157
        let node = ortho2();
        let img = vec![vec![1.0, 0.0], vec![SQRT_HALF, SQRT_HALF]];
        let l = proxy_loss(&node, &node, &img, 1.0).unwrap();
        let expect = 0.5 * (1.0 + (-1.0f64).exp()).ln() + 0.5 * symmetric_contrastive_loss(&node, &img, 1.0).unwrap();
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 0.402209).abs() < 1e-6);
    }

    #[test]
    fn score_examples() {
        let s = score_triple(KgeMethod::TranseCos, &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], None).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        let d = score_triple(KgeMethod::TranseEuclid, &[1.0, 2.0], &[0.5, -1.0], &[1.5, 1.0], None).unwrap();
        assert_eq!(d, 0.0);
        let m = score_triple(KgeMethod::Distmult, &[1.0, 2.0], &[1.0, 1.0], &[3.0, 4.0], None).unwrap();
        assert_eq!(m, 11.0);
        let th = score_triple(
            KgeMethod::Transh,
            &[2.0, 3.0],
            &[0.0, 4.0],
            &[5.0, 7.0],
            Some(&[1.0, 0.0]),
        )
        .unwrap();
        assert!((th - 1.0).abs() < 1e-12);
    }

    #[test]
    fn score_errors() {
        assert!(score_triple(KgeMethod::TranseCos, &[1.0, 0.0], &[-1.0, 0.0], &[1.0, 1.0], None).is_err());
        assert!(score_triple(KgeMethod::Transh, &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], None).is_err());
        assert!(score_triple(
            KgeMethod::Transh,
            &[1.0, 0.0],
            &[0.0, 1.0],
            &[1.0, 1.0],
            Some(&[2.0, 0.0])
        )
        .is_err());
        assert!(score_triple(KgeMethod::Distmult, &[1.0], &[1.0, 1.0], &[1.0, 1.0], None).is_err());
    }

    /// Entity rows: 0 = head, 1 = positive tail, 2 and 3 = negative tails.
    fn table_with(rows: &[[f64; 2]], rel: [f64; 2]) -> EmbeddingTable<f64> {
        EmbeddingTable {
            entity: Matrix::from_vec(rows.len(), 2, rows.concat()).unwrap(),
            relation: Matrix::from_vec(1, 2, rel.to_vec()).unwrap(),
            normals: None,
        }
    }

    fn one_triple_bundle() -> KeBundle {
        let t = |tail| TripleRows {
            head: 0,
            relation: 0,
            tail,
        };
        KeBundle {
            positives: vec![t(1)],
            negatives: vec![vec![t(2), t(3)]],
        }
    }

    #[test]
    fn ke_softmax_uniform_scores() {
        let table = table_with(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]], [0.0, 0.0]);
        let cfg = LossConfig {
            ke_batch_reduction: KeReduction::Sum,
            ..LossConfig::default()
        };
        let l = ke_loss_softmax(&[one_triple_bundle()], &table, &cfg).unwrap();
        assert!((l - 0.5 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ke_softmax_can_be_negative() {
        // score(pos) = cos((1,0),(1,0)) = 1, negatives orthogonal -> 0
        let table = table_with(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], [0.0, 0.0]);
        let cfg = LossConfig {
            tau: 1.0,
            ke_batch_reduction: KeReduction::Sum,
            ..LossConfig::default()
        };
        let l = ke_loss_softmax(&[one_triple_bundle()], &table, &cfg).unwrap();
        assert!((l - 0.5 * (2f64.ln() - 1.0)).abs() < 1e-12);
        assert!((l + 0.153426).abs() < 1e-6);

        let with_pos = LossConfig {
            include_positive_in_denominator: true,
            ..cfg
        };
        let l = ke_loss_softmax(&[one_triple_bundle()], &table, &with_pos).unwrap();
        assert!(l > 0.0);
    }

    #[test]
    fn ke_reduction_semantics() {
        let table = table_with(&[[1.0, 0.3], [0.2, 1.0], [0.5, -1.0], [-1.0, 0.1]], [0.1, 0.4]);
        let sum_cfg = LossConfig {
            ke_batch_reduction: KeReduction::Sum,
            ..LossConfig::default()
        };
        let mean_cfg = LossConfig::default();
        let bundles = vec![one_triple_bundle(), one_triple_bundle()];
        let s = ke_loss_softmax(&bundles, &table, &sum_cfg).unwrap();
        let m = ke_loss_softmax(&bundles, &table, &mean_cfg).unwrap();
        assert_eq!(m, s / 2.0);
    }

    #[test]
    fn ke_empty_entity_contributes_zero_and_missing_negatives_error() {
        let table = table_with(&[[1.0, 0.3], [0.2, 1.0], [0.5, -1.0], [-1.0, 0.1]], [0.1, 0.4]);
        let cfg = LossConfig {
            ke_batch_reduction: KeReduction::Sum,
            ..LossConfig::default()
        };
        let only = ke_loss_softmax(&[one_triple_bundle()], &table, &cfg).unwrap();
        let with_empty = ke_loss_softmax(&[one_triple_bundle(), KeBundle::default()], &table, &cfg).unwrap();
        assert_eq!(only, with_empty);

        let mut bad = one_triple_bundle();
        bad.negatives[0].clear();
        assert!(ke_loss_softmax(&[bad], &table, &cfg).is_err());
        let euclid = LossConfig {
            kge_method: KgeMethod::TranseEuclid,
            ..cfg
        };
        assert!(ke_loss_softmax(&[one_triple_bundle()], &table, &euclid).is_err());
    }

    #[test]
    fn ke_margin_hand_values() {
        // head (0,0), r (0,0): d(pos) = |t1| = 0.5, d(neg) = 1.0 and 2.0
        let table = table_with(&[[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [0.0, 2.0]], [0.0, 0.0]);
        let l = ke_loss_margin(&[one_triple_bundle()], &table, 1.0, KeReduction::Sum).unwrap();
        assert!((l - 0.25).abs() < 1e-12);

        let tie = table_with(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]], [0.0, 0.0]);
        let l = ke_loss_margin(&[one_triple_bundle()], &tie, 0.7, KeReduction::Sum).unwrap();
        assert!((l - 0.7).abs() < 1e-12);

        let far = table_with(&[[0.0, 0.0], [0.1, 0.0], [5.0, 0.0], [0.0, -5.0]], [0.0, 0.0]);
        let l = ke_loss_margin(&[one_triple_bundle()], &far, 1.0, KeReduction::Sum).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn total_recomposes() {
        assert_eq!(total_loss(1.0, 2.0, 3.0, 0.0, 0.0), 1.0);
        assert_eq!(total_loss(1.0, 2.0, 3.0, 1.0, 1.0), 6.0);
        let b = LossBreakdown::new(0.4, 1.5, -0.2, 1.0, 1.0);
        assert!((b.total - (0.4 + 1.5 - 0.2)).abs() < 1e-15);
        let d = LossConfig::default();
        assert_eq!((d.beta1, d.beta2, d.tau), (1.0, 1.0, 0.07));
    }
}
