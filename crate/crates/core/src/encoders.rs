//! Trainable parameters and the forward encodings built from them.
//!
//! Raw backbone embeddings are frozen inputs; the trainable parts are two
//! linear projection layers (image and text), the optional fusion MLP, and
//! the entity/relation embedding tables. Every encoding that leaves this
//! module (projection, fusion, entity encodings) is L2-normalized. The
//! entity table rows are not: translation scoring needs an unconstrained
//! space and the cosine-based losses are scale-free anyway.
//!
//! Parameters are generic over the storage float so the trainer can keep
//! them in f32 while gradient checking runs the same code on an f64 copy.
//! All arithmetic happens in f64.

use std::fmt::Debug;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{EntityCatalogEntry, Stores};
use crate::error::{Error, Result};
use crate::linalg::{self, normalize, normalize_backward};
use crate::losses::KgeMethod;
use crate::rng::{self, stream};

/// Storage float for parameters.
pub trait Scalar: Float + Into<f64> + Debug + Default + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
            .collect();
        Self { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        to_f64(self.row(i))
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::from_f64(x.into())).collect(),
        }
    }
}

pub fn to_f64<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|&x| x.into()).collect()
}

/// Trainable affine map `weight · raw + bias` (weight is `out × in`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionLayer<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ProjectionLayer<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.rows {
            return Err(Error::DimensionMismatch {
                expected: weight.rows,
                got: bias.len(),
            });
        }
        Ok(Self { weight, bias })
    }

    /// Uniform in `±1/√in_dim` for weight and bias.
    pub fn random<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Matrix::uniform(out_dim, in_dim, bound, rng);
        let bias = (0..out_dim)
            .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
            .collect();
        Self { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows
    }

    /// `weight · x + bias` without normalization.
    pub fn affine(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        Ok((0..self.out_dim())
            .map(|i| {
                let row = self.weight.row(i);
                let acc: f64 = row.iter().zip(x).map(|(&w, v)| w.into() * v).sum();
                acc + self.bias[i].into()
            })
            .collect())
    }

    /// Accumulates the parameter gradient of `y = affine(x)` given `dL/dy`
    /// and returns `dL/dx`.
    fn affine_backward(&self, x: &[f64], g_y: &[f64], grad: &mut LayerGrad) -> Vec<f64> {
        let cols = self.in_dim();
        let mut g_x = vec![0.0; cols];
        for (i, &g) in g_y.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[i] += g;
            let gw = &mut grad.weight[i * cols..(i + 1) * cols];
            for (gwj, xj) in gw.iter_mut().zip(x) {
                *gwj += g * xj;
            }
            for (gxj, &w) in g_x.iter_mut().zip(self.weight.row(i)) {
                *gxj += g * w.into();
            }
        }
        g_x
    }

    pub fn cast<U: Scalar>(&self) -> ProjectionLayer<U> {
        ProjectionLayer {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|&x| U::from_f64(x.into())).collect(),
        }
    }
}

/// Gradient buffer shaped like a [`ProjectionLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like<T: Scalar>(layer: &ProjectionLayer<T>) -> Self {
        Self {
            weight: vec![0.0; layer.weight.data.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.weight.iter_mut().chain(self.bias.iter_mut()).for_each(|g| *g *= c);
    }
}

/// Output of [`project_cached`], kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Projected {
    pub out: Vec<f64>,
    pub norm: f64,
}

/// `normalize(weight · raw + bias)`.
pub fn project<T: Scalar>(raw: &[f64], layer: &ProjectionLayer<T>) -> Result<Vec<f64>> {
    Ok(project_cached(raw, layer)?.out)
}

pub fn project_cached<T: Scalar>(raw: &[f64], layer: &ProjectionLayer<T>) -> Result<Projected> {
    let pre = layer.affine(raw)?;
    let (out, norm) = normalize(&pre, "projection output")?;
    Ok(Projected { out, norm })
}

pub fn project_backward<T: Scalar>(
    layer: &ProjectionLayer<T>,
    raw: &[f64],
    cache: &Projected,
    g_out: &[f64],
    grad: &mut LayerGrad,
) {
    let g_pre = normalize_backward(&cache.out, cache.norm, g_out);
    layer.affine_backward(raw, &g_pre, grad);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    #[default]
    Addition,
    ConcatMlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fusion<T> {
    pub kind: FusionKind,
    /// Empty for addition; one `d_e × 2d_e` layer, optionally followed by a
    /// `d_e × d_e` layer, for the MLP fuser.
    pub layers: Vec<ProjectionLayer<T>>,
}

impl<T: Scalar> Fusion<T> {
    pub fn addition() -> Self {
        Self {
            kind: FusionKind::Addition,
            layers: Vec::new(),
        }
    }

    pub fn concat_mlp(layers: Vec<ProjectionLayer<T>>) -> Result<Self> {
        if layers.is_empty() || layers.len() > 2 {
            return Err(Error::Config(format!(
                "MLP fuser needs 1 or 2 layers, got {}",
                layers.len()
            )));
        }
        let d_e = layers[0].out_dim();
        if layers[0].in_dim() != 2 * d_e {
            return Err(Error::DimensionMismatch {
                expected: 2 * d_e,
                got: layers[0].in_dim(),
            });
        }
        if let Some(second) = layers.get(1) {
            if second.in_dim() != d_e || second.out_dim() != d_e {
                return Err(Error::DimensionMismatch {
                    expected: d_e,
                    got: second.in_dim(),
                });
            }
        }
        Ok(Self {
            kind: FusionKind::ConcatMlp,
            layers,
        })
    }

    pub fn random<R: Rng>(kind: FusionKind, mlp_layers: usize, d_e: usize, rng: &mut R) -> Result<Self> {
        match kind {
            FusionKind::Addition => Ok(Self::addition()),
            FusionKind::ConcatMlp => {
                let mut layers = vec![ProjectionLayer::random(d_e, 2 * d_e, rng)];
                if mlp_layers == 2 {
                    layers.push(ProjectionLayer::random(d_e, d_e, rng));
                }
                Self::concat_mlp(layers)
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Fusion<U> {
        Fusion {
            kind: self.kind,
            layers: self.layers.iter().map(ProjectionLayer::cast).collect(),
        }
    }
}

/// Forward state of [`fuse_cached`].
#[derive(Debug, Clone)]
pub struct Fused {
    pub out: Vec<f64>,
    norm: f64,
    /// MLP only: the input and pre-activation of each layer.
    layer_inputs: Vec<Vec<f64>>,
    layer_pre: Vec<Vec<f64>>,
}

/// Fuses the projected image and text embeddings: normalized sum for
/// addition, or concat → (linear, ReLU)ⁿ → normalize for the MLP.
pub fn fuse<T: Scalar>(z_img: &[f64], z_txt: &[f64], fusion: &Fusion<T>) -> Result<Vec<f64>> {
    Ok(fuse_cached(z_img, z_txt, fusion)?.out)
}

pub fn fuse_cached<T: Scalar>(z_img: &[f64], z_txt: &[f64], fusion: &Fusion<T>) -> Result<Fused> {
    if z_img.len() != z_txt.len() {
        return Err(Error::DimensionMismatch {
            expected: z_img.len(),
            got: z_txt.len(),
        });
    }
    match fusion.kind {
        FusionKind::Addition => {
            let sum = linalg::add(z_img, z_txt);
            let (out, norm) = normalize(&sum, "fused embedding")?;
            Ok(Fused {
                out,
                norm,
                layer_inputs: Vec::new(),
                layer_pre: Vec::new(),
            })
        }
        FusionKind::ConcatMlp => {
            let mut x: Vec<f64> = z_img.iter().chain(z_txt).copied().collect();
            let mut layer_inputs = Vec::with_capacity(fusion.layers.len());
            let mut layer_pre = Vec::with_capacity(fusion.layers.len());
            for layer in &fusion.layers {
                let pre = layer.affine(&x)?;
                let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
                layer_inputs.push(x);
                layer_pre.push(pre);
                x = act;
            }
            let (out, norm) = normalize(&x, "fused embedding")?;
            Ok(Fused {
                out,
                norm,
                layer_inputs,
                layer_pre,
            })
        }
    }
}

/// Backward of [`fuse_cached`]: accumulates MLP gradients into `grads`
/// (one per layer) and returns `(dL/dz_img, dL/dz_txt)`.
pub fn fuse_backward<T: Scalar>(
    fusion: &Fusion<T>,
    cache: &Fused,
    g_out: &[f64],
    grads: &mut [LayerGrad],
) -> (Vec<f64>, Vec<f64>) {
    let mut g = normalize_backward(&cache.out, cache.norm, g_out);
    match fusion.kind {
        FusionKind::Addition => (g.clone(), g),
        FusionKind::ConcatMlp => {
            for (l, layer) in fusion.layers.iter().enumerate().rev() {
                let g_pre: Vec<f64> = g
                    .iter()
                    .zip(&cache.layer_pre[l])
                    .map(|(&gi, &p)| if p > 0.0 { gi } else { 0.0 })
                    .collect();
                g = layer.affine_backward(&cache.layer_inputs[l], &g_pre, &mut grads[l]);
            }
            let d = g.len() / 2;
            let g_txt = g.split_off(d);
            (g, g_txt)
        }
    }
}

/// Entity/relation lookup tables (φ, ψ) plus TransH hyperplane normals.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    pub entity: Matrix<T>,
    pub relation: Matrix<T>,
    pub normals: Option<Matrix<T>>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn dim(&self) -> usize {
        self.entity.cols
    }

    pub fn lookup_entity(&self, row: usize) -> Result<&[T]> {
        if row >= self.entity.rows {
            return Err(Error::UnknownEntity(format!("row {row}")));
        }
        Ok(self.entity.row(row))
    }

    pub fn lookup_relation(&self, row: usize) -> Result<&[T]> {
        if row >= self.relation.rows {
            return Err(Error::UnknownRelation(format!("row {row}")));
        }
        Ok(self.relation.row(row))
    }

    pub fn lookup_normal(&self, row: usize) -> Result<Option<&[T]>> {
        match &self.normals {
            None => Ok(None),
            Some(n) if row < n.rows => Ok(Some(n.row(row))),
            Some(_) => Err(Error::UnknownRelation(format!("row {row}"))),
        }
    }

    /// Rescales every normal to unit length.
    pub fn renormalize_normals(&mut self) {
        if let Some(normals) = &mut self.normals {
            for i in 0..normals.rows {
                renormalize_row(normals.row_mut(i));
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingTable<U> {
        EmbeddingTable {
            entity: self.entity.cast(),
            relation: self.relation.cast(),
            normals: self.normals.as_ref().map(Matrix::cast),
        }
    }
}

pub(crate) fn renormalize_row<T: Scalar>(row: &mut [T]) {
    let n = linalg::norm(&to_f64(row));
    if n > 0.0 {
        for x in row.iter_mut() {
            *x = T::from_f64((*x).into() / n);
        }
    }
}

/// Uniform `±1/√d_e` initialization of φ and ψ (and unit-norm TransH
/// normals when `method` is TransH).
pub fn init_tables<T: Scalar>(
    n_entities: usize,
    n_relations: usize,
    d_e: usize,
    method: KgeMethod,
    seed: u64,
) -> Result<EmbeddingTable<T>> {
    if d_e == 0 {
        return Err(Error::Config("d_e must be >= 1".into()));
    }
    let mut rng = rng::derived(seed, &[stream::INIT_TABLES]);
    let bound = 1.0 / (d_e as f64).sqrt();
    let entity = Matrix::uniform(n_entities, d_e, bound, &mut rng);
    let relation = Matrix::uniform(n_relations, d_e, bound, &mut rng);
    let mut table = EmbeddingTable {
        entity,
        relation,
        normals: None,
    };
    if method == KgeMethod::Transh {
        table.normals = Some(Matrix::uniform(n_relations, d_e, bound, &mut rng));
        table.renormalize_normals();
    }
    Ok(table)
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub lp_img: ProjectionLayer<T>,
    pub lp_txt: ProjectionLayer<T>,
    pub fusion: Fusion<T>,
    pub tables: EmbeddingTable<T>,
}

/// Shapes needed to initialize a [`ModelParams`].
#[derive(Debug, Clone, Copy)]
pub struct ModelShape {
    pub image_dim: usize,
    pub text_dim: usize,
    pub d_e: usize,
    pub n_entities: usize,
    pub n_relations: usize,
    pub fusion: FusionKind,
    pub mlp_layers: usize,
    pub kge_method: KgeMethod,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(shape: &ModelShape, seed: u64) -> Result<Self> {
        let mut rng = rng::derived(seed, &[stream::INIT_PROJECTION]);
        let lp_img = ProjectionLayer::random(shape.d_e, shape.image_dim, &mut rng);
        let lp_txt = ProjectionLayer::random(shape.d_e, shape.text_dim, &mut rng);
        let mut rng = rng::derived(seed, &[stream::INIT_FUSION]);
        let fusion = Fusion::random(shape.fusion, shape.mlp_layers, shape.d_e, &mut rng)?;
        let tables = init_tables(shape.n_entities, shape.n_relations, shape.d_e, shape.kge_method, seed)?;
        Ok(Self {
            lp_img,
            lp_txt,
            fusion,
            tables,
        })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(shape: &ModelShape) -> Result<Self> {
        let layer = |o: usize, i: usize| ProjectionLayer {
            weight: Matrix::zeros(o, i),
            bias: vec![T::zero(); o],
        };
        let d = shape.d_e;
        let fusion = match shape.fusion {
            FusionKind::Addition => Fusion::addition(),
            FusionKind::ConcatMlp => {
                let mut layers = vec![layer(d, 2 * d)];
                if shape.mlp_layers == 2 {
                    layers.push(layer(d, d));
                }
                Fusion::concat_mlp(layers)?
            }
        };
        Ok(Self {
            lp_img: layer(d, shape.image_dim),
            lp_txt: layer(d, shape.text_dim),
            fusion,
            tables: EmbeddingTable {
                entity: Matrix::zeros(shape.n_entities, d),
                relation: Matrix::zeros(shape.n_relations, d),
                normals: (shape.kge_method == KgeMethod::Transh).then(|| Matrix::zeros(shape.n_relations, d)),
            },
        })
    }

    pub fn d_e(&self) -> usize {
        self.tables.dim()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            lp_img: self.lp_img.cast(),
            lp_txt: self.lp_txt.cast(),
            fusion: self.fusion.cast(),
            tables: self.tables.cast(),
        }
    }

    /// Every tensor with its canonical name and shape, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out: Vec<(String, Vec<usize>, &[T])> = Vec::new();
        for (name, l) in self.named_layers() {
            out.push((
                format!("{name}.weight"),
                vec![l.weight.rows, l.weight.cols],
                &l.weight.data,
            ));
            out.push((format!("{name}.bias"), vec![l.bias.len()], &l.bias));
        }
        let t = &self.tables;
        out.push(("entity".into(), vec![t.entity.rows, t.entity.cols], &t.entity.data));
        out.push((
            "relation".into(),
            vec![t.relation.rows, t.relation.cols],
            &t.relation.data,
        ));
        if let Some(n) = &t.normals {
            out.push(("relation_normal".into(), vec![n.rows, n.cols], &n.data));
        }
        out
    }

    /// Mutable views in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out: Vec<(String, &mut [T])> = Vec::new();
        let names: Vec<String> = self.named_layers().into_iter().map(|(n, _)| n).collect();
        let layers = std::iter::once(&mut self.lp_img)
            .chain(std::iter::once(&mut self.lp_txt))
            .chain(self.fusion.layers.iter_mut());
        for (name, l) in names.into_iter().zip(layers) {
            out.push((format!("{name}.weight"), &mut l.weight.data));
            out.push((format!("{name}.bias"), &mut l.bias));
        }
        let t = &mut self.tables;
        out.push(("entity".into(), &mut t.entity.data));
        out.push(("relation".into(), &mut t.relation.data));
        if let Some(n) = &mut t.normals {
            out.push(("relation_normal".into(), &mut n.data));
        }
        out
    }

    fn named_layers(&self) -> Vec<(String, &ProjectionLayer<T>)> {
        let mut v = vec![("lp_img".to_owned(), &self.lp_img), ("lp_txt".to_owned(), &self.lp_txt)];
        for (i, l) in self.fusion.layers.iter().enumerate() {
            v.push((format!("fusion.{i}"), l));
        }
        v
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    /// The input query embedding: fuse(project_img(image), project_txt(text)).
    pub fn encode_query(&self, image_raw: &[f64], text_raw: &[f64]) -> Result<Vec<f64>> {
        let p = project(image_raw, &self.lp_img)?;
        let q = project(text_raw, &self.lp_txt)?;
        fuse(&p, &q, &self.fusion)
    }
}

/// Entity-side encodings with the state needed to backpropagate.
#[derive(Debug, Clone)]
pub struct EntityEncoding {
    pub text: Projected,
    /// Empty when the entity has no lead images.
    pub images: Vec<Projected>,
    /// Normalized mean of the image projections; equals `text.out` when
    /// there are no lead images.
    pub image_out: Vec<f64>,
    mean_norm: f64,
}

impl EntityEncoding {
    pub fn uses_text_fallback(&self) -> bool {
        self.images.is_empty()
    }
}

/// Encodes an entity's description and lead images given their raw
/// embeddings. With no lead images the image encoding is the text encoding.
pub fn encode_entity_raw<T: Scalar>(
    text_raw: &[f64],
    lead_raws: &[Vec<f64>],
    lp_img: &ProjectionLayer<T>,
    lp_txt: &ProjectionLayer<T>,
) -> Result<EntityEncoding> {
    let text = project_cached(text_raw, lp_txt)?;
    if lead_raws.is_empty() {
        let image_out = text.out.clone();
        return Ok(EntityEncoding {
            text,
            images: Vec::new(),
            image_out,
            mean_norm: 1.0,
        });
    }
    let images = lead_raws
        .iter()
        .map(|r| project_cached(r, lp_img))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; text.out.len()];
    for p in &images {
        linalg::axpy(&mut mean, 1.0, &p.out);
    }
    let mean = linalg::scale(&mean, 1.0 / images.len() as f64);
    let (image_out, mean_norm) = normalize(&mean, "mean lead-image embedding")?;
    Ok(EntityEncoding {
        text,
        images,
        image_out,
        mean_norm,
    })
}

/// Backward of [`encode_entity_raw`] into the two projection layers.
#[allow(clippy::too_many_arguments)]
pub fn encode_entity_backward<T: Scalar>(
    enc: &EntityEncoding,
    text_raw: &[f64],
    lead_raws: &[Vec<f64>],
    lp_img: &ProjectionLayer<T>,
    lp_txt: &ProjectionLayer<T>,
    g_text: &[f64],
    g_image: &[f64],
    grad_img: &mut LayerGrad,
    grad_txt: &mut LayerGrad,
) {
    if enc.uses_text_fallback() {
        let g = linalg::add(g_text, g_image);
        project_backward(lp_txt, text_raw, &enc.text, &g, grad_txt);
        return;
    }
    project_backward(lp_txt, text_raw, &enc.text, g_text, grad_txt);
    let g_mean = normalize_backward(&enc.image_out, enc.mean_norm, g_image);
    let g_each = linalg::scale(&g_mean, 1.0 / enc.images.len() as f64);
    for (p, raw) in enc.images.iter().zip(lead_raws) {
        project_backward(lp_img, raw, p, &g_each, grad_img);
    }
}

/// Resolves a catalog entry's raw embeddings from the stores and returns
/// `(z_entityText, z_entityImage)`.
pub fn encode_entity<T: Scalar>(
    entry: &EntityCatalogEntry,
    lp_img: &ProjectionLayer<T>,
    lp_txt: &ProjectionLayer<T>,
    stores: &Stores,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (text_raw, lead_raws) = stores.entity_raws(entry)?;
    let enc = encode_entity_raw(&text_raw, &lead_raws, lp_img, lp_txt)?;
    Ok((enc.text.out, enc.image_out))
}
