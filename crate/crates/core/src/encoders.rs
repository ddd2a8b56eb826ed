//! Recipe and image encoders.
//!
//! The recipe side runs two bidirectional recurrent encoders (ingredient
//! tokens and instruction sentence vectors), each followed by
//! parameter-free self-attention with a residual connection and layer
//! normalization, mean-pools each sequence, and fuses the two pooled
//! vectors with a fully connected layer. The image side projects
//! pre-extracted feature vectors into the same joint space.
//!
//! Padding tokens (id 0) are dropped before encoding, which is equivalent
//! to masking them out of the recurrence, the attention rows and columns,
//! and the pooling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CellKind, ClassifierSharing, ModelConfig, Pooling};
use crate::dataset::FoodPairRecord;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Which alternating update phase owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Image,
    Recipe,
    /// Updated in both phases (a classifier head shared by the modalities).
    Both,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub side: Side,
    pub shape: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
struct CellSlots {
    w: usize,
    u: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    embedding: usize,
    ingredient: [CellSlots; 2],
    instruction: [CellSlots; 2],
    ingredient_norm: Option<(usize, usize)>,
    instruction_norm: Option<(usize, usize)>,
    fuse_w: usize,
    fuse_b: usize,
    image_w: usize,
    image_b: usize,
    cls_image: (usize, usize),
    cls_recipe: (usize, usize),
}

/// All trainable tensors of the model.
#[derive(Clone, Debug)]
pub struct ModelParams {
    config: ModelConfig,
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor>,
    layout: Layout,
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, side: Side, t: Tensor) -> usize {
        self.specs.push(ParamSpec {
            name,
            side,
            shape: t.shape().to_vec(),
        });
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = self.rng.random_range(-bound..bound);
        }
        t
    }

    fn xavier(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(&[fan_in, fan_out], bound)
    }

    fn cell(&mut self, prefix: &str, kind: CellKind, input: usize, hidden: usize) -> CellSlots {
        let gates = match kind {
            CellKind::SimpleTanh => 1,
            CellKind::Gated => 4,
        };
        let w = self.xavier(input, gates * hidden);
        let u = self.xavier(hidden, gates * hidden);
        let mut b = Tensor::zeros(&[gates * hidden]);
        if kind == CellKind::Gated {
            // forget gate starts open
            b.data_mut()[hidden..2 * hidden].fill(1.0);
        }
        CellSlots {
            w: self.push(format!("{prefix}.w"), Side::Recipe, w),
            u: self.push(format!("{prefix}.u"), Side::Recipe, u),
            b: self.push(format!("{prefix}.b"), Side::Recipe, b),
        }
    }

    fn norm(&mut self, prefix: &str, dim: usize) -> (usize, usize) {
        (
            self.push(format!("{prefix}.gain"), Side::Recipe, Tensor::filled(&[dim], 1.0)),
            self.push(format!("{prefix}.bias"), Side::Recipe, Tensor::zeros(&[dim])),
        )
    }
}

impl ModelParams {
    /// Seeded random initialization.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            rng: &mut rng,
            specs: Vec::new(),
            tensors: Vec::new(),
        };
        let c = config;
        let dh = c.sequence_dim();

        let mut table = b.uniform(&[c.vocab_size, c.word_dim], (3.0 / c.word_dim as f64).sqrt());
        table.data_mut()[..c.word_dim].fill(0.0);
        let embedding = b.push("embedding".into(), Side::Recipe, table);

        let ingredient = [
            b.cell("ingredient.fwd", c.cell, c.word_dim, c.hidden_dim),
            b.cell("ingredient.bwd", c.cell, c.word_dim, c.hidden_dim),
        ];
        let instruction = [
            b.cell("instruction.fwd", c.cell, c.sentence_dim, c.hidden_dim),
            b.cell("instruction.bwd", c.cell, c.sentence_dim, c.hidden_dim),
        ];
        let (ingredient_norm, instruction_norm) = if c.layer_norm_affine {
            (
                Some(b.norm("ingredient.norm", dh)),
                Some(b.norm("instruction.norm", dh)),
            )
        } else {
            (None, None)
        };
        let fw = b.xavier(2 * dh, c.joint_dim);
        let fuse_w = b.push("fusion.w".into(), Side::Recipe, fw);
        let fuse_b = b.push("fusion.b".into(), Side::Recipe, Tensor::zeros(&[c.joint_dim]));
        let iw = b.xavier(c.image_dim, c.joint_dim);
        let image_w = b.push("image.w".into(), Side::Image, iw);
        let image_b = b.push("image.b".into(), Side::Image, Tensor::zeros(&[c.joint_dim]));

        let head = |b: &mut Builder, name: &str, side| {
            let w = b.xavier(c.joint_dim, c.num_classes);
            (
                b.push(format!("{name}.w"), side, w),
                b.push(format!("{name}.b"), side, Tensor::zeros(&[c.num_classes])),
            )
        };
        let (cls_image, cls_recipe) = match c.classifier {
            ClassifierSharing::PerModality => (
                head(&mut b, "classifier.image", Side::Image),
                head(&mut b, "classifier.recipe", Side::Recipe),
            ),
            ClassifierSharing::Shared => {
                let h = head(&mut b, "classifier.shared", Side::Both);
                (h, h)
            }
        };

        let layout = Layout {
            embedding,
            ingredient,
            instruction,
            ingredient_norm,
            instruction_norm,
            fuse_w,
            fuse_b,
            image_w,
            image_b,
            cls_image,
            cls_recipe,
        };
        let (specs, tensors) = (b.specs, b.tensors);
        Ok(Self {
            config: config.clone(),
            specs,
            tensors,
            layout,
        })
    }

    /// Rebuilds parameters from stored tensors, checking every shape
    /// against a fresh layout for `config`.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let mut fresh = Self::init(config, 0)?;
        if tensors.len() != fresh.tensors.len() {
            return Err(Error::Data(format!(
                "expected {} parameter tensors, got {}",
                fresh.tensors.len(),
                tensors.len()
            )));
        }
        for (spec, t) in fresh.specs.iter().zip(&tensors) {
            if spec.shape != t.shape() {
                return Err(Error::dim("parameter load", &spec.shape, t.shape()));
            }
        }
        fresh.tensors = tensors;
        Ok(fresh)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn embedding_index(&self) -> usize {
        self.layout.embedding
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        BoundModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            vars,
        }
    }

    /// Uses existing graph nodes as the parameters, one per tensor in
    /// layout order. Gradient checks perturb leaves they create themselves.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundModel> {
        if vars.len() != self.tensors.len() {
            return Err(Error::dim("bind_vars", &[self.tensors.len()], &[vars.len()]));
        }
        Ok(BoundModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            vars: vars.to_vec(),
        })
    }

    /// Recipe embedding `R` for one record.
    pub fn encode_recipe(&self, record: &FoodPairRecord) -> Result<RecipeEmbedding> {
        let mut g = Graph::new();
        let m = self.bind(&mut g, false);
        let r = m.recipe_batch(&mut g, &[record])?;
        Ok(RecipeEmbedding {
            pair_id: record.pair_id,
            vector: g.value(r).data().to_vec(),
        })
    }

    /// Image embedding `I` from pre-extracted features.
    pub fn encode_image(&self, features: &[f64], pair_id: u64) -> Result<ImageEmbedding> {
        let mut g = Graph::new();
        let m = self.bind(&mut g, false);
        let i = m.image_features_batch(&mut g, &[features])?;
        Ok(ImageEmbedding {
            pair_id,
            vector: g.value(i).data().to_vec(),
        })
    }

    /// Pooled instruction feature `f_instruction` for `m × d_s` sentence vectors.
    pub fn encode_instructions(&self, sentences: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let m = self.bind(&mut g, false);
        let out = m.instruction_features(&mut g, sentences)?;
        let v = g.value(out.pooled).data().to_vec();
        Ok(Tensor::vector(v))
    }

    /// Image and recipe embeddings for many records, as `B × d_J` matrices.
    pub fn embed_records(&self, records: &[&FoodPairRecord]) -> Result<(Tensor, Tensor)> {
        if records.is_empty() {
            return Err(Error::EmptySequence("embed_records"));
        }
        let mut images = Vec::with_capacity(records.len() * self.config.joint_dim);
        let mut recipes = Vec::with_capacity(records.len() * self.config.joint_dim);
        // Chunked so graphs stay small.
        for chunk in records.chunks(64) {
            let mut g = Graph::new();
            let m = self.bind(&mut g, false);
            let i = m.image_batch(&mut g, chunk)?;
            let r = m.recipe_batch(&mut g, chunk)?;
            images.extend_from_slice(g.value(i).data());
            recipes.extend_from_slice(g.value(r).data());
        }
        let d = self.config.joint_dim;
        Ok((
            Tensor::matrix(records.len(), d, images)?,
            Tensor::matrix(records.len(), d, recipes)?,
        ))
    }

    /// Self-attention weight matrices of both recipe branches, for inspection.
    pub fn attention_maps(&self, record: &FoodPairRecord) -> Result<AttentionMaps> {
        let mut g = Graph::new();
        let m = self.bind(&mut g, false);
        let ing = m.ingredient_features(&mut g, &record.ingredients)?;
        let ins = m.instruction_features(&mut g, &record.instructions)?;
        Ok(AttentionMaps {
            pair_id: record.pair_id,
            tokens: record.ingredients.iter().copied().filter(|&t| t != 0).collect(),
            ingredient: ing.attention.map(|a| g.value(a).clone()),
            instruction: ins.attention.map(|a| g.value(a).clone()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecipeEmbedding {
    pub pair_id: u64,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageEmbedding {
    pub pair_id: u64,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AttentionMaps {
    pub pair_id: u64,
    /// Non-padding ingredient tokens, in sequence order.
    pub tokens: Vec<u32>,
    pub ingredient: Option<Tensor>,
    pub instruction: Option<Tensor>,
}

impl AttentionMaps {
    /// Attention each position receives, averaged over query rows.
    pub fn received(weights: &Tensor) -> Vec<f64> {
        let (n, _) = weights.dims2();
        (0..n)
            .map(|j| (0..n).map(|i| weights.at(i, j)).sum::<f64>() / n as f64)
            .collect()
    }
}

/// Recurrent cell parameters for one direction, as plain tensors.
#[derive(Clone, Debug)]
pub struct CellParams {
    pub kind: CellKind,
    /// `input × gates·hidden`.
    pub w: Tensor,
    /// `hidden × gates·hidden`.
    pub u: Tensor,
    /// `gates·hidden`.
    pub b: Tensor,
}

impl CellParams {
    pub fn hidden(&self) -> usize {
        match self.kind {
            CellKind::SimpleTanh => self.u.rows(),
            CellKind::Gated => self.u.rows(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CellVars {
    pub kind: CellKind,
    pub hidden: usize,
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

/// Pooled sequence feature and, when attention ran, its weight matrix.
#[derive(Clone, Copy, Debug)]
pub struct SequenceOutput {
    pub pooled: Var,
    pub attention: Option<Var>,
}

/// Model parameters placed on a graph.
#[derive(Clone, Debug)]
pub struct BoundModel {
    config: ModelConfig,
    layout: Layout,
    vars: Vec<Var>,
}

impl BoundModel {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn cell(&self, slots: CellSlots) -> CellVars {
        CellVars {
            kind: self.config.cell,
            hidden: self.config.hidden_dim,
            w: self.vars[slots.w],
            u: self.vars[slots.u],
            b: self.vars[slots.b],
        }
    }

    fn norm(&self, slots: Option<(usize, usize)>) -> Option<(Var, Var)> {
        slots.map(|(g, b)| (self.vars[g], self.vars[b]))
    }

    fn encode_sequence(
        &self,
        g: &mut Graph,
        z: Var,
        cells: [CellSlots; 2],
        norm: Option<(usize, usize)>,
    ) -> Result<SequenceOutput> {
        let h = birnn(g, z, &self.cell(cells[0]), &self.cell(cells[1]))?;
        let (f, attention) = if self.config.attention {
            let (f, a) = attend_and_normalize_graph(g, h, self.config.layer_norm_eps, self.norm(norm))?;
            (f, Some(a))
        } else {
            (h, None)
        };
        let pooled = pool_graph(g, f, self.config.pooling, self.config.hidden_dim)?;
        Ok(SequenceOutput { pooled, attention })
    }

    pub fn ingredient_features(&self, g: &mut Graph, tokens: &[u32]) -> Result<SequenceOutput> {
        let vocab = self.config.vocab_size;
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::Vocabulary {
                id: bad as usize,
                vocab,
            });
        }
        let ids: Vec<usize> = tokens.iter().filter(|&&t| t != 0).map(|&t| t as usize).collect();
        if ids.is_empty() {
            return Err(Error::EmptySequence("ingredient tokens"));
        }
        let z = g.gather_rows(self.vars[self.layout.embedding], &ids)?;
        self.encode_sequence(g, z, self.layout.ingredient, self.layout.ingredient_norm)
    }

    pub fn instruction_features(&self, g: &mut Graph, sentences: &Tensor) -> Result<SequenceOutput> {
        if sentences.rank() != 2 || sentences.cols() != self.config.sentence_dim {
            return Err(Error::dim(
                "encode_instructions",
                sentences.shape(),
                &[0, self.config.sentence_dim],
            ));
        }
        let s = g.constant(sentences.clone());
        self.encode_sequence(g, s, self.layout.instruction, self.layout.instruction_norm)
    }

    /// `R = tanh(concat(f_ingredient, f_instruction) · W + b)`, one row per record.
    pub fn recipe_batch(&self, g: &mut Graph, records: &[&FoodPairRecord]) -> Result<Var> {
        let mut rows = Vec::with_capacity(records.len());
        for r in records {
            let ing = self.ingredient_features(g, &r.ingredients)?;
            let ins = self.instruction_features(g, &r.instructions)?;
            rows.push(g.concat_cols(&[ing.pooled, ins.pooled])?);
        }
        let x = g.stack_rows(&rows)?;
        let pre = g.matmul(x, self.vars[self.layout.fuse_w])?;
        let pre = g.add_row(pre, self.vars[self.layout.fuse_b])?;
        Ok(g.tanh(pre))
    }

    pub fn image_batch(&self, g: &mut Graph, records: &[&FoodPairRecord]) -> Result<Var> {
        let feats: Vec<&[f64]> = records.iter().map(|r| r.image_features.as_slice()).collect();
        self.image_features_batch(g, &feats)
    }

    /// `I = tanh(features · W_img + b_img)`, one row per feature vector.
    pub fn image_features_batch(&self, g: &mut Graph, features: &[&[f64]]) -> Result<Var> {
        let d = self.config.image_dim;
        if let Some(bad) = features.iter().find(|f| f.len() != d) {
            return Err(Error::dim("encode_image", &[bad.len()], &[d]));
        }
        let x = g.constant(Tensor::from_rows(features)?);
        let pre = g.matmul(x, self.vars[self.layout.image_w])?;
        let pre = g.add_row(pre, self.vars[self.layout.image_b])?;
        Ok(g.tanh(pre))
    }

    /// Classifier head `(W, b)` applied to image embeddings.
    pub fn image_head(&self) -> (Var, Var) {
        let (w, b) = self.layout.cls_image;
        (self.vars[w], self.vars[b])
    }

    /// Classifier head `(W, b)` applied to recipe embeddings.
    pub fn recipe_head(&self) -> (Var, Var) {
        let (w, b) = self.layout.cls_recipe;
        (self.vars[w], self.vars[b])
    }
}

fn run_direction(g: &mut Graph, xw: Var, cell: &CellVars, n: usize, reverse: bool) -> Result<Vec<Var>> {
    let hd = cell.hidden;
    let mut states = vec![None; n];
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for t in order {
        let mut pre = g.row(xw, t)?;
        if let Some(prev) = h {
            let rec = g.matmul(prev, cell.u)?;
            pre = g.add(pre, rec)?;
        }
        let next = match cell.kind {
            CellKind::SimpleTanh => g.tanh(pre),
            CellKind::Gated => {
                let i = g.slice_cols(pre, 0, hd)?;
                let i = g.sigmoid(i);
                let cand = g.slice_cols(pre, 2 * hd, hd)?;
                let cand = g.tanh(cand);
                let o = g.slice_cols(pre, 3 * hd, hd)?;
                let o = g.sigmoid(o);
                let mut cell_state = g.mul(i, cand)?;
                if let Some(prev_c) = c {
                    let f = g.slice_cols(pre, hd, hd)?;
                    let f = g.sigmoid(f);
                    let kept = g.mul(f, prev_c)?;
                    cell_state = g.add(kept, cell_state)?;
                }
                c = Some(cell_state);
                let squashed = g.tanh(cell_state);
                g.mul(o, squashed)?
            }
        };
        h = Some(next);
        states[t] = h;
    }
    Ok(states.into_iter().map(|s| s.expect("every step visited")).collect())
}

/// Bidirectional recurrence over the rows of `z`; row `t` of the result is
/// `[forward state after z_1..z_t ; backward state after z_n..z_t]`.
/// Initial states are zero.
pub fn birnn(g: &mut Graph, z: Var, fwd: &CellVars, bwd: &CellVars) -> Result<Var> {
    let n = g.value(z).rows();
    if g.value(z).rank() != 2 {
        return Err(Error::dim("run_birnn", g.value(z).shape(), &[0, 0]));
    }
    let mut halves = Vec::with_capacity(2);
    for (cell, reverse) in [(fwd, false), (bwd, true)] {
        let xw = g.matmul(z, cell.w)?;
        let xw = g.add_row(xw, cell.b)?;
        let states = run_direction(g, xw, cell, n, reverse)?;
        halves.push(g.stack_rows(&states)?);
    }
    g.concat_cols(&halves)
}

/// `softmax(H Hᵀ / √d_h) · H`; returns the output and the weight matrix.
pub fn self_attention_graph(g: &mut Graph, h: Var) -> Result<(Var, Var)> {
    let d = g.value(h).cols() as f64;
    let ht = g.transpose(h)?;
    let scores = g.matmul(h, ht)?;
    let scores = g.scale(scores, 1.0 / d.sqrt());
    let weights = g.softmax_rows(scores);
    let out = g.matmul(weights, h)?;
    Ok((out, weights))
}

/// `LayerNorm(self_attention(H) + H)`, optionally with a learned gain and bias.
pub fn attend_and_normalize_graph(g: &mut Graph, h: Var, eps: f64, affine: Option<(Var, Var)>) -> Result<(Var, Var)> {
    let (attn, weights) = self_attention_graph(g, h)?;
    let sum = g.add(attn, h)?;
    let mut y = g.layer_norm(sum, eps);
    if let Some((gain, bias)) = affine {
        let n = g.value(y).rows();
        let gains = g.stack_rows(&vec![gain; n])?;
        y = g.mul(y, gains)?;
        y = g.add_row(y, bias)?;
    }
    Ok((y, weights))
}

pub fn pool_graph(g: &mut Graph, f: Var, pooling: Pooling, hidden: usize) -> Result<Var> {
    match pooling {
        Pooling::Mean => Ok(g.mean_rows(f)),
        Pooling::FinalState => {
            let n = g.value(f).rows();
            let last = g.row(f, n - 1)?;
            let fwd = g.slice_cols(last, 0, hidden)?;
            let first = g.row(f, 0)?;
            let bwd = g.slice_cols(first, hidden, hidden)?;
            g.concat_cols(&[fwd, bwd])
        }
    }
}

/// Embedding lookup; padding id 0 yields a zero row.
pub fn embed_ingredients(tokens: &[u32], table: &Tensor) -> Result<Tensor> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence("embed_ingredients"));
    }
    let (v, d) = table.dims2();
    let mut data = Vec::with_capacity(tokens.len() * d);
    for &t in tokens {
        let t = t as usize;
        if t >= v {
            return Err(Error::Vocabulary { id: t, vocab: v });
        }
        if t == 0 {
            data.extend(std::iter::repeat_n(0.0, d));
        } else {
            data.extend_from_slice(table.row(t));
        }
    }
    Tensor::matrix(tokens.len(), d, data)
}

fn with_graph(f: impl FnOnce(&mut Graph) -> Result<Var>) -> Result<Tensor> {
    let mut g = Graph::new();
    let out = f(&mut g)?;
    Ok(g.value(out).clone())
}

/// Tensor-level bidirectional recurrence.
pub fn run_birnn(z: &Tensor, fwd: &CellParams, bwd: &CellParams) -> Result<Tensor> {
    if z.rank() != 2 {
        return Err(Error::dim("run_birnn", z.shape(), &[0, 0]));
    }
    if fwd.hidden() != bwd.hidden() {
        return Err(Error::dim("run_birnn", fwd.u.shape(), bwd.u.shape()));
    }
    with_graph(|g| {
        let zv = g.constant(z.clone());
        let bind = |g: &mut Graph, c: &CellParams| CellVars {
            kind: c.kind,
            hidden: c.hidden(),
            w: g.constant(c.w.clone()),
            u: g.constant(c.u.clone()),
            b: g.constant(c.b.clone()),
        };
        let f = bind(g, fwd);
        let b = bind(g, bwd);
        birnn(g, zv, &f, &b)
    })
}

/// Tensor-level `softmax(H Hᵀ / √d_h) · H`.
pub fn self_attention(h: &Tensor) -> Result<Tensor> {
    with_graph(|g| {
        let hv = g.constant(h.clone());
        Ok(self_attention_graph(g, hv)?.0)
    })
}

/// Row-stochastic attention weights `softmax(H Hᵀ / √d_h)`.
pub fn attention_weights(h: &Tensor) -> Result<Tensor> {
    with_graph(|g| {
        let hv = g.constant(h.clone());
        Ok(self_attention_graph(g, hv)?.1)
    })
}

pub fn attend_and_normalize(h: &Tensor, eps: f64) -> Result<Tensor> {
    with_graph(|g| {
        let hv = g.constant(h.clone());
        Ok(attend_and_normalize_graph(g, hv, eps, None)?.0)
    })
}

/// Mean over rows, skipping rows whose `valid` flag is false.
pub fn pool_sequence(f: &Tensor, valid: Option<&[bool]>) -> Result<Tensor> {
    let (n, d) = f.dims2();
    let keep: Vec<usize> = match valid {
        Some(mask) => {
            if mask.len() != n {
                return Err(Error::dim("pool_sequence", &[n], &[mask.len()]));
            }
            (0..n).filter(|&i| mask[i]).collect()
        }
        None => (0..n).collect(),
    };
    if keep.is_empty() {
        return Err(Error::EmptySequence("pool_sequence"));
    }
    let mut out = vec![0.0; d];
    for &i in &keep {
        for (o, v) in out.iter_mut().zip(f.row(i)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= keep.len() as f64);
    Ok(Tensor::vector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{layer_normalize, matmul, softmax_rows, transpose};

    fn small_config(cell: CellKind) -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            word_dim: 4,
            hidden_dim: 3,
            sentence_dim: 5,
            image_dim: 2,
            joint_dim: 3,
            num_classes: 4,
            cell,
            ..ModelConfig::default()
        }
    }

    fn record() -> FoodPairRecord {
        FoodPairRecord {
            pair_id: 7,
            class_label: 1,
            ingredients: vec![3, 5, 0, 2],
            instructions: Tensor::matrix(2, 5, (0..10).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap(),
            image_features: vec![0.5, -1.25],
        }
    }

    #[test]
    fn embedding_lookup_and_padding() {
        let p = ModelParams::init(&small_config(CellKind::Gated), 1).unwrap();
        let table = &p.tensors()[p.embedding_index()];
        let one = embed_ingredients(&[3], table).unwrap();
        assert_eq!(one.shape(), &[1, 4]);
        assert_eq!(one.row(0), table.row(3));
        let pad = embed_ingredients(&[0], table).unwrap();
        assert!(pad.data().iter().all(|&v| v == 0.0));
        assert!(table.row(0).iter().all(|&v| v == 0.0));
        let two = embed_ingredients(&[3, 3], table).unwrap();
        assert_eq!(two.row(0), two.row(1));
        assert!(matches!(embed_ingredients(&[12], table), Err(Error::Vocabulary { .. })));
    }

    fn scalar_cell(w: f64, u: f64, b: f64) -> CellParams {
        CellParams {
            kind: CellKind::SimpleTanh,
            w: Tensor::matrix(1, 1, vec![w]).unwrap(),
            u: Tensor::matrix(1, 1, vec![u]).unwrap(),
            b: Tensor::vector(vec![b]),
        }
    }

    #[test]
    fn birnn_single_step_cases() {
        let z = Tensor::matrix(1, 1, vec![0.8]).unwrap();
        let zero = scalar_cell(0.0, 0.0, 0.0);
        let h = run_birnn(&z, &zero, &zero).unwrap();
        assert_eq!(h.data(), &[0.0, 0.0]);
        let c = scalar_cell(0.7, -0.4, 0.1);
        let h = run_birnn(&z, &c, &c).unwrap();
        assert_eq!(h.data()[0], h.data()[1]);
    }

    #[test]
    fn birnn_matches_hand_unrolled_recurrence() {
        let z: [f64; 3] = [0.5, -1.0, 2.0];
        let (fw, fu, fb): (f64, f64, f64) = (0.9, 0.5, 0.1);
        let (bw, bu, bb): (f64, f64, f64) = (-0.3, 0.8, 0.2);
        // forward: h1 = tanh(0.9*0.5 + 0.1), h2 = tanh(-0.9 + 0.5 h1 + 0.1), ...
        let f1 = (fw * z[0] + fb).tanh();
        let f2 = (fw * z[1] + fu * f1 + fb).tanh();
        let f3 = (fw * z[2] + fu * f2 + fb).tanh();
        let b3 = (bw * z[2] + bb).tanh();
        let b2 = (bw * z[1] + bu * b3 + bb).tanh();
        let b1 = (bw * z[0] + bu * b2 + bb).tanh();
        let h = run_birnn(
            &Tensor::matrix(3, 1, z.to_vec()).unwrap(),
            &scalar_cell(fw, fu, fb),
            &scalar_cell(bw, bu, bb),
        )
        .unwrap();
        let expected = [f1, b1, f2, b2, f3, b3];
        for (a, e) in h.data().iter().zip(expected) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }
    }

    fn sample_h(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn attention_single_row_is_identity() {
        let h = sample_h(1, 4, 0);
        assert!(self_attention(&h).unwrap().max_abs_diff(&h) < 1e-15);
    }

    #[test]
    fn attention_identical_rows_give_identical_outputs() {
        let mut h = sample_h(3, 4, 1);
        let r0 = h.row(0).to_vec();
        h.data_mut()[8..12].copy_from_slice(&r0);
        let out = self_attention(&h).unwrap();
        assert_eq!(out.row(0), out.row(2));
    }

    #[test]
    fn attention_matches_direct_formula() {
        let h = sample_h(3, 4, 2);
        // direct evaluation with independent kernels
        let scores = matmul(&h, &transpose(&h).unwrap()).unwrap().map(|v| v / 2.0);
        let expected = matmul(&softmax_rows(&scores), &h).unwrap();
        assert!(self_attention(&h).unwrap().max_abs_diff(&expected) < 1e-14);
        let composed = layer_normalize(
            &Tensor::matrix(3, 4, expected.data().iter().zip(h.data()).map(|(a, b)| a + b).collect()).unwrap(),
            1e-5,
        );
        assert!(attend_and_normalize(&h, 1e-5).unwrap().max_abs_diff(&composed) < 1e-14);
    }

    #[test]
    fn attend_and_normalize_edge_cases() {
        let h = sample_h(1, 6, 3);
        let a = attend_and_normalize(&h, 0.0).unwrap();
        assert!(a.max_abs_diff(&layer_normalize(&h, 0.0)) < 1e-8);
        let constant = Tensor::filled(&[3, 4], 0.7);
        let c = attend_and_normalize(&constant, 1e-5).unwrap();
        assert!(c.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn pooling_cases() {
        let one = Tensor::matrix(1, 2, vec![4.0, -1.0]).unwrap();
        assert_eq!(pool_sequence(&one, None).unwrap().data(), &[4.0, -1.0]);
        let f = Tensor::from_rows(&[[1.0, 1.0], [3.0, 3.0]]).unwrap();
        assert_eq!(pool_sequence(&f, None).unwrap().data(), &[2.0, 2.0]);
        let swapped = Tensor::from_rows(&[[3.0, 3.0], [1.0, 1.0]]).unwrap();
        assert_eq!(pool_sequence(&swapped, None).unwrap(), pool_sequence(&f, None).unwrap());
        let masked = pool_sequence(&f, Some(&[true, false])).unwrap();
        assert_eq!(masked.data(), &[1.0, 1.0]);
        assert!(matches!(
            pool_sequence(&f, Some(&[false, false])),
            Err(Error::EmptySequence(_))
        ));
    }

    #[test]
    fn padding_tokens_are_masked() {
        let p = ModelParams::init(&small_config(CellKind::Gated), 4).unwrap();
        let mut a = record();
        a.ingredients = vec![3, 5, 2];
        let mut b = a.clone();
        b.ingredients = vec![3, 5, 2, 0, 0];
        assert_eq!(p.encode_recipe(&a).unwrap().vector, p.encode_recipe(&b).unwrap().vector);
        b.ingredients = vec![0, 0];
        assert!(matches!(p.encode_recipe(&b), Err(Error::EmptySequence(_))));
    }

    #[test]
    fn instruction_encoder_cases() {
        let mut cfg = small_config(CellKind::SimpleTanh);
        cfg.attention = true;
        let mut p = ModelParams::init(&cfg, 5).unwrap();
        // zero recurrent weights -> H is zero -> layer norm of zeros -> zero
        for (spec, t) in p.specs.clone().iter().zip(p.tensors_mut()) {
            if spec.name.starts_with("instruction.") {
                t.data_mut().fill(0.0);
            }
        }
        let out = p.encode_instructions(&Tensor::zeros(&[1, 5])).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-9));
        assert!(p.encode_instructions(&Tensor::zeros(&[1, 4])).is_err());

        let p = ModelParams::init(&cfg, 6).unwrap();
        let s = sample_h(3, 5, 9);
        let mut rev = s.clone();
        for r in 0..3 {
            rev.data_mut()[r * 5..(r + 1) * 5].copy_from_slice(s.row(2 - r));
        }
        let a = p.encode_instructions(&s).unwrap();
        let b = p.encode_instructions(&rev).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn recipe_and_image_encoders() {
        let mut p = ModelParams::init(&small_config(CellKind::Gated), 7).unwrap();
        let r = record();
        let a = p.encode_recipe(&r).unwrap();
        assert_eq!(a.vector.len(), 3);
        assert_eq!(a, p.encode_recipe(&r).unwrap());
        // zero fusion weight -> tanh(bias)
        let idx = p.specs.iter().position(|s| s.name == "fusion.w").unwrap();
        p.tensors_mut()[idx].data_mut().fill(0.0);
        let bidx = p.specs.iter().position(|s| s.name == "fusion.b").unwrap();
        p.tensors_mut()[bidx] = Tensor::vector(vec![0.2, -0.4, 1.0]);
        let v = p.encode_recipe(&r).unwrap().vector;
        let expect: Vec<f64> = [0.2f64, -0.4, 1.0].iter().map(|x| x.tanh()).collect();
        assert_eq!(v, expect);

        // 2 -> 3 toy projection
        let w = p.specs.iter().position(|s| s.name == "image.w").unwrap();
        p.tensors_mut()[w] = Tensor::from_rows(&[[1.0, 0.0, -1.0], [0.5, 2.0, 0.0]]).unwrap();
        let b = p.specs.iter().position(|s| s.name == "image.b").unwrap();
        p.tensors_mut()[b] = Tensor::vector(vec![0.0, 0.1, 0.0]);
        let img = p.encode_image(&[2.0, -1.0], 0).unwrap().vector;
        let hand = [(2.0f64 - 0.5).tanh(), (-2.0f64 + 0.1).tanh(), (-2.0f64).tanh()];
        for (x, y) in img.iter().zip(hand) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(p.encode_image(&[1.0], 0).is_err());
    }

    #[test]
    fn reference_config_outputs_joint_dim_1024() {
        let cfg = ModelConfig {
            vocab_size: 64,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(&cfg, 0).unwrap();
        let r = FoodPairRecord {
            pair_id: 0,
            class_label: 0,
            ingredients: vec![1, 2, 3],
            instructions: Tensor::filled(&[2, 1024], 0.01),
            image_features: vec![0.1; 2048],
        };
        let rec = p.encode_recipe(&r).unwrap();
        let img = p.encode_image(&r.image_features, 0).unwrap();
        assert_eq!(rec.vector.len(), 1024);
        assert_eq!(img.vector.len(), 1024);
        assert!(rec.vector.iter().chain(&img.vector).all(|v| v.is_finite()));
    }
}
