//! Retrieval and semantic-consistency objectives.
//!
//! Retrieval uses a bidirectional triplet hinge with BatchHard mining: for
//! every image anchor (a row of the distance matrix) and every recipe
//! anchor (a column) the farthest positive and the nearest negative are
//! selected inside the batch. The semantic term classifies both
//! embeddings and pulls the two predicted class distributions together
//! with KL divergence in both directions.

use serde::{Deserialize, Serialize};

use crate::config::{LossConfig, PositiveMode, Reduction, RetrievalLoss, SemanticMode};
use crate::dataset::FoodPairRecord;
use crate::encoders::BoundModel;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{log_softmax_rows, matmul, pairwise_distances, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletMarginConfig {
    pub margin: f64,
    pub positive_mode: PositiveMode,
    pub reduction: Reduction,
}

impl Default for TripletMarginConfig {
    fn default() -> Self {
        Self {
            margin: 0.3,
            positive_mode: PositiveMode::Paired,
            reduction: Reduction::Mean,
        }
    }
}

impl From<&LossConfig> for TripletMarginConfig {
    fn from(c: &LossConfig) -> Self {
        Self {
            margin: c.margin,
            positive_mode: c.positive_mode,
            reduction: c.reduction,
        }
    }
}

/// `(positive, negative)` index per anchor, for both anchor directions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinedTriplets {
    /// Image anchor `i` → recipe indices.
    pub image_anchors: Vec<(usize, usize)>,
    /// Recipe anchor `j` → image indices.
    pub recipe_anchors: Vec<(usize, usize)>,
}

/// Entry `(i, j)` is `‖I_i − R_j‖`.
pub fn pairwise_distance_matrix(images: &Tensor, recipes: &Tensor) -> Result<Tensor> {
    if images.rank() != 2 || recipes.rank() != 2 || images.rows() != recipes.rows() {
        return Err(Error::dim("pairwise_distance_matrix", images.shape(), recipes.shape()));
    }
    pairwise_distances(images, recipes)
}

fn is_positive(mode: PositiveMode, pair_ids: &[u64], labels: &[usize], a: usize, c: usize) -> bool {
    match mode {
        PositiveMode::Paired => pair_ids[a] == pair_ids[c],
        PositiveMode::SameClass => labels[a] == labels[c] || pair_ids[a] == pair_ids[c],
    }
}

fn mine_direction(
    b: usize,
    dist: impl Fn(usize, usize) -> f64,
    positive: impl Fn(usize, usize) -> bool,
    direction: &'static str,
) -> Result<Vec<(usize, usize)>> {
    (0..b)
        .map(|a| {
            let mut pos: Option<(usize, f64)> = None;
            let mut neg: Option<(usize, f64)> = None;
            for c in 0..b {
                let d = dist(a, c);
                if positive(a, c) {
                    if pos.is_none_or(|(_, best)| d > best) {
                        pos = Some((c, d));
                    }
                } else if neg.is_none_or(|(_, best)| d < best) {
                    neg = Some((c, d));
                }
            }
            match (pos, neg) {
                (Some((p, _)), Some((n, _))) => Ok((p, n)),
                _ => Err(Error::Mining { direction, anchor: a }),
            }
        })
        .collect()
}

/// BatchHard selection. Ties go to the lowest index.
pub fn batch_hard_mine(
    d: &Tensor,
    pair_ids: &[u64],
    labels: &[usize],
    cfg: &TripletMarginConfig,
) -> Result<MinedTriplets> {
    let (b, c) = d.dims2();
    if d.rank() != 2 || b != c {
        return Err(Error::dim("batch_hard_mine", d.shape(), &[b, b]));
    }
    if pair_ids.len() != b || labels.len() != b {
        return Err(Error::dim("batch_hard_mine", &[b], &[pair_ids.len(), labels.len()]));
    }
    let pos = |a, c| is_positive(cfg.positive_mode, pair_ids, labels, a, c);
    Ok(MinedTriplets {
        image_anchors: mine_direction(b, |a, j| d.at(a, j), pos, "image")?,
        recipe_anchors: mine_direction(b, |a, i| d.at(i, a), pos, "recipe")?,
    })
}

/// `[d_ap − d_an + α]_+`.
pub fn hinge_term(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

/// Flat indices into `D` of the mined positive and negative distances,
/// image anchors first, then recipe anchors.
fn triplet_indices(b: usize, mined: &MinedTriplets) -> (Vec<usize>, Vec<usize>) {
    let mut pos = Vec::with_capacity(2 * b);
    let mut neg = Vec::with_capacity(2 * b);
    for (a, &(p, n)) in mined.image_anchors.iter().enumerate() {
        pos.push(a * b + p);
        neg.push(a * b + n);
    }
    for (a, &(p, n)) in mined.recipe_anchors.iter().enumerate() {
        pos.push(p * b + a);
        neg.push(n * b + a);
    }
    (pos, neg)
}

/// Smallest distance of any hinge from its kink, or of any mined choice
/// from the runner-up that would replace it. Finite differences are only
/// trustworthy when this is comfortably larger than the step.
pub fn kink_gap(d: &Tensor, pair_ids: &[u64], labels: &[usize], cfg: &TripletMarginConfig) -> Result<f64> {
    let mined = batch_hard_mine(d, pair_ids, labels, cfg)?;
    let b = d.rows();
    let (pos, neg) = triplet_indices(b, &mined);
    let mut gap = f64::INFINITY;
    for (p, n) in pos.iter().zip(&neg) {
        gap = gap.min((d.data()[*p] - d.data()[*n] + cfg.margin).abs());
    }
    let pred = |a, c| is_positive(cfg.positive_mode, pair_ids, labels, a, c);
    for (dir, list) in [(0, &mined.image_anchors), (1, &mined.recipe_anchors)] {
        let at = |a: usize, c: usize| if dir == 0 { d.at(a, c) } else { d.at(c, a) };
        for (a, &(p, n)) in list.iter().enumerate() {
            for c in 0..b {
                if pred(a, c) && c != p {
                    gap = gap.min((at(a, p) - at(a, c)).abs());
                }
                if !pred(a, c) && c != n {
                    gap = gap.min((at(a, c) - at(a, n)).abs());
                }
            }
        }
    }
    Ok(gap)
}

/// Bidirectional BatchHard triplet loss on the graph. Returns the loss and
/// the mining used.
pub fn triplet_loss_graph(
    g: &mut Graph,
    images: Var,
    recipes: Var,
    pair_ids: &[u64],
    labels: &[usize],
    cfg: &TripletMarginConfig,
) -> Result<(Var, MinedTriplets)> {
    let b = g.value(images).rows();
    if b < 2 {
        return Err(Error::Data(format!("triplet loss needs at least 2 pairs, got {b}")));
    }
    if g.value(recipes).rows() != b {
        return Err(Error::dim(
            "triplet_loss",
            g.value(images).shape(),
            g.value(recipes).shape(),
        ));
    }
    let d = g.pairwise_distance(images, recipes)?;
    let mined = batch_hard_mine(g.value(d), pair_ids, labels, cfg)?;
    let (pos, neg) = triplet_indices(b, &mined);
    let dp = g.pick(d, &pos)?;
    let dn = g.pick(d, &neg)?;
    let diff = g.sub(dp, dn)?;
    let shifted = g.add_const(diff, cfg.margin);
    let hinge = g.relu(shifted);
    let total = g.sum(hinge);
    let loss = match cfg.reduction {
        Reduction::Mean => g.scale(total, 1.0 / (2 * b) as f64),
        Reduction::Sum => total,
    };
    Ok((loss, mined))
}

/// Value-level triplet loss.
pub fn triplet_loss(
    images: &Tensor,
    recipes: &Tensor,
    pair_ids: &[u64],
    labels: &[usize],
    cfg: &TripletMarginConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let i = g.constant(images.clone());
    let r = g.constant(recipes.clone());
    let (loss, _) = triplet_loss_graph(&mut g, i, r, pair_ids, labels, cfg)?;
    Ok(g.scalar(loss))
}

/// Cosine-embedding retrieval loss: `mean(1 − cos(I_i, R_i))` plus the mean
/// of `[cos(I_i, R_j) − margin]_+` over non-matching pairs.
pub fn cosine_loss_graph(g: &mut Graph, images: Var, recipes: Var, pair_ids: &[u64], margin: f64) -> Result<Var> {
    let b = g.value(images).rows();
    if b < 2 || g.value(recipes).rows() != b {
        return Err(Error::dim(
            "cosine_loss",
            g.value(images).shape(),
            g.value(recipes).shape(),
        ));
    }
    let ni = g.normalize_rows(images)?;
    let nr = g.normalize_rows(recipes)?;
    let nrt = g.transpose(nr)?;
    let cos = g.matmul(ni, nrt)?;
    let diag: Vec<usize> = (0..b).map(|i| i * b + i).collect();
    let off: Vec<usize> = (0..b)
        .flat_map(|i| (0..b).map(move |j| (i, j)))
        .filter(|&(i, j)| pair_ids[i] != pair_ids[j])
        .map(|(i, j)| i * b + j)
        .collect();
    let pos = g.pick(cos, &diag)?;
    let pos = g.mean(pos);
    let pos = g.scale(pos, -1.0);
    let pos = g.add_const(pos, 1.0);
    if off.is_empty() {
        return Ok(pos);
    }
    let neg = g.pick(cos, &off)?;
    let neg = g.add_const(neg, -margin);
    let neg = g.relu(neg);
    let neg = g.mean(neg);
    g.add(pos, neg)
}

/// Class distribution with its log-domain companion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl ClassProbabilities {
    pub fn from_logits(logits: &[f64]) -> Self {
        let lp = log_softmax_rows(&Tensor::vector(logits.to_vec())).into_data();
        Self {
            probs: lp.iter().map(|v| v.exp()).collect(),
            log_probs: lp,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Predicted label (argmax, lowest index on ties).
    pub fn predicted(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Softmax of `embedding · W + b`, with `W` of shape `d_J × N`.
pub fn class_probabilities(embedding: &[f64], weight: &Tensor, bias: &Tensor) -> Result<ClassProbabilities> {
    let (d, n) = weight.dims2();
    if embedding.len() != d || bias.len() != n {
        return Err(Error::dim(
            "class_probabilities",
            &[embedding.len(), bias.len()],
            &[d, n],
        ));
    }
    let x = Tensor::matrix(1, d, embedding.to_vec())?;
    let logits = matmul(&x, weight)?;
    let logits: Vec<f64> = logits.data().iter().zip(bias.data()).map(|(a, b)| a + b).collect();
    Ok(ClassProbabilities::from_logits(&logits))
}

pub fn cross_entropy(p: &ClassProbabilities, true_class: usize) -> Result<f64> {
    p.log_probs.get(true_class).map(|lp| -lp).ok_or(Error::Label {
        label: true_class,
        classes: p.num_classes(),
    })
}

/// `KL(p‖q) = Σ p_i (log p_i − log q_i)`.
pub fn kl_divergence(p: &ClassProbabilities, q: &ClassProbabilities) -> Result<f64> {
    if p.num_classes() != q.num_classes() {
        return Err(Error::dim("kl_divergence", &[p.num_classes()], &[q.num_classes()]));
    }
    Ok(p.probs
        .iter()
        .zip(&p.log_probs)
        .zip(&q.log_probs)
        .map(|((pi, lp), lq)| pi * (lp - lq))
        .sum())
}

fn check_batch(
    p_img: &[ClassProbabilities],
    p_rec: &[ClassProbabilities],
    c_img: &[usize],
    c_rec: &[usize],
) -> Result<()> {
    let n = p_img.len();
    if n == 0 {
        return Err(Error::EmptySequence("semantic_consistency_loss"));
    }
    if p_rec.len() != n || c_img.len() != n || c_rec.len() != n {
        return Err(Error::dim(
            "semantic_consistency_loss",
            &[n, n],
            &[p_rec.len(), c_img.len().max(c_rec.len())],
        ));
    }
    Ok(())
}

/// `((CE_img + KL(p_rec‖p_img)) + (CE_rec + KL(p_img‖p_rec))) / 2`, averaged over the batch.
pub fn semantic_consistency_loss(
    p_img: &[ClassProbabilities],
    p_rec: &[ClassProbabilities],
    c_img: &[usize],
    c_rec: &[usize],
) -> Result<f64> {
    check_batch(p_img, p_rec, c_img, c_rec)?;
    let mut total = 0.0;
    for k in 0..p_img.len() {
        let img = cross_entropy(&p_img[k], c_img[k])? + kl_divergence(&p_rec[k], &p_img[k])?;
        let rec = cross_entropy(&p_rec[k], c_rec[k])? + kl_divergence(&p_img[k], &p_rec[k])?;
        total += (img + rec) / 2.0;
    }
    Ok(total / p_img.len() as f64)
}

/// The same quantity grouped as mean classification loss plus mean KL.
pub fn semantic_consistency_regrouped(
    p_img: &[ClassProbabilities],
    p_rec: &[ClassProbabilities],
    c_img: &[usize],
    c_rec: &[usize],
) -> Result<f64> {
    check_batch(p_img, p_rec, c_img, c_rec)?;
    let n = p_img.len() as f64;
    let (mut cls, mut kl) = (0.0, 0.0);
    for k in 0..p_img.len() {
        cls += (cross_entropy(&p_img[k], c_img[k])? + cross_entropy(&p_rec[k], c_rec[k])?) / 2.0;
        kl += (kl_divergence(&p_img[k], &p_rec[k])? + kl_divergence(&p_rec[k], &p_img[k])?) / 2.0;
    }
    Ok(cls / n + kl / n)
}

/// Per-batch loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub retrieval: f64,
    pub cls_image: f64,
    pub cls_recipe: f64,
    /// `KL(p_rec‖p_img)`.
    pub kl_rec_img: f64,
    /// `KL(p_img‖p_rec)`.
    pub kl_img_rec: f64,
    pub semantic: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Component-wise mean of a trace.
    pub fn mean(trace: &[LossBreakdown]) -> LossBreakdown {
        let n = trace.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in trace {
            m.retrieval += b.retrieval / n;
            m.cls_image += b.cls_image / n;
            m.cls_recipe += b.cls_recipe / n;
            m.kl_rec_img += b.kl_rec_img / n;
            m.kl_img_rec += b.kl_img_rec / n;
            m.semantic += b.semantic / n;
            m.total += b.total / n;
        }
        m.lambda = trace.first().map_or(0.0, |b| b.lambda);
        m
    }
}

pub struct SemanticTerms {
    pub cls_image: Var,
    pub cls_recipe: Var,
    pub kl_rec_img: Var,
    pub kl_img_rec: Var,
    pub loss: Var,
}

/// Classifier heads, cross-entropies, both KL directions and `L_SC` on the graph.
pub fn semantic_graph(
    g: &mut Graph,
    images: Var,
    recipes: Var,
    image_head: (Var, Var),
    recipe_head: (Var, Var),
    labels: &[usize],
    mode: SemanticMode,
) -> Result<SemanticTerms> {
    let b = labels.len();
    let classes = g.value(image_head.1).len();
    if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
        return Err(Error::Label { label: bad, classes });
    }
    let log_probs = |g: &mut Graph, x: Var, (w, bias): (Var, Var)| -> Result<Var> {
        let z = g.matmul(x, w)?;
        let z = g.add_row(z, bias)?;
        Ok(g.log_softmax_rows(z))
    };
    let lp_i = log_probs(g, images, image_head)?;
    let lp_r = log_probs(g, recipes, recipe_head)?;
    let picks: Vec<usize> = labels.iter().enumerate().map(|(k, &c)| k * classes + c).collect();
    let ce = |g: &mut Graph, lp: Var| -> Result<Var> {
        let t = g.pick(lp, &picks)?;
        let m = g.mean(t);
        Ok(g.scale(m, -1.0))
    };
    let cls_image = ce(g, lp_i)?;
    let cls_recipe = ce(g, lp_r)?;
    // KL(p‖q) per row, then averaged over the batch.
    let kl = |g: &mut Graph, lp: Var, lq: Var| -> Result<Var> {
        let p = g.exp(lp);
        let diff = g.sub(lp, lq)?;
        let w = g.mul(p, diff)?;
        let rows = g.sum_rows(w);
        Ok(g.mean(rows))
    };
    let kl_rec_img = kl(g, lp_r, lp_i)?;
    let kl_img_rec = kl(g, lp_i, lp_r)?;
    let loss = match mode {
        SemanticMode::Consistency => {
            let img = g.add(cls_image, kl_rec_img)?;
            let rec = g.add(cls_recipe, kl_img_rec)?;
            let s = g.add(img, rec)?;
            g.scale(s, 0.5)
        }
        SemanticMode::ClassificationOnly => {
            let s = g.add(cls_image, cls_recipe)?;
            g.scale(s, 0.5)
        }
    };
    debug_assert_eq!(g.value(lp_i).rows(), b);
    Ok(SemanticTerms {
        cls_image,
        cls_recipe,
        kl_rec_img,
        kl_img_rec,
        loss,
    })
}

/// Output of [`total_loss_graph`].
pub struct LossOutput {
    pub total: Var,
    pub breakdown: LossBreakdown,
    /// Mining used by the triplet loss (absent for the cosine variant).
    pub mined: Option<MinedTriplets>,
}

/// `L = L_Ret + λ·L_SC` for a batch, built on `g` against a bound model.
/// With `λ = 0` the semantic branch is still evaluated for reporting but
/// is left out of the differentiated total.
pub fn total_loss_graph(
    g: &mut Graph,
    model: &BoundModel,
    records: &[&FoodPairRecord],
    cfg: &LossConfig,
) -> Result<LossOutput> {
    if records.len() < 2 {
        return Err(Error::Data(format!(
            "batch of {} pairs; at least 2 needed",
            records.len()
        )));
    }
    if !(cfg.lambda >= 0.0) {
        return Err(Error::Config(format!("lambda {} must be nonnegative", cfg.lambda)));
    }
    let pair_ids: Vec<u64> = records.iter().map(|r| r.pair_id).collect();
    let labels: Vec<usize> = records.iter().map(|r| r.class_label).collect();
    let images = model.image_batch(g, records)?;
    let recipes = model.recipe_batch(g, records)?;

    let (ret, mined) = match cfg.retrieval {
        RetrievalLoss::Triplet => {
            let (l, m) = triplet_loss_graph(g, images, recipes, &pair_ids, &labels, &cfg.into())?;
            (l, Some(m))
        }
        RetrievalLoss::Cosine => (
            cosine_loss_graph(g, images, recipes, &pair_ids, cfg.cosine_margin)?,
            None,
        ),
    };
    let sc = semantic_graph(
        g,
        images,
        recipes,
        model.image_head(),
        model.recipe_head(),
        &labels,
        cfg.semantic,
    )?;
    let total = if cfg.lambda > 0.0 {
        let weighted = g.scale(sc.loss, cfg.lambda);
        g.add(ret, weighted)?
    } else {
        ret
    };
    let breakdown = LossBreakdown {
        retrieval: g.scalar(ret),
        cls_image: g.scalar(sc.cls_image),
        cls_recipe: g.scalar(sc.cls_recipe),
        kl_rec_img: g.scalar(sc.kl_rec_img),
        kl_img_rec: g.scalar(sc.kl_img_rec),
        semantic: g.scalar(sc.loss),
        lambda: cfg.lambda,
        total: g.scalar(total),
    };
    Ok(LossOutput {
        total,
        breakdown,
        mined,
    })
}

/// Value-level total loss for a batch.
pub fn total_loss(
    params: &crate::encoders::ModelParams,
    records: &[&FoodPairRecord],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let model = params.bind(&mut g, false);
    Ok(total_loss_graph(&mut g, &model, records, cfg)?.breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(p: &[f64]) -> ClassProbabilities {
        ClassProbabilities {
            probs: p.to_vec(),
            log_probs: p.iter().map(|v| v.ln()).collect(),
        }
    }

    #[test]
    fn distance_matrix_cases() {
        let e = Tensor::identity(3);
        let d = pairwise_distance_matrix(&e, &e).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 2f64.sqrt() };
                assert!((d.at(i, j) - want).abs() < 1e-15);
            }
        }
        let a = Tensor::from_rows(&[[0.0, 0.0]]).unwrap();
        let b = Tensor::from_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(pairwise_distance_matrix(&a, &b).unwrap().data(), &[5.0]);
        assert!(pairwise_distance_matrix(&a, &e).is_err());
    }

    #[test]
    fn mining_hand_case() {
        let d = Tensor::from_rows(&[[0.2, 0.5, 0.9], [0.4, 0.1, 0.3], [0.8, 0.7, 0.2]]).unwrap();
        let m = batch_hard_mine(&d, &[0, 1, 2], &[0, 1, 2], &TripletMarginConfig::default()).unwrap();
        assert_eq!(m.image_anchors[0], (0, 1));
        // recipe anchor 0 looks down column 0: [0.2, 0.4, 0.8] → neg image 1
        assert_eq!(m.recipe_anchors[0], (0, 1));
        let two = Tensor::from_rows(&[[0.0, 5.0], [1.0, 0.0]]).unwrap();
        let m = batch_hard_mine(&two, &[4, 9], &[0, 0], &TripletMarginConfig::default()).unwrap();
        assert_eq!(m.image_anchors, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn mining_without_negative_names_anchor() {
        let d = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let cfg = TripletMarginConfig {
            positive_mode: PositiveMode::SameClass,
            ..TripletMarginConfig::default()
        };
        match batch_hard_mine(&d, &[0, 1], &[3, 3], &cfg) {
            Err(Error::Mining { anchor, direction }) => assert_eq!((anchor, direction), (0, "image")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hinge_cases() {
        assert_eq!(hinge_term(0.2, 1.0, 0.3), 0.0);
        assert!((hinge_term(0.8, 0.5, 0.3) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn class_probability_cases() {
        let w = Tensor::zeros(&[3, 4]);
        let b = Tensor::zeros(&[4]);
        let p = class_probabilities(&[1.0, -2.0, 0.5], &w, &b).unwrap();
        assert!(p.probs.iter().all(|v| (v - 0.25).abs() < 1e-15));
        assert!((cross_entropy(&p, 2).unwrap() - 4f64.ln()).abs() < 1e-15);
        let q = ClassProbabilities::from_logits(&[0.0, 3f64.ln()]);
        assert!((q.probs[0] - 0.25).abs() < 1e-15 && (q.probs[1] - 0.75).abs() < 1e-15);
        assert!((cross_entropy(&q, 1).unwrap() - 0.2876820724517809).abs() < 1e-12);
        assert!(matches!(
            cross_entropy(&q, 2),
            Err(Error::Label { label: 2, classes: 2 })
        ));
        let sure = ClassProbabilities::from_logits(&[40.0, 0.0]);
        assert!(cross_entropy(&sure, 0).unwrap() < 1e-15);
    }

    #[test]
    fn kl_cases() {
        let p = probs(&[0.5, 0.5]);
        let q = probs(&[0.25, 0.75]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let pq = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(&p, &q).unwrap() - pq).abs() < 1e-15);
        assert!((pq - 0.1438).abs() < 5e-5);
        let qp = kl_divergence(&q, &p).unwrap();
        assert!((qp - (0.25 * 0.5f64.ln() + 0.75 * 1.5f64.ln())).abs() < 1e-15);
        assert!((qp - 0.1308).abs() < 5e-5);
    }

    #[test]
    fn semantic_consistency_hand_case() {
        let p_img = vec![probs(&[0.5, 0.5])];
        let p_rec = vec![probs(&[0.25, 0.75])];
        let got = semantic_consistency_loss(&p_img, &p_rec, &[1], &[1]).unwrap();
        let direct = ((-(0.5f64).ln() + 0.1308120) + (-(0.75f64).ln() + 0.1438410)) / 2.0;
        assert!((got - direct).abs() < 1e-6);
        // identical distributions reduce to cross-entropy
        let same = semantic_consistency_loss(&p_rec, &p_rec, &[1], &[1]).unwrap();
        assert!((same - (-(0.75f64).ln())).abs() < 1e-15);
        let regrouped = semantic_consistency_regrouped(&p_img, &p_rec, &[1], &[1]).unwrap();
        assert!((regrouped - got).abs() < 1e-15);
    }

    #[test]
    fn breakdown_mean() {
        let a = LossBreakdown {
            total: 1.0,
            retrieval: 1.0,
            lambda: 0.05,
            ..Default::default()
        };
        let b = LossBreakdown {
            total: 3.0,
            retrieval: 2.0,
            lambda: 0.05,
            ..Default::default()
        };
        let m = LossBreakdown::mean(&[a, b]);
        assert_eq!((m.total, m.retrieval, m.lambda), (2.0, 1.5, 0.05));
    }
}
