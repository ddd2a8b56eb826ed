//! Cross-modal retrieval metrics: ranks by L2 distance, median rank,
//! recall at K, repeated subset sampling, and the paired intra-class
//! distance table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{l2_distance, Tensor};

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    ImageToRecipe,
    RecipeToImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub direction: Direction,
    /// 1-based rank of the true counterpart, per query.
    pub ranks: Vec<usize>,
}

/// Rank of `gallery[i]` for `queries[i]` in ascending L2 distance. A
/// gallery item at equal distance ranks ahead only if its index is lower.
pub fn rank_queries(queries: &Tensor, gallery: &Tensor) -> Result<Vec<usize>> {
    if queries.rank() != 2 || gallery.rank() != 2 || queries.shape() != gallery.shape() {
        return Err(Error::dim("rank_queries", queries.shape(), gallery.shape()));
    }
    let m = queries.rows();
    let mut ranks = Vec::with_capacity(m);
    let mut dist = vec![0.0; m];
    for i in 0..m {
        for (j, d) in dist.iter_mut().enumerate() {
            *d = l2_distance(queries.row(i), gallery.row(j))?;
        }
        let truth = dist[i];
        let ahead = dist
            .iter()
            .enumerate()
            .filter(|&(j, &d)| d < truth || (d == truth && j < i))
            .count();
        ranks.push(ahead + 1);
    }
    Ok(ranks)
}

/// Median; the mean of the two middle values for an even count.
pub fn median_rank(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Data("median of an empty rank list".into()));
    }
    let mut s = ranks.to_vec();
    s.sort_unstable();
    let n = s.len();
    Ok(if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0
    })
}

/// Percentage of ranks within the top `k`.
pub fn recall_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub medr: f64,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

impl DirectionMetrics {
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        Ok(Self {
            medr: median_rank(ranks)?,
            r1: recall_at_k(ranks, RECALL_KS[0]),
            r5: recall_at_k(ranks, RECALL_KS[1]),
            r10: recall_at_k(ranks, RECALL_KS[2]),
        })
    }

    fn mean(items: &[DirectionMetrics]) -> Self {
        let n = items.len() as f64;
        let mut m = Self::default();
        for x in items {
            m.medr += x.medr / n;
            m.r1 += x.r1 / n;
            m.r5 += x.r5 / n;
            m.r10 += x.r10 / n;
        }
        m
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub image_to_recipe: DirectionMetrics,
    pub recipe_to_image: DirectionMetrics,
}

impl SubsetMetrics {
    pub fn evaluate(images: &Tensor, recipes: &Tensor) -> Result<Self> {
        Ok(Self {
            image_to_recipe: DirectionMetrics::from_ranks(&rank_queries(images, recipes)?)?,
            recipe_to_image: DirectionMetrics::from_ranks(&rank_queries(recipes, images)?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subset_size: usize,
    pub seed: u64,
    /// Per-subset sampling seeds, derived from `seed`.
    pub subset_seeds: Vec<u64>,
    pub subsets: Vec<SubsetMetrics>,
    /// Mean over subsets (MedR included).
    pub mean: SubsetMetrics,
}

fn select_rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| t.row(i)).collect();
    Tensor::from_rows(&rows)
}

/// Evaluates `n_subsets` random subsets of `subset_size` pairs, drawn
/// without replacement; row `i` of `images` pairs with row `i` of `recipes`.
pub fn sampled_eval(
    images: &Tensor,
    recipes: &Tensor,
    subset_size: usize,
    n_subsets: usize,
    seed: u64,
) -> Result<EvalReport> {
    if images.rank() != 2 || images.shape() != recipes.shape() {
        return Err(Error::dim("sampled_eval", images.shape(), recipes.shape()));
    }
    let n = images.rows();
    if subset_size == 0 || subset_size > n {
        return Err(Error::Data(format!("subset size {subset_size} invalid for {n} pairs")));
    }
    if n_subsets == 0 {
        return Err(Error::Data("at least one subset is required".into()));
    }
    let mut subsets = Vec::with_capacity(n_subsets);
    let mut subset_seeds = Vec::with_capacity(n_subsets);
    for s in 0..n_subsets as u64 {
        let sub_seed = seed.wrapping_add(s);
        subset_seeds.push(sub_seed);
        let metrics = if subset_size == n {
            SubsetMetrics::evaluate(images, recipes)?
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed);
            let mut idx = sample(&mut rng, n, subset_size).into_vec();
            idx.sort_unstable();
            SubsetMetrics::evaluate(&select_rows(images, &idx)?, &select_rows(recipes, &idx)?)?
        };
        subsets.push(metrics);
    }
    let i2r: Vec<_> = subsets.iter().map(|s| s.image_to_recipe).collect();
    let r2i: Vec<_> = subsets.iter().map(|s| s.recipe_to_image).collect();
    Ok(EvalReport {
        subset_size,
        seed,
        subset_seeds,
        mean: SubsetMetrics {
            image_to_recipe: DirectionMetrics::mean(&i2r),
            recipe_to_image: DirectionMetrics::mean(&r2i),
        },
        subsets,
    })
}

impl EvalReport {
    /// Aligned table: medR, R@1, R@5, R@10 for image→recipe, then recipe→image.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} | {:>7} {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7} {:>7}",
            "subset", "medR", "R@1", "R@5", "R@10", "medR", "R@1", "R@5", "R@10"
        );
        let _ = writeln!(out, "{:<8} | {:^31} | {:^31}", "", "image-to-recipe", "recipe-to-image");
        let mut row = |label: &str, m: &SubsetMetrics| {
            let (a, b) = (m.image_to_recipe, m.recipe_to_image);
            let _ = writeln!(
                out,
                "{label:<8} | {:>7.1} {:>7.1} {:>7.1} {:>7.1} | {:>7.1} {:>7.1} {:>7.1} {:>7.1}",
                a.medr, a.r1, a.r5, a.r10, b.medr, b.r1, b.r5, b.r10
            );
        };
        for (k, s) in self.subsets.iter().enumerate() {
            row(&k.to_string(), s);
        }
        row("mean", &self.mean);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistance {
    pub class_label: usize,
    pub pairs: usize,
    pub mean_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntraClassReport {
    pub classes: Vec<ClassDistance>,
    /// Mean paired distance over all pairs.
    pub overall_mean: f64,
}

/// Mean `d(I_k, R_k)` over the pairs of each class.
pub fn intra_class_distance_report(labels: &[usize], images: &Tensor, recipes: &Tensor) -> Result<IntraClassReport> {
    if images.rank() != 2 || images.shape() != recipes.shape() || labels.len() != images.rows() {
        return Err(Error::dim(
            "intra_class_distance_report",
            images.shape(),
            &[labels.len()],
        ));
    }
    let mut acc: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    let mut total = 0.0;
    for (k, &c) in labels.iter().enumerate() {
        let d = l2_distance(images.row(k), recipes.row(k))?;
        let e = acc.entry(c).or_default();
        e.0 += 1;
        e.1 += d;
        total += d;
    }
    Ok(IntraClassReport {
        classes: acc
            .into_iter()
            .map(|(class_label, (pairs, sum))| ClassDistance {
                class_label,
                pairs,
                mean_distance: sum / pairs as f64,
            })
            .collect(),
        overall_mean: total / labels.len().max(1) as f64,
    })
}

impl IntraClassReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>6} {:>6} {:>12}\n", "class", "pairs", "mean_dist");
        for c in &self.classes {
            let _ = writeln!(out, "{:>6} {:>6} {:>12.6}", c.class_label, c.pairs, c.mean_distance);
        }
        let n: usize = self.classes.iter().map(|c| c.pairs).sum();
        let _ = writeln!(out, "{:>6} {:>6} {:>12.6}", "all", n, self.overall_mean);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_cases() {
        let e = Tensor::identity(4);
        assert_eq!(rank_queries(&e, &e).unwrap(), vec![1; 4]);
        let q = Tensor::from_rows(&[[0.0], [1.0]]).unwrap();
        let g = Tensor::from_rows(&[[0.1], [0.9]]).unwrap();
        assert_eq!(rank_queries(&q, &g).unwrap(), vec![1, 1]);
        // equal distances: the lower gallery index wins
        let q = Tensor::from_rows(&[[0.0], [0.0]]).unwrap();
        let g = Tensor::from_rows(&[[1.0], [-1.0]]).unwrap();
        assert_eq!(rank_queries(&q, &g).unwrap(), vec![1, 2]);
        assert!(rank_queries(&q, &Tensor::identity(2)).is_err());
    }

    #[test]
    fn median_and_recall() {
        assert_eq!(median_rank(&[3, 1, 2]).unwrap(), 2.0);
        assert_eq!(median_rank(&[1, 2, 3, 4]).unwrap(), 2.5);
        assert_eq!(median_rank(&[1; 7]).unwrap(), 1.0);
        assert!(median_rank(&[]).is_err());
        assert!((recall_at_k(&[1, 5, 12], 5) - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(recall_at_k(&[1, 5, 12], 12), 100.0);
        assert_eq!(recall_at_k(&[1, 1], 1), 100.0);
    }

    #[test]
    fn full_subset_equals_direct() {
        let i = Tensor::from_rows(&[[0.0, 1.0], [2.0, 0.5], [1.0, 1.0], [-1.0, 0.0]]).unwrap();
        let r = Tensor::from_rows(&[[0.2, 0.9], [1.1, 1.0], [2.0, 0.4], [-1.0, 0.3]]).unwrap();
        let rep = sampled_eval(&i, &r, 4, 1, 9).unwrap();
        assert_eq!(rep.mean, SubsetMetrics::evaluate(&i, &r).unwrap());
        let a = sampled_eval(&i, &r, 3, 5, 2).unwrap();
        assert_eq!(a, sampled_eval(&i, &r, 3, 5, 2).unwrap());
        assert!(sampled_eval(&i, &r, 5, 1, 0).is_err());
        assert!(rep.to_table().contains("mean"));
    }

    #[test]
    fn intra_class_cases() {
        let i = Tensor::from_rows(&[[0.0], [0.0], [5.0]]).unwrap();
        let r = Tensor::from_rows(&[[1.0], [3.0], [5.5]]).unwrap();
        let rep = intra_class_distance_report(&[0, 0, 1], &i, &r).unwrap();
        assert_eq!(rep.classes[0].mean_distance, 2.0);
        let two = intra_class_distance_report(
            &[0, 0],
            &select_rows(&i, &[0, 1]).unwrap(),
            &select_rows(&r, &[0, 1]).unwrap(),
        )
        .unwrap();
        assert_eq!(two.classes[0], rep.classes[0]);
        assert!((rep.overall_mean - 4.5 / 3.0).abs() < 1e-15);
        let same = intra_class_distance_report(&[0, 1, 1], &i, &i).unwrap();
        assert!(same.classes.iter().all(|c| c.mean_distance == 0.0));
        assert!(rep.to_table().contains("all"));
    }
}
