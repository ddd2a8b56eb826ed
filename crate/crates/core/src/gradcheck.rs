//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{LossConfig, ModelConfig};
use crate::dataset::{synthetic_generate, FoodPairRecord, SyntheticConfig};
use crate::encoders::ModelParams;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::{kink_gap, pairwise_distance_matrix, total_loss_graph, TripletMarginConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many coordinates per parameter (all when `None`).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub index: usize,
    pub coords_checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub step: f64,
    pub tolerance: f64,
    pub sample_seed: Option<u64>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares reverse-mode gradients of a scalar function of `params` with
/// central differences `(f(θ+h) − f(θ−h)) / 2h`.
///
/// `build` records the function on a fresh graph given one trainable leaf
/// per parameter and returns the scalar output node.
pub fn finite_difference_check<F>(params: &[Tensor], build: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(opts.step > 0.0 && opts.step <= 1e-2) {
        return Err(Error::Contract(format!(
            "finite-difference step {} outside (0, 1e-2]",
            opts.step
        )));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = build(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(Error::Contract("gradient check needs a scalar output".into()));
        }
        Ok(g.scalar(out))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut reports = Vec::with_capacity(params.len());
    for (pi, var) in vars.iter().enumerate() {
        let n = params[pi].len();
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params[pi].shape()));
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for &c in &coords {
            let orig = work[pi].data()[c];
            work[pi].data_mut()[c] = orig + opts.step;
            let plus = eval(&work)?;
            work[pi].data_mut()[c] = orig - opts.step;
            let minus = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            worst = worst.max(relative_error(analytic.data()[c], numeric));
        }
        reports.push(ParamCheck {
            index: pi,
            coords_checked: coords.len(),
            max_rel_error: worst,
        });
    }
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: reports,
        step: opts.step,
        tolerance: opts.tolerance,
        sample_seed: opts.max_coords.map(|_| opts.seed),
        max_rel_error,
        passed: max_rel_error <= opts.tolerance,
    })
}

/// Gradient check of the full training loss on one batch, against every
/// parameter of the model.
pub fn check_total_loss(
    params: &ModelParams,
    records: &[&FoodPairRecord],
    loss: &LossConfig,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    finite_difference_check(
        params.tensors(),
        |g, vars| {
            let model = params.bind_vars(vars)?;
            Ok(total_loss_graph(g, &model, records, loss)?.total)
        },
        opts,
    )
}

/// Distance of the batch's triplet hinges and mining choices from their kinks.
pub fn batch_kink_gap(params: &ModelParams, records: &[&FoodPairRecord], loss: &LossConfig) -> Result<f64> {
    let (images, recipes) = params.embed_records(records)?;
    let d = pairwise_distance_matrix(&images, &recipes)?;
    let pair_ids: Vec<u64> = records.iter().map(|r| r.pair_id).collect();
    let labels: Vec<usize> = records.iter().map(|r| r.class_label).collect();
    kink_gap(&d, &pair_ids, &labels, &TripletMarginConfig::from(loss))
}

/// A small random model and batch for checking the full loss.
#[derive(Clone, Debug, Serialize)]
pub struct LossCheckSetup {
    pub batch_size: usize,
    pub joint_dim: usize,
    pub num_classes: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Batches closer than this to a hinge kink or a mining switch are
    /// redrawn; finite differences straddling a kink are meaningless.
    pub min_kink_gap: f64,
    pub max_attempts: u64,
}

impl Default for LossCheckSetup {
    fn default() -> Self {
        Self {
            batch_size: 8,
            joint_dim: 16,
            num_classes: 5,
            lambda: 0.05,
            seed: 0,
            min_kink_gap: 1e-4,
            max_attempts: 50,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LossCheckOutcome {
    pub report: GradCheckReport,
    /// Seed of the accepted draw (`setup.seed + attempt`).
    pub draw_seed: u64,
    pub kink_gap: f64,
    pub parameter_names: Vec<String>,
}

pub fn full_loss_check(setup: &LossCheckSetup, opts: &GradCheckOptions) -> Result<LossCheckOutcome> {
    let model = ModelConfig {
        vocab_size: 30,
        word_dim: 4,
        hidden_dim: 3,
        sentence_dim: 6,
        image_dim: 10,
        joint_dim: setup.joint_dim,
        num_classes: setup.num_classes,
        ..ModelConfig::default()
    };
    let loss = LossConfig {
        lambda: setup.lambda,
        ..LossConfig::default()
    };
    for attempt in 0..setup.max_attempts {
        let draw_seed = setup.seed.wrapping_add(attempt);
        let data = synthetic_generate(&SyntheticConfig {
            num_classes: setup.num_classes,
            pairs_per_class: setup.batch_size.div_ceil(setup.num_classes),
            vocab_size: model.vocab_size,
            common_tokens: 6,
            class_tokens: 4,
            tokens_per_recipe: (2, 5),
            sentences_per_recipe: (1, 3),
            sentence_dim: model.sentence_dim,
            image_dim: model.image_dim,
            seed: draw_seed,
            ..SyntheticConfig::default()
        })?;
        let records: Vec<&FoodPairRecord> = data.records.iter().take(setup.batch_size).collect();
        let params = ModelParams::init(&model, draw_seed)?;
        let gap = batch_kink_gap(&params, &records, &loss)?;
        if gap < setup.min_kink_gap {
            continue;
        }
        let report = check_total_loss(&params, &records, &loss, opts)?;
        return Ok(LossCheckOutcome {
            report,
            draw_seed,
            kink_gap: gap,
            parameter_names: params.specs().iter().map(|s| s.name.clone()).collect(),
        });
    }
    Err(Error::Contract(format!(
        "no batch clear of hinge kinks in {} draws",
        setup.max_attempts
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches_closed_form() {
        let theta = Tensor::vector(vec![1.0, 2.0]);
        let build = |g: &mut Graph, v: &[Var]| -> Result<Var> {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        };
        let mut g = Graph::new();
        let t = g.param(theta.clone());
        let out = build(&mut g, &[t]).unwrap();
        assert_eq!(g.backward(out).unwrap().get(t).unwrap().data(), &[2.0, 4.0]);
        let report = finite_difference_check(
            &[theta],
            build,
            &GradCheckOptions {
                tolerance: 1e-8,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn constant_graph_has_zero_gradient() {
        let theta = Tensor::vector(vec![0.3, -0.7]);
        let report = finite_difference_check(
            &[theta],
            |g, _| Ok(g.constant(Tensor::scalar(4.0))),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn non_scalar_output_is_a_contract_error() {
        let theta = Tensor::vector(vec![0.3, -0.7]);
        let err = finite_difference_check(&[theta], |_, v| Ok(v[0]), &GradCheckOptions::default());
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn step_out_of_range_is_rejected() {
        let theta = Tensor::vector(vec![1.0]);
        let opts = GradCheckOptions {
            step: 0.5,
            ..Default::default()
        };
        assert!(finite_difference_check(&[theta], |g, v| Ok(g.sum(v[0])), &opts).is_err());
    }
}
