//! Numerical self-checks. Each check builds random instances from a seed and
//! compares an implementation against an independent oracle.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{
    deeplift_embedded, exact_shapley, reference_embedding, sampled_shapley, shapley_by_permutations, smooth,
    EmbeddingGame, FnGame, ReferenceMode, ReferenceSpec, Target, SMOOTHING_KERNEL,
};
use crate::eval::{mann_whitney_u, pairwise_auc, roc_auc, Alternative};
use crate::model::{Activation, Model, ModelConfig, ModelParams};
use crate::tensor::layers::{embed_forward, weighted_bce, weighted_bce_grad};
use crate::tensor::{Real, Tensor};
use crate::textpipe::TokenSequence;

/// Central-difference step for the gradient check.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so gradients that are zero up to
/// rounding do not dominate.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Negate the analytic gradient of the output weights.
    FlipGradientSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst error observed (or the compared statistic).
    pub measured: f64,
    pub tolerance: f64,
    pub instances: usize,
    pub detail: String,
}

impl CheckResult {
    fn below(name: &str, measured: f64, tolerance: f64, instances: usize, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            passed: measured < tolerance,
            measured,
            tolerance,
            instances,
            detail,
        }
    }

    /// Folds another run of the same check into this one.
    fn merge(&mut self, other: CheckResult) {
        self.passed &= other.passed;
        self.measured = self.measured.max(other.measured);
        self.instances += other.instances;
        if !other.passed {
            self.detail = other.detail;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seeds: Vec<u64>,
    pub gradient_instances: usize,
    pub completeness_inputs: usize,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seeds: vec![0],
            gradient_instances: 50,
            completeness_inputs: 100,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub options: VerifyOptions,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

/// Small architecture used by the gradient check.
pub fn gradient_check_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        conv_channels: 3,
        kernel_len: 3,
        pool_len: 3,
        dense_units: 8,
        max_len: 40,
        ..ModelConfig::default()
    }
}

fn random_model<T: Real>(cfg: &ModelConfig, rows: usize, rng: &mut ChaCha8Rng) -> Model<T> {
    let mut params = ModelParams::<f64>::init(cfg, rows, rng.next_u64());
    for b in params
        .conv_bias
        .iter_mut()
        .chain(params.dense_b.iter_mut())
        .chain(params.out_b.iter_mut())
    {
        *b = rng.random_range(-0.1..0.1);
    }
    Model::new(cfg.clone(), params.cast()).expect("consistent shapes")
}

fn random_ids(len: usize, rows: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let pad = rng.random_range(0..len / 2);
    (0..len).map(|i| if i < pad { 0 } else { rng.random_range(1..rows) }).collect()
}

// Activation pattern: a finite-difference step that changes it crosses a kink.
fn pattern(model: &Model<f64>, ids: &[usize]) -> (Vec<bool>, Vec<usize>, Vec<bool>, f64) {
    let c = model.forward(ids).expect("valid ids");
    (
        c.conv_pre.data().iter().map(|&x| x > 0.0).collect(),
        c.argmax,
        c.hidden_pre.iter().map(|&x| x > 0.0).collect(),
        c.prob,
    )
}

/// Analytic gradients of the weighted loss against central differences.
pub fn gradient_check(instances: usize, seed: u64, fault: Option<Fault>) -> CheckResult {
    let cfg = gradient_check_config();
    let rows = 12;
    let mut worst = 0.0f64;
    let mut where_ = String::new();
    let (mut compared, mut skipped) = (0usize, 0usize);
    for inst in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(inst as u64));
        let mut model = random_model::<f64>(&cfg, rows, &mut rng);
        let ids = random_ids(cfg.max_len, rows, &mut rng);
        let label = rng.random_range(0..2u8);
        let w = if rng.random_bool(0.5) { 1.0 } else { 9.229 };

        let cache = model.forward(&ids).expect("valid ids");
        let mut grads = ModelParams::<f64>::zeros(&cfg, rows);
        model
            .backward(&cache, weighted_bce_grad(cache.prob, label, w), &mut grads)
            .expect("matching cache");
        if fault == Some(Fault::FlipGradientSign) {
            grads.out_w.data_mut().iter_mut().for_each(|g| *g = -*g);
        }
        let base = pattern(&model, &ids);
        let analytic: Vec<Vec<f64>> = grads.groups().iter().map(|g| g.to_vec()).collect();
        for (g, group) in analytic.iter().enumerate() {
            for (j, &a) in group.iter().enumerate() {
                let orig = model.params.groups()[g][j];
                model.params.groups_mut()[g][j] = orig + FD_STEP;
                let plus = pattern(&model, &ids);
                model.params.groups_mut()[g][j] = orig - FD_STEP;
                let minus = pattern(&model, &ids);
                model.params.groups_mut()[g][j] = orig;
                if plus.0 != base.0 || plus.1 != base.1 || plus.2 != base.2 || minus.0 != base.0 || minus.1 != base.1 || minus.2 != base.2 {
                    skipped += 1;
                    continue;
                }
                let numeric = (weighted_bce(plus.3, label, w) - weighted_bce(minus.3, label, w)) / (2.0 * FD_STEP);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
                compared += 1;
                if rel > worst {
                    worst = rel;
                    where_ = format!(
                        "instance {inst}, {}[{j}]: analytic {a:.6e}, numeric {numeric:.6e}",
                        crate::model::PARAM_GROUPS[g]
                    );
                }
            }
        }
    }
    CheckResult::below(
        "gradient",
        worst,
        1e-4,
        instances,
        format!("{compared} coordinates compared, {skipped} skipped at kinks; worst at {where_}"),
    )
}

fn completeness_at<T: Real>(inputs: usize, seed: u64, tolerance: f64, label: &str) -> CheckResult {
    let cfg = ModelConfig::default();
    let rows = 300;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ff_ee00);
    let base = random_model::<f64>(&cfg, rows, &mut rng);
    let model: Model<T> = base.cast();
    let mut worst = 0.0f64;
    for _ in 0..inputs {
        let ids = random_ids(cfg.max_len, rows, &mut rng);
        let seq = TokenSequence {
            pad_count: ids.iter().take_while(|&&i| i == 0).count(),
            ids,
            patient_id: String::new(),
        };
        let reference = reference_embedding(&model.params, [&seq], ReferenceMode::FrequencyWeightedMean)
            .expect("non-empty stream");
        let x = embed_forward(&seq.ids, &model.params.embedding).expect("valid ids");
        let target = if rng.random_bool(0.5) { Target::Probability } else { Target::Logit };
        let pa = deeplift_embedded(&model, x, &reference, target).expect("consistent shapes");
        // Measured in f64 so the check adds no rounding of its own.
        let sum: f64 = pa.values.iter().map(|v| v.as_f64()).sum();
        let gap = (sum - (pa.f_actual.as_f64() - pa.f_reference.as_f64())).abs();
        worst = worst.max(gap);
    }
    CheckResult::below(
        &format!("deeplift_completeness_{label}"),
        worst,
        tolerance,
        inputs,
        "full architecture, random inputs and corpus-mean references".into(),
    )
}

/// Summation-to-delta of DeepLIFT on the full architecture.
pub fn completeness_check(inputs: usize, seed: u64) -> Vec<CheckResult> {
    vec![
        completeness_at::<f32>(inputs, seed, 1e-6, "f32"),
        completeness_at::<f64>(inputs, seed, 1e-10, "f64"),
    ]
}

/// Direct enumeration against the permutation-average formulation, on
/// random tables and on model games, for every n ≤ 8.
pub fn shapley_equivalence_check(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ba9_1e00);
    let mut worst = 0.0f64;
    let mut count = 0;
    for n in 1..=8usize {
        for _ in 0..3 {
            let table: Vec<f64> = (0..1usize << n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = FnGame { n, f: |s: u32| table[s as usize] };
            let a = exact_shapley(&g, None).expect("n within cap");
            let b = shapley_by_permutations(&g).expect("n within cap");
            worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
            let eff = (a.iter().sum::<f64>() - (table[(1 << n) - 1] - table[0])).abs();
            worst = worst.max(eff);
            count += 1;
        }
        let cfg = ModelConfig {
            embed_dim: 3,
            conv_channels: 4,
            kernel_len: 3,
            pool_len: 2,
            dense_units: 5,
            max_len: 10,
            ..ModelConfig::default()
        };
        let model = random_model::<f64>(&cfg, 9, &mut rng);
        let x = embed_forward(&random_ids(10, 9, &mut rng), &model.params.embedding).expect("valid ids");
        let reference = ReferenceSpec {
            mode: ReferenceMode::UnweightedMean,
            vector: (0..3).map(|_| rng.random_range(-0.1..0.1)).collect(),
        };
        let mut positions: Vec<usize> = (0..10).collect();
        rand::seq::SliceRandom::shuffle(&mut positions[..], &mut rng);
        positions.truncate(n);
        let game = EmbeddingGame::new(&model, x, &reference, positions, Target::Probability).expect("valid game");
        let a = exact_shapley(&game, None).expect("n within cap");
        let b = shapley_by_permutations(&game).expect("n within cap");
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
        count += 1;
    }
    CheckResult::below(
        "shapley_enumeration_vs_permutations",
        worst,
        1e-12,
        count,
        "random characteristic functions and model games, n = 1..=8".into(),
    )
}

/// Configuration of the linear models used to compare DeepLIFT with exact
/// Shapley values.
pub fn linear_config(max_len: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 3,
        conv_channels: 4,
        kernel_len: 3,
        pool_len: 1,
        dense_units: 5,
        max_len,
        hidden_activation: Activation::Identity,
        ..ModelConfig::default()
    }
}

/// DeepLIFT against exact Shapley values on models with no hidden
/// nonlinearity, explaining the logit.
pub fn linear_deeplift_check(instances: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11ea_4000);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let len = rng.random_range(4..=10);
        let cfg = linear_config(len);
        let model = random_model::<f64>(&cfg, 15, &mut rng);
        let ids = random_ids(len, 15, &mut rng);
        let reference = reference_embedding(
            &model.params,
            [TokenSequence::from_ids(&ids, len, "")],
            ReferenceMode::FrequencyWeightedMean,
        )
        .expect("non-empty stream");
        let x = embed_forward(&ids, &model.params.embedding).expect("valid ids");
        let dl = deeplift_embedded(&model, x.clone(), &reference, Target::Logit).expect("shapes");
        let game = EmbeddingGame::all_positions(&model, x, &reference, Target::Logit).expect("valid game");
        let sh = exact_shapley(&game, None).expect("within cap");
        worst = dl.values.iter().zip(&sh).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    CheckResult::below(
        "deeplift_equals_shapley_on_linear_models",
        worst,
        1e-9,
        instances,
        "identity activations, pool 1, logit target".into(),
    )
}

/// Mean absolute error of sampled Shapley values at 10², 10³ and 10⁴
/// permutations on 8-player model games, averaged over `seeds` seeds.
pub fn sampled_convergence(seeds: usize, seed: u64) -> Result<[f64; 3], crate::Error> {
    let cfg = ModelConfig {
        embed_dim: 3,
        conv_channels: 4,
        kernel_len: 3,
        pool_len: 2,
        dense_units: 5,
        max_len: 8,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a3b_1e00);
    let model = random_model::<f64>(&cfg, 9, &mut rng);
    let x: Tensor<f64> = embed_forward(&random_ids(8, 9, &mut rng), &model.params.embedding)?;
    let reference = ReferenceSpec {
        mode: ReferenceMode::UnweightedMean,
        vector: vec![0.0; 3],
    };
    let game = EmbeddingGame::all_positions(&model, x, &reference, Target::Probability)?;
    let exact = exact_shapley(&game, None)?;
    let mut out = [0.0; 3];
    for (slot, perms) in out.iter_mut().zip([100, 1_000, 10_000]) {
        let mut total = 0.0;
        for s in 0..seeds as u64 {
            let est = sampled_shapley(&game, perms, seed.wrapping_mul(7919).wrapping_add(s))?;
            total += est.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>() / exact.len() as f64;
        }
        *slot = total / seeds as f64;
    }
    Ok(out)
}

fn sampled_check(seed: u64) -> CheckResult {
    match sampled_convergence(20, seed) {
        Ok(mae) => CheckResult {
            name: "sampled_shapley_convergence".into(),
            passed: mae[2] < mae[1] && mae[1] < mae[0],
            measured: mae[2],
            tolerance: mae[0],
            instances: 20,
            detail: format!("mean |error| at 1e2/1e3/1e4 permutations: {:.3e} / {:.3e} / {:.3e}", mae[0], mae[1], mae[2]),
        },
        Err(e) => CheckResult::below("sampled_shapley_convergence", f64::INFINITY, 0.0, 0, e.to_string()),
    }
}

/// Rank-statistic AUC against the pairwise count on tie-heavy instances.
pub fn auc_oracle_check(instances: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa0c0_0000);
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for _ in 0..instances {
        let n = rng.random_range(2..=500);
        let levels = rng.random_range(2..=50);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels)) / levels as f64).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        labels[0] = 0;
        labels[1] = 1;
        let a = roc_auc(&scores, &labels).expect("two classes");
        let b = pairwise_auc(&scores, &labels).expect("two classes");
        if a != b {
            mismatches += 1;
        }
        worst = worst.max((a - b).abs());
    }
    CheckResult {
        name: "auc_rank_vs_pairwise".into(),
        passed: mismatches == 0,
        measured: worst,
        tolerance: 0.0,
        instances,
        detail: format!("{mismatches} inexact instances"),
    }
}

/// Normal approximation against exact enumeration for groups of 3 to 8.
pub fn mann_whitney_check(instances: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3a77_0000);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (n1, n2) = (rng.random_range(3..=8), rng.random_range(3..=8));
        let mut pool: Vec<f64> = (0..n1 + n2).map(|i| i as f64).collect();
        rand::seq::SliceRandom::shuffle(&mut pool[..], &mut rng);
        let (a, b) = pool.split_at(n1);
        for alt in [Alternative::Less, Alternative::Greater, Alternative::TwoSided] {
            let r = mann_whitney_u(a, b, alt).expect("non-empty");
            let exact = (r.p_exact_one_sided.unwrap_or(f64::NAN), r.p_exact_two_sided.unwrap_or(f64::NAN));
            worst = worst
                .max((r.p_normal_one_sided - exact.0).abs())
                .max((r.p_normal_two_sided - exact.1).abs());
        }
    }
    let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0], Alternative::Less).expect("non-empty");
    let anchor = (r.p_one_sided - 1.0 / 6.0).abs();
    let mut out = CheckResult::below(
        "mann_whitney_normal_vs_exact",
        worst,
        0.05,
        instances,
        format!("tie-free groups of 3..=8; exact p for [1,2] vs [3,4] off by {anchor:.1e}"),
    );
    out.passed &= anchor < 1e-15;
    out
}

/// Impulse response and interior fixed points of the smoothing filter.
pub fn smoothing_check(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5300_0000);
    let impulse_ok = smooth(&[0.0, 0.0, 1.0, 0.0, 0.0]) == SMOOTHING_KERNEL;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c: f64 = rng.random_range(-100.0..100.0);
        let len = rng.random_range(5..60);
        let out = smooth(&vec![c; len]);
        for v in &out[2..len - 2] {
            worst = worst.max((v - c).abs() / c.abs().max(f64::MIN_POSITIVE));
        }
    }
    let mut r = CheckResult::below(
        "smoothing_filter",
        worst,
        4.0 * f64::EPSILON,
        101,
        format!("impulse response exact: {impulse_ok}; worst relative drift on constants {worst:.1e}"),
    );
    r.passed &= impulse_ok;
    r
}

/// Runs every check once per seed.
pub fn run_all(opts: &VerifyOptions) -> VerifyReport {
    let mut merged: Vec<CheckResult> = Vec::new();
    let mut add = |r: CheckResult| match merged.iter_mut().find(|m| m.name == r.name) {
        Some(m) => m.merge(r),
        None => merged.push(r),
    };
    for &seed in &opts.seeds {
        log::info!("verify: seed {seed}");
        add(gradient_check(opts.gradient_instances, seed, opts.fault));
        for r in completeness_check(opts.completeness_inputs, seed) {
            add(r);
        }
        add(shapley_equivalence_check(seed));
        add(linear_deeplift_check(20, seed));
        add(sampled_check(seed));
        add(auc_oracle_check(200, seed));
        add(mann_whitney_check(200, seed));
        add(smoothing_check(seed));
    }
    let passed = merged.iter().all(|c| c.passed);
    VerifyReport {
        options: opts.clone(),
        checks: merged,
        passed,
    }
}
