//! Built-in property checks run by `faitheval selftest`.
//!
//! Each check compares library output against an independent computation
//! (closed form, finite differences, exhaustive enumeration). A [`Fault`]
//! can be injected to confirm that the checks catch a broken gradient.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attribution::{integrated_gradients, GradientField};
use crate::error::Result;
use crate::faithfulness::{nle_comprehensiveness, nle_sufficiency, AopcConfig, RankingMode};
use crate::matrix::Matrix;
use crate::oracle::{LinearOracle, ModelInput, Oracle, Target};
use crate::toydiff::{make_toy_model, Activation, LinearFn, LinearModel, Mlp, ToyDims, PAD_ID};
use crate::types::{cosine, AttributionVector, Modality, TaskExample, Token};

/// Deliberate defects for exercising the checks themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Adds a small constant to the first gradient component.
    Gradient,
}

impl std::str::FromStr for Fault {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(Fault::Gradient),
            _ => Err(crate::Error::InvalidInput(format!("unknown fault {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

struct Faulty<F> {
    inner: F,
    fault: Option<Fault>,
}

impl<F: GradientField> GradientField for Faulty<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&mut self, x: &[f64]) -> Result<f64> {
        self.inner.value(x)
    }

    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.inner.gradient(x)?;
        if self.fault == Some(Fault::Gradient) {
            g[0] += 1e-2;
        }
        Ok(g)
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn ig_linear_exactness(fault: Option<Fault>) -> Result<(bool, String)> {
    let mut f = Faulty {
        inner: LinearFn {
            weights: vec![2.0, -1.0, 0.5],
            bias: 0.0,
        },
        fault,
    };
    let expected = [2.0, -2.0, 1.5];
    let mut worst: f64 = 0.0;
    for m in [1, 10, 100] {
        let ig = integrated_gradients(&mut f, &[1.0, 2.0, 3.0], &[0.0; 3], m)?;
        for (a, b) in ig.iter().zip(expected) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok((
        worst <= 1e-12,
        format!("max deviation {worst:.3e} (tolerance 1e-12)"),
    ))
}

/// Residuals `|sum IG - (f(x) - f(x'))| / |f(x) - f(x')|` of 100 seeded
/// tanh MLPs at each step count.
pub fn completeness_residuals(steps: &[usize], fault: Option<Fault>) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); steps.len()];
    for seed in 0..100u64 {
        let mlp = Mlp::random(&[10, 8, 3], Activation::Tanh, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + seed);
        let x = uniform(&mut rng, 10, 1.0);
        let x0 = vec![0.0; 10];
        let class = rng.gen_range(0..3);
        let mut f = Faulty {
            inner: mlp.output(class)?,
            fault,
        };
        let diff = f.value(&x)? - f.value(&x0)?;
        for (i, &m) in steps.iter().enumerate() {
            let total: f64 = integrated_gradients(&mut f, &x, &x0, m)?.iter().sum();
            out[i].push((total - diff).abs() / diff.abs());
        }
    }
    Ok(out)
}

/// Left-Riemann error is first order in `1/m`, so single instances whose
/// output difference nearly cancels can exceed a fixed relative bound. The
/// check therefore bounds the mean residual and requires it to shrink as `m`
/// grows; the worst instance is reported alongside.
fn ig_completeness(fault: Option<Fault>) -> Result<(bool, String)> {
    let steps = [10, 50, 300];
    let residuals = completeness_residuals(&steps, fault)?;
    let means: Vec<f64> = residuals
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();
    let worst = residuals[2].iter().copied().fold(0.0, f64::max);
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    Ok((
        means[2] <= 1e-3 && monotone,
        format!(
            "mean relative residual {:.3e}, {:.3e}, {:.3e} at m = 10, 50, 300 (m=300 tolerance 1e-3); worst at m=300 {worst:.3e}",
            means[0], means[1], means[2]
        ),
    ))
}

fn fd_close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= (1e-4 * analytic.abs().max(numeric.abs())).max(1e-6)
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_differences<F: GradientField + ?Sized>(f: &mut F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut p = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let up = f.value(&p)?;
        p[i] = x[i] - h;
        let down = f.value(&p)?;
        p[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

struct ToyTarget<'a> {
    model: &'a crate::toydiff::ToyVLModel,
    template: ModelInput,
    target: Target,
}

impl GradientField for ToyTarget<'_> {
    fn dim(&self) -> usize {
        self.template.len()
    }

    fn value(&mut self, x: &[f64]) -> Result<f64> {
        self.model
            .target_value(&self.template.with_values(x)?, &self.target)
    }

    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self
            .model
            .gradient(&self.template.with_values(x)?, &self.target)?;
        let mut flat = g.text.into_vec();
        flat.extend(g.visual.into_vec());
        Ok(flat)
    }
}

fn gradient_vs_finite_differences(fault: Option<Fault>) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut failures = 0usize;
    let mut checked = 0usize;
    // 700 points on random MLPs, 300 on toy model heads.
    for point in 0..700u64 {
        let mlp = Mlp::random(&[6, 5, 4, 2], Activation::Tanh, point % 50);
        let x = uniform(&mut rng, 6, 1.5);
        let mut f = Faulty {
            inner: mlp.output((point % 2) as usize)?,
            fault,
        };
        let g = f.gradient(&x)?;
        let fd = central_differences(&mut f, &x, 1e-5)?;
        failures += g.iter().zip(&fd).filter(|(a, b)| !fd_close(**a, **b)).count();
        checked += g.len();
    }
    let dims = ToyDims::default();
    for point in 0..300u64 {
        let model = make_toy_model(point % 10, dims)?;
        let n_tokens = rng.gen_range(1..5);
        let regions = rng.gen_range(0..3);
        let template = ModelInput {
            text: Matrix::from_vec(
                n_tokens,
                dims.embed_dim,
                uniform(&mut rng, n_tokens * dims.embed_dim, 0.5),
            )?,
            visual: Matrix::from_vec(
                regions,
                dims.vis_dim,
                uniform(&mut rng, regions * dims.vis_dim, 1.0),
            )?,
        };
        let target = if point % 2 == 0 {
            Target::Answer {
                class: rng.gen_range(0..dims.classes),
            }
        } else {
            let len = rng.gen_range(0..dims.max_len);
            Target::Explanation {
                answer: rng.gen_range(0..dims.classes),
                prefix: (0..len).map(|_| rng.gen_range(2..dims.vocab)).collect(),
                token: rng.gen_range(0..dims.vocab),
            }
        };
        let x = template.flatten();
        let mut f = Faulty {
            inner: ToyTarget {
                model: &model,
                template,
                target,
            },
            fault,
        };
        let g = f.gradient(&x)?;
        let fd = central_differences(&mut f, &x, 1e-5)?;
        failures += g.iter().zip(&fd).filter(|(a, b)| !fd_close(**a, **b)).count();
        checked += g.len();
    }
    Ok((
        failures == 0,
        format!("{failures} of {checked} partial derivatives outside 1e-4 relative / 1e-6 absolute"),
    ))
}

fn cosine_scale_invariance() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..40);
        let a = uniform(&mut rng, n, 3.0);
        let b = uniform(&mut rng, n, 3.0);
        // (0, 10]: 10 minus a sample from [0, 10).
        let c = 10.0 - rng.gen_range(0.0..10.0);
        let cb: Vec<f64> = b.iter().map(|v| v * c).collect();
        worst = worst.max((cosine(&a, &cb)? - cosine(&a, &b)?).abs());
    }
    Ok((
        worst <= 1e-9,
        format!("max deviation {worst:.3e} (tolerance 1e-9)"),
    ))
}

/// Single-token-per-word example for enumeration checks.
pub fn enumeration_example(
    words: usize,
    regions: usize,
    vis_dim: usize,
    vocab: usize,
    rng: &mut impl Rng,
) -> TaskExample {
    TaskExample {
        id: "enum".into(),
        words: (0..words).map(|w| format!("w{w}")).collect(),
        tokens: (0..words)
            .map(|w| Token {
                id: rng.gen_range(1..vocab),
                text: format!("w{w}"),
                word_index: w,
            })
            .collect(),
        visual_features: Matrix::from_vec(
            regions,
            vis_dim,
            (0..regions * vis_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .expect("consistent shape"),
        answer_class: 0,
        explanation_tokens: Vec::new(),
    }
}

/// Class probabilities of a linear model for the example with the features
/// of `modality` outside `kept` masked, computed without the library's
/// perturbation and embedding code.
pub fn masked_probs(model: &LinearModel, example: &TaskExample, modality: Modality, kept: u32) -> Vec<f64> {
    let c = model.classes;
    let mut logits = model.bias.clone();
    for (t, token) in example.tokens.iter().enumerate() {
        let keep = modality != Modality::Language || kept & (1 << t) != 0;
        let id = if keep { token.id } else { PAD_ID };
        for (j, logit) in logits.iter_mut().enumerate() {
            for k in 0..model.embed_dim() {
                *logit += model.embedding.get(id, k) * model.text_weights.get(k, j);
            }
        }
    }
    for r in 0..example.n_regions() {
        let keep = modality != Modality::Vision || kept & (1 << r) != 0;
        if !keep {
            continue;
        }
        for (j, logit) in logits.iter_mut().enumerate() {
            for k in 0..model.vis_dim() {
                *logit += example.visual_features.get(r, k) * model.visual_weights.get(k, j);
            }
        }
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    (0..c).map(|j| e[j] / s).collect()
}

/// AOPC by enumeration: the probability of every keep-mask is tabulated,
/// and each bin looks its mask up.
pub fn enumerated_aopc(
    table: &HashMap<u32, f64>,
    n: usize,
    attrib: &[f64],
    bins: &[f64],
    ranking: RankingMode,
) -> (f64, f64) {
    let full = (1u32 << n) - 1;
    let original = table[&full];
    let mut order: Vec<usize> = (0..n).collect();
    let key = |v: f64| if ranking == RankingMode::Abs { v.abs() } else { v };
    order.sort_by(|&a, &b| key(attrib[b]).total_cmp(&key(attrib[a])).then(a.cmp(&b)));
    let (mut suff, mut comp) = (0.0, 0.0);
    for &k in bins {
        // Smallest size s with s / n >= k.
        let size = (1..=n).find(|&s| s as f64 >= k * n as f64 - 1e-9).unwrap_or(n);
        let mask: u32 = order[..size].iter().map(|&i| 1u32 << i).sum();
        suff += original - table[&mask];
        comp += original - table[&(full & !mask)];
    }
    (suff / bins.len() as f64, comp / bins.len() as f64)
}

fn aopc_brute_force(_: Option<Fault>) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let bins = vec![0.25, 0.5, 1.0];
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for seed in 0..40u64 {
        let model = LinearModel::random(seed, 12, 3, 2, 3)?;
        let n_words = rng.gen_range(1..=5);
        let n_regions = rng.gen_range(1..=(8 - n_words).min(3));
        let example = enumeration_example(n_words, n_regions, 2, 12, &mut rng);
        let mut oracle = LinearOracle::new(model.clone());
        let info = oracle.info()?;
        let class = model.predict(&info.embed(&example)?)?.argmax();
        for (modality, n) in [(Modality::Language, n_words), (Modality::Vision, n_regions)] {
            let table: HashMap<u32, f64> = (0..1u32 << n)
                .map(|mask| (mask, masked_probs(&model, &example, modality, mask)[class]))
                .collect();
            for ranking in [RankingMode::Signed, RankingMode::Abs] {
                let values = uniform(&mut rng, n, 1.0);
                let attrib = AttributionVector::dense(modality, values.clone());
                let config = AopcConfig {
                    bins: bins.clone(),
                    ranking,
                    ..AopcConfig::default()
                };
                let suff = nle_sufficiency(&mut oracle, &info, &example, &attrib, &config, class)?;
                let comp = nle_comprehensiveness(&mut oracle, &info, &example, &attrib, &config, class)?;
                let (es, ec) = enumerated_aopc(&table, n, &values, &bins, ranking);
                worst = worst.max((suff - es).abs()).max((comp - ec).abs());
                cases += 1;
            }
        }
    }
    Ok((
        worst <= 1e-9,
        format!("max deviation {worst:.3e} over {cases} cases (tolerance 1e-9)"),
    ))
}

/// Runs every check.
pub fn run(fault: Option<Fault>) -> Vec<PropertyResult> {
    type Check = fn(Option<Fault>) -> Result<(bool, String)>;
    let checks: [(&'static str, Check); 5] = [
        ("ig_linear_exactness", ig_linear_exactness),
        ("ig_completeness", ig_completeness),
        ("gradient_finite_differences", gradient_vs_finite_differences),
        ("cosine_scale_invariance", |_| cosine_scale_invariance()),
        ("aopc_brute_force", aopc_brute_force),
    ];
    checks
        .into_iter()
        .map(|(name, check)| {
            let start = Instant::now();
            let (passed, detail) = match check(fault) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            PropertyResult {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}
