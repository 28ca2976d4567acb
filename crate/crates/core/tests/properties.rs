//! Randomized invariants across the attribution, metric and analysis modules.

use proptest::collection::vec;
use proptest::prelude::*;

use faitheval::alignment::{aggregate_to_words, map_tokens_to_words, segment_words, TokenScheme, WordMap};
use faitheval::analysis::{histogram, input_group_influence, pearson, Correlation};
use faitheval::attribution::{integrated_gradients, GradientField, VisionGranularity};
use faitheval::faithfulness::{
    aopc_terms, bin_size, complement, perturb_keep_only, perturb_remove, select_top_k, AopcConfig,
    FeatureBin, Perturbation, RankingMode,
};
use faitheval::matrix::Matrix;
use faitheval::oracle::{LinearOracle, Oracle};
use faitheval::toydiff::{Activation, LinearFn, LinearModel, Mlp, PAD_ID};
use faitheval::types::{cosine, softmax_normalize};
use faitheval::{AttributionVector, MetricRow, Modality, TaskExample, Token};

fn finite(range: f64) -> impl Strategy<Value = f64> {
    -range..range
}

/// Multiples of 2^-10 in [-8, 8]: every partial sum is exact in f64.
fn dyadic() -> impl Strategy<Value = f64> {
    (-8192i32..=8192).prop_map(|k| k as f64 / 1024.0)
}

/// Word sizes in tokens.
fn word_sizes() -> impl Strategy<Value = Vec<usize>> {
    vec(1usize..4, 1..7)
}

fn map_of(sizes: &[usize]) -> WordMap {
    let idx: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(w, &n)| std::iter::repeat_n(w, n))
        .collect();
    WordMap::from_word_indices(&idx, sizes.len()).unwrap()
}

struct Negated<F>(F);

impl<F: GradientField> GradientField for Negated<F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&mut self, x: &[f64]) -> faitheval::Result<f64> {
        Ok(-self.0.value(x)?)
    }
    fn gradient(&mut self, x: &[f64]) -> faitheval::Result<Vec<f64>> {
        Ok(self.0.gradient(x)?.into_iter().map(|g| -g).collect())
    }
}

struct Sum<F, G>(F, G);

impl<F: GradientField, G: GradientField> GradientField for Sum<F, G> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&mut self, x: &[f64]) -> faitheval::Result<f64> {
        Ok(self.0.value(x)? + self.1.value(x)?)
    }
    fn gradient(&mut self, x: &[f64]) -> faitheval::Result<Vec<f64>> {
        let (a, b) = (self.0.gradient(x)?, self.1.gradient(x)?);
        Ok(a.iter().zip(b).map(|(p, q)| p + q).collect())
    }
}

/// Example with words of the given sizes, token ids in 2..8 and
/// `regions` rows of width 3.
fn example_strategy() -> impl Strategy<Value = TaskExample> {
    (word_sizes(), 0usize..4)
        .prop_flat_map(|(sizes, regions)| {
            let n_tokens: usize = sizes.iter().sum();
            (
                Just(sizes),
                vec(2usize..8, n_tokens),
                vec(finite(1.0), regions * 3),
                Just(regions),
            )
        })
        .prop_map(|(sizes, ids, visual, regions)| {
            let map = map_of(&sizes);
            let tokens = ids
                .iter()
                .zip(map.word_indices())
                .map(|(&id, w)| Token {
                    id,
                    text: format!("t{id}"),
                    word_index: w,
                })
                .collect();
            TaskExample {
                id: "p".into(),
                words: (0..sizes.len()).map(|w| format!("w{w}")).collect(),
                tokens,
                visual_features: if regions == 0 {
                    Matrix::zeros(0, 0)
                } else {
                    Matrix::from_vec(regions, 3, visual).unwrap()
                },
                answer_class: 0,
                explanation_tokens: Vec::new(),
            }
        })
}

fn aopc_oracle(seed: u64) -> LinearOracle {
    LinearOracle::new(LinearModel::random(seed, 8, 3, 3, 3).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ig_is_exact_for_linear_functions(
        wx in vec((finite(3.0), finite(3.0), finite(3.0)), 1..12),
        steps in 1usize..60,
    ) {
        let mut f = LinearFn { weights: wx.iter().map(|t| t.0).collect(), bias: 0.5 };
        let x: Vec<f64> = wx.iter().map(|t| t.1).collect();
        let x0: Vec<f64> = wx.iter().map(|t| t.2).collect();
        let ig = integrated_gradients(&mut f, &x, &x0, steps).unwrap();
        for (i, v) in ig.iter().enumerate() {
            prop_assert!((v - (x[i] - x0[i]) * f.weights[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn ig_sign_flips_with_the_target(seed in 0u64..500, x in vec(finite(1.0), 4), steps in 1usize..20) {
        let mlp = Mlp::random(&[4, 5, 2], Activation::Tanh, seed);
        let x0 = vec![0.0; 4];
        let a = integrated_gradients(&mut mlp.output(1).unwrap(), &x, &x0, steps).unwrap();
        let b = integrated_gradients(&mut Negated(mlp.output(1).unwrap()), &x, &x0, steps).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert_eq!(*p, -*q);
        }
    }

    #[test]
    fn ig_is_additive_over_targets(seed in 0u64..500, x in vec(finite(1.0), 4), steps in 1usize..20) {
        let mlp = Mlp::random(&[4, 5, 2], Activation::Tanh, seed);
        let x0 = vec![0.1; 4];
        let a = integrated_gradients(&mut mlp.output(0).unwrap(), &x, &x0, steps).unwrap();
        let b = integrated_gradients(&mut mlp.output(1).unwrap(), &x, &x0, steps).unwrap();
        let mut sum = Sum(mlp.output(0).unwrap(), mlp.output(1).unwrap());
        let c = integrated_gradients(&mut sum, &x, &x0, steps).unwrap();
        for i in 0..4 {
            prop_assert!((a[i] + b[i] - c[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn cosine_ignores_positive_scale(ab in vec((finite(5.0), finite(5.0)), 1..20), c in 1e-3f64..=10.0) {
        let a: Vec<f64> = ab.iter().map(|t| t.0).collect();
        let b: Vec<f64> = ab.iter().map(|t| t.1).collect();
        let cb: Vec<f64> = b.iter().map(|v| c * v).collect();
        prop_assert!((cosine(&a, &b).unwrap() - cosine(&a, &cb).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn softmax_is_shift_invariant(logits in vec(finite(20.0), 1..10), c in finite(50.0)) {
        let p = softmax_normalize(&logits).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        let q = softmax_normalize(&shifted).unwrap();
        prop_assert_eq!(p.argmax(), q.argmax());
        for (a, b) in p.probs().iter().zip(q.probs()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn sf_overall_is_the_mean_of_present_scores(nlp in 0.0f64..=1.0, img in proptest::option::of(0.0f64..=1.0)) {
        let overall = MetricRow::overall_from(nlp, img);
        match img {
            Some(i) => prop_assert_eq!(overall, (nlp + i) / 2.0),
            None => prop_assert_eq!(overall, nlp),
        }
    }

    #[test]
    fn top_k_size_and_order(values in vec(-3i32..3, 1..30), k in 0.001f64..=1.0, abs in any::<bool>()) {
        let mode = if abs { RankingMode::Abs } else { RankingMode::Signed };
        let v = AttributionVector::dense(Modality::Language, values.iter().map(|&x| x as f64).collect());
        let bin = select_top_k(&v, k, mode).unwrap();
        let n = values.len();
        prop_assert_eq!(bin.ids.len(), bin_size(k, n));
        prop_assert_eq!(bin_size(k, n), ((k * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize);
        let key = |id: usize| if abs { values[id].abs() } else { values[id] };
        // Every unselected feature ranks strictly after the last selected one.
        let last = *bin.ids.last().unwrap();
        for id in (0..n).filter(|id| !bin.ids.contains(id)) {
            prop_assert!(key(id) < key(last) || (key(id) == key(last) && id > last));
        }
    }

    #[test]
    fn word_sums_conserve_the_total(sizes in word_sizes(), seed in any::<u64>()) {
        let map = map_of(&sizes);
        let values: Vec<f64> = (0..map.n_tokens()).map(|i| ((seed >> (i % 60)) % 4096) as f64 / 1024.0 - 2.0).collect();
        let tokens = AttributionVector::dense(Modality::Language, values.clone());
        let words = aggregate_to_words(&tokens, &map).unwrap();
        prop_assert_eq!(words.len(), sizes.len());
        prop_assert_eq!(words.total(), tokens.total());
        for (w, members) in map.groups().iter().enumerate() {
            prop_assert_eq!(words.values[w], members.iter().map(|&t| values[t]).sum::<f64>());
        }
    }

    #[test]
    fn dyadic_word_sums_are_exact(values in vec(dyadic(), 15)) {
        // WordPiece splits "splendour" into four pieces, byte-pair into two.
        let words = segment_words("I sink under the weight of the splendour of these visions!");
        let wordpiece = ["i", "sink", "under", "the", "weight", "of", "the", "s", "##ple", "##ndo", "##ur", "of", "these", "visions", "!"];
        let map = map_tokens_to_words(&wordpiece, &TokenScheme::WordPieceLike, &words).unwrap();
        let tokens = AttributionVector::dense(Modality::Language, values.clone());
        let w = aggregate_to_words(&tokens, &map).unwrap();
        prop_assert_eq!(w.values.iter().sum::<f64>(), values.iter().sum::<f64>());
    }

    #[test]
    fn histogram_counts_every_value(values in vec(finite(3.0), 0..100), buckets in 1usize..40) {
        let h = histogram(&values, buckets, -1.0, 1.0).unwrap();
        prop_assert_eq!(h.counts.len(), buckets);
        prop_assert_eq!(h.total(), values.len());
    }

    #[test]
    fn pearson_is_symmetric_and_affine_invariant(
        xy in vec((finite(10.0), finite(10.0)), 3..30),
        a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        b in finite(100.0),
    ) {
        let x: Vec<f64> = xy.iter().map(|t| t.0).collect();
        let y: Vec<f64> = xy.iter().map(|t| t.1).collect();
        let (Correlation::Value(r), Correlation::Value(s)) = (pearson(&x, &y), pearson(&y, &x)) else {
            return Ok(());
        };
        prop_assert_eq!(r, s);
        prop_assert!((-1.0..=1.0).contains(&r));
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let t = pearson(&ax, &y).value().unwrap();
        prop_assert!((t - a.signum() * r).abs() <= 1e-9, "{} vs {}", t, r);
    }

    #[test]
    fn group_sums_partition_the_total(values in vec(dyadic(), 1..20), cut in 0usize..20) {
        let v = AttributionVector::dense(Modality::Language, values.clone());
        let cut = cut.min(values.len());
        let groups = vec![
            ("head".to_string(), (0..cut).collect::<Vec<_>>()),
            ("tail".to_string(), (cut..values.len()).collect()),
        ];
        let g = input_group_influence(&v, &groups).unwrap();
        prop_assert_eq!(g["head"] + g["tail"], v.total());
        prop_assert_eq!(g.get("other").copied().unwrap_or(0.0), 0.0);
        let all = vec![("all".to_string(), (0..values.len()).collect())];
        prop_assert_eq!(input_group_influence(&v, &all).unwrap()["all"], v.total());
    }

    #[test]
    fn aopc_terms_are_probability_differences(
        example in example_strategy(),
        relevance in vec(finite(1.0), 6),
        seed in 0u64..50,
        bins in vec(0.05f64..=1.0, 1..4),
    ) {
        let mut oracle = aopc_oracle(seed);
        let info = oracle.info().unwrap();
        let n = example.words.len();
        let attrib = AttributionVector::dense(Modality::Language, relevance[..n.min(6)].iter().copied().chain(std::iter::repeat(0.0)).take(n).collect());
        let config = AopcConfig { bins, ..AopcConfig::default() };
        let class = oracle.predict(&info.embed(&example).unwrap()).unwrap().argmax();
        for p in [Perturbation::Remove, Perturbation::KeepOnly] {
            for t in aopc_terms(&mut oracle, &info, &example, &attrib, &config, class, p).unwrap() {
                prop_assert!((-1.0..=1.0).contains(&t));
            }
        }
        // Keeping everything changes nothing.
        let full = AopcConfig { bins: vec![1.0], ..config };
        let suff = aopc_terms(&mut oracle, &info, &example, &attrib, &full, class, Perturbation::KeepOnly).unwrap();
        prop_assert_eq!(suff, vec![0.0]);
    }

    #[test]
    fn removal_and_keep_only_are_complementary(
        example in example_strategy(),
        pick in vec(any::<bool>(), 6),
        seed in 0u64..50,
        vision in any::<bool>(),
    ) {
        let mut oracle = aopc_oracle(seed);
        let info = oracle.info().unwrap();
        let g = VisionGranularity::Region;
        let (modality, n) = if vision && example.has_vision() {
            (Modality::Vision, example.n_regions())
        } else {
            (Modality::Language, example.words.len())
        };
        let bin = FeatureBin::of(modality, (0..n).filter(|&i| pick[i % 6]).collect());
        let comp = complement(&example, &bin, g);
        let removed = perturb_remove(&example, &bin, PAD_ID, g).unwrap();
        let kept = perturb_keep_only(&example, &comp, PAD_ID, g).unwrap();
        prop_assert_eq!(&removed, &kept);
        let p = |e: &TaskExample, o: &mut LinearOracle| o.predict(&info.embed(e).unwrap()).unwrap().prob(0);
        let base = p(&example, &mut oracle);
        prop_assert_eq!(base - p(&removed, &mut oracle), base - p(&kept, &mut oracle));
        // Removing nothing is the identity.
        let none = perturb_remove(&example, &FeatureBin::empty(modality), PAD_ID, g).unwrap();
        prop_assert_eq!(&none, &example);
    }

    #[test]
    fn removal_touches_only_selected_features(example in example_strategy(), pick in vec(any::<bool>(), 6)) {
        let original = example.clone();
        let words: Vec<usize> = (0..example.words.len()).filter(|&i| pick[i % 6]).collect();
        let out = perturb_remove(&example, &FeatureBin::of(Modality::Language, words.clone()), PAD_ID, VisionGranularity::Region).unwrap();
        prop_assert_eq!(&example, &original);
        prop_assert_eq!(&out.visual_features, &example.visual_features);
        prop_assert_eq!(&out.words, &example.words);
        for (a, b) in example.tokens.iter().zip(&out.tokens) {
            prop_assert_eq!(a.word_index, b.word_index);
            if words.contains(&a.word_index) {
                prop_assert_eq!(b.id, PAD_ID);
                prop_assert_eq!(b.text.as_str(), "[PAD]");
            } else {
                prop_assert_eq!(a, b);
            }
        }
        if example.has_vision() {
            let regions: Vec<usize> = (0..example.n_regions()).filter(|&i| pick[i % 6]).collect();
            let out = perturb_remove(&example, &FeatureBin::of(Modality::Vision, regions.clone()), PAD_ID, VisionGranularity::Region).unwrap();
            prop_assert_eq!(&out.tokens, &example.tokens);
            for r in 0..example.n_regions() {
                if regions.contains(&r) {
                    prop_assert!(out.visual_features.row(r).iter().all(|&v| v == 0.0));
                } else {
                    prop_assert_eq!(out.visual_features.row(r), example.visual_features.row(r));
                }
            }
        }
    }
}

#[test]
fn wordpiece_and_byte_pair_tokenizations_give_the_same_words() {
    let words = segment_words("I sink under the weight of the splendour of these visions!");
    let wordpiece = [
        "i", "sink", "under", "the", "weight", "of", "the", "s", "##ple", "##ndo", "##ur", "of", "these",
        "visions", "!",
    ];
    let bpe = [
        "I", "sink", "under", "the", "weight", "of", "the", "splend", "##our", "of", "these", "visions", "!",
    ];
    let a = map_tokens_to_words(&wordpiece, &TokenScheme::WordPieceLike, &words).unwrap();
    let b = map_tokens_to_words(&bpe, &TokenScheme::BpeLike, &words).unwrap();
    assert_eq!(a.n_words(), 12);
    assert_eq!(b.n_words(), 12);
    assert_eq!(a.tokens_of(7), &[7, 8, 9, 10]);
    assert_eq!(b.tokens_of(7), &[7, 8]);
}
