use proptest::prelude::*;

use super::*;
use crate::features::{FeatureKind, FeatureMatrix};
use crate::gmm::{Gmm, GmmStats, MapConfig};
use crate::math::log_sum_exp;

fn scalar_gmm(means: &[f64]) -> Gmm {
    let c = means.len();
    Gmm::new(vec![1.0 / c as f64; c], means.to_vec(), vec![1.0; c], 1).unwrap()
}

/// 1-D phone set with one Gaussian per state at the given means.
fn toy_set(phones: &[(&str, [f64; 3])]) -> PhoneHmmSet {
    let mut models: Vec<PhoneHmm> = phones
        .iter()
        .map(|(l, m)| PhoneHmm::new(*l, m.iter().map(|&x| scalar_gmm(&[x])).collect(), vec![0.6; 3]).unwrap())
        .collect();
    models.push(PhoneHmm::new(SILENCE_LABEL, vec![scalar_gmm(&[0.0]); 3], vec![0.5; 3]).unwrap());
    PhoneHmmSet::new(models).unwrap()
}

fn col(values: &[f64]) -> FeatureMatrix {
    let rows: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
    FeatureMatrix::from_rows(&rows, FeatureKind::External).unwrap()
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn plain(n: usize) -> Vec<GraphState> {
    (0..n)
        .map(|j| GraphState {
            state_id: j,
            silence: false,
            optional: false,
        })
        .collect()
}

/// Every complete path with its score, summed in the same order as the
/// dynamic programme.
fn enumerate_paths(graph: &CompositeHmm, emis: &Emissions) -> Vec<(Vec<usize>, f64)> {
    let n = graph.num_states();
    let t_count = emis.num_frames();
    let arc = |i: usize, j: usize| graph.incoming[j].iter().find(|&&(src, _)| src == i).map(|&(_, lp)| lp);
    let mut out = Vec::new();
    let total = n.pow(t_count as u32);
    'paths: for code in 0..total {
        let mut path = vec![0; t_count];
        let mut c = code;
        for t in 0..t_count {
            path[t] = c % n;
            c /= n;
        }
        let Some(&(_, entry)) = graph.entry.iter().find(|&&(s, _)| s == path[0]) else {
            continue;
        };
        if !graph.finals.contains(&path[t_count - 1]) {
            continue;
        }
        let mut score = entry + emis.log_b(0, path[0]);
        for t in 1..t_count {
            let Some(lp) = arc(path[t - 1], path[t]) else {
                continue 'paths;
            };
            score = score + lp;
            score = score + emis.log_b(t, path[t]);
        }
        if score > f64::NEG_INFINITY {
            out.push((path, score));
        }
    }
    out
}

fn two_state_graph() -> CompositeHmm {
    CompositeHmm::from_parts(
        plain(2),
        vec![(0, 0.0)],
        vec![vec![(0, 0.7f64.ln())], vec![(0, 0.3f64.ln()), (1, 0.8f64.ln())]],
        vec![1],
    )
    .unwrap()
}

#[test]
fn single_phone_graph_without_silence() {
    let set = toy_set(&[("a", [0.0, 1.0, 2.0])]);
    let g = build_composite_graph(&set, &words("a"), &SilencePolicy::none()).unwrap();
    assert_eq!(g.num_states(), 3);
    assert_eq!(g.min_frames(), 3);
}

#[test]
fn two_phone_graph_with_silence() {
    let set = toy_set(&[("a", [0.0; 3]), ("b", [1.0; 3])]);
    let g = build_composite_graph(&set, &words("a b"), &SilencePolicy::default()).unwrap();
    assert_eq!(g.num_states(), 3 * 2 + 3 * 2 + 3);
    assert_eq!(g.mandatory_states().len(), 12);
    assert_eq!(g.states.iter().filter(|s| s.optional).count(), 3);
    assert_eq!(g.min_frames(), 12);
    // Leaving `a` splits between the optional silence and `b`.
    let exit_a = 0.4f64;
    let into_b: Vec<_> = g.incoming[9].iter().filter(|(i, _)| *i != 9).collect();
    let from_a = into_b.iter().find(|(i, _)| *i == 5).unwrap().1;
    assert!((from_a - (exit_a * 0.5).ln()).abs() < 1e-12);
}

#[test]
fn graph_errors() {
    let set = toy_set(&[("a", [0.0; 3])]);
    assert_eq!(
        build_composite_graph(&set, &[], &SilencePolicy::default()),
        Err(HmmError::EmptyTranscript)
    );
    assert_eq!(
        build_composite_graph(&set, &words("a q"), &SilencePolicy::default()),
        Err(HmmError::UnknownPhone("q".into()))
    );
}

#[test]
fn reference_mixture_budget() {
    let speech = |l: String| PhoneHmm::new(l, vec![scalar_gmm(&[0.0; 8]); 3], vec![0.5; 3]).unwrap();
    let mut phones: Vec<PhoneHmm> = (0..39).map(|i| speech(format!("p{i}"))).collect();
    phones.push(PhoneHmm::new(SILENCE_LABEL, vec![scalar_gmm(&[0.0; 16]); 3], vec![0.5; 3]).unwrap());
    let set = PhoneHmmSet::new(phones).unwrap();
    assert_eq!(set.total_mixtures(), 3 * 39 * 8 + 3 * 16);
    assert_eq!(set.total_mixtures(), 984);
}

#[test]
fn single_state_alignment() {
    let graph = CompositeHmm::from_parts(plain(1), vec![(0, 0.0)], vec![vec![(0, 0.9f64.ln())]], vec![0]).unwrap();
    let models = StateModels::new(vec![scalar_gmm(&[-1.0, 1.0])], vec![false]).unwrap();
    let x = col(&[0.3, -2.0, 4.0, 0.0]);
    for algo in [AlignAlgo::Viterbi, AlignAlgo::ForwardBackward] {
        let a = align(&graph, &models, &x, algo, &AlignOptions::default()).unwrap();
        for t in 0..4 {
            let s = a.state_posteriors(t);
            assert_eq!(s.len(), 1);
            assert_eq!(s[0].0, 0);
            assert!((s[0].1 - 1.0).abs() < 1e-12);
        }
    }
    let one = StateModels::new(vec![scalar_gmm(&[0.0])], vec![false]).unwrap();
    let a = fb_align(&graph, &one, &x).unwrap();
    for t in 0..4 {
        assert_eq!(a.frame(t).len(), 1);
        assert!((a.frame(t)[0].posterior - 1.0).abs() < 1e-15);
    }
}

#[test]
fn two_state_hand_instance() {
    let graph = two_state_graph();
    // ln b_t(j), rows are frames.
    let values = vec![-1.0, -3.0, -2.0, -1.5, -4.0, -0.5];
    let emis = Emissions::from_log_likelihoods(3, 2, values).unwrap();
    // Paths [0,0,1] and [0,1,1].
    let p001 = -1.0 + 0.7f64.ln() - 2.0 + 0.3f64.ln() - 0.5;
    let p011 = -1.0 + 0.3f64.ln() - 1.5 + 0.8f64.ln() - 0.5;
    let (path, score) = viterbi_decode(&graph, &emis).unwrap();
    let expected = if p001 > p011 { vec![0, 0, 1] } else { vec![0, 1, 1] };
    assert_eq!(path, expected);
    assert!((score - p001.max(p011)).abs() < 1e-12);

    let (gamma, total) = forward_backward(&graph, &emis).unwrap();
    let z = log_sum_exp(&[p001, p011]);
    assert!((total - z).abs() < 1e-12);
    let w001 = (p001 - z).exp();
    let w011 = (p011 - z).exp();
    let oracle = [[1.0, 0.0], [w001, w011], [0.0, 1.0]];
    for t in 0..3 {
        for j in 0..2 {
            assert!((gamma[t * 2 + j] - oracle[t][j]).abs() < 1e-10);
        }
    }
}

#[test]
fn too_few_frames_for_mandatory_states() {
    let set = toy_set(&[("a", [0.0; 3])]);
    let g = build_composite_graph(
        &set,
        &words("a"),
        &SilencePolicy {
            boundary: SilenceSlot::Absent,
            between: SilenceSlot::Absent,
            optional_prob: 0.5,
        },
    )
    .unwrap();
    let four = CompositeHmm::from_parts(
        plain(4),
        vec![(0, 0.0)],
        vec![
            vec![(0, -0.5)],
            vec![(0, -1.0), (1, -0.5)],
            vec![(1, -1.0), (2, -0.5)],
            vec![(2, -1.0), (3, -0.5)],
        ],
        vec![3],
    )
    .unwrap();
    let emis = Emissions::from_log_likelihoods(3, 4, vec![0.0; 12]).unwrap();
    assert_eq!(
        viterbi_decode(&four, &emis),
        Err(HmmError::NoValidPath {
            frames: 3,
            min_frames: 4
        })
    );
    assert!(forward_backward(&four, &emis).is_err());
    assert!(viterbi_align(&g, &set, &col(&[0.0, 1.0])).is_err());
}

#[test]
fn viterbi_matches_enumeration_with_ties() {
    // Quantized emissions make exact ties common.
    let graph = CompositeHmm::from_parts(
        plain(3),
        vec![(0, 0.5f64.ln()), (1, 0.5f64.ln())],
        vec![
            vec![(0, 0.5f64.ln())],
            vec![(0, 0.5f64.ln()), (1, 0.5f64.ln())],
            vec![(1, 0.5f64.ln()), (2, 0.5f64.ln())],
        ],
        vec![1, 2],
    )
    .unwrap();
    for seed in 0..50u64 {
        let values: Vec<f64> = (0..15).map(|k| -(((seed * 31 + k * 7) % 3) as f64)).collect();
        let emis = Emissions::from_log_likelihoods(5, 3, values).unwrap();
        let (path, score) = viterbi_decode(&graph, &emis).unwrap();
        let paths = enumerate_paths(&graph, &emis);
        let best = paths.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(score, best);
        // Lowest final state, then lowest predecessors walking backwards.
        let mut optimal: Vec<Vec<usize>> = paths.into_iter().filter(|p| p.1 == best).map(|p| p.0).collect();
        optimal.sort_by(|a, b| a.iter().rev().cmp(b.iter().rev()));
        assert_eq!(path, optimal[0]);
    }
}

#[test]
fn fb_score_matches_enumeration_oracle() {
    let set = toy_set(&[("a", [-1.0, 0.5, 2.0])]);
    let mut models = set.state_models();
    models.gmms[0] = scalar_gmm(&[-1.5, -0.5]);
    let graph = CompositeHmm::from_parts(
        (0..3)
            .map(|j| GraphState {
                state_id: j,
                silence: false,
                optional: false,
            })
            .collect(),
        vec![(0, 0.0)],
        vec![
            vec![(0, 0.6f64.ln())],
            vec![(0, 0.4f64.ln()), (1, 0.6f64.ln())],
            vec![(1, 0.4f64.ln()), (2, 0.6f64.ln())],
        ],
        vec![2],
    )
    .unwrap();
    let x = col(&[-1.2, -0.4, 0.7, 0.2, 2.3]);
    let a = align(&graph, &models, &x, AlignAlgo::ForwardBackward, &AlignOptions::exact()).unwrap();
    let emis = Emissions::compute(&graph, &models, &x).unwrap();
    let paths = enumerate_paths(&graph, &emis);
    let z = log_sum_exp(&paths.iter().map(|p| p.1).collect::<Vec<_>>());
    let adapted = models.with_slot_means(&[-1.0, 0.1, 0.9, 2.2, 0.0, 0.0, 0.0]).unwrap();

    let mut oracle = 0.0;
    for t in 0..5 {
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..3 {
            let gamma: f64 = paths.iter().filter(|p| p.0[t] == j).map(|p| (p.1 - z).exp()).sum();
            let mix = emis.mixture_log_densities(t, j);
            let lb = log_sum_exp(mix);
            for (g, lm) in mix.iter().enumerate() {
                let post = gamma * (lm - lb).exp();
                let xt = x.row(t);
                num += post * adapted.gmms[j].component_log_gaussian(g, xt).exp();
                den += post * models.gmms[j].component_log_gaussian(g, xt).exp();
            }
        }
        oracle += num.ln() - den.ln();
    }
    let score = score_hmm_fb(&adapted, &models, &a, &x, true).unwrap();
    assert!((score - oracle).abs() < 1e-8, "{score} vs {oracle}");
}

#[test]
fn flat_start_uniform_with_remainder_last() {
    assert_eq!(
        flat_start_segmentation(10, 3).unwrap(),
        vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 2]
    );
    assert_eq!(flat_start_segmentation(3, 3).unwrap(), vec![0, 1, 2]);
    assert!(matches!(
        flat_start_segmentation(2, 3),
        Err(HmmError::InsufficientFrames { .. })
    ));
}

fn known_phone_corpus() -> Vec<(FeatureMatrix, Vec<String>)> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    let truth = [-6.0, 0.0, 6.0];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..20)
        .map(|_| {
            let mut v = Vec::new();
            for &m in &truth {
                let d = rng.random_range(3..=8);
                for _ in 0..d {
                    v.push(m + 0.5 * rng.sample::<f64, _>(StandardNormal));
                }
            }
            (col(&v), words("a"))
        })
        .collect()
}

#[test]
fn training_recovers_known_state_means() {
    let corpus = known_phone_corpus();
    let utts: Vec<TrainingUtterance> = corpus.iter().map(|(x, t)| (x, t.as_slice())).collect();
    let config = HmmTrainConfig {
        mixtures: 1,
        silence_mixtures: 1,
        silence: SilencePolicy::none(),
        ..HmmTrainConfig::default()
    };
    let trained = train_monophone_hmms(&utts, &words("a"), &config).unwrap();
    let a = &trained.hmm_set.phones()[trained.hmm_set.phone_index("a").unwrap()];
    for (s, truth) in [-6.0, 0.0, 6.0].iter().enumerate() {
        assert!(
            (a.states[s].means()[0] - truth).abs() < 0.2,
            "{s}: {:?}",
            a.states[s].means()
        );
    }
    for stage in &trained.history {
        for w in stage.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{stage:?}");
        }
    }
}

#[test]
fn training_splits_to_mixture_targets() {
    let corpus = known_phone_corpus();
    let utts: Vec<TrainingUtterance> = corpus.iter().map(|(x, t)| (x, t.as_slice())).collect();
    let config = HmmTrainConfig {
        mixtures: 2,
        silence_mixtures: 4,
        rounds_per_split: 2,
        silence: SilencePolicy::none(),
        ..HmmTrainConfig::default()
    };
    let trained = train_monophone_hmms(&utts, &words("a"), &config).unwrap();
    assert_eq!(trained.hmm_set.total_mixtures(), 3 * 2 + 3 * 4);
}

#[test]
fn inventory_phone_absent_from_corpus() {
    let corpus = known_phone_corpus();
    let utts: Vec<TrainingUtterance> = corpus.iter().map(|(x, t)| (x, t.as_slice())).collect();
    let err = train_monophone_hmms(&utts, &words("a zz"), &HmmTrainConfig::default()).unwrap_err();
    assert_eq!(err, HmmError::PhoneMissing("zz".into()));
    let err = train_monophone_hmms(&utts, &words("b"), &HmmTrainConfig::default()).unwrap_err();
    assert_eq!(err, HmmError::UnknownPhone("a".into()));
}

fn one_state_alignment(masses: &[f64]) -> Alignment {
    let graph = CompositeHmm::from_parts(plain(1), vec![(0, 0.0)], vec![vec![(0, -0.1)]], vec![0]).unwrap();
    let frames = masses
        .iter()
        .map(|&p| {
            if p > 0.0 {
                vec![Occupancy {
                    state: 0,
                    mixture: 0,
                    posterior: p,
                }]
            } else {
                Vec::new()
            }
        })
        .collect();
    Alignment::from_frames(AlignAlgo::ForwardBackward, 0.0, None, &graph, frames)
}

fn one_state_set() -> PhoneHmmSet {
    let phones = vec![
        PhoneHmm::new("a", vec![scalar_gmm(&[0.0]); 3], vec![0.5; 3]).unwrap(),
        PhoneHmm::new(SILENCE_LABEL, vec![scalar_gmm(&[0.0]); 3], vec![0.5; 3]).unwrap(),
    ];
    PhoneHmmSet::new(phones).unwrap()
}

#[test]
fn reestimated_mean_is_weighted_average() {
    let a = one_state_alignment(&[0.5, 0.0, 0.5]);
    let x = col(&[1.0, 50.0, 4.0]);
    let models = reestimate_state_gmms(&one_state_set(), &[&a], &[&x], &ReestimateOptions::default()).unwrap();
    assert!((models.gmms[0].means()[0] - 2.5).abs() < 1e-12);
    let short = col(&[1.0, 2.0]);
    assert_eq!(
        reestimate_state_gmms(&one_state_set(), &[&a], &[&short], &ReestimateOptions::default()),
        Err(HmmError::FrameCountMismatch { left: 3, right: 2 })
    );
}

#[test]
fn reestimation_with_identical_streams_is_an_em_step() {
    let set = toy_set(&[("a", [-2.0, 0.0, 2.0])]);
    let graph = build_composite_graph(&set, &words("a"), &SilencePolicy::none()).unwrap();
    let x = col(&[-2.2, -1.7, 0.3, -0.1, 1.8, 2.5]);
    let a = align(&graph, &set, &x, AlignAlgo::ForwardBackward, &AlignOptions::exact()).unwrap();
    let models = reestimate_state_gmms(&set, &[&a], &[&x], &ReestimateOptions::default()).unwrap();
    for j in 0..3 {
        let (mut n, mut s) = (0.0, 0.0);
        for t in 0..6 {
            let p: f64 = a.frame(t).iter().filter(|o| o.state == j).map(|o| o.posterior).sum();
            n += p;
            s += p * x.row(t)[0];
        }
        assert!((models.gmms[j].means()[0] - s / n).abs() < 1e-12);
    }
}

#[test]
fn hmm_map_examples() {
    let set = toy_set(&[("a", [0.0; 3])]);
    let models = set.state_models();
    let zero = GmmStats::zeros(models.num_slots(), 1);
    assert_eq!(hmm_map_adapt(&models, &zero, &MapConfig::default()).unwrap(), models);
    let mut one = zero.clone();
    one.n[1] = 1.0;
    one.f[1] = 1.0;
    let adapted = hmm_map_adapt(&models, &one, &MapConfig::default()).unwrap();
    assert!((adapted.gmms[1].means()[0] - (models.gmms[1].means()[0] + 1.0 / 17.0)).abs() < 1e-15);
    for s in (0..models.num_states()).filter(|&s| s != 1) {
        assert_eq!(adapted.gmms[s], models.gmms[s]);
    }
}

#[test]
fn viterbi_llr_examples() {
    let graph = CompositeHmm::from_parts(plain(1), vec![(0, 0.0)], vec![vec![(0, -0.1)]], vec![0]).unwrap();
    let bg = StateModels::new(vec![scalar_gmm(&[0.0])], vec![false]).unwrap();
    let spk = StateModels::new(vec![scalar_gmm(&[1.0])], vec![false]).unwrap();
    let x = col(&[1.0]);
    let a = viterbi_align(&graph, &bg, &x).unwrap();
    assert!((score_hmm_viterbi(&spk, &bg, &a, &x, true).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(score_hmm_viterbi(&bg, &bg, &a, &x, true).unwrap(), 0.0);
    let fb = fb_align(&graph, &bg, &x).unwrap();
    let v = score_hmm_viterbi(&spk, &bg, &a, &col(&[1.0]), true).unwrap();
    assert!((score_hmm_fb(&spk, &bg, &fb, &x, true).unwrap() - v).abs() < 1e-12);
}

#[test]
fn viterbi_llr_equals_term_by_term_recomputation() {
    let set = toy_set(&[("a", [-1.0, 0.0, 1.0]), ("b", [2.0, 3.0, 4.0])]);
    let graph = build_composite_graph(&set, &words("a b"), &SilencePolicy::default()).unwrap();
    let x = col(&[0.1, -0.2, 0.0, -1.1, -0.8, 0.2, 1.1, 2.2, 2.9, 3.1, 4.2, 0.1, 0.0, -0.1]);
    let bg = set.state_models();
    let adapted = bg
        .with_slot_means(&bg.slot_means().iter().map(|m| m + 0.3).collect::<Vec<_>>())
        .unwrap();
    let a = viterbi_align(&graph, &set, &x).unwrap();
    for exclude in [true, false] {
        let mut oracle = 0.0;
        for (t, &j) in a.path.as_ref().unwrap().iter().enumerate() {
            if exclude && a.silence[j] {
                continue;
            }
            let sid = a.state_ids[j];
            oracle +=
                adapted.gmms[sid].log_likelihood(x.row(t)).unwrap() - bg.gmms[sid].log_likelihood(x.row(t)).unwrap();
        }
        let score = score_hmm_viterbi(&adapted, &bg, &a, &x, exclude).unwrap();
        assert!((score - oracle).abs() < 1e-10);
    }
}

#[test]
fn hmm_stats_counts_and_sparsity() {
    let set = toy_set(&[("a", [-1.0, 0.0, 1.0]), ("b", [2.0, 3.0, 4.0])]);
    let graph = build_composite_graph(&set, &words("a b"), &SilencePolicy::default()).unwrap();
    let x = col(&[0.1, -0.2, 0.0, -1.1, -0.8, 0.2, 1.1, 2.2, 2.9, 3.1, 4.2, 0.1, 0.0, -0.1]);
    let models = set.state_models();
    let v = viterbi_align(&graph, &set, &x).unwrap();
    let all = accumulate_hmm_stats(&v, &x, &models, false).unwrap();
    assert!((all.total_mass() - 14.0).abs() < 1e-6);
    let speech = accumulate_hmm_stats(&v, &x, &models, true).unwrap();
    let path = v.path.as_ref().unwrap();
    let speech_frames = path.iter().filter(|&&j| !v.silence[j]).count();
    assert!((speech.total_mass() - speech_frames as f64).abs() < 1e-6);
    assert!(speech.n.iter().filter(|n| **n == 0.0).count() >= 3);

    let y = col(&[0.0, -0.1, 0.3, -0.9, -1.0, 0.1, 0.9, 2.1, 3.0, 3.3, 3.9, 0.2, -0.3, 0.0]);
    let vy = viterbi_align(&graph, &set, &y).unwrap();
    let sx = accumulate_hmm_stats(&v, &x, &models, true).unwrap();
    let sy = accumulate_hmm_stats(&vy, &y, &models, true).unwrap();
    let mut merged = sx.clone();
    merged.merge(&sy).unwrap();
    let mut direct = GmmStats::zeros(models.num_slots(), 1);
    for (a, f) in [(&v, &x), (&vy, &y)] {
        let s = accumulate_hmm_stats(a, f, &models, true).unwrap();
        direct += &s;
    }
    for (a, b) in merged.f.iter().zip(&direct.f) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(matches!(
        accumulate_hmm_stats(&v, &col(&[0.0; 13]), &models, true),
        Err(HmmError::FrameCountMismatch { .. })
    ));
}

#[test]
fn csv_dump_has_one_row_per_occupied_state() {
    let set = toy_set(&[("a", [-1.0, 0.0, 1.0])]);
    let graph = build_composite_graph(&set, &words("a"), &SilencePolicy::default()).unwrap();
    let x = col(&[0.0, 0.1, 0.0, -1.0, 0.0, 1.0, 0.0, 0.1, -0.1]);
    let v = viterbi_align(&graph, &set, &x).unwrap();
    let csv = alignment_csv("u1", &v, &set);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "utt_id,frame,state,phone,state_index,posterior");
    assert_eq!(lines.len(), 1 + 9);
    assert!(lines[1].starts_with("u1,0,0,sil,0,"));
}

fn random_graph(n: usize, seed: &[f64]) -> CompositeHmm {
    // Left-to-right chain with self-loops and occasional skip arcs.
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut k = 0;
    let mut next = || {
        k += 1;
        seed[k % seed.len()]
    };
    for (j, arcs) in incoming.iter_mut().enumerate() {
        arcs.push((j, (0.1 + 0.8 * next()).ln()));
        if j >= 1 {
            arcs.push((j - 1, (0.1 + 0.8 * next()).ln()));
        }
        if j >= 2 && next() > 0.6 {
            arcs.push((j - 2, (0.05 + 0.3 * next()).ln()));
        }
    }
    let mut entry = vec![(0, 0.0)];
    if n > 1 && next() > 0.5 {
        entry = vec![(0, 0.6f64.ln()), (1, 0.4f64.ln())];
    }
    let mut finals = vec![n - 1];
    if n > 1 && next() > 0.5 {
        finals.push(n - 2);
    }
    CompositeHmm::from_parts(plain(n), entry, incoming, finals).unwrap()
}

proptest! {
    #[test]
    fn posteriors_sum_to_one_per_frame(
        n in 1usize..5,
        t in 4usize..12,
        seed in proptest::collection::vec(0.0f64..1.0, 8),
        em in proptest::collection::vec(-6.0f64..0.0, 48),
    ) {
        let graph = random_graph(n, &seed);
        let emis = Emissions::from_log_likelihoods(t, n, em[..t * n].to_vec()).unwrap();
        for algo in [AlignAlgo::Viterbi, AlignAlgo::ForwardBackward] {
            let a = align_emissions(&graph, &emis, algo, &AlignOptions::default()).unwrap();
            for f in 0..t {
                let s: f64 = a.frame(f).iter().map(|o| o.posterior).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
            if algo == AlignAlgo::Viterbi {
                let path = a.path.as_ref().unwrap();
                prop_assert!(path.windows(2).all(|w| w[0] <= w[1]));
                for f in 0..t {
                    prop_assert_eq!(a.state_posteriors(f).len(), 1);
                }
            }
        }
    }

    #[test]
    fn fb_matches_enumeration(
        n in 1usize..5,
        t in 4usize..7,
        seed in proptest::collection::vec(0.0f64..1.0, 8),
        em in proptest::collection::vec(-6.0f64..0.0, 24),
    ) {
        let graph = random_graph(n, &seed);
        let emis = Emissions::from_log_likelihoods(t, n, em[..t * n].to_vec()).unwrap();
        let (gamma, _) = forward_backward(&graph, &emis).unwrap();
        let paths = enumerate_paths(&graph, &emis);
        let z = log_sum_exp(&paths.iter().map(|p| p.1).collect::<Vec<_>>());
        for f in 0..t {
            for j in 0..n {
                let oracle: f64 = paths.iter().filter(|p| p.0[f] == j).map(|p| (p.1 - z).exp()).sum();
                prop_assert!((gamma[f * n + j] - oracle).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn self_scores_are_zero(xs in proptest::collection::vec(-3.0f64..5.0, 12..20)) {
        let set = toy_set(&[("a", [-1.0, 0.0, 1.0]), ("b", [2.0, 3.0, 4.0])]);
        let graph = build_composite_graph(&set, &words("a b"), &SilencePolicy::default()).unwrap();
        let x = col(&xs);
        let bg = set.state_models();
        let v = viterbi_align(&graph, &set, &x).unwrap();
        let fb = fb_align(&graph, &set, &x).unwrap();
        prop_assert_eq!(score_hmm_viterbi(&bg, &bg, &v, &x, true).unwrap(), 0.0);
        prop_assert_eq!(score_hmm_fb(&bg, &bg, &fb, &x, true).unwrap(), 0.0);
        prop_assert_eq!(score_hmm_fb(&bg, &bg, &v, &x, false).unwrap(), 0.0);
    }
}
