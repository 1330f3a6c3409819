//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so every line prints on a plain `cargo test`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdsv::corpus_io::{
    generate_synthetic_corpus, generate_synthetic_experiment, Experiment, SyntheticSpec, TrialType, DEFAULT_STREAM,
};
use tdsv::eval::{compute_eer, compute_mindcf, operating_points, DcfParams, ScoreRecord, ScoreSet};
use tdsv::features::{FeatureKind, FeatureMatrix};
use tdsv::gmm::{
    accumulate_stats, gmm_posteriors, map_adapt, score_gmm_ubm, train_gmm_em, EmConfig, Gmm, GmmStats, MapConfig,
};
use tdsv::hmm::{
    accumulate_hmm_stats, align, align_emissions, build_composite_graph, forward_backward, hmm_map_adapt, score_hmm_fb,
    score_hmm_viterbi, train_monophone_hmms, viterbi_decode, AlignAlgo, AlignOptions, Alignment, CompositeHmm,
    Emissions, GraphState, HmmTrainConfig, SILENCE_LABEL,
};
use tdsv::ivector::{enroll_ivector, extract_ivector, trial_score, EnrollMode, TotalVariability};
use tdsv::pipeline::{Pipeline, SystemConfig, SystemKind};

type Outcome = Result<String, String>;

/// Worst per-frame deviation of `Σ_{j,g} P_t(j,g)` from 1 over every
/// alignment the suite produces.
#[derive(Default)]
struct Normalization {
    frames: usize,
    alignments: usize,
    worst: f64,
}

impl Normalization {
    fn add(&mut self, a: &Alignment) {
        self.alignments += 1;
        for t in 0..a.num_frames() {
            let s: f64 = a.frame(t).iter().map(|o| o.posterior).sum();
            self.add_frame(s);
        }
    }

    fn add_frame(&mut self, sum: f64) {
        self.frames += 1;
        self.worst = self.worst.max((sum - 1.0).abs());
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn smoke_config() -> String {
    workspace().join("configs/smoke.conf").display().to_string()
}

fn tdsv(args: &[&str], cache: Option<&Path>) -> Result<std::process::Output, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tdsv"));
    cmd.args(args).env("RUST_LOG", "warn");
    match cache {
        Some(dir) => cmd.env("TDSV_CACHE_DIR", dir),
        None => cmd.env_remove("TDSV_CACHE_DIR"),
    };
    let out = cmd.output().map_err(|e| format!("cannot run tdsv: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "tdsv {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

// 1. Alignment oracle equivalence.

/// With `flat` every arc has the same weight, so quantized emissions give
/// tied optima.
fn random_graph(rng: &mut ChaCha8Rng, flat: bool) -> CompositeHmm {
    let n = rng.random_range(1..=4usize);
    let states = (0..n)
        .map(|j| GraphState {
            state_id: j,
            silence: false,
            optional: false,
        })
        .collect();
    let w = |rng: &mut ChaCha8Rng| {
        if flat {
            0.5f64.ln()
        } else {
            rng.random_range(0.05..1.0f64).ln()
        }
    };
    let mut entry = vec![(0, w(rng))];
    if n > 1 && rng.random_bool(0.3) {
        entry.push((1, w(rng)));
    }
    let incoming = (0..n)
        .map(|j| {
            let mut arcs = Vec::new();
            if j >= 2 && rng.random_bool(0.3) {
                arcs.push((j - 2, w(rng)));
            }
            if j >= 1 {
                arcs.push((j - 1, w(rng)));
            }
            if rng.random_bool(0.85) {
                arcs.push((j, w(rng)));
            }
            arcs
        })
        .collect();
    let mut finals = vec![n - 1];
    if n > 1 && rng.random_bool(0.3) {
        finals.insert(0, rng.random_range(0..n - 1));
    }
    CompositeHmm::from_parts(states, entry, incoming, finals).expect("well-formed random graph")
}

/// Every complete path with its log score, accumulated in the same order
/// as the recursions so scores compare exactly.
fn enumerate(graph: &CompositeHmm, emis: &Emissions) -> Vec<(Vec<usize>, f64)> {
    let n = graph.num_states();
    let t_count = emis.num_frames();
    let arc = |i: usize, j: usize| graph.incoming[j].iter().find(|a| a.0 == i).map(|a| a.1);
    let mut out = Vec::new();
    'paths: for code in 0..n.pow(t_count as u32) {
        let path: Vec<usize> = (0..t_count).map(|t| code / n.pow(t as u32) % n).collect();
        let Some(&(_, entry)) = graph.entry.iter().find(|e| e.0 == path[0]) else {
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
            score += lp;
            score += emis.log_b(t, path[t]);
        }
        out.push((path, score));
    }
    out
}

fn criterion_1(norm: &mut Normalization) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut checked, mut worst, mut ties) = (0usize, 0.0f64, 0usize);
    while checked < 250 {
        let quantized = rng.random_bool(0.3);
        let graph = random_graph(&mut rng, quantized);
        let n = graph.num_states();
        let t_count = rng.random_range(1..=6usize);
        let values: Vec<f64> = (0..t_count * n)
            .map(|_| {
                if quantized {
                    -(rng.random_range(0..3) as f64)
                } else {
                    rng.random_range(-6.0..0.0)
                }
            })
            .collect();
        let emis = Emissions::from_log_likelihoods(t_count, n, values).map_err(|e| e.to_string())?;
        let paths = enumerate(&graph, &emis);
        if paths.is_empty() {
            continue;
        }
        checked += 1;
        let best = paths.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let z = best + paths.iter().map(|p| (p.1 - best).exp()).sum::<f64>().ln();

        let (gamma, total) = forward_backward(&graph, &emis).map_err(|e| e.to_string())?;
        worst = worst.max((total - z).abs());
        for t in 0..t_count {
            for j in 0..n {
                let oracle: f64 = paths.iter().filter(|p| p.0[t] == j).map(|p| (p.1 - z).exp()).sum();
                worst = worst.max((gamma[t * n + j] - oracle).abs());
            }
        }

        let (path, score) = viterbi_decode(&graph, &emis).map_err(|e| e.to_string())?;
        let mut optimal: Vec<&Vec<usize>> = paths.iter().filter(|p| p.1 == best).map(|p| &p.0).collect();
        if optimal.len() > 1 {
            ties += 1;
        }
        // Deterministic tie-break: lowest final state, then lowest
        // predecessors walking backwards.
        optimal.sort_by(|a, b| a.iter().rev().cmp(b.iter().rev()));
        check(score == best && &path == optimal[0], || {
            format!(
                "Viterbi path {path:?} ({score}) differs from enumeration {:?} ({best})",
                optimal[0]
            )
        })?;
        for algo in [AlignAlgo::Viterbi, AlignAlgo::ForwardBackward] {
            norm.add(&align_emissions(&graph, &emis, algo, &AlignOptions::exact()).map_err(|e| e.to_string())?);
        }
    }
    let elapsed = start.elapsed();
    check(worst <= 1e-10, || format!("FB deviates from enumeration by {worst:e}"))?;
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{checked} instances ({ties} with tied optima), max FB error {worst:.1e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// 3. Scalar i-vector closed form.

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = rng.random_range(-3.0..3.0);
        let var = rng.random_range(0.05..5.0);
        let n = if rng.random_bool(0.1) {
            0.0
        } else {
            rng.random_range(0.0..1000.0)
        };
        let f = rng.random_range(-100.0..100.0);
        let tv = TotalVariability::new(vec![t], vec![0.0], vec![var], 1, 1).map_err(|e| e.to_string())?;
        let stats = GmmStats {
            dim: 1,
            n: vec![n],
            f: vec![f],
        };
        let w = extract_ivector(&tv, &stats).map_err(|e| e.to_string())?.w[0];
        let want = t * f / (var + t * t * n);
        worst = worst.max((w - want).abs() / want.abs().max(1.0));
    }
    check(worst <= 1e-12, || format!("max error {worst:e}"))?;
    Ok(format!("1000 points, max error {worst:.1e}"))
}

// 4. EM monotonicity.

fn monotone(history: &[Vec<f64>]) -> Option<f64> {
    history
        .iter()
        .flat_map(|stage| stage.windows(2).map(|w| w[1] - w[0]))
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
}

fn criterion_4() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut steps = 0usize;
    for seed in 0..10 {
        let spec = SyntheticSpec {
            seed,
            num_speakers: 3,
            utterances_per_cell: 3,
            ..SyntheticSpec::default()
        };
        let corpus = generate_synthetic_corpus(&spec).map_err(|e| e.to_string())?;
        let feats: Vec<&FeatureMatrix> = corpus.iter().map(|u| u.stream(DEFAULT_STREAM).unwrap()).collect();
        let pooled = FeatureMatrix::vstack(&feats).map_err(|e| e.to_string())?;
        let gmm = train_gmm_em(&pooled, 8, &EmConfig::default()).map_err(|e| e.to_string())?;
        let utts: Vec<(&FeatureMatrix, &[String])> = corpus
            .iter()
            .map(|u| (u.stream(DEFAULT_STREAM).unwrap(), u.transcript().unwrap()))
            .collect();
        let inventory: Vec<String> = utts
            .iter()
            .flat_map(|u| u.1.iter())
            .filter(|p| *p != SILENCE_LABEL)
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let config = HmmTrainConfig {
            mixtures: 2,
            silence_mixtures: 2,
            ..HmmTrainConfig::default()
        };
        let hmm = train_monophone_hmms(&utts, &inventory, &config).map_err(|e| e.to_string())?;
        for h in [&gmm.history, &hmm.history] {
            steps += h.iter().map(|s| s.len().saturating_sub(1)).sum::<usize>();
            if let Some(d) = monotone(h) {
                worst = worst.min(d);
            }
        }
    }
    check(worst >= -1e-8, || format!("log-likelihood dropped by {:e}", -worst))?;
    Ok(format!(
        "10 corpora, {steps} GMM and HMM iterations, smallest step {worst:.2e}"
    ))
}

// 5. MAP limits.

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|_| vec![rng.random_range(-2.0..3.0), rng.random_range(-1.0..1.0)])
        .collect();
    let x = FeatureMatrix::from_rows(&rows, FeatureKind::External).map_err(|e| e.to_string())?;
    let ubm =
        Gmm::new(vec![0.4, 0.6], vec![-1.0, 0.0, 1.5, 0.2], vec![1.0, 0.5, 0.8, 1.2], 2).map_err(|e| e.to_string())?;
    let stats = accumulate_stats(&ubm, &x).map_err(|e| e.to_string())?;
    let stiff = map_adapt(&ubm, &stats, &MapConfig { relevance: 1e9 }).map_err(|e| e.to_string())?;
    let shift = stiff
        .means()
        .iter()
        .zip(ubm.means())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    check(shift < 1e-6, || format!("r = 1e9 shifts means by {shift:e}"))?;

    // r = 0: each component's mean becomes its posterior-weighted sample mean.
    let free = map_adapt(&ubm, &stats, &MapConfig { relevance: 0.0 }).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut num = [[0.0; 2]; 2];
    let mut den = [0.0; 2];
    for r in &rows {
        let post = gmm_posteriors(&ubm, r).map_err(|e| e.to_string())?;
        for c in 0..2 {
            den[c] += post[c];
            for d in 0..2 {
                num[c][d] += post[c] * r[d];
            }
        }
    }
    for c in 0..2 {
        for d in 0..2 {
            worst = worst.max((free.means()[c * 2 + d] - num[c][d] / den[c]).abs());
        }
    }
    let single = Gmm::new(vec![1.0], vec![0.3, -0.7], vec![1.0, 1.0], 2).map_err(|e| e.to_string())?;
    let s = accumulate_stats(&single, &x).map_err(|e| e.to_string())?;
    let adapted = map_adapt(&single, &s, &MapConfig { relevance: 0.0 }).map_err(|e| e.to_string())?;
    for d in 0..2 {
        let mean = rows.iter().map(|r| r[d]).sum::<f64>() / rows.len() as f64;
        worst = worst.max((adapted.means()[d] - mean).abs());
    }
    check(worst <= 1e-10, || format!("r = 0 mean off by {worst:e}"))?;
    Ok(format!("r=1e9 shift {shift:.1e}, r=0 error {worst:.1e}"))
}

// 6. Metric oracle.

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut sets = 0;
    for _ in 0..500 {
        let nt = rng.random_range(1..=50usize);
        let nn = rng.random_range(1..=100 - nt);
        let coarse = rng.random_bool(0.5);
        let mut draw = || {
            if coarse {
                rng.random_range(-5..5) as f64 * 0.5
            } else {
                rng.random_range(-4.0..4.0)
            }
        };
        let t: Vec<f64> = (0..nt).map(|_| draw() + 0.5).collect();
        let n: Vec<f64> = (0..nn).map(|_| draw()).collect();

        let mut thresholds: Vec<f64> = t.iter().chain(&n).copied().collect();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        thresholds.push(f64::INFINITY);
        let oracle: Vec<(f64, f64, f64)> = thresholds
            .iter()
            .map(|&th| {
                let miss = t.iter().filter(|s| **s < th).count() as f64 / nt as f64;
                let fa = n.iter().filter(|s| **s >= th).count() as f64 / nn as f64;
                (th, miss, fa)
            })
            .collect();
        let points = operating_points(&t, &n);
        let got: Vec<(f64, f64, f64)> = points.iter().map(|p| (p.threshold, p.p_miss, p.p_fa)).collect();
        check(got == oracle, || format!("operating points differ for {t:?} / {n:?}"))?;

        // Crossing: first point with p_fa <= p_miss, interpolated linearly
        // with its predecessor.
        let k = oracle.iter().position(|p| p.2 - p.1 <= 0.0).unwrap();
        let eer = if k == 0 || oracle[k].2 == oracle[k].1 {
            oracle[k].1
        } else {
            let (g0, g1) = (oracle[k - 1].2 - oracle[k - 1].1, oracle[k].2 - oracle[k].1);
            let a = g0 / (g0 - g1);
            oracle[k - 1].1 + a * (oracle[k].1 - oracle[k - 1].1)
        };
        let records: Vec<ScoreRecord> = t
            .iter()
            .map(|s| (s, true))
            .chain(n.iter().map(|s| (s, false)))
            .map(|(s, target)| ScoreRecord {
                model_id: "m".into(),
                utt_id: "u".into(),
                trial_type: if target {
                    TrialType::TargetCorrect
                } else {
                    TrialType::ImposterCorrect
                },
                score: *s,
                is_target: target,
            })
            .collect();
        let set = ScoreSet { records };
        let filter = [TrialType::TargetCorrect, TrialType::ImposterCorrect];
        let got = compute_eer(&set, &filter).map_err(|e| e.to_string())?;
        check(got == eer, || format!("EER {got} vs oracle {eer}"))?;
        for p in [DcfParams::MDCF08, DcfParams::MDCF10] {
            let norm = (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target));
            let want = oracle
                .iter()
                .map(|o| (p.c_miss * o.1 * p.p_target + p.c_fa * o.2 * (1.0 - p.p_target)) / norm)
                .fold(f64::INFINITY, f64::min);
            let got = compute_mindcf(&set, &p, &filter).map_err(|e| e.to_string())?;
            check((got - want).abs() <= 1e-12 * want.max(1.0), || {
                format!("minDCF {got} vs oracle {want}")
            })?;
        }
        sets += 1;
    }
    Ok(format!("{sets} score sets of up to 100 scores"))
}

// 7 and 8. Trends on the bundled corpus through the smoke configuration.

struct Trend {
    eer: BTreeMap<String, f64>,
    elapsed: Duration,
}

fn run_smoke() -> Result<Trend, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = dir.path().join("report.kv");
    let start = Instant::now();
    tdsv(
        &[
            "run-experiment",
            "--config",
            &smoke_config(),
            "--out",
            report.to_str().unwrap(),
        ],
        None,
    )?;
    let elapsed = start.elapsed();
    let text = std::fs::read_to_string(&report).map_err(|e| e.to_string())?;
    let eer = text
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .filter(|(k, _)| k.ends_with(".eer"))
        .map(|(k, v)| (k.trim_end_matches(".eer").to_string(), v.parse().unwrap()))
        .collect();
    Ok(Trend { eer, elapsed })
}

fn eer(trend: &Trend, key: &str) -> Result<f64, String> {
    trend.eer.get(key).copied().ok_or_else(|| format!("no EER for {key}"))
}

fn criterion_7(trend: &Trend) -> Outcome {
    let hmm = eer(trend, "gmm-hmm-viterbi.TW")?;
    let ubm = eer(trend, "gmm-ubm.TW")?;
    let secs = trend.elapsed.as_secs_f64();
    let detail = format!(
        "TW EER GMM-HMM Viterbi {hmm:.4} vs 0.6 x GMM-UBM {:.4} ({ubm:.4}), six systems in {secs:.1}s",
        0.6 * ubm
    );
    check(hmm <= 0.6 * ubm, || detail.clone())?;
    check(secs < 300.0, || detail.clone())?;
    Ok(detail)
}

fn criterion_8(trend: &Trend) -> Outcome {
    let ivec = eer(trend, "ivector.IC")?;
    let ubm = eer(trend, "gmm-ubm.IC")?;
    let mut detail = format!("IC EER i-vector {ivec:.4} vs GMM-UBM {ubm:.4}");
    let mut misses = Vec::new();
    if ivec < ubm {
        misses.push("i-vector IC".to_string());
    }
    for ty in TrialType::ALL.iter().filter(|t| !t.is_target()) {
        let fb = eer(trend, &format!("ivector-hmm-fb.{ty}"))?;
        let vit = eer(trend, &format!("ivector-hmm-viterbi.{ty}"))?;
        detail.push_str(&format!("; {ty} FB {fb:.4} vs Viterbi {vit:.4} + 0.01"));
        if fb > vit + 0.01 + 1e-12 {
            misses.push(format!("FB {ty}"));
        }
    }
    check(misses.is_empty(), || {
        format!("{detail} (misses: {})", misses.join(", "))
    })?;
    Ok(detail)
}

// 9. FB-confident frames agree with the Viterbi path, via align-dump CSVs.

fn read_csv(path: &Path) -> Result<BTreeMap<usize, Vec<(usize, f64)>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut frames: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (t, j, p) = (f[1].parse().unwrap(), f[2].parse().unwrap(), f[5].parse().unwrap());
        frames.entry(t).or_default().push((j, p));
    }
    Ok(frames)
}

fn criterion_9(norm: &mut Normalization) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let cache = dir.path().join("cache");
    let conf = smoke_config();
    tdsv(
        &["synth-corpus", "--config", &conf, "--out", data.to_str().unwrap()],
        None,
    )?;
    let trials = std::fs::read_to_string(data.join("trials.txt")).map_err(|e| e.to_string())?;
    let utts: BTreeSet<&str> = trials
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_whitespace().nth(1))
        .collect();
    let (mut confident, mut frames) = (0usize, 0usize);
    for utt in utts.iter().step_by(utts.len().div_ceil(12)) {
        let mut dumps = Vec::new();
        for algo in ["fb", "viterbi"] {
            let csv = dir.path().join(format!("{utt}.{algo}.csv"));
            tdsv(
                &[
                    "align-dump",
                    "--config",
                    &conf,
                    "--data",
                    data.to_str().unwrap(),
                    "--utt",
                    utt,
                    "--algo",
                    algo,
                    "--out",
                    csv.to_str().unwrap(),
                ],
                Some(&cache),
            )?;
            dumps.push(read_csv(&csv)?);
        }
        let (fb, vit) = (&dumps[0], &dumps[1]);
        check(fb.len() == vit.len(), || format!("{utt}: frame counts differ"))?;
        for (t, states) in fb {
            frames += 1;
            norm.add_frame(states.iter().map(|s| s.1).sum());
            norm.add_frame(vit[t].iter().map(|s| s.1).sum());
            if let Some(&(j, _)) = states.iter().find(|s| s.1 > 0.99) {
                confident += 1;
                check(vit[t].len() == 1 && vit[t][0].0 == j, || {
                    format!("{utt} frame {t}: FB state {j} > 0.99 but Viterbi chose {:?}", vit[t])
                })?;
            }
        }
    }
    Ok(format!(
        "{confident} of {frames} frames FB-confident, all on the Viterbi path"
    ))
}

// 10. Complexity.

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_10(norm: &mut Normalization) -> Outcome {
    let exp = generate_synthetic_experiment(&SyntheticSpec {
        background_speakers: 6,
        background_utterances: 6,
        ..SyntheticSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let config = SystemConfig::new(SystemKind::GmmHmm, Some(AlignAlgo::Viterbi));
    let hmm = Pipeline::default()
        .train_background_hmm(&config, &exp)
        .map_err(|e| e.to_string())?;
    let utt = &exp.corpus.utterances()[0];
    let graph =
        build_composite_graph(&hmm, utt.transcript().unwrap(), &config.hmm.silence).map_err(|e| e.to_string())?;
    let base = utt.stream(DEFAULT_STREAM).unwrap();
    let tiled = |frames: usize| {
        let rows: Vec<&[f64]> = (0..frames).map(|t| base.row(t % base.num_frames())).collect();
        FeatureMatrix::from_rows(&rows, FeatureKind::External).unwrap()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let time = |x: &FeatureMatrix, algo: AlignAlgo, norm: &mut Normalization| -> Result<f64, String> {
        let mut runs = Vec::new();
        for _ in 0..7 {
            let start = Instant::now();
            let a = pool.install(|| align(&graph, &hmm, x, algo, &AlignOptions::default()));
            runs.push(start.elapsed().as_secs_f64());
            norm.add(&a.map_err(|e| e.to_string())?);
        }
        Ok(median(runs))
    };
    let (short, long) = (tiled(4000), tiled(8000));
    let mut detail = Vec::new();
    let mut ok = true;
    let mut at_long = [0.0; 2];
    for (k, algo) in [AlignAlgo::Viterbi, AlignAlgo::ForwardBackward].into_iter().enumerate() {
        let t1 = time(&short, algo, norm)?;
        let t2 = time(&long, algo, norm)?;
        let ratio = t2 / t1;
        ok &= (2.0 / 1.5..=2.0 * 1.5).contains(&ratio);
        at_long[k] = t2;
        detail.push(format!("{algo} x{ratio:.2} on doubling"));
    }
    let fb_over_vit = at_long[1] / at_long[0];
    ok &= fb_over_vit <= 3.0;
    detail.push(format!("FB/Viterbi {fb_over_vit:.2}"));
    let detail = detail.join(", ");
    check(ok, || detail.clone())?;
    Ok(detail)
}

// 11. Scoring identities.

fn criterion_11(norm: &mut Normalization) -> Outcome {
    let exp: Experiment = generate_synthetic_experiment(&SyntheticSpec {
        background_speakers: 6,
        background_utterances: 6,
        ..SyntheticSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let small = |kind, align| {
        let mut c = SystemConfig::new(kind, align);
        c.ubm_components = 8;
        c.hmm.mixtures = 2;
        c.hmm.silence_mixtures = 2;
        c.rank = 5;
        c.tmatrix_iterations = 3;
        c
    };
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let mut p = Pipeline::default();
    let tests: BTreeSet<&str> = exp.trials.iter().map(|t| t.test_utt_id.as_str()).collect();
    let feats = |u: &str| exp.corpus.require(u).unwrap().stream(DEFAULT_STREAM).unwrap();
    let mut scores: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    let mut record = |system: &'static str, s: f64| {
        let e = scores.entry(system).or_insert((0, 0.0));
        e.0 += 1;
        e.1 = e.1.max(s.abs());
    };

    // GMM-UBM: a model adapted from no data is the UBM.
    let gmm_cfg = small(SystemKind::GmmUbm, None);
    let ubm = p.train_ubm(&gmm_cfg, &exp).map_err(|e| err(&e))?;
    let model = map_adapt(&ubm, &GmmStats::for_model(&ubm), &gmm_cfg.map).map_err(|e| err(&e))?;
    check(model == ubm, || "MAP from empty statistics moved the UBM".into())?;
    for u in &tests {
        record("gmm-ubm", score_gmm_ubm(&model, &ubm, feats(u)).map_err(|e| err(&e))?);
    }

    // i-vector: a model with no statistics has the zero i-vector.
    let iv_cfg = small(SystemKind::Ivector, None);
    let tv = p.train_tmatrix(&iv_cfg, &exp).map_err(|e| err(&e))?;
    let zero = GmmStats::for_model(&ubm);
    let w = enroll_ivector(&tv, &[&zero], EnrollMode::SumStats)
        .map_err(|e| err(&e))?
        .w;
    for u in &tests {
        let stats = accumulate_stats(&ubm, feats(u)).map_err(|e| err(&e))?;
        let test = extract_ivector(&tv, &stats).map_err(|e| err(&e))?.w;
        record("ivector", trial_score(&w, &test).map_err(|e| err(&e))?);
    }

    // GMM-HMM and i-vector/HMM, with both alignment algorithms.
    for algo in [AlignAlgo::Viterbi, AlignAlgo::ForwardBackward] {
        let hmm_cfg = small(SystemKind::GmmHmm, Some(algo));
        let hmm = p.train_background_hmm(&hmm_cfg, &exp).map_err(|e| err(&e))?;
        let models = hmm.state_models();
        let empty = GmmStats::zeros(models.num_slots(), models.dim());
        let adapted = hmm_map_adapt(&models, &empty, &hmm_cfg.map).map_err(|e| err(&e))?;
        check(adapted == models, || {
            "MAP from empty statistics moved the state models".into()
        })?;
        let ivh_cfg = small(SystemKind::IvectorHmm, Some(algo));
        let tv = p.train_tmatrix(&ivh_cfg, &exp).map_err(|e| err(&e))?;
        let w = enroll_ivector(&tv, &[&empty], EnrollMode::SumStats)
            .map_err(|e| err(&e))?
            .w;
        for u in &tests {
            let (a, _) = p.align_utterance(&hmm_cfg, &exp, u, None).map_err(|e| err(&e))?;
            let x = feats(u);
            let s = match algo {
                AlignAlgo::Viterbi => score_hmm_viterbi(&adapted, &models, &a, x, true),
                AlignAlgo::ForwardBackward => score_hmm_fb(&adapted, &models, &a, x, true),
            };
            record("gmm-hmm", s.map_err(|e| err(&e))?);
            let stats = accumulate_hmm_stats(&a, x, &models, true).map_err(|e| err(&e))?;
            let test = extract_ivector(&tv, &stats).map_err(|e| err(&e))?.w;
            record("ivector-hmm", trial_score(&w, &test).map_err(|e| err(&e))?);
        }
    }
    for a in p.alignments() {
        norm.add(a);
    }
    let nonzero: Vec<String> = scores
        .iter()
        .filter(|(_, (_, m))| *m != 0.0)
        .map(|(s, (_, m))| format!("{s} max |score| {m:e}"))
        .collect();
    check(scores.len() == 4 && nonzero.is_empty(), || nonzero.join(", "))?;
    let counts: Vec<String> = scores.iter().map(|(s, (n, _))| format!("{s} {n}")).collect();
    Ok(format!("all scores exactly 0 ({})", counts.join(", ")))
}

fn criterion_2(norm: &Normalization) -> Outcome {
    check(norm.frames > 0 && norm.worst <= 1e-6, || {
        format!("worst deviation {:e}", norm.worst)
    })?;
    Ok(format!(
        "{} frames in {} alignments plus align-dump CSVs, worst deviation {:.1e}",
        norm.frames, norm.alignments, norm.worst
    ))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let mut norm = Normalization::default();
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "alignment oracle equivalence", guarded(|| criterion_1(&mut norm))),
        (3, "scalar i-vector closed form", guarded(criterion_3)),
        (4, "EM monotonicity", guarded(criterion_4)),
        (5, "MAP limits", guarded(criterion_5)),
        (6, "metric oracle", guarded(criterion_6)),
    ];
    let trend = run_smoke();
    match &trend {
        Ok(t) => {
            results.push((7, "target-wrong trend", guarded(|| criterion_7(t))));
            results.push((8, "i-vector and FB trends", guarded(|| criterion_8(t))));
        }
        Err(e) => {
            results.push((7, "target-wrong trend", Err(e.clone())));
            results.push((8, "i-vector and FB trends", Err(e.clone())));
        }
    }
    results.push((
        9,
        "FB-confident frames on the Viterbi path",
        guarded(|| criterion_9(&mut norm)),
    ));
    results.push((10, "alignment complexity", guarded(|| criterion_10(&mut norm))));
    results.push((11, "scoring identities", guarded(|| criterion_11(&mut norm))));
    results.push((2, "per-frame normalization", guarded(|| criterion_2(&norm))));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("acceptance {id:>2} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("acceptance {id:>2} FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
