//! Acceptance criteria. Runs without the libtest harness so the PASS/FAIL
//! line for every criterion is always printed; exits nonzero if any failed.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::{data_dir, snapshot, train_toy_models};
use mixmatch::commands::{cmd_generate, cmd_revise, cmd_train, run_generate, run_revise, RunOutput, TrainOptions};
use mixmatch::config::{ExpertSpec, RunConfig, Task};
use mixmatch::verify::{
    detailed_balance_violation, gibbs_limit_violation, sign_flipped_accept, tv_run, tv_setup, DETAILED_BALANCE_TOL,
    GIBBS_LIMIT_TOL, MUTATION_MIN_VIOLATION, TV_THRESHOLD,
};
use mixmatch_core::experts::DiscriminatorMode;
use mixmatch_core::metrics::{corpus_bleu, distinct_n};
use mixmatch_core::oracle::tv_distance;
use mixmatch_core::sampler::accept_prob;
use mixmatch_core::TokenId;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHAS: [f64; 4] = [0.0, 1.0, 5.0, 25.0];
const BETAS: [f64; 3] = [0.0, 10.0, 50.0];
/// Discriminator weight held fixed during the hamming sweep.
const SWEEP_ALPHA: f64 = 25.0;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn generate_config(models: &Path, alpha: f64, seed: u64, samples_per_prompt: usize) -> RunConfig {
    let mut cfg = RunConfig::new(Task::Generate, models);
    cfg.apply_preset("prompted-sentiment").unwrap();
    cfg.set_weight(mixmatch_core::ExpertKind::Discriminator, alpha);
    cfg.prompt_file = Some(data_dir().join("prompts.txt"));
    cfg.length = Some(8);
    cfg.samples_per_prompt = samples_per_prompt;
    cfg.seed = seed;
    cfg
}

fn revise_config(models: &Path, alpha: f64, beta: f64, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new(Task::Revise, models);
    cfg.experts = vec![
        ExpertSpec::Mlm { weight: 1.0 },
        ExpertSpec::Discriminator { weight: alpha, mode: DiscriminatorMode::LogPosterior },
        ExpertSpec::Hamming { weight: beta },
    ];
    cfg.epochs = Some(8);
    cfg.source_file = Some(data_dir().join("revise_sources.txt"));
    cfg.seed = seed;
    cfg
}

fn exact_target_recovery() -> Outcome {
    let start = Instant::now();
    let setup = tv_setup(4, 4, 2024).unwrap();
    let run = tv_run(&setup, 200_000, 2024, accept_prob).unwrap();
    let elapsed = start.elapsed();
    let passed = run.tv <= TV_THRESHOLD && elapsed <= Duration::from_secs(60);
    outcome(
        passed,
        format!(
            "V=4 L=4, {} steps, {} thinned samples: TV={:.4} (<= {TV_THRESHOLD}), {:.2}s (<= 60s)",
            run.steps,
            run.samples,
            run.tv,
            elapsed.as_secs_f64()
        ),
    )
}

fn gibbs_limit() -> Outcome {
    let worst = gibbs_limit_violation(accept_prob, 99).unwrap();
    outcome(worst <= GIBBS_LIMIT_TOL, format!("V=2..3 L=2..3, max |a-1| = {worst:.3e} (<= {GIBBS_LIMIT_TOL:e})"))
}

fn detailed_balance() -> Outcome {
    let ok = detailed_balance_violation(accept_prob, 7, 20).unwrap();
    let bad = detailed_balance_violation(sign_flipped_accept, 7, 20).unwrap();
    outcome(
        ok <= DETAILED_BALANCE_TOL && bad > MUTATION_MIN_VIOLATION,
        format!(
            "V=2 L=2, 20 random targets: violation {ok:.3e} (<= {DETAILED_BALANCE_TOL:e}); sign-flipped mutant {bad:.3e} (> {MUTATION_MIN_VIOLATION:e})"
        ),
    )
}

fn control_monotonicity(models: &Path) -> Outcome {
    let start = Instant::now();
    let mut rates = Vec::new();
    for alpha in ALPHAS {
        let mut sum = 0.0;
        for seed in SEEDS {
            // 4 prompts x 50 samples = 200 per setting.
            let out = run_generate(&generate_config(models, alpha, seed, 50)).unwrap();
            assert_eq!(out.report.samples, 200);
            sum += out.report.internal_accuracy.unwrap();
        }
        rates.push(sum / SEEDS.len() as f64);
    }
    let elapsed = start.elapsed();
    let monotone = rates.windows(2).all(|w| w[1] >= w[0]);
    let top = *rates.last().unwrap();
    outcome(
        monotone && top >= 0.90 && elapsed <= Duration::from_secs(300),
        format!(
            "alpha {ALPHAS:?}: target rate {} (nondecreasing, last >= 0.90), {:.1}s (<= 300s)",
            fmt_list(&rates),
            elapsed.as_secs_f64()
        ),
    )
}

fn faithfulness_tradeoff(models: &Path) -> Outcome {
    let mut means = Vec::new();
    let mut within = Vec::new();
    for beta in BETAS {
        let (mut total, mut close, mut n) = (0.0, 0usize, 0usize);
        for seed in SEEDS {
            let out = run_revise(&revise_config(models, SWEEP_ALPHA, beta, seed)).unwrap();
            for (s, src) in out.samples().iter().zip(&out.sources) {
                assert_eq!(s.len(), 8);
                let d = s.ids().iter().zip(src.ids()).filter(|(a, b)| a != b).count();
                total += d as f64;
                close += usize::from(d <= 2);
                n += 1;
            }
        }
        means.push(total / n as f64);
        within.push(close as f64 / n as f64);
    }
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let last = *within.last().unwrap();
    outcome(
        decreasing && last >= 0.80,
        format!(
            "alpha={SWEEP_ALPHA}, beta {BETAS:?}: mean hamming {} (strictly decreasing); within 2 at beta=50: {:.3} (>= 0.80)",
            fmt_list(&means),
            last
        ),
    )
}

fn frozen_preservation(models: &Path) -> Outcome {
    let out = run_generate(&generate_config(models, 25.0, 11, 250)).unwrap();
    let prompts: Vec<String> = std::fs::read_to_string(data_dir().join("prompts.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(String::from)
        .collect();
    let kept = out
        .texts
        .iter()
        .enumerate()
        .filter(|(i, t)| {
            let p = &prompts[i / 250];
            t.starts_with(p.as_str()) && t.as_bytes().get(p.len()) == Some(&b' ')
        })
        .count();

    let mut cfg = RunConfig::new(Task::Revise, models);
    cfg.apply_preset("agency-verb-replace").unwrap();
    cfg.source_file = Some(data_dir().join("verb_replace_sources.tsv"));
    cfg.lexicon = Some(data_dir().join("agency_verbs.txt"));
    cfg.samples_per_source = 10;
    let vr = run_revise(&cfg).unwrap();
    let vr_ok = vr
        .samples()
        .iter()
        .zip(&vr.sources)
        .filter(|(s, src)| s.ids().iter().zip(src.ids()).filter(|(a, b)| a != b).count() <= 1)
        .count();
    let changed = vr.samples().iter().zip(&vr.sources).filter(|(s, src)| s.ids() != src.ids()).count();

    outcome(
        kept == out.texts.len() && out.texts.len() == 1000 && vr_ok == vr.chains.len(),
        format!(
            "prompt intact in {kept}/{} generations; verb-replace within 1 edit in {vr_ok}/{} outputs ({changed} changed)",
            out.texts.len(),
            vr.chains.len()
        ),
    )
}

fn determinism(root: &Path, models: &Path) -> Outcome {
    let mut runs = Vec::new();
    for (n, threads) in [1usize, 4].into_iter().enumerate() {
        let base = root.join(format!("det{n}"));
        cmd_train(&TrainOptions {
            corpus: data_dir().join("toy_sentiment.txt"),
            labeled: Some(data_dir().join("toy_sentiment.tsv")),
            k: 0.1,
            min_count: 1,
            out_dir: base.join("models"),
        })
        .unwrap();
        let mut g = generate_config(models, 25.0, 3, 5);
        g.trace = true;
        g.threads = Some(threads);
        g.out_dir = base.join("generate");
        cmd_generate(&g).unwrap();
        let mut r = revise_config(models, 25.0, 10.0, 3);
        r.trace = true;
        r.trace_format = mixmatch::config::TraceFormat::Jsonl;
        r.threads = Some(threads);
        r.out_dir = base.join("revise");
        cmd_revise(&r).unwrap();
        runs.push(snapshot(&base));
    }
    let files = runs[0].len();
    let same = runs[0] == runs[1];
    outcome(
        same && files > 3,
        format!("train + generate + revise twice (1 vs 4 threads): {files} files, identical={same}"),
    )
}

fn metric_self_checks(out: &RunOutput) -> Outcome {
    let lines: Vec<Vec<TokenId>> = out.samples().iter().map(|s| s.ids().to_vec()).collect();
    let refs: Vec<&[TokenId]> = lines.iter().map(Vec::as_slice).collect();
    let bleu = corpus_bleu(&refs, &refs, 4).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut axioms = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..12);
        let mut draw = || {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect::<Vec<f64>>()
        };
        let (p, q, r) = (draw(), draw(), draw());
        let (pq, qp, qr, pr) = (
            tv_distance(&p, &q).unwrap(),
            tv_distance(&q, &p).unwrap(),
            tv_distance(&q, &r).unwrap(),
            tv_distance(&p, &r).unwrap(),
        );
        let ok = tv_distance(&p, &p).unwrap() == 0.0 && (0.0..=1.0).contains(&pq) && pq == qp && pr <= pq + qr + 1e-12;
        axioms += usize::from(ok);
    }

    let mut perm_ok = true;
    let mut shuffled = refs.clone();
    for _ in 0..10 {
        shuffled.shuffle(&mut rng);
        for n in 1..=3 {
            perm_ok &= distinct_n(&shuffled, n).unwrap() == distinct_n(&refs, n).unwrap();
        }
    }
    outcome(
        bleu == 1.0 && axioms == 100 && perm_ok,
        format!("BLEU(x,x)={bleu}; TV axioms hold on {axioms}/100 triples; distinct-n permutation invariant={perm_ok}"),
    )
}

fn fmt_list(xs: &[f64]) -> String {
    format!("[{}]", xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", "))
}

fn main() -> std::process::ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let models = train_toy_models(dir.path());
    let sample_run = run_generate(&generate_config(&models, 5.0, 1, 20)).unwrap();

    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("exact-target recovery", Box::new(exact_target_recovery)),
        ("gibbs-limit acceptance", Box::new(gibbs_limit)),
        ("detailed balance", Box::new(detailed_balance)),
        ("control monotonicity", Box::new(|| control_monotonicity(&models))),
        ("faithfulness tradeoff", Box::new(|| faithfulness_tradeoff(&models))),
        ("frozen-prompt preservation", Box::new(|| frozen_preservation(&models))),
        ("determinism", Box::new(|| determinism(dir.path(), &models))),
        ("metric self-checks", Box::new(|| metric_self_checks(&sample_run))),
    ];
    let mut failed = Vec::new();
    for (n, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("{} [{}] {name}: {}", if o.passed { "PASS" } else { "FAIL" }, n + 1, o.detail);
        if !o.passed {
            failed.push(*name);
        }
    }
    if failed.is_empty() {
        println!("acceptance: {} of {} criteria passed", criteria.len(), criteria.len());
        std::process::ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria: {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
