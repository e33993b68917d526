//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any of them fails.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use gsrm_cli::{cmd_train_toy, TrainToyArgs};
use gsrm_core::config::EngineConfig;
use gsrm_core::grpo::{group_advantages, RewardGroup, DEFAULT_EPS};
use gsrm_core::matching::{DeterministicMatcher, JudgeError, Matcher};
use gsrm_core::metrics::{diversity_score, pass_at_k_simple, pass_at_k_unbiased_exact, EmbeddingSet, RunMatrix};
use gsrm_core::reward::{combine_rewards, structured_reward, RewardParts, RewardWeights};
use gsrm_core::simenv::{build_world, run_distillation, Checkpoint, ExperimentLog};
use gsrm_core::structseq::{
    parse_bytes, parse_sequence, serialize_sequence, ReasoningPath, ReasoningStep, StepField, StructuredSequence,
};
use gsrm_core::train::{
    build_dataset_sample, init_scheduler, scheduler_step, SampleResult, ScriptedGenerator, ScriptedVerifier,
    WeightSchedulerState,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

struct RandomPredicate(HashMap<(String, String, StepField), bool>);

impl Matcher for RandomPredicate {
    fn is_match(&self, a: &str, b: &str, role: StepField) -> Result<bool, JudgeError> {
        Ok(self.0[&(a.to_string(), b.to_string(), role)])
    }
}

fn token(role: StepField, i: usize) -> String {
    format!("{}-{i}", role.tag())
}

fn prefix_walk_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let vocab = 3;
    let seq = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(0..=6);
        StructuredSequence::new(
            (0..n)
                .map(|_| {
                    let [m, q, a] = StepField::ALL.map(|f| token(f, rng.random_range(0..vocab)));
                    ReasoningStep::new(m, q, a)
                })
                .collect(),
        )
    };
    for case in 0..1000 {
        let mut table = HashMap::new();
        for role in StepField::ALL {
            for a in 0..vocab {
                for b in 0..vocab {
                    table.insert((token(role, a), token(role, b), role), rng.random_bool(0.6));
                }
            }
        }
        let pred = RandomPredicate(table);
        let (t, s) = (seq(&mut rng), seq(&mut rng));

        let mut total = 0.0;
        let mut prefix = 0;
        for (ts, ss) in t.steps.iter().zip(&s.steps) {
            let hit = |f| pred.0[&(ts.field(f).to_string(), ss.field(f).to_string(), f)];
            if !hit(StepField::Meta) {
                break;
            }
            let mut v = 1.0;
            if !hit(StepField::Question) {
                v *= 0.5;
            }
            if !hit(StepField::Answer) {
                v *= 0.5;
            }
            total += v;
            prefix += 1;
        }

        let got = structured_reward(&t, &s, &pred).map_err(|e| e.to_string())?;
        ensure!(got.reward == total, "case {case}: reward {} vs oracle {total}", got.reward);
        ensure!(got.matched_prefix_len == prefix, "case {case}: prefix {} vs {prefix}", got.matched_prefix_len);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2}s");
    Ok(())
}

fn hand_traces() -> Outcome {
    let exact = DeterministicMatcher::ExactNormalized;
    let step = ReasoningStep::new;
    let teacher = StructuredSequence::new(vec![
        step("split the sum", "what is 2+2", "4"),
        step("double it", "what is 4*2", "8"),
        step("check parity", "is 8 even", "yes"),
    ]);
    let cases = [
        (teacher.clone(), 3.0),
        (
            StructuredSequence::new(vec![
                step("split the sum", "what is 2+2", "4"),
                step("double it", "what is 4 times 2", "8"),
                step("guess", "is 8 even", "yes"),
            ]),
            1.5,
        ),
        (StructuredSequence::new(vec![step("guess", "what is 2+2", "4")]), 0.0),
        (StructuredSequence::new(vec![step("split the sum", "what is 3+3", "6")]), 0.25),
    ];
    for (i, (student, want)) in cases.iter().enumerate() {
        let got = structured_reward(&teacher, student, &exact).map_err(|e| e.to_string())?.reward;
        ensure!(got == *want, "trace {}: {got} != {want}", i + 1);
    }
    Ok(())
}

fn combiner() -> Outcome {
    let parts = RewardParts { r_acc: 1.0, r_gsrm_raw: 0.0, r_gsrm_norm: 0.6, r_format: 1.0, r_tag: 1.0, matched_prefix_len: 0 };
    let w = RewardWeights::new(3.0, 3.0, 2.0, 2.0).map_err(|e| e.to_string())?;
    let total = combine_rewards(&parts, &w).map_err(|e| e.to_string())?.total;
    ensure!((total - 0.88).abs() <= 1e-12, "total {total}");

    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    for _ in 0..100 {
        let parts = RewardParts {
            r_acc: rng.random(),
            r_gsrm_raw: 0.0,
            r_gsrm_norm: rng.random(),
            r_format: rng.random(),
            r_tag: rng.random(),
            matched_prefix_len: 0,
        };
        let w: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.1..4.0));
        let c: f64 = rng.random_range(0.001..1000.0);
        let base = RewardWeights::new(w[0], w[1], w[2], w[3]).map_err(|e| e.to_string())?;
        let scaled = RewardWeights::new(c * w[0], c * w[1], c * w[2], c * w[3]).map_err(|e| e.to_string())?;
        let a = combine_rewards(&parts, &base).map_err(|e| e.to_string())?.total;
        let b = combine_rewards(&parts, &scaled).map_err(|e| e.to_string())?.total;
        ensure!((a - b).abs() <= 1e-9, "scale {c}: {a} vs {b}");
    }
    Ok(())
}

fn advantages(rewards: &[f64]) -> Result<Vec<f64>, String> {
    let g = RewardGroup::new(rewards.to_vec()).map_err(|e| e.to_string())?;
    Ok(group_advantages(&g, DEFAULT_EPS).advantages)
}

fn grpo() -> Outcome {
    let want = [-1.341641, -0.447214, 0.447214, 1.341641];
    let got = advantages(&[1.0, 2.0, 3.0, 4.0])?;
    for (g, w) in got.iter().zip(want) {
        ensure!((g - w).abs() <= 1e-5, "{got:?}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x6290);
    let mut checked = 0;
    while checked < 500 {
        let n = rng.random_range(2..=16);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let mean = r.iter().sum::<f64>() / n as f64;
        let std = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if std < 0.1 {
            continue;
        }
        checked += 1;
        let a = advantages(&r)?;
        ensure!(a.iter().sum::<f64>().abs() <= 1e-9, "sum {}", a.iter().sum::<f64>());
        let (scale, shift) = (rng.random_range(0.1..10.0), rng.random_range(-5.0..5.0));
        let moved: Vec<f64> = r.iter().map(|x| scale * x + shift).collect();
        let b = advantages(&moved)?;
        for (x, y) in a.iter().zip(&b) {
            ensure!((x - y).abs() <= 1e-6, "affine {scale} {shift}: {x} vs {y}");
        }
    }

    for v in [0.0, 0.37, 1.0, -2.5] {
        let z = advantages(&[v; 5])?;
        ensure!(z.iter().all(|x| x.to_bits() == 0), "constant group {v}: {z:?}");
    }
    Ok(())
}

/// Share of the k-subsets of n samples (the first c correct) that contain a
/// correct sample.
fn subsets(n: u32, c: u32, k: u32) -> BigRational {
    let (mut hit, mut all) = (0i64, 0i64);
    for mask in 0u32..1 << n {
        if mask.count_ones() == k {
            all += 1;
            hit += i64::from(mask & ((1u32 << c) - 1) != 0);
        }
    }
    BigRational::new(hit.into(), all.into())
}

fn pass_at_k() -> Outcome {
    for n in 1..=8u32 {
        for c in 0..=n {
            for k in 1..=n {
                let got = pass_at_k_unbiased_exact(n.into(), c.into(), k.into()).map_err(|e| e.to_string())?;
                ensure!(got == subsets(n, c, k), "n={n} c={c} k={k}: {got}");
            }
        }
    }
    let got = pass_at_k_unbiased_exact(4, 2, 2).map_err(|e| e.to_string())?;
    ensure!(got == BigRational::new(5.into(), 6.into()), "(4,2,2) gave {got}");

    let mut rng = ChaCha8Rng::seed_from_u64(0x9a55);
    for i in 0..1000 {
        let m = rng.random_range(1..=10);
        let q = rng.random_range(1..=5);
        let rows: Vec<Vec<bool>> = (0..q).map(|_| (0..m).map(|_| rng.random_bool(0.35)).collect()).collect();
        let runs = RunMatrix::new(rows.clone()).map_err(|e| e.to_string())?;
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=m {
            let v = pass_at_k_simple(&runs, k).map_err(|e| e.to_string())?;
            ensure!(v >= prev, "matrix {i}: simple pass@k fell at k={k}");
            prev = v;
        }
        for row in &rows {
            let (n, c) = (row.len() as u64, row.iter().filter(|&&x| x).count() as u64);
            let mut prev = BigRational::zero();
            for k in 1..=n {
                let v = pass_at_k_unbiased_exact(n, c, k).map_err(|e| e.to_string())?;
                ensure!(v >= prev, "matrix {i}: unbiased fell at k={k}");
                if c < n {
                    let more = pass_at_k_unbiased_exact(n, c + 1, k).map_err(|e| e.to_string())?;
                    ensure!(more >= v, "matrix {i}: unbiased fell with c+1");
                }
                prev = v;
            }
        }
    }
    Ok(())
}

fn diversity(vs: Vec<Vec<f64>>) -> Result<f64, String> {
    let set = EmbeddingSet::new(vs).map_err(|e| e.to_string())?;
    diversity_score(&set).map(|d| d.diversity).map_err(|e| e.to_string())
}

fn diversity_checks() -> Outcome {
    let same = diversity(vec![vec![0.2, -1.3, 4.0]; 6])?;
    ensure!(same == 1.0, "identical vectors gave {same}");
    let ortho = diversity(vec![vec![1.0, 0.0], vec![0.0, 1.0]])?;
    ensure!((ortho - 2f64.sqrt()).abs() <= 1e-9, "orthogonal pair gave {ortho}");

    let mut rng = ChaCha8Rng::seed_from_u64(0xD1);
    for _ in 0..200 {
        let m = rng.random_range(2..8);
        let d = rng.random_range(2..6);
        let vs: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(0.05..1.0)).collect()).collect();
        let c = rng.random_range(0.01..100.0);
        let scaled: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().map(|x| c * x).collect()).collect();
        let (a, b) = (diversity(vs)?, diversity(scaled)?);
        ensure!((a - b).abs() <= 1e-9, "scaling moved D from {a} to {b}");
    }
    Ok(())
}

fn exact_mean(xs: &[f64]) -> f64 {
    let sum = xs.iter().fold(BigRational::zero(), |acc, &x| acc + BigRational::from_float(x).expect("finite"));
    (sum / BigRational::from_integer(BigInt::from(xs.len()))).to_f64().expect("finite")
}

fn scheduler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5c4);
    let e1: Vec<f64> = (0..20_000).map(|_| rng.random_range(0.0..1.0) * 10f64.powi(rng.random_range(-4..5))).collect();
    let e2: Vec<f64> = (0..20_000).map(|_| rng.random_range(1e-3..9.0)).collect();
    let init = init_scheduler(&e1, &e2, 100).map_err(|e| e.to_string())?;
    let (ma, mb) = (exact_mean(&e1), exact_mean(&e2));
    ensure!((init.a - ma).abs() <= 1e-12 * ma.max(1.0), "a {} vs {ma}", init.a);
    ensure!((init.b - mb).abs() <= 1e-12 * mb.max(1.0), "b {} vs {mb}", init.b);

    let alpha = 37;
    let mut s = WeightSchedulerState::new(1.7, 0.4, alpha).map_err(|e| e.to_string())?;
    let total = s.a + s.b;
    let (mut wm, mut ws) = (0.0, 0.0);
    for i in 0..10_000 {
        let (m, q) = (rng.random_range(0.01..6.0), rng.random_range(0.01..6.0));
        wm += m;
        ws += q;
        let next = scheduler_step(&s, m, q);
        if (i + 1) % alpha == 0 {
            let rho = wm / ws;
            ensure!((next.a / next.b - rho).abs() <= 1e-12 * rho.max(1.0), "step {i}: ratio {} vs {rho}", next.a / next.b);
            wm = 0.0;
            ws = 0.0;
        } else {
            ensure!(next.a == s.a && next.b == s.b, "step {i}: weights changed off the gate");
        }
        ensure!((next.a + next.b - total).abs() <= 1e-12, "step {i}: a+b drifted to {}", next.a + next.b);
        s = next;
    }
    Ok(())
}

fn pipeline() -> Outcome {
    let good = "<step><meta>isolate x</meta><question>what is x</question><answer>3</answer></step>";
    let path = ReasoningPath::new("solve x + 1 = 4", "subtract one").map_err(|e| e.to_string())?;

    let s = build_dataset_sample(&path, &ScriptedGenerator::new([good]), &ScriptedVerifier::always_fail())
        .map_err(|e| e.to_string())?;
    ensure!(s.result == SampleResult::Discarded, "always-fail was accepted");
    ensure!(s.attempts.len() == 4, "always-fail made {} attempts", s.attempts.len());

    for k in 1..=4 {
        let s = build_dataset_sample(&path, &ScriptedGenerator::new([good]), &ScriptedVerifier::new(k - 1))
            .map_err(|e| e.to_string())?;
        ensure!(matches!(s.result, SampleResult::Accepted(_)), "k={k}: discarded");
        ensure!(s.attempts.len() == k, "k={k}: {} attempts", s.attempts.len());
    }
    Ok(())
}

fn golden_fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy_seed42.jsonl")
}

fn toy_distillation() -> Outcome {
    let cfg = EngineConfig::default();
    let start = Instant::now();
    let (world, teacher) = build_world(&cfg.world, cfg.seed).map_err(|e| e.to_string())?;
    let dc = cfg.distill_config();
    let combined = run_distillation(&world, &teacher, &dc).map_err(|e| e.to_string())?;
    let mut abl = dc.clone();
    abl.weights = abl.weights.without_structure();
    let ablated = run_distillation(&world, &teacher, &abl).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();

    let (first, last) = (combined.first().ok_or("empty log")?, combined.last().ok_or("empty log")?);
    let abl_last = ablated.last().ok_or("empty ablation log")?;
    let gap = |c: &Checkpoint| (c.diversity_student - c.diversity_teacher).abs();
    ensure!(secs < 120.0, "combined run and ablation took {secs:.1}s");
    ensure!(last.alignment > first.alignment, "alignment {} -> {}", first.alignment, last.alignment);
    ensure!(abl_last.branch_kl >= last.branch_kl, "ablation KL {} < combined KL {}", abl_last.branch_kl, last.branch_kl);
    ensure!(gap(last) < gap(first), "D gap {} -> {}", gap(first), gap(last));

    let golden = std::fs::read_to_string(golden_fixture()).map_err(|e| format!("golden fixture: {e}"))?;
    let golden = ExperimentLog::read_jsonl(golden.as_bytes()).map_err(|e| e.to_string())?;
    let g_last = golden.last().ok_or("empty golden log")?;
    ensure!(combined.to_jsonl() == golden.to_jsonl(), "log drifted from golden fixture");
    ensure!(abl_last.branch_kl >= 20.0 * g_last.branch_kl, "ablation KL gap below frozen 20x");
    ensure!(last.alignment >= 0.95, "final alignment {} below frozen 0.95", last.alignment);
    println!(
        "  toy: {secs:.1}s, alignment {:.3} -> {:.3}, KL combined {:.4} ablation {:.4}, D gap {:.4} -> {:.4}",
        first.alignment, last.alignment, last.branch_kl, abl_last.branch_kl, gap(first), gap(last)
    );
    Ok(())
}

fn determinism() -> Outcome {
    let cfg = EngineConfig::default();
    let base = std::env::temp_dir().join(format!("gsrm-acceptance-{}", std::process::id()));
    let mut logs = Vec::new();
    for run in ["a", "b"] {
        let out = base.join(run);
        let args = TrainToyArgs { out: out.clone(), no_gsrm: false, episodes: None };
        cmd_train_toy(&args, &cfg, &mut std::io::sink()).map_err(|e| e.to_string())?;
        let read = |f: &str| std::fs::read(out.join(f)).map_err(|e| e.to_string());
        logs.push((read("log.jsonl")?, read("alignment.csv")?));
    }
    let _ = std::fs::remove_dir_all(&base);
    ensure!(logs[0].0 == logs[1].0, "log.jsonl differs between runs");
    ensure!(logs[0].1 == logs[1].1, "alignment.csv differs between runs");
    Ok(())
}

fn round_trip_and_totality() -> Outcome {
    const CHARS: &[char] = &['a', 'k', 'Z', '3', ' ', '\n', '<', '>', '&', '/', '"', '{', 'ü', '字', '🎲', '='];
    let mut rng = ChaCha8Rng::seed_from_u64(0x2777);
    let text = |rng: &mut ChaCha8Rng| loop {
        let s: String = (0..rng.random_range(1..20)).map(|_| CHARS[rng.random_range(0..CHARS.len())]).collect();
        if !s.trim().is_empty() {
            return s.trim().to_string();
        }
    };
    for i in 0..1000 {
        let n = rng.random_range(1..7);
        let seq = StructuredSequence::new(
            (0..n).map(|_| ReasoningStep::new(text(&mut rng), text(&mut rng), text(&mut rng))).collect(),
        );
        let back = parse_sequence(&serialize_sequence(&seq)).map_err(|e| format!("case {i}: {e}"))?;
        ensure!(back == seq, "case {i} did not round-trip");
    }
    for i in 0..10_000 {
        let bytes: Vec<u8> = (0..rng.random_range(0..160)).map(|_| rng.random()).collect();
        catch_unwind(|| {
            let _ = parse_bytes(&bytes);
        })
        .map_err(|_| format!("parser panicked on input {i}"))?;
    }
    Ok(())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("prefix-walk oracle equivalence", prefix_walk_oracle),
        ("hand-trace fixtures", hand_traces),
        ("combiner", combiner),
        ("GRPO advantages", grpo),
        ("pass@k", pass_at_k),
        ("diversity", diversity_checks),
        ("scheduler", scheduler),
        ("pipeline", pipeline),
        ("toy distillation", toy_distillation),
        ("determinism", determinism),
        ("round-trip and totality", round_trip_and_totality),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(()) => println!("PASS {name}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
