//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fan_core::checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint,
};
use fan_core::datastore::{
    build_folds, build_folds_from_subjects, decode_feature_bytes, encode_feature_bytes,
    load_feature_file, synth_generate, synth_generate_with_truth, write_feature_file, SynthConfig,
};
use fan_core::evaluator::{attention_export, evaluate, score_fusion_baseline, FrameMode, Fusion};
use fan_core::fanhead::{forward, FanParams, Mode};
use fan_core::gradcheck::{run_gradcheck, GradCheckConfig};
use fan_core::numkernel::Matrix;
use fan_core::sampler::{plan_segments, sample_training, stream};
use fan_core::trainer::{lr_at, train, TrainConfig};
use fan_core::{Dataset64, FanError, FanParams64};
use rand::seq::SliceRandom;
use rand::Rng;
use tempfile::TempDir;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_head(rng: &mut impl Rng, dim: usize, classes: usize, mode: Mode) -> FanParams64 {
    let mut p = FanParams::init(dim, classes, mode, rng).unwrap();
    for b in p.class_b.as_mut_slice() {
        *b = rng.random_range(-1.0..1.0);
    }
    p
}

fn random_frames(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

fn logits(frames: &[Vec<f64>], p: &FanParams64) -> (Vec<f64>, fan_core::AttentionTrace64) {
    forward(&Matrix::from_rows(frames).unwrap(), p).unwrap()
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let config = GradCheckConfig::default();
    let cases = run_gradcheck(&config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let covers = |f: &dyn Fn(&fan_core::gradcheck::GradCheckCase) -> bool| cases.iter().any(f);
    let coverage = [4, 8, 16].iter().all(|&d| covers(&|c| c.dim == d))
        && (1..=6).all(|n| covers(&|c| c.frames == n))
        && [3, 7].iter().all(|&k| covers(&|c| c.classes == k))
        && covers(&|c| c.mode == Mode::Full)
        && covers(&|c| c.mode == Mode::SelfOnly);
    check(
        cases.len() >= 20 && coverage && worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "{} configs, max rel err {worst:.2e}, {:.2}s",
            cases.len(),
            elapsed.as_secs_f64()
        ),
    )
}

#[allow(clippy::needless_range_loop)]
/// Independent scalar loops over the defining sums plus the affine layer.
fn reference_logits(frames: &[Vec<f64>], p: &FanParams64) -> Vec<f64> {
    let d = frames[0].len();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut alpha = Vec::new();
    for f in frames {
        let mut s = 0.0;
        for k in 0..d {
            s += f[k] * p.q0[k];
        }
        alpha.push(sig(s));
    }
    let asum: f64 = alpha.iter().sum();
    let mut anchor = vec![0.0; d];
    for (i, f) in frames.iter().enumerate() {
        for k in 0..d {
            anchor[k] += alpha[i] * f[k] / asum;
        }
    }
    let rep = if p.mode == Mode::Full {
        let mut w = Vec::new();
        for (i, f) in frames.iter().enumerate() {
            let mut s = 0.0;
            for k in 0..d {
                s += f[k] * p.q1[k] + anchor[k] * p.q1[d + k];
            }
            w.push(alpha[i] * sig(s));
        }
        let wsum: f64 = w.iter().sum();
        let mut v = vec![0.0; 2 * d];
        for (i, f) in frames.iter().enumerate() {
            for k in 0..d {
                v[k] += w[i] * f[k] / wsum;
                v[d + k] += w[i] * anchor[k] / wsum;
            }
        }
        v
    } else {
        anchor
    };
    let mut out = Vec::new();
    for c in 0..p.classes() {
        let mut s = p.class_b[c];
        for (k, r) in rep.iter().enumerate() {
            s += p.class_w.row(c)[k] * r;
        }
        out.push(s);
    }
    out
}

fn oracle_equivalence() -> Verdict {
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let mut rng = stream(0xacce, &[2, case]);
        let dim = rng.random_range(1..=24);
        let n = rng.random_range(1..=16);
        let classes = rng.random_range(2..=8);
        let mode = if case % 2 == 0 {
            Mode::Full
        } else {
            Mode::SelfOnly
        };
        let p = random_head(&mut rng, dim, classes, mode);
        let frames = random_frames(&mut rng, n, dim);
        worst = worst.max(max_diff(
            &logits(&frames, &p).0,
            &reference_logits(&frames, &p),
        ));
    }
    check(worst < 1e-10, format!("100 inputs, max |diff| {worst:.2e}"))
}

fn symmetry_suite() -> Verdict {
    let (mut perm, mut repl, mut half, mut sum) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut collapse = true;
    for case in 0..200u64 {
        let mut rng = stream(0xacce, &[3, case]);
        let dim = rng.random_range(1..=16);
        let n = rng.random_range(1..=12);
        let mode = if case % 2 == 0 {
            Mode::Full
        } else {
            Mode::SelfOnly
        };
        let p = random_head(&mut rng, dim, 4, mode);
        let frames = random_frames(&mut rng, n, dim);
        let (base, trace) = logits(&frames, &p);

        let mut shuffled = frames.clone();
        shuffled.shuffle(&mut rng);
        perm = perm.max(max_diff(&base, &logits(&shuffled, &p).0));

        let times = rng.random_range(2..=4);
        let repeated: Vec<Vec<f64>> = (0..times).flat_map(|_| frames.clone()).collect();
        repl = repl.max(max_diff(&base, &logits(&repeated, &p).0));

        sum = sum.max((trace.final_weights.iter().sum::<f64>() - 1.0).abs());
        if mode == Mode::Full {
            half = half.max(max_diff(&trace.aggregate[dim..], &trace.anchor));
        }

        let single = &frames[..1];
        let (_, t1) = logits(single, &p);
        let expect_rep: Vec<f64> = match mode {
            Mode::Full => single[0].iter().chain(&single[0]).copied().collect(),
            Mode::SelfOnly => single[0].clone(),
        };
        collapse &=
            t1.aggregate == expect_rep && t1.anchor == single[0] && t1.final_weights == [1.0];
    }
    check(
        perm < 1e-9 && repl < 1e-9 && half < 1e-12 && sum < 1e-12 && collapse,
        format!(
            "permutation {perm:.1e}, replication {repl:.1e}, anchor half {half:.1e}, weight sum {sum:.1e}, single frame {}",
            if collapse { "exact" } else { "inexact" }
        ),
    )
}

struct SeedOutcome {
    full: f64,
    self_only: f64,
    baseline: f64,
    peak_is_max: f64,
}

fn planted_peak_seed(s: u64) -> SeedOutcome {
    let synth = SynthConfig {
        seed: 7 + s,
        ..SynthConfig::default()
    };
    let (ds, truth) = synth_generate_with_truth::<f64>(&synth).unwrap();
    let (tr, te) = build_folds(&ds, 5).unwrap().split(&ds, 0).unwrap();
    let config = TrainConfig {
        seed: s,
        ..TrainConfig::synth_default()
    };
    let (full, _) = train(&ds, &tr, &config, None).unwrap();
    let (self_only, _) = train(
        &ds,
        &tr,
        &TrainConfig {
            mode: Mode::SelfOnly,
            ..config.clone()
        },
        None,
    )
    .unwrap();
    let (_, baseline) = score_fusion_baseline(&ds, &tr, &te, &config, Fusion::Logits).unwrap();
    let export = attention_export(&full, &ds, &te).unwrap();
    let hits = export
        .videos
        .iter()
        .zip(&te)
        .filter(|(v, &i)| {
            let w = &v.final_weights;
            let top = (0..w.len()).fold(0, |b, j| if w[j] > w[b] { j } else { b });
            truth.peak_frames[i].contains(&top)
        })
        .count();
    let acc = |p| {
        evaluate(p, &ds, &te, FrameMode::AllFrames, 1)
            .unwrap()
            .accuracy
    };
    SeedOutcome {
        full: acc(&full),
        self_only: acc(&self_only),
        baseline: baseline.accuracy,
        peak_is_max: hits as f64 / te.len() as f64,
    }
}

fn synthetic_experiment(runs: &[SeedOutcome], elapsed: Duration) -> Verdict {
    let m = |f: fn(&SeedOutcome) -> f64| median(runs.iter().map(f).collect());
    let (full, self_only, baseline) = (m(|r| r.full), m(|r| r.self_only), m(|r| r.baseline));
    let gap = (full - baseline) * 100.0;
    check(
        full >= 0.90 && gap >= 5.0 && full >= self_only && self_only >= baseline && elapsed < Duration::from_secs(300),
        format!(
            "median full {full:.3}, self-only {self_only:.3}, baseline {baseline:.3}, gap {gap:.1} points (need >= 5), {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn attention_localization(runs: &[SeedOutcome]) -> Verdict {
    let rate = median(runs.iter().map(|r| r.peak_is_max).collect());
    check(
        rate >= 0.8,
        format!(
            "peak frame has the largest weight in {:.1}% of held-out videos (median)",
            rate * 100.0
        ),
    )
}

fn protocol_fidelity() -> Verdict {
    let ck = TrainConfig::ck_plus();
    let afew = TrainConfig::afew();
    let ck_ok = ck.total_epochs == 60
        && (0..60).all(|e| lr_at(&ck.schedule, e) == if e < 30 { 0.1 } else { 0.02 });
    let afew_ok = afew.total_epochs == 180
        && (0..180).all(|e| {
            lr_at(&afew.schedule, e)
                == match e {
                    0..60 => 4e-6,
                    60..120 => 8e-7,
                    _ => 1.6e-7,
                }
        });

    let mut sampler_ok = true;
    for n in 1..=200usize {
        for k in 1..=10usize {
            let plan = plan_segments(n, k).unwrap();
            sampler_ok &= plan.boundaries.len() == k
                && plan.boundaries[0].start == 0
                && plan.boundaries[k - 1].end == n
                && plan.boundaries.windows(2).all(|w| w[0].end == w[1].start);
            for seed in 0..3u64 {
                let s = sample_training(n, k, &mut stream(seed, &[n as u64, k as u64])).unwrap();
                sampler_ok &=
                    s.len() == k && s.iter().all(|&i| i < n) && s.windows(2).all(|w| w[0] <= w[1]);
                if n >= k {
                    sampler_ok &= s.iter().zip(&plan.boundaries).all(|(i, r)| r.contains(i));
                }
                sampler_ok &=
                    s == sample_training(n, k, &mut stream(seed, &[n as u64, k as u64])).unwrap();
            }
        }
    }

    let names: Vec<String> = (1..=25).map(|i| format!("S{i:03}")).collect();
    let plan = build_folds_from_subjects(names.iter().map(String::as_str), 10).unwrap();
    let sizes = plan.fold_sizes();
    let folds_ok = sizes == [3, 3, 3, 3, 3, 2, 2, 2, 2, 2]
        && names.iter().all(|s| plan.fold_of(s).is_some())
        && (0..10).map(|f| plan.subjects_in(f).len()).sum::<usize>() == 25;
    check(
        ck_ok && afew_ok && sampler_ok && folds_ok,
        format!("schedules ck+ {ck_ok} afew {afew_ok}; sampler n<=200 K<=10 {sampler_ok}; fold sizes {sizes:?}"),
    )
}

fn format_round_trips() -> Verdict {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let ds: Dataset64 = synth_generate(&SynthConfig {
        videos_per_class: 5,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = ds.cast::<f32>().unwrap().cast::<f64>().unwrap();
    let path = dir.path().join("d.fanf");
    write_feature_file(&ds, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let back: Dataset64 = load_feature_file(&path).unwrap();
    let fanf_ok = back == ds && encode_feature_bytes(&back).unwrap() == bytes;

    let mut bad = bytes.clone();
    bad[0] = b'X';
    let fanf_magic = matches!(decode_feature_bytes::<f64>(&bad), Err(FanError::Format(_)));
    let fanf_trunc = matches!(
        decode_feature_bytes::<f64>(&bytes[..10]),
        Err(FanError::Format(_))
    );
    let mut nan = bytes.clone();
    let end = nan.len();
    nan[end - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    let fanf_nan = matches!(decode_feature_bytes::<f64>(&nan), Err(FanError::Data(_)));

    let mut rng = stream(0xacce, &[7]);
    let mut fanp_ok = true;
    for mode in [Mode::Full, Mode::SelfOnly] {
        let p = random_head(&mut rng, 6, 3, mode);
        let ck = dir.path().join("p.fanp");
        write_checkpoint(&p, &ck).unwrap();
        let back: FanParams64 = read_checkpoint(&ck).unwrap();
        let flat_bits =
            |q: &FanParams64| q.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        fanp_ok &= back.mode == mode
            && flat_bits(&back) == flat_bits(&p)
            && encode_checkpoint(&back).unwrap() == std::fs::read(&ck).unwrap();
    }
    let good = encode_checkpoint(&random_head(&mut rng, 4, 2, Mode::Full)).unwrap();
    let mut bad = good.clone();
    bad[1] = b'X';
    let fanp_magic = matches!(decode_checkpoint::<f64>(&bad), Err(FanError::Format(_)));
    let fanp_trunc = matches!(
        decode_checkpoint::<f64>(&good[..12]),
        Err(FanError::Format(_))
    );
    let mut nan = good.clone();
    nan[20..28].copy_from_slice(&f64::NAN.to_le_bytes());
    let fanp_nan = matches!(decode_checkpoint::<f64>(&nan), Err(FanError::Data(_)));

    let all = [
        fanf_ok, fanf_magic, fanf_trunc, fanf_nan, fanp_ok, fanp_magic, fanp_trunc, fanp_nan,
    ];
    check(
        all.iter().all(|&b| b),
        format!(
            "FANF round-trip {fanf_ok}, magic {fanf_magic}, header {fanf_trunc}, NaN {fanf_nan}; \
             FANP round-trip {fanp_ok}, magic {fanp_magic}, header {fanp_trunc}, NaN {fanp_nan}"
        ),
    )
}

fn run_fan(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fan"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "fan {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn determinism() -> Verdict {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let data = p("synth.fanf");
    run_fan(&["synth", "--out", &data])?;
    for run in ["a", "b"] {
        run_fan(&[
            "train",
            "--data",
            &data,
            "--out",
            &p(&format!("{run}.fanp")),
            "--preset",
            "synth-default",
            "--seed",
            "7",
        ])?;
    }
    let read = |name: &str| std::fs::read(Path::new(&p(name))).unwrap_or_default();
    let ckpt = !read("a.fanp").is_empty() && read("a.fanp") == read("b.fanp");
    let hist = !read("a.fanp.history.json").is_empty()
        && read("a.fanp.history.json") == read("b.fanp.history.json");
    check(
        ckpt && hist,
        format!("checkpoints identical {ckpt}, histories identical {hist}"),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let runs: Vec<SeedOutcome> = (0..5).map(planted_peak_seed).collect();
    let experiment_time = start.elapsed();

    let results = [
        ("gradient correctness", gradient_correctness()),
        ("oracle equivalence", oracle_equivalence()),
        ("symmetry suite", symmetry_suite()),
        (
            "synthetic planted-peak experiment",
            synthetic_experiment(&runs, experiment_time),
        ),
        ("attention localization", attention_localization(&runs)),
        ("protocol fidelity", protocol_fidelity()),
        ("format round-trips", format_round_trips()),
        ("training determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, verdict)) in results.iter().enumerate() {
        match verdict {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
