//! The ten acceptance criteria, each reported as one PASS/FAIL line.
//!
//! Run with `cargo test -p waterfall-cli --test acceptance -- --nocapture`.

mod common;

use std::fs;
use std::io::Write;
use std::time::{Duration, Instant};

use common::*;
use sha2::{Digest, Sha256};
use waterfall_core::attacks::AttackKind;
use waterfall_core::corpus::CorpusRecord;
use waterfall_core::eval::{
    default_jobs, run_extraction_sweep, run_robustness_sweep, run_scalability_check, run_verifiability_sweep,
    sub_seed, AttackSpec, Desk, ExperimentConfig, ExperimentKind, ProviderSpec,
};
use waterfall_core::extract::{extract_kp, extract_kp_direct, key_scores, key_scores_direct};
use waterfall_core::keying::splitmix::SplitMix64;
use waterfall_core::keying::{apply_inverse_permutation, apply_permutation, Permutation, Permuter};
use waterfall_core::verify::{count_tokens, scan_corpus, CountProvenance, Verifier};
use waterfall_core::{
    perturb_logits, Backend, CountVector, Family, PermKey, PerturbationBasis, TokenId, WatermarkId,
};

struct Outcome {
    pass: bool,
    detail: String,
    /// Set when the criterion cannot be met on this host's hardware.
    hardware_limited: bool,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self {
            pass,
            detail,
            hardware_limited: false,
        }
    }
}

fn report(n: usize, name: &str, o: &Outcome) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{verdict} criterion {n:>2} ({name}): {}", o.detail).unwrap();
    out.flush().unwrap();
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn permutation_algebra() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(1);
    let mut exact = 0;
    for case in 0..1000 {
        let size = 1 + rng.below(500) as usize;
        let backend = if case % 2 == 0 { Backend::FisherYates } else { Backend::FeistelPrp };
        let p = Permuter::with_cache_capacity(backend, size, 0).permutation(PermKey(rng.next_u64()));
        let vec: Vec<f64> = (0..size).map(|_| rng.next_u64() as f64 / u64::MAX as f64 - 0.5).collect();
        let back = apply_inverse_permutation(&p, &apply_permutation(&p, &vec).unwrap()).unwrap();
        exact += (back == vec) as usize;
    }
    let mut sum = [0.0f64; 3];
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for f in perms {
        let p = Permutation::from_forward(f.to_vec()).unwrap();
        for (s, x) in sum.iter_mut().zip(apply_permutation(&p, &[3.0, 2.0, 1.0]).unwrap()) {
            *s += x;
        }
    }
    let avg = sum.map(|s| s / 6.0);
    let elapsed = start.elapsed();
    Outcome::new(
        exact == 1000 && avg == [2.0, 2.0, 2.0] && elapsed < Duration::from_secs(1),
        format!("{exact}/1000 exact round trips, toy average {avg:?}, {}", secs(elapsed)),
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Zero mean for every key; orthogonality of all pairs at 64 and 1024 and
/// of every key against a cos/alternating/sin panel at 32768.
fn basis_correctness() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    for v in [64usize, 1024, 32768] {
        let tol = 1e-9 * v as f64;
        let b = PerturbationBasis::new(Family::Fourier, v).unwrap();
        if v <= 1024 {
            let all: Vec<Vec<f64>> = b.keys().map(|k| b.vector(k).unwrap().values.clone()).collect();
            for (i, a) in all.iter().enumerate() {
                if a.iter().sum::<f64>().abs() > tol || all[i + 1..].iter().any(|c| dot(a, c).abs() > tol) {
                    failures.push(format!("fourier v={v} k={}", i + 1));
                }
            }
        } else {
            let panel: Vec<(u64, Vec<f64>)> = [1, v as u64 / 2, v as u64 - 1]
                .into_iter()
                .map(|k| (k, b.vector(k).unwrap().values.clone()))
                .collect();
            for k in b.keys() {
                let phi = b.vector(k).unwrap();
                let bad_pair = panel.iter().any(|(l, p)| *l != k && dot(&phi.values, p).abs() > tol);
                if phi.values.iter().sum::<f64>().abs() > tol || bad_pair {
                    failures.push(format!("fourier v={v} k={k}"));
                }
            }
        }
        let sq = PerturbationBasis::new(Family::Square, v).unwrap();
        let all: Vec<Vec<f64>> = sq.keys().map(|k| sq.vector(k).unwrap().values.clone()).collect();
        for (i, a) in all.iter().enumerate() {
            if a.iter().sum::<f64>() != 0.0 || all[i + 1..].iter().any(|c| dot(a, c) != 0.0) {
                failures.push(format!("square v={v} k={}", i + 1));
            }
        }
    }
    let f4 = PerturbationBasis::new(Family::Fourier, 4).unwrap();
    let f4_expected = [vec![0.0, -1.0, 0.0, 1.0], vec![-1.0, 1.0, -1.0, 1.0], vec![1.0, 0.0, -1.0, 0.0]];
    if (1..=3).zip(&f4_expected).any(|(k, e)| &f4.vector(k).unwrap().values != e) {
        failures.push("hand-derived fourier |V|=4".into());
    }
    let s8 = PerturbationBasis::new(Family::Square, 8).unwrap();
    let s8_k1 = vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 1.0];
    let s8_k4 = vec![1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0];
    if s8.vector(1).unwrap().values != s8_k1 || s8.vector(4).unwrap().values != s8_k4 {
        failures.push("hand-derived square |V|=8".into());
    }
    let elapsed = start.elapsed();
    Outcome::new(
        failures.is_empty() && elapsed < Duration::from_secs(10),
        format!("{} failures {:?}, {}", failures.len(), failures.iter().take(3).collect::<Vec<_>>(), secs(elapsed)),
    )
}

fn fused_form() -> Outcome {
    let mut rng = SplitMix64::new(3);
    let mut equal = 0;
    for case in 0..100 {
        let (family, size) = if case % 2 == 0 {
            (Family::Fourier, 2 + rng.below(300) as usize)
        } else {
            (Family::Square, 4 * (1 + rng.below(60) as usize))
        };
        let basis = PerturbationBasis::new(family, size).unwrap();
        let (lo, hi) = basis.key_range().unwrap();
        let k_p = lo + rng.below(hi - lo + 1);
        let kappa = rng.below(1000) as f64 / 100.0;
        let key = PermKey(rng.next_u64());
        let logits: Vec<f64> = (0..size).map(|_| rng.next_u64() as f64 / 1e18).collect();
        let permuter = Permuter::new(if case % 4 < 2 { Backend::FisherYates } else { Backend::FeistelPrp }, size);
        let p = permuter.permutation(key);
        let phi = basis.vector(k_p).unwrap();
        let moved: Vec<f64> = apply_permutation(&p, &logits)
            .unwrap()
            .iter()
            .zip(&phi.values)
            .map(|(l, f)| l + kappa * f)
            .collect();
        let literal = apply_inverse_permutation(&p, &moved).unwrap();
        let fused = perturb_logits(&logits, key, k_p, kappa, &basis, &permuter).unwrap();
        equal += fused.iter().zip(&literal).all(|(a, b)| a.to_bits() == b.to_bits()) as usize;
    }
    Outcome::new(equal == 100, format!("{equal}/100 cases bit-identical"))
}

/// Key derivation and shuffle written out from their definitions.
fn oracle_counts(tokens: &[TokenId], mu: &[u8], n: usize, size: usize) -> Vec<u64> {
    let mut counts = vec![0u64; size];
    for j in (n - 1)..tokens.len() {
        let mut input = (mu.len() as u64).to_be_bytes().to_vec();
        input.extend_from_slice(mu);
        for &t in &tokens[j + 1 - n..j] {
            input.extend_from_slice(&t.to_be_bytes());
        }
        let key = u64::from_be_bytes(Sha256::digest(&input)[..8].try_into().unwrap());
        let mut state = key;
        let mut next = || {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        let mut forward: Vec<usize> = (0..size).collect();
        for i in (1..size).rev() {
            let bound = i as u128 + 1;
            let limit = (1u128 << 64) - (1u128 << 64) % bound;
            let r = loop {
                let r = next() as u128;
                if r < limit {
                    break r;
                }
            };
            forward.swap(i, (r % bound) as usize);
        }
        counts[forward[tokens[j] as usize]] += 1;
    }
    counts
}

fn verifier_oracle() -> Outcome {
    let mut rng = SplitMix64::new(4);
    let permuter = Permuter::new(Backend::FisherYates, 16);
    let mut equal = 0;
    for _ in 0..50 {
        let n = 1 + rng.below(3) as usize;
        let len = n + rng.below(21 - n as u64) as usize;
        let tokens: Vec<TokenId> = (0..len).map(|_| rng.below(16) as TokenId).collect();
        let mu: Vec<u8> = (0..rng.below(6)).map(|_| rng.below(256) as u8).collect();
        let c = count_tokens(&tokens, &WatermarkId::from_bytes(mu.clone()), n, &permuter).unwrap();
        equal += (c.counts == oracle_counts(&tokens, &mu, n, 16)) as usize;
    }
    Outcome::new(equal == 50, format!("{equal}/50 instances match the independent oracle"))
}

fn config(desk_spec: &ProviderSpec) -> ExperimentConfig {
    ExperimentConfig {
        provider: desk_spec.clone(),
        jobs: Some(default_jobs()),
        ..ExperimentConfig::default()
    }
}

fn verifiability(desk: &Desk, spec: &ProviderSpec) -> Outcome {
    let start = Instant::now();
    let report = run_verifiability_sweep(&config(spec), desk).unwrap();
    let aurocs: Vec<f64> = report.cells.iter().map(|c| c.auroc.unwrap()).collect();
    let inversions = aurocs.windows(2).filter(|w| w[1] < w[0]).count();
    let elapsed = start.elapsed();
    Outcome::new(
        aurocs[3] >= 0.95
            && (0.4..=0.6).contains(&aurocs[0])
            && inversions <= 1
            && elapsed < Duration::from_secs(600),
        format!(
            "AUROC at kappa 0/2/4/6 = {:.3}/{:.3}/{:.3}/{:.3}, {inversions} inversions, {} on {} threads",
            aurocs[0],
            aurocs[1],
            aurocs[2],
            aurocs[3],
            secs(elapsed),
            default_jobs()
        ),
    )
}

fn robustness(desk: &Desk, spec: &ProviderSpec) -> Outcome {
    let mut c = config(spec);
    c.experiment = ExperimentKind::Robustness;
    c.kappas = vec![6.0];
    c.attacks = vec![
        AttackSpec::new(AttackKind::Delete, 0.2),
        AttackSpec::new(AttackKind::Substitute, 0.2),
        AttackSpec::new(AttackKind::Overlap, 0.2),
    ];
    let report = run_robustness_sweep(&c, desk).unwrap();
    let find = |prefix: &str| {
        report
            .cells
            .iter()
            .find(|cell| cell.attack.as_deref().is_some_and(|a| a.starts_with(prefix)))
            .unwrap()
    };
    let (del, sub, ovl) = (find("delete"), find("substitute"), find("overlap"));
    let clean = del.auroc_clean.unwrap();
    let (d, s, o) = (del.auroc.unwrap(), sub.auroc.unwrap(), ovl.auroc.unwrap());
    Outcome::new(
        clean - d <= 0.10 && s >= 0.85 && o >= 0.70 && (o - 0.815).abs() <= 0.1,
        format!(
            "clean {clean:.3}, delete 20% {d:.3}, substitute 20% {s:.3}, overlap {o:.3} (second id {:.3})",
            ovl.auroc_second.unwrap_or(f64::NAN)
        ),
    )
}

fn scalability(desk: &Desk, spec: &ProviderSpec) -> Outcome {
    let mut c = config(spec);
    c.kappas = vec![6.0];
    c.trials = 100;
    let r = run_scalability_check(&c, desk, 1000).unwrap();
    Outcome::new(
        r.auroc_p1 >= 0.90 && r.wrong_mean_z.abs() <= 3.0,
        format!(
            "1000 wrong ids x {} streams: p1 AUROC {:.3}, min {:.3}, wrong-id mean z {:.2}",
            c.trials, r.auroc_p1, r.auroc_min, r.wrong_mean_z
        ),
    )
}

fn extraction(desk: &Desk, spec: &ProviderSpec) -> Outcome {
    let mut rng = SplitMix64::new(8);
    let b = PerturbationBasis::new(Family::Fourier, 1024).unwrap();
    let mut agree = 0;
    for _ in 0..100 {
        let counts: Vec<u64> = (0..1024).map(|_| rng.below(30) + 1).collect();
        let cv = CountVector {
            n_counted: counts.iter().sum(),
            counts,
            provenance: CountProvenance {
                mu: WatermarkId::from_u64(0),
                n: 2,
                backend: Backend::FisherYates,
            },
        };
        let fast = key_scores(&cv, &b).unwrap();
        let slow = key_scores_direct(&cv, &b).unwrap();
        let same = extract_kp(&cv, &b).unwrap().k_p_hat == extract_kp_direct(&cv, &b).unwrap().k_p_hat
            && fast.iter().zip(&slow).all(|(x, y)| (x - y).abs() <= 1e-9);
        agree += same as usize;
    }
    let v = 64;
    let seven: Vec<u64> = (1..=v)
        .map(|j| ((1.0 + 0.5 * (std::f64::consts::TAU * 7.0 * j as f64 / v as f64).cos()) * 1000.0).round() as u64)
        .collect();
    let seven = CountVector {
        n_counted: seven.iter().sum(),
        counts: seven,
        provenance: CountProvenance {
            mu: WatermarkId::from_u64(0),
            n: 1,
            backend: Backend::FisherYates,
        },
    };
    let k7 = extract_kp(&seven, &PerturbationBasis::new(Family::Fourier, v).unwrap()).unwrap().k_p_hat;

    let mut c = config(spec);
    c.experiment = ExperimentKind::Extraction;
    c.kappas = vec![0.1, 0.25, 0.5, 1.0, 2.0];
    c.trials = 100;
    let r = run_extraction_sweep(&c, desk).unwrap();
    let acc = |k: f64, m: usize| r.accuracy(k, m).unwrap();
    let monotone_m = c.kappas.iter().all(|&k| acc(k, 1) <= acc(k, 3) && acc(k, 3) <= acc(k, 5));
    let monotone_kappa = [1, 3, 5].iter().all(|&m| c.kappas.windows(2).all(|w| acc(w[0], m) <= acc(w[1], m)));
    // Mid kappa: where a single text is extracted about half the time.
    let mid = *c
        .kappas
        .iter()
        .min_by(|a, b| (acc(**a, 1) - 0.5).abs().total_cmp(&(acc(**b, 1) - 0.5).abs()))
        .unwrap();
    let gain = acc(mid, 5) - acc(mid, 1);
    let grid: Vec<String> = c
        .kappas
        .iter()
        .map(|&k| format!("{k}:{:.2}/{:.2}/{:.2}", acc(k, 1), acc(k, 3), acc(k, 5)))
        .collect();
    Outcome::new(
        agree == 100 && k7 == 7 && monotone_m && monotone_kappa && gain >= 0.10,
        format!(
            "fft=direct {agree}/100, freq-7 -> {k7}, accuracy m=1/3/5 [{}], mid kappa {mid} gain {:+.2}",
            grid.join(" "),
            gain
        ),
    )
}

fn performance() -> Outcome {
    let v = 32768;
    let mut rng = SplitMix64::new(9);
    let tokens: Vec<TokenId> = (0..400).map(|_| rng.below(v as u64) as TokenId).collect();
    let verifier = Verifier::new(Family::Fourier, Backend::FisherYates, 2, v).unwrap();
    let mu = WatermarkId::from_u64(9);
    verifier.score(&tokens, &mu, 1).unwrap();
    let mut times: Vec<Duration> = (0..21)
        .map(|_| {
            let t = Instant::now();
            verifier.score(&tokens, &mu, 1).unwrap();
            t.elapsed()
        })
        .collect();
    times.sort();
    let warm = times[times.len() / 2];

    let records: Vec<_> = (0..1000)
        .map(|i| {
            let mut r = SplitMix64::new(sub_seed(9, "scan", i));
            Ok(CorpusRecord::tokens(format!("r{i}"), (0..400).map(|_| r.below(4096) as TokenId).collect()))
        })
        .collect();
    let ids = [(WatermarkId::from_u64(1), 1)];
    let scan = |jobs: usize| {
        let verifier = Verifier::new(Family::Fourier, Backend::FisherYates, 2, 4096).unwrap();
        let mut out = Vec::new();
        let t = Instant::now();
        scan_corpus(&records, &ids, &verifier, None, 0.01, jobs, |e| out.push(e.to_json())).unwrap();
        (t.elapsed(), out)
    };
    let (t1, out1) = scan(1);
    let (t8, out8) = scan(8);
    let speedup = t1.as_secs_f64() / t8.as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let identical = out1 == out8;
    let warm_ok = warm <= Duration::from_millis(50);
    Outcome {
        pass: warm_ok && identical && speedup >= 3.0,
        detail: format!(
            "warm verify {:.3} ms, scan 1000x400 jobs=1 {} vs jobs=8 {} (speedup {speedup:.2}x on {cores} cores), outputs identical: {identical}",
            warm.as_secs_f64() * 1e3,
            secs(t1),
            secs(t8)
        ),
        hardware_limited: warm_ok && identical && speedup < 3.0 && cores < 8,
    }
}

fn cli_determinism() -> Outcome {
    let f = Fixture::new();
    let model2 = f.path("model2.json");
    let retrain = waterfall(&["train", "--vocab-size", "1024", "-o", s(&model2)]);
    let mut checked = vec![("train", fs::read(&f.model).unwrap() == fs::read(&model2).unwrap() && code(&retrain) == 0)];
    let src = f.sources("src.jsonl", 8);
    let (a, ma) = f.watermark(&src, "a", "00ff", "6", "5");
    let (b, mb) = f.watermark(&src, "b", "00ff", "6", "5");
    checked.push(("watermark", fs::read(&a).unwrap() == fs::read(&b).unwrap() && fs::read(&ma).unwrap() == fs::read(&mb).unwrap()));
    let (null, _) = f.watermark(&f.sources("null-src.jsonl", 100), "null", "0abc", "0", "6");
    let threshold = format!("fpr:0.01@{}", s(&null));
    let ids = f.path("ids.jsonl");
    fs::write(&ids, "{\"mu\":\"00ff\",\"k_p\":1}\n{\"mu\":\"0123\",\"k_p\":2}\n").unwrap();
    let config = f.path("eval.json");
    fs::write(&config, r#"{"provider":{"kind":"model","path":"model.json"},"kappas":[0,6],"trials":30,"lengths":[100],"seed":3}"#).unwrap();
    let common = ["--manifest", s(&ma), "--model", s(&f.model)];
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("verify", [&["verify", "-i", s(&a), "--threshold", &threshold][..], &common].concat()),
        ("extract", [&["extract", "-i", s(&a), "--combine"][..], &common].concat()),
        ("scan", [&["scan", "-i", s(&a), "--ids", s(&ids), "--threshold", "0.01", "--jobs", "4"][..], &common].concat()),
        ("calibrate", [&["calibrate", "--null", s(&null)][..], &common].concat()),
        ("attack insert", vec!["attack", "--kind", "insert", "-i", s(&a), "--model", s(&f.model), "--seed", "4"]),
        ("attack delete", vec!["attack", "--kind", "delete", "-i", s(&a), "--model", s(&f.model), "--seed", "4"]),
        ("attack substitute", vec!["attack", "--kind", "substitute", "-i", s(&a), "--model", s(&f.model), "--seed", "4"]),
        ("attack overlap", vec!["attack", "--kind", "overlap", "-i", s(&a), "--model", s(&f.model), "--mu", "0bad", "--seed", "4", "--ignore-eos"]),
        ("eval", vec!["eval", "--config", s(&config), "--jobs", "2"]),
    ];
    for (name, args) in &runs {
        let (x, y) = (waterfall(args), waterfall(args));
        checked.push((name, code(&x) == 0 && x.stdout == y.stdout && !x.stdout.is_empty()));
    }
    let failed: Vec<&str> = checked.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    Outcome::new(
        failed.is_empty(),
        format!("{} invocations reproduced byte for byte, failed: {failed:?}", checked.len()),
    )
}

#[test]
fn acceptance() {
    let spec = ProviderSpec::toy(1024);
    let desk = Desk::from_spec(&spec).unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("permutation algebra", Box::new(permutation_algebra)),
        ("basis correctness", Box::new(basis_correctness)),
        ("fused form", Box::new(fused_form)),
        ("verifier oracle", Box::new(verifier_oracle)),
        ("verifiability", Box::new(|| verifiability(&desk, &spec))),
        ("robustness", Box::new(|| robustness(&desk, &spec))),
        ("scalability", Box::new(|| scalability(&desk, &spec))),
        ("extraction", Box::new(|| extraction(&desk, &spec))),
        ("performance", Box::new(performance)),
        ("cli determinism", Box::new(cli_determinism)),
    ];
    let mut unexplained = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = run();
        report(i + 1, name, &outcome);
        if !outcome.pass && !outcome.hardware_limited {
            unexplained.push(i + 1);
        }
    }
    assert!(unexplained.is_empty(), "failed criteria: {unexplained:?}");
}
