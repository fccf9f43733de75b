// Acceptance suite: one PASS/FAIL line per criterion, details indented.
// Run with `cargo test --release --test acceptance`.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, StudentsT};

use gcafuse::alignment::{
    build_aligned_pair, classify_pause, detect_pauses, AlignOptions, FrameStream, HashEmbedder, Label,
    PauseCategory, TokenKind, Tokenizer, Transcript, Word,
};
use gcafuse::explain::{corpus_stats, integrate_path, integrated_gradients, LinearFunction, PathGrid};
use gcafuse::io::AlignSettings;
use gcafuse::model::{
    gated_residual, model_gradcheck, Bound, FusionModel, FusionStrategy, Linear, ModelConfig, Pooling, Trace,
};
use gcafuse::synth::{align_cohort, generate_synthetic_cohort, SynthSpec};
use gcafuse::tensor::{check_gradients, op_gradcheck_suite, Fault, GradCheckOptions, OpKind, Tape, Tensor};
use gcafuse::train::{cross_validate, fit, make_splits, paired_t_test, EvalReport, Protocol, TrainConfig};

struct Outcome {
    pass: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            pass: true,
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: impl Into<String>) {
        let line = line.into();
        self.pass &= ok;
        self.details.push(if ok { line } else { format!("{line}  <-- failed") });
    }

    fn note(&mut self, line: impl Into<String>) {
        self.details.push(line.into());
    }
}

type Criterion = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("gradient correctness", gradients),
        ("gated residual, gates and attention rows", gating_and_attention),
        ("alignment oracle equivalence", alignment_oracle),
        ("pause semantics", pause_semantics),
        ("synthetic learnability", learnability),
        ("prosody ablation direction", ablation),
        ("integrated-gradients completeness", ig_completeness),
        ("statistics harness", statistics),
        ("determinism", determinism),
        ("corpus-stats direction", corpus_direction),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let out = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome {
                pass: false,
                details: vec![format!("panicked: {msg}")],
            }
        });
        let status = if out.pass { "PASS" } else { "FAIL" };
        println!("{status} {name} ({:.1} s)", t0.elapsed().as_secs_f64());
        for d in &out.details {
            println!("    {d}");
        }
        if !out.pass {
            failed += 1;
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn random_pair(seed: u64, dim: usize, len: usize) -> gcafuse::alignment::AlignedPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mat = |r: usize| -> Tensor<f32> {
        let data = (0..r * dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        Tensor::new(vec![r, dim], data).unwrap()
    };
    let (audio, text) = (mat(len), mat(len));
    let tokens = (0..len)
        .map(|i| gcafuse::alignment::AlignedToken {
            text: format!("w{i}"),
            kind: TokenKind::Word,
            word: Some(i),
        })
        .collect();
    let label = if seed.is_multiple_of(2) { Label::HealthyControl } else { Label::Alzheimers };
    gcafuse::alignment::AlignedPair::new(format!("S{seed}"), Some(label), Some(25.0), tokens, audio, text).unwrap()
}

fn gradients() -> Outcome {
    let mut out = Outcome::new();
    let t0 = Instant::now();
    let opts = GradCheckOptions::default();
    let mut op_worst = (0.0f64, "");
    let mut model_worst = 0.0f64;
    let mut all_ok = true;
    for seed in 0..10 {
        for (name, r) in op_gradcheck_suite(seed, &opts, None).unwrap() {
            all_ok &= r.passed();
            if r.max_rel_error() > op_worst.0 {
                op_worst = (r.max_rel_error(), name);
            }
        }
        let cfg = ModelConfig { seed, ..ModelConfig::desk() };
        let pair = random_pair(seed, cfg.input_dim, 5 + seed as usize % 4);
        let r = model_gradcheck(&cfg, &pair, &GradCheckOptions { max_coords: Some(8), seed, ..opts.clone() }).unwrap();
        all_ok &= r.passed();
        model_worst = model_worst.max(r.max_rel_error());
    }
    let elapsed = t0.elapsed().as_secs_f64();
    out.check(op_worst.0 < 1e-4, format!("24 ops x 10 seeds: max relative error {:.3e} ({})", op_worst.0, op_worst.1));
    out.check(model_worst < 1e-4 && all_ok, format!("full gated cross-attention model x 10 seeds: max relative error {model_worst:.3e}"));
    out.check(elapsed < 60.0, format!("suite runtime {elapsed:.1} s (limit 60 s)"));

    // negative control: a 1% error in the softmax backward must be caught
    let cfg = ModelConfig { dropout_rate: 0.0, ..ModelConfig::desk() };
    let m = FusionModel::<f64>::new(cfg).unwrap();
    let pair = random_pair(99, 64, 6);
    let params: Vec<(String, Tensor<f64>)> = m.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let faulty = check_gradients(
        &params,
        |tape, vars| {
            tape.inject_fault(Fault { op: OpKind::Softmax, factor: 1.01 });
            let bound = Bound { vars: vars.to_vec(), layout: m.layout().map(&|i| vars[i]) };
            let o = m.forward_pair(tape, &bound, &pair, false, &mut Trace::default())?;
            m.sample_loss(tape, o, &pair)
        },
        &GradCheckOptions { max_coords: Some(8), ..opts },
    )
    .unwrap();
    out.check(!faulty.passed(), format!("negative control (softmax backward x1.01) detected: max relative error {:.3e}", faulty.max_rel_error()));
    out
}

fn gating_and_attention() -> Outcome {
    let mut out = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_identity = 0.0f64;
    for _ in 0..20 {
        let (l, d) = (rng.random_range(1..12), rng.random_range(1..33));
        let mut mat = |r: usize, c: usize| -> Tensor<f64> {
            Tensor::new(vec![r, c], (0..r * c).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0).collect()).unwrap()
        };
        let (h, a) = (mat(l, d), mat(l, d));
        let mut tape = Tape::<f64>::new();
        let hv = tape.constant(h.clone());
        let av = tape.constant(a.clone());
        let gate = Linear {
            w: tape.constant(Tensor::zeros(vec![d, d])),
            b: tape.constant(Tensor::zeros(vec![d])),
        };
        let y = gated_residual(&mut tape, hv, av, &gate, &mut Trace::default()).unwrap();
        for ((yv, hv), av) in tape.value(y).data().iter().zip(h.data()).zip(a.data()) {
            worst_identity = worst_identity.max((yv - (hv + av) / 2.0).abs());
        }
    }
    out.check(worst_identity < 1e-6, format!("W_g = 0, b_g = 0 gives (H + A)/2: max deviation {worst_identity:.2e} over 20 random cases"));

    let mut worst_row = 0.0f64;
    let mut gate_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut gates_seen = 0usize;
    let mut matrices = 0usize;
    let mut per_strategy = Vec::new();
    for fusion in FusionStrategy::ALL {
        let mut strategy_worst = 0.0f64;
        for (k, pooling) in [Pooling::Mean, Pooling::Cls, Pooling::GatedAttn].into_iter().enumerate() {
            let cfg = ModelConfig { fusion, pooling, seed: k as u64, ..ModelConfig::desk() };
            let model = FusionModel::<f32>::new(cfg).unwrap();
            let pair = random_pair(k as u64 + 3, 64, 4 + 3 * k);
            let mut tape = Tape::<f32>::new();
            let bound = model.bind(&mut tape, false);
            let mut trace = Trace::default();
            model.forward_pair(&mut tape, &bound, &pair, false, &mut trace).unwrap();
            for &m in trace.attention.iter().chain(&trace.pool_weights) {
                matrices += 1;
                let v = tape.value(m);
                for r in 0..v.rows() {
                    let s: f64 = v.row(r).iter().map(|&x| x as f64).sum();
                    strategy_worst = strategy_worst.max((s - 1.0).abs());
                }
            }
            for &g in &trace.gates {
                for &x in tape.value(g).data() {
                    gates_seen += 1;
                    gate_range = (gate_range.0.min(x as f64), gate_range.1.max(x as f64));
                }
            }
        }
        worst_row = worst_row.max(strategy_worst);
        per_strategy.push(format!("{}={strategy_worst:.1e}", fusion.short_name()));
    }
    out.check(
        worst_row < 1e-6,
        format!("attention rows sum to 1: max deviation {worst_row:.2e} over {matrices} matrices, 9 strategies x 3 poolings"),
    );
    out.note(format!("per strategy: {}", per_strategy.join(" ")));
    out.check(
        gates_seen > 0 && gate_range.0 > 0.0 && gate_range.1 < 1.0,
        format!("{gates_seen} gate values, range [{:.4}, {:.4}] strictly inside (0, 1)", gate_range.0, gate_range.1),
    );
    out
}

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

/// Ground truth for one random case, computed without the library.
struct OracleCase {
    transcript: Transcript,
    stream: FrameStream,
    pieces: Vec<Vec<String>>,
    /// Integer milliseconds of each word.
    ms: Vec<(i64, i64)>,
    pretokenized: bool,
    pauses: bool,
}

fn random_case(rng: &mut ChaCha8Rng, i: usize) -> OracleCase {
    let n_words = rng.random_range(1..16);
    let mut ms = Vec::new();
    let mut t = rng.random_range(0..400i64);
    for _ in 0..n_words {
        let len = if rng.random_bool(0.15) { rng.random_range(1..15) } else { rng.random_range(15..700) };
        ms.push((t, t + len));
        let gap = match rng.random_range(0..5) {
            0 => 0,
            1 => rng.random_range(0..500),
            2 => rng.random_range(490..1010),
            3 => rng.random_range(990..1510),
            _ => rng.random_range(1490..2600),
        };
        t += len + gap;
    }
    let mut pieces = Vec::new();
    let words: Vec<Word> = ms
        .iter()
        .map(|&(s, e)| {
            let len = rng.random_range(1..9);
            let text: String = (0..len).map(|_| LETTERS[rng.random_range(0..26)] as char).collect();
            let cuts = rng.random_range(0..3usize).min(len - 1);
            let mut at: Vec<usize> = (1..len).collect();
            at.shuffle(rng);
            let mut at: Vec<usize> = at.into_iter().take(cuts).collect();
            at.sort();
            let mut prev = 0;
            let mut p = Vec::new();
            for c in at.into_iter().chain([len]) {
                p.push(text[prev..c].to_string());
                prev = c;
            }
            pieces.push(p);
            Word::new(text, s as f64 / 1000.0, e as f64 / 1000.0)
        })
        .collect();
    let stride = [0.01, 0.02, 0.025, 1.0 / 30.0][rng.random_range(0..4)];
    let offset = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.03) };
    let end = ms.last().unwrap().1 as f64 / 1000.0;
    let coverage = if rng.random_bool(0.2) { rng.random_range(0.3..1.0) } else { 1.05 };
    let n_frames = (((end * coverage - offset) / stride).ceil().max(1.0)) as usize;
    let dim = rng.random_range(1..9);
    let data = (0..n_frames * dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    let stream = FrameStream::new(stride, offset, Tensor::new(vec![n_frames, dim], data).unwrap()).unwrap();
    let (transcript, _) = Transcript::new(format!("R{i}"), words, Some(Label::HealthyControl), None).unwrap();
    OracleCase {
        transcript,
        stream,
        pieces,
        ms,
        pretokenized: rng.random_bool(0.7),
        pauses: rng.random_bool(0.8),
    }
}

fn bucket_ms(gap: i64) -> Option<&'static str> {
    match gap {
        g if g < 500 => None,
        g if g < 1000 => Some(","),
        g if g < 1500 => Some("."),
        _ => Some("..."),
    }
}

/// Frame scan over the whole stream: mean of frames with start <= t < end,
/// else the single frame nearest the midpoint (earlier on ties).
fn oracle_mean(s: &FrameStream, start: f64, end: f64) -> Vec<f64> {
    let members: Vec<usize> = (0..s.len()).filter(|&j| {
        let t = s.offset + j as f64 * s.stride;
        start <= t && t < end
    }).collect();
    let rows = if members.is_empty() {
        let mid = 0.5 * (start + end);
        let mut best = 0;
        for j in 0..s.len() {
            if (s.offset + j as f64 * s.stride - mid).abs() < (s.offset + best as f64 * s.stride - mid).abs() {
                best = j;
            }
        }
        vec![best]
    } else {
        members
    };
    let mut acc = vec![0.0; s.dim()];
    for &j in &rows {
        for (a, &v) in acc.iter_mut().zip(s.features.row(j)) {
            *a += v as f64;
        }
    }
    acc.iter().map(|a| a / rows.len() as f64).collect()
}

fn alignment_oracle() -> Outcome {
    let mut out = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut count_bad, mut text_bad, mut sub_bad, mut order_bad) = (0, 0, 0, 0);
    let mut worst_mean = 0.0f64;
    let (mut fallbacks, mut subword_words, mut pause_tokens) = (0, 0, 0);
    for i in 0..1000 {
        let c = random_case(&mut rng, i);
        let emb = HashEmbedder::new(c.stream.dim(), i as u64);
        let tokenizer = if c.pretokenized {
            Tokenizer::Pretokenized(
                c.pieces.iter().enumerate().flat_map(|(w, p)| p.iter().map(move |s| (s.clone(), w))).collect(),
            )
        } else {
            Tokenizer::WholeWord
        };
        let opts = AlignOptions { insert_pauses: c.pauses, ..AlignOptions::default() };
        let pair = build_aligned_pair(&c.transcript, &c.stream, &emb, &tokenizer, opts).unwrap();

        // expected sequence: (text, kind, audio row)
        let mut expect: Vec<(String, TokenKind, Vec<f64>, Option<usize>)> = Vec::new();
        for (w, &(s, e)) in c.ms.iter().enumerate() {
            let row = oracle_mean(&c.stream, s as f64 / 1000.0, e as f64 / 1000.0);
            if !(0..c.stream.len()).any(|j| {
                let t = c.stream.offset + j as f64 * c.stream.stride;
                s as f64 / 1000.0 <= t && t < e as f64 / 1000.0
            }) {
                fallbacks += 1;
            }
            let parts = if c.pretokenized { c.pieces[w].clone() } else { vec![c.transcript.words[w].text.clone()] };
            let kind = if parts.len() > 1 { TokenKind::Subword } else { TokenKind::Word };
            if parts.len() > 1 {
                subword_words += 1;
            }
            for p in parts {
                expect.push((p, kind, row.clone(), Some(w)));
            }
            if c.pauses && w + 1 < c.ms.len() {
                if let Some(sym) = bucket_ms(c.ms[w + 1].0 - e) {
                    pause_tokens += 1;
                    let prow = oracle_mean(&c.stream, e as f64 / 1000.0, c.ms[w + 1].0 as f64 / 1000.0);
                    expect.push((sym.to_string(), TokenKind::Pause, prow, None));
                }
            }
        }
        if pair.len() != expect.len() || pair.audio.rows() != expect.len() || pair.text.rows() != expect.len() {
            count_bad += 1;
            continue;
        }
        for (r, (text, kind, row, word)) in expect.iter().enumerate() {
            let tok = &pair.tokens[r];
            if &tok.text != text || tok.kind != *kind || tok.word != *word {
                order_bad += 1;
            }
            for (&got, &want) in pair.audio.row(r).iter().zip(row) {
                worst_mean = worst_mean.max((got as f64 - want).abs());
            }
            if pair.text.row(r).iter().map(|v| v.to_bits()).ne(emb.vector(text).iter().map(|v| v.to_bits())) {
                text_bad += 1;
            }
        }
        for r in 1..pair.len() {
            let (a, b) = (&pair.tokens[r - 1], &pair.tokens[r]);
            if a.kind == TokenKind::Subword && a.word == b.word
                && pair.audio.row(r - 1).iter().map(|v| v.to_bits()).ne(pair.audio.row(r).iter().map(|v| v.to_bits()))
            {
                sub_bad += 1;
            }
        }
    }
    out.check(count_bad == 0, format!("token counts: {count_bad} of 1000 cases differ"));
    out.check(order_bad == 0, format!("token text/kind/parent order: {order_bad} mismatching tokens"));
    out.check(worst_mean < 1e-6, format!("pooled audio rows: max deviation {worst_mean:.2e} from the frame-scan oracle"));
    out.check(sub_bad == 0, format!("subword rows of one word bitwise-equal: {sub_bad} violations"));
    out.check(text_bad == 0, format!("text rows bitwise-equal to the token embeddings: {text_bad} violations"));
    out.note(format!("coverage: {fallbacks} nearest-frame fallbacks, {subword_words} split words, {pause_tokens} pause tokens"));
    out
}

fn pause_semantics() -> Outcome {
    let mut out = Outcome::new();
    let want = |k: i64| match k {
        k if k < 50 => None,
        k if k < 100 => Some(PauseCategory::Comma),
        k if k < 150 => Some(PauseCategory::Period),
        _ => Some(PauseCategory::Ellipsis),
    };
    let (mut direct_bad, mut gap_bad) = (0, 0);
    for k in 0..=300i64 {
        if classify_pause(k as f64 / 100.0).unwrap() != want(k) {
            direct_bad += 1;
        }
        // same gap measured between two decimal timestamps
        for base in [0.37, 1.1, 12.83] {
            let end = base + 0.25;
            let words = vec![Word::new("a", base, end), Word::new("b", end + k as f64 * 0.01, end + k as f64 * 0.01 + 0.3)];
            let (t, _) = Transcript::new("P", words, None, None).unwrap();
            let got = detect_pauses(&t).first().map(|e| e.category);
            if got != want(k) {
                gap_bad += 1;
            }
        }
    }
    out.check(direct_bad == 0, format!("classify_pause on 301 durations 0.00..3.00: {direct_bad} mismatches"));
    out.check(gap_bad == 0, format!("detect_pauses on 903 timestamp pairs: {gap_bad} mismatches"));

    let mut cohorts = 0;
    let mut subjects = 0;
    let mut bad = 0;
    let mut count_bad = 0;
    for seed in 0..4 {
        for spec in [SynthSpec::planted(seed), SynthSpec::pause_only(seed), SynthSpec::zero_signal(seed)] {
            let spec = SynthSpec { n_per_class: 25, ..spec };
            let cohort = generate_synthetic_cohort(&spec).unwrap();
            for insert in [true, false] {
                let settings = AlignSettings {
                    options: AlignOptions { insert_pauses: insert, ..AlignOptions::default() },
                    text_seed: seed,
                };
                let pairs = align_cohort(&cohort, settings).unwrap();
                cohorts += 1;
                for (p, s) in pairs.iter().zip(&cohort) {
                    subjects += 1;
                    if p.validate().is_err() || p.audio.rows() != p.len() || p.text.rows() != p.len() {
                        bad += 1;
                    }
                    let planted: usize = s.truth.pauses.iter().sum();
                    let expected = if insert { planted } else { 0 };
                    if p.pause_count() != expected || p.len() != s.transcript.len() + expected {
                        count_bad += 1;
                    }
                }
            }
        }
    }
    out.check(bad == 0, format!("equal-length invariant on {cohorts} aligned cohorts ({subjects} pairs): {bad} violations"));
    out.check(count_bad == 0, format!("pause tokens equal planted pauses: {count_bad} mismatching pairs"));
    out
}

fn run_cv(spec: &SynthSpec, insert_pauses: bool, seed: u64) -> EvalReport {
    let settings = AlignSettings {
        options: AlignOptions { insert_pauses, ..AlignOptions::default() },
        text_seed: 0,
    };
    let data = align_cohort(&generate_synthetic_cohort(spec).unwrap(), settings).unwrap();
    cross_validate(&data, &ModelConfig::desk(), &TrainConfig::desk(), Protocol::KFold(5), &[seed]).unwrap()
}

fn correct_total(r: &EvalReport) -> (usize, usize) {
    let c = r.folds.iter().fold((0, 0), |(c, t), f| (c + f.confusion.correct(), t + f.confusion.total()));
    c
}

fn learnability() -> Outcome {
    let mut out = Outcome::new();
    let previous = std::env::var("CGNA_THREADS").ok();
    std::env::set_var("CGNA_THREADS", "1");
    let t0 = Instant::now();
    let planted = run_cv(&SynthSpec::planted(0), true, 0);
    let elapsed = t0.elapsed().as_secs_f64();
    match previous {
        Some(v) => std::env::set_var("CGNA_THREADS", v),
        None => std::env::remove_var("CGNA_THREADS"),
    }
    let max_epochs = planted.folds.iter().map(|f| f.epochs_run).max().unwrap_or(0);
    out.check(
        planted.aggregate.accuracy >= 95.0 && max_epochs <= 40,
        format!("planted cohort, 5-fold: accuracy {:.1}% (>= 95), at most {max_epochs} epochs per fold", planted.aggregate.accuracy),
    );
    out.note(format!(
        "fold accuracies: {}",
        planted.folds.iter().map(|f| format!("{:.1}", f.metrics.accuracy)).collect::<Vec<_>>().join(" ")
    ));
    out.check(elapsed < 300.0, format!("generation + alignment + 5 folds on one thread: {elapsed:.1} s (limit 300 s)"));

    let (mut correct, mut total) = (0, 0);
    let mut per_seed = Vec::new();
    for seed in 0..3 {
        let r = run_cv(&SynthSpec::zero_signal(seed), true, seed);
        let (c, t) = correct_total(&r);
        correct += c;
        total += t;
        per_seed.push(format!("seed {seed}: {:.1}%", r.aggregate.accuracy));
    }
    let pooled = 100.0 * correct as f64 / total as f64;
    out.check(
        (pooled - 50.0).abs() <= 5.0,
        format!("zero-signal cohort, 5-fold x 3 seeds pooled over {total} predictions: accuracy {pooled:.1}% (50 +/- 5)"),
    );
    out.note(per_seed.join(", "));
    out
}

fn ablation() -> Outcome {
    let mut out = Outcome::new();
    let (mut with, mut without) = (Vec::new(), Vec::new());
    let mut lines = Vec::new();
    for seed in 0..3 {
        let spec = SynthSpec::pause_only(seed);
        let a = run_cv(&spec, true, seed);
        let b = run_cv(&spec, false, seed);
        lines.push(format!("seed {seed}: pauses {:.1}%, stripped {:.1}%", a.aggregate.accuracy, b.aggregate.accuracy));
        with.extend(a.accuracy_samples());
        without.extend(b.accuracy_samples());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gain = mean(&with) - mean(&without);
    out.check(
        gain >= 10.0,
        format!("pause-only cohort, 5 folds x 3 seeds: {:.1}% with pauses vs {:.1}% stripped, gain {gain:.1} points (>= 10)", mean(&with), mean(&without)),
    );
    for l in lines {
        out.note(l);
    }
    let t = paired_t_test(&with, &without).unwrap();
    out.note(format!(
        "paired t-test over 15 folds: t = {}, p = {}",
        t.t.map_or("-".into(), |v| format!("{v:.2}")),
        t.p.map_or("-".into(), |v| format!("{v:.2e}"))
    ));
    out
}

fn ig_completeness() -> Outcome {
    let mut out = Outcome::new();
    let train_cfg = TrainConfig { max_epochs: 8, warmup_epochs: 2, early_stop_patience: None, ..TrainConfig::desk() };
    let mut worst = 0.0f64;
    let mut smallest_gap = f64::INFINITY;
    for seed in 0..20u64 {
        let spec = SynthSpec { n_per_class: 16, ..SynthSpec::planted(seed) };
        let data = align_cohort(&generate_synthetic_cohort(&spec).unwrap(), AlignSettings::default()).unwrap();
        let model = fit(&data[..30], &ModelConfig { seed, ..ModelConfig::desk() }, &train_cfg, seed).unwrap().model;
        let pair = &data[30 + (seed as usize % 2)];
        let map = integrated_gradients(&model, pair, None, 256, None).unwrap();
        worst = worst.max(map.relative_gap());
        smallest_gap = smallest_gap.min(map.output_gap.abs());
    }
    out.check(worst < 0.01, format!("20 trained models, 256 steps: max |sum - (F(x) - F(0))| = {:.2e} of the logit gap (< 1%)", worst));
    out.note(format!("smallest logit gap {smallest_gap:.3}"));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut lin_worst = 0.0f64;
    for _ in 0..10 {
        let (l, d) = (rng.random_range(1..20), rng.random_range(1..17));
        let mut mat = || -> Tensor<f64> {
            Tensor::new(vec![l, d], (0..l * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
        };
        let f = LinearFunction { w_audio: mat(), w_text: mat() };
        let (a, t, ba, bt) = (mat(), mat(), mat(), mat());
        for grid in [PathGrid::Uniform, PathGrid::Quadratic] {
            let pi = integrate_path(&f, &a, &t, &ba, &bt, 256, grid).unwrap();
            lin_worst = lin_worst.max(pi.completeness_gap());
        }
    }
    out.check(lin_worst <= 1e-6, format!("linear function, both grids: max completeness gap {lin_worst:.2e} (<= 1e-6)"));
    out
}

fn statistics() -> Outcome {
    let mut out = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut worst_t, mut worst_p) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(2..40);
        let shift = rng.random_range(-2.0..2.0);
        let spread = rng.random_range(0.1..5.0);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|x| x + shift + spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let got = paired_t_test(&a, &b).unwrap();
        // reference: Welford variance, statrs Student t survival function
        let (mut mean, mut m2) = (0.0, 0.0);
        for (k, (x, y)) in a.iter().zip(&b).enumerate() {
            let d = x - y;
            let delta = d - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (d - mean);
        }
        let se = (m2 / (n - 1) as f64 / n as f64).sqrt();
        let t_ref = mean / se;
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).unwrap();
        let p_ref = 2.0 * dist.sf(t_ref.abs());
        let (t, p) = (got.t.unwrap(), got.p.unwrap());
        worst_t = worst_t.max((t - t_ref).abs() / t_ref.abs().max(1.0));
        worst_p = worst_p.max((p - p_ref).abs());
    }
    out.check(worst_t < 1e-6, format!("t on 100 random pair sets: max deviation {worst_t:.2e} (relative for |t| > 1)"));
    out.check(worst_p < 1e-6, format!("two-sided p: max absolute deviation {worst_p:.2e}"));

    let mut bad = 0;
    let mut kinds = [0usize; 3];
    for r in 0..1000u64 {
        let n = rng.random_range(2..80);
        let labelled = rng.random_bool(0.8);
        let roster: Vec<(String, Option<Label>)> = (0..n)
            .map(|i| {
                let l = if labelled { Some(if rng.random_bool(0.4) { Label::Alzheimers } else { Label::HealthyControl }) } else { None };
                (format!("sub-{r}-{i}"), l)
            })
            .collect();
        let protocol = if rng.random_bool(0.25) { Protocol::Loso } else { Protocol::KFold(rng.random_range(2..=n.min(10))) };
        let plan = make_splits(&roster, protocol, r).unwrap();
        let mut ok = plan.check_isolation().is_ok() && plan.subject_ids.len() == n;
        let mut hits = vec![0; n];
        for f in 0..plan.n_folds {
            let test = plan.test(f);
            let train = plan.train(f);
            ok &= !test.is_empty() && test.len() + train.len() == n;
            ok &= test.iter().all(|i| !train.contains(i));
            for &i in &test {
                hits[i] += 1;
            }
        }
        ok &= hits.iter().all(|&h| h == 1);
        match protocol {
            Protocol::Loso => {
                kinds[0] += 1;
                ok &= plan.n_folds == n;
            }
            Protocol::KFold(k) => {
                ok &= plan.n_folds == k;
                let sizes: Vec<usize> = (0..k).map(|f| plan.test(f).len()).collect();
                ok &= sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1;
                if labelled {
                    kinds[1] += 1;
                    for c in Label::ALL {
                        let per: Vec<usize> = (0..k)
                            .map(|f| plan.test(f).iter().filter(|&&i| roster[i].1 == Some(c)).count())
                            .collect();
                        ok &= per.iter().max().unwrap() - per.iter().min().unwrap() <= 1;
                    }
                } else {
                    kinds[2] += 1;
                }
            }
        }
        if !ok {
            bad += 1;
        }
    }
    out.check(bad == 0, format!("make_splits on 1000 random rosters: {bad} invalid partitions"));
    out.note(format!("{} LOSO, {} stratified k-fold, {} unlabelled k-fold", kinds[0], kinds[1], kinds[2]));
    out
}

fn cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_gcafuse"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited with {}: {}", o.status, String::from_utf8_lossy(&o.stderr)))
    }
}

fn pipeline(root: &Path) -> Result<(), String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    std::fs::write(root.join("run.toml"), "[train]\nmax_epochs = 4\nwarmup_epochs = 1\n").map_err(|e| e.to_string())?;
    cli(&["synth", "--out", &p("data"), "--seed", "7", "--n-per-class", "10"])?;
    cli(&["align", "--data", &p("data"), "--out", &p("aligned"), "--config", &p("run.toml")])?;
    cli(&["train", "--data", &p("aligned"), "--out", &p("run"), "--config", &p("run.toml"), "--seeds", "3"])?;
    cli(&["eval", "--checkpoint", &p("run/model.cgna"), "--data", &p("aligned"), "--out", &p("eval")])?;
    Ok(())
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let mut out = Outcome::new();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        if let Err(e) = pipeline(d.path()) {
            out.check(false, e);
            return out;
        }
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let names: Vec<&str> = ta.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = ta
        .iter()
        .zip(&tb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let reports = ["run/report.json", "run/metrics.tsv", "eval/eval.json", "eval/eval.tsv"];
    out.check(
        reports.iter().all(|r| names.contains(r)),
        format!("reports present: {}", reports.join(", ")),
    );
    out.check(
        ta.len() == tb.len() && differing.is_empty(),
        format!("synth -> align -> train -> eval twice: {} files, {} differ", ta.len(), differing.len()),
    );
    if !differing.is_empty() {
        out.note(format!("differing: {}", differing.join(", ")));
    }
    out
}

fn corpus_direction() -> Outcome {
    let mut out = Outcome::new();
    let (mut ordered, mut exact) = (0, 0);
    let mut smallest_margin = f64::INFINITY;
    for seed in 0..100 {
        let spec = SynthSpec::planted(seed);
        let cohort = generate_synthetic_cohort(&spec).unwrap();
        let transcripts: Vec<Transcript> = cohort.iter().map(|s| s.transcript.clone()).collect();
        let stats = corpus_stats(&transcripts).unwrap();
        let ad = stats.class(Label::Alzheimers).means.clone().unwrap();
        let ch = stats.class(Label::HealthyControl).means.clone().unwrap();
        let generator_order = spec.rates_ad.ellipsis > spec.rates_ch.ellipsis;
        if (ad.ellipsis > ch.ellipsis) == generator_order {
            ordered += 1;
        }
        smallest_margin = smallest_margin.min(ad.ellipsis - ch.ellipsis);
        let planted = |l: Label| {
            let v: Vec<f64> = cohort.iter().filter(|s| s.truth.label == l).map(|s| s.truth.pauses[2] as f64).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        if (planted(Label::Alzheimers) - ad.ellipsis).abs() < 1e-9 && (planted(Label::HealthyControl) - ch.ellipsis).abs() < 1e-9 {
            exact += 1;
        }
    }
    out.check(ordered == 100, format!("AD ellipsis mean above CH in {ordered}/100 planted cohorts"));
    out.check(exact == 100, format!("recovered ellipsis means equal the planted counts in {exact}/100 cohorts"));
    out.note(format!("smallest AD - CH margin {smallest_margin:.2} pauses per transcript"));
    out
}
