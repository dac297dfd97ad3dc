//! Acceptance suite: one pass/fail line per criterion, nonzero exit if any fails.

use std::time::{Duration, Instant};

use hiersum::autodiff::{Mask, Matrix, Tape, Var};
use hiersum::corpus::{generate, generate_with_plan, Document, SynthSpec};
use hiersum::eval::{extract_topk, selection_f1};
use hiersum::graph::{hpe, HashProvider};
use hiersum::model::{
    contrastive_loss, gat_forward, gat_forward_traced, predict, toy_gradcheck, weighted_bce,
    DocInput, GatHead, GatLayer,
};
use hiersum::oracle::{greedy_oracle, OracleObjective};
use hiersum::rouge::{rouge_l, rouge_n, RougeScore};
use hiersum::trainer::{prepare_training_docs, train_to_dir, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let n = 8u64;
    for seed in 0..n {
        match toy_gradcheck(seed) {
            Ok(r) => worst = worst.max(r.max_rel_error),
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 60.0,
        format!("{n} seeds, worst relative error {worst:.2e}, {secs:.1}s"),
    )
}

fn random_layer(tape: &mut Tape, d: usize, heads: usize, r: &mut ChaCha8Rng) -> GatLayer<Var> {
    let dh = d / heads;
    GatLayer {
        heads: (0..heads)
            .map(|_| GatHead {
                w_in: tape.constant(Matrix::xavier(d, dh, r)),
                w_a: tape.constant(Matrix::xavier(2 * dh, 1, r)),
                w_v: tape.constant(Matrix::xavier(d, dh, r)),
            })
            .collect(),
    }
}

#[allow(clippy::needless_range_loop)]
fn gat_invariants() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let graphs = 200;
    let (mut worst_perm, mut worst_norm): (f64, f64) = (0.0, 0.0);
    let mut masked_leak = false;
    for _ in 0..graphs {
        let n = r.random_range(1..16);
        let heads = [1, 2, 4][r.random_range(0..3)];
        let d = 4 * heads;
        let mut t = Tape::new();
        let layer = random_layer(&mut t, d, heads, &mut r);
        let h = Matrix::from_vec(
            n,
            d,
            (0..n * d).map(|_| r.random_range(-2.0..2.0)).collect(),
        );
        let density = r.random_range(0.1..0.9);
        let mut mask = Mask::from_fn(n, n, |_, _| r.random_bool(density));
        mask.allow_diagonal();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let mut hp = Matrix::zeros(n, d);
        for i in 0..n {
            hp.row_mut(perm[i]).copy_from_slice(h.row(i));
        }
        let hv = t.constant(h);
        let hpv = t.constant(hp);
        let (out, attn) = gat_forward_traced(&mut t, hv, &mask, &layer, 0.2).expect("forward");
        let out_p = gat_forward(&mut t, hpv, &mask.permuted(&perm), &layer, 0.2).expect("forward");
        for i in 0..n {
            for (a, b) in t.value(out).row(i).iter().zip(t.value(out_p).row(perm[i])) {
                worst_perm = worst_perm.max((a - b).abs());
            }
        }
        for a in attn {
            let a = t.value(a);
            for i in 0..n {
                worst_norm = worst_norm.max((a.row(i).iter().sum::<f64>() - 1.0).abs());
                masked_leak |= (0..n).any(|j| !mask.allowed(i, j) && a.get(i, j) != 0.0);
            }
        }
    }
    outcome(
        worst_perm < 1e-9 && worst_norm < 1e-9 && !masked_leak,
        format!("{graphs} graphs, permutation gap {worst_perm:.1e}, row-sum gap {worst_norm:.1e}"),
    )
}

/// Longest common subsequence by enumerating every subsequence of `a`.
fn brute_force_lcs(a: &[String], b: &[String]) -> usize {
    let is_subsequence = |s: &[&String]| {
        let mut it = b.iter();
        s.iter().all(|x| it.any(|y| y == *x))
    };
    let mut best = 0;
    for bits in 0u32..(1 << a.len()) {
        let pick: Vec<&String> = (0..a.len())
            .filter(|i| bits >> i & 1 == 1)
            .map(|i| &a[i])
            .collect();
        if pick.len() > best && is_subsequence(&pick) {
            best = pick.len();
        }
    }
    best
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

fn rouge_oracle() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let vocab = ["a", "b", "c", "d"];
    let pairs = 1000;
    let mut mismatches = 0;
    for _ in 0..pairs {
        let mut draw = || -> Vec<String> {
            let len = r.random_range(1..=8);
            (0..len)
                .map(|_| vocab[r.random_range(0..vocab.len())].to_owned())
                .collect()
        };
        let (c, rf) = (draw(), draw());
        let lcs = brute_force_lcs(&c, &rf);
        let want = RougeScore::from_counts(lcs, c.len(), rf.len());
        let got = rouge_l(&[&c], &[&rf]);
        let close = |x: f64, y: f64| (x - y).abs() < 1e-12;
        if !(close(got.precision, want.precision)
            && close(got.recall, want.recall)
            && close(got.f1, want.f1))
        {
            mismatches += 1;
        }
    }
    let ex = rouge_n(&toks("the cat sat"), &toks("the cat"), 1);
    let ex_ok = ex.precision == 2.0 / 3.0 && ex.recall == 1.0 && (ex.f1 - 0.8).abs() < 1e-15;
    let bi = rouge_n(
        &toks("the cat sat on the mat"),
        &toks("the cat lay on the mat"),
        2,
    );
    let bi_ok = bi.precision == 0.6 && bi.recall == 0.6;
    outcome(
        mismatches == 0 && ex_ok && bi_ok,
        format!(
            "{pairs} random pairs, {mismatches} ROUGE-L mismatches; ROUGE-N examples {}",
            if ex_ok && bi_ok { "exact" } else { "wrong" }
        ),
    )
}

fn oracle_recovery() -> Outcome {
    let start = Instant::now();
    let docs = generate_with_plan(99, 50, &SynthSpec::default());
    let recovered = docs
        .iter()
        .filter(|(doc, planted)| {
            let labels =
                greedy_oracle(doc, 10, OracleObjective::MeanR1R2).expect("abstract present");
            (0..doc.n())
                .filter(|&i| labels[i] == 1)
                .eq(planted.iter().copied())
        })
        .count();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        recovered >= 49 && secs < 30.0,
        format!("{recovered}/50 planted subsets recovered, {secs:.2}s"),
    )
}

fn heldout_f1(
    params: &hiersum::trainer::Checkpoint,
    docs: &[Document],
    provider: &HashProvider,
) -> f64 {
    let cfg = params.model_config();
    let total: f64 = docs
        .iter()
        .map(|doc| {
            let input = DocInput::prepare(doc, provider, &cfg).expect("prepare");
            let scores = predict(&params.params, &input, &cfg).expect("predict");
            let labels = doc.labels.as_ref().expect("labeled");
            let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
            selection_f1(&extract_topk(&scores, positives.len()), &positives)
        })
        .sum();
    total / docs.len() as f64
}

fn learning() -> Outcome {
    let spec = SynthSpec::default();
    let train = prepare_training_docs(generate(100, 100, &spec), 10).expect("train labels");
    let val = prepare_training_docs(generate(101, 20, &spec), 10).expect("val labels");
    let test = prepare_training_docs(generate(102, 50, &spec), 10).expect("test labels");
    let provider = HashProvider::new(32, 0);
    let base = TrainConfig {
        d: 32,
        heads: 4,
        layers: 2,
        ..TrainConfig::default()
    };
    let variants = [
        ("full", base.clone()),
        (
            "w/o GCL",
            TrainConfig {
                lambda: 0.0,
                ..base.clone()
            },
        ),
        (
            "w/o Hierarchical",
            TrainConfig {
                use_hierarchical: false,
                ..base.clone()
            },
        ),
    ];
    let seeds = [0u64, 1, 2];
    let mut means = Vec::new();
    let mut slowest = Duration::ZERO;
    let mut epochs_max = 0;
    let mut parts = Vec::new();
    for (name, cfg) in &variants {
        let mut f1s = Vec::new();
        for &seed in &seeds {
            let start = Instant::now();
            let out = Trainer::new(
                TrainConfig {
                    seed,
                    ..cfg.clone()
                },
                train.clone(),
                val.clone(),
                &provider,
            )
            .and_then(Trainer::run)
            .expect("training");
            slowest = slowest.max(start.elapsed());
            epochs_max = epochs_max.max(out.history.len());
            f1s.push(heldout_f1(&out.best, &test, &provider));
        }
        let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
        let per: Vec<String> = f1s.iter().map(|f| format!("{f:.3}")).collect();
        parts.push(format!("{name} {mean:.4} [{}]", per.join(" ")));
        means.push(mean);
    }
    let (full, no_gcl, no_hier) = (means[0], means[1], means[2]);
    let pass = full >= 0.85
        && no_gcl < full
        && no_hier < full
        && epochs_max <= 10
        && slowest.as_secs() < 600;
    outcome(
        pass,
        format!(
            "mean held-out F1 over seeds {seeds:?}: {}; at most {epochs_max} epochs, slowest run {:.1}s",
            parts.join(", "),
            slowest.as_secs_f64()
        ),
    )
}

fn closed_forms() -> Outcome {
    let mut worst_ln: f64 = 0.0;
    for n in [2usize, 5, 50] {
        let mut t = Tape::new();
        let row = vec![0.7, -0.2, 1.1, 0.4];
        let doc = t.constant(Matrix::from_rows(std::slice::from_ref(&row)));
        let h = t.constant(Matrix::from_rows(&vec![row; n]));
        let l = contrastive_loss(&mut t, doc, h, &[0], 0.1).expect("loss");
        worst_ln = worst_ln.max((t.value(l).get(0, 0) - (n as f64).ln()).abs());
    }
    let mut t = Tape::new();
    let p = t.constant(Matrix::column(vec![0.5, 0.5]));
    let l = weighted_bce(&mut t, p, &[1, 0], 4.0).expect("bce");
    let bce_gap = (t.value(l).get(0, 0) - 2.5 * 2f64.ln()).abs();
    let h = hpe(0, 0, 16).expect("hpe");
    let hpe_ok = h
        .iter()
        .enumerate()
        .all(|(i, &v)| v == if i % 2 == 0 { 0.0 } else { 2.0 });
    outcome(
        worst_ln < 1e-9 && bce_gap < 1e-12 && hpe_ok,
        format!(
            "ln(n) gap {worst_ln:.1e}, BCE gap {bce_gap:.1e}, HPE(0,0) {}",
            if hpe_ok { "exact" } else { "wrong" }
        ),
    )
}

fn determinism() -> Outcome {
    let spec = SynthSpec {
        sections: (2, 4),
        sentences_per_section: (3, 5),
        ..SynthSpec::default()
    };
    let docs = generate(55, 12, &spec);
    let provider = HashProvider::new(16, 0);
    let cfg = TrainConfig {
        d: 16,
        d_h: 16,
        heads: 2,
        epochs: 3,
        lr: 1e-3,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || {
        let dir = tempfile::tempdir().expect("tempdir");
        let (_, files) = train_to_dir(
            cfg.clone(),
            docs[..9].to_vec(),
            docs[9..].to_vec(),
            &provider,
            dir.path(),
            false,
        )
        .expect("training");
        (
            std::fs::read(&files.metrics).expect("metrics"),
            std::fs::read(&files.checkpoint).expect("checkpoint"),
        )
    };
    let (a, b) = (run(), run());
    outcome(
        a == b,
        format!(
            "metrics {} bytes, checkpoint {} bytes, identical: {}",
            a.0.len(),
            a.1.len(),
            a == b
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        ("gradient oracle", gradient_oracle),
        ("GAT invariants", gat_invariants),
        ("ROUGE oracle equivalence", rouge_oracle),
        ("oracle recovery", oracle_recovery),
        ("learning at desk scale", learning),
        ("closed-form checks", closed_forms),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
