//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Every tolerance is a constant below.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use hyperhier_core::data::{
    dataset_from_bytes, dataset_to_bytes, generate_synthetic, read_dataset, write_dataset,
    EmbeddingDataset, SynthConfig,
};
use hyperhier_core::eval::{compute_eer, score_dataset, ScoreRecord};
use hyperhier_core::geometry::{hyperbolic_distance, GeometryConfig, PoincarePoint};
use hyperhier_core::hierarchy::{lca_consistency_on_points, lca_consistency_report, select_lca};
use hyperhier_core::linalg::Matrix;
use hyperhier_core::rng::{stream, Stream};
use hyperhier_core::training::{
    forward_embed, gradcheck_suite, model_from_bytes, model_to_bytes, train, LossToggles,
    MetricsLog, ModelParams,
};
use hyperhier_core::whitening::{dimension_similarity_matrix, mask_cardinality, variance_mask};
use hyperhier_core::{Error, Label, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GEOMETRY_PAIRS: usize = 1000;
const GEOMETRY_TOL: f64 = 1e-9;
const GEOMETRY_BUDGET: Duration = Duration::from_secs(5);

const GRADCHECK_STATES: usize = 20;
const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);

const MASK_DIM: usize = 160;

const LCA_CONFIGS: usize = 100;
const LCA_TOPS: usize = 256;

const DESK_EER_MAX: f64 = 0.02;
const DESK_BUDGET: Duration = Duration::from_secs(120);
const HOLDOUT: f64 = 0.2;

const HIERARCHY_MIN: f64 = 0.90;
const HIERARCHY_SAMPLE_TRIPLES: usize = 1000;

const ABLATION_SEEDS: u64 = 5;
/// Mask ratios for the harder fixture. At D = 16 the default ratios select
/// `floor(256 · 0.003) = 0` entries, which would switch the whitening term off.
const ABLATION_MASK_BONAFIDE: f64 = 0.05;
const ABLATION_MASK_SPOOF: f64 = 0.01;

const EER_SETS: usize = 100;
const EER_MAX_SIZE: usize = 12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("pool")
        .install(f)
}

// ----- independent oracles -----

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mobius_add(x: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let xy = dot(x, y);
    let x2 = dot(x, x);
    let y2 = dot(y, y);
    let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    x.iter()
        .zip(y)
        .map(|(a, b)| ((1.0 + 2.0 * c * xy + c * y2) * a + (1.0 - c * x2) * b) / den)
        .collect()
}

/// `2/√c · artanh(√c ‖−u ⊕ v‖)`.
fn mobius_distance(u: &[f64], v: &[f64], c: f64) -> f64 {
    let neg: Vec<f64> = u.iter().map(|x| -x).collect();
    let w = mobius_add(&neg, v, c);
    2.0 / c.sqrt() * (c.sqrt() * dot(&w, &w).sqrt()).atanh()
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize, c: f64, max_frac: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = dot(&dir, &dir).sqrt().max(1e-12);
    let r = rng.random_range(0.0..max_frac) / c.sqrt();
    dir.iter().map(|x| x * r / n).collect()
}

// ----- criteria -----

fn c1_geometry() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut axioms = true;
    for c in [0.01, 1.0] {
        let g = GeometryConfig::new(c, 16).unwrap();
        for _ in 0..GEOMETRY_PAIRS {
            let dim = rng.random_range(2..=16);
            let u = random_point(&mut rng, dim, c, 0.95);
            let v = random_point(&mut rng, dim, c, 0.95);
            let w = random_point(&mut rng, dim, c, 0.95);
            let (pu, pv, pw) = (
                PoincarePoint::new(u.clone(), &g).unwrap(),
                PoincarePoint::new(v.clone(), &g).unwrap(),
                PoincarePoint::new(w.clone(), &g).unwrap(),
            );
            let d_uv = hyperbolic_distance(&pu, &pv, &g).unwrap();
            worst = worst.max((d_uv - mobius_distance(&u, &v, c)).abs());
            let d_vu = hyperbolic_distance(&pv, &pu, &g).unwrap();
            let d_uu = hyperbolic_distance(&pu, &pu, &g).unwrap();
            let d_vw = hyperbolic_distance(&pv, &pw, &g).unwrap();
            let d_uw = hyperbolic_distance(&pu, &pw, &g).unwrap();
            axioms &= d_uu == 0.0
                && d_uv > 0.0
                && (d_uv - d_vu).abs() <= GEOMETRY_TOL
                && d_uw <= d_uv + d_vw + GEOMETRY_TOL;
        }
    }
    let el = t.elapsed();
    outcome(
        worst <= GEOMETRY_TOL && axioms && el < GEOMETRY_BUDGET,
        format!("max |d - mobius| = {worst:.2e} (tol {GEOMETRY_TOL:.0e}), axioms hold: {axioms}, {el:.2?}"),
    )
}

fn c2_gradients() -> Outcome {
    let t = Instant::now();
    let suite = match gradcheck_suite(0, GRADCHECK_STATES, GRADCHECK_STEP, GRADCHECK_TOL) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("suite error: {e}")),
    };
    let el = t.elapsed();
    let failed: Vec<String> = suite
        .iter()
        .filter(|e| !e.report.pass())
        .map(|e| format!("{}@{}={:.1e}", e.loss.name(), e.seed, e.report.worst()))
        .collect();
    let worst = suite.iter().map(|e| e.report.worst()).fold(0.0, f64::max);
    outcome(
        failed.is_empty() && el < GRADCHECK_BUDGET,
        format!(
            "{} checks over {GRADCHECK_STATES} states, worst rel err {worst:.2e} (tol {GRADCHECK_TOL:.0e}), {el:.2?}{}",
            suite.len(),
            if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(" ")) }
        ),
    )
}

fn c3_masks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = 32;
    let g = GeometryConfig::new(0.01, batch).unwrap();
    let mut z = Matrix::zeros(batch, MASK_DIM);
    let mut za = Matrix::zeros(batch, MASK_DIM);
    for n in 0..batch {
        for d in 0..MASK_DIM {
            let v = rng.random_range(-1.0..1.0);
            z.set(n, d, v);
            za.set(n, d, v + 0.3 * rng.random_range(-1.0..1.0));
        }
    }
    let so = dimension_similarity_matrix(&z, &g).unwrap();
    let sa = dimension_similarity_matrix(&za, &g).unwrap();
    let mut ok = true;
    let mut counts = Vec::new();
    for (ratio, expected) in [(0.003, 76usize), (0.0006, 15usize)] {
        let m = variance_mask(&so, &sa, ratio).unwrap();
        let again = variance_mask(&so, &sa, ratio).unwrap();
        counts.push(m.count());
        ok &= m.count() == expected && mask_cardinality(MASK_DIM, ratio) == expected;
        ok &= m.to_bytes() == again.to_bytes();
        let var = |r: usize, s: usize| {
            let h = 0.5 * (so.values.get(r, s) - sa.values.get(r, s));
            h * h
        };
        let mut min_in = f64::INFINITY;
        let mut max_out = f64::NEG_INFINITY;
        for r in 0..MASK_DIM {
            for s in 0..MASK_DIM {
                if m.is_set(r, s) {
                    min_in = min_in.min(var(r, s));
                } else {
                    max_out = max_out.max(var(r, s));
                }
            }
        }
        ok &= min_in >= max_out;
    }
    outcome(
        ok,
        format!("mask sizes {counts:?} (expected [76, 15]), dominance and determinism checked"),
    )
}

fn c4_lca() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut noise = ChaCha8Rng::seed_from_u64(0);
    let mut agree = 0;
    for n in 0..LCA_CONFIGS {
        let c = if n % 2 == 0 { 1.0 } else { 0.01 };
        let dim = rng.random_range(2..=16);
        let g = GeometryConfig::new(c, dim).unwrap();
        let a = random_point(&mut rng, dim, c, 0.9);
        let b = random_point(&mut rng, dim, c, 0.9);
        let tops: Vec<PoincarePoint> = (0..LCA_TOPS)
            .map(|_| PoincarePoint::new(random_point(&mut rng, dim, c, 0.9), &g).unwrap())
            .collect();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (r, t) in tops.iter().enumerate() {
            let s = (-mobius_distance(&a, t, c).max(mobius_distance(&b, t, c))).exp();
            if s > best_score {
                best = r;
                best_score = s;
            }
        }
        if select_lca(&a, &b, &tops, &g, &mut noise, false) == best {
            agree += 1;
        }
    }
    outcome(
        agree == LCA_CONFIGS,
        format!("{agree}/{LCA_CONFIGS} configurations match the exhaustive argmax"),
    )
}

fn desk_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.geometry.dim = 16;
    cfg.num_bonafide_protos = 4;
    cfg.num_spoof_protos = 4;
    cfg.num_top_protos = 32;
    cfg.batch_size = 64;
    cfg.epochs = 200;
    cfg.seed = seed;
    cfg
}

fn desk_data(
    seed: u64,
    class_separation: f64,
    aug_sigma: f64,
) -> (EmbeddingDataset, EmbeddingDataset) {
    let ds = generate_synthetic(&SynthConfig {
        n_per_subcluster: 250,
        subclusters_per_class: 4,
        d_in: 32,
        class_separation,
        subcluster_spread: 2.0,
        noise_sigma: 0.5,
        aug_sigma,
        seed,
    })
    .unwrap();
    ds.split(HOLDOUT, seed).unwrap()
}

fn held_out_eer(params: &ModelParams, test: &EmbeddingDataset) -> f64 {
    compute_eer(&score_dataset(params, test).unwrap())
        .unwrap()
        .eer
}

struct DeskRun {
    cfg: TrainConfig,
    params: ModelParams,
    test: EmbeddingDataset,
}

fn c5_desk() -> (Outcome, Option<DeskRun>) {
    let (train_ds, test) = desk_data(0, 6.0, 0.3);
    let cfg = desk_config(0);
    let t = Instant::now();
    let first = single_threaded(|| train(&cfg, &train_ds));
    let el = t.elapsed();
    let first = match first {
        Ok(o) => o,
        Err(e) => return (outcome(false, format!("training failed: {e}")), None),
    };
    let second: MetricsLog = single_threaded(|| train(&cfg, &train_ds)).unwrap().log;
    let same = first.log.to_json_bytes() == second.to_json_bytes();
    let eer = held_out_eer(&first.params, &test);
    (
        outcome(
            eer <= DESK_EER_MAX && el <= DESK_BUDGET && same,
            format!(
                "held-out EER {:.4}% (max {:.1}%), single-threaded {el:.2?} (budget {DESK_BUDGET:?}), metrics log reproducible: {same}",
                100.0 * eer,
                100.0 * DESK_EER_MAX
            ),
        ),
        Some(DeskRun {
            cfg,
            params: first.params,
            test,
        }),
    )
}

fn sample_triples(test: &EmbeddingDataset, rng: &mut impl Rng) -> Vec<(usize, usize, usize)> {
    let sub = test.subcluster_ids.as_ref().expect("synthetic ids");
    let mut out = Vec::with_capacity(HIERARCHY_SAMPLE_TRIPLES);
    while out.len() < HIERARCHY_SAMPLE_TRIPLES {
        let i = rng.random_range(0..test.n());
        let j = rng.random_range(0..test.n());
        let k = rng.random_range(0..test.n());
        if i != j && sub[i] == sub[j] && test.labels[k] != test.labels[i] {
            out.push((i, j, k));
        }
    }
    out
}

fn hierarchy_scores(
    cfg: &TrainConfig,
    params: &ModelParams,
    test: &EmbeddingDataset,
) -> (f64, f64) {
    let mut rng = stream(cfg.seed, Stream::Diagnostics);
    let proto = lca_consistency_report(&params.bank, &cfg.hsl, &mut rng)
        .unwrap()
        .fraction;
    let points: Vec<PoincarePoint> = (0..test.n())
        .map(|i| {
            let x: Vec<f64> = test.feature(i).iter().map(|v| f64::from(*v)).collect();
            forward_embed(&x, params).unwrap()
        })
        .collect();
    let triples = sample_triples(test, &mut rng);
    let tops = params.bank.materialize().top;
    let samples = lca_consistency_on_points(&points, &triples, &tops, params.bank.geometry())
        .unwrap()
        .fraction;
    (proto, samples)
}

fn c6_hierarchy(run: Option<&DeskRun>) -> Outcome {
    let Some(run) = run else {
        return outcome(false, "criterion 5 training did not complete".into());
    };
    let (proto, samples) = hierarchy_scores(&run.cfg, &run.params, &run.test);
    outcome(
        proto >= HIERARCHY_MIN && samples >= HIERARCHY_MIN,
        format!(
            "prototype LCA consistency {proto:.3}, same-subcluster sample triplets {samples:.3} (min {HIERARCHY_MIN:.2})"
        ),
    )
}

/// Not a criterion: the prototype-level consistency of other seeds, printed
/// so the seed-0 result above is read in context.
fn c6_seed_spread() -> String {
    let vals: Vec<String> = (1..5)
        .map(|s| {
            let (train_ds, test) = desk_data(s, 6.0, 0.3);
            let cfg = desk_config(s);
            let out = train(&cfg, &train_ds).unwrap();
            let (p, q) = hierarchy_scores(&cfg, &out.params, &test);
            format!("seed {s}: {p:.3}/{q:.3}")
        })
        .collect();
    vals.join(", ")
}

fn c7_ablation() -> Outcome {
    let mut all = Vec::new();
    let mut ppl = Vec::new();
    for s in 0..ABLATION_SEEDS {
        let (train_ds, test) = desk_data(s, 3.0, 1.0);
        let mut cfg = desk_config(s);
        cfg.mask_ratio_bonafide = ABLATION_MASK_BONAFIDE;
        cfg.mask_ratio_spoof = ABLATION_MASK_SPOOF;
        let full = train(&cfg, &train_ds).unwrap();
        all.push(held_out_eer(&full.params, &test));
        cfg.losses = LossToggles::ppl_only();
        let base = train(&cfg, &train_ds).unwrap();
        ppl.push(held_out_eer(&base.params, &test));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mp) = (mean(&all), mean(&ppl));
    let pct = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{:.2}", 100.0 * x))
            .collect::<Vec<_>>()
            .join(" ")
    };
    outcome(
        ma <= mp,
        format!(
            "mean held-out EER all losses {:.3}% [{}] vs PPL only {:.3}% [{}]",
            100.0 * ma,
            pct(&all),
            100.0 * mp,
            pct(&ppl)
        ),
    )
}

/// All-thresholds sweep with direct counting at every candidate threshold.
fn brute_force_eer(r: &[ScoreRecord]) -> (f64, f64) {
    let nb = r.iter().filter(|x| x.label == Label::Bonafide).count() as f64;
    let ns = r.iter().filter(|x| x.label == Label::Spoof).count() as f64;
    let mut ts: Vec<f64> = r.iter().map(|x| x.score).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let point = |t: f64| {
        let far = r
            .iter()
            .filter(|x| x.label == Label::Bonafide && x.score >= t)
            .count() as f64
            / nb;
        let frr = r
            .iter()
            .filter(|x| x.label == Label::Spoof && x.score < t)
            .count() as f64
            / ns;
        (far, frr)
    };
    let mut prev: Option<(f64, f64, f64)> = None;
    for &t in &ts {
        let (far, frr) = point(t);
        if frr - far == 0.0 {
            return (far, t);
        }
        if let Some((ta, fa, ra)) = prev {
            let (da, db) = (ra - fa, frr - far);
            if da < 0.0 && db > 0.0 {
                let l = -da / (db - da);
                return (fa + l * (far - fa), ta + l * (t - ta));
            }
        }
        prev = Some((t, far, frr));
    }
    let (ta, fa, ra) = prev.unwrap();
    let da = ra - fa;
    let l = -da / (1.0 - da);
    (fa + l * (0.0 - fa), ta)
}

fn c8_eer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut exact = 0;
    for _ in 0..EER_SETS {
        let recs = loop {
            let n = rng.random_range(2..=EER_MAX_SIZE);
            let recs: Vec<ScoreRecord> = (0..n)
                .map(|index| ScoreRecord {
                    index,
                    // coarse grid so ties occur
                    score: f64::from(rng.random_range(0..8u8)) / 7.0,
                    label: if rng.random_bool(0.5) {
                        Label::Spoof
                    } else {
                        Label::Bonafide
                    },
                })
                .collect();
            if recs.iter().any(|r| r.label == Label::Spoof)
                && recs.iter().any(|r| r.label == Label::Bonafide)
            {
                break recs;
            }
        };
        let got = compute_eer(&recs).unwrap();
        let (eer, thr) = brute_force_eer(&recs);
        if got.eer == eer && got.threshold == thr {
            exact += 1;
        }
    }
    outcome(
        exact == EER_SETS,
        format!("{exact}/{EER_SETS} score sets match the brute-force sweep exactly"),
    )
}

fn documented_read_error(e: &Error) -> bool {
    matches!(e, Error::Format(_) | Error::UnsupportedVersion { .. })
}

fn c9_round_trips() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let ds = generate_synthetic(&SynthConfig {
        n_per_subcluster: 3,
        subclusters_per_class: 2,
        d_in: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let bytes = dataset_to_bytes(&ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.phe");
    write_dataset(&ds, &path).unwrap();
    let from_file = read_dataset(&path).unwrap();
    ok &= std::fs::read(&path).unwrap() == bytes && dataset_to_bytes(&from_file).unwrap() == bytes;

    let mut cfg = desk_config(9);
    cfg.num_top_protos = 6;
    let params = ModelParams::init(&cfg, 4).unwrap();
    let model = model_to_bytes(&params, &cfg);
    let (p2, c2) = model_from_bytes(&model).unwrap();
    ok &= model_to_bytes(&p2, &c2) == model;
    notes.push(format!("round trips byte-exact: {ok}"));

    // corruption probes count panics instead of printing them
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bad_errors = 0;
    let mut panics = 0;
    let mut trials = 0;
    let mut check = |res: std::thread::Result<Option<Error>>| {
        trials += 1;
        match res {
            Err(_) => panics += 1,
            Ok(Some(e)) if !documented_read_error(&e) => bad_errors += 1,
            Ok(_) => {}
        }
    };
    for cut in 0..bytes.len() {
        check(
            catch_unwind(|| dataset_from_bytes(&bytes[..cut]).err()).map(|e| {
                // a truncated file must always fail
                Some(e.unwrap_or(Error::InvalidInput("truncated dataset accepted".into())))
            }),
        );
    }
    for cut in (0..model.len()).step_by(7) {
        check(
            catch_unwind(|| model_from_bytes(&model[..cut]).err())
                .map(|e| Some(e.unwrap_or(Error::InvalidInput("truncated model accepted".into())))),
        );
    }
    for _ in 0..2000 {
        let mut d = bytes.clone();
        let at = rng.random_range(0..d.len());
        d[at] ^= 1 << rng.random_range(0..8);
        check(catch_unwind(AssertUnwindSafe(|| {
            dataset_from_bytes(&d).err()
        })));
        let mut m = model.clone();
        let at = rng.random_range(0..m.len());
        m[at] ^= 1 << rng.random_range(0..8);
        check(catch_unwind(AssertUnwindSafe(|| {
            model_from_bytes(&m).err()
        })));
    }
    std::panic::set_hook(hook);
    ok &= bad_errors == 0 && panics == 0;
    notes.push(format!(
        "{trials} corrupted inputs: {panics} panics, {bad_errors} undocumented errors"
    ));
    outcome(ok, notes.join("; "))
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id}. {name}: {}", o.detail);
        if !o.pass {
            failures += 1;
        }
    };
    report(1, "geometry vs Möbius formula", c1_geometry());
    report(
        2,
        "analytic gradients vs finite differences",
        c2_gradients(),
    );
    report(3, "whitening mask exactness", c3_masks());
    report(4, "noise-free LCA selection vs exhaustive argmax", c4_lca());
    let (o5, run) = c5_desk();
    report(5, "desk-scale training", o5);
    report(6, "hierarchy recovery", c6_hierarchy(run.as_ref()));
    println!(
        "       info: prototype/sample consistency on other seeds: {}",
        c6_seed_spread()
    );
    report(7, "loss ablation on harder fixture", c7_ablation());
    report(8, "EER vs brute-force sweep", c8_eer());
    report(
        9,
        "serialization round trips and corruption",
        c9_round_trips(),
    );
    println!("{} criteria failed", failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
