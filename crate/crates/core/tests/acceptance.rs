//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. The slow end-to-end sweep runs last.

mod support;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use asemm::alignment::{rank_scores, rank_self_similarity, ItcDirection, PfaSchedule};
use asemm::datasynth::raster::{from_pixel, half_pixel, to_pixel};
use asemm::datasynth::{ase_catalog, rasterize, sample_points, summarize, Split, SynthConfig};
use asemm::harness::*;
use asemm::numerics::{adamw_step, cosine_similarity, cross_entropy, sigmoid, softmax_rows, AdamWConfig};
use asemm::perception::extract_stats;
use asemm::{ParamStore, RngStream, Tensor};

type Verdict = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    check((got - want).abs() <= tol, format!("{what}: {got} vs {want}"))
}

fn closed_forms() -> Result<(), String> {
    let x = Tensor::from_rows(&[vec![0.0, 2f64.ln(), 5f64.ln()]]).unwrap();
    let p = softmax_rows(&x).unwrap();
    for (got, want) in p.data().iter().zip([0.125, 0.25, 0.625]) {
        close(*got, want, 1e-6, "softmax")?;
    }
    let s = sigmoid(&Tensor::from_rows(&[vec![0.0, 3f64.ln(), -(3f64.ln())]]).unwrap());
    for (got, want) in s.data().iter().zip([0.5, 0.75, 0.25]) {
        close(*got, want, 1e-6, "sigmoid")?;
    }
    let t = Tensor::from_rows(&[vec![0.0, 0.0, 1.0]]).unwrap();
    close(cross_entropy(&x, &t).unwrap(), -(0.625f64.ln()), 1e-6, "cross entropy")?;
    close(cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), 0.5f64.sqrt(), 1e-6, "cosine 45")?;
    close(cosine_similarity(&[1.0, 2.0, 3.0], &[-2.0, 1.0, 0.0]).unwrap(), 0.0, 1e-6, "cosine 90")?;
    close(cosine_similarity(&[0.3, -1.0], &[-0.6, 2.0]).unwrap(), -1.0, 1e-6, "cosine 180")
}

fn adamw_closed_form() -> Result<f64, String> {
    let cfg = AdamWConfig::default();
    let mut rng = RngStream::labeled(13, "adamw-oracle", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let theta: Vec<f64> = (0..6).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let grad: Vec<f64> = (0..6).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::from_f64(&[2, 3], &theta).unwrap());
        let grads = BTreeMap::from([("w".to_string(), Tensor::from_f64(&[2, 3], &grad).unwrap())]);
        adamw_step(&mut store, &grads, &cfg).map_err(|e| e.to_string())?;
        // first step: bias-corrected moments are g and g^2
        for ((got, th), g) in store.get("w").unwrap().data().iter().zip(&theta).zip(&grad) {
            let want = th * (1.0 - cfg.lr * cfg.weight_decay) - cfg.lr * g / (g.abs() + cfg.eps);
            worst = worst.max((got - want).abs());
        }
    }
    check(worst <= 1e-10, format!("adamw deviation {worst:e}"))?;
    Ok(worst)
}

fn criterion_1() -> Verdict {
    use support::gradients as k;
    let start = Instant::now();
    closed_forms()?;
    let mut families = vec![("linear", k::linear_map()), ("softmax 3x4", k::softmax_rows_3x4())];
    families.extend([
        ("matmul", k::matmul_both_sides()),
        ("elementwise", k::elementwise_kernels()),
        ("relu", k::relu_away_from_kink()),
        ("structural", k::broadcasting_and_reshaping_ops()),
        ("batched", k::batched_products()),
        ("conv/embedding/patchify", k::convolution_embedding_patchify()),
        ("cross entropy", k::cross_entropy_against_soft_targets()),
        ("composed model", support::composed::composed_model(k::INSTANCES)),
    ]);
    let (name, worst) = families
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("families");
    check(worst <= k::TOL, format!("{name} gradient error {worst:e}"))?;
    let adam = adamw_closed_form()?;
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "closed forms ok, worst gradient error {worst:.2e} ({name}), adamw {adam:.1e}, {secs:.1}s"
    ))
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let n = 500usize;
    let reps = 100u64;
    let mut worst_mean: f64 = 1.0;
    let mut worst_var: f64 = 1.0;
    for spec in ase_catalog() {
        let mut mean_in = 0;
        let mut var_in = [0usize; 2];
        let mut var_sum = [0.0f64; 2];
        let sd = spec.std();
        for rep in 0..reps {
            let pts = sample_points(&mut RngStream::labeled(2024, &format!("fidelity/{}", spec.name), rep), &spec, n)
                .map_err(|e| e.to_string())?;
            let mut inside = true;
            for a in 0..2 {
                let m = pts.iter().map(|p| p[a]).sum::<f64>() / n as f64;
                inside &= (m - spec.mu[a]).abs() <= 4.0 * sd[a] / (n as f64).sqrt();
                let v = pts.iter().map(|p| (p[a] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                let var = spec.sigma[a][a];
                var_sum[a] += v;
                if (v - var).abs() <= 4.0 * var * (2.0 / (n - 1) as f64).sqrt() {
                    var_in[a] += 1;
                }
            }
            mean_in += inside as usize;
        }
        let mean_frac = mean_in as f64 / reps as f64;
        worst_mean = worst_mean.min(mean_frac);
        check(mean_frac >= 0.99, format!("{}: {mean_in}/{reps} means in band", spec.name))?;
        for a in 0..2 {
            let var = spec.sigma[a][a];
            let frac = var_in[a] as f64 / reps as f64;
            worst_var = worst_var.min(frac);
            check(frac >= 0.99, format!("{} axis {a}: {}/{reps} variances in band", spec.name, var_in[a]))?;
            let avg = var_sum[a] / reps as f64;
            let band = 4.0 * var * (2.0 / (n - 1) as f64).sqrt() / (reps as f64).sqrt();
            close(avg, var, band, &format!("{} axis {a} average variance", spec.name))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "worst class: {:.0}% of means and {:.0}% of variances in band, {secs:.1}s",
        worst_mean * 100.0,
        worst_var * 100.0
    ))
}

/// Gaussian draws reduced to what a radius-0 raster can hold: in-range
/// points, one per pixel. Returns the raw points and their pixel centres.
fn representable(pts: &[[f64; 2]], extent: f64, size: usize) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let mut taken = std::collections::HashSet::new();
    let mut raw = Vec::new();
    let mut snapped = Vec::new();
    for &p in pts {
        if p[0].abs() > extent || p[1].abs() > extent {
            continue;
        }
        let (x, y) = (to_pixel(p[0], extent, size), to_pixel(p[1], extent, size));
        if taken.insert((x, y)) {
            raw.push(p);
            snapped.push([from_pixel(x as f64, extent, size), from_pixel(y as f64, extent, size)]);
        }
    }
    (raw, snapped)
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let cfg = SynthConfig::default();
    let rings = cfg.rings().map_err(|e| e.to_string())?;
    let catalog = ase_catalog();
    let half = half_pixel(cfg.extent, cfg.canvas);
    let mut worst: f64 = 0.0;
    let mut raw_ring_matches = 0;
    for i in 0..100u64 {
        let spec = &catalog[i as usize % catalog.len()];
        let pts = sample_points(&mut RngStream::labeled(31, "roundtrip", i), spec, 500).map_err(|e| e.to_string())?;
        let (raw, snapped) = representable(&pts, cfg.extent, cfg.canvas);
        let (img, _) = rasterize(&raw, cfg.extent, cfg.canvas, cfg.canvas, 0).map_err(|e| e.to_string())?;
        let stats = extract_stats(&img, &rings).map_err(|e| e.to_string())?;
        let truth = summarize(&raw, &rings).map_err(|e| e.to_string())?;
        let lattice = summarize(&snapped, &rings).map_err(|e| e.to_string())?;
        check(stats.detected == raw.len(), format!("image {i}: {} of {} dots", stats.detected, raw.len()))?;
        for a in 0..2 {
            let d = (stats.mean[a] - truth.mean[a]).abs();
            worst = worst.max(d);
            check(d <= half, format!("image {i} axis {a}: mean off by {d}"))?;
        }
        check(
            stats.ring_counts == lattice.ring_counts && stats.out_of_range == lattice.out_of_range,
            format!("image {i}: ring counts {:?} vs {:?}", stats.ring_counts, lattice.ring_counts),
        )?;
        raw_ring_matches += (stats.ring_counts == truth.ring_counts) as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "worst mean offset {worst:.4} (half pixel {half:.4}), ring counts exact on 100/100 lattice images \
         ({raw_ring_matches}/100 also match unsnapped points), {secs:.1}s"
    ))
}

fn criterion_4() -> Verdict {
    use support::itc::{enumerate_itc, graph_itc, unit_rows};
    let mut rng = RngStream::labeled(404, "acceptance-itc", 0);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let b = 1 + trial % 5;
        let d = 2 + (rng.uniform() * 6.0) as usize;
        let tau = rng.uniform_range(0.02, 1.0);
        let img = unit_rows(&mut rng, b, d);
        let text = unit_rows(&mut rng, b, d);
        let got = graph_itc(&img, &text, tau, ItcDirection::Both);
        let want = enumerate_itc(&img, &text, tau);
        worst = worst.max((got - want).abs());
        if b == 1 {
            check(got == 0.0, format!("trial {trial}: single pair gives {got}"))?;
        }
    }
    check(worst <= 1e-6, format!("worst deviation {worst:e}"))?;
    Ok(format!("50 batches, worst deviation {worst:.1e}, B=1 exactly 0"))
}

fn criterion_5() -> Verdict {
    let schedule = Variant::Pfa5.schedule(&PfaSchedule::default()).ok_or("pfa5 has no schedule")?;
    check(
        schedule.stage_fractions == [0.2, 0.4, 0.6, 0.8, 1.0],
        format!("pfa5 fractions {:?}", schedule.stage_fractions),
    )?;
    let sizes = schedule.active_sizes(100);
    check(sizes == [20, 40, 60, 80, 100], format!("sizes {sizes:?}"))?;

    let mut rng = RngStream::labeled(55, "acceptance-rank", 0);
    let n = 100;
    let mut ids: Vec<u32> = (0..n as u32).map(|i| 1000 + 7 * i).collect();
    for i in (1..n).rev() {
        ids.swap(i, (rng.uniform() * (i + 1) as f64) as usize);
    }
    let vec = |rng: &mut RngStream| (0..6).map(|_| rng.uniform_range(-1.0, 1.0)).collect::<Vec<f64>>();
    let mut img: Vec<Vec<f64>> = (0..n).map(|_| vec(&mut rng)).collect();
    let vlm: Vec<Vec<f64>> = (0..n).map(|_| vec(&mut rng)).collect();
    let llm: Vec<Vec<f64>> = (0..n).map(|_| vec(&mut rng)).collect();
    // duplicated triples force exact score ties
    for k in 0..10 {
        img[k + 50] = img[k].clone();
    }
    let (vlm, llm): (Vec<_>, Vec<_>) = (0..n)
        .map(|i| if (50..60).contains(&i) { (vlm[i - 50].clone(), llm[i - 50].clone()) } else { (vlm[i].clone(), llm[i].clone()) })
        .unzip();
    let order = rank_self_similarity(&ids, &img, &vlm, &llm).map_err(|e| e.to_string())?;

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let cos = |a: &[f64], b: &[f64]| dot(a, b) / (dot(a, a) * dot(b, b)).sqrt();
    let mut expected: Vec<(f64, u32)> =
        (0..n).map(|i| (0.5 * (cos(&img[i], &vlm[i]) + cos(&img[i], &llm[i])), ids[i])).collect();
    expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (pos, ((score, id), (&got_id, &got_score))) in expected.iter().zip(order.ids.iter().zip(&order.scores)).enumerate() {
        check(*id == got_id, format!("position {pos}: id {got_id}, expected {id}"))?;
        close(got_score, *score, 1e-12, "score")?;
    }
    let ties = order.scores.windows(2).filter(|w| w[0] == w[1]).count();
    check(ties >= 10, format!("only {ties} tied neighbours"))?;
    let tied = rank_scores(&[9, 3, 5], &[0.5, 0.5, 0.1]).map_err(|e| e.to_string())?;
    check(tied.ids == [5, 3, 9], format!("tie-break order {:?}", tied.ids))?;

    let sets: Vec<std::collections::BTreeSet<u32>> = sizes.iter().map(|&k| order.ids[..k].iter().copied().collect()).collect();
    for w in sets.windows(2) {
        check(w[0].is_subset(&w[1]), "active sets are not nested")?;
    }
    for (k, set) in sizes.iter().zip(&sets) {
        let cutoff = order.scores[k - 1];
        check(
            order.ids.iter().zip(&order.scores).filter(|(_, s)| **s < cutoff).all(|(id, _)| set.contains(id)),
            format!("stage of size {k} skips a harder sample"),
        )?;
    }
    Ok(format!("sizes {sizes:?}, nested, ascending with {ties} id-broken ties"))
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn desk_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.synth.canvas = 64;
    cfg.model.canvas = 64;
    cfg
}

fn criterion_8(roots: &[tempfile::TempDir; 2]) -> Verdict {
    let start = Instant::now();
    let cfg = desk_config();
    let mut f1 = Vec::new();
    for root in roots {
        let report = run_all(&cfg, &RunPaths::under(root.path())).map_err(|e| e.to_string())?;
        f1.push(report.macro_f1);
    }
    let (a, b) = (tree(roots[0].path()), tree(roots[1].path()));
    for required in ["data/manifest.jsonl", "run/warmup.ckpt", "run/pfa.ckpt", "run/model.ckpt", "run/stage_log.csv", "metrics/metrics.csv", "metrics/summary.json"] {
        check(a.contains_key(required), format!("missing {required}"))?;
    }
    check(a.keys().eq(b.keys()), "the two runs wrote different file sets")?;
    let differing: Vec<&String> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    check(differing.is_empty(), format!("differing files: {differing:?}"))?;
    Ok(format!(
        "{} files byte-identical across two runs (canvas 64, macro f1 {:.4}), {:.0}s",
        a.len(),
        f1[0],
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_9(root: &Path) -> Verdict {
    let log = std::fs::read_to_string(root.join("run").join("stage_log.csv")).map_err(|e| e.to_string())?;
    let header = log.lines().next().unwrap_or_default();
    check(header.contains("batch_size=10"), format!("header lacks batch size: {header}"))?;
    check(header.contains("adamw=(0.9, 0.999, 1e-8)"), format!("header lacks adamw betas: {header}"))?;
    let columns: Vec<&str> = log.lines().nth(1).unwrap_or_default().split(',').collect();
    let col = |name: &str| columns.iter().position(|c| *c == name).ok_or(format!("no {name} column"));
    let (stage, epoch, lr) = (col("stage")?, col("epoch")?, col("lr")?);
    let mut trace = BTreeMap::new();
    for line in log.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        if f[stage] == "fusion" {
            let e: usize = f[epoch].parse().map_err(|_| format!("bad epoch in {line}"))?;
            let v: f64 = f[lr].parse().map_err(|_| format!("bad lr in {line}"))?;
            trace.insert(e, v);
        }
    }
    check(trace.len() == 60, format!("{} fusion epochs logged", trace.len()))?;
    for (e, v) in &trace {
        let want = 1e-2 * 0.75f64.powi((e / 15) as i32);
        check(v == &want, format!("epoch {e}: lr {v}, expected {want}"))?;
    }
    let marks: Vec<String> = [0, 15, 30, 45].iter().map(|e| format!("{}", trace[e])).collect();
    Ok(format!("fusion lr at epochs 0/15/30/45 = {}; header: {header}", marks.join(", ")))
}

struct Sweep {
    oracle: Vec<f64>,
    table: AblationTable,
    seconds: f64,
}

fn sweep() -> Result<Sweep, String> {
    let base = RunConfig::default();
    let seeds = [1u64, 2, 3];
    let mut oracle = Vec::new();
    let mut seconds = 0.0;
    for &seed in &seeds {
        let start = Instant::now();
        let data = synthesize(&base.with_seed(seed)).map_err(|e| e.to_string())?;
        let test: Vec<_> = data.split(Split::Test).collect();
        let truth: Vec<usize> = test.iter().map(|s| s.label).collect();
        let pred = test
            .iter()
            .map(|s| oracle_predict(&data.catalog, s))
            .collect::<asemm::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        let report = MetricsReport::from_labels(Task::Multi, &truth, &pred, data.catalog.len()).map_err(|e| e.to_string())?;
        oracle.push(report.macro_f1);
        seconds += start.elapsed().as_secs_f64();
    }
    eprintln!("running the ablation sweep ({} variants x {} seeds, canvas {})", Variant::ALL.len(), seeds.len(), base.model.canvas);
    let table = ablate(&base, &Variant::ALL, &seeds).map_err(|e| e.to_string())?;
    let pfa5 = table.rows.iter().find(|r| r.variant == Variant::Pfa5).ok_or("no pfa5 row")?;
    seconds += pfa5.runs.iter().map(|r| r.seconds).sum::<f64>();
    Ok(Sweep { oracle, table, seconds })
}

fn criterion_6(s: &Sweep) -> Verdict {
    let row = s.table.rows.iter().find(|r| r.variant == Variant::Pfa5).ok_or("no pfa5 row")?;
    check(row.failures.is_empty(), format!("pipeline failures: {:?}", row.failures))?;
    let oracle = median(&s.oracle).ok_or("no oracle scores")?;
    let multi = row.median_multi.ok_or("no multi-class score")?;
    let binary = row.median_binary.ok_or("no binary score")?;
    let detail = format!(
        "oracle median {oracle:.4} {:?}, pipeline median multi {multi:.4} binary {binary:.4}, {:.0}s",
        s.oracle, s.seconds
    );
    check(oracle >= 0.95 && multi >= 0.85 && binary >= 0.90 && s.seconds <= 900.0, detail.clone())?;
    Ok(detail)
}

fn criterion_7(s: &Sweep) -> Verdict {
    let medians: Vec<String> = s
        .table
        .rows
        .iter()
        .map(|r| format!("{} {}", r.variant.name(), r.median_multi.map_or("n/a".into(), |m| format!("{m:.4}"))))
        .collect();
    let checks: Vec<String> = s
        .table
        .directions
        .iter()
        .map(|d| format!("{} {} ({})", d.name, if d.holds { "holds" } else { "fails" }, d.detail))
        .collect();
    let detail = format!("medians: {}; {}", medians.join(", "), checks.join("; "));
    check(s.table.directions.len() == 3 && s.table.directions.iter().all(|d| d.holds), detail.clone())?;
    Ok(detail)
}

fn run(results: &mut Vec<(u32, bool)>, n: u32, name: &str, f: impl FnOnce() -> Verdict) {
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let (pass, detail) = match verdict {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    println!("criterion {n} ({name}): {} {detail}", if pass { "PASS" } else { "FAIL" });
    results.push((n, pass));
}

fn main() {
    // Numeric arguments select criteria; other libtest flags are ignored.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let picked: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let wants = |n: u32| picked.is_empty() || picked.contains(&n);
    let mut results = Vec::new();
    if wants(1) {
        run(&mut results, 1, "numerics oracles", criterion_1);
    }
    if wants(2) {
        run(&mut results, 2, "synthesis fidelity", criterion_2);
    }
    if wants(3) {
        run(&mut results, 3, "perception round trip", criterion_3);
    }
    if wants(4) {
        run(&mut results, 4, "contrastive loss oracle", criterion_4);
    }
    if wants(5) {
        run(&mut results, 5, "alignment schedule", criterion_5);
    }
    if wants(8) || wants(9) {
        let roots = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        run(&mut results, 8, "determinism", || criterion_8(&roots));
        run(&mut results, 9, "learning-rate trace", || criterion_9(roots[0].path()));
    }
    if wants(6) || wants(7) {
        match sweep() {
            Ok(s) => {
                run(&mut results, 6, "end-to-end desk run", || criterion_6(&s));
                run(&mut results, 7, "ablation directions", || criterion_7(&s));
            }
            Err(e) => {
                for (n, name) in [(6, "end-to-end desk run"), (7, "ablation directions")] {
                    println!("criterion {n} ({name}): FAIL sweep failed: {e}");
                    results.push((n, false));
                }
            }
        }
    }
    results.sort();
    let summary: Vec<String> = results.iter().map(|(n, p)| format!("{n}:{}", if *p { "PASS" } else { "FAIL" })).collect();
    println!("summary: {}", summary.join(" "));
    if results.iter().any(|(_, p)| !p) {
        std::process::exit(1);
    }
}
