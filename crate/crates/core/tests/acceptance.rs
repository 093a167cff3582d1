//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.
//! Built without the libtest harness so the lines are always printed.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use adsubtype::cluster::kmeans::{lloyd, restart_rng};
use adsubtype::cluster::{
    adjusted_rand_index, detect_elbow, elbow_sse_curve, hamming_distance_matrix, kmeans_best,
    laplacian_kernel_affinity, normalized_laplacian_embedding, spectral_cluster, EigenOptions, ElbowCurve,
    KMeansConfig, SpectralConfig,
};
use adsubtype::cohort::{assign_timeslot, select_cohort, CohortConfig};
use adsubtype::drugs::AtcMap;
use adsubtype::phenotype::{build_aggregate_matrix, build_temporal_matrix, FeatureMatrix, PhecodeMap, PhenotypeVocabulary};
use adsubtype::report::{write_mlr, write_mlr_table, write_stats_grid};
use adsubtype::stats::{
    bonferroni_threshold, chi2_sf, chi_square_test, class_probabilities, fit_multinomial_logit, log_likelihood,
    mlr_gradient, ChiSquareResult, ContingencyTable, GridCell, GridRow, MlrFit, MlrOptions, TestGrid,
};
use adsubtype::synth::{acceptance_profiles, generate_cohort, paper_like_profiles, slot_date, SubtypeProfile, SynthOptions};
use chrono::NaiveDate;
use ndarray::{arr2, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Temporal and aggregate matrices plus truth labels aligned to their rows.
fn synthetic(profiles: &[SubtypeProfile], n: usize, seed: u64) -> (FeatureMatrix, FeatureMatrix, Vec<usize>) {
    let map = PhecodeMap::fixture();
    let vocab = PhenotypeVocabulary::table1();
    let syn = generate_cohort(profiles, n, seed, &map, &AtcMap::fixture(), &SynthOptions::default()).unwrap();
    let sel = select_cohort(&syn.tables, &CohortConfig::default(), &vocab, &map).unwrap();
    let temporal = build_temporal_matrix(&sel.cohort, &vocab, &map).unwrap();
    let aggregate = build_aggregate_matrix(&sel.cohort, &vocab, &map).unwrap();
    let truth_map = syn.truth_map();
    let truth = temporal.patient_ids.iter().map(|p| truth_map[p.as_str()]).collect();
    (temporal, aggregate, truth)
}

fn criterion_1() -> Outcome {
    let profiles = acceptance_profiles();
    let slots = SynthOptions::default().slot_count;
    let mut separated = 0;
    let codes: std::collections::BTreeSet<&String> =
        profiles.iter().flat_map(|p| p.condition_slot_prob.keys()).collect();
    for code in codes {
        for s in 0..slots {
            let probs: Vec<f64> =
                profiles.iter().map(|p| p.condition_slot_prob.get(code).map_or(0.0, |v| v[s])).collect();
            let hi = probs.iter().cloned().fold(f64::MIN, f64::max);
            let lo = probs.iter().cloned().fold(f64::MAX, f64::min);
            if hi - lo >= 0.4 {
                separated += 1;
            }
        }
    }
    let (temporal, _, truth) = synthetic(&profiles, 2000, 1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let result = pool
        .install(|| spectral_cluster::<f64>(temporal.values.view(), &SpectralConfig { k: 4, seed: 1, ..Default::default() }))
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let ari = adjusted_rand_index(&result.assignment.labels, &truth).unwrap();
    check(
        separated >= 10 && ari >= 0.90 && secs < 60.0,
        format!("{separated} separated cells, N={}, ARI={ari:.4}, {secs:.1}s on one thread", truth.len()),
    )
}

fn criterion_2() -> Outcome {
    let profiles = acceptance_profiles();
    let mut hits = 0;
    let mut chosen = Vec::new();
    for seed in 0..10 {
        let (temporal, _, _) = synthetic(&profiles, 2000, seed);
        let x = temporal.to_real::<f64>();
        let config = KMeansConfig { seed, ..Default::default() };
        let curve = elbow_sse_curve(x.view(), 1, 10, &config).map_err(|e| e.to_string())?;
        let k = detect_elbow(&curve).map_err(|e| e.to_string())?.k;
        chosen.push(k);
        if k == 4 {
            hits += 1;
        }
    }
    let hand = ElbowCurve {
        points: vec![(1, 100.0), (2, 40.0), (3, 15.0), (4, 13.0), (5, 12.0), (6, 11.0)],
        chosen_k: None,
    };
    let hand_k = detect_elbow(&hand).map_err(|e| e.to_string())?.k;
    check(hits >= 9 && hand_k == 3, format!("k=4 in {hits}/10 seeds {chosen:?}; hand curve -> {hand_k}"))
}

/// `D^-1/2 A D^-1/2` with the kernel computed from scratch.
fn oracle_m(x: &Array2<u8>, gamma: f64) -> Array2<f64> {
    let n = x.nrows();
    let a = Array2::from_shape_fn((n, n), |(i, j)| {
        let d: u32 = x.row(i).iter().zip(x.row(j)).map(|(p, q)| u32::from(p != q)).sum();
        (-gamma * d as f64).exp()
    });
    let deg: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| a[(i, j)] / (deg[i] * deg[j]).sqrt())
}

fn criterion_3() -> Outcome {
    let (temporal, _, _) = synthetic(&acceptance_profiles(), 400, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random = Array2::from_shape_fn((120, 60), |_| u8::from(rng.random_bool(0.3)));
    let cases = [
        (temporal.values.slice(ndarray::s![..200, ..]).to_owned(), 4usize),
        (random, 6),
    ];
    let mut worst_res = 0.0f64;
    let mut worst_norm = 0.0f64;
    for (x, k) in cases {
        let gamma = 1.0 / x.ncols() as f64;
        let aff = laplacian_kernel_affinity(&hamming_distance_matrix(x.view()), gamma).map_err(|e| e.to_string())?;
        let emb = normalized_laplacian_embedding(&aff, k, &EigenOptions::default()).map_err(|e| e.to_string())?;
        let m = oracle_m(&x, gamma);
        for (c, lambda) in emb.eigenvalues.iter().enumerate() {
            let v = emb.eigenvectors.column(c);
            let mv = m.dot(&v);
            let r = mv.iter().zip(v.iter()).map(|(a, b)| (a - lambda * b).abs()).fold(0.0, f64::max);
            worst_res = worst_res.max(r);
        }
        for row in emb.values.rows() {
            let norm = row.dot(&row).sqrt();
            worst_norm = worst_norm.max((norm - 1.0).abs());
        }
    }
    check(
        worst_res <= 1e-8 && worst_norm <= 1e-9,
        format!("max |Mv - lambda v| = {worst_res:.2e}, max | |row| - 1 | = {worst_norm:.2e}"),
    )
}

fn sse_of(x: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<usize> = (0..x.nrows()).filter(|i| labels[*i] == c).collect();
        if members.is_empty() {
            return f64::INFINITY;
        }
        let centroid = x.select(Axis(0), &members).mean_axis(Axis(0)).unwrap();
        for i in members {
            total += x.row(i).iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    total
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

fn criterion_4() -> Outcome {
    let x = arr2(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]);
    let fit = kmeans_best(x.view(), 2, &KMeansConfig::default()).map_err(|e| e.to_string())?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..16 {
        let labels: Vec<usize> = (0..4).map(|i| ((mask >> i) & 1) as usize).collect();
        let sse = sse_of(&x, &labels, 2);
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, labels));
        }
    }
    let (brute_sse, brute_labels) = best.unwrap();
    let fixture_ok = fit.sse == 1.0 && brute_sse == 1.0 && same_partition(&fit.labels, &brute_labels);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut increases = 0;
    for inst in 0..100 {
        let n = rng.random_range(10..80);
        let d = rng.random_range(1..6);
        let k = rng.random_range(1..=6.min(n));
        let y = Array2::from_shape_fn((n, d), |_| rng.random_range(-5.0..5.0));
        let run = lloyd(y.view(), k, 100, 0.0, &mut restart_rng(inst, 0)).map_err(|e| e.to_string())?;
        increases += run.sse_history.windows(2).filter(|w| w[1] > w[0]).count();
    }
    check(
        fixture_ok && increases == 0,
        format!("fixture SSE={} (brute force {brute_sse}); {increases} SSE increases over 100 runs", fit.sse),
    )
}

fn criterion_5() -> Outcome {
    let table = ContingencyTable::unlabeled(arr2(&[[10u64, 20], [20, 10]]));
    let plain: ChiSquareResult = chi_square_test(&table, false).map_err(|e| e.to_string())?;
    let yates = chi_square_test(&table, true).map_err(|e| e.to_string())?;
    // E = 15 in every cell: 4 * 5^2 / 15 and 4 * 4.5^2 / 15; p = erfc(sqrt(x / 2))
    let want = [(plain.statistic, 20.0 / 3.0), (yates.statistic, 5.4)];
    let want_p = [(plain.p_value, 0.009_823_274_507_519_24), (yates.p_value, 0.020_136_751_550_346_3)];
    let crit = [(chi2_sf(3.841, 1).unwrap(), 0.05), (chi2_sf(13.277, 4).unwrap(), 0.01)];
    let ok = want.iter().all(|(g, w)| (g - w).abs() <= 1e-4)
        && want_p.iter().all(|(g, w)| (g - w).abs() <= 1e-4)
        && crit.iter().all(|(g, w)| (g - w).abs() <= 5e-4);
    check(
        ok,
        format!(
            "plain {:.4}/{:.5}, Yates {:.4}/{:.5}, sf(3.841,1)={:.4}, sf(13.277,4)={:.4}",
            plain.statistic, plain.p_value, yates.statistic, yates.p_value, crit[0].0, crit[1].0
        ),
    )
}

fn criterion_6() -> Outcome {
    let t = bonferroni_threshold(0.05, 15);
    check(t == 0.05 / 15.0, format!("alpha 0.05 over 15 tests -> {t}"))
}

fn random_design(n: usize, rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<String>) {
    let x = Array2::from_shape_fn((n, 3), |(_, j)| if j == 2 { 1.0 } else { rng.random_range(-1.0..1.0) });
    (x, vec!["a".into(), "b".into(), "Constant".into()])
}

fn criterion_7() -> Outcome {
    let opts = MlrOptions::default();
    // intercept only: 30 / 50 / 20
    let y0: Vec<usize> = [0usize; 30].into_iter().chain([1; 50]).chain([2; 20]).collect();
    let ones = Array2::from_elem((100, 1), 1.0);
    let fit0 = fit_multinomial_logit(ones.view(), &["Constant".to_string()], &y0, 0, &opts).map_err(|e| e.to_string())?;
    let closed = [(50.0f64 / 30.0).ln(), (20.0f64 / 30.0).ln()];
    let closed_err = (0..2).map(|r| (fit0.coefficients[(r, 0)] - closed[r]).abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (x, _) = random_design(50, &mut rng);
    let y: Vec<usize> = (0..50).map(|i| i % 3).collect();
    let beta = Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0));
    let g = mlr_gradient(&beta, x.view(), &y, 0).unwrap();
    let h = 1e-6;
    let mut fd = Array2::<f64>::zeros(beta.dim());
    for idx in ndarray::indices(beta.dim()) {
        let mut up = beta.clone();
        up[idx] += h;
        let mut dn = beta.clone();
        dn[idx] -= h;
        fd[idx] = (log_likelihood(&up, x.view(), &y, 0).unwrap() - log_likelihood(&dn, x.view(), &y, 0).unwrap()) / (2.0 * h);
    }
    let grad_rel = (&g - &fd).iter().map(|v| v.abs()).fold(0.0, f64::max) / g.iter().map(|v| v.abs()).fold(0.0, f64::max);

    let (xi, names) = random_design(400, &mut rng);
    let yi: Vec<usize> = (0..400)
        .map(|i| {
            let u: f64 = rng.random();
            let shift = 0.3 * xi[(i, 0)] - 0.4 * xi[(i, 1)];
            if u < 0.3 + shift * 0.2 {
                0
            } else if u < 0.7 {
                1
            } else {
                2
            }
        })
        .collect();
    let fit_a: MlrFit = fit_multinomial_logit(xi.view(), &names, &yi, 0, &opts).map_err(|e| e.to_string())?;
    let fit_b: MlrFit = fit_multinomial_logit(xi.view(), &names, &yi, 2, &opts).map_err(|e| e.to_string())?;
    let pa = fit_a.predict_proba(xi.view()).unwrap();
    let pb = class_probabilities(&fit_b.coefficients, xi.view(), 2).unwrap();
    let invariance = (&pa - &pb).iter().map(|v| v.abs()).fold(0.0, f64::max);

    let params = fit_a.coefficients.len() as f64;
    let aic_exact = fit_a.aic == 2.0 * params - 2.0 * fit_a.log_likelihood;
    let rrr_exact = fit_a.rrr.iter().zip(fit_a.coefficients.iter()).all(|(r, c)| *r == c.exp());
    check(
        closed_err <= 1e-8 && grad_rel <= 1e-5 && invariance <= 1e-8 && aic_exact && rrr_exact,
        format!(
            "closed form err {closed_err:.1e}, gradient rel err {grad_rel:.1e}, reference swap {invariance:.1e}, \
             AIC identity {aic_exact}, RRR=exp(coef) {rrr_exact}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut cohorts = 0;
    let mut mismatches = 0;
    for (profiles, n, seed) in [(acceptance_profiles(), 600, 8), (paper_like_profiles(), 600, 9), (acceptance_profiles(), 300, 10)] {
        let (temporal, aggregate, _) = synthetic(&profiles, n, seed);
        let s = temporal.slot_count;
        let or = Array2::from_shape_fn(aggregate.values.dim(), |(i, j)| {
            (0..s).map(|t| temporal.values[(i, j * s + t)]).max().unwrap()
        });
        cohorts += 1;
        if or != aggregate.values || temporal.patient_ids != aggregate.patient_ids || temporal.collapse_slots().values != or {
            mismatches += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap();
    let mut bad = 0;
    for _ in 0..100_000 {
        let index = base + chrono::Duration::days(rng.random_range(0..3318));
        let slot = rng.random_range(1..=6);
        let offset = rng.random_range(0..183);
        let event = slot_date(index, slot, 183, offset);
        let days = (index - event).num_days();
        if assign_timeslot(event, index, 183, 6) != Some(slot) || days / 183 + 1 != slot as i64 {
            bad += 1;
        }
    }
    check(
        mismatches == 0 && bad == 0,
        format!("{mismatches}/{cohorts} cohorts differ from the slot OR; {bad}/100000 timeslot round trips fail"),
    )
}

fn run_all(config: &Path, out: &Path, threads: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_adsubtype"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .arg("all")
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("`all` exited with {status}"))
    }
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"seed": 9, "synth": {"n_patients": 2000, "profiles": "acceptance"}}"#).unwrap();
    let runs = [("a", 1), ("b", 1), ("c", 4)];
    let mut trees = Vec::new();
    for (name, threads) in runs {
        let out = dir.path().join(name);
        run_all(&config, &out, threads)?;
        trees.push(read_tree(&out));
    }
    let manifests_equal = trees.iter().all(|t| t.get("manifest.json").is_some() && t["manifest.json"] == trees[0]["manifest.json"]);
    let trees_equal = trees.iter().all(|t| *t == trees[0]);
    check(
        manifests_equal && trees_equal,
        format!("{} files per run; repeated run identical {}, 1 vs 4 threads identical {}", trees[0].len(), trees[0] == trees[1], trees[0] == trees[2]),
    )
}

fn grid_fixture() -> TestGrid {
    let p = |v: f64| Ok(ChiSquareResult {
        statistic: 1.0,
        df: 1,
        p_value: v,
        yates_applied: false,
        expected_min: 5.0,
        warning: None,
    });
    let row = |label: &str, cells: Vec<Result<ChiSquareResult, String>>| GridRow {
        label: label.into(),
        variable: label.into(),
        level: None,
        cells: ["0 vs. 1", "0 vs. 2", "All-clusters"]
            .iter()
            .zip(cells)
            .map(|(c, r)| GridCell { column: c.to_string(), result: r })
            .collect(),
    };
    TestGrid {
        columns: vec!["0 vs. 1".into(), "0 vs. 2".into(), "All-clusters".into()],
        rows: vec![
            row("Sex", vec![p(0.0004), p(0.001), p(0.0011)]),
            row("White", vec![p(0.0416), Err("single value".into()), p(1e-12)]),
            row("Mortality", vec![p(0.5), p(1.0), p(0.1)]),
        ],
    }
}

fn mlr_fixture() -> MlrFit {
    let m = |a: [[f64; 3]; 2]| arr2(&a);
    MlrFit {
        predictors: vec!["Sex:Male".into(), "Race:Asian".into(), "Constant".into()],
        classes: vec![1, 2],
        class_sizes: vec![100, 80, 60],
        reference_cluster: 0,
        coefficients: m([[0.2127, -1.1209, 0.5], [-10.8, 0.01, -0.3]]),
        robust_se: m([[0.042, 0.651, 0.1], [2.5, 0.2, 0.05]]),
        rrr: m([[1.237, 0.326, 1.6487], [0.00002, 1.01, 0.7408]]),
        z: m([[5.06, -1.72, 5.0], [-4.32, 0.05, -6.0]]),
        p_values: m([[0.0099, 0.0999, 0.01], [0.0499, 0.1, 0.05]]),
        log_likelihood: -37_810.275,
        aic: 75_632.55,
        n_obs: 240,
        iterations: 5,
        gradient_norm: 0.0,
    }
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let grid = dir.path().join("stats_grid.csv");
    write_stats_grid(&grid, None, &grid_fixture()).map_err(|e| e.to_string())?;
    let fit = mlr_fixture();
    write_mlr(&dir.path().join("mlr.csv"), None, &fit).map_err(|e| e.to_string())?;
    write_mlr_table(&dir.path().join("mlr_table.csv"), None, &fit).map_err(|e| e.to_string())?;
    let mut differ = Vec::new();
    for name in ["stats_grid.csv", "mlr.csv", "mlr_table.csv"] {
        let got = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let want = std::fs::read_to_string(golden.join(name)).unwrap();
        if got != want {
            eprintln!("--- {name} got:\n{got}--- expected:\n{want}");
            differ.push(name);
        }
    }
    check(differ.is_empty(), format!("3 golden files, mismatched: {differ:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("planted-subtype recovery", criterion_1),
        ("elbow correctness", criterion_2),
        ("eigen fidelity", criterion_3),
        ("k-means oracle", criterion_4),
        ("chi-square oracle", criterion_5),
        ("bonferroni", criterion_6),
        ("mlr oracle", criterion_7),
        ("structural consistency", criterion_8),
        ("determinism", criterion_9),
        ("format fidelity", criterion_10),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = f();
        let (tag, msg) = match &outcome {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        println!("criterion {:>2} {tag}: {name}: {msg}", i + 1);
        if outcome.is_err() {
            failed.push(i + 1);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
