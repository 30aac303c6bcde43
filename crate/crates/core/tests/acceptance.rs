//! Acceptance suite: one PASS/FAIL line per criterion, then a single assert.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use kdict::cli::{evaluate, train_restarts};
use kdict::dataset::{generate_synthetic, split, Role, SynthConfig, TimeSeries, DEFAULT_FRACTIONS};
use kdict::dictionary_learning::{
    atom_gradient, atom_objective, init_dictionary, train_nnksc, train_nnksc_with, EpochControl, EpochRecord,
    TrainConfig, TrainObserver,
};
use kdict::dtw_gram::{distance_matrix, dtw_distance, gram_from_distances, GramMatrix};
use kdict::lc_classifier::{
    augment_kernel, build_label_structures, purity_mask, train_lc_with_distances, LabelMatrix, LcConfig, LcModel,
};
use kdict::sparse_coding::{k_nnls, kkt_residual, nn_komp, Dictionary, SparseCodeMatrix, DEFAULT_TOL};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

fn linear(f: &DMatrix<f64>) -> GramMatrix {
    GramMatrix::from_psd(f.transpose() * f, 1.0).unwrap()
}

/// Accelerated projected gradient with restarts on the explicit problem
/// `min ½‖y − Dx‖², x ≥ 0`, run until the iterate stops moving.
fn pg_nnls(d: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let h = d.transpose() * d;
    let g0 = d.transpose() * y;
    let l = h.clone().symmetric_eigen().eigenvalues.max().max(1e-300);
    let f = |x: &DVector<f64>| 0.5 * x.dot(&(&h * x)) - g0.dot(x);
    let mut x = DVector::zeros(d.ncols());
    let mut z = x.clone();
    let mut t = 1.0f64;
    for _ in 0..2_000_000 {
        let next = (&z - (&h * &z - &g0) / l).map(|v| v.max(0.0));
        if f(&next) > f(&x) {
            // restart momentum
            z = x.clone();
            t = 1.0;
            continue;
        }
        let tn = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = &next + (&next - &x) * ((t - 1.0) / tn);
        let moved = (&next - &x).amax();
        x = next;
        t = tn;
        if moved < 1e-16 {
            break;
        }
    }
    // plain projected steps to polish
    for _ in 0..10_000 {
        let next = (&x - (&h * &x - &g0) / l).map(|v| v.max(0.0));
        let moved = (&next - &x).amax();
        x = next;
        if moved == 0.0 {
            break;
        }
    }
    x
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_dx = 0.0f64;
    let mut worst_kkt = 0.0f64;
    let mut solve_time = 0.0;
    for inst in 0..200 {
        let n = rng.random_range(2..=20);
        let s = rng.random_range(1..=n.min(8));
        let f = rand_mat(&mut rng, n + 2, n, -1.0, 1.0);
        let a = rand_mat(&mut rng, n, s, 0.0, 1.0);
        let y = rand_mat(&mut rng, n + 2, 1, -1.0, 1.0).column(0).into_owned();
        let g = linear(&f);
        let k_row = f.transpose() * &y;
        let t0 = Instant::now();
        let x = k_nnls(&k_row, &g, &a, DEFAULT_TOL).map_err(|e| format!("instance {inst}: {e}"))?;
        solve_time += t0.elapsed().as_secs_f64();
        let oracle = pg_nnls(&(&f * &a), &y);
        let b = a.transpose() * g.values() * &a;
        let z = a.transpose() * &k_row;
        worst_dx = worst_dx.max((&x - &oracle).amax());
        worst_kkt = worst_kkt.max(kkt_residual(&b, &z, &x));
        check(x.iter().all(|v| *v >= 0.0), format!("instance {inst}: negative entry"))?;
    }
    check(worst_dx <= 1e-8, format!("max |x − oracle| = {worst_dx:.3e}"))?;
    check(worst_kkt <= 1e-8, format!("max KKT residual = {worst_kkt:.3e}"))?;
    check(solve_time < 10.0, format!("solver time {solve_time:.2} s"))?;
    Ok(format!("200 instances, max |Δx|∞ {worst_dx:.2e}, max KKT {worst_kkt:.2e}, solver time {solve_time:.3} s"))
}

/// Smallest residual over all non-negative codes with at most `t` nonzeros.
/// Every optimum is the unconstrained least-squares fit on its own positive
/// support, so enumerating supports and keeping the non-negative fits is exact.
fn exhaustive_best(d: &DMatrix<f64>, y: &DVector<f64>, t: usize) -> f64 {
    let k = d.ncols();
    let mut best = y.norm_squared();
    for mask in 1u32..(1 << k) {
        if mask.count_ones() as usize > t {
            continue;
        }
        let cols: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let sub = d.select_columns(&cols);
        let Some(x) = (sub.transpose() * &sub).cholesky().map(|c| c.solve(&(sub.transpose() * y))) else {
            continue;
        };
        if x.iter().all(|v| *v >= 0.0) {
            best = best.min((y - &sub * x).norm_squared());
        }
    }
    best
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut misses = 0;
    for inst in 0..100 {
        let k = rng.random_range(1..=6);
        let t = rng.random_range(1..=3);
        let n = rng.random_range(k.max(2)..=12);
        let f = rand_mat(&mut rng, n + 2, n, -1.0, 1.0);
        let g = linear(&f);
        let mut a = rand_mat(&mut rng, n, k, 0.0, 1.0);
        for j in 0..k {
            let norm = (a.column(j).transpose() * g.values() * a.column(j))[(0, 0)].sqrt();
            a.column_mut(j).scale_mut(1.0 / norm);
        }
        let dict = Dictionary::new(a.clone()).map_err(|e| e.to_string())?;
        let y = rand_mat(&mut rng, n + 2, 1, -1.0, 1.0).column(0).into_owned();
        let code = nn_komp(&(f.transpose() * &y), y.norm_squared(), &g, &dict, t, DEFAULT_TOL)
            .map_err(|e| format!("instance {inst}: {e}"))?;
        let achieved = (&y - &f * &a * &code.x).norm_squared();
        let oracle = exhaustive_best(&(&f * &a), &y, t);
        let gap = achieved - oracle;
        if gap > 1e-8 {
            misses += 1;
        }
        worst = worst.max(gap);
    }
    let secs = t0.elapsed().as_secs_f64();
    check(misses == 0, format!("{misses}/100 instances above the exhaustive optimum, worst gap {worst:.3e}"))?;
    check(secs < 30.0, format!("runtime {secs:.1} s"))?;
    Ok(format!("100 instances, worst residual gap {worst:.2e}, {secs:.2} s"))
}

fn path_oracle(a: &TimeSeries, b: &TimeSeries) -> f64 {
    fn cost(a: &TimeSeries, b: &TimeSeries, i: usize, j: usize) -> f64 {
        a.frame(i).iter().zip(b.frame(j)).map(|(x, y)| (x - y) * (x - y)).sum()
    }
    fn best(a: &TimeSeries, b: &TimeSeries, i: usize, j: usize) -> f64 {
        let here = cost(a, b, i, j);
        if i == 0 && j == 0 {
            return here;
        }
        let mut m = f64::INFINITY;
        if i > 0 {
            m = m.min(best(a, b, i - 1, j));
        }
        if j > 0 {
            m = m.min(best(a, b, i, j - 1));
        }
        if i > 0 && j > 0 {
            m = m.min(best(a, b, i - 1, j - 1));
        }
        here + m
    }
    best(a, b, a.len() - 1, b.len() - 1).sqrt()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for p in 0..500 {
        let ch = rng.random_range(1..=3);
        let ta = rng.random_range(1..=12);
        let tb = rng.random_range(1..=(36 / ta).min(12));
        let mk = |rng: &mut ChaCha8Rng, t: usize| {
            TimeSeries::new((0..t * ch).map(|_| rng.random_range(-2.0..2.0)).collect(), ch).unwrap()
        };
        let a = mk(&mut rng, ta);
        let b = mk(&mut rng, tb);
        let d = dtw_distance(&a, &b).map_err(|e| format!("pair {p}: {e}"))?;
        worst = worst.max((d - path_oracle(&a, &b)).abs());
    }
    check(worst <= 1e-12, format!("max deviation {worst:.3e}"))?;
    Ok(format!("500 pairs with T_a·T_b ≤ 36, max deviation {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(3..=10);
        let f = rand_mat(&mut rng, n + 1, n, -1.0, 1.0);
        let k = f.transpose() * &f;
        let e = rand_mat(&mut rng, n, n, -1.0, 1.0);
        let x = rand_mat(&mut rng, n, 1, 0.0, 1.0).column(0).into_owned();
        let a = rand_mat(&mut rng, n, 1, 0.0, 1.0).column(0).into_owned();
        let g = atom_gradient(&k, &e, &x, &a);
        let h = 1e-5;
        let fd = DVector::from_fn(n, |i, _| {
            let mut p = a.clone();
            let mut m = a.clone();
            p[i] += h;
            m[i] -= h;
            (atom_objective(&k, &e, &x, &p) - atom_objective(&k, &e, &x, &m)) / (2.0 * h)
        });
        let rel = (&g - &fd).norm() / g.norm().max(fd.norm()).max(1e-300);
        worst = worst.max(rel);
    }
    check(worst < 1e-4, format!("max relative error {worst:.3e}"))?;
    Ok(format!("50 instances, max relative error {worst:.2e}"))
}

/// Checks feasibility after every epoch under the kernel the run trains on.
struct Feasibility<'a> {
    k: &'a DMatrix<f64>,
    sparsity: usize,
    epochs: usize,
    worst_norm: f64,
    failure: Option<String>,
    mask: Option<(&'a LabelMatrix, &'a [usize])>,
    monotone_gap: f64,
}

impl<'a> Feasibility<'a> {
    fn new(k: &'a DMatrix<f64>, sparsity: usize) -> Self {
        Self { k, sparsity, epochs: 0, worst_norm: 0.0, failure: None, mask: None, monotone_gap: f64::NEG_INFINITY }
    }
}

impl TrainObserver for Feasibility<'_> {
    fn shrink_mask(&self, atom: usize, a: &DVector<f64>) -> Option<Vec<bool>> {
        self.mask.map(|(h, cls)| purity_mask(a, h, cls[atom]))
    }

    fn after_epoch(
        &mut self,
        rec: &EpochRecord,
        dict: &Dictionary,
        codes: &SparseCodeMatrix,
    ) -> kdict::Result<EpochControl> {
        self.epochs += 1;
        self.monotone_gap = self.monotone_gap.max(rec.sweep_after - rec.sweep_before);
        let a = dict.matrix();
        let x = codes.matrix();
        let mut fail = |m: String| {
            if self.failure.is_none() {
                self.failure = Some(format!("epoch {}: {m}", rec.epoch));
            }
        };
        if a.iter().any(|v| !(*v >= 0.0)) {
            fail("negative dictionary entry".into());
        }
        if x.iter().any(|v| !(*v >= 0.0)) {
            fail("negative code entry".into());
        }
        if codes.max_column_nnz() > self.sparsity {
            fail(format!("code with {} nonzeros", codes.max_column_nnz()));
        }
        for j in 0..a.ncols() {
            let n = (a.column(j).transpose() * self.k * a.column(j))[(0, 0)];
            self.worst_norm = self.worst_norm.max((n - 1.0).abs());
        }
        Ok(EpochControl::Continue)
    }
}

fn criterion_5() -> Outcome {
    let ds = generate_synthetic(&SynthConfig { classes: 3, per_class: 20, seed: 7, ..SynthConfig::default() })
        .map_err(|e| e.to_string())?;
    let dist = distance_matrix(ds.series()).map_err(|e| e.to_string())?;
    let gram = gram_from_distances(&dist, None).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { k: 6, sparsity: 2, lambda: 0.1, ..TrainConfig::default() };
    let mut obs = Feasibility::new(gram.values(), 2);
    let out = train_nnksc_with(&gram, &cfg, None, &mut obs).map_err(|e| e.to_string())?;
    let first = out.trace.epochs[0].coding_error_percent;
    let ratio = out.final_rec_error_percent / first;
    check(obs.monotone_gap <= 1e-8, format!("stage-(b) objective rose by {:.3e}", obs.monotone_gap))?;
    check(ratio < 0.5, format!("final error {:.3}% vs epoch-0 coding error {first:.3}%", out.final_rec_error_percent))?;
    Ok(format!(
        "{} epochs, max stage-(b) change {:.2e}, final error {:.2}% = {:.1}% of epoch-0 {:.2}%",
        out.trace.len(),
        obs.monotone_gap,
        out.final_rec_error_percent,
        100.0 * ratio,
        first
    ))
}

fn criterion_6() -> Outcome {
    let mut runs = 0;
    let mut epochs = 0;
    let mut worst_norm = 0.0f64;
    let mut worst_eig = f64::INFINITY;
    for seed in [7u64, 8, 9] {
        let ds = generate_synthetic(&SynthConfig { seed, noise_sd: 0.1, ..SynthConfig::default() })
            .map_err(|e| e.to_string())?;
        let dist = distance_matrix(ds.series()).map_err(|e| e.to_string())?;
        let gram = gram_from_distances(&dist, None).map_err(|e| e.to_string())?;
        worst_eig = worst_eig.min(gram.min_eigenvalue());
        for (t, lambda) in [(2usize, 0.1), (4, 0.0), (3, 0.5)] {
            let cfg = TrainConfig { k: 6, sparsity: t, lambda, epochs: 15, rng_seed: seed, ..TrainConfig::default() };
            let mut obs = Feasibility::new(gram.values(), t);
            train_nnksc_with(&gram, &cfg, None, &mut obs).map_err(|e| e.to_string())?;
            if let Some(f) = obs.failure {
                return Err(format!("plain run seed {seed}, T={t}: {f}"));
            }
            runs += 1;
            epochs += obs.epochs;
            worst_norm = worst_norm.max(obs.worst_norm);
        }

        // label-consistent run: augmented kernel, stratified init, purity masks
        let sp = split(&ds, DEFAULT_FRACTIONS, seed).map_err(|e| e.to_string())?;
        let train = sp.indices(Role::Train);
        let labels: Vec<usize> = train.iter().map(|&i| ds.labels()[i]).collect();
        let base = gram_from_distances(&dist.select(&train), None).map_err(|e| e.to_string())?;
        worst_eig = worst_eig.min(base.min_eigenvalue());
        let (h, q) = build_label_structures(&labels, 3, 6).map_err(|e| e.to_string())?;
        let kt = augment_kernel(&base, &h, &q, 1.0, 5.0).map_err(|e| e.to_string())?;
        worst_eig = worst_eig.min(kt.min_eigenvalue());
        let cfg = TrainConfig { k: 6, sparsity: 4, epochs: 15, rng_seed: seed, ..TrainConfig::default() };
        let init = init_dictionary(&kt, 6, Some((&labels, q.atom_class())), seed).map_err(|e| e.to_string())?;
        let mut obs = Feasibility::new(kt.values(), 4);
        obs.mask = Some((&h, q.atom_class()));
        train_nnksc_with(&kt, &cfg, Some(init), &mut obs).map_err(|e| e.to_string())?;
        if let Some(f) = obs.failure {
            return Err(format!("label-consistent run seed {seed}: {f}"));
        }
        runs += 1;
        epochs += obs.epochs;
        worst_norm = worst_norm.max(obs.worst_norm);
    }
    check(worst_norm < 1e-8, format!("max |a_jᵀKa_j − 1| = {worst_norm:.3e}"))?;
    check(worst_eig >= -1e-10, format!("min Gram eigenvalue {worst_eig:.3e}"))?;
    Ok(format!(
        "{runs} runs, {epochs} epochs feasible, max |a_jᵀKa_j − 1| {worst_norm:.1e}, min eigenvalue {worst_eig:.1e}"
    ))
}

struct Benchmark {
    model: LcModel,
    val: Vec<TimeSeries>,
}

fn benchmark_setup() -> (kdict::dataset::LabeledDataset, kdict::dataset::SplitAssignment, kdict::dtw_gram::DistanceMatrix) {
    let ds = generate_synthetic(&SynthConfig {
        classes: 3,
        per_class: 20,
        noise_sd: 0.1,
        warp: true,
        seed: 7,
        ..SynthConfig::default()
    })
    .unwrap();
    let sp = split(&ds, DEFAULT_FRACTIONS, 0).unwrap();
    let dist = distance_matrix(ds.series()).unwrap();
    (ds, sp, dist)
}

fn criterion_7(keep: &mut Option<Benchmark>) -> Outcome {
    let t0 = Instant::now();
    let (ds, sp, dist) = benchmark_setup();
    let cfg = LcConfig {
        train: TrainConfig { k: 6, sparsity: 4, ..TrainConfig::default() },
        alpha: 1.0,
        beta: 5.0,
        ..LcConfig::default()
    };
    let model = train_restarts(&ds, &sp, 0, &dist, &cfg, 10).map_err(|e| e.to_string())?;
    let train_idx = sp.indices(Role::Train);
    let val_idx = sp.indices(Role::Validation);
    let report = evaluate(&model, &ds, &dist, &train_idx, &val_idx, "validation").map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    println!("{}", report.to_text().trim_end());
    let lc = &report.methods[0];
    let acc = lc.accuracy_percent;
    let purity = lc.purity.as_ref().ok_or("no purity")?;
    let min_ds = purity.per_atom.iter().map(|d| d.unwrap_or(0.0)).fold(f64::INFINITY, f64::min);
    let sparsity = lc.sparsity.as_ref().ok_or("no sparsity")?;
    let wsp = sparsity.worst;
    let knn = report.methods.iter().find(|m| m.method.starts_with("kNN")).ok_or("kNN row missing")?;
    *keep = Some(Benchmark { val: val_idx.iter().map(|&i| ds.series()[i].clone()).collect(), model });
    check(acc >= 90.0, format!("validation accuracy {acc:.2}%"))?;
    check(min_ds >= 98.0, format!("an atom has DS {min_ds:.2}"))?;
    check(
        wsp <= 4,
        format!(
            "wSP = {wsp} (per-class {:?}); accuracy {acc:.2}%, min DS {min_ds:.2}, {secs:.1} s",
            sparsity.per_class
        ),
    )?;
    check(secs < 120.0, format!("runtime {secs:.1} s"))?;
    Ok(format!(
        "validation accuracy {acc:.2}%, min DS {min_ds:.1}, wSP {wsp}, kNN {:.2}%, {secs:.1} s",
        knn.accuracy_percent
    ))
}

fn criterion_8() -> Outcome {
    let (ds, sp, dist) = benchmark_setup();
    let cfg = LcConfig {
        train: TrainConfig { k: 6, sparsity: 4, epochs: 20, rng_seed: 3, ..TrainConfig::default() },
        alpha: 0.0,
        beta: 0.0,
        sigma: None,
        patience: None,
    };
    let model = train_lc_with_distances(&ds, &sp, &dist, &cfg).map_err(|e| e.to_string())?;
    let train = sp.indices(Role::Train);
    let labels: Vec<usize> = train.iter().map(|&i| ds.labels()[i]).collect();
    let gram = gram_from_distances(&dist.select(&train), None).map_err(|e| e.to_string())?;
    let (_, q) = build_label_structures(&labels, 3, 6).map_err(|e| e.to_string())?;
    let init = init_dictionary(&gram, 6, Some((&labels, q.atom_class())), 3).map_err(|e| e.to_string())?;
    let plain = train_nnksc(&gram, &cfg.train, Some(init)).map_err(|e| e.to_string())?;
    let same_a = model
        .dictionary()
        .matrix()
        .iter()
        .zip(plain.dictionary.matrix().iter())
        .all(|(p, q)| p.to_bits() == q.to_bits());
    check(same_a, "dictionaries differ".into())?;
    check(model.trace == plain.trace, "epoch traces differ".into())?;
    Ok(format!("{} epochs, dictionary and per-epoch objectives bit-identical", plain.trace.len()))
}

fn criterion_9(bench: Option<&Benchmark>) -> Outcome {
    let b = bench.ok_or("benchmark model unavailable")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.json");
    b.model.save(&path).map_err(|e| e.to_string())?;
    let back = LcModel::load(&path).map_err(|e| e.to_string())?;
    let x = b.model.classify(&b.val).map_err(|e| e.to_string())?;
    let y = back.classify(&b.val).map_err(|e| e.to_string())?;
    check(x.labels == y.labels, "labels differ".into())?;
    let bits = |m: &DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    check(bits(&x.scores) == bits(&y.scores), "scores differ".into())?;
    check(bits(x.codes.matrix()) == bits(y.codes.matrix()), "codes differ".into())?;
    Ok(format!("{} validation queries, labels, scores and codes bit-identical", b.val.len()))
}

fn run_pipeline(bin: &Path, root: &Path, out: &str) -> Result<Vec<u8>, String> {
    let run = |args: &[&str]| -> Result<(), String> {
        let o = Command::new(bin).args(args).env_remove("KDICT_CACHE_DIR").output().map_err(|e| e.to_string())?;
        if o.status.success() {
            Ok(())
        } else {
            Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr)))
        }
    };
    let out_dir = root.join(out);
    let o = out_dir.to_str().unwrap();
    run(&["synth", "--out", o, "--noise-sd", "0.1", "--per-class", "12", "--seed", "5"])?;
    let data = out_dir.join("synthetic.jsonl");
    let d = data.to_str().unwrap();
    run(&["train", "--data", d, "--out", o, "--restarts", "3", "--k", "2C", "--T", "4", "--seed", "1", "--split-seed", "2"])?;
    let model = out_dir.join("model.json");
    run(&["eval", "--data", d, "--model", model.to_str().unwrap(), "--out", o])?;
    let mut bytes = std::fs::read(&model).map_err(|e| e.to_string())?;
    bytes.extend(std::fs::read(out_dir.join("trace.csv")).map_err(|e| e.to_string())?);
    bytes.extend(std::fs::read(out_dir.join("report.json")).map_err(|e| e.to_string())?);
    Ok(bytes)
}

fn criterion_10() -> Outcome {
    let bin = Path::new(env!("CARGO_BIN_EXE_kdict"));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = run_pipeline(bin, dir.path(), "run1")?;
    let b = run_pipeline(bin, dir.path(), "run2")?;
    let model1 = std::fs::read(dir.path().join("run1/model.json")).map_err(|e| e.to_string())?;
    let model2 = std::fs::read(dir.path().join("run2/model.json")).map_err(|e| e.to_string())?;
    check(model1 == model2, "model files differ".into())?;
    check(a == b, "trace or report files differ".into())?;
    Ok(format!("synth → train → eval twice: model.json ({} bytes), trace.csv, report.json identical", model1.len()))
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

#[test]
fn acceptance() {
    let mut bench = None;
    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "K-NNLS matches projected-gradient oracle", guarded(criterion_1)),
        (2, "NN-KOMP matches exhaustive support enumeration", guarded(criterion_2)),
        (3, "DTW matches path-recursion oracle", guarded(criterion_3)),
        (4, "atom gradient matches central differences", guarded(criterion_4)),
        (5, "training monotonicity", guarded(criterion_5)),
        (6, "feasibility after every epoch", guarded(criterion_6)),
        (7, "synthetic classification benchmark", guarded(|| criterion_7(&mut bench))),
        (8, "zero label weights reduce to plain training", guarded(criterion_8)),
        (9, "model persistence round-trip", guarded(|| criterion_9(bench.as_ref()))),
        (10, "CLI pipeline determinism", guarded(criterion_10)),
    ];
    let mut failed = Vec::new();
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(why) => {
                println!("FAIL {n:>2} {name}: {why}");
                failed.push(*n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
