//! End-to-end acceptance checks, one line per criterion.
//!
//! Pass criterion numbers as arguments to run a subset:
//! `cargo test --release --test acceptance -- 1 4 5`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use oamtopo::homology::oracle::{cubical_complex, oracle_persistence, rips_complex};
use oamtopo::homology::{cubical_persistence, rips_persistence, FiltrationMode, PersistenceDiagram, PersistencePoint, PointCloud3};
use oamtopo::optics::{inner_product, lg_field, phase_winding, encode};
use oamtopo::pipeline::sweep::parse_csv;
use oamtopo::pipeline::{ModelKind, SweepRow, SweepSummary};
use oamtopo::turbulence::{phase_screen, TurbulenceSpec};
use oamtopo::vectorize::{project, project_backward};
use oamtopo::autonet::{conv_stack, mlp, InitScheme};
use oamtopo::{rng, GridSpec, Image, Kernel, KernelBank, Message, Model, ModelInput, ModeSet, NormMode, Tensor};

type Outcome = Result<String, String>;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_oamtopo")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.1?}, limit {limit:?}"))
    }
}

// --- 1: parameter and FLOP accounting ---------------------------------------

/// Displayed value and half a unit of its last digit.
const ALEXNET_PARAMS: [(&str, f64, f64); 8] = [
    ("conv1", 35e3, 0.5e3),
    ("conv2", 615e3, 0.5e3),
    ("conv3", 885e3, 0.5e3),
    ("conv4", 1.33e6, 0.005e6),
    ("conv5", 885e3, 0.5e3),
    ("fc6", 38e6, 0.5e6),
    ("fc7", 17e6, 0.5e6),
    ("fc8", 4e6, 0.5e6),
];

fn parse_human(s: &str) -> Option<f64> {
    let mut it = s.split_whitespace();
    let x: f64 = it.next()?.parse().ok()?;
    let scale = match it.next() {
        Some("K") => 1e3,
        Some("M") => 1e6,
        Some("G") => 1e9,
        None => 1.0,
        _ => return None,
    };
    Some(x * scale)
}

fn criterion_flops() -> Outcome {
    let start = Instant::now();
    let out = Command::new(bin())
        .args(["flops", "--arch", "alexnet"])
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if !out.status.success() {
        return Err(format!("exit {:?}", out.status.code()));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let row = |name: &str| text.lines().find(|l| l.split_whitespace().next() == Some(name)).map(str::to_owned);
    let mut failures = Vec::new();
    for (name, shown, half) in ALEXNET_PARAMS {
        let params: f64 = row(name)
            .and_then(|l| l.split_whitespace().nth(1)?.parse().ok())
            .ok_or(format!("no row {name}"))?;
        if (params - shown).abs() > half {
            failures.push(format!("{name} {params}"));
        }
    }
    let total = row("total").ok_or("no total row")?;
    let cols: Vec<&str> = total.split_whitespace().collect();
    let params: f64 = cols[1].parse().map_err(|_| "total params")?;
    let backward = parse_human(&cols[cols.len() - 2..].join(" ")).ok_or("total backward")?;
    let param_err = (params - 62.75e6).abs() / 62.75e6;
    let flop_err = (backward - 340e9).abs() / 340e9;
    within(elapsed, Duration::from_secs(1))?;
    check(
        failures.is_empty() && param_err <= 0.02 && flop_err <= 0.5,
        format!(
            "total {params} params ({:.2}% off), backward {:.1} G ({:.0}% off), {elapsed:.2?}{}",
            param_err * 100.0,
            backward / 1e9,
            flop_err * 100.0,
            if failures.is_empty() { String::new() } else { format!(", off: {failures:?}") }
        ),
    )
}

// --- 2: persistence against the boundary-reduction oracle -------------------

fn random_cloud(seed: u64, n: usize, quantized: bool) -> PointCloud3 {
    let mut s = rng::stream(seed);
    let points = (0..n)
        .map(|_| {
            let mut p = [0.0; 3];
            for v in &mut p {
                *v = rng::unit_f64(&mut s);
                if quantized {
                    *v = (*v * 3.0).floor() / 3.0;
                }
            }
            p
        })
        .collect();
    PointCloud3::new(points).unwrap()
}

fn random_image(seed: u64, side: usize, quantized: bool) -> Image {
    let mut s = rng::stream(seed);
    let values = (0..side * side)
        .map(|_| {
            let v = rng::unit_f64(&mut s);
            if quantized {
                (v * 4.0).floor()
            } else {
                v
            }
        })
        .collect();
    Image {
        grid: GridSpec { side, extent: 1.0 },
        values,
    }
}

fn criterion_persistence() -> Outcome {
    let start = Instant::now();
    let mut bad = Vec::new();
    for case in 0..100u64 {
        let n = 3 + (case % 10) as usize;
        let cloud = random_cloud(50_000 + case, n, case % 3 == 0);
        let max_dim = (case % 3) as usize;
        let radius = [0.4, 0.8, 2.0][(case / 3 % 3) as usize];
        let fast = rips_persistence(&cloud, max_dim, radius).map_err(|e| e.to_string())?;
        let slow = oracle_persistence(&rips_complex(&cloud, max_dim, radius)).map_err(|e| e.to_string())?;
        if !fast.same_points(&slow) {
            bad.push(format!("rips {case}"));
        }
    }
    for case in 0..100u64 {
        let side = 2 + (case % 7) as usize;
        let img = random_image(60_000 + case, side, case % 2 == 0);
        let fast = cubical_persistence(&img, 1).map_err(|e| e.to_string())?;
        let slow = oracle_persistence(&cubical_complex(&img)).map_err(|e| e.to_string())?;
        if !fast.same_points(&slow) {
            bad.push(format!("cubical {case}"));
        }
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    check(
        bad.is_empty(),
        format!("200 instances, {} mismatches {bad:?}, {:.2?}", bad.len(), start.elapsed()),
    )
}

// --- 3: gradients against central differences --------------------------------

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

fn random_diagram(s: &mut rng::Stream, n: usize) -> PersistenceDiagram {
    let points = (0..n)
        .map(|i| {
            let dim = (i % 2) as u8;
            let b = if dim == 0 { 0.0 } else { rng::uniform(s, 0.0, 0.8) };
            PersistencePoint::new(dim, b, b + rng::uniform(s, 0.05, 0.6))
        })
        .collect();
    PersistenceDiagram {
        points,
        max_filtration: 1.5,
        source: FiltrationMode::Rips,
    }
}

fn random_bank(s: &mut rng::Stream, n: usize, mode: NormMode) -> KernelBank {
    let kernels = (0..n)
        .map(|i| Kernel {
            mu: [rng::uniform(s, 0.0, 0.8), rng::uniform(s, 0.1, 1.2)],
            sigma: rng::uniform(s, 0.3, 0.8),
            dim: (i % 2) as u8,
        })
        .collect();
    KernelBank::new(kernels, 0.02, mode).unwrap()
}

fn layer_error(s: &mut rng::Stream, mode: NormMode) -> f64 {
    let d = random_diagram(s, 12);
    let mut bank = random_bank(s, 8, mode);
    let up: Vec<f64> = (0..bank.len()).map(|_| rng::uniform(s, -1.0, 1.0)).collect();
    let g = project_backward(&d, &bank, &up).unwrap();
    let objective = |b: &KernelBank| -> f64 { project(&d, b).0.iter().zip(&up).map(|(v, u)| v * u).sum() };
    let h = 1e-6;
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for i in 0..bank.len() {
        for a in 0..3 {
            let orig = if a < 2 { bank.kernels[i].mu[a] } else { bank.kernels[i].sigma };
            let set = |b: &mut KernelBank, v: f64| {
                if a < 2 {
                    b.kernels[i].mu[a] = v;
                } else {
                    b.kernels[i].sigma = v;
                }
            };
            set(&mut bank, orig + h);
            let fp = objective(&bank);
            set(&mut bank, orig - h);
            let fm = objective(&bank);
            set(&mut bank, orig);
            numeric.push((fp - fm) / (2.0 * h));
            analytic.push(if a < 2 { g.mu[i][a] } else { g.sigma[i] });
        }
    }
    rel_err(&analytic, &numeric)
}

/// Zero biases can leave a whole layer dead, putting the next layer exactly on
/// a ReLU kink where central differences are meaningless.
fn randomize_biases(model: &mut Model, s: &mut rng::Stream) {
    for t in &mut model.params.tensors {
        if t.shape.len() == 1 {
            t.data.iter_mut().for_each(|v| *v = rng::uniform(s, -0.5, 0.5));
        }
    }
}

fn model_error(model: &mut Model, inputs: &[ModelInput], labels: &[usize]) -> f64 {
    let analytic = model.loss_and_grad(inputs, labels).unwrap().1.to_flat();
    let mut flat = model.params.to_flat();
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + h;
        model.params.set_flat(&flat).unwrap();
        let fp = model.loss_and_grad(inputs, labels).unwrap().0;
        flat[i] = orig - h;
        model.params.set_flat(&flat).unwrap();
        let fm = model.loss_and_grad(inputs, labels).unwrap().0;
        flat[i] = orig;
        numeric.push((fp - fm) / (2.0 * h));
    }
    model.params.set_flat(&flat).unwrap();
    rel_err(&analytic, &numeric)
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut s = rng::stream(2024);
    let layer: Vec<f64> = (0..10)
        .map(|i| layer_error(&mut s, if i % 2 == 0 { NormMode::Literal } else { NormMode::Squared }))
        .collect();
    let mut network = Vec::new();
    for case in 0..10u64 {
        let err = if case < 5 {
            let spec = if case % 2 == 0 {
                conv_stack(&[1, 8, 8], &[3], 6, 4)
            } else {
                conv_stack(&[2, 8, 8], &[3, 4], 5, 4)
            };
            let shape = spec.input_shape.clone();
            let mut model = Model::new(spec, None, InitScheme::HeUniform, case).unwrap();
            randomize_biases(&mut model, &mut s);
            let inputs: Vec<ModelInput> = (0..3)
                .map(|_| {
                    let n = shape.iter().product();
                    ModelInput::Tensor(Tensor::new(&shape, (0..n).map(|_| rng::uniform(&mut s, -1.0, 1.0)).collect()).unwrap())
                })
                .collect();
            model_error(&mut model, &inputs, &[0, 1, 3])
        } else {
            let mode = if case % 2 == 0 { NormMode::Literal } else { NormMode::Squared };
            let (spec, n) = if case < 8 {
                (mlp(8, 6, 3), 8)
            } else {
                (conv_stack(&[1, 4, 4], &[2], 5, 3), 16)
            };
            let bank = random_bank(&mut s, n, mode);
            let mut model = Model::new(spec, Some(bank), InitScheme::HeUniform, case).unwrap();
            randomize_biases(&mut model, &mut s);
            let inputs: Vec<ModelInput> = (0..3).map(|_| ModelInput::Diagram(random_diagram(&mut s, 10))).collect();
            model_error(&mut model, &inputs, &[0, 1, 2])
        };
        network.push(err);
    }
    let worst = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    within(start.elapsed(), Duration::from_secs(60))?;
    check(
        worst(&layer) < 1e-5 && worst(&network) < 1e-4,
        format!(
            "worst relative error: layer {:.1e}, network {:.1e}, {:.2?}",
            worst(&layer),
            worst(&network),
            start.elapsed()
        ),
    )
}

// --- 4: optics --------------------------------------------------------------

fn criterion_optics() -> Outcome {
    let start = Instant::now();
    let grid = GridSpec::new(256, 3.0).unwrap();
    let modes: Vec<_> = (1..=8).map(|l| lg_field(l, grid)).collect();
    let mut off = 0.0f64;
    let mut norm = 0.0f64;
    for (i, a) in modes.iter().enumerate() {
        for (j, b) in modes.iter().enumerate() {
            let g = inner_product(a, b).map_err(|e| e.to_string())?;
            if i == j {
                norm = norm.max((g.re - 1.0).abs()).max(g.im.abs());
            } else {
                off = off.max(g.norm());
            }
        }
    }
    let set = ModeSet::first_n(4).unwrap();
    for v in 1..16 {
        let f = encode(Message::new(v, 4).unwrap(), &set, grid).map_err(|e| e.to_string())?;
        norm = norm.max((f.power() - 1.0).abs());
    }
    let mut wrong = Vec::new();
    for l in -6..=6 {
        for radius in [0.5, 1.0, 1.5] {
            let w = phase_winding(&lg_field(l, grid), radius).map_err(|e| e.to_string())?;
            if w != l as i64 {
                wrong.push((l, radius, w));
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    check(
        off < 1e-3 && norm <= 1e-8 && wrong.is_empty(),
        format!(
            "max off-diagonal {off:.1e}, normalization error {norm:.1e}, winding errors {wrong:?}, {:.2?}",
            start.elapsed()
        ),
    )
}

// --- 5: turbulence statistics -----------------------------------------------

fn criterion_structure_function() -> Outcome {
    let start = Instant::now();
    let grid = GridSpec::new(128, 3.0).unwrap();
    let level = 10.0;
    let seeds = 120u64;
    let lags = [4usize, 6, 8, 12, 16, 24, 32];
    let n = grid.side;
    let mut sums = vec![0.0; lags.len()];
    let mut counts = vec![0usize; lags.len()];
    let mut r0 = 0.0;
    for seed in 0..seeds {
        let spec = TurbulenceSpec::new(level, grid, seed);
        r0 = spec.fried_parameter();
        let screen = phase_screen(&spec).map_err(|e| e.to_string())?;
        for (k, &lag) in lags.iter().enumerate() {
            for r in 0..n {
                for c in 0..n - lag {
                    sums[k] += (screen.at(r, c + lag) - screen.at(r, c)).powi(2);
                    sums[k] += (screen.at(c + lag, r) - screen.at(c, r)).powi(2);
                    counts[k] += 2;
                }
            }
        }
    }
    let mut worst = 0.0f64;
    let mut ratios = Vec::new();
    for (k, &lag) in lags.iter().enumerate() {
        let measured = sums[k] / counts[k] as f64;
        let theory = 6.88 * (lag as f64 * grid.dx() / r0).powf(5.0 / 3.0);
        let ratio = measured / theory;
        worst = worst.max((ratio - 1.0).abs());
        ratios.push(format!("{ratio:.3}"));
    }
    within(start.elapsed(), Duration::from_secs(120))?;
    check(
        worst <= 0.15,
        format!(
            "{seeds} seeds, measured/theory at lags {lags:?} px = [{}], {:.2?}",
            ratios.join(", "),
            start.elapsed()
        ),
    )
}

// --- 6-8: decoding sweeps ---------------------------------------------------

fn run_sweep(config: &str, out: &Path) -> Result<(Vec<SweepRow>, Duration), String> {
    let start = Instant::now();
    let status = Command::new(bin())
        .args(["sweep", "--config"])
        .arg(configs().join(config))
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("sweep {config} exited {:?}", status.code()));
    }
    let text = std::fs::read_to_string(out).map_err(|e| e.to_string())?;
    Ok((parse_csv(&text).map_err(|e| e.to_string())?, start.elapsed()))
}

fn criterion_noiseless(out: &Path) -> Outcome {
    let (rows, elapsed) = run_sweep("noiseless.toml", out)?;
    let acc = |m| rows.iter().filter(|r| r.model == m).map(|r| r.accuracy).fold(f64::INFINITY, f64::min);
    let (cnn, ph) = (acc(ModelKind::Cnn), acc(ModelKind::PhCnn));
    within(elapsed, Duration::from_secs(15 * 60))?;
    check(
        cnn >= 0.99 && ph >= 0.99,
        format!("cnn {cnn:.4}, ph_cnn {ph:.4}, {elapsed:.1?}"),
    )
}

fn criterion_sweep(out: &Path) -> Outcome {
    let (rows, elapsed) = run_sweep("desk.toml", out)?;
    let summary = SweepSummary::from_rows(&rows);
    let violations = summary.monotonicity_violations(0.02);
    let n = *summary.bits.last().ok_or("empty sweep")?;
    let t = *summary.turbulence.last().ok_or("empty sweep")?;
    let gap = SweepSummary::gap(&rows, n, t);
    within(elapsed, Duration::from_secs(2 * 3600))?;
    check(
        violations.len() <= 2 && gap > 0.0,
        format!(
            "{} rows, monotonicity violations {violations:?}, median gap at n={n} T={t}: {gap:+.4}, {elapsed:.1?}",
            rows.len()
        ),
    )
}

fn criterion_determinism(first: &[PathBuf; 2], dir: &Path) -> Outcome {
    let mut same = Vec::new();
    for (config, prev) in ["noiseless.toml", "desk.toml"].iter().zip(first) {
        let out = dir.join(format!("again-{config}.csv"));
        run_sweep(config, &out)?;
        let a = std::fs::read(prev).map_err(|e| format!("{}: {e}", prev.display()))?;
        let b = std::fs::read(&out).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{config}: CSV differs on rerun"));
        }
        same.push(format!("{config} {} bytes", a.len()));
    }
    Ok(format!("identical: {}", same.join(", ")))
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let dir = tempfile::tempdir().unwrap();
    let csv = [dir.path().join("noiseless.csv"), dir.path().join("desk.csv")];
    let mut failed = 0;
    let mut report = |k: u32, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("criterion {k} PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {k} FAIL {name}: {d}");
            }
        }
    };
    if run(1) {
        report(1, "flops accounting", criterion_flops());
    }
    if run(2) {
        report(2, "persistence vs oracle", criterion_persistence());
    }
    if run(3) {
        report(3, "gradient suite", criterion_gradients());
    }
    if run(4) {
        report(4, "optics suite", criterion_optics());
    }
    if run(5) {
        report(5, "structure function", criterion_structure_function());
    }
    if run(6) || run(8) {
        let outcome = criterion_noiseless(&csv[0]);
        if run(6) {
            report(6, "noiseless decode", outcome);
        }
    }
    if run(7) || run(8) {
        let outcome = criterion_sweep(&csv[1]);
        if run(7) {
            report(7, "desk sweep", outcome);
        }
    }
    if run(8) {
        report(8, "determinism", criterion_determinism(&csv, dir.path()));
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
