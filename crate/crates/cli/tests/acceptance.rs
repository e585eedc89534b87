//! Acceptance criteria, one line per criterion. Runs without the libtest
//! harness so every criterion reports even when an earlier one fails.

use std::f64::consts::SQRT_2;
use std::path::Path;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use tppa_cli::{run_with, EXIT_OK};
use tppa_core::backprop::{run_gradcheck, GradCheckConfig};
use tppa_core::haar4::{analysis, synthesis, FrameCoeffs, CHANNELS};
use tppa_core::harness::{add_awgn, phantom, PhantomKind};
use tppa_core::linops::{gaussian_psf, ConvOperator, Kernel};
use tppa_core::network::{init_theta, tppa_forward};
use tppa_core::rng::SeededRng;
use tppa_core::shrinkage::{step_map_inverse, Degree};
use tppa_core::solver::{fppa_reconstruct, Fppa, FppaConfig};
use tppa_core::Image;

/// Training setup for the learned-vs-TV comparison.
const LEARNED_TRAIN: &[&str] = &[
    "--phantom-kind",
    "blobs",
    "--phantoms",
    "10",
    "--patch",
    "64",
    "--seed",
    "1",
    "--layers",
    "20",
    "--splines",
    "101",
    "--train-iters",
    "100",
    "--lr",
    "5e-4",
    "--restart",
];
const LEARNED_EVAL: &[&str] = &[
    "--phantom-kind",
    "blobs",
    "--phantoms",
    "10",
    "--patch",
    "64",
    "--seed",
    "2",
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_image(rng: &mut SeededRng, rows: usize, cols: usize) -> Image {
    Image::from_fn(rows, cols, |_, _| rng.gaussian())
}

fn random_kernel(rng: &mut SeededRng, size: usize) -> Kernel {
    let taps = Image::from_fn(size, size, |_, _| rng.uniform_in(0.1, 1.0));
    let s = taps.sum();
    Kernel::new(taps.scaled(1.0 / s)).unwrap()
}

fn even_dim(rng: &mut SeededRng, max: usize) -> usize {
    2 * (1 + rng.below(max / 2))
}

fn tppa(args: &[&str]) -> Result<String, String> {
    let mut argv = vec!["tppa"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(argv, &mut out, &mut err);
    let out = String::from_utf8_lossy(&out).into_owned();
    if code == EXIT_OK {
        Ok(out)
    } else {
        Err(format!(
            "{args:?} exited {code}: {}",
            String::from_utf8_lossy(&err).trim()
        ))
    }
}

/// The number following `key` on the first line that contains it.
fn field(stdout: &str, key: &str) -> Result<f64, String> {
    stdout
        .lines()
        .find_map(|l| l.split_once(key).map(|(_, rest)| rest))
        .and_then(|rest| rest.split(|c: char| c == ',' || c.is_whitespace()).next())
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("no {key:?} in output"))
}

fn tight_frame() -> Outcome {
    let mut rng = SeededRng::new(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (r, c) = (even_dim(&mut rng, 64), even_dim(&mut rng, 64));
        let x = random_image(&mut rng, r, c);
        let back = synthesis(&analysis(&x).unwrap()).unwrap().scaled(0.25);
        worst = worst.max(back.max_abs_diff(&x));
    }
    outcome(worst <= 1e-12, format!("max |¼WᵀWx − x| = {worst:.2e} (tol 1e-12)"))
}

fn adjoints() -> Outcome {
    let mut rng = SeededRng::new(202);
    let (mut conv, mut frame) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (r, c) = (even_dim(&mut rng, 32), even_dim(&mut rng, 32));
        let size = 1 + 2 * rng.below(4);
        let op = ConvOperator::new(random_kernel(&mut rng, size), r, c).unwrap();
        let (x, y) = (random_image(&mut rng, r, c), random_image(&mut rng, r, c));
        let hx = op.apply(&x).unwrap();
        let lhs = hx.dot(&y);
        let rhs = x.dot(&op.adjoint(&y).unwrap());
        conv = conv.max((lhs - rhs).abs() / (hx.norm() * y.norm()));

        let u = FrameCoeffs {
            channels: std::array::from_fn(|_| random_image(&mut rng, r, c)),
        };
        let wx = analysis(&x).unwrap();
        let lhs: f64 = (0..CHANNELS).map(|k| wx.channels[k].dot(&u.channels[k])).sum();
        let rhs = x.dot(&synthesis(&u).unwrap());
        frame = frame.max((lhs - rhs).abs() / (wx.norm_sq().sqrt() * u.norm_sq().sqrt()));
    }
    outcome(
        conv <= 1e-10 && frame <= 1e-10,
        format!("conv {conv:.2e}, frame {frame:.2e} (tol 1e-10)"),
    )
}

type Dense = Vec<Vec<f64>>;

fn dense_conv(kernel: &Kernel, rows: usize, cols: usize) -> Dense {
    let (cr, cc) = kernel.center();
    let taps = kernel.taps();
    let mut h = vec![vec![0.0; rows * cols]; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            for a in 0..taps.rows() {
                for b in 0..taps.cols() {
                    let si = (i + rows + cr - a) % rows;
                    let sj = (j + cols + cc - b) % cols;
                    h[i * cols + j][si * cols + sj] += taps[(a, b)];
                }
            }
        }
    }
    h
}

/// `W = (1/(2√2)) [D_x; D_y; A_x; A_y]` with periodic neighbours; the
/// first `2N` rows are the details.
fn dense_frame(rows: usize, cols: usize) -> Dense {
    let n = rows * cols;
    let s = 1.0 / (2.0 * SQRT_2);
    let mut w = vec![vec![0.0; n]; 4 * n];
    for i in 0..rows {
        for j in 0..cols {
            let p = i * cols + j;
            let right = i * cols + (j + 1) % cols;
            let down = ((i + 1) % rows) * cols + j;
            w[p][right] += s;
            w[p][p] -= s;
            w[n + p][down] += s;
            w[n + p][p] -= s;
            w[2 * n + p][right] += s;
            w[2 * n + p][p] += s;
            w[3 * n + p][down] += s;
            w[3 * n + p][p] += s;
        }
    }
    w
}

fn matvec(m: &Dense, x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn matvec_t(m: &Dense, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m[0].len()];
    for (row, &v) in m.iter().zip(y) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * v;
        }
    }
    out
}

fn soft(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

fn dense_oracle() -> Outcome {
    let (rows, cols) = (8, 8);
    let w = dense_frame(rows, cols);
    let mut rng = SeededRng::new(303);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let kernel = random_kernel(&mut rng, 3);
        let op = ConvOperator::new(kernel.clone(), rows, cols).unwrap();
        let h = dense_conv(&kernel, rows, cols);
        let y = random_image(&mut rng, rows, cols);
        let tau = rng.uniform_in(0.01, 0.2);
        let cfg = FppaConfig {
            max_iters: 50,
            rel_tol: 0.0,
            ..FppaConfig::with_default_step(&op, tau)
        };
        let gamma = cfg.step;
        let mut solver = Fppa::new(&op, &y, cfg).unwrap();

        let n = rows * cols;
        let (mut x1, mut x2) = (vec![0.0; n], vec![0.0; n]);
        let mut q_prev = 1.0f64;
        for _ in 0..50 {
            let q = 0.5 * (1.0 + (1.0 + 4.0 * q_prev * q_prev).sqrt());
            let mu = 1.0 - (1.0 - q_prev) / q;
            q_prev = q;
            let s: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| mu * a + (1.0 - mu) * b).collect();
            let resid: Vec<f64> = matvec(&h, &s).iter().zip(y.as_slice()).map(|(a, b)| a - b).collect();
            let grad = matvec_t(&h, &resid);
            let z: Vec<f64> = s.iter().zip(&grad).map(|(a, g)| a - gamma * g).collect();
            let mut wz = matvec(&w, &z);
            for v in &mut wz[..2 * n] {
                *v = soft(*v, 2.0 * SQRT_2 * tau * gamma);
            }
            let x = matvec_t(&w, &wz);
            x2 = std::mem::replace(&mut x1, x);

            solver.step().unwrap();
            for (a, b) in solver.current().as_slice().iter().zip(&x1) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    outcome(
        worst <= 1e-10,
        format!("max |block − stacked| over 50 iterations = {worst:.2e} (tol 1e-10)"),
    )
}

fn gradients() -> Outcome {
    let mut rng = SeededRng::new(404);
    let mut worst = 0.0f64;
    let mut count = 0;
    for degree in [Degree::Linear, Degree::Cubic] {
        for tied in [false, true] {
            for shrink_approx in [false, true] {
                for _ in 0..3 {
                    let half_width = match degree {
                        Degree::Linear => 2 + rng.below(3),
                        Degree::Cubic => 4,
                    };
                    let cfg = GradCheckConfig {
                        size: [4, 6, 8][rng.below(3)],
                        layers: 1 + rng.below(3),
                        half_width,
                        degree,
                        tied,
                        shrink_approx,
                        pairs: 1 + rng.below(2),
                        seed: rng.next_u64(),
                        // Piecewise-linear splines have kinks at the knots; a
                        // narrower stencil is less likely to straddle one.
                        h: match degree {
                            Degree::Linear => 1e-6,
                            Degree::Cubic => 1e-5,
                        },
                    };
                    match run_gradcheck(&cfg) {
                        Ok(report) => worst = worst.max(report.max_rel_error),
                        Err(e) => return outcome(false, format!("{cfg:?}: {e}")),
                    }
                    count += 1;
                }
            }
        }
    }
    outcome(
        worst <= 1e-5,
        format!("{count} configurations, max relative error {worst:.2e} (tol 1e-5)"),
    )
}

fn instance(rng: &mut SeededRng, size: usize) -> (ConvOperator, Image) {
    let op = ConvOperator::new(gaussian_psf(5, rng.uniform_in(0.5, 2.0)).unwrap(), size, size).unwrap();
    let truth = phantom(PhantomKind::Cells, size, size, rng.next_u64()).unwrap();
    let y = add_awgn(&op.apply(&truth).unwrap(), 25.0, rng.next_u64()).unwrap();
    (op, y)
}

fn threshold_construction() -> Outcome {
    let mut rng = SeededRng::new(505);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let (op, y) = instance(&mut rng, 16);
        let (layers, half_width) = (6, 10);
        let gamma = rng.uniform_in(0.5, 1.0);
        let delta = 0.02;
        // Linear interpolation reproduces the soft threshold only when its
        // kink sits on a knot.
        let lambda = (1 + rng.below(4)) as f64 * delta;
        let mut theta = init_theta(layers, half_width, delta, Degree::Linear, 1.0, false, false).unwrap();
        let layout = *theta.layout();
        let alpha = step_map_inverse(gamma).unwrap();
        for t in 0..layers {
            theta.params_mut()[layout.alpha_index(t)] = alpha;
            for k in 0..CHANNELS {
                let off = layout.coeff_offset(t, k);
                for p in 0..=2 * half_width {
                    let node = (p as f64 - half_width as f64) * delta;
                    theta.params_mut()[off + p] = soft(node, lambda) / 4.0;
                }
            }
        }
        let (x, _) = tppa_forward(&op, &y, &theta).unwrap();
        let cfg = FppaConfig {
            tau: lambda / (4.0 * SQRT_2 * gamma),
            step: gamma,
            max_iters: layers,
            rel_tol: 0.0,
        };
        let reference = fppa_reconstruct(&op, &y, cfg).unwrap().x;
        worst = worst.max(x.max_abs_diff(&reference));
    }
    outcome(worst <= 1e-10, format!("max |TPPA − FPPA| = {worst:.2e} (tol 1e-10)"))
}

fn landweber() -> Outcome {
    let mut rng = SeededRng::new(606);
    let mut worst = 0.0f64;
    for layers in [1, 4, 10] {
        for degree in [Degree::Linear, Degree::Cubic] {
            let (op, y) = instance(&mut rng, 16);
            let step = 1.0 / op.spectral_norm_dft().powi(2);
            let theta = init_theta(layers, 8, 0.05, degree, step_map_inverse(step).unwrap(), false, false).unwrap();
            let (x, _) = tppa_forward(&op, &y, &theta).unwrap();
            let cfg = FppaConfig {
                tau: 0.0,
                step,
                max_iters: layers,
                rel_tol: 0.0,
            };
            worst = worst.max(x.max_abs_diff(&fppa_reconstruct(&op, &y, cfg).unwrap().x));
        }
    }
    outcome(
        worst <= 1e-10,
        format!("max |TPPA − Landweber| = {worst:.2e} (tol 1e-10)"),
    )
}

fn cost_trend() -> Outcome {
    let mut rng = SeededRng::new(707);
    let mut ordered = 0;
    let mut sample = String::new();
    for i in 0..10 {
        let (op, y) = instance(&mut rng, 32);
        let tau = 10f64.powf(rng.uniform_in(-3.0, -2.0));
        let cfg = FppaConfig {
            max_iters: 100,
            rel_tol: 0.0,
            ..FppaConfig::with_default_step(&op, tau)
        };
        let trace = fppa_reconstruct(&op, &y, cfg).unwrap().cost_trace;
        let (c1, c10, c100) = (trace[0], trace[9], trace[99]);
        if c100 < c10 && c10 < c1 {
            ordered += 1;
        }
        if i == 0 {
            sample = format!("e.g. {c1:.4e} > {c10:.4e} > {c100:.4e}");
        }
    }
    outcome(
        ordered == 10,
        format!("{ordered}/10 instances with C(x¹⁰⁰) < C(x¹⁰) < C(x¹), {sample}"),
    )
}

fn training_progress(dir: &Path) -> Result<Outcome, String> {
    let ck = dir.join("smoke.tppa");
    let out = tppa(&[
        "train",
        "--phantoms",
        "10",
        "--patch",
        "32",
        "--psf-size",
        "9",
        "--psf-var",
        "2",
        "--snr",
        "30",
        "--layers",
        "5",
        "--splines",
        "101",
        "--train-iters",
        "50",
        "--lr",
        "5e-4",
        "--seed",
        "1",
        "--out",
        ck.to_str().unwrap(),
    ])?;
    let ratio = field(&out, "ratio = ")?;
    Ok(outcome(ratio <= 0.7, format!("E(θ⁵⁰)/E(θ⁰) = {ratio:.4} (need ≤ 0.7)")))
}

fn learned_vs_tv(dir: &Path) -> Result<Outcome, String> {
    let ck = dir.join("learned.tppa");
    let ck = ck.to_str().unwrap();
    let mut args = vec!["train"];
    args.extend_from_slice(LEARNED_TRAIN);
    args.extend_from_slice(&["--out", ck]);
    tppa(&args)?;
    let mut args = vec!["eval"];
    args.extend_from_slice(LEARNED_EVAL);
    args.extend_from_slice(&["--checkpoint", ck]);
    let out = tppa(&args)?;
    let fppa = field(&out, "mean output SNR fppa = ")?;
    let learned = field(&out, "mean output SNR tppa = ")?;
    let gain = learned - fppa;
    Ok(outcome(
        gain >= 0.2,
        format!("TPPA {learned:.2} dB vs oracle-τ FPPA {fppa:.2} dB, gain {gain:+.2} dB (need ≥ +0.2)"),
    ))
}

fn hash(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap_or_default();
    format!("{:x}", Sha256::digest(bytes))
}

fn pipeline(dir: &Path, jobs: &str) -> Result<Vec<(String, String)>, String> {
    let f = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let j = ["--jobs", jobs];
    tppa(&[&["psf", "--size", "9", "--var", "2", "--out", &f("k.fimg")][..], &j].concat())?;
    tppa(
        &[
            &[
                "phantom",
                "--kind",
                "texture",
                "--size",
                "32",
                "--seed",
                "3",
                "--out",
                &f("x.fimg"),
            ][..],
            &j,
        ]
        .concat(),
    )?;
    tppa(
        &[
            &[
                "simulate",
                "--in",
                &f("x.fimg"),
                "--psf",
                &f("k.fimg"),
                "--snr",
                "30",
                "--seed",
                "7",
                "--out",
                &f("y.fimg"),
            ][..],
            &j,
        ]
        .concat(),
    )?;
    tppa(
        &[
            &[
                "fppa",
                "--in",
                &f("y.fimg"),
                "--psf",
                &f("k.fimg"),
                "--tau",
                "2e-3",
                "--out",
                &f("tv.fimg"),
            ][..],
            &j,
        ]
        .concat(),
    )?;
    tppa(
        &[
            &[
                "train",
                "--phantoms",
                "4",
                "--patch",
                "32",
                "--psf",
                &f("k.fimg"),
                "--layers",
                "3",
                "--splines",
                "41",
                "--train-iters",
                "8",
                "--seed",
                "5",
                "--out",
                &f("net.tppa"),
                "--loss-trace",
                &f("loss.csv"),
            ][..],
            &j,
        ]
        .concat(),
    )?;
    tppa(
        &[
            &[
                "reconstruct",
                "--in",
                &f("y.fimg"),
                "--psf",
                &f("k.fimg"),
                "--checkpoint",
                &f("net.tppa"),
                "--out",
                &f("xhat.fimg"),
            ][..],
            &j,
        ]
        .concat(),
    )?;
    tppa(
        &[
            &[
                "eval",
                "--phantoms",
                "3",
                "--patch",
                "32",
                "--psf",
                &f("k.fimg"),
                "--taus",
                "4",
                "--checkpoint",
                &f("net.tppa"),
                "--report",
                &f("report.csv"),
            ][..],
            &j,
        ]
        .concat(),
    )?;
    Ok([
        "k.fimg",
        "x.fimg",
        "y.fimg",
        "tv.fimg",
        "net.tppa",
        "loss.csv",
        "xhat.fimg",
        "report.csv",
    ]
    .iter()
    .map(|n| (n.to_string(), hash(&dir.join(n))))
    .collect())
}

fn determinism(dir: &Path) -> Result<Outcome, String> {
    let (a, b) = (dir.join("run-a"), dir.join("run-b"));
    std::fs::create_dir_all(&a).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&b).map_err(|e| e.to_string())?;
    let first = pipeline(&a, "0")?;
    let second = pipeline(&b, "1")?;
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    Ok(outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} output files hash-identical across reruns", first.len())
        } else {
            format!("differing outputs: {differing:?}")
        },
    ))
}

fn parameter_count() -> Result<Outcome, String> {
    let out = tppa(&["train", "--dry-run"])?;
    let dim = field(&out, "dim(theta) = ")?;
    Ok(outcome(
        dim == 40050.0,
        format!("default config dim(θ) = {dim} (need 40050)"),
    ))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let minute = Duration::from_secs(60);
    let criteria: Vec<(&str, Duration, Box<dyn Fn() -> Result<Outcome, String>>)> = vec![
        ("tight frame", Duration::from_secs(5), Box::new(|| Ok(tight_frame()))),
        ("adjoints", Duration::from_secs(5), Box::new(|| Ok(adjoints()))),
        (
            "dense-oracle FPPA",
            Duration::from_secs(10),
            Box::new(|| Ok(dense_oracle())),
        ),
        ("gradient correctness", 2 * minute, Box::new(|| Ok(gradients()))),
        (
            "FPPA/TPPA consistency",
            Duration::from_secs(10),
            Box::new(|| Ok(threshold_construction())),
        ),
        (
            "Landweber reduction",
            Duration::from_secs(5),
            Box::new(|| Ok(landweber())),
        ),
        ("cost trend", Duration::from_secs(30), Box::new(|| Ok(cost_trend()))),
        (
            "training progress",
            5 * minute,
            Box::new(|| training_progress(dir.path())),
        ),
        ("learned vs TV", 30 * minute, Box::new(|| learned_vs_tv(dir.path()))),
        ("determinism", minute, Box::new(|| determinism(dir.path()))),
        ("parameter count", Duration::from_secs(5), Box::new(parameter_count)),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= *limit, o.detail),
            Err(e) => (false, e),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<22} {}  {detail} [{:.1}s, limit {}s]",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
