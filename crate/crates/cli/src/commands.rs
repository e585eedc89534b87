//! One function per subcommand.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use tppa_core::backprop::{run_gradcheck, GradCheckConfig};
use tppa_core::harness::{
    add_awgn, extract_patch, log_grid, oracle_tau_fppa, phantom, snr_db, with_even_padding, Dataset,
};
use tppa_core::io::{self, PgmDepth, ReportRow};
use tppa_core::linops::{gaussian_psf, ConvOperator, Kernel, StepInit};
use tppa_core::network::tppa_reconstruct;
use tppa_core::shrinkage::Degree;
use tppa_core::solver::{fppa_reconstruct, FppaConfig};
use tppa_core::trainer::{train_with, GradientScale, ModelConfig, TrainConfig};
use tppa_core::Image;

use crate::{
    AlphaInit, Command, DataOpts, EvalCmd, Failure, FppaCmd, GradScaleArg, GradcheckCmd, PhantomCmd, PsfCmd, PsfOpts,
    ReconstructCmd, SimulateCmd, TrainCmd,
};

type Outcome = Result<(), Failure>;

pub fn execute(cmd: &Command, out: &mut dyn Write) -> Outcome {
    match cmd {
        Command::Psf(c) => psf(c, out),
        Command::Phantom(c) => phantom_cmd(c, out),
        Command::Simulate(c) => simulate(c, out),
        Command::Fppa(c) => fppa(c, out),
        Command::Train(c) => train(c, out),
        Command::Reconstruct(c) => reconstruct(c, out),
        Command::Eval(c) => eval(c, out),
        Command::Gradcheck(c) => gradcheck(c, out),
    }
}

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// FIMG, or a 16-bit PGM preview clamped to `[0, 1]` for `.pgm` paths.
fn write_image(path: &Path, img: &Image) -> Outcome {
    if is_pgm(path) {
        io::write_pgm(path, img, PgmDepth::Sixteen)?;
    } else {
        io::write_fimg(path, img)?;
    }
    Ok(())
}

fn read_image(path: &Path) -> Result<Image, Failure> {
    io::read_image(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn kernel(opts: &PsfOpts) -> Result<Kernel, Failure> {
    match &opts.psf {
        Some(path) => Ok(Kernel::new(read_image(path)?)?),
        None => Ok(gaussian_psf(opts.psf_size, opts.psf_var)?),
    }
}

fn operator_for(opts: &PsfOpts, dims: (usize, usize)) -> Result<ConvOperator, Failure> {
    Ok(ConvOperator::new(kernel(opts)?, dims.0, dims.1)?)
}

/// Simulated pairs plus one identifier per pair.
fn dataset(opts: &DataOpts, psf: &PsfOpts, default_count: usize) -> Result<(Dataset, Vec<String>), Failure> {
    let k = kernel(psf)?;
    let op = ConvOperator::new(k, opts.patch, opts.patch)?;
    if opts.images.is_empty() {
        let count = opts.phantoms.unwrap_or(default_count);
        if count == 0 {
            return Err(Failure::usage("--phantoms must be at least 1"));
        }
        let ds = Dataset::phantoms(opts.phantom_kind.into(), count, opts.patch, &op, opts.snr, opts.seed)?;
        let ids = (0..count).map(|i| format!("phantom-{i}")).collect();
        return Ok((ds, ids));
    }
    if opts.phantoms.is_some() {
        return Err(Failure::usage("--phantoms and --images are mutually exclusive"));
    }
    let mut truths = Vec::with_capacity(opts.images.len());
    let mut ids = Vec::with_capacity(opts.images.len());
    for path in &opts.images {
        truths.push(extract_patch(&read_image(path)?, opts.patch)?);
        ids.push(
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
        );
    }
    let mut ds = Dataset::simulate(truths, op, opts.snr, opts.seed)?;
    ds.provenance.patch = Some(opts.patch);
    Ok((ds, ids))
}

fn psf(c: &PsfCmd, out: &mut dyn Write) -> Outcome {
    let k = gaussian_psf(c.size, c.var)?;
    io::write_fimg(&c.out, k.taps())?;
    writeln!(out, "wrote {}x{} kernel to {}", c.size, c.size, c.out.display())?;
    Ok(())
}

fn phantom_cmd(c: &PhantomCmd, out: &mut dyn Write) -> Outcome {
    let kind = c.kind.into();
    let x = phantom(kind, c.size, c.size, c.seed)?;
    write_image(&c.out, &x)?;
    writeln!(out, "wrote {kind} phantom {}x{} to {}", c.size, c.size, c.out.display())?;
    Ok(())
}

fn simulate(c: &SimulateCmd, out: &mut dyn Write) -> Outcome {
    let x = read_image(&c.input)?;
    let op = operator_for(&c.psf, x.dims())?;
    let y = add_awgn(&op.apply(&x)?, c.snr, c.seed)?;
    write_image(&c.out, &y)?;
    writeln!(out, "wrote measurement to {}", c.out.display())?;
    Ok(())
}

fn fppa(c: &FppaCmd, out: &mut dyn Write) -> Outcome {
    let y = read_image(&c.input)?;
    let k = kernel(&c.psf)?;
    let mut trace = Vec::new();
    let mut summary = (0, false);
    let x = with_even_padding(&y, |y| {
        let op = ConvOperator::new(k, y.rows(), y.cols())?;
        let default = FppaConfig::with_default_step(&op, c.tau);
        let cfg = FppaConfig {
            step: c.step.unwrap_or(default.step),
            max_iters: c.max_iters,
            rel_tol: c.rel_tol,
            ..default
        };
        let res = fppa_reconstruct(&op, y, cfg)?;
        trace = res.cost_trace;
        summary = (res.iterations, res.converged);
        Ok(res.x)
    })?;
    write_image(&c.out, &x)?;
    if let Some(path) = &c.cost_trace {
        io::write_series(BufWriter::new(File::create(path)?), "cost", 1, &trace)?;
    }
    writeln!(
        out,
        "fppa: {} iterations, converged = {}, final cost = {:e}",
        summary.0,
        summary.1,
        trace.last().copied().unwrap_or(f64::NAN)
    )?;
    writeln!(out, "wrote reconstruction to {}", c.out.display())?;
    Ok(())
}

fn degree(d: u32) -> Result<Degree, Failure> {
    Degree::try_from(d).map_err(|e| Failure::usage(e.to_string()))
}

fn half_width(splines: usize) -> Result<usize, Failure> {
    if splines % 2 == 0 || splines < 3 {
        return Err(Failure::usage(format!(
            "--splines must be odd and at least 3, got {splines}"
        )));
    }
    Ok((splines - 1) / 2)
}

fn train(c: &TrainCmd, out: &mut dyn Write) -> Outcome {
    let half_width = half_width(c.splines)?;
    let degree = degree(c.degree)?;
    if c.layers == 0 {
        return Err(Failure::usage("--layers must be at least 1"));
    }
    let (ds, _) = dataset(&c.data, &c.psf, 100)?;
    let alpha0 = match c.alpha0 {
        Some(a) => a,
        None => {
            let init = match c.alpha_init {
                AlphaInit::InverseNormal => StepInit::InverseNormal,
                AlphaInit::InverseNormalSquared => StepInit::InverseNormalSquared,
            };
            init.value(ds.op.spectral_norm_dft())
        }
    };
    let model = ModelConfig {
        layers: c.layers,
        half_width,
        degree,
        alpha0,
        tied: c.tied,
        shrink_approx: c.shrink_approx,
        delta: c.delta,
    };
    let theta0 = model.init(&ds.op, &ds.pairs)?;
    writeln!(
        out,
        "pairs = {}, image = {}x{}",
        ds.pairs.len(),
        c.data.patch,
        c.data.patch
    )?;
    writeln!(out, "dim(theta) = {}", theta0.dim())?;
    writeln!(out, "delta = {:e}, alpha0 = {:e}", theta0.grid().delta(), alpha0)?;
    if c.dry_run {
        return Ok(());
    }
    let Some(path) = &c.out else {
        return Err(Failure::usage("--out is required unless --dry-run is given"));
    };
    let cfg = TrainConfig {
        scale: match c.grad_scale {
            GradScaleArg::Mean => GradientScale::PairMean,
            GradScaleArg::Sum => GradientScale::Sum,
        },
        restart: c.restart,
        ..TrainConfig::new(c.lr, c.train_iters)
    };
    let result = train_with(&ds.op, &ds.pairs, cfg, theta0, |state| {
        let i = state.iteration;
        log::info!("iteration {i}: E = {:e}", state.loss_trace[i]);
        if c.checkpoint_every > 0 && i % c.checkpoint_every == 0 && i < c.train_iters {
            io::write_checkpoint(path, &state.theta)?;
            if let Some(trace) = &c.loss_trace {
                io::write_loss_trace(BufWriter::new(File::create(trace)?), &state.loss_trace)?;
            }
        }
        Ok(())
    })?;
    io::write_checkpoint(path, &result.theta)?;
    if let Some(trace) = &c.loss_trace {
        io::write_loss_trace(BufWriter::new(File::create(trace)?), &result.loss_trace)?;
    }
    let e0 = result.loss_trace[0];
    let e_last = *result.loss_trace.last().expect("trace holds E(θ⁰)");
    writeln!(
        out,
        "E0 = {e0:e}, E{} = {e_last:e}, ratio = {:.4}",
        c.train_iters,
        e_last / e0
    )?;
    writeln!(
        out,
        "learning-rate halvings = {}, final lr = {:e}",
        result.halvings, result.final_lr
    )?;
    writeln!(out, "wrote checkpoint to {}", path.display())?;
    Ok(())
}

fn reconstruct(c: &ReconstructCmd, out: &mut dyn Write) -> Outcome {
    let y = read_image(&c.input)?;
    let theta = io::read_checkpoint(&c.checkpoint)?;
    let k = kernel(&c.psf)?;
    let x = with_even_padding(&y, |y| {
        let op = ConvOperator::new(k, y.rows(), y.cols())?;
        tppa_reconstruct(&op, y, &theta)
    })?;
    write_image(&c.out, &x)?;
    writeln!(out, "wrote reconstruction to {}", c.out.display())?;
    Ok(())
}

fn eval(c: &EvalCmd, out: &mut dyn Write) -> Outcome {
    let taus = log_grid(c.tau_min, c.tau_max, c.taus)?;
    let (ds, ids) = dataset(&c.data, &c.psf, 10)?;
    let theta = c.checkpoint.as_ref().map(io::read_checkpoint).transpose()?;
    let psf_size = ds.op.kernel().taps().rows();
    let snr_in = ds.provenance.snr_db;
    let per_image = ds
        .pairs
        .par_iter()
        .map(|pair| {
            let fppa = oracle_tau_fppa(&ds.op, pair, &taus, c.max_iters, c.rel_tol)?;
            let tppa = match &theta {
                Some(t) => Some(snr_db(&pair.truth, &tppa_reconstruct(&ds.op, &pair.measured, t)?)?),
                None => None,
            };
            Ok((fppa, tppa))
        })
        .collect::<tppa_core::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (id, (fppa, tppa)) in ids.iter().zip(&per_image) {
        log::info!("{id}: oracle tau = {:e}", fppa.tau);
        rows.push(ReportRow {
            image_id: id.clone(),
            method: "fppa".into(),
            psf_size,
            snr_in_db: snr_in,
            snr_out_db: fppa.snr_db,
        });
        if let Some(s) = tppa {
            rows.push(ReportRow {
                image_id: id.clone(),
                method: "tppa".into(),
                psf_size,
                snr_in_db: snr_in,
                snr_out_db: *s,
            });
        }
    }
    match &c.report {
        Some(path) => io::write_report(BufWriter::new(File::create(path)?), &rows)?,
        None => io::write_report(&mut *out, &rows)?,
    }
    let n = per_image.len() as f64;
    let fppa_mean = per_image.iter().map(|(f, _)| f.snr_db).sum::<f64>() / n;
    writeln!(out, "mean output SNR fppa = {fppa_mean:.4} dB")?;
    if theta.is_some() {
        let tppa_mean = per_image.iter().filter_map(|(_, t)| *t).sum::<f64>() / n;
        writeln!(out, "mean output SNR tppa = {tppa_mean:.4} dB")?;
        writeln!(out, "tppa - fppa = {:.4} dB", tppa_mean - fppa_mean)?;
    }
    Ok(())
}

fn gradcheck(c: &GradcheckCmd, out: &mut dyn Write) -> Outcome {
    let cfg = GradCheckConfig {
        size: c.size,
        layers: c.layers,
        half_width: half_width(c.splines)?,
        degree: degree(c.degree)?,
        tied: c.tied,
        shrink_approx: c.shrink_approx,
        pairs: c.pairs,
        seed: c.seed,
        h: c.h,
    };
    let report = run_gradcheck(&cfg)?;
    writeln!(out, "dim(theta) = {}", report.dim)?;
    writeln!(out, "max relative error = {:e}", report.max_rel_error)?;
    if !(report.max_rel_error <= c.tol) {
        return Err(Failure::numeric(format!(
            "max relative error {:e} exceeds {:e}",
            report.max_rel_error, c.tol
        )));
    }
    Ok(())
}
