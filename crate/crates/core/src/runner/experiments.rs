//! Experiment drivers. Each writes its CSV files into the output directory
//! and records scalar results for the metadata.

use std::sync::Arc;
use std::time::Instant;

use toml::{Table, Value};

use crate::cells;
use crate::dynamics::{simulate, simulate_replicas, Observer, RunStats, Scheme, Snapshot};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::meanfield::{relaxation_curve, run_coupled_pair};
use crate::noise::{derive_stream, ou_step, OuState, Purpose, StreamKey};
use crate::observables::{
    ds_residual_batches, theory_free, theory_limit_spectrum, theory_o2_limit, ChaosObserver,
    DiagnosticsRecord, H1GapObserver, O2Observer, ProductRule, SpectrumEstimate, SpectrumObserver,
};
use crate::spectral::{Grid, RealField, SpectralTransform, VOLUME};
use crate::stats::{linear_fit, log_log_slope, mean_and_stderr, BatchMeans, Estimate, VecBatchMeans};
use crate::wick::{wick_constant, wick_constant_retained, wick_cubic, wick_pair, wick_quartic};

use super::config::{Experiment, RunConfig};
use super::output::{Csv, FieldSnapshot, OutputDir};

/// State shared by the experiment drivers.
pub struct Context<'a> {
    pub config: &'a RunConfig,
    pub out: &'a mut OutputDir,
    pub results: Table,
    pub timings: Table,
    pub stats: Vec<RunStats>,
    pub exec: Exec,
    hash: String,
}

impl<'a> Context<'a> {
    pub fn new(config: &'a RunConfig, out: &'a mut OutputDir, exec: Exec) -> Self {
        Self {
            hash: config.hash(),
            config,
            out,
            results: Table::new(),
            timings: Table::new(),
            stats: Vec::new(),
            exec,
        }
    }

    fn csv(&self, header: &[&str]) -> Csv {
        Csv::new(&self.hash, header)
    }

    fn phase<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self)?;
        self.timings
            .insert(name.to_string(), Value::Float(start.elapsed().as_secs_f64()));
        Ok(out)
    }

    /// File name for a per-`N` output when the run sweeps several `N`.
    fn per_n(&self, stem: &str, n: usize) -> String {
        if self.config.components().len() > 1 {
            format!("{stem}_N{n}.csv")
        } else {
            format!("{stem}.csv")
        }
    }
}

fn est_table(e: &Estimate) -> Value {
    let mut t = Table::new();
    t.insert("mean".into(), Value::Float(e.mean));
    t.insert("stderr".into(), Value::Float(e.stderr));
    t.insert("batches".into(), Value::Integer(e.batches as i64));
    Value::Table(t)
}

fn floats(v: impl IntoIterator<Item = f64>) -> Value {
    Value::Array(v.into_iter().map(Value::Float).collect())
}

fn ints(v: impl IntoIterator<Item = usize>) -> Value {
    Value::Array(v.into_iter().map(|x| Value::Integer(x as i64)).collect())
}

/// Wick constant matching the dynamics (retained modes only when dealiased).
pub fn dynamics_wick_constant(grid: &Grid, dealias: bool) -> f64 {
    if dealias {
        wick_constant_retained(grid, |i| grid.retained_by_two_thirds(i))
    } else {
        wick_constant(grid)
    }
}

/// `cos(x₁)` on the collocation grid.
pub fn cosine_test_function(grid: &Grid) -> RealField {
    let h = grid.spacing();
    RealField::from_fn(grid, |j1, _| (j1 as f64 * h).cos())
}

pub fn run_experiment(ctx: &mut Context<'_>, experiment: Experiment) -> Result<()> {
    ctx.results
        .insert("experiment".into(), Value::String(experiment.name().into()));
    match experiment {
        Experiment::GffCheck => gff_check(ctx),
        Experiment::Simulate => simulate_diagnostics(ctx),
        Experiment::Spectrum => spectrum(ctx, false),
        Experiment::O2 => spectrum(ctx, true),
        Experiment::Scaling => scaling(ctx, true),
        Experiment::Chaos => scaling(ctx, false),
        Experiment::Meanfield => meanfield(ctx),
        Experiment::Coupling => coupling(ctx),
        Experiment::DsCheck => ds_check(ctx),
    }
}

fn gff_check(ctx: &mut Context<'_>) -> Result<()> {
    let cfg = ctx.config;
    let grid = cfg.grid()?;
    let tr = SpectralTransform::new(&grid);
    let a = wick_constant(&grid);
    let samples = cfg.observables.samples as usize;
    let dt = cfg.dynamics.thin;
    let batch = cfg.batch_len();
    let chains: Vec<(OuState, _)> = (0..2)
        .map(|c| {
            let key = |p| StreamKey::new(cfg.seed, p, c, 0);
            let mut init = derive_stream(key(Purpose::ZInit));
            (OuState::stationary(&grid, &mut init), derive_stream(key(Purpose::ZNoise)))
        })
        .collect();
    let mut chains = chains;
    let mut var = VecBatchMeans::new(grid.len(), batch);
    let mut wick: Vec<BatchMeans> = (0..4).map(|_| BatchMeans::new(batch)).collect();
    ctx.phase("sampling", |_| {
        for s in 0..samples {
            if s > 0 {
                for (state, stream) in chains.iter_mut() {
                    ou_step(&grid, state, dt, stream)?;
                }
            }
            var.push_with(|row| {
                for (r, c) in row.iter_mut().zip(chains[0].0.z.coeffs()) {
                    *r += c.norm_sqr() / VOLUME;
                }
            });
            let z0 = tr.inverse(&chains[0].0.z)?;
            let z1 = tr.inverse(&chains[1].0.z)?;
            let mean = |f: RealField| crate::spectral::spatial_mean(f.values());
            wick[0].push(mean(wick_pair(&z0, &z0, true, a)?));
            wick[1].push(mean(wick_cubic(&z0, &z1, false, a)?));
            wick[2].push(mean(wick_quartic(&z0, &z0, true, a)?));
            wick[3].push(mean(wick_quartic(&z0, &z1, false, a)?));
        }
        Ok(())
    })?;

    let mut csv = ctx.csv(&["kx", "ky", "k2", "variance", "stderr", "chat", "z_score"]);
    let (mut active, mut within, mut max_z) = (0usize, 0usize, 0.0_f64);
    for (idx, e) in var.estimates().iter().enumerate() {
        if !grid.is_active(idx) {
            continue;
        }
        let k = grid.wavevector(idx);
        let chat = grid.chat_at(idx);
        let z = (e.mean - chat) / e.stderr;
        active += 1;
        if e.within(chat, 3.0) {
            within += 1;
        }
        max_z = max_z.max(z.abs());
        csv.row(cells![k.k1, k.k2, k.norm_sq(), e.mean, e.stderr, chat, z]);
    }
    ctx.out.write_csv("gff_variance.csv", &csv)?;
    let r = &mut ctx.results;
    r.insert("samples".into(), Value::Integer(samples as i64));
    r.insert("wick_constant".into(), Value::Float(a));
    r.insert("modes".into(), Value::Integer(active as i64));
    r.insert("modes_within_3se".into(), Value::Integer(within as i64));
    r.insert("max_abs_z".into(), Value::Float(max_z));
    let names = ["z2", "zi_zj2", "z4", "zi2_zj2"];
    let mut wt = Table::new();
    for (name, bm) in names.iter().zip(&wick) {
        wt.insert((*name).into(), est_table(&bm.estimate()));
    }
    r.insert("wick_means".into(), Value::Table(wt));
    Ok(())
}

/// Writes a snapshot file whenever the simulation time crosses a multiple
/// of `every`.
struct SnapshotWriter<'a> {
    out: &'a mut OutputDir,
    every: f64,
    next: f64,
    written: usize,
}

impl Observer for SnapshotWriter<'_> {
    fn observe(&mut self, snap: &Snapshot<'_>) -> Result<()> {
        if snap.time + 1e-9 < self.next {
            return Ok(());
        }
        let sys = snap.system;
        let grid = sys.grid();
        let fs = FieldSnapshot {
            modes: grid.modes(),
            mass: grid.mass(),
            coupling: sys.coupling(),
            time: snap.time,
            fields: snap.real().phi.clone(),
        };
        self.out
            .write(&format!("snapshots/snap_{:06}.bin", self.written), &fs.encode())?;
        self.written += 1;
        while self.next <= snap.time + 1e-9 {
            self.next += self.every;
        }
        Ok(())
    }
}

fn simulate_diagnostics(ctx: &mut Context<'_>) -> Result<()> {
    let cfg = ctx.config;
    let n = cfg.components()[0];
    let params = cfg.sim_params(n, ctx.exec)?;
    if params.scheme != Scheme::Split {
        return Err(Error::param("dynamics.scheme", "simulate records Y diagnostics and needs the ddd scheme"));
    }
    let mut diag = DiagnosticsRecord::new();
    let stats = match cfg.output.snapshot_every {
        Some(every) => {
            let mut snaps = SnapshotWriter {
                out: &mut *ctx.out,
                every,
                next: 0.0,
                written: 0,
            };
            let start = Instant::now();
            let stats = simulate(&params, &mut (&mut diag, &mut snaps))?;
            let written = snaps.written;
            ctx.timings
                .insert("simulate".into(), Value::Float(start.elapsed().as_secs_f64()));
            ctx.results
                .insert("snapshots".into(), Value::Integer(written as i64));
            stats
        }
        None => ctx.phase("simulate", |_| simulate(&params, &mut diag))?,
    };
    ctx.stats.push(stats);
    let mut csv = ctx.csv(&["t", "l2", "grad", "square", "h1", "o2", "o2_running_mean"]);
    for r in &diag.rows {
        csv.row(cells![r.t, r.energy.l2, r.energy.grad, r.energy.square, r.h1, r.o2, r.o2_running_mean]);
    }
    ctx.out.write_csv("diagnostics.csv", &csv)?;
    ctx.results.insert("components".into(), Value::Integer(n as i64));
    let t_ref = 5.0 / cfg.mass_scale();
    if let Some(ratio) = diag.running_max_ratio(t_ref) {
        ctx.results.insert("t_ref".into(), Value::Float(t_ref));
        ctx.results.insert("running_max_ratio".into(), floats(ratio));
    }
    if let Some(last) = diag.rows.last() {
        ctx.results
            .insert("o2_running_mean".into(), Value::Float(last.o2_running_mean));
    }
    Ok(())
}

/// Merged results of one spectrum sweep point.
pub struct SpectrumRun {
    pub estimate: SpectrumEstimate,
    pub o2: O2Observer,
    /// `(t, O₂, running mean)` of replica 0.
    pub trace: Vec<(f64, f64, f64)>,
    pub stats: Vec<RunStats>,
}

pub fn spectrum_run(cfg: &RunConfig, n: usize, rule: ProductRule, exec: Exec) -> Result<SpectrumRun> {
    let params = cfg.sim_params(n, exec)?;
    let grid = params.grid.clone();
    let a = dynamics_wick_constant(&grid, params.dealias);
    let cv = cfg.observables.control_variate && params.scheme == Scheme::Split;
    let batch = cfg.batch_len();
    let replicas = cfg.dynamics.replicas as usize;
    let runs = simulate_replicas(&params, replicas, |_| {
        let est = SpectrumEstimate::new(&grid, n, params.coupling, rule, batch, cv);
        (SpectrumObserver::new(est, a), O2Observer::new(batch))
    })?;
    let mut iter = runs.into_iter();
    let ((first_spec, first_o2), first_stats) = iter.next().ok_or(Error::EmptySample("replicas"))?;
    let mut estimate = first_spec.estimate;
    let trace = first_o2.trace.clone();
    let mut o2 = first_o2;
    let mut stats = vec![first_stats];
    for ((s, o), st) in iter {
        estimate.merge(&s.estimate);
        o2.merge(&o);
        stats.push(st);
    }
    Ok(SpectrumRun {
        estimate,
        o2,
        trace,
        stats,
    })
}

const SPECTRUM_HEADER: [&str; 8] = ["kx", "ky", "k2", "Ghat", "Ghat_stderr", "ChatN", "theory_free", "theory_limit"];

fn spectrum_csv(ctx: &Context<'_>, grid: &Grid, ghat: &[Estimate], chat_n: &[Estimate]) -> Csv {
    let free = theory_free(grid);
    let limit = theory_limit_spectrum(grid);
    let mut csv = ctx.csv(&SPECTRUM_HEADER);
    for idx in (0..grid.len()).filter(|&i| grid.is_active(i)) {
        let k = grid.wavevector(idx);
        csv.row(cells![
            k.k1,
            k.k2,
            k.norm_sq(),
            ghat[idx].mean,
            ghat[idx].stderr,
            chat_n[idx].mean,
            free[idx],
            limit[idx]
        ]);
    }
    csv
}

fn spectrum(ctx: &mut Context<'_>, o2_only: bool) -> Result<()> {
    let cfg = ctx.config;
    let grid = cfg.grid()?;
    let rule = cfg.observables.product_rule;
    let shells: Vec<(i64, Vec<usize>)> = grid
        .shells()
        .into_iter()
        .take(cfg.observables.shells as usize)
        .collect();
    let free = theory_free(&grid);
    let limit = theory_limit_spectrum(&grid);
    let o2_theory = theory_o2_limit(&grid);
    let mut shell_csv = ctx.csv(&[
        "N", "k2", "modes", "Ghat", "Ghat_stderr", "Ghat_cv", "Ghat_cv_stderr", "theory_free", "theory_limit",
    ]);
    let mut o2_csv = ctx.csv(&["N", "t", "o2", "o2_running_mean"]);
    let mut o2_summary = ctx.csv(&["N", "o2", "o2_stderr", "o2_cv", "o2_cv_stderr", "theory_o2_limit"]);
    let mut per_n = Table::new();
    for n in cfg.components() {
        let run = ctx.phase(&format!("N{n}"), |c| spectrum_run(c.config, n, rule, c.exec))?;
        ctx.stats.extend(run.stats.iter().cloned());
        let est = &run.estimate;
        let mut t = Table::new();
        if !o2_only {
            let csv = spectrum_csv(ctx, &grid, &est.ghat(), &est.chat_n());
            ctx.out.write_csv(&ctx.per_n("spectrum", n), &csv)?;
            if let (Some(g), Some(c)) = (est.ghat_cv(), est.chat_n_cv()) {
                let csv = spectrum_csv(ctx, &grid, &g, &c);
                ctx.out.write_csv(&ctx.per_n("spectrum_cv", n), &csv)?;
            }
            for (k2, modes) in &shells {
                let g = est.ghat_over(modes);
                let gcv = est.ghat_cv_over(modes).unwrap_or(Estimate {
                    mean: f64::NAN,
                    stderr: f64::NAN,
                    batches: 0,
                });
                let avg = |v: &[f64]| modes.iter().map(|&i| v[i]).sum::<f64>() / modes.len() as f64;
                shell_csv.row(cells![
                    n,
                    *k2,
                    modes.len(),
                    g.mean,
                    g.stderr,
                    gcv.mean,
                    gcv.stderr,
                    avg(&free),
                    avg(&limit)
                ]);
            }
            if let Some(&k0) = shells.first().and_then(|(_, m)| m.first()) {
                let g0 = est.ghat_cv_over(&[k0]).unwrap_or_else(|| est.ghat_over(&[k0]));
                t.insert("ghat_lowest".into(), est_table(&g0));
                t.insert("deficit_lowest".into(), Value::Float((free[k0] - g0.mean) / free[k0]));
                t.insert(
                    "predicted_deficit_lowest".into(),
                    Value::Float((free[k0] - limit[k0]) / free[k0]),
                );
            }
        }
        for &(time, o2, mean) in &run.trace {
            o2_csv.row(cells![n, time, o2, mean]);
        }
        let plain = run.o2.plain.estimate();
        let cv = run.o2.cv.estimate();
        o2_summary.row(cells![n, plain.mean, plain.stderr, cv.mean, cv.stderr, o2_theory]);
        t.insert("o2".into(), est_table(&plain));
        if !run.o2.cv.batch_means().is_empty() {
            t.insert("o2_cv".into(), est_table(&cv));
        }
        t.insert("o2_running_mean".into(), Value::Float(run.o2.running_mean()));
        t.insert("snapshots".into(), Value::Integer(est.snapshots() as i64));
        per_n.insert(format!("N{n}"), Value::Table(t));
    }
    if !o2_only {
        ctx.out.write_csv("spectrum_shells.csv", &shell_csv)?;
    }
    ctx.out.write_csv("o2.csv", &o2_csv)?;
    ctx.out.write_csv("o2_summary.csv", &o2_summary)?;
    ctx.results
        .insert("theory_o2_limit".into(), Value::Float(o2_theory));
    ctx.results
        .insert("control_variate".into(), Value::Boolean(cfg.observables.control_variate && cfg.dynamics.scheme == Scheme::Split));
    ctx.results.insert("per_n".into(), Value::Table(per_n));
    Ok(())
}

struct ScalingObserver {
    h1: Option<H1GapObserver>,
    chaos: Option<ChaosObserver>,
}

impl Observer for ScalingObserver {
    fn observe(&mut self, snap: &Snapshot<'_>) -> Result<()> {
        if let Some(h) = &mut self.h1 {
            h.observe(snap)?;
        }
        if let Some(c) = &mut self.chaos {
            c.observe(snap)?;
        }
        Ok(())
    }
}

fn scaling(ctx: &mut Context<'_>, with_gap: bool) -> Result<()> {
    let cfg = ctx.config;
    let grid = cfg.grid()?;
    let phi = cosine_test_function(&grid);
    let batch = cfg.batch_len();
    let replicas = cfg.dynamics.replicas as usize;
    let mut scaling_csv = ctx.csv(&["N", "h1_gap", "stderr"]);
    let mut chaos_csv = ctx.csv(&[
        "N",
        "corr_sq",
        "corr_sq_stderr",
        "corr_sq_cv",
        "corr_sq_cv_stderr",
        "corr_linear",
        "corr_linear_stderr",
    ]);
    let (mut ns, mut gaps) = (Vec::new(), Vec::new());
    let (mut chaos_ns, mut chaos_vals) = (Vec::new(), Vec::new());
    for n in cfg.components() {
        let params = cfg.sim_params(n, ctx.exec)?;
        if with_gap && params.scheme != Scheme::Split {
            return Err(Error::param("dynamics.scheme", "the H¹ gap needs the ddd scheme"));
        }
        let with_chaos = n >= 2;
        if !with_gap && !with_chaos {
            return Err(Error::param("dynamics.components", "the chaos metric needs N ≥ 2"));
        }
        let runs = ctx.phase(&format!("N{n}"), |_| {
            simulate_replicas(&params, replicas, |_| ScalingObserver {
                h1: with_gap.then(|| H1GapObserver::new(n, batch)),
                chaos: with_chaos.then(|| ChaosObserver::new(&grid, &phi, n, batch).expect("validated test function")),
            })
        })?;
        let mut iter = runs.into_iter();
        let (mut acc, st) = iter.next().ok_or(Error::EmptySample("replicas"))?;
        ctx.stats.push(st);
        for (o, st) in iter {
            if let (Some(a), Some(b)) = (&mut acc.h1, &o.h1) {
                a.merge(b);
            }
            if let (Some(a), Some(b)) = (&mut acc.chaos, &o.chaos) {
                a.merge(b);
            }
            ctx.stats.push(st);
        }
        if let Some(h) = &acc.h1 {
            let (_, e) = h.h1_gap()?;
            scaling_csv.row(cells![n, e.mean, e.stderr]);
            ns.push(n as f64);
            gaps.push(e.mean);
        }
        if let Some(c) = &acc.chaos {
            let sq = c.squared_correlation();
            let cv = c.squared_correlation_cv();
            let lin = c.linear_correlation();
            let (cvm, cvs) = cv.map_or((f64::NAN, f64::NAN), |e| (e.mean, e.stderr));
            chaos_csv.row(cells![n, sq.mean, sq.stderr, cvm, cvs, lin.mean, lin.stderr]);
            chaos_ns.push(n as f64);
            chaos_vals.push(cv.map_or(sq.mean, |e| e.mean).abs());
        }
    }
    if with_gap {
        ctx.out.write_csv("scaling.csv", &scaling_csv)?;
        if ns.len() >= 2 && gaps.iter().all(|&g| g > 0.0) {
            let fit = log_log_slope(&ns, &gaps);
            ctx.results.insert("h1_gap_slope".into(), Value::Float(fit.slope));
            ctx.results
                .insert("h1_gap_slope_stderr".into(), Value::Float(fit.slope_stderr));
            ctx.results
                .insert("h1_gap_intercept".into(), Value::Float(fit.intercept));
        }
    }
    if !chaos_ns.is_empty() {
        ctx.out.write_csv("chaos.csv", &chaos_csv)?;
        if chaos_ns.len() >= 2 && chaos_vals.iter().all(|&c| c > 0.0) {
            let fit = log_log_slope(&chaos_ns, &chaos_vals);
            ctx.results.insert("chaos_slope".into(), Value::Float(fit.slope));
        }
    }
    Ok(())
}

fn meanfield(ctx: &mut Context<'_>) -> Result<()> {
    let cfg = ctx.config;
    let mf = &cfg.meanfield;
    let replicas = cfg.dynamics.replicas as usize;
    let base = cfg.meanfield_params(Exec::Sequential)?;
    let curves = ctx.phase("relaxation", |c| {
        c.exec
            .map_range(replicas, |r| {
                let mut p = base.clone();
                p.replica = r;
                if replicas == 1 {
                    p.exec = c.exec;
                }
                relaxation_curve(&p, mf.t_end, mf.every)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()
    })?;
    let mut csv = ctx.csv(&["t", "x_norm_sq", "stderr"]);
    let (mut ts, mut logs) = (Vec::new(), Vec::new());
    for (j, &(t, _)) in curves[0].iter().enumerate() {
        let vals: Vec<f64> = curves.iter().map(|c| c[j].1).collect();
        let e = mean_and_stderr(&vals);
        csv.row(cells![t, e.mean, e.stderr]);
        if t >= mf.fit_from - 1e-9 && e.mean > 0.0 {
            ts.push(t);
            logs.push(e.mean.ln());
        }
    }
    ctx.out.write_csv("relaxation.csv", &csv)?;
    if ts.len() >= 2 {
        let fit = linear_fit(&ts, &logs);
        ctx.results.insert("decay_rate".into(), Value::Float(-fit.slope));
        ctx.results
            .insert("decay_rate_stderr".into(), Value::Float(fit.slope_stderr));
    }
    ctx.results
        .insert("mass".into(), Value::Float(cfg.grid.mass));
    ctx.results
        .insert("ensemble".into(), Value::Integer(mf.ensemble));
    Ok(())
}

fn coupling(ctx: &mut Context<'_>) -> Result<()> {
    let cfg = ctx.config;
    let times = cfg.meanfield.times.clone();
    let replicas = cfg.dynamics.replicas as usize;
    let amplitude = cfg.dynamics.init_amplitude;
    let mut csv = ctx.csv(&["N", "t", "gap_mean", "gap_stderr"]);
    let mut final_gaps = Vec::new();
    for n in cfg.components() {
        let mut sim = cfg.sim_params(n, Exec::Sequential)?;
        let mut mfp = cfg.meanfield_params(Exec::Sequential)?;
        mfp.x_amplitude = amplitude;
        mfp.copies = mfp.copies.max(n);
        if replicas == 1 {
            sim.exec = ctx.exec;
            mfp.exec = ctx.exec;
        }
        let outer = if replicas > 1 { ctx.exec } else { Exec::Sequential };
        let runs = ctx.phase(&format!("N{n}"), |_| {
            outer
                .map_range(replicas, |r| {
                    let (mut s, mut m) = (sim.clone(), mfp.clone());
                    s.replica = r;
                    m.replica = r;
                    run_coupled_pair(&s, &m, &times)
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()
        })?;
        for (j, &t) in runs[0].times.iter().enumerate() {
            // Components of one replica share μ, so replicas are the
            // independent unit; a single replica falls back to components.
            let e = if replicas > 1 {
                mean_and_stderr(&runs.iter().map(|r| r.mean_gap(j)).collect::<Vec<_>>())
            } else {
                mean_and_stderr(&runs[0].gaps[j])
            };
            csv.row(cells![n, t, e.mean, e.stderr]);
            if j + 1 == runs[0].times.len() {
                final_gaps.push((n, e));
            }
        }
    }
    ctx.out.write_csv("coupling.csv", &csv)?;
    ctx.results
        .insert("components".into(), ints(final_gaps.iter().map(|(n, _)| *n)));
    ctx.results
        .insert("final_gap".into(), floats(final_gaps.iter().map(|(_, e)| e.mean)));
    ctx.results
        .insert("final_gap_stderr".into(), floats(final_gaps.iter().map(|(_, e)| e.stderr)));
    Ok(())
}

fn ds_check(ctx: &mut Context<'_>) -> Result<()> {
    let cfg = ctx.config;
    let grid: Arc<Grid> = cfg.grid()?;
    let modes: Vec<usize> = grid
        .shells()
        .into_iter()
        .take(cfg.observables.shells as usize)
        .flat_map(|(_, m)| m)
        .collect();
    let mut csv = ctx.csv(&["N", "kx", "ky", "k2", "residual", "stderr"]);
    let mut summary = ctx.csv(&["N", "max_residual", "max_residual_stderr"]);
    let (mut ns, mut maxes) = (Vec::new(), Vec::new());
    for n in cfg.components() {
        let run = ctx.phase(&format!("N{n}"), |c| spectrum_run(c.config, n, ProductRule::Grid, c.exec))?;
        ctx.stats.extend(run.stats.iter().cloned());
        let res = ds_residual_batches(&grid, &run.estimate, true, &modes)?;
        for (&idx, e) in modes.iter().zip(&res) {
            let k = grid.wavevector(idx);
            csv.row(cells![n, k.k1, k.k2, k.norm_sq(), e.mean, e.stderr]);
        }
        let worst = res
            .iter()
            .max_by(|a, b| a.mean.abs().total_cmp(&b.mean.abs()))
            .ok_or(Error::EmptySample("ds modes"))?;
        summary.row(cells![n, worst.mean.abs(), worst.stderr]);
        ns.push(n as f64);
        maxes.push(worst.mean.abs());
    }
    ctx.out.write_csv("ds_residual.csv", &csv)?;
    ctx.out.write_csv("ds_summary.csv", &summary)?;
    ctx.results.insert("max_residual".into(), floats(maxes.iter().copied()));
    if ns.len() >= 2 && maxes.iter().all(|&m| m > 0.0) {
        let fit = log_log_slope(&ns, &maxes);
        ctx.results.insert("residual_slope".into(), Value::Float(fit.slope));
    }
    Ok(())
}
