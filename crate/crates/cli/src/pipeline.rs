//! One function per subcommand. Each returns the files it wrote (relative to
//! the output directory); [`execute`] then records them in the manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bowsim_core::autodiff::Objective;
use bowsim_core::eval::{
    evaluate_testset, reference_trajectory, residual_compare, residuals_from_derivatives, stick_slip_segments,
    CaseReport, MetricReport, ResidualEntry, StateMetrics, TestSet,
};
use bowsim_core::fdm::{self, sample_count, simulate, AUDIO_RATE, REFERENCE_RATE};
use bowsim_core::nets::{self, DeepOnetModel, OperatorInput, PinnArch, PinnModel, Surrogate, TimeMarchingPinn};
use bowsim_core::spectra::{hessian_spectrum, landscape, random_direction};
use bowsim_core::train::{
    build_deeponet_dataset, train_deeponet, train_pinn_window, window_collocation, window_seed, DeepOnetObjective,
    History, LossTerms, LossWeights, ObservationSet, PinnObjective,
};
use bowsim_core::{Error, InitialCondition, OscillatorConfig, ParamVector, Trajectory};
use serde::{Deserialize, Serialize};

use crate::config::{NetKind, RunConfig, SynthSource};
use crate::manifest::Manifest;
use crate::plot::{self, PlotKind, Table};
use crate::{wav, Command, CliError};

pub const CHECKPOINT: &str = "model.ckpt";
pub const FAILED_CHECKPOINT: &str = "failed.ckpt";
pub const SUMMARY: &str = "summary.json";

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub threads: usize,
}

#[derive(Debug)]
pub struct Outcome {
    pub dir: PathBuf,
    /// Relative to `dir`, in the order written.
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

impl Context {
    /// Checkpoint read by the post-training commands.
    pub fn checkpoint(&self) -> PathBuf {
        match &self.config.output.checkpoint {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => self.out.join(p),
            None => self.out.join(CHECKPOINT),
        }
    }

    fn load_model(&self) -> Result<Surrogate, CliError> {
        let path = self.checkpoint();
        if !path.exists() {
            return Err(CliError::Usage(format!(
                "no checkpoint at {}; run a train command first or set [output] checkpoint",
                path.display()
            )));
        }
        Ok(nets::load(&path)?)
    }
}

/// Collects the files a command writes.
struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn new(dir: &'a Path) -> Self {
        Self { dir, files: Vec::new() }
    }

    fn write<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(PathBuf::from(name));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Other(e.to_string()))?;
            writeln!(w)?;
            Ok(())
        })
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.write(name, |w| Ok(w.write_all(bytes)?))
    }

    fn model(&mut self, name: &str, model: &Surrogate) -> Result<(), CliError> {
        nets::save(&self.dir.join(name), model)?;
        self.files.push(PathBuf::from(name));
        Ok(())
    }

    fn trajectory(&mut self, name: &str, traj: &Trajectory, config: &OscillatorConfig) -> Result<(), CliError> {
        self.write(name, |w| Ok(traj.write_csv(w, config)?))
    }
}

pub fn execute(ctx: &Context, command: &Command) -> Result<Outcome, CliError> {
    std::fs::create_dir_all(&ctx.out)?;
    let mut w = Writer::new(&ctx.out);
    let mut extra = serde_json::Value::Null;
    match command {
        Command::Fdm => run_fdm(ctx, &mut w)?,
        Command::TrainPinn => run_train_pinn(ctx, &mut w)?,
        Command::TrainDeeponet => run_train_deeponet(ctx, &mut w, false)?,
        Command::TrainHybrid => run_train_deeponet(ctx, &mut w, true)?,
        Command::Eval => run_eval(ctx, &mut w)?,
        Command::Hessian => run_hessian(ctx, &mut w)?,
        Command::Landscape => run_landscape(ctx, &mut w)?,
        Command::Synth { trajectory } => run_synth(ctx, &mut w, trajectory.as_deref())?,
        Command::Plot { kind, inputs } => {
            let kind: PlotKind = kind.parse()?;
            let svg = plot::render(kind, inputs, &ctx.config.oscillator())?;
            w.bytes(&format!("{}.svg", kind.name()), svg.as_bytes())?;
            extra = serde_json::json!({ "kind": kind.name(), "inputs": inputs });
        }
    }
    let parameters = serde_json::json!({
        "seeds": ctx.config.seeds(),
        "config": ctx.config,
        "extra": extra,
    });
    let mut manifest = Manifest::load_or_default(&ctx.out)?;
    manifest.record(&ctx.out, command.name(), parameters, &w.files)?;
    let manifest = manifest.save(&ctx.out)?;
    log::info!("{}: wrote {} file(s) to {}", command.name(), w.files.len(), ctx.out.display());
    Ok(Outcome { dir: ctx.out.clone(), files: w.files, manifest })
}

/// Integer ratio `from / to`, as a config error otherwise.
fn rate_ratio(from: f64, to: f64) -> Result<usize, CliError> {
    let k = from / to;
    let r = k.round();
    if r < 1.0 || (k - r).abs() > 1e-9 * k {
        return Err(CliError::Config(format!("{to} Hz does not divide {from} Hz")));
    }
    Ok(r as usize)
}

fn grid(rate: f64, t_max: f64) -> Vec<f64> {
    (0..sample_count(t_max, rate)).map(|n| n as f64 / rate).collect()
}

fn run_fdm(ctx: &Context, w: &mut Writer) -> Result<(), CliError> {
    let c = &ctx.config;
    let osc = c.oscillator();
    let rate = c.scenario.fdm_rate;
    let k = rate_ratio(rate, c.output.csv_rate)?;
    let traj = simulate(&osc, c.initial_condition(), rate, c.scenario.t_max)?;
    w.trajectory("trajectory.csv", &traj.subsample(k), &osc)?;
    w.json("segments.json", &stick_slip_segments(&traj, &osc))?;
    if traj.len() >= 3 {
        let (r1, r2) = fdm::residuals(&traj, &osc)?;
        w.json("residuals.json", &residual_compare(&[ResidualEntry { name: "fdm".into(), r1, r2 }])?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunSummary {
    steps: usize,
    converged: bool,
    final_terms: LossTerms,
    final_weights: LossWeights,
}

/// What the post-training commands need to rebuild the training loss.
#[derive(Serialize, Deserialize)]
struct SummaryHeader {
    net: NetKind,
    hybrid: bool,
    /// Final loss weights of every window (one entry for DeepONets).
    final_weights: Vec<LossWeights>,
}

fn write_history(w: &mut Writer, name: &str, h: &History) -> Result<(), CliError> {
    w.write(name, |f| Ok(h.write_csv(f)?))
}

/// Saves the last finite parameters of a diverged run and maps the error.
fn training_failure(w: &Writer, e: Error, rebuild: impl FnOnce(Option<ParamVector>) -> Result<Surrogate, CliError>) -> CliError {
    match e {
        Error::Training { step, reason, last_finite } => {
            let path = w.dir.join(FAILED_CHECKPOINT);
            let saved = rebuild(last_finite.map(|b| *b)).and_then(|m| Ok(nets::save(&path, &m)?));
            if let Err(err) = saved {
                return CliError::Other(format!("training failed at step {step}: {reason}; checkpoint not written: {err}"));
            }
            CliError::Training { msg: format!("step {step}: {reason}"), checkpoint: path }
        }
        other => other.into(),
    }
}

fn pinn_window_arch(base: &PinnArch, i: usize) -> PinnArch {
    PinnArch { t_start: base.t_start + i as f64 * base.scale_t, ..base.clone() }
}

fn run_train_pinn(ctx: &Context, w: &mut Writer) -> Result<(), CliError> {
    let c = &ctx.config;
    if c.train.net != NetKind::Pinn {
        return Err(CliError::Config("train-pinn needs [train] net = \"pinn\"".into()));
    }
    let osc = c.oscillator();
    let plan = c.plan();
    let arch = c.pinn_arch();
    let mut ic = c.initial_condition();
    let mut windows: Vec<PinnModel> = Vec::new();
    let mut runs = Vec::new();
    for i in 0..plan.time_windows {
        let arch_i = pinn_window_arch(&arch, i);
        let seed = window_seed(&plan, i);
        let run = train_pinn_window(arch_i.clone(), &plan, &osc, ic, seed).map_err(|e| {
            training_failure(w, e, |last| {
                let mut m = PinnModel::new(arch_i.clone(), seed)?;
                if let Some(p) = last {
                    m.params = p;
                }
                let mut all = windows.clone();
                all.push(m);
                Ok(Surrogate::Pinn(TimeMarchingPinn { windows: all }))
            })
        })?;
        let t_end = run.model.arch().t_end();
        let (p, q) = run.model.eval(&[t_end])?;
        ic = InitialCondition { p0: p[0], q0: q[0] };
        log::info!("window {i}: {} steps, L_ODE1 {:.3e}", run.steps, run.final_terms.ode1);
        windows.push(run.model.clone());
        runs.push(run);
    }
    let model = TimeMarchingPinn { windows };
    w.model(CHECKPOINT, &Surrogate::Pinn(model.clone()))?;
    for (i, r) in runs.iter().enumerate() {
        write_history(w, &format!("history_w{i}.csv"), &r.history)?;
    }
    let summaries: Vec<RunSummary> = runs
        .iter()
        .map(|r| RunSummary { steps: r.steps, converged: r.converged, final_terms: r.final_terms, final_weights: r.final_weights })
        .collect();
    write_summary(w, NetKind::Pinn, false, summaries)?;
    let t = grid(c.output.csv_rate, model.t_end());
    let (p, q) = model.eval(&t)?;
    let traj = Trajectory { sample_rate: c.output.csv_rate, t0: 0.0, p, q };
    w.trajectory("trajectory.csv", &traj, &osc)
}

fn write_summary(w: &mut Writer, net: NetKind, hybrid: bool, runs: Vec<RunSummary>) -> Result<(), CliError> {
    let header = SummaryHeader { net, hybrid, final_weights: runs.iter().map(|r| r.final_weights).collect() };
    let mut v = serde_json::to_value(&header).map_err(|e| CliError::Other(e.to_string()))?;
    v["runs"] = serde_json::to_value(&runs).map_err(|e| CliError::Other(e.to_string()))?;
    w.json(SUMMARY, &v)
}

fn read_summary(ctx: &Context) -> Result<Option<SummaryHeader>, CliError> {
    let path = ctx.out.join(SUMMARY);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    let header = SummaryHeader {
        net: serde_json::from_value(v["net"].clone()).map_err(|e| CliError::Other(e.to_string()))?,
        hybrid: v["hybrid"].as_bool().unwrap_or(false),
        final_weights: serde_json::from_value(v["final_weights"].clone()).map_err(|e| CliError::Other(e.to_string()))?,
    };
    Ok(Some(header))
}

/// FDM observations of the scenario trajectory at the audio rate.
pub fn hybrid_observations(config: &RunConfig) -> Result<ObservationSet, CliError> {
    let reference = reference_trajectory(&config.oscillator(), config.initial_condition(), config.scenario.t_max)?;
    Ok(ObservationSet::from_trajectory(&reference, config.train.scale_t, config.train.plan.n_obs)?)
}

fn run_train_deeponet(ctx: &Context, w: &mut Writer, hybrid: bool) -> Result<(), CliError> {
    let c = &ctx.config;
    if c.train.net != NetKind::Deeponet {
        return Err(CliError::Config("DeepONet training needs [train] net = \"deeponet\"".into()));
    }
    let osc = c.oscillator();
    let plan = c.plan();
    let arch = c.deeponet_arch();
    let seeds = c.seeds();
    let data = build_deeponet_dataset(plan.groups, plan.per_group, arch.scale_t, arch.scale_pq, seeds.dataset)?;
    let obs = if hybrid { Some(hybrid_observations(c)?) } else { None };
    let run = train_deeponet(arch.clone(), &plan, &osc, &data, obs.as_ref(), seeds.init).map_err(|e| {
        training_failure(w, e, |last| {
            let mut m = DeepOnetModel::new(arch.clone(), seeds.init)?;
            if let Some(p) = last {
                m.params = p;
            }
            Ok(Surrogate::DeepOnet(m))
        })
    })?;
    log::info!("{} steps, L_ODE1 {:.3e}, converged {}", run.steps, run.final_terms.ode1, run.converged);
    w.model(CHECKPOINT, &Surrogate::DeepOnet(run.model.clone()))?;
    write_history(w, "history.csv", &run.history)?;
    let summary =
        RunSummary { steps: run.steps, converged: run.converged, final_terms: run.final_terms, final_weights: run.final_weights };
    write_summary(w, NetKind::Deeponet, hybrid, vec![summary])?;
    let n = sample_count(c.scenario.t_max, c.output.csv_rate);
    let traj = run.model.rollout(c.initial_condition(), c.output.csv_rate, n)?;
    w.trajectory("trajectory.csv", &traj, &osc)
}

/// Model prediction on the audio grid up to `t_max`.
fn predict(model: &Surrogate, ic: InitialCondition, t_max: f64) -> Result<Trajectory, CliError> {
    let n = sample_count(t_max, AUDIO_RATE);
    Ok(match model {
        Surrogate::Pinn(m) => {
            let (p, q) = m.eval(&grid(AUDIO_RATE, t_max))?;
            Trajectory { sample_rate: AUDIO_RATE, t0: 0.0, p, q }
        }
        Surrogate::DeepOnet(m) => m.rollout(ic, AUDIO_RATE, n)?,
    })
}

/// Pointwise ODE residuals of the model on the audio grid over `[0, t_max]`.
fn model_residuals(model: &Surrogate, config: &OscillatorConfig, ic: InitialCondition, t_max: f64) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let t = grid(AUDIO_RATE, t_max);
    let [p, q, p_t, q_t] = match model {
        Surrogate::Pinn(m) => {
            let mut cols = [vec![0.0; t.len()], vec![0.0; t.len()], vec![0.0; t.len()], vec![0.0; t.len()]];
            for (wi, window) in m.windows.iter().enumerate() {
                let idx: Vec<usize> = (0..t.len()).filter(|&i| m.window_for(t[i]) == wi).collect();
                if idx.is_empty() {
                    continue;
                }
                let tw: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
                let o = window.eval_with_derivative(&tw)?;
                for (k, &i) in idx.iter().enumerate() {
                    cols[0][i] = o.p[k];
                    cols[1][i] = o.q[k];
                    cols[2][i] = o.p_t[k];
                    cols[3][i] = o.q_t[k];
                }
            }
            cols
        }
        Surrogate::DeepOnet(m) => {
            let input = OperatorInput::from_rows(&t, &vec![ic; t.len()])?;
            m.eval_with_derivative(&input)?
        }
    };
    Ok(residuals_from_derivatives(config, &p, &q, &p_t, &q_t))
}

fn run_eval(ctx: &Context, w: &mut Writer) -> Result<(), CliError> {
    let c = &ctx.config;
    let osc = c.oscillator();
    let model = ctx.load_model()?;
    let ic = c.initial_condition();
    let conv = c.output.eval.convention;
    let t_max = match &model {
        Surrogate::Pinn(m) => c.eval_t_max().min(m.t_end()),
        Surrogate::DeepOnet(_) => c.eval_t_max(),
    };

    let reference = reference_trajectory(&osc, ic, t_max)?;
    let prediction = predict(&model, ic, t_max)?;
    w.trajectory("reference.csv", &reference, &osc)?;
    w.trajectory("prediction.csv", &prediction, &osc)?;

    let report = match &model {
        Surrogate::Pinn(_) => {
            let metrics = StateMetrics::compute((&prediction.p, &prediction.q), (&reference.p, &reference.q), conv)?;
            MetricReport::from_cases(vec![CaseReport { index: 0, ic, metrics }], Vec::new(), conv)
        }
        Surrogate::DeepOnet(m) => {
            let set = TestSet::sample(&osc, c.output.eval.cases, m.arch().scale_pq, t_max, c.seeds().test_set)?;
            log::info!("test set: {} cases, {} draws rejected by the range filter", set.cases.len(), set.rejected);
            evaluate_parallel(m, &osc, &set, conv, ctx.threads)?
        }
    };
    if let Some(mean) = &report.mean {
        log::info!("mean NCC p {:.3}% q {:.3}%, NMSE p {:.3e} q {:.3e}", mean.ncc_p, mean.ncc_q, mean.nmse_p, mean.nmse_q);
    }
    w.write("report.json", |f| Ok(report.write_json(&mut *f)?))?;

    // residual distributions: the model against FDM at both rates, over the
    // span the model predicts without rollout
    let span = match &model {
        Surrogate::Pinn(_) => t_max,
        Surrogate::DeepOnet(m) => t_max.min(m.arch().scale_t),
    };
    let (m1, m2) = model_residuals(&model, &osc, ic, span)?;
    let high = simulate(&osc, ic, REFERENCE_RATE, span)?;
    let (h1, h2) = fdm::residuals(&high, &osc)?;
    let k = rate_ratio(REFERENCE_RATE, AUDIO_RATE)?;
    let pick = |r: Vec<f64>| r.into_iter().step_by(k).collect::<Vec<_>>();
    let low = simulate(&osc, ic, AUDIO_RATE, span)?;
    let (l1, l2) = fdm::residuals(&low, &osc)?;
    let entries = vec![
        ResidualEntry { name: "model".into(), r1: m1, r2: m2 },
        ResidualEntry { name: "fdm_high".into(), r1: pick(h1), r2: pick(h2) },
        ResidualEntry { name: "fdm_low".into(), r1: l1, r2: l2 },
    ];
    w.write("residuals.csv", |f| {
        writeln!(f, "series,r1,r2")?;
        for e in &entries {
            for (a, b) in e.r1.iter().zip(&e.r2) {
                writeln!(f, "{},{a:.16e},{b:.16e}", e.name)?;
            }
        }
        Ok(())
    })?;
    w.json("residuals.json", &residual_compare(&entries)?)
}

/// Test cases split into contiguous blocks, one per thread; the report is
/// assembled in case order, so it does not depend on `threads`.
fn evaluate_parallel(
    model: &DeepOnetModel,
    config: &OscillatorConfig,
    set: &TestSet,
    conv: bowsim_core::eval::MetricConvention,
    threads: usize,
) -> Result<MetricReport, CliError> {
    let block = set.cases.len().div_ceil(threads.max(1)).max(1);
    let parts: Vec<TestSet> = set
        .cases
        .chunks(block)
        .map(|c| TestSet { scale_pq: set.scale_pq, cases: c.to_vec(), rejected: 0 })
        .collect();
    let results: Vec<bowsim_core::Result<MetricReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = parts.iter().map(|p| s.spawn(move || evaluate_testset(model, config, p, conv))).collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
    });
    let mut cases = Vec::new();
    let mut failed = Vec::new();
    for (b, r) in results.into_iter().enumerate() {
        let r = r?;
        let offset = b * block;
        cases.extend(r.cases.into_iter().map(|c| CaseReport { index: c.index + offset, ..c }));
        failed.extend(r.failed.into_iter().map(|i| i + offset));
    }
    Ok(MetricReport::from_cases(cases, failed, conv))
}

/// Training loss at the checkpoint: the first PINN window on its collocation
/// set, or the DeepONet loss on the first `batch_size` dataset rows.
fn with_objective<R>(
    ctx: &Context,
    model: &Surrogate,
    f: impl FnOnce(&dyn Objective, &ParamVector) -> Result<R, CliError>,
) -> Result<R, CliError> {
    let c = &ctx.config;
    let osc = c.oscillator();
    let plan = c.plan();
    let summary = read_summary(ctx)?;
    let weights = summary.as_ref().and_then(|s| s.final_weights.first().copied()).unwrap_or_else(|| plan.initial_weights());
    match model {
        Surrogate::Pinn(m) => {
            let first = m.windows.first().ok_or_else(|| CliError::Other("checkpoint holds no PINN window".into()))?;
            let t = window_collocation(first.arch(), &plan, window_seed(&plan, 0));
            let obj = PinnObjective { model: first, config: &osc, t: &t, ic: c.initial_condition(), weights };
            f(&obj, &first.params)
        }
        Surrogate::DeepOnet(m) => {
            let arch = m.arch();
            let data = build_deeponet_dataset(plan.groups, plan.per_group, arch.scale_t, arch.scale_pq, c.seeds().dataset)?;
            let rows: Vec<usize> = (0..plan.batch_size.min(data.len())).collect();
            let batch = data.batch(&rows)?;
            let obs = match summary.as_ref().is_some_and(|s| s.hybrid) {
                true => Some(hybrid_observations(c)?),
                false => None,
            };
            let obj = DeepOnetObjective { model: m, config: &osc, batch: &batch, observations: obs.as_ref(), weights };
            f(&obj, &m.params)
        }
    }
}

#[derive(Serialize)]
struct EigenReport {
    loss: f64,
    dim: usize,
    eigenvalues: Vec<f64>,
    residuals: Vec<f64>,
    lanczos_seed: u64,
    probes: usize,
    depth: usize,
    bandwidth: f64,
    density_integral: f64,
    slq_seed: u64,
}

fn run_hessian(ctx: &Context, w: &mut Writer) -> Result<(), CliError> {
    let c = &ctx.config;
    let model = ctx.load_model()?;
    let seed = c.seeds().spectra;
    let lanczos = bowsim_core::spectra::LanczosSettings { seed, ..c.output.spectra.lanczos };
    let slq = bowsim_core::spectra::SlqSettings { seed, ..c.output.spectra.slq };
    let (spectrum, loss, dim) = with_objective(ctx, &model, |obj, params| {
        let loss = bowsim_core::autodiff::value(obj, params)?;
        Ok((hessian_spectrum(obj, params, c.output.spectra.top_k, &lanczos, &slq)?, loss, params.len()))
    })?;
    if let Some(top) = spectrum.top.first() {
        log::info!("largest Hessian eigenvalue {:.6e} (residual {:.1e})", top.value, top.residual);
    }
    let report = EigenReport {
        loss,
        dim,
        eigenvalues: spectrum.top.iter().map(|e| e.value).collect(),
        residuals: spectrum.top.iter().map(|e| e.residual).collect(),
        lanczos_seed: lanczos.seed,
        probes: spectrum.probes,
        depth: spectrum.depth,
        bandwidth: spectrum.density.bandwidth,
        density_integral: spectrum.density.integral(),
        slq_seed: slq.seed,
    };
    w.json("eigen.json", &report)?;
    w.write("density.csv", |f| Ok(spectrum.density.write_csv(f)?))
}

fn run_landscape(ctx: &Context, w: &mut Writer) -> Result<(), CliError> {
    let c = &ctx.config;
    let model = ctx.load_model()?;
    let seed = c.seeds().spectra;
    let grid_n = c.output.landscape.grid_n;
    let grid = with_objective(ctx, &model, |obj, params| {
        let e1 = random_direction(params, seed, 1);
        let e2 = random_direction(params, seed, 2);
        Ok(landscape(obj, params, &e1, &e2, grid_n)?)
    })?;
    let centre = grid_n / 2;
    w.json(
        "landscape.json",
        &serde_json::json!({ "grid_n": grid_n, "seed": seed, "centre_loss": grid.loss.get(centre, centre) }),
    )?;
    w.write("landscape.csv", |f| Ok(grid.write_csv(f)?))
}

fn run_synth(ctx: &Context, w: &mut Writer, trajectory: Option<&Path>) -> Result<(), CliError> {
    let c = &ctx.config;
    let (p, rate) = match trajectory {
        Some(path) => {
            let table = Table::read(path)?;
            let t = table.column("t", path)?;
            let p = table.column("p", path)?;
            if t.len() < 2 {
                return Err(CliError::Usage(format!("{}: need at least two samples", path.display())));
            }
            let rate = (t.len() - 1) as f64 / (t[t.len() - 1] - t[0]);
            // CSV times carry rounding; snap to the nearest whole Hz
            (p, rate.round())
        }
        None => match c.output.synth.source {
            SynthSource::Fdm => {
                let traj = simulate(&c.oscillator(), c.initial_condition(), c.scenario.fdm_rate, c.scenario.t_max)?;
                (traj.p, traj.sample_rate)
            }
            SynthSource::Model => {
                let model = ctx.load_model()?;
                let t_max = match &model {
                    Surrogate::Pinn(m) => c.scenario.t_max.min(m.t_end()),
                    Surrogate::DeepOnet(_) => c.scenario.t_max,
                };
                (predict(&model, c.initial_condition(), t_max)?.p, AUDIO_RATE)
            }
        },
    };
    let bytes = wav::render(&p, rate).map_err(|e| CliError::Other(e.to_string()))?;
    let name = c.output.synth.file.clone().unwrap_or_else(|| "synth.wav".into());
    w.bytes(&name, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_ratio_examples() {
        assert_eq!(rate_ratio(REFERENCE_RATE, AUDIO_RATE).unwrap(), 100);
        assert_eq!(rate_ratio(AUDIO_RATE, AUDIO_RATE).unwrap(), 1);
        assert!(matches!(rate_ratio(48_000.0, AUDIO_RATE), Err(CliError::Config(_))));
        assert!(rate_ratio(AUDIO_RATE, REFERENCE_RATE).is_err());
    }
}
