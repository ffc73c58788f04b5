//! One function per subcommand. Human-readable progress goes to `out`;
//! artifacts go to files under the run's output directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use sbp_core::bgan::{self, BganRun, CorrectionSetup, Critic, Generator};
use sbp_core::bias::{global_bias, GlobalBias};
use sbp_core::classic::{self, ClassicModel};
use sbp_core::correct::{resistance_bias, Corrector, CorrectorKind};
use sbp_core::data::{self, Dataset};
use sbp_core::gradsuite::{run_suite, Check, GradCase, SuiteReport};
use sbp_core::metrics::{evaluate as eval_metrics, sbp_corrector, MetricsReport};
use sbp_core::phi::PhiEncoder;
use sbp_core::rng::Rng;

use crate::checkpoint::{hex, Checkpoint};
use crate::config::{ExperimentConfig, Mode};
use crate::error::{usage, CliError, Result};
use crate::report;

pub const DATASET_FILE: &str = "dataset.json";
pub const CLASSIC_FILE: &str = "classic.json";
pub const BGAN_FILE: &str = "bgan.json";
pub const CLASSIC_TRACE_FILE: &str = "classic_loss.csv";
pub const BGAN_TRACE_FILE: &str = "bgan_trace.csv";
pub const AUDIT_FILE: &str = "bias_audit.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const PER_CLASS_CSV: &str = "per_class.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const TREND_CSV: &str = "trend.csv";

/// Stream that feeds the phi encoder, fixed so every command rebuilds the
/// same encoder from the run seed.
const PHI_STREAM: u64 = 30;

/// Explicit input files; each defaults to its standard name in the output directory.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub dataset: Option<PathBuf>,
    pub classic: Option<PathBuf>,
    pub bgan: Option<PathBuf>,
}

impl Inputs {
    fn dataset(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| cfg.output_dir.join(DATASET_FILE))
    }
    fn classic(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.classic.clone().unwrap_or_else(|| cfg.output_dir.join(CLASSIC_FILE))
    }
    fn bgan(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.bgan.clone().unwrap_or_else(|| cfg.output_dir.join(BGAN_FILE))
    }
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(CliError::from)?
    };
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// Loads a dataset and checks it against the configured class count and width.
pub fn load_dataset(path: &Path, cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = data::load_dataset(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if ds.m_classes() != cfg.dataset.m_classes || ds.feature_dim() != cfg.dataset.feature_dim() {
        return Err(usage(format!(
            "dataset {} has M={} and feature width {}, config expects M={} and width {}",
            path.display(),
            ds.m_classes(),
            ds.feature_dim(),
            cfg.dataset.m_classes,
            cfg.dataset.feature_dim()
        )));
    }
    Ok(ds)
}

pub fn correction_setup(cfg: &ExperimentConfig, ds: &Dataset) -> Result<CorrectionSetup> {
    let phi = PhiEncoder::new(
        cfg.bias.phi_variant,
        ds.feature_dim(),
        ds.m_classes(),
        &mut Rng::new(cfg.seed).fork(PHI_STREAM),
    )?;
    // training-split statistics, like the frequency baselines
    let gb = if cfg.bias.use_global_bias {
        global_bias(&ds.train_frequencies(), cfg.bias.a, cfg.bias.eps_glo)?
    } else {
        GlobalBias::zeros(ds.m_classes())
    };
    Ok(CorrectionSetup { phi, gb, eps_c: cfg.bias.eps_c })
}

/// Rebuilds the frozen classic model from a checkpoint.
pub fn load_classic(path: &Path, ds: &Dataset) -> Result<ClassicModel> {
    let ck = Checkpoint::load(path)?;
    ck.expect_kind("classic")?;
    if !ck.frozen {
        return Err(CliError::Contract(format!("classic checkpoint {} is not frozen", path.display())));
    }
    let mut model = ClassicModel::new(ds.feature_dim(), ds.m_classes(), &mut Rng::new(0));
    ck.restore(&mut [&mut model])?;
    model.freeze();
    let sum = model.verify_frozen()?;
    if hex(sum) != ck.param_checksum {
        return Err(CliError::Contract(format!(
            "classic model checksum {} differs from checkpoint {}",
            hex(sum),
            ck.param_checksum
        )));
    }
    Ok(model)
}

pub fn load_bgan(path: &Path, cfg: &ExperimentConfig, ds: &Dataset) -> Result<(Generator, Critic)> {
    let ck = Checkpoint::load(path)?;
    ck.expect_kind("bgan")?;
    let mut rng = Rng::new(0);
    let mut g = Generator::new(&cfg.bgan.net, ds.feature_dim(), ds.m_classes(), &mut rng)?;
    let mut d = Critic::new(&cfg.bgan.net, ds.m_classes(), &mut rng)?;
    ck.restore(&mut [&mut g, &mut d])?;
    Ok((g, d))
}

fn save_classic(model: &ClassicModel, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    Checkpoint::capture("classic", &[model], model.is_frozen(), cfg.snapshot()).save(path)
}

pub fn gen_data(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<PathBuf> {
    let ds = data::generate(&cfg.dataset).map_err(|e| usage(e.to_string()))?;
    let path = cfg.output_dir.join(DATASET_FILE);
    write_file(&path, &ds.to_json()?)?;
    let m = ds.m_classes();
    let mut train = vec![0usize; m];
    let mut test = vec![0usize; m];
    ds.train.iter().for_each(|s| train[s.label] += 1);
    ds.test.iter().for_each(|s| test[s.label] += 1);
    say!(out, "{:>5}  {:>8}  {:>6}  {:>6}", "class", "weight", "train", "test");
    for c in 0..m {
        say!(out, "{c:>5}  {:>8.5}  {:>6}  {:>6}", ds.class_weights[c], train[c], test[c]);
    }
    let head = (m / 10).max(1);
    let share = |r: std::ops::Range<usize>| 100.0 * train[r].iter().sum::<usize>() as f64 / ds.train.len() as f64;
    say!(
        out,
        "head ({head} classes): {:.1}% of train; tail half ({} classes): {:.1}%",
        share(0..head),
        m - m / 2,
        share(m / 2..m)
    );
    say!(out, "wrote {}", path.display());
    Ok(path)
}

pub fn train_classic(cfg: &ExperimentConfig, inputs: &Inputs, out: &mut dyn Write) -> Result<PathBuf> {
    if cfg.mode == Mode::Integrated {
        return Err(usage(
            "mode is integrated: train-bgan trains the classic model and the generator together",
        ));
    }
    let ds = load_dataset(&inputs.dataset(cfg), cfg)?;
    let mut run = classic::train_classic(&ds, &cfg.classic, cfg.seed)?;
    run.model.freeze();
    let path = cfg.output_dir.join(CLASSIC_FILE);
    save_classic(&run.model, cfg, &path)?;
    write_file(
        &cfg.output_dir.join(CLASSIC_TRACE_FILE),
        &report::classic_trace_csv(&run.loss_trace, cfg.classic.lr),
    )?;
    let last = run.loss_trace.last().copied().unwrap_or(f64::NAN);
    say!(out, "classic: {} iterations, final batch loss {last:.4}", run.loss_trace.len());
    say!(out, "classic checksum {} (frozen)", hex(run.model.verify_frozen()?));
    say!(out, "wrote {}", path.display());
    Ok(path)
}

#[derive(Debug, Serialize)]
struct AuditRecord {
    constructions: usize,
    violations: usize,
    min_margin: f64,
    eps_c: f64,
    iterations: usize,
    critic_updates: usize,
    generator_updates: usize,
    classic_checksum_before: String,
    classic_checksum_after: String,
}

pub fn train_bgan(cfg: &ExperimentConfig, inputs: &Inputs, out: &mut dyn Write) -> Result<PathBuf> {
    let ds = load_dataset(&inputs.dataset(cfg), cfg)?;
    let setup = correction_setup(cfg, &ds)?;
    let (model, run, before): (ClassicModel, BganRun, u64) = match cfg.mode {
        Mode::Gradual => {
            let model = load_classic(&inputs.classic(cfg), &ds)?;
            let before = model.verify_frozen()?;
            let run = bgan::train_bgan(&model, &setup, &ds, &cfg.bgan, cfg.seed)?;
            (model, run, before)
        }
        Mode::Integrated => {
            let (c, run) = bgan::train_integrated(&ds, &cfg.classic, &setup, &cfg.bgan, cfg.seed)?;
            save_classic(&c.model, cfg, &cfg.output_dir.join(CLASSIC_FILE))?;
            write_file(
                &cfg.output_dir.join(CLASSIC_TRACE_FILE),
                &report::classic_trace_csv(&c.loss_trace, cfg.classic.lr),
            )?;
            let before = c.model.verify_frozen()?;
            (c.model, run, before)
        }
    };
    let after = model.verify_frozen()?;
    if after != before {
        return Err(CliError::Contract(format!(
            "freeze violation: classic checksum {} before, {} after",
            hex(before),
            hex(after)
        )));
    }
    let path = cfg.output_dir.join(BGAN_FILE);
    let st = &run.state;
    Checkpoint::capture("bgan", &[&st.generator, &st.critic], false, cfg.snapshot()).save(&path)?;
    write_file(&cfg.output_dir.join(BGAN_TRACE_FILE), &report::bgan_trace_csv(&run.trace))?;
    let audit = AuditRecord {
        constructions: run.audit.constructions,
        violations: run.audit.violations,
        min_margin: run.audit.min_margin,
        eps_c: cfg.bias.eps_c,
        iterations: st.iterations,
        critic_updates: st.critic_updates,
        generator_updates: st.generator_updates,
        classic_checksum_before: hex(before),
        classic_checksum_after: hex(after),
    };
    write_file(&cfg.output_dir.join(AUDIT_FILE), &to_json(&audit))?;
    say!(
        out,
        "bgan: {} iterations, {} critic and {} generator updates",
        st.iterations,
        st.critic_updates,
        st.generator_updates
    );
    if let Some(r) = run.trace.last() {
        say!(out, "final L_G {:.6}  L_D {:.6}  critic gap {:.3e}", r.loss_g, r.loss_d, r.critic_gap);
    }
    say!(out, "classic checksum {} before and {} after: identical", hex(before), hex(after));
    say!(
        out,
        "correction biases: {} built, {} violations, min margin {:.3e}",
        audit.constructions,
        audit.violations,
        audit.min_margin
    );
    say!(out, "wrote {}", path.display());
    if audit.violations > 0 {
        return Err(CliError::Contract(format!(
            "{} of {} correction biases missed the target or the margin",
            audit.violations, audit.constructions
        )));
    }
    Ok(path)
}

pub fn build_corrector(
    kind: CorrectorKind,
    cfg: &ExperimentConfig,
    ds: &Dataset,
    generator: Option<&Generator>,
) -> Result<Corrector> {
    let freq = ds.train_frequencies();
    Ok(match kind {
        CorrectorKind::Identity => Corrector::Identity,
        CorrectorKind::PosteriorDivide => Corrector::posterior_divide(freq)?,
        CorrectorKind::ResistanceSubtract => Corrector::ResistanceSubtract {
            b_res: resistance_bias(&freq, cfg.bias.a, cfg.bias.eps_glo)?,
        },
        CorrectorKind::Sbp => {
            let g = generator.ok_or_else(|| usage("the sbp corrector needs a bgan checkpoint"))?;
            let gb = correction_setup(cfg, ds)?.gb;
            sbp_corrector(g, &gb.b_glo)
        }
    })
}

pub fn evaluate(cfg: &ExperimentConfig, inputs: &Inputs, out: &mut dyn Write) -> Result<Vec<MetricsReport>> {
    let ds = load_dataset(&inputs.dataset(cfg), cfg)?;
    let model = load_classic(&inputs.classic(cfg), &ds)?;
    say!(out, "classic checksum {} verified", hex(model.verify_frozen()?));
    let generator = if cfg.eval.correctors.contains(&CorrectorKind::Sbp) {
        Some(load_bgan(&inputs.bgan(cfg), cfg, &ds)?.0)
    } else {
        None
    };
    let mut reports = vec![];
    for &kind in &cfg.eval.correctors {
        let c = build_corrector(kind, cfg, &ds, generator.as_ref())?;
        reports.push(eval_metrics(&c, &model, &ds, &cfg.eval.k_values, &cfg.eval.top_t_values)?);
    }
    let after = model.verify_frozen()?;
    let mut counts = vec![0usize; ds.m_classes()];
    ds.test.iter().for_each(|s| counts[s.label] += 1);
    let dir = &cfg.output_dir;
    write_file(&dir.join(REPORT_CSV), &report::metrics_csv(&reports))?;
    let text = report::metrics_text(&reports);
    write_file(&dir.join(REPORT_TXT), &text)?;
    write_file(
        &dir.join(PER_CLASS_CSV),
        &report::per_class_csv(&reports, &ds.train_frequencies(), &counts),
    )?;
    write!(out, "{text}").map_err(CliError::from)?;
    say!(out, "classic checksum {} unchanged after evaluation", hex(after));
    say!(out, "wrote {}", dir.join(REPORT_CSV).display());
    Ok(reports)
}

/// Every stage for one seed, in process.
pub fn pipeline(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<Vec<MetricsReport>> {
    let inputs = Inputs::default();
    gen_data(cfg, out)?;
    if cfg.mode == Mode::Gradual {
        train_classic(cfg, &inputs, out)?;
    }
    train_bgan(cfg, &inputs, out)?;
    evaluate(cfg, &inputs, out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub corrector: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    /// Mean and spread of the per-seed difference to identity.
    pub delta_mean: f64,
    pub delta_std: f64,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub per_seed: Vec<(u64, Vec<MetricsReport>)>,
    pub summary: Vec<SummaryRow>,
}

impl CompareOutcome {
    /// Per-seed values of `metric` for `corrector`.
    pub fn values(&self, corrector: &str, metric: &str) -> Vec<f64> {
        self.per_seed
            .iter()
            .filter_map(|(_, reps)| {
                let r = reps.iter().find(|r| r.corrector == corrector)?;
                report::named_metrics(r).into_iter().find(|(n, _)| n == metric).map(|(_, v)| v)
            })
            .collect()
    }
}

pub fn seed_dir(base: &Path, seed: u64) -> PathBuf {
    base.join(format!("seed-{seed}"))
}

/// Full pipeline per seed (seeds run concurrently, each in its own
/// directory), then mean ± std per corrector and metric and deltas to identity.
pub fn compare(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<CompareOutcome> {
    if cfg.seeds.len() < 2 {
        return Err(usage(format!("compare needs at least 2 seeds, got {}", cfg.seeds.len())));
    }
    if !cfg.eval.correctors.contains(&CorrectorKind::Identity) {
        return Err(usage("compare reports deltas to identity, so eval.correctors must include identity"));
    }
    let results: Vec<(u64, Vec<u8>, Result<Vec<MetricsReport>>)> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let mut c = cfg.clone();
                c.seed = seed;
                c.dataset.seed = seed;
                c.output_dir = seed_dir(&cfg.output_dir, seed);
                s.spawn(move || {
                    info!("seed {seed}: pipeline started");
                    let mut log = vec![];
                    let r = pipeline(&c, &mut log);
                    (seed, log, r)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("seed pipeline panicked")).collect()
    });
    let mut per_seed = vec![];
    for (seed, log, r) in results {
        say!(out, "== seed {seed} ==");
        out.write_all(&log).map_err(CliError::from)?;
        per_seed.push((seed, r?));
    }
    let summary = summarize(&per_seed);
    write_file(&cfg.output_dir.join(SUMMARY_CSV), &summary_csv(&summary))?;
    let text = summary_text(&summary, cfg.seeds.len());
    write_file(&cfg.output_dir.join(SUMMARY_TXT), &text)?;
    let trend = trend_csv(&per_seed);
    write_file(&cfg.output_dir.join(TREND_CSV), &trend)?;
    write!(out, "{text}").map_err(CliError::from)?;
    say!(out, "wrote {}", cfg.output_dir.join(SUMMARY_CSV).display());
    Ok(CompareOutcome { per_seed, summary })
}

fn summarize(per_seed: &[(u64, Vec<MetricsReport>)]) -> Vec<SummaryRow> {
    let first = &per_seed[0].1;
    let mut rows = vec![];
    for (ci, rep) in first.iter().enumerate() {
        for (mi, (metric, _)) in report::named_metrics(rep).into_iter().enumerate() {
            let vals: Vec<f64> = per_seed.iter().map(|(_, r)| report::named_metrics(&r[ci])[mi].1).collect();
            let deltas: Vec<f64> = per_seed
                .iter()
                .map(|(_, r)| {
                    let id = r.iter().find(|x| x.corrector == "identity").expect("identity is configured");
                    report::named_metrics(&r[ci])[mi].1 - report::named_metrics(id)[mi].1
                })
                .collect();
            let (mean, std) = report::mean_std(&vals);
            let (delta_mean, delta_std) = report::mean_std(&deltas);
            rows.push(SummaryRow {
                corrector: rep.corrector.clone(),
                metric,
                mean,
                std,
                delta_mean,
                delta_std,
            });
        }
    }
    rows
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("corrector,metric,mean,std,delta_mean,delta_std\n");
    for r in rows {
        s += &format!("{},{},{},{},{},{}\n", r.corrector, r.metric, r.mean, r.std, r.delta_mean, r.delta_std);
    }
    s
}

fn summary_text(rows: &[SummaryRow], n_seeds: usize) -> String {
    let mut s = format!("{n_seeds} seeds, mean ± std in percent; delta is versus identity\n");
    s += &format!("{:<20}  {:>9}  {:>16}  {:>16}\n", "corrector", "metric", "value", "delta");
    for r in rows {
        let v = format!("{:.2} ± {:.2}", 100.0 * r.mean, 100.0 * r.std);
        let d = format!("{:+.2} ± {:.2}", 100.0 * r.delta_mean, 100.0 * r.delta_std);
        s += &format!("{:<20}  {:>9}  {:>16}  {:>16}\n", r.corrector, r.metric, v, d);
    }
    s
}

/// Per-seed recall changes of the two bias-subtracting correctors, for
/// checking which one costs less overall recall.
fn trend_csv(per_seed: &[(u64, Vec<MetricsReport>)]) -> String {
    let mut s = String::from("seed,K,corrector,delta_R,delta_mR\n");
    for (seed, reps) in per_seed {
        let Some(id) = reps.iter().find(|r| r.corrector == "identity") else {
            continue;
        };
        for r in reps.iter().filter(|r| r.corrector != "identity") {
            for (i, k) in r.k_values.iter().enumerate() {
                s += &format!(
                    "{seed},{k},{},{},{}\n",
                    r.corrector,
                    r.r_at_k[i] - id.r_at_k[i],
                    r.mr_at_k[i] - id.mr_at_k[i]
                );
            }
        }
    }
    s
}

/// Runs the finite-difference suite over `cases`; any failure is a contract
/// error naming the case and its worst parameter.
pub fn gradcheck(cases: &[GradCase], instances: usize, seed: u64, out: &mut dyn Write) -> Result<SuiteReport> {
    let check = Check::default();
    let rep = run_suite(cases, instances, seed, &check)?;
    say!(
        out,
        "{instances} instances per case, step {:e}, tolerance {:e}, floor {:e}",
        check.step,
        check.tolerance,
        check.floor
    );
    for c in &rep.cases {
        say!(
            out,
            "{:<24} {:>9.2e}  {:<28} {}",
            c.name,
            c.worst.max_rel_err,
            c.worst.worst_param,
            if c.passed { "ok" } else { "FAILED" }
        );
    }
    if !rep.passed() {
        let names: Vec<String> = rep
            .failures()
            .map(|c| format!("{} (worst parameter {}, rel err {:.2e})", c.name, c.worst.worst_param, c.worst.max_rel_err))
            .collect();
        return Err(CliError::Contract(format!("gradient check failed: {}", names.join("; "))));
    }
    say!(out, "gradient check passed, max rel err {:.2e}", rep.max_rel_err());
    Ok(rep)
}
