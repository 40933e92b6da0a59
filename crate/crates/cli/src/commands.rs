use std::path::{Path, PathBuf};

use serde::Serialize;
use stationary_lab::martingale::{
    tail_sup_statistic, remote_covariance_grid, gordin_increment, ma_error_exact, ma_error_mc, ApproximationReport,
    ApproximationRow, Functional, MartingaleApproximant, McEstimate, McOptions, Method,
};
use stationary_lab::models::{Coordinates, ProcessModel};
use stationary_lab::sequences::{check_gl, check_h, check_mw, lemma_series_lhs, Classification, ConditionVerdict};
use stationary_lab::simulate::{draw_pasts, replicate_batch, BatchOptions};
use stationary_lab::stats::{
    boundedness_diagnostic, chi2_variance_se, clt_and_wip, futures_seed, GoodnessOfFitResult, TestOptions,
    TestOutcome,
};

use crate::config::{self, ExperimentConfig, LoadedConfig, MethodChoice};
use crate::error::CliError;
use crate::output::{
    OracleRow, PathRow, Provenance, Sink, StatsRow, APPROX_HEADER, ORACLE_HEADER, PATHS_HEADER, STATS_HEADER,
    VERDICT_HEADER,
};

/// Gordin truncation used when the config gives none.
pub const DEFAULT_TRUNCATION: usize = 1 << 16;
pub const DEFAULT_MA_GRID: [usize; 5] = [64, 256, 1024, 4096, 16384];
pub const DEFAULT_VARIANCE_GRID: [usize; 3] = [16, 256, 4096];
/// Agreement tolerance in standard errors.
pub const SE_TOLERANCE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Check,
    Simulate,
    MaError,
    Clt,
    Wip,
    Quenched,
    Variance,
    ReportData,
}

impl Command {
    pub fn parse(s: &str) -> Option<Self> {
        <Self as clap::ValueEnum>::from_str(s, false).ok()
    }
}

#[derive(Debug)]
pub struct Context {
    pub config: LoadedConfig,
    pub seed: u64,
    pub workers: Option<usize>,
    pub out: PathBuf,
}

/// What a command produced: summary lines, files, failed assertions and
/// whether any verdict stayed undecided.
#[derive(Debug, Default)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
    pub failures: Vec<String>,
    pub undecided: Option<String>,
}

impl Outcome {
    fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        self.lines.push(format!("[{}] {what}", if ok { "ok" } else { "FAIL" }));
        if !ok {
            self.failures.push(what);
        }
    }
}

pub fn run(command: Command, ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.config.config;
    let mut sink = Sink::new(
        &ctx.out,
        Provenance {
            config_sha256: ctx.config.sha256.clone(),
            seed: ctx.seed,
        },
    )?;
    let mut out = Outcome::default();
    match command {
        Command::ReportData => report_data(ctx, &mut sink, &mut out)?,
        _ => {
            let spec = cfg.model_spec()?;
            let model = spec.build()?;
            let id = spec.id.clone().unwrap_or_else(|| "model".into());
            let run = Run {
                cfg,
                model: &model,
                id: &id,
                seed: ctx.seed,
                workers: ctx.workers,
            };
            match command {
                Command::Check => run.check(&mut sink, &mut out)?,
                Command::Simulate => run.simulate(&mut sink, &mut out)?,
                Command::MaError => run.ma_error(&mut sink, &mut out)?,
                Command::Clt => run.distribution(&mut sink, &mut out, true)?,
                Command::Wip => run.distribution(&mut sink, &mut out, false)?,
                Command::Quenched => run.quenched(&mut sink, &mut out)?,
                Command::Variance => run.variance(&mut sink, &mut out)?,
                Command::ReportData => unreachable!(),
            }
        }
    }
    out.files = sink.written;
    Ok(out)
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    model: &'a ProcessModel,
    id: &'a str,
    seed: u64,
    workers: Option<usize>,
}

fn condition_key(v: &ConditionVerdict) -> String {
    let s = v.condition.to_string();
    s.split('(').next().unwrap_or(&s).to_string()
}

#[derive(Serialize)]
struct IncrementSummary {
    truncation: usize,
    coefficient: Option<f64>,
    norm: f64,
    cauchy: Vec<(usize, f64)>,
    converges: Option<bool>,
}

impl From<&MartingaleApproximant> for IncrementSummary {
    fn from(d: &MartingaleApproximant) -> Self {
        Self {
            truncation: d.truncation,
            coefficient: d.scalar(),
            norm: d.norm,
            cauchy: d.cauchy.clone(),
            converges: d.converges,
        }
    }
}

fn stats_row(test: &str, id: &str, n: usize, r: &GoodnessOfFitResult, past: Option<usize>) -> StatsRow {
    StatsRow {
        test: test.into(),
        model_id: id.into(),
        n,
        r: r.size,
        statistic: r.statistic,
        pvalue: Some(r.pvalue),
        alpha: r.alpha,
        pass: r.pass,
        past_id: past.map(|p| p.to_string()),
    }
}

/// Whether estimates agree pairwise and with `reference` (± `slack`).
fn consistent(estimates: &[McEstimate], reference: f64, slack: f64) -> (bool, bool) {
    let mutual = estimates.iter().enumerate().all(|(i, a)| {
        estimates[i + 1..]
            .iter()
            .all(|b| (a.value - b.value).abs() <= SE_TOLERANCE * (a.se * a.se + b.se * b.se).sqrt())
    });
    let central = estimates
        .iter()
        .all(|e| (e.value - reference).abs() <= SE_TOLERANCE * e.se + slack);
    (mutual, central)
}

impl Run<'_> {
    fn truncation(&self) -> usize {
        self.cfg.truncation.unwrap_or(DEFAULT_TRUNCATION.max(self.model.lag()))
    }

    fn increment(&self) -> Result<MartingaleApproximant, CliError> {
        Ok(gordin_increment(self.model, self.truncation())?)
    }

    fn check(&self, sink: &mut Sink, out: &mut Outcome) -> Result<(), CliError> {
        let norms = self.model.projection_norms()?;
        let q = self.cfg.q.unwrap_or(2.0);
        let verdicts = vec![check_gl(&norms), check_h(&norms), check_mw(&norms), lemma_series_lhs(&norms, q)?];
        let rows: Vec<_> = verdicts.iter().flat_map(|v| v.rows()).collect();
        sink.csv("verdicts.csv", &VERDICT_HEADER, &rows)?;
        for v in &verdicts {
            out.line(format!(
                "{:<16} {:<10} certified={}",
                v.condition.to_string(),
                v.classification.to_string(),
                v.certified
            ));
        }
        let unknown: Vec<String> = verdicts
            .iter()
            .filter(|v| v.classification == Classification::Unknown)
            .map(|v| v.condition.to_string())
            .collect();
        if !unknown.is_empty() {
            out.undecided = Some(format!("undecided conditions: {}", unknown.join(", ")));
        }
        if let Some(expect) = &self.cfg.expect_verdicts {
            for (cond, want) in expect {
                let got = verdicts
                    .iter()
                    .find(|v| &condition_key(v) == cond)
                    .map(|v| v.classification.to_string());
                match got {
                    Some(g) => out.check(&g == want, format!("{cond} is {want} (got {g})")),
                    None => return Err(CliError::Config(format!("at `expect_verdicts.{cond}`: unknown condition"))),
                }
            }
        }
        Ok(())
    }

    fn simulate(&self, sink: &mut Sink, out: &mut Outcome) -> Result<(), CliError> {
        let n = self.cfg.require_n()?;
        let r = self.cfg.replicates_or(1000);
        let d = match self.model {
            ProcessModel::Holder(_) => None,
            _ => Some(self.increment()?),
        };
        let batch = replicate_batch(
            self.model,
            n,
            r,
            self.seed,
            &BatchOptions {
                martingale: d.as_ref().map(|d| &d.increment),
                workers: self.workers,
                ..Default::default()
            },
        )?;
        let rows: Vec<PathRow> = batch
            .stats
            .iter()
            .enumerate()
            .map(|(i, s)| PathRow {
                model_id: self.id.into(),
                n,
                replicate: i,
                s_n: s.s_n,
                max_s: s.max_s,
                max_absdev: s.max_absdev,
                seed_hi: batch.stream_key,
                seed_lo: i as u64,
            })
            .collect();
        sink.csv("paths.csv", &PATHS_HEADER, &rows)?;
        let e = McEstimate::from_samples(&batch.normalized_sums().iter().map(|x| x * x).collect::<Vec<_>>());
        out.line(format!("{r} replicates at n = {n}: E(S_n²)/n ≈ {:.6} ± {:.6}", e.value, e.se));
        Ok(())
    }

    fn ma_error(&self, sink: &mut Sink, out: &mut Outcome) -> Result<(), CliError> {
        let grid = self.cfg.grid(&DEFAULT_MA_GRID)?;
        let functionals = self.cfg.functionals.clone().unwrap_or(vec![Functional::Ma, Functional::Mma]);
        let method = self.cfg.method.unwrap_or_default();
        let r = self.cfg.replicates_or(10_000);
        let d = self.increment()?;
        sink.json("martingale.json", &IncrementSummary::from(&d))?;
        out.line(format!("D_N with N = {}: ‖D_N‖₂ = {:.6}", d.truncation, d.norm));
        if d.converges == Some(false) {
            out.line("Σ P_0(X_k) diverges: D_N has no limit as N grows");
        }
        let exact_wanted = method != MethodChoice::Mc;
        let mc_wanted = method != MethodChoice::Exact;
        let pasts: Vec<Coordinates> = if functionals.iter().any(|f| f.quenched()) {
            draw_pasts(self.model, self.cfg.pasts.unwrap_or(10), self.seed)
        } else {
            Vec::new()
        };
        let mut report = ApproximationReport::default();
        let push = |report: &mut ApproximationReport, f, n, value, se, method, past| {
            report.rows.push(ApproximationRow {
                model_id: self.id.into(),
                functional: f,
                n,
                value,
                se,
                method,
                past_id: past,
                trunc_n: d.truncation,
            })
        };
        let annealed: Vec<Functional> = functionals.iter().copied().filter(|f| !f.quenched()).collect();
        let quenched: Vec<Functional> = functionals.iter().copied().filter(|f| f.quenched()).collect();
        for &n in &grid {
            let mut exact = None;
            if exact_wanted {
                for &f in functionals.iter().filter(|f| !f.maximal()) {
                    let v = ma_error_exact(self.model, &d, n, f.quenched())?;
                    push(&mut report, f, n, v.value, v.err_bound, Method::ExactOracle, None);
                    if f == Functional::Ma {
                        exact = Some(v);
                    }
                }
            }
            if !mc_wanted {
                continue;
            }
            if !annealed.is_empty() {
                let est = ma_error_mc(
                    self.model,
                    &d,
                    n,
                    r,
                    self.seed,
                    McOptions {
                        workers: self.workers,
                        ..Default::default()
                    },
                )?;
                for &f in &annealed {
                    let e = est.get(f.maximal());
                    push(&mut report, f, n, e.value, e.se, Method::MonteCarlo, None);
                }
                if let (Some(x), true) = (exact, annealed.contains(&Functional::Ma)) {
                    let e = est.plain;
                    out.check(
                        (e.value - x.value).abs() <= SE_TOLERANCE * e.se + x.err_bound,
                        format!("MA at n = {n}: Monte Carlo {:.4e} ± {:.1e} vs exact {:.4e}", e.value, e.se, x.value),
                    );
                }
                if annealed.contains(&Functional::Ma) && annealed.contains(&Functional::Mma) {
                    out.check(est.maximal.value >= est.plain.value, format!("MMA ≥ MA at n = {n}"));
                }
            }
            if quenched.is_empty() {
                continue;
            }
            let mut plain = Vec::new();
            for (p, past) in pasts.iter().enumerate() {
                let native = self.model.native_past(past, self.model.lag())?;
                let est = ma_error_mc(
                    self.model,
                    &d,
                    n,
                    r,
                    futures_seed(self.seed, p),
                    McOptions {
                        past: Some(&native),
                        centered: true,
                        workers: self.workers,
                    },
                )?;
                for &f in &quenched {
                    let e = est.get(f.maximal());
                    push(&mut report, f, n, e.value, e.se, Method::MonteCarlo, Some(p));
                }
                plain.push(est.plain);
            }
            if quenched.contains(&Functional::Ma0) {
                let reference = ma_error_exact(self.model, &d, n, true)?;
                let (mutual, central) = consistent(&plain, reference.value, reference.err_bound);
                out.check(mutual, format!("MA0 at n = {n}: per-past estimates mutually within 4 SE"));
                out.check(central, format!("MA0 at n = {n}: per-past estimates within 4 SE of the exact value"));
            }
        }
        if exact_wanted && functionals.contains(&Functional::Ma) && grid.len() >= 2 {
            let ratio = self.cfg.decay_ratio.unwrap_or(10.0);
            out.check(
                report.decays(Functional::Ma, Method::ExactOracle, ratio),
                format!("exact MA decreases along the grid and ends below first/{ratio}"),
            );
        }
        sink.csv("approximation.csv", &APPROX_HEADER, &report.rows)?;
        for row in &report.rows {
            out.line(format!(
                "{:<5} n = {:<7} {:>12.6e} ± {:<9.2e} {:?}{}",
                row.functional.as_str(),
                row.n,
                row.value,
                row.se,
                row.method,
                row.past_id.map(|p| format!(" past {p}")).unwrap_or_default()
            ));
        }
        let mut oracle = Vec::new();
        for &(m, v) in &d.cauchy {
            oracle.push(OracleRow {
                model_id: self.id.into(),
                n: m,
                quantity: "cauchy".into(),
                value: v,
                err_bound: 0.0,
            });
        }
        if let Some(big_ns) = &self.cfg.truncation_grid {
            for row in remote_covariance_grid(self.model, big_ns, &grid)? {
                oracle.push(OracleRow {
                    model_id: self.id.into(),
                    n: row.n,
                    quantity: format!("remote_cov[N={}]", row.big_n),
                    value: row.value,
                    err_bound: 0.0,
                });
            }
            for &big_n in big_ns {
                let v = tail_sup_statistic(self.model, big_n)?;
                oracle.push(OracleRow {
                    model_id: self.id.into(),
                    n: 0,
                    quantity: format!("tail_sup[N={big_n}]"),
                    value: v.value,
                    err_bound: v.err_bound,
                });
            }
        }
        sink.csv("oracle.csv", &ORACLE_HEADER, &oracle)?;
        Ok(())
    }

    fn distribution(&self, sink: &mut Sink, out: &mut Outcome, clt: bool) -> Result<(), CliError> {
        let n = self.cfg.require_n()?;
        let r = self.cfg.replicates_or(20_000);
        let (c, w) = clt_and_wip(
            self.model,
            n,
            r,
            self.seed,
            &TestOptions {
                alpha: self.cfg.alpha(),
                pasts: None,
                workers: self.workers,
            },
        )?;
        let (name, outcome) = if clt { ("KS_clt", c) } else { ("KS_wip", w) };
        let res = &outcome.results[0].1;
        sink.csv("stats.csv", &STATS_HEADER, &[stats_row(name, self.id, n, res, None)])?;
        sink.json("reference.json", &outcome.sigma2)?;
        out.line(format!(
            "σ² = {:.6} ({}), KS D = {:.5}, p = {:.4}",
            outcome.sigma2.value,
            if outcome.sigma2.exact { "exact" } else { "nested Monte Carlo" },
            res.statistic,
            res.pvalue
        ));
        if res.ties_flagged {
            out.line(format!("warning: {} tied values; the KS p-value is not reliable", res.ties));
        }
        out.check(res.pass, format!("{name} passes at α = {}", res.alpha));
        Ok(())
    }

    fn quenched(&self, sink: &mut Sink, out: &mut Outcome) -> Result<(), CliError> {
        let n = self.cfg.require_n()?;
        let r = self.cfg.replicates_or(10_000);
        let pasts = draw_pasts(self.model, self.cfg.pasts.unwrap_or(10), self.seed);
        sink.json("pasts.json", &pasts)?;
        let (clt, _): (TestOutcome, TestOutcome) = clt_and_wip(
            self.model,
            n,
            r,
            self.seed,
            &TestOptions {
                alpha: self.cfg.alpha(),
                pasts: Some(&pasts),
                workers: self.workers,
            },
        )?;
        let mut rows: Vec<StatsRow> = clt
            .results
            .iter()
            .map(|(p, res)| stats_row("KS_quenched", self.id, n, res, *p))
            .collect();
        let frac = clt.passes() as f64 / clt.results.len() as f64;
        let min = self.cfg.min_pass_fraction.unwrap_or(0.9);
        rows.push(StatsRow {
            test: "KS_quenched_aggregate".into(),
            model_id: self.id.into(),
            n,
            r,
            statistic: frac,
            pvalue: None,
            alpha: self.cfg.alpha(),
            pass: frac >= min,
            past_id: Some("all".into()),
        });
        sink.csv("stats.csv", &STATS_HEADER, &rows)?;
        for (p, res) in &clt.results {
            out.line(format!(
                "past {:<3} KS D = {:.5} p = {:.4} {}",
                p.unwrap(),
                res.statistic,
                res.pvalue,
                if res.pass { "pass" } else { "reject" }
            ));
        }
        out.check(
            frac >= min,
            format!("quenched CLT passes for {}/{} pasts (need {min})", clt.passes(), clt.results.len()),
        );
        if let ProcessModel::Holder(_) = self.model {
            out.line("no exact oracle for Hölder models: quenched MA errors skipped");
            return Ok(());
        }
        let d = self.increment()?;
        let exact = ma_error_exact(self.model, &d, n, true)?;
        let mut report = ApproximationReport::default();
        report.rows.push(ApproximationRow {
            model_id: self.id.into(),
            functional: Functional::Ma0,
            n,
            value: exact.value,
            se: exact.err_bound,
            method: Method::ExactOracle,
            past_id: None,
            trunc_n: d.truncation,
        });
        let mut ests = Vec::new();
        for (p, past) in pasts.iter().enumerate() {
            let native = self.model.native_past(past, self.model.lag())?;
            let e = ma_error_mc(
                self.model,
                &d,
                n,
                r,
                futures_seed(self.seed, p),
                McOptions {
                    past: Some(&native),
                    centered: true,
                    workers: self.workers,
                },
            )?
            .plain;
            report.rows.push(ApproximationRow {
                model_id: self.id.into(),
                functional: Functional::Ma0,
                n,
                value: e.value,
                se: e.se,
                method: Method::MonteCarlo,
                past_id: Some(p),
                trunc_n: d.truncation,
            });
            ests.push(e);
        }
        sink.csv("approximation.csv", &APPROX_HEADER, &report.rows)?;
        let (mutual, central) = consistent(&ests, exact.value, exact.err_bound);
        out.line(format!("exact quenched MA error at n = {n}: {:.6e}", exact.value));
        out.check(mutual, "quenched MA errors mutually within 4 SE");
        out.check(central, "quenched MA errors within 4 SE of the annealed value");
        Ok(())
    }

    fn variance(&self, sink: &mut Sink, out: &mut Outcome) -> Result<(), CliError> {
        let grid = self.cfg.grid(&DEFAULT_VARIANCE_GRID)?;
        let r = self.cfg.replicates_or(0);
        let table = boundedness_diagnostic(self.model, &grid, r, self.seed, self.workers)?;
        let mut rows = Vec::new();
        for row in &table.rows {
            let nf = row.n as f64;
            let var = row.var_over_n * nf;
            let err = row.err_bound * nf;
            let mut push = |quantity: &str, value: f64, err_bound: f64| {
                rows.push(OracleRow {
                    model_id: self.id.into(),
                    n: row.n,
                    quantity: quantity.into(),
                    value,
                    err_bound,
                })
            };
            push("var", var, err);
            push("var_over_n", row.var_over_n, row.err_bound);
            out.line(format!("n = {:<8} Var(S_n) = {var:.6} Var(S_n)/n = {:.6}", row.n, row.var_over_n));
            if let (Some(sv), Some(q)) = (row.sample_var, row.q90) {
                let se = chi2_variance_se(var, r);
                push("mc_var", sv, se);
                push("q90_abs_sn", q, 0.0);
                out.check(
                    (sv - var).abs() <= SE_TOLERANCE * se + err,
                    format!("n = {}: sample variance {sv:.4} vs exact {var:.4} (SE {se:.3})", row.n),
                );
            }
        }
        sink.csv("oracle.csv", &ORACLE_HEADER, &rows)?;
        sink.json("boundedness.json", &table)?;
        out.line(format!("flag: {:?}", table.flag));
        if let Some(want) = self.cfg.expect_flag {
            out.check(table.flag == want, format!("boundedness flag is {want:?}"));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ManifestEntry {
    name: String,
    command: Command,
    config_sha256: String,
    files: Vec<String>,
    failures: Vec<String>,
    undecided: Option<String>,
}

fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

fn report_data(ctx: &Context, sink: &mut Sink, out: &mut Outcome) -> Result<(), CliError> {
    let experiments = ctx
        .config
        .config
        .experiments
        .as_ref()
        .ok_or_else(|| CliError::Config("at `experiments`: required for report-data".into()))?;
    let base = ctx.config.path.parent().unwrap_or(Path::new("."));
    let mut manifest = Vec::new();
    for (i, e) in experiments.iter().enumerate() {
        let command = Command::parse(&e.command)
            .filter(|c| *c != Command::ReportData)
            .ok_or_else(|| CliError::Config(format!("at `experiments[{i}].command`: unknown command `{}`", e.command)))?;
        let loaded = config::load(&base.join(&e.config))?;
        let sub = Context {
            seed: loaded.config.seed.unwrap_or(ctx.seed),
            config: loaded,
            workers: ctx.workers,
            out: ctx.out.join(&e.name),
        };
        let result = run(command, &sub);
        let (files, failures, undecided) = match result {
            Ok(o) => {
                for l in &o.lines {
                    out.line(format!("{}: {l}", e.name));
                }
                (o.files, o.failures, o.undecided)
            }
            Err(err) if err.exit_code() == crate::error::exit::REFUSED => {
                out.line(format!("{}: {err}", e.name));
                (Vec::new(), Vec::new(), Some(err.to_string()))
            }
            Err(err) => return Err(err),
        };
        out.failures.extend(failures.iter().map(|f| format!("{}: {f}", e.name)));
        manifest.push(ManifestEntry {
            name: e.name.clone(),
            command,
            config_sha256: sub.config.sha256.clone(),
            files: files.iter().map(|f| relative(f, &ctx.out)).collect(),
            failures,
            undecided,
        });
    }
    sink.json("manifest.json", &manifest)?;
    Ok(())
}
