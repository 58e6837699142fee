//! Subcommand bodies. Every deterministic artifact carries the run header;
//! wall-clock numbers go only to `timing*.tsv`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use epr_core::assembly::{build_alpha_kappa, Dims, ModelMatrices, MultiTypeDataset};
use epr_core::basis::{select_knots, BasisSet};
use epr_core::engine::{coefficient_draws_to_targets, run_epr, summarize, EprModel, PredictionSurface};
use epr_core::io::{fmt_f64, read_archive, read_dataset, read_truth, write_archive, write_dataset, write_truth, Header, Table};
use epr_core::mcmc::{gelman_rubin, run_mcmc, McmcProblem, Param};
use epr_core::scoring::{roc_auc, ScoreReport};
use epr_core::sim::{generate_dataset, run_comparison, score_draws, SimGeometry, TargetSet};
use epr_core::{Error, ExecPolicy, Result};
use nalgebra::DMatrix;

use crate::config::{self, RunConfig};
use crate::{Command, Common};

const DRAWS: &str = "draws";

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { common, replicate } => simulate(&common, replicate),
        Command::FitEpr { common, data } => fit_epr(&common, &data),
        Command::FitMcmc { common, data } => fit_mcmc(&common, &data),
        Command::Predict { common, data, fit } => predict(&common, &data, &fit),
        Command::Score {
            common,
            data,
            fit,
            truth,
        } => score(&common, &data, &fit, truth.as_deref().unwrap_or(&data)),
        Command::Compare { common } => compare(&common),
    }
}

/// Loads the configuration, creates `--out` and records the effective config.
fn setup(common: &Common) -> Result<(RunConfig, Header, ExecPolicy)> {
    let cfg = config::load(common)?;
    let policy = config::policy(common.threads)?;
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("config.toml"), cfg.text())?;
    let header = Header {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    Ok((cfg, header, policy))
}

fn basis_for(ds: &MultiTypeDataset, cfg: &RunConfig) -> Result<BasisSet> {
    let domain = &ds.grid.domain;
    BasisSet::new(select_knots(domain, cfg.sim.r)?, select_knots(domain, cfg.sim.r3())?)
}

fn simulate(common: &Common, replicate: usize) -> Result<()> {
    let (cfg, header, _) = setup(common)?;
    let geom = SimGeometry::build(&cfg.sim)?;
    let (ds, truth) = generate_dataset(&cfg.sim, &geom, replicate)?;
    write_dataset(&common.out, &ds, &header)?;
    write_truth(&common.out, &ds, &truth, &header)
}

fn write_timing(out: &Path, method: &str, secs: f64, draws: usize) -> Result<()> {
    // timing is the one artifact exempt from the determinism contract, so it
    // carries no run header
    let text = format!(
        "method\ttotal_secs\tper_draw_secs\n{method}\t{}\t{}\n",
        fmt_f64(secs),
        fmt_f64(secs / draws.max(1) as f64)
    );
    fs::write(out.join("timing.tsv"), text)?;
    Ok(())
}

fn write_fit_info(out: &Path, header: &Header, method: &str, dims: Dims, draws: usize, extra: &[(String, String)]) -> Result<()> {
    let mut t = Table::new(header.clone(), &["key", "value"]);
    let mut put = |k: &str, v: String| t.push(vec![k.to_string(), v]);
    put("method", method.to_string());
    for (k, v) in [
        ("n1s", dims.n1s),
        ("n2", dims.n2),
        ("n1", dims.n1),
        ("p1", dims.p1),
        ("p2", dims.p2),
        ("p3", dims.p3),
        ("r", dims.r),
        ("draws", draws),
    ] {
        put(k, v.to_string());
    }
    for (k, v) in extra {
        put(k, v.clone());
    }
    t.write(&out.join("fit.tsv"))
}

fn fit_epr(common: &Common, data: &Path) -> Result<()> {
    let (cfg, header, policy) = setup(common)?;
    let (ds, _) = read_dataset(data)?;
    let start = Instant::now();
    let basis = basis_for(&ds, &cfg)?;
    let matrices = ModelMatrices::from_dataset(&ds, &basis, &policy)?;
    let dyvec = build_alpha_kappa(&ds, cfg.sim.alpha_xi, basis.r())?;
    let model = EprModel::new(matrices, dyvec, cfg.sim.hyper())?;
    let reps = run_epr(&model, cfg.sim.epr_reps, cfg.seed, &policy)?;
    let secs = start.elapsed().as_secs_f64();

    let dims = reps.dims;
    let coef = reps.zeta.columns(dims.n(), dims.s()).into_owned();
    write_archive(
        &common.out,
        DRAWS,
        &header,
        &[
            ("coef", &coef),
            ("xi", &reps.xi()),
            ("q", &reps.q),
            ("theta", &reps.theta),
        ],
    )?;
    write_fit_info(&common.out, &header, "epr", dims, reps.n_reps(), &[])?;
    write_timing(&common.out, "epr", secs, reps.n_reps())
}

fn fit_mcmc(common: &Common, data: &Path) -> Result<()> {
    let (cfg, header, policy) = setup(common)?;
    let (ds, _) = read_dataset(data)?;
    let start = Instant::now();
    let basis = basis_for(&ds, &cfg)?;
    let problem = McmcProblem::from_dataset(&ds, &basis)?;
    let out = run_mcmc(&problem, &cfg.sim.mcmc_config(cfg.seed), &policy)?;
    let secs = start.elapsed().as_secs_f64();

    let coef = out.coefficient_draws();
    let mut arrays: Vec<(String, &DMatrix<f64>)> = vec![("coef".into(), &coef)];
    for (c, chain) in out.chains.iter().enumerate() {
        arrays.push((format!("variances_chain{c}"), &chain.variances));
    }
    let named: Vec<(&str, &DMatrix<f64>)> = arrays.iter().map(|(k, m)| (k.as_str(), *m)).collect();
    write_archive(&common.out, DRAWS, &header, &named)?;

    let accept: Vec<(String, String)> = out
        .chains
        .iter()
        .enumerate()
        .map(|(c, ch)| (format!("accept_rate_chain{c}"), fmt_f64(ch.accept_rate)))
        .collect();
    write_fit_info(&common.out, &header, "mcmc", out.dims, coef.nrows(), &accept)?;

    let mut diag = Table::new(header, &["param", "psrf", "psrf_upper"]);
    if out.chains.len() >= 2 {
        let d = out.dims;
        let params = (0..d.p())
            .map(|j| (format!("beta{j}"), Param::Beta(j)))
            .chain((0..3 * d.r).map(|j| (format!("eta{j}"), Param::Eta(j))))
            .chain(
                ["var_beta", "var_eta", "var_xi"]
                    .iter()
                    .enumerate()
                    .map(|(k, n)| (n.to_string(), Param::Variance(k))),
            );
        for (name, p) in params {
            let r = gelman_rubin(&out, p)?;
            diag.push(vec![name, fmt_f64(r.point), fmt_f64(r.upper)]);
        }
    }
    diag.write(&common.out.join("diagnostics.tsv"))?;
    write_timing(&common.out, "mcmc", secs, coef.nrows())
}

/// The fitted method and its `draws × (p + 3r)` coefficient draws, checked
/// against the dataset's dimensions.
fn load_fit(fit: &Path, dims: &Dims) -> Result<(String, DMatrix<f64>)> {
    let info = Table::read(&fit.join("fit.tsv"))?;
    let method = info
        .rows
        .iter()
        .find(|r| r[0] == "method")
        .map(|r| r[1].clone())
        .ok_or_else(|| Error::Data {
            row: "fit.tsv".into(),
            reason: "no method row".into(),
        })?;
    let (_, mut arrays) = read_archive(fit, DRAWS)?;
    let coef = arrays.remove("coef").ok_or_else(|| Error::Data {
        row: format!("{DRAWS}.manifest"),
        reason: "no coef array".into(),
    })?;
    if coef.ncols() != dims.s() {
        return Err(Error::Dimension {
            block: "fit coefficients versus dataset".into(),
            expected: dims.s(),
            found: coef.ncols(),
        });
    }
    Ok((method, coef))
}

fn surfaces(targets: &TargetSet, coef: &DMatrix<f64>) -> Result<[PredictionSurface; 3]> {
    let one = |t: &epr_core::engine::Targets| -> Result<PredictionSurface> {
        let draws = coefficient_draws_to_targets(coef.as_view(), t)?;
        Ok(summarize(t.response, t.ids.clone(), &draws, 0.05))
    };
    Ok([one(&targets.y1)?, one(&targets.y2)?, one(&targets.y3)?])
}

fn predict(common: &Common, data: &Path, fit: &Path) -> Result<()> {
    let (cfg, header, _) = setup(common)?;
    let (ds, _) = read_dataset(data)?;
    let basis = basis_for(&ds, &cfg)?;
    let (_, coef) = load_fit(fit, &ds.dims(basis.r()))?;
    let targets = TargetSet::from_dataset(&ds, &basis)?;
    let [s1, s2, s3] = surfaces(&targets, &coef)?;

    for (s, file) in [(&s1, "pred_y1.tsv"), (&s2, "pred_y2.tsv")] {
        let mut t = Table::new(header.clone(), &["id", "mean", "q2.5", "q97.5"]);
        for i in 0..s.ids.len() {
            t.push(vec![
                s.ids[i].clone(),
                fmt_f64(s.mean[i]),
                fmt_f64(s.lower[i]),
                fmt_f64(s.upper[i]),
            ]);
        }
        t.write(&common.out.join(file))?;
    }
    let mut t = Table::new(
        header.clone(),
        &["id", "probability", "q2.5", "q97.5", "latent_mean"],
    );
    for i in 0..s3.ids.len() {
        t.push(vec![
            s3.ids[i].clone(),
            fmt_f64(s3.mean[i]),
            fmt_f64(s3.lower[i]),
            fmt_f64(s3.upper[i]),
            fmt_f64(s3.latent_mean[i]),
        ]);
    }
    t.write(&common.out.join("pred_y3.tsv"))?;

    let labels: Vec<bool> = ds.points.iter().map(|p| p.z3).collect();
    let mut roc_in = Table::new(header.clone(), &["id", "score", "label"]);
    for (i, p) in ds.points.iter().enumerate() {
        roc_in.push(vec![p.id.clone(), fmt_f64(s3.mean[i]), (labels[i] as u8).to_string()]);
    }
    roc_in.write(&common.out.join("roc_input.tsv"))?;
    let mut curve = Table::new(header, &["fpr", "tpr", "threshold"]);
    if let Ok(roc) = roc_auc(&s3.mean, &labels) {
        for pt in roc.curve {
            curve.push(vec![fmt_f64(pt.fpr), fmt_f64(pt.tpr), fmt_f64(pt.threshold)]);
        }
    }
    curve.write(&common.out.join("roc.tsv"))
}

fn write_report(path: &Path, header: &Header, report: &ScoreReport, keep: impl Fn(&str) -> bool) -> Result<()> {
    let mut t = Table::new(
        header.clone(),
        &["method", "response", "metric", "mean", "sd", "count"],
    );
    for e in report.entries.iter().filter(|e| keep(&e.metric)) {
        t.push(vec![
            e.method.clone(),
            e.response.clone(),
            e.metric.clone(),
            fmt_f64(e.summary.mean),
            fmt_f64(e.summary.sd),
            e.summary.count.to_string(),
        ]);
    }
    t.write(path)
}

fn score(common: &Common, data: &Path, fit: &Path, truth_dir: &Path) -> Result<()> {
    let (cfg, header, _) = setup(common)?;
    let (ds, _) = read_dataset(data)?;
    let truth = read_truth(truth_dir, &ds)?;
    let basis = basis_for(&ds, &cfg)?;
    let (method, coef) = load_fit(fit, &ds.dims(basis.r()))?;
    let targets = TargetSet::from_dataset(&ds, &basis)?;
    let raw = score_draws(&targets, &truth, &coef, 0.0)?;

    let mut report = ScoreReport::default();
    for ((resp, metric), v) in &raw {
        if metric != "cpu_secs" {
            report.push(&method, resp, metric, &[*v])?;
        }
    }
    let [_, _, s3] = surfaces(&targets, &coef)?;
    // AUC is undefined when every label is equal; the row is then omitted
    if let Ok(roc) = roc_auc(&s3.mean, &truth.z3) {
        report.push(&method, "y3", "auc", &[roc.auc])?;
    }
    write_report(&common.out.join("scores.tsv"), &header, &report, |_| true)
}

fn compare(common: &Common) -> Result<()> {
    let (cfg, header, policy) = setup(common)?;
    let rep = run_comparison(&cfg.sim, &policy)?;
    let timed = |m: &str| m == "cpu_secs";

    let mut raw = Table::new(
        header.clone(),
        &["replicate", "method", "response", "metric", "value"],
    );
    let mut timing = String::from("replicate\tmethod\tcpu_secs\n");
    for r in &rep.raw {
        for (resp, metric, v) in &r.scores {
            if timed(metric) {
                timing.push_str(&format!("{}\t{}\t{}\n", r.replicate, r.method, fmt_f64(*v)));
            } else {
                raw.push(vec![
                    r.replicate.to_string(),
                    r.method.clone(),
                    resp.clone(),
                    metric.clone(),
                    fmt_f64(*v),
                ]);
            }
        }
    }
    raw.write(&common.out.join("raw_scores.tsv"))?;
    fs::write(common.out.join("timing.tsv"), timing)?;
    write_report(&common.out.join("report.tsv"), &header, &rep.report, |m| !timed(m))?;

    let mut failures = Table::new(header, &["replicate", "error"]);
    for (t, e) in &rep.failures {
        failures.push(vec![t.to_string(), config::one_line(e)]);
    }
    failures.write(&common.out.join("failures.tsv"))?;

    for e in &rep.report.entries {
        println!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            e.method, e.response, e.metric, e.summary.mean, e.summary.sd, e.summary.count
        );
    }
    if rep.partial {
        eprintln!(
            "warning: {} of {} replicates failed; report is partial",
            rep.failures.len(),
            cfg.sim.n_replicates
        );
    }
    Ok(())
}
