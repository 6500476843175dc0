use std::fs;
use std::path::Path;

use log::info;
use mtsb_core::bicluster::{bicluster_pipeline, BiclusterConfig};
use mtsb_core::error::StageExt;
use mtsb_core::estimate::{estimate_factor_numbers, fit_loadings};
use mtsb_core::evaluate::{rolling_validation, run_replications, write_replication_report, write_rolling_report};
use mtsb_core::io::{
    load_tensor_csv, preprocess, save_tensor_csv, write_matrix_csv, write_membership_csv,
    write_ratio_diagnostics_csv, write_vector_csv, RunConfig,
};
use mtsb_core::simulate::generate;
use mtsb_core::{Error, FactorNumbers, LoadingMatrix, LoadingSet, MatrixSeries, Result, Stage};
use serde_json::json;

use crate::{run_config, BiclusterArgs, FactorsArgs, InputArgs, LoadingsArgs, ReplicateArgs, RollingArgs, SimulateArgs};

fn prepare(config: Option<&Path>, input: &InputArgs) -> Result<(RunConfig, MatrixSeries)> {
    let cfg = run_config(config, input).stage(Stage::Ingest)?;
    let raw = load_tensor_csv(&input.input).stage(Stage::Ingest)?;
    info!(
        "loaded {} x {} x {} from {}",
        raw.len(),
        raw.rows(),
        raw.cols(),
        input.input.display()
    );
    let series = preprocess(&raw, cfg.demean, cfg.standardize).stage(Stage::Preprocess)?;
    fs::create_dir_all(&cfg.out_dir).map_err(Error::from).stage(Stage::Output)?;
    Ok((cfg, series))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn counts_line(f: &FactorNumbers) -> String {
    format!("{} {} {} {}", f.k0, f.k, f.r0, f.r)
}

fn write_diagnostics(dir: &Path, f: &FactorNumbers) -> Result<()> {
    if let Some(d) = &f.row_diagnostics {
        write_ratio_diagnostics_csv(&dir.join("ratios_row.csv"), d)?;
    }
    if let Some(d) = &f.col_diagnostics {
        write_ratio_diagnostics_csv(&dir.join("ratios_col.csv"), d)?;
    }
    Ok(())
}

fn factor_label(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn write_loading(dir: &Path, l: &LoadingMatrix, names: &[String]) -> Result<()> {
    let path = dir.join(format!("{}.csv", l.kind().file_stem()));
    write_matrix_csv(&path, l.values(), Some(names), Some(&factor_label("f", l.n_factors())))
}

fn write_loadings(dir: &Path, set: &LoadingSet, series: &MatrixSeries) -> Result<()> {
    let (rows, cols) = (series.row_names(), series.col_names());
    write_loading(dir, &set.row_global, &rows)?;
    write_loading(dir, &set.col_global, &cols)?;
    write_loading(dir, &set.row_local, &rows)?;
    write_loading(dir, &set.col_local, &cols)
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let spec = args.scenario.spec().stage(Stage::Simulation)?;
    let (series, truth) = generate(&spec).stage(Stage::Simulation)?;
    let write = || -> Result<()> {
        let dir = &args.out;
        let truth_dir = dir.join("truth");
        fs::create_dir_all(&truth_dir)?;
        save_tensor_csv(&series, &dir.join("series.csv"))?;
        let (rows, cols) = (series.row_names(), series.col_names());
        write_matrix_csv(&truth_dir.join("R.csv"), &truth.r, Some(&rows), None)?;
        write_matrix_csv(&truth_dir.join("C.csv"), &truth.c, Some(&cols), None)?;
        write_matrix_csv(&truth_dir.join("Gamma.csv"), &truth.gamma, Some(&rows), None)?;
        write_matrix_csv(&truth_dir.join("Lambda.csv"), &truth.lambda, Some(&cols), None)?;
        write_membership_csv(&truth_dir.join("row_membership.csv"), &rows, &truth.row_truth)?;
        write_membership_csv(&truth_dir.join("col_membership.csv"), &cols, &truth.col_truth)?;
        fs::write(truth_dir.join("scenario.txt"), spec.to_config_string())?;
        write_json(&truth_dir.join("params.json"), &serde_json::to_value(&truth.params)?)
    };
    write().stage(Stage::Output)?;
    println!(
        "wrote {} x {} x {} series to {}",
        series.len(),
        series.rows(),
        series.cols(),
        args.out.join("series.csv").display()
    );
    Ok(())
}

pub fn factors(config: Option<&Path>, args: &FactorsArgs) -> Result<()> {
    let (cfg, series) = prepare(config, &args.input)?;
    let f = estimate_factor_numbers(&series, cfg.l0, cfg.j0_row, cfg.j0_col).stage(Stage::FactorNumbers)?;
    let write = || -> Result<()> {
        write_diagnostics(&cfg.out_dir, &f)?;
        write_json(&cfg.out_dir.join("factor_numbers.json"), &serde_json::to_value(&f)?)
    };
    write().stage(Stage::Output)?;
    println!("{}", counts_line(&f));
    Ok(())
}

fn resolve_counts(cfg: &RunConfig, series: &MatrixSeries, given: Option<crate::Counts>) -> Result<FactorNumbers> {
    match given {
        Some(c) => {
            let f = c.known();
            f.validate(series.rows(), series.cols())?;
            Ok(f)
        }
        None => estimate_factor_numbers(series, cfg.l0, cfg.j0_row, cfg.j0_col),
    }
}

pub fn loadings(config: Option<&Path>, args: &LoadingsArgs) -> Result<()> {
    let (cfg, series) = prepare(config, &args.input)?;
    let f = resolve_counts(&cfg, &series, args.counts.get()).stage(Stage::FactorNumbers)?;
    let set = fit_loadings(&series, &f, cfg.l0).stage(Stage::ClusterLoadings)?;
    let write = || -> Result<()> {
        write_loadings(&cfg.out_dir, &set, &series)?;
        write_diagnostics(&cfg.out_dir, &f)
    };
    write().stage(Stage::Output)?;
    println!("factor numbers (k0 k r0 r): {}", counts_line(&f));
    println!("loadings written to {}", cfg.out_dir.display());
    Ok(())
}

pub fn bicluster(config: Option<&Path>, args: &BiclusterArgs) -> Result<()> {
    let (cfg, series) = prepare(config, &args.input)?;
    let bc = BiclusterConfig {
        kmeans: cfg.kmeans.clone(),
        j0_row: cfg.j0_row,
        j0_col: cfg.j0_col,
        clusters: args.clusters,
    };
    let given = args.counts.get().map(crate::Counts::known);
    let given_counts = given.is_some();
    let out = bicluster_pipeline(&series, cfg.l0, given, &bc)?;
    let res = &out.result;
    let write = || -> Result<()> {
        let dir = &cfg.out_dir;
        let (rows, cols) = (series.row_names(), series.col_names());
        write_membership_csv(&dir.join("row_membership.csv"), &rows, &res.row_membership)?;
        write_membership_csv(&dir.join("col_membership.csv"), &cols, &res.col_membership)?;
        write_matrix_csv(&dir.join("row_similarity.csv"), &res.row_similarity, Some(&rows), Some(&rows))?;
        write_matrix_csv(&dir.join("col_similarity.csv"), &res.col_similarity, Some(&cols), Some(&cols))?;
        let index = |n: usize| (1..=n).map(|i| i.to_string()).collect::<Vec<_>>();
        write_vector_csv(
            &dir.join("row_gram_eigenvalues.csv"),
            ["j", "eigenvalue"],
            &index(out.row_gram_eigenvalues.len()),
            &out.row_gram_eigenvalues,
        )?;
        write_vector_csv(
            &dir.join("col_gram_eigenvalues.csv"),
            ["j", "eigenvalue"],
            &index(out.col_gram_eigenvalues.len()),
            &out.col_gram_eigenvalues,
        )?;
        write_loadings(dir, &out.loadings, &series)?;
        write_diagnostics(dir, &out.factor_numbers)?;
        let f = &out.factor_numbers;
        write_json(
            &dir.join("bicluster.json"),
            &json!({
                "l0": cfg.l0,
                "demean": cfg.demean,
                "standardize": cfg.standardize,
                "seed": cfg.kmeans.seed,
                "factor_numbers": { "k0": f.k0, "k": f.k, "r0": f.r0, "r": f.r },
                "factor_numbers_given": given_counts,
                "m_hat": res.m_hat,
                "n_hat": res.n_hat,
                "m_raw": out.m_raw,
                "n_raw": out.n_raw,
            }),
        )
    };
    write().stage(Stage::Output)?;
    println!("factor numbers (k0 k r0 r): {}", counts_line(&out.factor_numbers));
    println!("clusters (m n): {} {}", res.m_hat, res.n_hat);
    println!("results written to {}", cfg.out_dir.display());
    Ok(())
}

pub fn replicate(args: &ReplicateArgs) -> Result<()> {
    let spec = args.scenario.spec().stage(Stage::Simulation)?;
    let report = run_replications(&spec, args.reps, &args.l0, args.known).stage(Stage::Evaluation)?;
    write_replication_report(&report, &args.out).stage(Stage::Output)?;
    for row in &report.rows {
        println!("l0 = {}", row.l0);
        for (name, mean, sd, _) in row.metrics() {
            match sd {
                Some(sd) => println!("  {name:<22} {mean:.4} ({sd:.4})"),
                None => println!("  {name:<22} {mean:.4}"),
            }
        }
    }
    println!("report written to {}", args.out.display());
    Ok(())
}

pub fn rolling(config: Option<&Path>, args: &RollingArgs) -> Result<()> {
    let (cfg, series) = prepare(config, &args.input)?;
    let counts = args
        .counts
        .get()
        .map(crate::Counts::known)
        .expect("checked by the caller");
    let report = rolling_validation(&series, args.method, &counts, args.start, cfg.l0).stage(Stage::Evaluation)?;
    write_rolling_report(&report, &cfg.out_dir).stage(Stage::Output)?;
    println!("mse {}", report.mse);
    Ok(())
}
