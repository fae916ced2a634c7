use std::path::Path;

use bottomup::par::{par_map, thread_budget};
use bottomup::toy3d::{eval_toy, train_toy, Dataset, SceneConfig, TrainConfig, Variant};
use serde::Serialize;

use crate::args::AblateArgs;
use crate::svg::{Chart, Series};
use crate::{write_artifact, CliError, CliResult};

pub const CSV_FILE: &str = "ablate.csv";
pub const PLOT_FILE: &str = "ablate.svg";
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];
pub const DEFAULT_TRAIN: usize = 300;
pub const DEFAULT_VAL: usize = 100;
pub const MEAN_SEED: &str = "mean";

#[derive(Clone, Debug)]
pub struct AblationPlan {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub n_train: usize,
    pub n_val: usize,
    pub train: TrainConfig,
    pub scene: SceneConfig,
}

/// One CSV line. `seed` is the seed number or [`MEAN_SEED`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: String,
    pub depth_mae: Option<f64>,
    pub dims_mae: Option<f64>,
    pub toy_ap: Option<f64>,
    pub ambiguous_depth_mae: Option<f64>,
    pub n_ambiguous: usize,
    pub final_loss: Option<f64>,
}

/// Result of one (variant, seed) run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub row: AblationRow,
    pub epoch_losses: Vec<f64>,
}

pub fn resolve(a: AblateArgs) -> CliResult<AblationPlan> {
    let variants = match &a.variants {
        Some(v) => v
            .iter()
            .map(|s| s.trim().parse::<Variant>().map_err(|e| CliError::Usage(e.to_string())))
            .collect::<CliResult<Vec<_>>>()?,
        None => Variant::ALL.to_vec(),
    };
    if variants.is_empty() {
        return Err(CliError::Usage("--variants needs at least one variant".into()));
    }
    let seeds = a.seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    if seeds.is_empty() {
        return Err(CliError::Usage("--seeds needs at least one seed".into()));
    }
    let d = TrainConfig::default();
    let train = TrainConfig {
        epochs: a.epochs.unwrap_or(d.epochs),
        lr: a.lr.unwrap_or(d.lr),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        hidden: a.hidden.unwrap_or(d.hidden),
        clip_norm: d.clip_norm,
    };
    train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let n_train = a.train.unwrap_or(DEFAULT_TRAIN);
    let n_val = a.val.unwrap_or(DEFAULT_VAL);
    if n_train == 0 || n_val == 0 {
        return Err(CliError::Usage("--train and --val must be positive".into()));
    }
    Ok(AblationPlan { variants, seeds, n_train, n_val, train, scene: SceneConfig::default() })
}

/// Trains and evaluates every (variant, seed) pair, variant-major. Each seed
/// draws its own train/held-out split, shared by all variants.
pub fn run_ablation(plan: &AblationPlan, threads: usize) -> CliResult<Vec<RunResult>> {
    let splits = plan
        .seeds
        .iter()
        .map(|&s| Dataset::train_val(&plan.scene, plan.n_train, plan.n_val, s, threads))
        .collect::<bottomup::Result<Vec<_>>>()?;
    let jobs: Vec<(Variant, usize)> = plan
        .variants
        .iter()
        .flat_map(|&v| (0..plan.seeds.len()).map(move |i| (v, i)))
        .collect();
    let results = par_map(&jobs, threads, |&(v, i)| -> bottomup::Result<RunResult> {
        let (train, val) = &splits[i];
        let seed = plan.seeds[i];
        let outcome = train_toy(v, train, &plan.train, seed)?;
        let report = eval_toy(&outcome.model, val)?;
        Ok(RunResult {
            row: AblationRow {
                variant: v.name().to_string(),
                seed: seed.to_string(),
                depth_mae: report.depth_mae,
                dims_mae: report.dims_mae,
                toy_ap: report.toy_ap,
                ambiguous_depth_mae: report.ambiguous_depth_mae,
                n_ambiguous: report.n_ambiguous,
                final_loss: outcome.epoch_losses.last().copied(),
            },
            epoch_losses: outcome.epoch_losses,
        })
    });
    results
        .into_iter()
        .map(|r| r.map_err(|e| CliError::Failure(format!("ablation run failed: {e}"))))
        .collect()
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-variant means over seeds, in first-appearance order.
pub fn mean_rows(rows: &[AblationRow]) -> Vec<AblationRow> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.variant.as_str()) {
            names.push(&r.variant);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let group: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == name).collect();
            AblationRow {
                variant: name.to_string(),
                seed: MEAN_SEED.to_string(),
                depth_mae: mean(group.iter().map(|r| r.depth_mae)),
                dims_mae: mean(group.iter().map(|r| r.dims_mae)),
                toy_ap: mean(group.iter().map(|r| r.toy_ap)),
                ambiguous_depth_mae: mean(group.iter().map(|r| r.ambiguous_depth_mae)),
                n_ambiguous: group.iter().map(|r| r.n_ambiguous).sum::<usize>() / group.len(),
                final_loss: mean(group.iter().map(|r| r.final_loss)),
            }
        })
        .collect()
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Per-seed rows followed by the mean rows. Numbers are printed with six
/// decimals; missing values are empty.
pub fn to_csv(rows: &[AblationRow]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Failure(e.to_string());
    w.write_record([
        "variant",
        "seed",
        "depth_mae",
        "dims_mae",
        "toy_ap",
        "ambiguous_depth_mae",
        "n_ambiguous",
        "final_loss",
    ])
    .map_err(err)?;
    for r in rows.iter().chain(&mean_rows(rows)) {
        w.write_record([
            r.variant.clone(),
            r.seed.clone(),
            fmt(r.depth_mae),
            fmt(r.dims_mae),
            fmt(r.toy_ap),
            fmt(r.ambiguous_depth_mae),
            r.n_ambiguous.to_string(),
            fmt(r.final_loss),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Failure(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Failure(e.to_string()))
}

fn loss_chart(plan: &AblationPlan, results: &[RunResult]) -> Chart {
    let series = plan
        .variants
        .iter()
        .map(|v| {
            let runs: Vec<&RunResult> = results.iter().filter(|r| r.row.variant == v.name()).collect();
            let points = (0..plan.train.epochs)
                .map(|e| {
                    let m = runs.iter().map(|r| r.epoch_losses[e]).sum::<f64>() / runs.len() as f64;
                    ((e + 1) as f64, m)
                })
                .collect();
            Series { name: v.name().to_string(), points }
        })
        .collect();
    Chart {
        title: "Training loss (mean over seeds)".into(),
        x_label: "epoch".into(),
        y_label: "loss".into(),
        series,
        ..Chart::default()
    }
}

pub fn run(a: AblateArgs, out: &Path) -> CliResult<()> {
    let plan = resolve(a)?;
    let results = run_ablation(&plan, thread_budget())?;
    let rows: Vec<AblationRow> = results.iter().map(|r| r.row.clone()).collect();
    let csv = to_csv(&rows)?;
    let path = write_artifact(out, CSV_FILE, &csv)?;
    write_artifact(out, PLOT_FILE, &loss_chart(&plan, &results).render())?;
    print!("{csv}");
    println!("-> {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: &str, seed: u64, mae: Option<f64>) -> AblationRow {
        AblationRow {
            variant: variant.into(),
            seed: seed.to_string(),
            depth_mae: mae,
            dims_mae: Some(1.0),
            toy_ap: None,
            ambiguous_depth_mae: mae,
            n_ambiguous: 4,
            final_loss: Some(2.0),
        }
    }

    #[test]
    fn means_follow_variant_order() {
        let rows = vec![row("b", 0, Some(1.0)), row("b", 1, Some(3.0)), row("a", 0, None)];
        let m = mean_rows(&rows);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].variant.as_str(), m[0].depth_mae), ("b", Some(2.0)));
        assert_eq!((m[1].variant.as_str(), m[1].depth_mae), ("a", None));
    }

    #[test]
    fn csv_has_rows_plus_means() {
        let rows = vec![row("b", 0, Some(1.0)), row("b", 1, Some(3.0))];
        let csv = to_csv(&rows).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 2 + 1);
        assert_eq!(lines[3], "b,mean,2.000000,1.000000,,2.000000,4,2.000000");
    }

    #[test]
    fn unknown_variant_is_usage_error() {
        let a = AblateArgs { variants: Some(vec!["bogus".into()]), ..AblateArgs::default() };
        assert_eq!(resolve(a).unwrap_err().exit_code(), crate::EXIT_USAGE);
    }
}
