//! Flags and the optional JSON config file. Every flag can also be given in
//! the file, under the section named after its subcommand; flags win.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "bottomup", version, about = "Column attention / bottom-up scan toolkit")]
pub struct Cli {
    /// JSON file with per-command defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Finite-difference checks of every differentiable operation.
    Gradcheck(GradcheckArgs),
    /// Timing and op-count scaling of the column and quadratic kernels.
    Bench(BenchArgs),
    /// Train and evaluate toy variants over several seeds.
    Ablate(AblateArgs),
    /// Average precision of KITTI prediction labels against ground truth.
    Eval(EvalArgs),
}

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Map sizes as HxWxC, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<String>>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Central-difference step.
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchArgs {
    /// cca, quadratic or all.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Map sizes as HxWxC, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<String>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateArgs {
    /// Variant names, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training frames per seed.
    #[arg(long)]
    pub train: Option<usize>,
    /// Held-out frames per seed.
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Ground-truth label file, or directory of per-frame files.
    #[arg(long)]
    pub labels_gt: Option<PathBuf>,
    /// Prediction label file, or directory of per-frame files.
    #[arg(long)]
    pub labels_pred: Option<PathBuf>,
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub iou: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub out: Option<PathBuf>,
    pub gradcheck: GradcheckArgs,
    pub bench: BenchArgs,
    pub ablate: AblateArgs,
    pub eval: EvalArgs,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Fills unset flags from the file section.
pub trait Overlay {
    fn overlay(self, file: Self) -> Self;
}

macro_rules! overlay {
    ($ty:ty { $($field:ident),* }) => {
        impl Overlay for $ty {
            fn overlay(self, file: Self) -> Self {
                Self { $($field: self.$field.or(file.$field)),* }
            }
        }
    };
}

overlay!(GradcheckArgs { seed, sizes, tol, trials, step });
overlay!(BenchArgs { kernel, sizes, reps, seed });
overlay!(AblateArgs { variants, seeds, epochs, train, val, lr, batch_size, hidden });
overlay!(EvalArgs { labels_gt, labels_pred, class, iou });
