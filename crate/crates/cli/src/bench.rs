use std::path::Path;

use bottomup::bench::{self, Kernel, ScalingRow};

use crate::args::BenchArgs;
use crate::svg::{Chart, Series};
use crate::{write_artifact, CliError, CliResult};

pub const CSV_FILE: &str = "bench.csv";
pub const PLOT_FILE: &str = "bench.svg";
pub const DEFAULT_SIZES: [(usize, usize, usize); 4] = [(32, 96, 64), (64, 96, 64), (128, 96, 64), (256, 96, 64)];
pub const DEFAULT_REPS: usize = 5;

#[derive(Debug)]
pub struct BenchPlan {
    pub kernels: Vec<Kernel>,
    pub sizes: Vec<(usize, usize, usize)>,
    pub reps: usize,
    pub seed: u64,
}

fn parse_dims(s: &str) -> CliResult<(usize, usize, usize)> {
    let bad = || CliError::Usage(format!("size {s:?} is not of the form HxWxC"));
    let v: Vec<usize> = s
        .trim()
        .split(['x', 'X'])
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect::<CliResult<_>>()?;
    match v[..] {
        [h, w, c] if h > 0 && w > 0 && c > 0 => Ok((h, w, c)),
        _ => Err(bad()),
    }
}

pub fn resolve(a: BenchArgs) -> CliResult<BenchPlan> {
    let kernels = match a.kernel.as_deref().unwrap_or("all") {
        "all" => vec![Kernel::Cca, Kernel::Quadratic],
        "cca" => vec![Kernel::Cca],
        "quadratic" => vec![Kernel::Quadratic],
        k => return Err(CliError::Usage(format!("unknown kernel {k:?} (cca, quadratic, all)"))),
    };
    let sizes = match &a.sizes {
        Some(s) => s.iter().map(|s| parse_dims(s)).collect::<CliResult<Vec<_>>>()?,
        None => DEFAULT_SIZES.to_vec(),
    };
    if sizes.len() < 3 {
        return Err(CliError::Usage("bench needs at least three sizes to fit a slope".into()));
    }
    let reps = a.reps.unwrap_or(DEFAULT_REPS);
    if reps < 3 {
        return Err(CliError::Usage("--reps must be at least 3".into()));
    }
    Ok(BenchPlan { kernels, sizes, reps, seed: a.seed.unwrap_or(0) })
}

fn name(k: Kernel) -> &'static str {
    match k {
        Kernel::Cca => "cca",
        Kernel::Quadratic => "quadratic",
    }
}

pub fn run(a: BenchArgs, out: &Path) -> CliResult<()> {
    let plan = resolve(a)?;
    let mut rows: Vec<ScalingRow> = Vec::new();
    let mut chart = Chart {
        title: "Kernel time vs map size".into(),
        x_label: "H·W".into(),
        y_label: "median ns".into(),
        log_x: true,
        log_y: true,
        series: Vec::new(),
    };
    for &k in &plan.kernels {
        let r = bench::run_scaling(k, &plan.sizes, plan.reps, plan.seed)?;
        for row in &r {
            println!(
                "{:<10} {:>4}x{:<4}x{:<4} ops {:>14}  median {:>12} ns",
                name(k),
                row.h,
                row.w,
                row.c,
                row.op_count,
                row.median_ns
            );
        }
        match bench::scaling_slope(&r) {
            Ok(s) => println!("{} log-log slope vs H·W: {s:.3}", name(k)),
            Err(e) => println!("{} slope unavailable: {e}", name(k)),
        }
        chart.series.push(Series {
            name: name(k).into(),
            points: r.iter().map(|row| ((row.h * row.w) as f64, row.median_ns as f64)).collect(),
        });
        rows.extend(r);
    }
    let csv = bench::to_csv(&rows)?;
    let path = write_artifact(out, CSV_FILE, &csv)?;
    write_artifact(out, PLOT_FILE, &chart.render())?;
    println!("-> {}", path.display());
    Ok(())
}
