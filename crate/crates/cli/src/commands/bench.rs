//! `arw bench` — the full attack-by-defense matrix from a config file —
//! and `arw report`, which re-renders report files from a raw sidecar.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use arw_core::error::{ArwError, Result};
use arw_core::evalkit::{
    cell_manifest, emit_report_csv, emit_report_markdown, emit_report_raw, parse_report_raw,
    run_benchmark_matrix, BenchData, BenchModels, BenchOptions,
};
use arw_core::models::{train, ModelBundle, ModelKind};
use arw_core::rng::Rng;
use arw_core::scenegen::{generate_road_dataset, generate_road_sequence, generate_sign_dataset};
use clap::Args;

use super::{resolve, write_text};
use crate::config::RunConfig;

#[derive(Args)]
pub struct BenchArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,

    /// Output directory (default: bench_out under the workdir).
    #[arg(long, default_value = "bench_out")]
    out: PathBuf,
}

pub fn cmd_bench(workdir: &Path, args: BenchArgs) -> Result<()> {
    let cfg_path = resolve(workdir, &args.config);
    let text = std::fs::read_to_string(&cfg_path)
        .map_err(|e| ArwError::config(format!("cannot read {}: {e}", cfg_path.display())))?;
    let cfg = RunConfig::parse(&text)?;
    let out = resolve(workdir, &args.out);
    let seed = cfg.seed;
    let hash = cfg.hash();

    let attacks = cfg
        .attack_names
        .iter()
        .map(|n| cfg.attack_spec(n))
        .collect::<Result<Vec<_>>>()?;
    let defenses = cfg
        .defense_names
        .iter()
        .map(|n| cfg.defense_config(n))
        .collect::<Result<Vec<_>>>()?;

    // data generation, all derived from the global seed
    let root = Rng::new(seed);
    let sign_train = generate_sign_dataset(cfg.sign_train, root.derive(1).next_u64())?;
    let sign_test = generate_sign_dataset(cfg.sign_test, root.derive(2).next_u64())?;
    let road_train = generate_road_dataset(cfg.road_train, root.derive(3).next_u64())?;
    let road_frames = generate_road_sequence(
        cfg.road_frames,
        cfg.road_d0,
        cfg.road_d1,
        root.derive(4).next_u64(),
    )?;

    // standard models
    let mut detector = ModelBundle::new(ModelKind::SignDetector, root.derive(5).next_u64());
    train(&mut detector, &sign_train, cfg.det_epochs, cfg.det_lr, root.derive(6).next_u64())?;
    let mut regressor = ModelBundle::new(ModelKind::DistanceRegressor, root.derive(7).next_u64());
    train(&mut regressor, &road_train, cfg.reg_epochs, cfg.reg_lr, root.derive(8).next_u64())?;

    let models = BenchModels { detector, regressor };
    let data = BenchData {
        sign_test,
        road_frames,
        sign_train,
        road_train,
    };

    let table = match run_benchmark_matrix(
        &models,
        &attacks,
        &defenses,
        &data,
        seed,
        &BenchOptions::default(),
    ) {
        Ok(mut t) => {
            t.config_hash = hash;
            t
        }
        Err(e) => {
            // machine-readable failure list, nonzero exit
            write_text(&out.join("failures.txt"), &format!("matrix: {e}\n"))?;
            return Err(e);
        }
    };

    write_text(&out.join("report.csv"), &emit_report_csv(&table))?;
    write_text(&out.join("report.md"), &emit_report_markdown(&table))?;
    write_text(&out.join("report.raw.csv"), &emit_report_raw(&table))?;
    for cell in &table.cells {
        let dir = out.join("runs").join(format!("{}_{}", cell.attack, cell.defense));
        write_text(&dir.join("manifest.txt"), &cell_manifest(&table, cell))?;
    }
    write_plot_files(&out, &table)?;

    println!(
        "benchmark complete: {} cells -> {}",
        table.cells.len(),
        out.display()
    );
    Ok(())
}

/// One CSV per metric: x = attack, one column per defense.
fn write_plot_files(out: &Path, table: &arw_core::evalkit::ReportTable) -> Result<()> {
    let mut attacks: Vec<String> = Vec::new();
    let mut defenses: Vec<String> = Vec::new();
    for cell in &table.cells {
        if !attacks.contains(&cell.attack) {
            attacks.push(cell.attack.clone());
        }
        if !defenses.contains(&cell.defense) {
            defenses.push(cell.defense.clone());
        }
    }
    let metrics: [(&str, Box<dyn Fn(&arw_core::evalkit::CellOutcome) -> Option<f32>>); 7] = [
        ("map50", Box::new(|c| c.detection.map(|d| d.map50))),
        ("precision", Box::new(|c| c.detection.map(|d| d.precision))),
        ("recall", Box::new(|c| c.detection.map(|d| d.recall))),
        ("err_0_20", Box::new(|c| c.regression.as_ref().map(|r| r.mean(0)))),
        ("err_20_40", Box::new(|c| c.regression.as_ref().map(|r| r.mean(1)))),
        ("err_40_60", Box::new(|c| c.regression.as_ref().map(|r| r.mean(2)))),
        ("err_60_80", Box::new(|c| c.regression.as_ref().map(|r| r.mean(3)))),
    ];
    for (name, extract) in &metrics {
        let mut csv = format!(
            "# arw v{} seed={} config={:016x}\nattack,{}\n",
            arw_core::ARTIFACT_VERSION,
            table.seed,
            table.config_hash,
            defenses.join(",")
        );
        for attack in &attacks {
            write!(csv, "{attack}").ok();
            for defense in &defenses {
                let v = table
                    .cells
                    .iter()
                    .find(|c| &c.attack == attack && &c.defense == defense)
                    .and_then(|c| extract(c));
                match v {
                    Some(v) => write!(csv, ",{v}").ok(),
                    None => write!(csv, ",").ok(),
                };
            }
            csv.push('\n');
        }
        write_text(&out.join(format!("plot_{name}.csv")), &csv)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct ReportArgs {
    /// Directory holding report.raw.csv (e.g. a previous bench output).
    #[arg(long)]
    from: PathBuf,
}

pub fn cmd_report(workdir: &Path, args: ReportArgs) -> Result<()> {
    let dir = resolve(workdir, &args.from);
    let raw = std::fs::read_to_string(dir.join("report.raw.csv"))
        .map_err(|e| ArwError::config(format!("cannot read raw sidecar: {e}")))?;
    let table = parse_report_raw(&raw)?;
    write_text(&dir.join("report.csv"), &emit_report_csv(&table))?;
    write_text(&dir.join("report.md"), &emit_report_markdown(&table))?;
    println!("re-rendered report files in {}", dir.display());
    Ok(())
}
