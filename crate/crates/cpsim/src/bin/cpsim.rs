//! Command-line front end: scenario simulation, flow-dataset construction,
//! autoencoder training, calibration, variant evaluation, and parameter
//! sweeps. Any config key can be overridden with `--set path=value`; the
//! output directory comes from `--out-dir` or `CPSIM_OUT_DIR`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use cpsim::harness::config::{ScenarioConfig, Variant};
use cpsim::harness::evaluate::evaluate;
use cpsim::harness::flows::{build_flow_dataset, read_jsonl, write_jsonl};
use cpsim::harness::sweep::{parse_axis, sweep, to_csv, SweepAxis};
use cpsim::harness::trace::TraceMode;
use cpsim::harness::{build_calibration, run_scenario, CalibrationData, RuntimeAssets};
use cpsim::temporal::lstm::{normalize_steps, train_ae, ModelFile, TrainConfig};
use cpsim::temporal::l_tr;

#[derive(Parser)]
#[command(name = "cpsim", about = "Collaborative-perception attack/defense simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario config JSON path, or 'default' for the built-in scenario.
    #[arg(default_value = "default")]
    config: String,
    /// Override a config key, e.g. --set attack.lambda=0.5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; CPSIM_OUT_DIR is the fallback, then the CWD.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario; writes a JSONL trace and a JSON result.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Trace file name.
        #[arg(long, default_value = "trace.jsonl")]
        trace: String,
        /// Result file name.
        #[arg(long, default_value = "result.json")]
        report: String,
        /// Flow model to score temporal consistency with.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Calibration data for defended variants.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Build the chain-matched flow dataset from clean runs (8:1:1 split).
    BuildFlows {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 10)]
        scenarios: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the flow autoencoder on a JSONL flow file.
    TrainAe {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "flows_train.jsonl")]
        flows: PathBuf,
        /// Held-out flows to report a final reconstruction loss on.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long, default_value = "model.json")]
        out: String,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Collect attack-free score components for the conformal layer.
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "calibration.json")]
        out: String,
    },
    /// Compare reference settings and defense variants over seeds.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long, default_value = "report.json")]
        out: String,
        /// Also render SVG plots into the output directory.
        #[arg(long)]
        plots: bool,
    },
    /// Cross-product parameter sweep to CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Sweep axis, e.g. --grid defense.temporal.k_hist=3,5,7 (repeatable).
        #[arg(long = "grid", value_name = "KEY=V1,V2")]
        grids: Vec<String>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long, default_value = "sweep.csv")]
        out: String,
    },
}

fn out_dir(common: &CommonArgs) -> PathBuf {
    common
        .out_dir
        .clone()
        .or_else(|| std::env::var_os("CPSIM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_config(common: &CommonArgs) -> Result<ScenarioConfig, String> {
    let base = if common.config == "default" {
        ScenarioConfig::default()
    } else {
        let text = std::fs::read_to_string(&common.config)
            .map_err(|e| format!("{}: {e}", common.config))?;
        ScenarioConfig::from_json(&text).map_err(|e| e.to_string())?
    };
    base.with_overrides(&common.overrides).map_err(|e| e.to_string())
}

fn load_assets(model: Option<&Path>, calibration: Option<&Path>) -> Result<RuntimeAssets, String> {
    let mut assets = RuntimeAssets::default();
    if let Some(path) = model {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        assets.model = Some(ModelFile::from_json(&text)?);
    }
    if let Some(path) = calibration {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        assets.calibration = Some(CalibrationData::from_json(&text).map_err(|e| e.to_string())?);
    }
    Ok(assets)
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}

fn main() {
    if let Err(message) = run(Cli::parse()) {
        eprintln!("error: {message}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Simulate { common, trace, report, model, calibration } => {
            let cfg = load_config(&common)?;
            let assets = load_assets(model.as_deref(), calibration.as_deref())?;
            let out = run_scenario(&cfg, &assets, TraceMode::Full).map_err(|e| e.to_string())?;
            let dir = out_dir(&common);
            let trace_path = write_out(&dir, &trace, &(out.trace.join("\n") + "\n"))?;
            let report_path = write_out(
                &dir,
                &report,
                &serde_json::to_string_pretty(&out.result).expect("result serializes"),
            )?;
            println!(
                "seed {} variant {:?}: ap50 {:.4} ap70 {:.4} ({:.1} frames/s)",
                out.result.seed,
                out.result.variant,
                out.result.ap50,
                out.result.ap70,
                out.result.throughput_fps
            );
            println!("trace: {}", trace_path.display());
            println!("result: {}", report_path.display());
            Ok(())
        }
        Command::BuildFlows { common, scenarios, seed } => {
            let cfg = load_config(&common)?;
            let dataset = build_flow_dataset(&cfg, scenarios, seed).map_err(|e| e.to_string())?;
            let dir = out_dir(&common);
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            for (name, records) in [
                ("flows_train.jsonl", &dataset.train),
                ("flows_val.jsonl", &dataset.val),
                ("flows_test.jsonl", &dataset.test),
            ] {
                write_jsonl(records, &dir.join(name)).map_err(|e| e.to_string())?;
                println!("{name}: {} flows", records.len());
            }
            Ok(())
        }
        Command::TrainAe {
            common,
            flows,
            val,
            out,
            hidden,
            epochs,
            batch_size,
            learning_rate,
            seed,
        } => {
            let cfg = load_config(&common)?;
            let records = read_jsonl(&flows).map_err(|e| e.to_string())?;
            if records.is_empty() {
                return Err("no training flows".to_string());
            }
            let grid = cfg.scene.grid;
            let normalized: Vec<_> =
                records.iter().map(|r| normalize_steps(&r.steps, grid)).collect();
            let train_cfg =
                TrainConfig { hidden, epochs, batch_size, learning_rate, seed };
            let k_hist = cfg.defense.temporal.k_hist;
            let (model, history) = train_ae(&normalized, k_hist, grid, &train_cfg)?;
            println!(
                "trained on {} flows, {} epochs, final train loss {:.5}",
                normalized.len(),
                epochs,
                history.last().copied().unwrap_or(f64::NAN)
            );
            if let Some(val_path) = val {
                let vals = read_jsonl(&val_path).map_err(|e| e.to_string())?;
                if !vals.is_empty() {
                    let mut acc = 0.0;
                    for r in &vals {
                        let f = normalize_steps(&r.steps, grid);
                        acc += l_tr(&f, &model.reconstruct(&f));
                    }
                    println!("validation loss over {} flows: {:.5}", vals.len(), acc / vals.len() as f64);
                }
            }
            let dir = out_dir(&common);
            let path = write_out(&dir, &out, &ModelFile::wrap(model).to_json())?;
            println!("model: {}", path.display());
            Ok(())
        }
        Command::Calibrate { common, runs, seed, model, out } => {
            let cfg = load_config(&common)?;
            let assets = load_assets(model.as_deref(), None)?;
            let seeds: Vec<u64> = (0..runs as u64).map(|i| seed + i).collect();
            let data = build_calibration(&cfg, &seeds, &assets).map_err(|e| e.to_string())?;
            println!(
                "calibration: {} full rows, {} startup rows from {} runs",
                data.full.len(),
                data.startup.len(),
                runs
            );
            let dir = out_dir(&common);
            let path = write_out(&dir, &out, &data.to_json())?;
            println!("calibration: {}", path.display());
            Ok(())
        }
        Command::Evaluate { common, seeds, seed_base, model, calibration, out, plots } => {
            let cfg = load_config(&common)?;
            let assets = load_assets(Some(&model), Some(&calibration))?;
            let seed_list: Vec<u64> = (0..seeds as u64).map(|i| seed_base + i).collect();
            let report = evaluate(&cfg, &seed_list, &assets).map_err(|e| e.to_string())?;
            for row in &report.rows {
                println!(
                    "{:<18} ap50 {:.4} +/- {:.4}  ap70 {:.4}  P {:.3} R {:.3} F1 {:.3} FDR {:.3}  ({:.1} fps)",
                    row.label,
                    row.ap50_mean,
                    row.ap50_std,
                    row.ap70_mean,
                    row.det_precision,
                    row.det_recall,
                    row.det_f1,
                    row.fdr,
                    row.throughput_fps
                );
            }
            let dir = out_dir(&common);
            let path = write_out(&dir, &out, &report.to_json())?;
            println!("report: {}", path.display());
            if plots {
                let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
                let xs: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
                let ap50: Vec<f64> = report.rows.iter().map(|r| r.ap50_mean).collect();
                let ap70: Vec<f64> = report.rows.iter().map(|r| r.ap70_mean).collect();
                let svg = cpsim::harness::plots::metric_curve_svg(
                    &format!("AP by setting ({})", labels.join(", ")),
                    "setting index",
                    &xs,
                    &[("ap50", "#4477aa", ap50), ("ap70", "#cc3311", ap70)],
                );
                let p = write_out(&dir, "ap_by_setting.svg", &svg)?;
                println!("plot: {}", p.display());
            }
            Ok(())
        }
        Command::Sweep { common, grids, seeds, seed_base, model, calibration, out } => {
            let cfg = load_config(&common)?;
            let assets = load_assets(model.as_deref(), calibration.as_deref())?;
            let axes: Vec<SweepAxis> = grids
                .iter()
                .map(|g| parse_axis(g).map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?;
            if axes.is_empty() {
                return Err("at least one --grid axis is required".to_string());
            }
            let seed_list: Vec<u64> = (0..seeds as u64).map(|i| seed_base + i).collect();
            let rows = sweep(&cfg, &axes, &seed_list, &assets).map_err(|e| e.to_string())?;
            let csv = to_csv(&rows);
            let dir = out_dir(&common);
            let path = write_out(&dir, &out, &csv)?;
            println!("{} rows -> {}", rows.len(), path.display());
            Ok(())
        }
    }
}

// Variant is re-exported so `--set defense.variant="gcp-s"` failures print
// the accepted tokens in context.
#[allow(dead_code)]
fn variant_tokens() -> [Variant; 6] {
    [
        Variant::Gcp,
        Variant::GcpS,
        Variant::GcpT,
        Variant::SpatialBaseline,
        Variant::None,
        Variant::LowerBound,
    ]
}
