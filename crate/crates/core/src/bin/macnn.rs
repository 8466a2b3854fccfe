use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use macnn::config::{format_versions, load_config, Manifest, RunConfig, TOOL_NAME, TOOL_VERSION};
use macnn::dataset::{generate_synthetic, load_dataset, save_dataset};
use macnn::evaluation::{
    format_froc, format_operating_points, froc, operating_sensitivities, parse_froc, reference_tables, cpm,
    OPERATING_POINTS,
};
use macnn::model::{build_basic_spec_with, build_final_spec_with, Checkpoint};
use macnn::pipeline::{
    candidates_from_maps, infer_maps, load_maps_dir, load_preprocessed_dir, preprocess_all, run_pipeline,
    save_maps, save_preprocessed_dir, MANIFEST_FILE,
};
use macnn::postprocess::{format_candidates, load_candidates, sort_candidates, Candidate};
use macnn::trainer::{report_path, save_report, train, Stage};
use macnn::{Error, Result};

/// Two-stage CNN microaneurysm detector.
#[derive(Parser)]
#[command(name = "macnn", disable_version_flag = true)]
struct Cli {
    /// Worker threads; 1 is the reference mode. Overrides the config value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print tool and file-format versions.
    #[arg(long, short = 'V')]
    version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Required {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (images/ and annotations.csv).
    GenSynthetic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Background-subtract a dataset into a preprocessed directory.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the basic network on balanced patches.
    TrainBasic {
        #[command(flatten)]
        common: Required,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write basic-network probability maps.
    InferBasic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the final network on hard negatives from basic maps.
    TrainFinal {
        #[command(flatten)]
        common: Required,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        prob_maps: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write final-network probability maps, gated by basic maps when
    /// `infer.cascade` is on.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Basic-network maps used as the gate.
        #[arg(long)]
        prob_maps: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Smooth maps and extract candidates into a CSV.
    Postprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        prob_maps: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match candidates against annotations; write FROC and operating points.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print operating points and CPM of a FROC CSV beside published rows.
    FrocReport {
        #[arg(long)]
        froc: PathBuf,
    },
    /// Cross-validated two-stage run over a raw dataset.
    Pipeline {
        #[command(flatten)]
        common: Required,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config_from(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn file_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Load the effective config and run one subcommand on a pool of the
/// requested size.
fn run(cmd: Command, threads: Option<usize>) -> Result<()> {
    let cfg = match &cmd {
        Command::GenSynthetic { common, .. }
        | Command::Preprocess { common, .. }
        | Command::InferBasic { common, .. }
        | Command::Infer { common, .. }
        | Command::Postprocess { common, .. }
        | Command::Evaluate { common, .. } => config_from(common.config.as_deref(), common.seed)?,
        Command::TrainBasic { common, .. } | Command::TrainFinal { common, .. } | Command::Pipeline { common, .. } => {
            config_from(Some(&common.config), common.seed)?
        }
        Command::FrocReport { .. } => RunConfig::default(),
    };
    let n = threads.unwrap_or(cfg.threads).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::InvalidArgument {
            op: "threads",
            reason: e.to_string(),
        })?;
    pool.install(|| execute(cmd, &cfg))
}

fn execute(cmd: Command, cfg: &RunConfig) -> Result<()> {
    match cmd {
        Command::GenSynthetic { out, .. } => {
            let mut m = Manifest::new("gen-synthetic", cfg);
            let (images, truths) = generate_synthetic(&cfg.synthetic_config())?;
            save_dataset(&out, &images, &truths)?;
            m.add_output(&out);
            m.save(&out.join(MANIFEST_FILE))
        }
        Command::Preprocess { data, out, .. } => {
            let mut m = Manifest::new("preprocess", cfg);
            m.add_input(&data)?;
            let (raw, truths) = load_dataset(&data, cfg.fov_threshold)?;
            let images = preprocess_all(&raw, cfg.median_window)?;
            save_preprocessed_dir(&images, &truths, &out)?;
            m.add_output(&out);
            m.save(&out.join(MANIFEST_FILE))
        }
        Command::TrainBasic { data, out, .. } => {
            let mut m = Manifest::new("train-basic", cfg);
            m.add_input(&data)?;
            let (images, truths) = load_preprocessed_dir(&data)?;
            if let Some(p) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                mkdir(p)?;
            }
            let spec = build_basic_spec_with(&cfg.arch_options());
            let (_, report) = train(&spec, &images, &truths, &cfg.train_config(), Stage::Basic, Some(&out))?;
            save_report(&report, &report_path(&out))?;
            m.add_output(&out);
            m.add_output(&report_path(&out));
            m.save(&file_manifest(&out))
        }
        Command::InferBasic { checkpoint, data, out, .. } => {
            let mut m = Manifest::new("infer-basic", cfg);
            m.add_input(&checkpoint)?;
            m.add_input(&data)?;
            let spec = build_basic_spec_with(&cfg.arch_options());
            let ckpt = Checkpoint::load_for(&checkpoint, &spec)?;
            let (images, _) = load_preprocessed_dir(&data)?;
            let maps = infer_maps(&ckpt, &images, cfg.infer_stride, None)?;
            save_maps(&maps, &out)?;
            m.add_output(&out);
            m.save(&out.join(MANIFEST_FILE))
        }
        Command::TrainFinal { data, prob_maps, out, .. } => {
            let mut m = Manifest::new("train-final", cfg);
            m.add_input(&data)?;
            let (images, truths) = load_preprocessed_dir(&data)?;
            let maps = load_maps_dir(&prob_maps, &images, "infer-basic")?;
            m.add_input(&prob_maps)?;
            if let Some(p) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                mkdir(p)?;
            }
            let spec = build_final_spec_with(&cfg.arch_options());
            let (_, report) = train(&spec, &images, &truths, &cfg.train_config(), Stage::Final(&maps), Some(&out))?;
            save_report(&report, &report_path(&out))?;
            m.add_output(&out);
            m.add_output(&report_path(&out));
            m.save(&file_manifest(&out))
        }
        Command::Infer { checkpoint, data, prob_maps, out, .. } => {
            let mut m = Manifest::new("infer", cfg);
            m.add_input(&checkpoint)?;
            m.add_input(&data)?;
            let spec = build_final_spec_with(&cfg.arch_options());
            let ckpt = Checkpoint::load_for(&checkpoint, &spec)?;
            let (images, _) = load_preprocessed_dir(&data)?;
            let maps = if cfg.infer_cascade {
                let dir = prob_maps.ok_or_else(|| {
                    Error::PipelineOrder("cascade inference needs --prob-maps from `infer-basic`".into())
                })?;
                let gate = load_maps_dir(&dir, &images, "infer-basic")?;
                m.add_input(&dir)?;
                infer_maps(&ckpt, &images, cfg.infer_stride, Some((&gate, cfg.stage2_threshold)))?
            } else {
                infer_maps(&ckpt, &images, cfg.infer_stride, None)?
            };
            save_maps(&maps, &out)?;
            m.add_output(&out);
            m.save(&out.join(MANIFEST_FILE))
        }
        Command::Postprocess { data, prob_maps, out, .. } => {
            let mut m = Manifest::new("postprocess", cfg);
            m.add_input(&prob_maps)?;
            let (images, _) = load_preprocessed_dir(&data)?;
            let maps = load_maps_dir(&prob_maps, &images, "infer")?;
            let cands = candidates_from_maps(&maps, cfg.post_radius, cfg.post_floor)?;
            write(&out, &format_candidates(&cands.concat()))?;
            m.add_output(&out);
            m.save(&file_manifest(&out))
        }
        Command::Evaluate { data, candidates, out, .. } => {
            let mut m = Manifest::new("evaluate", cfg);
            m.add_input(&candidates)?;
            m.add_input(&data)?;
            let (_, truths) = load_preprocessed_dir(&data)?;
            let all = load_candidates(&candidates)?;
            let mut per_image: Vec<Vec<Candidate>> = vec![Vec::new(); truths.len()];
            for c in all {
                let i = truths.iter().position(|t| t.image_id == c.image_id).ok_or_else(|| {
                    Error::Dataset(format!("candidate for unknown image `{}`", c.image_id))
                })?;
                per_image[i].push(c);
            }
            for c in &mut per_image {
                sort_candidates(c);
            }
            let curve = froc(&per_image, &truths, cfg.eval_radius)?;
            mkdir(&out)?;
            write(&out.join("froc.csv"), &format_froc(&curve))?;
            write(&out.join("operating_points.csv"), &format_operating_points(&curve))?;
            println!("cpm {:.4}", cpm(&curve));
            m.add_output(&out.join("froc.csv"));
            m.add_output(&out.join("operating_points.csv"));
            m.save(&out.join(MANIFEST_FILE))
        }
        Command::FrocReport { froc } => {
            let text = std::fs::read_to_string(&froc).map_err(|e| Error::Io {
                path: froc.clone(),
                source: e,
            })?;
            let curve = parse_froc(&text, &froc)?;
            print_report("this run", &operating_sensitivities(&curve), cpm(&curve));
            Ok(())
        }
        Command::Pipeline { data, out, .. } => {
            let cv = run_pipeline(cfg, &data, &out)?;
            for f in &cv.folds {
                println!("fold {}: cpm {:.4}", f.fold, f.cpm);
            }
            print_report("pooled", &operating_sensitivities(&cv.pooled), cv.pooled_cpm);
            Ok(())
        }
    }
}

fn print_report(label: &str, sens: &[f64; 7], cpm: f64) {
    let header: Vec<String> = OPERATING_POINTS.iter().map(|f| format!("{f:>6}")).collect();
    println!("{:<28}{}     cpm  reported", "FP/image", header.join(""));
    let row = |name: &str, s: Option<[f64; 7]>, c: Option<f64>, rep: Option<f64>| {
        let cells: String = match s {
            Some(s) => s.iter().map(|v| format!("{v:>6.2}")).collect(),
            None => format!("{:>42}", "-"),
        };
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!("{name:<28}{cells}  {:>6}  {:>8}", fmt(c), fmt(rep));
    };
    row(label, Some(*sens), Some(cpm), None);
    for r in reference_tables() {
        let flag = if r.is_flagged() { " (!)" } else { "" };
        row(&format!("{} {}{flag}", r.dataset, r.method), r.sensitivities, r.row_cpm(), r.reported_cpm);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.version {
        println!("{TOOL_NAME} {TOOL_VERSION}");
        for (k, v) in format_versions() {
            println!("  {k}: {v}");
        }
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = cli.command else {
        eprintln!("error: a subcommand is required (see --help)");
        return ExitCode::from(2);
    };
    match run(cmd, cli.threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
