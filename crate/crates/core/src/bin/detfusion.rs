use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use detfusion::eval::EvalReport;
use detfusion::harness::io::{
    parse_checkpoint_file, parse_detections, parse_scenes, write_checkpoint_file, write_detections,
    write_report, write_scenes,
};
use detfusion::harness::pipeline::{infer_dataset, mine_dataset, train_fusion};
use detfusion::harness::{exit, run_pipeline, HarnessError, PipelineConfig};
use detfusion::model::ClassPartition;
use detfusion::pseudolabel::pseudo_label_counts;
use detfusion::segregation::segregate;
use detfusion::sim::{generate, SimConfig};

#[derive(Parser)]
#[command(
    name = "detfusion",
    version,
    about = "Fuse a base-class and a novel-class detector"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenes file.
    Simulate {
        /// Simulator TOML; defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scenes: Option<usize>,
        /// Index of the first scene; use disjoint ranges under one seed for
        /// train/test splits.
        #[arg(long)]
        first_scene: Option<usize>,
        #[arg(long)]
        image_prefix: Option<String>,
    },
    /// Print per-scene proposal bucket counts.
    Segregate {
        #[arg(long)]
        scenes: PathBuf,
        /// Also print each proposal's bucket.
        #[arg(long)]
        assignments: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Append pseudo labels mined from base detections to each scene.
    Mine {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop non-pseudo base-class annotations before mining.
        #[arg(long)]
        strip_base_gt: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the fusion head and write a checkpoint.
    Train {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run segregation, fusion and merging; write a detections file.
    Infer {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a detections file against a scenes file.
    Eval {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print the per-novel-class summary row.
        #[arg(long)]
        per_class: bool,
    },
    /// Mine, train, infer and evaluate in one go.
    Pipeline {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Output directory for checkpoint.txt, detections.jsonl and report.json.
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Pipeline settings: an optional TOML file, overridden by any flag given.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    cross_iou: Option<f64>,
    #[arg(long)]
    score_thresh: Option<f64>,
    #[arg(long)]
    removal_iou: Option<f64>,
    #[arg(long)]
    match_iou: Option<f64>,
    #[arg(long)]
    fusion_score_thresh: Option<f64>,
    #[arg(long)]
    fusion_nms_iou: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    box_weight: Option<f64>,
    #[arg(long)]
    d_h: Option<usize>,
    #[arg(long)]
    d_t: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shots: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, HarnessError> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            tau,
            cross_iou,
            score_thresh,
            removal_iou,
            match_iou,
            fusion_score_thresh,
            fusion_nms_iou,
            epochs,
            lr,
            batch_size,
            momentum,
            box_weight,
            d_h,
            d_t,
            seed,
            shots
        );
        c.check()?;
        Ok(c)
    }
}

fn load_sim_config(path: &Path) -> Result<SimConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn print_counts(title: &str, partition: &ClassPartition, counts: &[usize]) {
    println!("{title}");
    for (id, n) in partition.base_ids().zip(counts) {
        println!("  {:<20} {n}", partition.name(id).unwrap_or("?"));
    }
    let detected = counts.iter().filter(|&&n| n > 0).count();
    println!(
        "  {detected} of {} base classes received pseudo labels",
        counts.len()
    );
}

fn print_report(report: &EvalReport, partition: &ClassPartition, per_class: bool) {
    println!("{report}");
    if per_class {
        println!();
        println!("{}", report.table_row(partition));
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            scenes,
            first_scene,
            image_prefix,
        } => {
            let mut cfg = match config {
                Some(p) => load_sim_config(&p)?,
                None => SimConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = scenes {
                cfg.scenes = n;
            }
            if let Some(f) = first_scene {
                cfg.first_scene = f;
            }
            if let Some(p) = image_prefix {
                cfg.image_prefix = p;
            }
            let dataset = generate(&cfg).map_err(HarnessError::Sim)?;
            write_scenes(&out, &dataset)?;
            println!("wrote {} scenes to {}", dataset.scenes.len(), out.display());
        }
        Command::Segregate {
            scenes,
            assignments,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let dataset = parse_scenes(&scenes)?;
            println!("image_id\tvalid_base\tvalid_novel\toverlapping");
            for s in &dataset.scenes {
                let r = segregate(&s.base_output.proposals, &s.novel_output.proposals, cfg.tau);
                println!(
                    "{}\t{}\t{}\t{}",
                    s.image_id,
                    r.valid_base.len(),
                    r.valid_novel.len(),
                    r.overlapping.len()
                );
                if assignments {
                    for i in &r.valid_base {
                        println!("  base[{i}]\tvalid_base");
                    }
                    for i in &r.valid_novel {
                        println!("  novel[{i}]\tvalid_novel");
                    }
                    for (src, i) in &r.overlapping {
                        println!("  {src}[{i}]\toverlapping");
                    }
                }
            }
        }
        Command::Mine {
            scenes,
            out,
            strip_base_gt,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let dataset = parse_scenes(&scenes)?;
            let mined = mine_dataset(&dataset, &cfg.mining(), strip_base_gt);
            write_scenes(&out, &mined)?;
            let partition = &mined.header.partition;
            let counts =
                pseudo_label_counts(mined.scenes.iter().flat_map(|s| &s.ground_truth), partition);
            print_counts("pseudo labels per base class:", partition, &counts);
        }
        Command::Train { scenes, out, cfg } => {
            let cfg = cfg.resolve()?;
            let dataset = parse_scenes(&scenes)?;
            let trained = train_fusion(&dataset, &cfg)?;
            write_checkpoint_file(&out, &trained.params)?;
            println!("training examples: {}", trained.examples);
            for e in &trained.trace {
                println!(
                    "epoch {:>3}  loss {:.6}  cls {:.6}  box {:.6}",
                    e.epoch, e.loss, e.classification, e.box_regression
                );
            }
        }
        Command::Infer {
            scenes,
            checkpoint,
            out,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let dataset = parse_scenes(&scenes)?;
            let params = parse_checkpoint_file(&checkpoint)?;
            let dets = infer_dataset(&dataset, &params, &cfg)?;
            write_detections(&out, &dets)?;
            let n: usize = dets.iter().map(|d| d.detections.len()).sum();
            println!("wrote {n} detections for {} images", dets.len());
        }
        Command::Eval {
            scenes,
            detections,
            out,
            per_class,
        } => {
            let dataset = parse_scenes(&scenes)?;
            let dets = parse_detections(&detections)?;
            let report = detfusion::harness::pipeline::evaluate_detections(&dataset, &dets)?;
            write_report(&out, &report)?;
            print_report(&report, &dataset.header.partition, per_class);
        }
        Command::Pipeline {
            train,
            test,
            out_dir,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let train_set = parse_scenes(&train)?;
            let test_set = parse_scenes(&test)?;
            let outcome = run_pipeline(&train_set, &test_set, &cfg)?;
            std::fs::create_dir_all(&out_dir).map_err(|source| HarnessError::Io {
                path: out_dir.display().to_string(),
                source,
            })?;
            write_checkpoint_file(&out_dir.join("checkpoint.txt"), &outcome.fusion.params)?;
            write_detections(&out_dir.join("detections.jsonl"), &outcome.detections)?;
            write_report(&out_dir.join("report.json"), &outcome.report)?;
            let partition = &test_set.header.partition;
            print_counts(
                "pseudo labels per base class:",
                partition,
                &outcome.pseudo_labels,
            );
            println!("fusion training examples: {}", outcome.fusion.examples);
            if let Some(last) = outcome.fusion.trace.last() {
                println!("final training loss: {:.6}", last.loss);
            }
            println!(
                "cross-detector duplicates: {} before merge, {} after",
                outcome.confusion.before_merge, outcome.confusion.after_merge
            );
            print_report(&outcome.report, partition, true);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
