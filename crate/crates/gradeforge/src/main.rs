use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use gradeforge::service::{AppState, Model};
use gradeforge::{Config, Error, Result};
use gradeforge_core::dataset::{
    draw_mix_plan, load_catalog, load_corpus, mix_from_plan, sample_rng, write_split_manifest,
};
use gradeforge_core::features::{StatisticalExtractor, StyleExtractor};
use gradeforge_core::metrics::evaluate_clip;
use gradeforge_core::{
    apply_lut_clip, load_clip, save_clip, select_key_frames, write_cube, write_cube_titled, Frame, VideoClip,
};
use gradeforge_diffuser::toy::{build_corpus, build_corpus_from, evaluate, procedural_pools, train_toy};
use gradeforge_diffuser::train::write_loss_csv;
use gradeforge_diffuser::{generate_lut, Checkpoint, NoiseSchedule};
use tracing::info;

#[derive(Parser)]
#[command(
    name = "gradeforge",
    version,
    about = "Reference-based video colour grading with generated 3D LUTs"
)]
struct Cli {
    /// TOML settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grade a clip toward the look of a reference clip or image.
    Grade {
        /// Frame directory or a single PNG.
        #[arg(long)]
        input: PathBuf,
        /// Frame directory or a single PNG.
        #[arg(long)]
        reference: PathBuf,
        /// Output frame directory.
        #[arg(long)]
        out: PathBuf,
        /// Also write the generated LUT here.
        #[arg(long)]
        cube: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 24.0)]
        fps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a denoiser on synthetic triples.
    Train {
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Scene directories of frames; procedural scenes when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Directory of `.cube` bases; the built-in paired looks when omitted.
        #[arg(long)]
        bases: Option<PathBuf>,
        /// Score the held-out pairs after training.
        #[arg(long)]
        evaluate: bool,
    },
    /// Split a base catalog and write random mixes of its train side.
    MixLuts {
        #[arg(long)]
        bases: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0.9)]
        split_ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a graded clip against ground truth, or a checkpoint on the
    /// held-out synthetic pairs.
    Eval {
        #[arg(long, requires = "gt", conflicts_with = "checkpoint")]
        output: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Per-frame CSV destination.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 24.0)]
        fps: f64,
    },
    /// Run the HTTP service.
    Serve,
}

fn read_clip_or_image(path: &Path, fps: f64) -> Result<VideoClip> {
    if path.is_dir() {
        Ok(load_clip(path, fps)?)
    } else {
        Ok(VideoClip::new(vec![Frame::load(path)?], fps)?)
    }
}

fn write_file(path: &Path, data: &[u8]) -> Result<()> {
    std::fs::write(path, data).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = Config::resolve(cli.config.as_deref())?;
    match cli.cmd {
        Command::Grade {
            input,
            reference,
            out,
            cube,
            checkpoint,
            fps,
            seed,
        } => {
            let path = checkpoint
                .or(cfg.server.checkpoint.clone())
                .ok_or_else(|| Error::Unavailable("no checkpoint given".into()))?;
            let model = Model::load(&path)?;
            let input = read_clip_or_image(&input, fps)?;
            let reference = read_clip_or_image(&reference, fps)?;
            let ex = StatisticalExtractor;
            let pair = select_key_frames(
                &input,
                &reference,
                |f| ex.extract(f).values().to_vec(),
                cfg.server.sample_hz,
            )?;
            info!(
                "key frames: input {} reference {} (cosine {:.4})",
                pair.input_index, pair.reference_index, pair.similarity
            );
            let lut = generate_lut(
                &model.denoiser,
                &ex,
                &input.frames()[pair.input_index],
                &reference.frames()[pair.reference_index],
                &model.schedule,
                cfg.server.sampling_steps,
                seed,
            )?;
            let t = Instant::now();
            let graded = apply_lut_clip(&lut, &input)?;
            info!("graded {} frames in {:.2}s", graded.len(), t.elapsed().as_secs_f64());
            save_clip(&graded, &out)?;
            if let Some(c) = cube {
                write_file(&c, &write_cube_titled(&lut, Some("gradeforge")))?;
            }
            println!(
                "{} frames -> {} (key pair {} / {}, cosine {:.4})",
                graded.len(),
                out.display(),
                pair.input_index,
                pair.reference_index,
                pair.similarity
            );
        }
        Command::Train {
            out,
            loss_csv,
            corpus,
            bases,
            evaluate: score,
        } => {
            let toy = &cfg.training;
            let sched = NoiseSchedule::new(cfg.schedule)?;
            let data = if corpus.is_none() && bases.is_none() {
                build_corpus(toy)?
            } else {
                let base_luts = match &bases {
                    Some(dir) => {
                        let cat = load_catalog(dir, gradeforge_core::dataset::DEFAULT_SPLIT_RATIO, toy.seed)?;
                        cat.bases()
                            .iter()
                            .filter(|b| cat.train_names().contains(&b.name))
                            .map(|b| Ok((b.name.clone(), b.lut.resampled(toy.lut_size)?)))
                            .collect::<Result<Vec<_>>>()?
                    }
                    None => gradeforge_core::looks::paired_bases(toy.lut_size)?,
                };
                let (train_pools, held_pools) = match &corpus {
                    Some(dir) => {
                        let scenes: Vec<Vec<Frame>> = load_corpus(dir, 24.0)?
                            .into_values()
                            .map(VideoClip::into_frames)
                            .collect();
                        if scenes.len() < 2 {
                            return Err(Error::Config("corpus needs at least two scenes".into()));
                        }
                        let held = toy.held_out_scenes.clamp(1, scenes.len() - 1);
                        let (a, b) = scenes.split_at(scenes.len() - held);
                        (a.to_vec(), b.to_vec())
                    }
                    None => (
                        procedural_pools(toy.train_scenes, toy.seed, 0),
                        procedural_pools(toy.held_out_scenes, toy.seed, 1 << 32),
                    ),
                };
                build_corpus_from(toy, base_luts, &train_pools, &held_pools)?
            };
            info!(
                "{} training triples, {} held-out pairs",
                data.train.len(),
                data.held_out.len()
            );
            let t = Instant::now();
            let every = (toy.optimizer.steps / 20).max(1);
            let outcome = train_toy(toy, &data, &sched, |step, loss| {
                if step % every == 0 {
                    info!("step {step} loss {loss:.5} ({:.0}s)", t.elapsed().as_secs_f64());
                }
            })?;
            if let Some(p) = loss_csv {
                write_loss_csv(&outcome.losses, &p)?;
            }
            if score {
                let report = evaluate(&outcome.model, &data.held_out, &sched, toy.sampling_steps, toy.seed)?;
                println!(
                    "held-out style distance reduction {:.3}, zero-condition mean offset {:.4}",
                    report.mean_reduction(),
                    report.worst_zero_condition()
                );
            }
            Checkpoint::new(outcome.model, cfg.schedule).save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::MixLuts {
            bases,
            out,
            count,
            split_ratio,
            seed,
        } => {
            let cat = load_catalog(&bases, split_ratio, seed)?;
            for (path, why) in cat.rejected() {
                eprintln!("skipped {}: {why}", path.display());
            }
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_split_manifest(&cat.manifest(), &out.join("split.toml"))?;
            let train = cat.train_luts();
            for i in 0..count {
                let mut rng = sample_rng(seed, i as u64);
                let plan = draw_mix_plan(train.len(), &mut rng)?;
                let lut = mix_from_plan(&train, &plan)?;
                write_file(&out.join(format!("mix_{i:04}.cube")), &write_cube(&lut))?;
            }
            println!(
                "{} train / {} test bases, {count} mixes in {}",
                cat.train_names().len(),
                cat.test_names().len(),
                out.display()
            );
        }
        Command::Eval {
            output,
            gt,
            csv,
            checkpoint,
            fps,
        } => {
            if let (Some(o), Some(g)) = (output, gt) {
                let t = Instant::now();
                let report = evaluate_clip(&load_clip(&o, fps)?, &load_clip(&g, fps)?, 0.0)?;
                let mut summary = report.summary();
                summary.elapsed_seconds = t.elapsed().as_secs_f64();
                println!(
                    "{}",
                    serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?
                );
                if let Some(p) = csv {
                    write_file(&p, report.to_csv().as_bytes())?;
                }
            } else {
                let path = checkpoint
                    .or(cfg.server.checkpoint.clone())
                    .ok_or_else(|| Error::Config("give --output/--gt or a checkpoint".into()))?;
                let model = Model::load(&path)?;
                let data = build_corpus(&cfg.training)?;
                let report = evaluate(
                    &model.denoiser,
                    &data.held_out,
                    &model.schedule,
                    cfg.training.sampling_steps,
                    cfg.training.seed,
                )?;
                for (i, p) in report.pairs.iter().enumerate() {
                    println!(
                        "pair {i:2}: ungraded {:.4} graded {:.4} reduction {:.3}",
                        p.ungraded,
                        p.graded,
                        p.reduction()
                    );
                }
                println!(
                    "mean reduction {:.3}; zero-condition mean offset up to {:.4}",
                    report.mean_reduction(),
                    report.worst_zero_condition()
                );
            }
        }
        Command::Serve => {
            let state = Arc::new(AppState::from_config(&cfg.server, &cfg.catalog)?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("runtime", e))?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(cfg.server.bind)
                    .await
                    .map_err(|e| Error::io(cfg.server.bind.to_string(), e))?;
                gradeforge::serve_on(listener, state, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
            })?;
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
