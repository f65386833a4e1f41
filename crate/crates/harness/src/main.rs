use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmsurv_core::{Modality, VolumeEncoder};
use mmsurv_harness::{
    evaluate_late_fusion, evaluate_model, export_embeddings, generate_synthetic_cohort, load_clinical_csv, load_volume,
    predict_curves, pretrain_encoder, report_bytes, save_clinical_csv, save_volume, stratified_split, train_late_fusion,
    train_model, volume_corpus, CohortTable, Dataset, HarnessError, ImagingSetup, Result, RunConfig, TrainedModel, Volumes,
};

#[derive(Parser)]
#[command(name = "mmsurv", version, about = "Multimodal discrete-time survival experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Clinical,
    Imaging,
    Multimodal,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Clinical => Modality::Clinical,
            ModalityArg::Imaging => Modality::Imaging,
            ModalityArg::Multimodal => Modality::Multimodal,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort directory (cohort.csv, volumes/, truth.csv, pretrain/).
    Simulate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Unlabelled volumes for self-supervised pretraining.
        #[arg(long, default_value_t = 64)]
        pretrain_volumes: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Self-supervised pretraining of the volume encoder.
    Pretrain {
        #[arg(long)]
        seed: u64,
        /// Directory of .mmgs volumes.
        #[arg(long)]
        volumes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a survival model on the training partition of a cohort.
    Train {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum)]
        modality: ModalityArg,
        /// Cohort directory with cohort.csv and volumes/.
        #[arg(long)]
        data: PathBuf,
        /// Frozen pretrained encoder checkpoint.
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Train the imaging encoder with the survival loss instead.
        #[arg(long)]
        end_to_end: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a model on its held-out test partition and external cohorts.
    Evaluate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Additional cohort as NAME=DIR; repeatable.
        #[arg(long, value_parser = parse_external)]
        external: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Monthly survival curves for every patient of a cohort.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Image-index plus clinical Cox baseline.
    Latefusion {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Pooled fused representations with MGMT and resection labels.
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_external(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, dir) = s.split_once('=').ok_or_else(|| format!("expected NAME=DIR, got {s:?}"))?;
    Ok((name.to_string(), PathBuf::from(dir)))
}

fn load_cohort(dir: &Path) -> Result<CohortTable> {
    load_clinical_csv(&dir.join("cohort.csv"))
}

fn load_encoder(path: &Path) -> Result<VolumeEncoder> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn volume_dir(dir: &Path) -> PathBuf {
    dir.join("volumes")
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn simulate(seed: u64, out: &Path, pretrain: usize, cfg: &RunConfig) -> Result<()> {
    let cohort = generate_synthetic_cohort(seed, &cfg.synthetic)?;
    fs::create_dir_all(volume_dir(out))?;
    save_clinical_csv(&cohort.table, &out.join("cohort.csv"))?;
    for (p, v) in cohort.table.patients.iter().zip(&cohort.volumes) {
        save_volume(v, &volume_dir(out).join(format!("{}.mmgs", p.id)))?;
    }
    let mut w = csv::Writer::from_path(out.join("truth.csv"))?;
    for t in &cohort.truth {
        w.serialize(t)?;
    }
    w.flush()?;
    if pretrain > 0 {
        let dir = out.join("pretrain");
        fs::create_dir_all(&dir)?;
        let (volumes, _, _) = volume_corpus(seed.wrapping_add(1), pretrain, cfg.synthetic.dims);
        for (k, v) in volumes.iter().enumerate() {
            save_volume(v, &dir.join(format!("U{k:04}.mmgs")))?;
        }
    }
    log::info!("wrote {} patients to {}", cohort.table.len(), out.display());
    Ok(())
}

fn pretrain(seed: u64, dir: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "mmgs"));
    paths.sort();
    if paths.is_empty() {
        return Err(HarnessError::Config(format!("no .mmgs volumes in {}", dir.display())));
    }
    let volumes = paths.iter().map(|p| load_volume(p)).collect::<Result<Vec<_>>>()?;
    let encoder = pretrain_encoder(&volumes, cfg.encoder.clone(), seed)?;
    fs::write(out, serde_json::to_vec(&encoder)?)?;
    let mut w = csv::Writer::from_path(out.with_extension("loss.csv"))?;
    w.write_record(["step", "loss"])?;
    for (k, l) in encoder.history.iter().enumerate() {
        w.write_record([(k + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(seed: u64, modality: Modality, data_dir: &Path, encoder: Option<&Path>, end_to_end: bool, out: &Path, cfg: &RunConfig) -> Result<()> {
    let table = load_cohort(data_dir)?;
    let vdir = volume_dir(data_dir);
    let data = Dataset {
        table: &table,
        volumes: if modality.uses_imaging() { Volumes::Directory(&vdir) } else { Volumes::None },
    };
    let split = stratified_split(&table, cfg.split, seed)?;
    let frozen = match encoder {
        Some(p) if modality.uses_imaging() && !end_to_end => Some(load_encoder(p)?),
        _ => None,
    };
    let setup = match (&frozen, end_to_end) {
        (_, true) => Some(ImagingSetup::EndToEnd(cfg.encoder.clone())),
        (Some(enc), false) => Some(ImagingSetup::Frozen(enc)),
        (None, false) if modality.uses_imaging() => {
            return Err(HarnessError::Config("imaging models need --encoder or --end-to-end".into()))
        }
        (None, false) => None,
    };
    let model = train_model(&data, split, modality, setup, &cfg.model, &cfg.training, seed)?;
    let [a, b, c] = model.split.sizes();
    log::info!("split {a}/{b}/{c}; best validation epoch {}", model.best_epoch);
    model.save(out)?;
    let mut w = csv::Writer::from_path(out.with_extension("history.csv"))?;
    for h in &model.history {
        w.serialize(h)?;
    }
    w.flush()?;
    Ok(())
}

fn evaluate(seed: u64, model: &Path, data_dir: &Path, external: &[(String, PathBuf)], out: &Path, cfg: &RunConfig) -> Result<()> {
    let mut model = TrainedModel::load(model)?;
    let table = load_cohort(data_dir)?;
    let vdir = volume_dir(data_dir);
    let data = Dataset {
        table: &table,
        volumes: Volumes::Directory(&vdir),
    };
    let tables = external.iter().map(|(_, d)| load_cohort(d)).collect::<Result<Vec<_>>>()?;
    let vdirs: Vec<PathBuf> = external.iter().map(|(_, d)| volume_dir(d)).collect();
    let ext: Vec<(&str, Dataset)> = external
        .iter()
        .zip(&tables)
        .zip(&vdirs)
        .map(|(((name, _), t), v)| {
            (
                name.as_str(),
                Dataset {
                    table: t,
                    volumes: Volumes::Directory(v),
                },
            )
        })
        .collect();
    let report = evaluate_model(&mut model, &data, &ext, cfg.bootstrap, seed)?;
    fs::write(out, report_bytes(&report)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = |c: &Common| RunConfig::load(c.config.as_deref());
    match cli.command {
        Command::Simulate {
            seed,
            out,
            pretrain_volumes,
            common,
        } => simulate(seed, &out, pretrain_volumes, &config(&common)?),
        Command::Pretrain { seed, volumes, out, common } => pretrain(seed, &volumes, &out, &config(&common)?),
        Command::Train {
            seed,
            modality,
            data,
            encoder,
            end_to_end,
            out,
            common,
        } => train(seed, modality.into(), &data, encoder.as_deref(), end_to_end, &out, &config(&common)?),
        Command::Evaluate {
            seed,
            model,
            data,
            external,
            out,
            common,
        } => evaluate(seed, &model, &data, &external, &out, &config(&common)?),
        Command::Predict { model, data, out } => {
            let model = TrainedModel::load(&model)?;
            let table = load_cohort(&data)?;
            let vdir = volume_dir(&data);
            let curves = predict_curves(
                &model,
                &Dataset {
                    table: &table,
                    volumes: Volumes::Directory(&vdir),
                },
            )?;
            write_json(&out, &curves)
        }
        Command::Latefusion {
            seed,
            data,
            encoder,
            out,
            common,
        } => {
            let cfg = config(&common)?;
            let table = load_cohort(&data)?;
            let vdir = volume_dir(&data);
            let dataset = Dataset {
                table: &table,
                volumes: Volumes::Directory(&vdir),
            };
            let encoder = load_encoder(&encoder)?;
            let split = stratified_split(&table, cfg.split, seed)?;
            let mut model = train_late_fusion(&dataset, split, &encoder, &cfg.model, &cfg.training, seed)?;
            let report = evaluate_late_fusion(&mut model, &dataset, cfg.bootstrap, seed)?;
            fs::write(out.with_extension("model.json"), serde_json::to_vec(&model)?)?;
            fs::write(&out, report_bytes(&report)?)?;
            Ok(())
        }
        Command::ExportEmbeddings { model, data, out } => {
            let model = TrainedModel::load(&model)?;
            let table = load_cohort(&data)?;
            let vdir = volume_dir(&data);
            export_embeddings(
                &model,
                &Dataset {
                    table: &table,
                    volumes: Volumes::Directory(&vdir),
                },
                fs::File::create(&out)?,
            )
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
