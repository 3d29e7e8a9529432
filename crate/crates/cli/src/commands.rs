use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use derender_core::dataset::{generate_dataset, DatasetConfig, DatasetError, Manifest};
use derender_core::eval::{evaluate, EvalError, OraclePredictor, Protocol};
use derender_core::model::{Cerberus, EncoderConfig};
use derender_core::training::{
    load_quadruplets, Checkpoint, TrainConfig, TrainError, Trainer, LOSS_CSV_HEADER,
};
use serde::Serialize;

use crate::config::{set, ConfigFile, Preset, ProtocolArg};
use crate::{CliError, EvalArgs, GenDataArgs, TrainArgs};

pub fn defaults_toml() -> String {
    toml::to_string(&ConfigFile::defaults()).expect("defaults serialize")
}

pub fn dataset_err(e: DatasetError) -> CliError {
    match e {
        DatasetError::Render(_) | DatasetError::Geometry(_) => CliError::Internal(e.to_string()),
        _ => CliError::User(e.to_string()),
    }
}

pub fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Dataset(d) => dataset_err(d),
        TrainError::Config(_) | TrainError::Version { .. } | TrainError::Io { .. } => CliError::User(e.to_string()),
        TrainError::Model(derender_core::model::ModelError::Params(_)) => CliError::User(e.to_string()),
        _ => CliError::Internal(e.to_string()),
    }
}

fn eval_err(e: EvalError) -> CliError {
    match e {
        EvalError::Dataset(d) => dataset_err(d),
        EvalError::NoCanonical(_) | EvalError::Grid(_) => CliError::User(e.to_string()),
        _ => CliError::Internal(e.to_string()),
    }
}

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::User(format!("{}: {e}", path.display()))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Serialize)]
struct RunRecord<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    git_revision: String,
    started_unix: u64,
    elapsed_seconds: f64,
    config: &'a C,
}

/// Write `run.json` with the resolved config, revision and timing.
pub fn write_run_record<C: Serialize>(dir: &Path, command: &str, config: &C, started: (SystemTime, Instant)) -> Result<(), CliError> {
    let rec = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        git_revision: git_revision(),
        started_unix: started.0.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        elapsed_seconds: started.1.elapsed().as_secs_f64(),
        config,
    };
    let path = dir.join("run.json");
    let text = serde_json::to_string_pretty(&rec).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

pub fn now() -> (SystemTime, Instant) {
    (SystemTime::now(), Instant::now())
}

pub fn gen_data(file: &ConfigFile, a: GenDataArgs) -> Result<(), CliError> {
    let started = now();
    let mut c = file.gen_data.clone();
    set(&mut c.out, a.out);
    set(&mut c.subjects, a.subjects);
    set(&mut c.quadruplets, a.quadruplets);
    set(&mut c.test_poses, a.test_poses);
    set(&mut c.test_views, a.test_views);
    set(&mut c.image_size, a.image_size);
    set(&mut c.seed, a.seed);
    let cfg = DatasetConfig {
        subjects: c.subjects,
        quadruplets: c.quadruplets,
        test_poses: c.test_poses,
        test_views: c.test_views,
        image_size: c.image_size,
        seed: c.seed,
        ..DatasetConfig::default()
    };
    let ds = generate_dataset(&cfg, &c.out).map_err(dataset_err)?;
    let m = &ds.manifest;
    println!("manifest {}", ds.manifest_path.display());
    println!(
        "{} subjects, {} quadruplets ({} training images), {} test poses ({} test images)",
        m.subjects.len(),
        m.records.len(),
        4 * m.records.len(),
        m.test.len(),
        m.test.iter().map(|t| t.views.len()).sum::<usize>()
    );
    write_run_record(&c.out, "gen-data", &serde_json::json!({ "flags": c, "dataset": cfg }), started)
}

fn encoder_for(preset: Preset, m: &Manifest) -> Result<EncoderConfig, CliError> {
    let mut e = match preset {
        Preset::Desk => EncoderConfig::desk(m.camera.distance),
        Preset::Paper => EncoderConfig::paper(m.camera.distance),
    };
    e.image_size = m.image_size;
    e.validate().map_err(|err| CliError::User(format!("dataset images do not fit the {preset:?} preset: {err}")))?;
    Ok(e)
}

pub fn train(file: &ConfigFile, a: TrainArgs) -> Result<(), CliError> {
    let started = now();
    let mut s = file.train.clone();
    set(&mut s.data, a.data);
    set(&mut s.out, a.out);
    set(&mut s.preset, a.preset);
    set(&mut s.seed, a.seed);
    set(&mut s.log_every, a.log_every);
    s.steps = a.steps.or(s.steps);
    s.batch = a.batch.or(s.batch);
    s.lr = a.lr.or(s.lr);
    s.checkpoint_every = a.checkpoint_every.or(s.checkpoint_every);
    s.resume = a.resume.or(s.resume);
    if a.no_pose_consistency {
        s.pose_consistency = false;
    }

    let (m, root) = Manifest::load(&s.data).map_err(dataset_err)?;
    let base = match s.preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Paper => TrainConfig::paper(),
    };
    let cfg = TrainConfig {
        steps: s.steps.unwrap_or(base.steps),
        batch: s.batch.unwrap_or(base.batch),
        lr: s.lr.unwrap_or(base.lr),
        checkpoint_every: s.checkpoint_every.unwrap_or(base.checkpoint_every),
        seed: s.seed,
        pose_consistency: s.pose_consistency,
        ..base
    };
    let encoder = encoder_for(s.preset, &m)?;
    let mut trainer = match &s.resume {
        Some(p) => {
            let ck = Checkpoint::load(p).map_err(train_err)?;
            if ck.encoder != encoder {
                return Err(CliError::User(format!(
                    "{}: checkpoint encoder does not match the {:?} preset for this dataset",
                    p.display(),
                    s.preset
                )));
            }
            Trainer::resume(&ck, cfg.clone(), m.lights).map_err(train_err)?
        }
        None => {
            let model = Cerberus::new(encoder.clone(), cfg.seed).map_err(|e| CliError::User(e.to_string()))?;
            Trainer::new(model, cfg.clone(), m.lights).map_err(train_err)?
        }
    };
    let data = load_quadruplets(&m, &root).map_err(train_err)?;
    create_dir(&s.out)?;
    let log_path = s.out.join("loss.csv");
    let fresh = s.resume.is_none() || !log_path.exists();
    let log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    if fresh {
        writeln!(log, "{LOSS_CSV_HEADER}").map_err(|e| io_err(&log_path, e))?;
    }

    let start_step = trainer.step();
    let every = s.log_every;
    let clock = Instant::now();
    let reports = trainer
        .run(&data, &mut log, Some(&s.out.join("checkpoints")), |r| {
            if every > 0 && r.step % every == 0 {
                println!(
                    "step {:>6}  total {:.5}  recon {:.5}  trans {:.5}  bg {:.5}  smooth {:.3}  |g| {:.3}  {:.0}s",
                    r.step,
                    r.losses.total,
                    r.losses.recon,
                    r.losses.translation,
                    r.losses.background,
                    r.losses.smoothness,
                    r.grad_norm,
                    clock.elapsed().as_secs_f64()
                );
            }
        })
        .map_err(train_err)?;
    log.flush().map_err(|e| io_err(&log_path, e))?;
    if let (Some(first), Some(last)) = (reports.first(), reports.last()) {
        println!(
            "steps {}..{}: loss {:.5} -> {:.5}",
            start_step + 1,
            last.step,
            first.losses.total,
            last.losses.total
        );
    } else {
        println!("already at step {start_step}; nothing to do");
    }
    println!("checkpoint {}", s.out.join("checkpoints/final.json").display());
    write_run_record(&s.out, "train", &serde_json::json!({ "flags": s, "train": cfg, "encoder": encoder }), started)
}

pub fn eval(file: &ConfigFile, a: EvalArgs) -> Result<(), CliError> {
    let started = now();
    let mut s = file.eval.clone();
    set(&mut s.data, a.data);
    set(&mut s.protocol, a.protocol);
    set(&mut s.out, a.out);
    s.label = a.label.or(s.label);
    if a.oracle {
        s.oracle = true;
        s.checkpoint = None;
    } else if a.checkpoint.is_some() {
        s.oracle = false;
        s.checkpoint = a.checkpoint;
    }
    let (m, root) = Manifest::load(&s.data).map_err(dataset_err)?;
    let protocols = match s.protocol {
        ProtocolArg::Standard => vec![Protocol::Standard],
        ProtocolArg::Hard => vec![Protocol::Hard],
        ProtocolArg::Both => vec![Protocol::Standard, Protocol::Hard],
    };
    let model = match (&s.checkpoint, s.oracle) {
        (_, true) => None,
        (Some(p), false) => {
            let ck = Checkpoint::load(p).map_err(train_err)?;
            let label = if ck.train.pose_consistency { "cerberus" } else { "free" };
            Some((ck.model().map_err(train_err)?, label))
        }
        (None, false) => return Err(CliError::User("eval needs --checkpoint or --oracle".into())),
    };
    if let Some((model, _)) = &model {
        if model.config().image_size != m.image_size {
            return Err(CliError::User(format!(
                "checkpoint expects {}px images, dataset has {}px",
                model.config().image_size,
                m.image_size
            )));
        }
    }
    create_dir(&s.out)?;
    for p in protocols {
        let report = match &model {
            None => evaluate(&OraclePredictor, &m, &root, p, s.label.as_deref().unwrap_or("oracle")),
            Some((model, label)) => evaluate(model, &m, &root, p, s.label.as_deref().unwrap_or(label)),
        }
        .map_err(eval_err)?;
        let stem = serde_json::to_value(p).expect("protocol").as_str().expect("string").to_string();
        for (ext, text) in [("json", report.to_json()), ("csv", report.to_csv())] {
            let path = s.out.join(format!("{stem}.{ext}"));
            std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        }
        print!("{}", report.to_table());
    }
    write_run_record(&s.out, "eval", &s, started)
}
