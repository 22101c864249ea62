//! The `volrig` command line.

pub mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Result, VolrigError};
use crate::eval::{evaluate_dataset, EvalCase, DEFAULT_TOLERANCE};
use crate::extract::{predict_mesh, Decay, NmsConfig, PredictConfig};
use crate::features::io::{cross_section, dump_channels, dump_volumes, read_header, read_raw_f32, write_pgm, Axis};
use crate::features::{featurize, FeatureConfig, CHANNEL_NAMES};
use crate::mesh::{load_mesh, normalize_mesh};
use crate::net::{load_model, save_model, Granularity, Network, DEFAULT_GRANULARITY};
use crate::skeleton::{load_rig, read_skeleton, save_rig, write_skeleton};
use crate::synth::{synth_character, CharacterKind};
use crate::train::{cache_dir_from_env, prepare_dataset, train, TrainConfig};
use manifest::{write_atomic, ManifestBuilder};

/// Exit status for a missing input file.
pub const EXIT_NOT_FOUND: i32 = 2;
pub const EXIT_FAILURE: i32 = 1;
/// `eval --strict` with flagged rows.
pub const EXIT_FLAGGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "volrig", version, about = "Predict animation skeletons for 3D character meshes")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Global {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Grid resolution per axis.
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the five input channels and the occupancy mask of a mesh.
    Featurize {
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Surface samples for curvature and shape diameter.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Write a procedural rigged character (OBJ plus rig file).
    Synth {
        #[arg(long)]
        kind: CharacterKind,
        #[arg(long)]
        out: PathBuf,
        /// File stem, `<kind>_<seed>` by default.
        #[arg(long)]
        name: Option<String>,
    },
    /// Train a network on every rig file in a directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON training configuration; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        modules: Option<usize>,
    },
    /// Predict a skeleton for a mesh.
    Predict {
        mesh: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRANULARITY)]
        granularity: f64,
        /// Output rig file.
        #[arg(long)]
        out: PathBuf,
        /// Also write the skeleton as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Directory for the joint, bone and mask volumes.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long)]
        no_symmetry: bool,
        #[arg(long, default_value_t = NmsConfig::default().sigma)]
        nms_sigma: f64,
        #[arg(long, default_value_t = NmsConfig::default().threshold)]
        nms_threshold: f64,
        #[arg(long, default_value = "subtractive")]
        nms_decay: Decay,
    },
    /// Compare predicted rig files with reference ones, matched by file name.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Meshes named like the rig files; defaults to the meshes the
        /// reference rigs point at.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tol: f64,
        /// Exit with status 3 when any shape is flagged.
        #[arg(long)]
        strict: bool,
        /// JSON report path.
        #[arg(long, default_value = "eval.json")]
        out: PathBuf,
    },
    /// Write a PGM cross-section of a dumped volume.
    Inspect {
        /// Directory written by `featurize` or `predict --dump`.
        dump: PathBuf,
        #[arg(long)]
        channel: String,
        #[arg(long, default_value = "z")]
        axis: Axis,
        /// Slice index, the middle by default.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_not_found() {
                EXIT_NOT_FOUND
            } else {
                EXIT_FAILURE
            }
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(VolrigError::Config("--threads must be positive".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Featurize { mesh, out, samples } => cmd_featurize(g, mesh, out, *samples),
        Command::Synth { kind, out, name } => cmd_synth(g, *kind, out, name.as_deref()),
        Command::Train {
            data,
            config,
            out,
            iterations,
            lr,
            modules,
        } => cmd_train(g, data, config.as_deref(), out, *iterations, *lr, *modules),
        Command::Predict {
            mesh,
            checkpoint,
            granularity,
            out,
            json,
            dump,
            no_symmetry,
            nms_sigma,
            nms_threshold,
            nms_decay,
        } => {
            let cfg = PredictConfig {
                nms: NmsConfig {
                    sigma: *nms_sigma,
                    threshold: *nms_threshold,
                    decay: *nms_decay,
                },
                symmetrize: !no_symmetry,
                granularity: Granularity::new(*granularity)?,
            };
            cmd_predict(g, mesh, checkpoint, &cfg, out, json.as_deref(), dump.as_deref())
        }
        Command::Eval {
            pred,
            reference,
            mesh,
            tol,
            strict,
            out,
        } => cmd_eval(g, pred, reference, mesh.as_deref(), *tol, *strict, out),
        Command::Inspect {
            dump,
            channel,
            axis,
            index,
            out,
        } => cmd_inspect(g, dump, channel, *axis, *index, out),
    }
    .map(|code| code.unwrap_or(0))
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn cmd_featurize(g: &Global, mesh_path: &Path, out: &Path, samples: usize) -> Result<Option<i32>> {
    let seed = g.seed.unwrap_or(0);
    let mut man = ManifestBuilder::new("featurize", seed, g.threads);
    let mesh = load_mesh(mesh_path)?;
    man.input(mesh_path)?;
    let cfg = FeatureConfig {
        resolution: g.resolution.unwrap_or(FeatureConfig::default().resolution),
        samples,
        seed,
    };
    let (norm, xf) = normalize_mesh(&mesh)?;
    let f = featurize(&norm, &cfg)?;
    let outputs = dump_channels(out, &f.channels, &f.mask)?;
    println!(
        "{}³ grid, {} occupied cells, {} surface samples",
        cfg.resolution,
        f.mask.count(),
        f.samples.len()
    );
    for (c, name) in CHANNEL_NAMES.iter().enumerate() {
        let v: Vec<f32> = f
            .channels
            .channel(c)
            .into_iter()
            .zip(&f.mask.data)
            .filter_map(|(v, m)| m.then_some(v))
            .collect();
        let (lo, hi) = v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len().max(1) as f64;
        println!("{name:>4}  min {lo:>10.4}  max {hi:>10.4}  mean {mean:>10.4}");
    }
    man.finish(
        json!({ "features": cfg, "normalization": xf, "diagnostics": f.diagnostics }),
        outputs,
        &out.join("manifest.json"),
    )?;
    Ok(None)
}

fn cmd_synth(g: &Global, kind: CharacterKind, out: &Path, name: Option<&str>) -> Result<Option<i32>> {
    let seed = g.seed.unwrap_or(0);
    let man = ManifestBuilder::new("synth", seed, g.threads);
    let c = synth_character(kind, seed)?;
    let stem = name.map(str::to_string).unwrap_or_else(|| format!("{kind}_{seed}"));
    let rig = save_rig(out, &stem, &c)?;
    println!("{}: {} joints, {} triangles", rig.display(), c.skeleton.len(), c.mesh.triangles.len());
    let outputs = vec![rig.with_extension("obj"), rig.clone()];
    man.finish(json!({ "kind": kind, "name": stem }), outputs, &sibling_manifest(&rig))?;
    Ok(None)
}

/// Rig files directly inside `dir`, sorted by name.
pub fn list_rigs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| VolrigError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "rig"))
        .collect();
    v.sort();
    Ok(v)
}

fn cmd_train(
    g: &Global,
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    iterations: Option<usize>,
    lr: Option<f64>,
    modules: Option<usize>,
) -> Result<Option<i32>> {
    let mut cfg: TrainConfig = match config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).map_err(|e| VolrigError::io(p, e))?)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.resolution {
        cfg.resolution = v;
    }
    if let Some(v) = iterations {
        cfg.iterations = v;
    }
    if let Some(v) = lr {
        cfg.lr = v;
    }
    if let Some(v) = modules {
        cfg.num_modules = v;
    }
    cfg.validate()?;
    let mut man = ManifestBuilder::new("train", cfg.seed, g.threads);
    if let Some(p) = config {
        man.input(p)?;
    }
    let rigs = list_rigs(data)?;
    if rigs.is_empty() {
        return Err(VolrigError::Invalid(format!("no .rig files in {}", data.display())));
    }
    let mut characters = Vec::new();
    let mut bad = Vec::new();
    for p in &rigs {
        match load_rig(p) {
            Ok(c) => {
                let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                characters.push((stem, c));
                man.input(p)?;
            }
            Err(e) => bad.push(format!("  {}: {e}", p.display())),
        }
    }
    if !bad.is_empty() {
        return Err(VolrigError::Invalid(format!("invalid rig files:\n{}", bad.join("\n"))));
    }
    let cache = cache_dir_from_env();
    let examples = prepare_dataset(&characters, &cfg, cache.as_deref())?;
    eprintln!("{} training examples from {} rigs", examples.len(), characters.len());
    let mut net = Network::<f32>::build(cfg.network(), cfg.seed)?;
    fs::create_dir_all(out).map_err(|e| VolrigError::io(out, e))?;
    let log_path = out.join("loss.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| VolrigError::io(&log_path, e))?;
    let records = train(&mut net, &examples, &cfg, Some(&mut log))?;
    let model = out.join("model.json");
    save_model(&net, &cfg.features(), serde_json::to_value(&cfg)?, &model)?;
    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        println!("loss {:.4} -> {:.4} over {} iterations", first.loss, last.loss, records.len());
    }
    man.finish(
        json!({ "train": cfg, "parameters": net.num_parameters() }),
        vec![model.clone(), model.with_extension("bin"), log_path],
        &out.join("manifest.json"),
    )?;
    Ok(None)
}

fn cmd_predict(
    g: &Global,
    mesh_path: &Path,
    checkpoint: &Path,
    cfg: &PredictConfig,
    out: &Path,
    json_out: Option<&Path>,
    dump: Option<&Path>,
) -> Result<Option<i32>> {
    let mut man = ManifestBuilder::new("predict", g.seed.unwrap_or(0), g.threads);
    let mesh = load_mesh(mesh_path)?;
    man.input(mesh_path)?;
    let (net, meta) = load_model(checkpoint)?;
    man.input(checkpoint)?;
    if let Some(r) = g.resolution.filter(|&r| r != meta.features.resolution) {
        return Err(VolrigError::Config(format!(
            "--resolution {r} does not match the checkpoint's {}",
            meta.features.resolution
        )));
    }
    let p = predict_mesh(&net, &meta.features, &mesh, cfg, cache_dir_from_env().as_deref())?;
    let mesh_ref = fs::canonicalize(mesh_path).map_err(|e| VolrigError::io(mesh_path, e))?;
    write_skeleton(out, &p.skeleton, Some(&mesh_ref.to_string_lossy()))?;
    let mut outputs = vec![out.to_path_buf()];
    if let Some(j) = json_out {
        write_atomic(j, (serde_json::to_string_pretty(&p.skeleton.to_json())? + "\n").as_bytes())?;
        outputs.push(j.to_path_buf());
    }
    if let Some(dir) = dump {
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let mask: Vec<f32> = p.mask.data.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        outputs.extend(dump_volumes(
            dir,
            &p.mask.grid,
            &[("joints", f32s(&p.joint_map)), ("bones", f32s(&p.bone_map)), ("mask", mask)],
        )?);
    }
    println!(
        "{} joints{} -> {}",
        p.skeleton.len(),
        if p.symmetric { ", symmetrized" } else { "" },
        out.display()
    );
    man.finish(
        json!({
            "granularity": cfg.granularity.value(),
            "nms": cfg.nms,
            "symmetrize": cfg.symmetrize,
            "symmetric": p.symmetric,
            "features": meta.features,
            "network": meta.network,
        }),
        outputs,
        &sibling_manifest(out),
    )?;
    Ok(None)
}

fn cmd_eval(
    g: &Global,
    pred: &Path,
    reference: &Path,
    mesh_dir: Option<&Path>,
    tol: f64,
    strict: bool,
    out: &Path,
) -> Result<Option<i32>> {
    let mut man = ManifestBuilder::new("eval", g.seed.unwrap_or(0), g.threads);
    let mut cases = Vec::new();
    for r in list_rigs(reference)? {
        let name = r.file_name().unwrap_or_default().to_owned();
        let stem = r.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let p = pred.join(&name);
        let rf = read_skeleton(&r)?;
        let mesh_path = match (mesh_dir, &rf.mesh) {
            (Some(d), _) => d.join(format!("{stem}.obj")),
            (None, Some(m)) => r.parent().unwrap_or(Path::new(".")).join(m),
            (None, None) => {
                return Err(VolrigError::Invalid(format!("{}: no mesh given", r.display())));
            }
        };
        let pf = read_skeleton(&p)?;
        let mesh = load_mesh(&mesh_path)?;
        for f in [&r, &p, &mesh_path] {
            man.input(f)?;
        }
        cases.push(EvalCase {
            name: stem,
            pred: pf.skeleton,
            reference: rf.skeleton,
            mesh,
        });
    }
    let report = evaluate_dataset(&cases, tol)?;
    print!("{}", report.table());
    write_atomic(out, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    let flagged = report.rows.iter().filter(|r| r.flagged()).count();
    man.finish(
        json!({ "tolerance": tol, "strict": strict, "flagged": flagged }),
        vec![out.to_path_buf()],
        &sibling_manifest(out),
    )?;
    Ok((strict && flagged > 0).then_some(EXIT_FLAGGED))
}

fn cmd_inspect(
    g: &Global,
    dump: &Path,
    channel: &str,
    axis: Axis,
    index: Option<usize>,
    out: &Path,
) -> Result<Option<i32>> {
    let mut man = ManifestBuilder::new("inspect", g.seed.unwrap_or(0), g.threads);
    let header = read_header(dump)?;
    let entry = header.channels.iter().find(|e| e.name == channel).ok_or_else(|| {
        let names: Vec<&str> = header.channels.iter().map(|e| e.name.as_str()).collect();
        VolrigError::Config(format!("no volume {channel}; have {}", names.join(", ")))
    })?;
    let path = dump.join(&entry.file);
    let values = read_raw_f32(&path)?;
    man.input(&path)?;
    let res = header.resolution;
    if values.len() != res * res * res {
        return Err(VolrigError::Shape(format!("{} has {} values", path.display(), values.len())));
    }
    let index = index.unwrap_or(res / 2);
    if index >= res {
        return Err(VolrigError::Config(format!("slice {index} outside 0..{res}")));
    }
    write_pgm(out, &cross_section(&values, res, axis, index), res, res)?;
    man.finish(
        json!({ "channel": channel, "axis": format!("{axis:?}"), "index": index }),
        vec![out.to_path_buf()],
        &sibling_manifest(out),
    )?;
    Ok(None)
}
