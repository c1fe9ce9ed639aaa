use std::fs;
use std::path::{Path, PathBuf};

use drhdr_core::dataset::{generate_to_disk, load_dataset, NamedStack};
use drhdr_core::graph::{check_weights, forward_eval};
use drhdr_core::imaging::radiometry::{DEFAULT_GAMMA, DEFAULT_MU};
use drhdr_core::imaging::{psnr, psnr_mu, read_pfm, write_pfm};
use drhdr_core::synth::{split_dataset, SceneParams};
use drhdr_core::train::{fit, load_weights, EpochRecord, FitOptions, ScheduleSpec, TrainConfig, TrainState};
use drhdr_core::{count_macs, Error, MacConvention, NetworkConfig, Tensor, Variant};
use serde::Serialize;

use crate::config::{parse_hw, pick, FileConfig};
use crate::{Cli, CliError, Command, Format, NetArgs};

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult {
    let file = FileConfig::load(cli.config.as_deref())?;
    if cli.deterministic || file.deterministic.unwrap_or(false) {
        // fails only if a pool already exists, which is harmless here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match cli.command {
        Command::GenData { out, count, seed, size } => gen_data(&file, &out, count, seed, size),
        Command::Train {
            data,
            out,
            net,
            seed,
            epochs,
            batch,
            patch,
            max_steps,
            val,
            lr_scale,
            resume,
            format,
        } => {
            let args = TrainArgs {
                seed,
                epochs,
                batch,
                patch,
                max_steps,
                val,
                lr_scale,
            };
            train(&file, &data, &out, &net, args, resume.as_deref(), format)
        }
        Command::Infer {
            weights,
            data,
            out,
            net,
            format,
        } => infer(&file, &weights, &data, &out, &net, format),
        Command::Eval { pred, gt, format } => eval(&pred, &gt, format),
        Command::Profile {
            net,
            hw,
            convention,
            compare,
            format,
            out,
        } => profile(&file, &net, hw, convention, compare, format, out.as_deref()),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_variant(s: &str) -> CliResult<Variant> {
    Variant::parse(s).ok_or_else(|| {
        let names: Vec<_> = Variant::ALL.iter().map(|v| v.as_str()).collect();
        usage(format!("unknown variant `{s}`; expected one of {}", names.join(", ")))
    })
}

#[derive(Copy, Clone, PartialEq, Eq)]
enum Preset {
    Paper,
    Tiny,
}

fn parse_preset(s: &str) -> CliResult<Preset> {
    match s {
        "paper" => Ok(Preset::Paper),
        "tiny" => Ok(Preset::Tiny),
        _ => Err(usage(format!("unknown preset `{s}`; expected paper or tiny"))),
    }
}

fn resolve_net(net: &NetArgs, file: &FileConfig, default_preset: &str) -> CliResult<(NetworkConfig, Preset)> {
    let variant = parse_variant(&pick(net.variant.clone(), file.variant.clone(), "drhdr".into()))?;
    let preset = parse_preset(&pick(net.preset.clone(), file.preset.clone(), default_preset.into()))?;
    let cfg = match preset {
        Preset::Paper => NetworkConfig::for_variant(variant),
        Preset::Tiny => NetworkConfig::tiny_for_variant(variant),
    };
    Ok((cfg, preset))
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    println!("{s}");
    Ok(())
}

fn gen_data(file: &FileConfig, out: &Path, count: Option<usize>, seed: Option<u64>, size: Option<String>) -> CliResult {
    let count = pick(count, file.count, 64);
    let seed = pick(seed, file.seed, 0);
    let size = parse_hw(&pick(size, file.size.clone(), "64x64".into()))?;
    let base = SceneParams {
        size,
        ..SceneParams::default()
    };
    base.validate()?;
    create_dir(out)?;
    generate_to_disk(out, count, &base, seed)?;
    println!("wrote {count} stacks of {}x{} to {}", size.0, size.1, out.display());
    Ok(())
}

struct TrainArgs {
    seed: Option<u64>,
    epochs: Option<usize>,
    batch: Option<usize>,
    patch: Option<usize>,
    max_steps: Option<u64>,
    val: Option<usize>,
    lr_scale: Option<f64>,
}

fn default_val_count(n: usize) -> usize {
    if n < 2 {
        0
    } else {
        (n / 8).max(1)
    }
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.prec$}"),
        _ => "-".into(),
    }
}

fn epoch_row(r: &EpochRecord) -> String {
    format!(
        "{:>5} {:>5} {:>10.3e} {:>6} {:>10} {:>10} {:>10}",
        r.epoch + 1,
        r.phase,
        r.lr,
        r.steps,
        fmt_opt(Some(r.mean_loss), 5),
        fmt_opt(r.val.map(|v| v.psnr), 2),
        fmt_opt(r.val.map(|v| v.psnr_mu), 2),
    )
}

fn train(
    file: &FileConfig,
    data: &Path,
    out: &Path,
    net: &NetArgs,
    args: TrainArgs,
    resume: Option<&Path>,
    format: Format,
) -> CliResult {
    let (net_cfg, preset) = resolve_net(net, file, "tiny")?;
    let paper = preset == Preset::Paper;
    let epochs = pick(args.epochs, file.epochs, if paper { 300 } else { 48 });
    let batch = pick(args.batch, file.batch, if paper { 28 } else { 4 });
    let patch = pick(args.patch, file.patch, if paper { 250 } else { 0 });
    let lr_scale = pick(args.lr_scale, file.lr_scale, 1.0);
    if epochs == 0 {
        return Err(usage("--epochs must be at least 1"));
    }
    if !(lr_scale > 0.0 && lr_scale.is_finite()) {
        return Err(usage("--lr-scale must be positive"));
    }
    let base = ScheduleSpec::default();
    let schedule = if epochs == base.total_epochs() { base } else { base.scaled(epochs) };
    let cfg = TrainConfig {
        net: net_cfg,
        schedule: schedule.with_lr_scale(lr_scale),
        batch,
        patch,
        max_steps: args.max_steps.or(file.max_steps),
        seed: pick(args.seed, file.seed, 0),
        ..TrainConfig::default()
    };

    let stacks: Vec<_> = load_dataset(data)?.into_iter().map(|s| s.stack).collect();
    let n_val = pick(args.val, file.val, default_val_count(stacks.len()));
    if n_val >= stacks.len() {
        return Err(usage(format!("--val {n_val} leaves no training stacks out of {}", stacks.len())));
    }
    let (train_set, val_set) = split_dataset(stacks, n_val, cfg.seed)?;
    let resume = resume.map(TrainState::load).transpose()?;
    create_dir(out)?;

    let table = format == Format::Table;
    if table {
        println!(
            "training {} ({} preset) on {} stacks, validating on {}",
            cfg.net.variant.as_str(),
            if paper { "paper" } else { "tiny" },
            train_set.len(),
            val_set.len()
        );
        println!(
            "{:>5} {:>5} {:>10} {:>6} {:>10} {:>10} {:>10}",
            "epoch", "phase", "lr", "steps", "loss", "psnr", "psnr_mu"
        );
    }
    let mut print_row = |r: &EpochRecord| println!("{}", epoch_row(r));
    let opts = FitOptions {
        out_dir: Some(out.to_path_buf()),
        resume,
        eval_train: false,
        on_epoch: if table { Some(&mut print_row) } else { None },
    };
    let outcome = fit(&cfg, &train_set, &val_set, opts)?;
    let report = &outcome.report;
    if table {
        println!(
            "{} steps in {:.1}s, best psnr_mu {}, checkpoints in {}",
            report.total_steps,
            report.seconds,
            fmt_opt(report.best_psnr_mu, 2),
            out.display()
        );
        Ok(())
    } else {
        print_json(report)
    }
}

/// Network for a checkpoint: flags, then the config file, then the
/// `report.json` written next to it by `train`, then the tiny preset.
fn infer_net(net: &NetArgs, file: &FileConfig, weights: &Path) -> CliResult<NetworkConfig> {
    if net.variant.is_some() || net.preset.is_some() || file.variant.is_some() || file.preset.is_some() {
        return Ok(resolve_net(net, file, "tiny")?.0);
    }
    let report = weights.parent().map(|d| d.join("report.json"));
    if let Some(path) = report.filter(|p| p.is_file()) {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        let cfg = serde_json::from_value(v["config"]["net"].clone())
            .map_err(|e| Error::from(e).context(path.display().to_string()))?;
        return Ok(cfg);
    }
    Ok(resolve_net(net, file, "tiny")?.0)
}

#[derive(Serialize)]
struct ImageScore {
    id: String,
    psnr: f64,
    psnr_mu: f64,
}

#[derive(Serialize)]
struct ScoreSummary {
    images: Vec<ImageScore>,
    mean_psnr: Option<f64>,
    mean_psnr_mu: Option<f64>,
}

impl ScoreSummary {
    fn new(images: Vec<ImageScore>) -> Self {
        let n = images.len() as f64;
        let mean = |f: fn(&ImageScore) -> f64| (!images.is_empty()).then(|| images.iter().map(f).sum::<f64>() / n);
        ScoreSummary {
            mean_psnr: mean(|s| s.psnr),
            mean_psnr_mu: mean(|s| s.psnr_mu),
            images,
        }
    }

    fn print_table(&self) {
        println!("{:<24} {:>10} {:>10}", "image", "psnr", "psnr_mu");
        for s in &self.images {
            println!("{:<24} {:>10.2} {:>10.2}", s.id, s.psnr, s.psnr_mu);
        }
        if let (Some(p), Some(m)) = (self.mean_psnr, self.mean_psnr_mu) {
            println!("{:<24} {:>10.2} {:>10.2}", "mean", p, m);
        }
    }
}

fn score(id: &str, pred: &Tensor, gt: &Tensor) -> CliResult<ImageScore> {
    let ctx = |e: Error| e.context(format!("image {id}"));
    Ok(ImageScore {
        id: id.to_string(),
        psnr: psnr(pred, gt, gt.max_value()).map_err(ctx)?,
        psnr_mu: psnr_mu(pred, gt, DEFAULT_MU).map_err(ctx)?,
    })
}

fn infer(file: &FileConfig, weights: &Path, data: &Path, out: &Path, net: &NetArgs, format: Format) -> CliResult {
    let net_cfg = infer_net(net, file, weights)?;
    let graph = net_cfg.build();
    let w = load_weights(weights)?;
    check_weights(&graph, &w).map_err(|e| e.context(format!("weights {} for {}", weights.display(), graph.name)))?;
    let stacks = load_dataset(data)?;
    create_dir(out)?;
    let mut scores = Vec::new();
    for NamedStack { id, stack } in &stacks {
        let inputs = stack.network_inputs(DEFAULT_GAMMA)?;
        let pred = forward_eval(&graph, &w, &inputs).map_err(|e| e.context(format!("stack {id}")))?;
        write_pfm(out.join(format!("{id}.pfm")), &pred)?;
        if let Some(gt) = &stack.gt {
            scores.push(score(id, &pred, gt)?);
        }
    }
    let summary = ScoreSummary::new(scores);
    match format {
        Format::Table => {
            println!("wrote {} predictions to {}", stacks.len(), out.display());
            if !summary.images.is_empty() {
                summary.print_table();
            }
            Ok(())
        }
        Format::Json => print_json(&summary),
    }
}

fn find_gt(gt_dir: &Path, id: &str) -> CliResult<PathBuf> {
    let flat = gt_dir.join(format!("{id}.pfm"));
    if flat.is_file() {
        return Ok(flat);
    }
    let nested = gt_dir.join(id).join("gt.pfm");
    if nested.is_file() {
        return Ok(nested);
    }
    Err(Error::Dataset(format!("no ground truth for `{id}` under {}", gt_dir.display())).into())
}

fn eval(pred_dir: &Path, gt_dir: &Path, format: Format) -> CliResult {
    let entries = fs::read_dir(pred_dir).map_err(|e| Error::io(pred_dir, e))?;
    let mut preds = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(pred_dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == "pfm") {
            preds.push(p);
        }
    }
    preds.sort();
    if preds.is_empty() {
        return Err(Error::Dataset(format!("no .pfm files in {}", pred_dir.display())).into());
    }
    if !gt_dir.is_dir() {
        return Err(Error::Dataset(format!("ground-truth directory {} does not exist", gt_dir.display())).into());
    }
    let mut scores = Vec::new();
    for p in &preds {
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let gt = read_pfm(find_gt(gt_dir, &id)?)?;
        scores.push(score(&id, &read_pfm(p)?, &gt)?);
    }
    let summary = ScoreSummary::new(scores);
    match format {
        Format::Table => {
            summary.print_table();
            Ok(())
        }
        Format::Json => print_json(&summary),
    }
}

#[derive(Serialize)]
struct Comparison {
    variant: &'static str,
    params: u64,
    macs: u64,
    params_ratio: f64,
    macs_ratio: f64,
}

fn profile(
    file: &FileConfig,
    net: &NetArgs,
    hw: Option<String>,
    convention: Option<String>,
    compare: Option<String>,
    format: Format,
    out: Option<&Path>,
) -> CliResult {
    let (net_cfg, preset) = resolve_net(net, file, "paper")?;
    let (h, w) = parse_hw(&pick(hw, file.hw.clone(), "1060x1900".into()))?;
    let conv_name = pick(convention, file.convention.clone(), "standard".into());
    let conv = MacConvention::parse(&conv_name)
        .ok_or_else(|| usage(format!("unknown convention `{conv_name}`; expected standard or weight-applications")))?;
    let report = count_macs(&net_cfg.build(), h, w, conv)?;

    let comparison = match compare {
        None => None,
        Some(name) => {
            let v = if name == "baseline" { Variant::Ahdr } else { parse_variant(&name)? };
            let other_cfg = match preset {
                Preset::Paper => NetworkConfig::for_variant(v),
                Preset::Tiny => NetworkConfig::tiny_for_variant(v),
            };
            let other = count_macs(&other_cfg.build(), h, w, conv)?;
            Some(Comparison {
                variant: v.as_str(),
                params: other.total_params,
                macs: other.total_macs,
                params_ratio: report.total_params as f64 / other.total_params as f64,
                macs_ratio: report.total_macs as f64 / other.total_macs as f64,
            })
        }
    };

    let mut json: serde_json::Value = serde_json::from_str(&report.to_json()?).map_err(Error::from)?;
    if let Some(c) = &comparison {
        json["compare"] = serde_json::to_value(c).map_err(Error::from)?;
    }
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&json).map_err(Error::from)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    match format {
        Format::Table => {
            print!("{}", report.to_table());
            if let Some(c) = &comparison {
                println!(
                    "vs {}: params {} ({:.3}x), MACs {} ({:.3}x)",
                    c.variant, c.params, c.params_ratio, c.macs, c.macs_ratio
                );
            }
            Ok(())
        }
        Format::Json => print_json(&json),
    }
}
