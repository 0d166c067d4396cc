//! Argument definitions and one handler per subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use segot::baselines::{vote_match, KeypointMatches, VoteJson};
use segot::eval::{
    bin_pr_curve, dense_scores, evaluate_dataset, evaluate_pair, geodesic_rotation_deg, pr_curve, write_pr_csv,
    PairEvaluation, PoseBin,
};
use segot::features::{aggregate_sum, HeadParams, SegmentDescriptors};
use segot::fsutil::{read_json, write_json};
use segot::mapping::{
    build_map_pairwise, eval_instance_ap, gt_instances, write_map, ApReport, FusionConfig, Link, Node, PointCloud,
    MAP_DUSTBIN_ALPHA,
};
use segot::matcher::{match_segments, DustbinParam, MatchJson, MatcherConfig};
use segot::nav::{yaw, NavConfig, NavSegment};
use segot::pair::{load_pair, save_pair, MaskSet, Pair};
use segot::sequence::{load_sequence, save_sequence};
use segot::synth::{gen_pair, gen_sequence, SceneConfig, SequenceConfig};
use segot::tensor::load_tensor;
use segot::training::{
    describe, load_checkpoint, pair_seeds, save_checkpoint, train_head, write_trace_csv, TrainConfig,
};
use segot::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "segot",
    version,
    about = "Segment matching with dustbin-augmented optimal transport",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic pairs, or a frame sequence with --sequence
    Gen(GenArgs),
    /// Match the segments of one pair, or of every pair in a directory
    Match(MatchArgs),
    /// Keypoint-voting baseline on two mask tensors
    Vote(VoteArgs),
    /// Train the descriptor head on synthetic pairs
    Train(TrainArgs),
    /// Score predictions against ground truth, per pose bin
    Eval(EvalArgs),
    /// Build an instance map from a frame sequence
    Map(MapArgs),
    /// Steering command from segment positions and path lengths
    Yaw(YawArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Base seed; defaults to the config's seed (42)
    #[arg(long)]
    seed: Option<u64>,
    /// Number of pairs
    #[arg(long, default_value_t = 40)]
    pairs: usize,
    /// Generate a sequence with this many frames instead of pairs
    #[arg(long, value_name = "FRAMES")]
    sequence: Option<usize>,
    /// Scene (or sequence) config JSON; missing keys take defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct MatcherArgs {
    /// Softmax temperature
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    tau: f64,
    /// Sinkhorn iterations
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// Require mutual argmax when discretizing
    #[arg(long)]
    mutual: bool,
    /// Use raw dot products instead of cosine affinity
    #[arg(long)]
    no_normalize: bool,
}

impl MatcherArgs {
    fn config(&self) -> MatcherConfig {
        MatcherConfig {
            temperature: self.tau,
            iterations: self.iters,
            normalize_descriptors: !self.no_normalize,
            mutual_check: self.mutual,
        }
    }
}

#[derive(Debug, Args)]
struct MatchArgs {
    /// Pair manifest, or a directory of manifests
    #[arg(long)]
    pair: PathBuf,
    /// Output JSON, or a directory when --pair is a directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    matcher: MatcherArgs,
    /// Dustbin logit; defaults to the checkpoint's, else 1.0
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Describe segments with a trained head (needs patch features)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Worker threads for directory input
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct VoteArgs {
    /// Source masks, M x H x W u8 tensor
    #[arg(long)]
    masks_a: PathBuf,
    /// Target masks, N x H x W u8 tensor
    #[arg(long)]
    masks_b: PathBuf,
    /// JSON list of [[xa, ya], [xb, yb]] keypoint matches
    #[arg(long)]
    keypoints: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training config JSON; missing keys take defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop after this many optimizer steps
    #[arg(long)]
    steps: Option<usize>,
    /// Checkpoint directory; also receives trace.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of pair manifests with ground truth
    #[arg(long)]
    pairs: PathBuf,
    /// Directory of match outputs named after the manifests
    #[arg(long)]
    pred: PathBuf,
    /// Report JSON
    #[arg(long)]
    out: PathBuf,
    /// Directory for PR-curve CSVs; defaults to the report's directory
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MapArgs {
    /// Sequence manifest
    #[arg(long)]
    sequence: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    matcher: MatcherArgs,
    #[arg(long, default_value_t = MAP_DUSTBIN_ALPHA, allow_negative_numbers = true)]
    alpha: f64,
    /// Fusion config JSON
    #[arg(long)]
    fusion: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct YawArgs {
    /// JSON list of {"x": .., "p": ..}
    #[arg(long)]
    segments: PathBuf,
    /// Image width in pixels
    #[arg(long)]
    width: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    tau: f64,
    #[arg(long, default_value_t = 0.4, allow_negative_numbers = true)]
    gain: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Match(a) => run_match(a),
        Command::Vote(a) => vote(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Map(a) => map(a),
        Command::Yaw(a) => run_yaw(a),
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        context: format!("creating {}", dir.display()),
        source: e,
    })
}

/// Maps `f` over `items` on `jobs` threads, keeping input order.
fn par_map<T: Sync, U: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    use rayon::prelude::*;
    if jobs == 0 {
        return Err(invalid("--jobs must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Manifests in `dir`, sorted by file name.
fn manifests(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        context: format!("listing {}", dir.display()),
        source: e,
    })?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                context: format!("listing {}", dir.display()),
                source: e,
            })?
            .path();
        if path.extension().is_some_and(|x| x == "json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn gen(a: GenArgs) -> Result<()> {
    if let Some(frames) = a.sequence {
        let cfg: SequenceConfig = a.config.as_deref().map(read_json).transpose()?.unwrap_or_default();
        cfg.validate()?;
        let seq = gen_sequence(&cfg, frames, a.seed.unwrap_or(42))?;
        create_dir(&a.out)?;
        let path = save_sequence(&seq.frames, &a.out, "seq")?;
        println!(
            "wrote {frames} frames, {} observed objects: {}",
            seq.observed_objects().len(),
            path.display()
        );
        return Ok(());
    }
    let cfg: SceneConfig = a.config.as_deref().map(read_json).transpose()?.unwrap_or_default();
    cfg.validate()?;
    let seeds = pair_seeds(a.seed.unwrap_or(cfg.seed), a.pairs);
    // Generate everything before touching the output directory.
    let pairs = par_map(&seeds, a.jobs, |&s| Ok(gen_pair(&cfg, s)?.pair))?;
    create_dir(&a.out)?;
    for (k, p) in pairs.iter().enumerate() {
        save_pair(p, &a.out, &format!("pair_{k:04}"))?;
    }
    println!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}

fn descriptors(pair: &Pair, head: Option<&HeadParams>) -> Result<(SegmentDescriptors, SegmentDescriptors)> {
    match head {
        None => Ok((
            aggregate_sum(&pair.a.features, &pair.a.masks)?,
            aggregate_sum(&pair.b.features, &pair.b.masks)?,
        )),
        Some(params) => {
            let (Some(pa), Some(pb)) = (&pair.a.patches, &pair.b.patches) else {
                return Err(invalid("--checkpoint needs patch features in the pair manifest"));
            };
            Ok((describe(pa, &pair.a.masks, params)?, describe(pb, &pair.b.masks, params)?))
        }
    }
}

fn match_one(path: &Path, cfg: &MatcherConfig, alpha: DustbinParam, head: Option<&HeadParams>) -> Result<MatchJson> {
    let pair = load_pair(path)?;
    let (ga, gb) = descriptors(&pair, head)?;
    let m = match_segments(&ga, &gb, cfg, alpha)?;
    Ok(MatchJson::new(&m, gb.len()))
}

fn run_match(a: MatchArgs) -> Result<()> {
    let cfg = a.matcher.config();
    cfg.validate()?;
    let (head, ckpt_alpha) = match &a.checkpoint {
        Some(dir) => {
            let (params, alpha, _) = load_checkpoint(dir)?;
            (Some(params), Some(alpha))
        }
        None => (None, None),
    };
    let alpha = match (a.alpha, ckpt_alpha) {
        (Some(x), _) => DustbinParam { alpha: x },
        (None, Some(c)) => c,
        (None, None) => DustbinParam::default(),
    };
    if !alpha.alpha.is_finite() {
        return Err(invalid("--alpha must be finite"));
    }
    if a.pair.is_dir() {
        let inputs = manifests(&a.pair)?;
        let results = par_map(&inputs, a.jobs, |p| match_one(p, &cfg, alpha, head.as_ref()))?;
        create_dir(&a.out)?;
        for (p, r) in inputs.iter().zip(&results) {
            write_json(&a.out.join(format!("{}.json", stem(p))), r)?;
        }
        println!("matched {} pairs into {}", results.len(), a.out.display());
    } else {
        let r = match_one(&a.pair, &cfg, alpha, head.as_ref())?;
        write_json(&a.out, &r)?;
        let matched = r.assignment.iter().flatten().count();
        println!("{matched}/{} sources matched", r.assignment.len());
    }
    Ok(())
}

fn load_masks(path: &Path) -> Result<MaskSet> {
    let t = load_tensor(path)?;
    let slots = t.shape().first().copied().unwrap_or(0);
    MaskSet::from_tensor(&t, vec![true; slots])
}

fn vote(a: VoteArgs) -> Result<()> {
    let ma = load_masks(&a.masks_a)?;
    let mb = load_masks(&a.masks_b)?;
    let kps: KeypointMatches = read_json(&a.keypoints)?;
    let out = VoteJson::from(&vote_match(&ma, &mb, &kps)?);
    write_json(&a.out, &out)?;
    let assigned = out.assignment.iter().filter(|&&x| x >= 0).count();
    println!("{assigned}/{} sources assigned", out.assignment.len());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = a.config.as_deref().map(read_json).transpose()?.unwrap_or_default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.steps.is_some() {
        cfg.max_steps = a.steps;
    }
    cfg.validate()?;
    let out = train_head(&cfg)?;
    create_dir(&a.out)?;
    save_checkpoint(&a.out, &out.params, out.alpha, cfg.seed, out.trace.len())?;
    write_trace_csv(&a.out.join("trace.csv"), &out.trace)?;
    let last = out.trace.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "trained {} steps, final batch loss {last:.4}, alpha {:.4}; checkpoint in {}",
        out.trace.len(),
        out.alpha.alpha,
        a.out.display()
    );
    Ok(())
}

fn eval_one(manifest: &Path, pred_dir: &Path) -> Result<PairEvaluation> {
    let pair = load_pair(manifest)?;
    let name = stem(manifest);
    let gt = pair
        .gt
        .as_ref()
        .ok_or_else(|| invalid(format!("{name}: pair has no ground truth")))?;
    let pred: MatchJson = read_json(&pred_dir.join(format!("{name}.json")))?;
    let (m1, m2) = (pair.a.masks.len(), pair.b.masks.len());
    let matrix = pred
        .score_matrix
        .as_ref()
        .ok_or_else(|| invalid(format!("{name}: prediction has no score matrix")))?;
    if pred.assignment.len() != m1 || pred.scores.len() != m1 || matrix.len() != m1 || matrix.iter().any(|r| r.len() != m2)
    {
        return Err(invalid(format!("{name}: prediction shape does not match the pair's {m1}x{m2} slots")));
    }
    let emitted: Vec<(usize, usize, f64)> = pred
        .assignment
        .iter()
        .zip(&pred.scores)
        .enumerate()
        .filter_map(|(i, (j, &s))| j.map(|j| (i, j, s)))
        .collect();
    let rotation = match (&pair.a.pose, &pair.b.pose) {
        (Some(pa), Some(pb)) => Some(geodesic_rotation_deg(&pa.rotation, &pb.rotation)?),
        _ => None,
    };
    evaluate_pair(&emitted, &dense_scores(matrix)?, gt, rotation)
}

fn eval(a: EvalArgs) -> Result<()> {
    let inputs = manifests(&a.pairs)?;
    if inputs.is_empty() {
        return Err(invalid(format!("no pair manifests in {}", a.pairs.display())));
    }
    let evals: Vec<PairEvaluation> = inputs.iter().map(|m| eval_one(m, &a.pred)).collect::<Result<_>>()?;
    let report = evaluate_dataset(&evals)?;
    let curves_dir = a
        .curves
        .clone()
        .or_else(|| a.out.parent().map(Path::to_path_buf))
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    create_dir(&curves_dir)?;
    for bin in PoseBin::ALL {
        let curve = bin_pr_curve(&evals, Some(bin))?;
        write_pr_csv(&curves_dir.join(format!("pr_bin{}.csv", bin.index())), &curve)?;
    }
    write_pr_csv(&curves_dir.join("pr_unbinned.csv"), &bin_pr_curve(&evals, None)?)?;
    let pooled: Vec<_> = evals.iter().flat_map(|e| e.predictions.iter().copied()).collect();
    let positives: usize = evals.iter().map(|e| e.positives).sum();
    let all = if positives > 0 { pr_curve(&pooled, positives)? } else { Vec::new() };
    write_pr_csv(&curves_dir.join("pr_all.csv"), &all)?;
    write_json(&a.out, &report)?;
    for b in report.bins.iter().chain([&report.unbinned, &report.overall]) {
        println!(
            "{:>10}  pairs {:>4}  AUPRC {}  R@1 {}  R@5 {}",
            b.bin,
            b.pairs,
            fmt_opt(b.auprc),
            fmt_opt(b.recall_at_1),
            fmt_opt(b.recall_at_5)
        );
    }
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "  -  ".into(), |v| format!("{v:.3}"))
}

#[derive(Serialize)]
struct MapReport {
    objects: usize,
    members: Vec<Vec<Node>>,
    links: Vec<Link>,
    /// Present when the sequence carries object ids.
    #[serde(skip_serializing_if = "Option::is_none")]
    ap: Option<ApReport>,
}

fn map(a: MapArgs) -> Result<()> {
    let cfg = a.matcher.config();
    let fusion: FusionConfig = a.fusion.as_deref().map(read_json).transpose()?.unwrap_or_default();
    if !a.alpha.is_finite() {
        return Err(invalid("--alpha must be finite"));
    }
    let frames = load_sequence(&a.sequence)?;
    let built = build_map_pairwise(&frames, &cfg, DustbinParam { alpha: a.alpha }, &fusion)?;
    let ap = if frames.iter().all(|f| f.object_ids.is_some()) {
        let gt: Vec<PointCloud> = gt_instances(&frames, fusion.voxel_size)?
            .into_iter()
            .map(|(_, pc)| pc)
            .collect();
        let pred: Vec<PointCloud> = built.objects.iter().map(|o| o.points.clone()).collect();
        let scores: Vec<f64> = built.objects.iter().map(|o| o.n as f64).collect();
        (!gt.is_empty())
            .then(|| eval_instance_ap(&pred, &scores, &gt, fusion.iou_voxel_size))
            .transpose()?
    } else {
        None
    };
    create_dir(&a.out)?;
    write_map(&a.out, &built.objects)?;
    let report = MapReport {
        objects: built.objects.len(),
        members: built.members,
        links: built.links,
        ap,
    };
    write_json(&a.out.join("map.json"), &report)?;
    match &report.ap {
        Some(ap) => println!("{} objects; AP {:.3}, AP50 {:.3}", report.objects, ap.ap, ap.ap50),
        None => println!("{} objects", report.objects),
    }
    Ok(())
}

fn run_yaw(a: YawArgs) -> Result<()> {
    let segments: Vec<NavSegment> = read_json(&a.segments)?;
    let cfg = NavConfig {
        tau: a.tau,
        gain: a.gain,
        width: a.width,
    };
    println!("{}", yaw(&segments, &cfg)?);
    Ok(())
}
