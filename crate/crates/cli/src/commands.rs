use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::json;
use zcnas::archspace::{
    enumerate_isomer_groups, enumerate_isomers, flops_extrema, isomer_exemplar, isomer_key, params_extrema,
    resources, space_cardinality, ArchConfig, Metric, SearchSpaceSpec, DEFAULT_ENUMERATION_CAP,
};
use zcnas::autodiff::{Precision, Real};
use zcnas::io::{preferred_from_json, preferred_to_json, read_file, write_file, Checkpoint, RunConfig};
use zcnas::selector::{select_preferred, PreferredSpace};
use zcnas::supernet::{patchify, SupernetWeights};
use zcnas::trainer::{
    evaluate, load_image_folder, make_synthetic, pareto_frontier, train_one_shot, Dataset, DatasetSpec,
    EvalResult, Sampler, SamplerKind, TrainConfig,
};
use zcnas::zerocost::{compute_saliency, kendall_tau, mbr, SaliencyTable};

use crate::exit;
use crate::tables::{self, EvalRow, IsomerRow, ScoreRow};
use crate::{Cli, Command, Proxy, ProxyArgs};

struct Ctx {
    cfg: Option<RunConfig>,
    out: PathBuf,
    seed: u64,
    metric: Metric,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let g = &cli.global;
        let mut cfg = g.config.as_deref().map(RunConfig::load).transpose()?;
        let seed = g.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
        let metric = g.metric.or(cfg.as_ref().map(|c| c.select.metric)).unwrap_or_default();
        if let Some(c) = cfg.as_mut() {
            c.seed = seed;
            c.select.metric = metric;
        }
        let out = match (&g.out_dir, &cfg) {
            (Some(d), _) => d.clone(),
            (None, Some(c)) => {
                c.out_dir.as_deref().map(|d| c.resolve(d)).unwrap_or_else(|| c.resolve(Path::new("out")))
            }
            (None, None) => PathBuf::from("out"),
        };
        Ok(Self { cfg, out, seed, metric })
    }

    fn cfg(&self) -> Result<&RunConfig> {
        self.cfg.as_ref().ok_or_else(|| exit::config("this command needs --config"))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx::new(cli)?;
    match &cli.command {
        Command::Enumerate { space } => enumerate(&ctx, space.as_deref()),
        Command::Select => select(&ctx),
        Command::Train { preferred, init, steps, sampler } => {
            let cfg = ctx.cfg()?;
            let mut tc = cfg.train_config();
            tc.steps = steps.unwrap_or(tc.steps);
            tc.sampler = sampler.unwrap_or(tc.sampler);
            match cfg.precision {
                Precision::F32 => train::<f32>(&ctx, &tc, preferred.as_deref(), init.as_deref()),
                Precision::F64 => train::<f64>(&ctx, &tc, preferred.as_deref(), init.as_deref()),
            }
        }
        Command::Eval { checkpoint, preferred, archs, isomers } => {
            eval(&ctx, checkpoint.as_deref(), preferred.as_deref(), archs, *isomers)
        }
        Command::Pareto { input } => pareto(&ctx, input.as_deref()),
        Command::Kendall(args) => kendall(&ctx, args),
        Command::Mbr(args) => mean_best_rank(&ctx, args),
    }
}

fn space_arg(ctx: &Ctx, space: Option<&str>) -> Result<SearchSpaceSpec> {
    let Some(s) = space else {
        return Ok(ctx.cfg()?.space_spec()?);
    };
    let path = Path::new(s);
    if path.is_file() {
        return Ok(SearchSpaceSpec::load(path)?);
    }
    SearchSpaceSpec::preset(s)
        .ok_or_else(|| exit::config(format!("space `{s}` is neither a file nor a preset")))
}

fn datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let spec = cfg.space_spec()?;
    Ok(match &cfg.dataset {
        DatasetSpec::Synthetic(p) => make_synthetic(p)?,
        DatasetSpec::ImageFolder { train, eval } => (
            load_image_folder(&cfg.resolve(train), spec.image_resolution)?,
            load_image_folder(&cfg.resolve(eval), spec.image_resolution)?,
        ),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(write_file(path, s.as_bytes())?)
}

fn enumerate(ctx: &Ctx, space: Option<&str>) -> Result<()> {
    let spec = space_arg(ctx, space)?;
    let mut rows = Vec::new();
    for embed in spec.embed_choices() {
        for depth in spec.depth_choices() {
            for (key, count) in enumerate_isomer_groups(&spec, embed, depth)? {
                let r = resources(&isomer_exemplar(&spec, &key)?, &spec)?;
                rows.push(IsomerRow {
                    embed_dim: key.embed_dim,
                    depth: key.depth,
                    total_qkv_dim: key.total_qkv_dim,
                    total_mlp_ratio: key.total_mlp_ratio,
                    total_heads: key.total_heads,
                    count: count.to_string(),
                    params: r.params,
                    flops: r.flops,
                });
            }
        }
    }
    let (pmin, pmax) = params_extrema(&spec)?;
    let (fmin, fmax) = flops_extrema(&spec)?;
    let summary = format!(
        "architectures: {}\nisomer groups: {}\nparams: {pmin} .. {pmax}\nflops: {fmin} .. {fmax}\nspec hash: {}\n",
        space_cardinality(&spec),
        rows.len(),
        spec.hash().to_hex()
    );
    write_file(&ctx.path("isomers.csv"), &tables::to_csv(&rows)?)?;
    write_file(&ctx.path("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

fn select(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg()?;
    let spec = cfg.space_spec()?;
    let (train, _) = datasets(cfg)?;
    let weights = SupernetWeights::<f64>::init(&spec, ctx.seed)?;
    let idx: Vec<usize> = (0..cfg.select.saliency_batch.min(train.len())).collect();
    let (images, labels) = train.gather(&idx);
    let patches = patchify::<f64>(&images, idx.len(), train.channels, train.resolution, spec.patch_size)?;
    let table = compute_saliency(&weights, &patches, &labels)?;
    let ps = select_preferred(&table, &cfg.grid()?, cfg.select.n, ctx.metric)?;
    write_file(&ctx.path("preferred.json"), preferred_to_json(&ps).as_bytes())?;
    write_file(&ctx.path("preferred.csv"), &tables::preferred_csv(&ps)?)?;
    write_file(&ctx.path("saliency.ckpt"), &Checkpoint::from_saliency(&table).to_bytes())?;
    let empty = ps.buckets.iter().filter(|b| b.empty).count();
    println!(
        "{} buckets ({empty} empty), {} distinct members -> {}",
        ps.buckets.len(),
        ps.members().len(),
        ctx.path("preferred.json").display()
    );
    Ok(())
}

fn load_preferred(ctx: &Ctx, path: Option<&Path>, spec: &SearchSpaceSpec) -> Result<PreferredSpace> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| ctx.path("preferred.json"));
    if !path.is_file() {
        return Err(exit::data(format!(
            "preferred space {} not found; run `zcnas select` first",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(&path).with_context(|| path.display().to_string())?;
    preferred_from_json(&text, spec).with_context(|| path.display().to_string())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&read_file(path)?).with_context(|| path.display().to_string())
}

fn train<T: Real>(ctx: &Ctx, tc: &TrainConfig, preferred: Option<&Path>, init: Option<&Path>) -> Result<()> {
    let cfg = ctx.cfg()?;
    let spec = cfg.space_spec()?;
    let (data, _) = datasets(cfg)?;
    let ps = match tc.sampler {
        SamplerKind::UniformPreferred | SamplerKind::BalancedPreferred => {
            Some(load_preferred(ctx, preferred, &spec)?)
        }
        _ => None,
    };
    let sampler = Sampler::new(tc.sampler, &spec, ps.as_ref())?;
    let mut weights = match init {
        Some(p) => load_checkpoint(p)?.into_weights::<T>(&spec)?.0,
        None => SupernetWeights::<T>::init(&spec, ctx.seed)?,
    };
    let every = cfg.train.checkpoint_every;
    let log = train_one_shot(&mut weights, &sampler, tc, &data, |step, w| {
        let done = step + 1;
        if every > 0 && done % every == 0 && done < tc.steps {
            let path = ctx.path(&format!("checkpoints/step_{done:06}.ckpt"));
            write_file(&path, &Checkpoint::from_weights(w, done as u64).to_bytes())
                .map_err(|e| zcnas::trainer::TrainError::Data(e.to_string()))?;
        }
        Ok(())
    })?;
    write_file(&ctx.path("supernet.ckpt"), &Checkpoint::from_weights(&weights, tc.steps as u64).to_bytes())?;
    write_file(&ctx.path("steps.csv"), &tables::steps_csv(&log)?)?;
    if let Some(last) = log.last() {
        println!("trained {} steps, final loss {:.4}", log.len(), last.loss);
    } else {
        println!("trained 0 steps");
    }
    Ok(())
}

fn eval_all<T: Real>(
    ck: &Checkpoint,
    spec: &SearchSpaceSpec,
    archs: &[ArchConfig],
    data: &Dataset,
    batch: usize,
) -> Result<Vec<EvalResult>> {
    let (w, _) = ck.into_weights::<T>(spec)?;
    Ok(archs.par_iter().map(|a| evaluate(&w, a, data, batch)).collect::<Result<Vec<_>, _>>()?)
}

/// Up to `k` other members of `arch`'s isomer group, evenly spaced in enumeration order.
fn isomer_mates(spec: &SearchSpaceSpec, arch: &ArchConfig, k: usize) -> Result<Vec<ArchConfig>> {
    let mut mates = enumerate_isomers(spec, &isomer_key(arch), DEFAULT_ENUMERATION_CAP)?;
    mates.retain(|a| a != arch);
    let n = mates.len();
    Ok((0..k.min(n)).map(|i| mates[i * n / k.min(n)].clone()).collect())
}

fn eval(
    ctx: &Ctx,
    checkpoint: Option<&Path>,
    preferred: Option<&Path>,
    ids: &[String],
    isomers: usize,
) -> Result<()> {
    let cfg = ctx.cfg()?;
    let spec = cfg.space_spec()?;
    let mut archs: Vec<ArchConfig> = if ids.is_empty() {
        load_preferred(ctx, preferred, &spec)?.members().into_iter().map(|m| m.arch.clone()).collect()
    } else {
        ids.iter()
            .map(|id| {
                let a = ArchConfig::parse_id(id)
                    .ok_or_else(|| exit::config(format!("malformed arch id `{id}`")))?;
                a.validate(&spec)?;
                Ok(a)
            })
            .collect::<Result<_>>()?
    };
    if isomers > 0 {
        let mut seen: HashSet<String> = archs.iter().map(ArchConfig::id).collect();
        for a in archs.clone() {
            for m in isomer_mates(&spec, &a, isomers)? {
                if seen.insert(m.id()) {
                    archs.push(m);
                }
            }
        }
    }
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| ctx.path("supernet.ckpt"));
    let ck = load_checkpoint(&path)?;
    let (_, data) = datasets(cfg)?;
    let results = match ck.precision() {
        Some(Precision::F32) => eval_all::<f32>(&ck, &spec, &archs, &data, cfg.eval.batch_size)?,
        Some(Precision::F64) => eval_all::<f64>(&ck, &spec, &archs, &data, cfg.eval.batch_size)?,
        None => return Err(exit::data(format!("{}: mixed or missing precision", path.display()))),
    };
    write_file(&ctx.path("eval.csv"), &tables::to_csv(results.iter().map(EvalRow::from))?)?;
    let mean = results.iter().map(|r| r.top1).sum::<f64>() / results.len().max(1) as f64;
    println!("evaluated {} architectures, mean top-1 {mean:.4}", results.len());
    Ok(())
}

fn eval_rows(ctx: &Ctx, input: Option<&Path>) -> Result<Vec<EvalRow>> {
    let path = input.map(Path::to_path_buf).unwrap_or_else(|| ctx.path("eval.csv"));
    let rows: Vec<EvalRow> = tables::read_csv(&path)?;
    if rows.is_empty() {
        return Err(exit::data(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

fn pareto(ctx: &Ctx, input: Option<&Path>) -> Result<()> {
    let rows = eval_rows(ctx, input)?;
    let results: Vec<EvalResult> = rows.iter().map(EvalRow::to_result).collect();
    let front: Vec<EvalRow> = pareto_frontier(&results, ctx.metric).iter().map(EvalRow::from).collect();
    write_json(&ctx.path("pareto.json"), &json!({ "metric": ctx.metric, "frontier": front }))?;
    print!("{}", String::from_utf8(tables::to_csv(&front)?)?);
    Ok(())
}

fn parse_arch(id: &str) -> Result<ArchConfig> {
    ArchConfig::parse_id(id).ok_or_else(|| exit::data(format!("malformed arch id `{id}`")))
}

/// `(arch, proxy score, accuracy)`.
type Scored = (ArchConfig, f64, f64);

/// Proxy name and one scored point per eval row.
fn scored(ctx: &Ctx, args: &ProxyArgs) -> Result<(String, Vec<Scored>)> {
    let rows = eval_rows(ctx, args.input.as_deref())?;
    if let Some(path) = &args.scores {
        let scores: HashMap<String, f64> =
            tables::read_csv::<ScoreRow>(path)?.into_iter().map(|r| (r.arch_id, r.score)).collect();
        let out = rows
            .iter()
            .map(|r| {
                let s = scores.get(&r.arch_id).ok_or_else(|| {
                    exit::data(format!("{} has no score for {}", path.display(), r.arch_id))
                })?;
                Ok((parse_arch(&r.arch_id)?, *s, r.top1))
            })
            .collect::<Result<_>>()?;
        return Ok((path.display().to_string(), out));
    }
    let spec = ctx.cfg()?.space_spec()?;
    let path = args.saliency.clone().unwrap_or_else(|| ctx.path("saliency.ckpt"));
    let table: SaliencyTable = load_checkpoint(&path)?.into_saliency(&spec)?;
    let out = rows
        .iter()
        .map(|r| {
            let a = parse_arch(&r.arch_id)?;
            let s = match args.proxy {
                Proxy::Snip => table.snip_score(&a)?,
                Proxy::SnipNorm => table.snip_norm_score(&a)?,
            };
            Ok((a, s, r.top1))
        })
        .collect::<Result<_>>()?;
    let name = match args.proxy {
        Proxy::Snip => "snip",
        Proxy::SnipNorm => "snip-norm",
    };
    Ok((name.to_string(), out))
}

fn kendall(ctx: &Ctx, args: &ProxyArgs) -> Result<()> {
    let (proxy, pts) = scored(ctx, args)?;
    let xs: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.2).collect();
    let tau = kendall_tau(&xs, &ys)?;
    write_json(&ctx.path("kendall.json"), &json!({ "proxy": proxy, "n": pts.len(), "tau": tau }))?;
    println!("kendall tau {tau:.6} over {} architectures ({proxy})", pts.len());
    Ok(())
}

fn mean_best_rank(ctx: &Ctx, args: &ProxyArgs) -> Result<()> {
    let (proxy, pts) = scored(ctx, args)?;
    let mut groups: BTreeMap<_, Vec<(f64, f64)>> = BTreeMap::new();
    for (a, s, acc) in &pts {
        groups.entry(isomer_key(a)).or_default().push((*s, *acc));
    }
    let total = groups.len();
    let usable: Vec<Vec<(f64, f64)>> = groups.into_values().filter(|g| g.len() >= 2).collect();
    if usable.is_empty() {
        return Err(exit::data("no isomer group has two or more evaluated members"));
    }
    let value = mbr(&usable)?;
    write_json(
        &ctx.path("mbr.json"),
        &json!({ "proxy": proxy, "groups": usable.len(), "skipped": total - usable.len(), "mbr": value }),
    )?;
    println!("mBR {value:.6} over {} isomer groups ({proxy})", usable.len());
    Ok(())
}
