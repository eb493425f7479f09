use std::path::{Path, PathBuf};

use dld_core::fmt_num;
use dld_core::geometry::{load_point_set, save_point_set, PointFormat};
use dld_core::gmicp::GmConfig;
use dld_core::harness::{
    bench_scaling, cloud_shapes, contour_shapes, corrupt_with_truth, loglog_slope, run_trials, sample_ground_truth,
    success_grid, surface_shapes, train_model, BenchSpec, Corruption, CorruptionSpec, GridSpec, Method, TargetRanges,
};
use dld_core::solver::{DldConfig, GammaScaling, ModePolicy};
use dld_core::ssm::{load_model, save_model};
use dld_core::{PointSet, ShapeModel};

use crate::params::{flag, key, Key, Params, REQUIRED};
use crate::CliError;

pub const DLD_KEYS: [Key; 14] = [
    key("omega", "0.01", "outlier probability"),
    key("gamma", "0.001", "initial shape regularization weight"),
    key("gamma-final", "0", "regularization weight once near convergence"),
    key("gamma-trigger", "10", "switch gamma when the improvement drops below this times tol"),
    key("gamma-scaling", "literal", "literal or variance (weight times 2 sigma2)"),
    key("k", "none", "number of shape variations used, none for all"),
    key("nystrom-samples", "500", "Nystrom sample count L"),
    key("tol", "0.0001", "relative objective improvement at which EM stops"),
    key("max-iters", "1000", "iteration cap"),
    key("sigma2-floor", "none", "lower bound on sigma2, none for 1e-8 diameter^2"),
    key("cutoff-mult", "5", "truncation radius in units of sigma"),
    key("mode", "auto", "E-step engine: auto, dense, nystrom or truncated"),
    key("seed", "0", "seed of the Nystrom sampling"),
    key("resample", "true", "draw new Nystrom samples every E-step"),
];

pub const GM_KEYS: [Key; 4] = [
    key("mu", "0.0001", "Geman-McClure scale"),
    key("gm-gamma", "0", "Tikhonov weight of the baseline"),
    key("gm-tol", "0.0001", "relative energy improvement at which the baseline stops"),
    key("gm-max-iters", "1000", "baseline iteration cap"),
];

pub const CORRUPT_KEYS: [Key; 10] = [
    key("kind", "none", "none, replicate, delete, outliers, rotate or translate"),
    key("copies", "20", "replicate: copies per point"),
    key("noise", "0.01", "replicate: standard deviation of the copies"),
    key("rate", "0.2", "delete: probability of dropping a point"),
    key("snr", "1", "outliers: inlier to outlier count ratio"),
    flag("inverted", "outliers: read snr as outlier to inlier ratio"),
    key("bbox", "none", "outliers: box lo1,..,loD,hi1,..,hiD, none for the target's box"),
    key("angle", "0", "rotate: angle in radians about the centroid"),
    key("axis", "none", "rotate: axis x,y,z for 3D sets"),
    key("offset", "none", "translate: offset vector"),
];

pub struct Spec {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: Vec<Key>,
    pub run: fn(&Params) -> Result<(), CliError>,
}

fn with(own: &[Key], groups: &[&[Key]]) -> Vec<Key> {
    own.iter().chain(groups.iter().flat_map(|g| g.iter())).copied().collect()
}

pub fn all() -> Vec<Spec> {
    vec![
        Spec {
            name: "synth",
            about: "Write a synthetic training corpus",
            keys: vec![
                key("kind", "contour", "contour, cloud or surface"),
                key("count", "40", "number of shapes"),
                key("landmarks", "56", "landmarks per shape"),
                key("seed", "0", "corpus seed"),
                key("out", REQUIRED, "output directory"),
            ],
            run: synth,
        },
        Spec {
            name: "sample",
            about: "Draw a noiseless target from a model with known weights and pose",
            keys: vec![
                key("model", REQUIRED, "model file"),
                key("sd-bound", "2", "each weight within this many standard deviations"),
                key("max-angle", "0.6283185307179586", "largest rotation angle"),
                key("max-offset", "0.25", "largest translation per axis, as a fraction of the diameter"),
                key("max-scale", "1", "scale drawn from [1/max-scale, max-scale]"),
                key("seed", "0", "sampling seed"),
                key("out", REQUIRED, "output point set"),
            ],
            run: sample,
        },
        Spec {
            name: "train",
            about: "Train a shape model from corresponding shapes",
            keys: vec![
                key("corpus", REQUIRED, "directory of shape files, or a manifest listing them"),
                key("k", "10", "requested number of shape variations"),
                key("sweeps", "5", "generalized Procrustes sweeps"),
                key("exclude", "none", "zero-based index of a shape to leave out"),
                key("format", "auto", "shape file format: auto, text, csv or ply"),
                key("out", REQUIRED, "model file"),
            ],
            run: train,
        },
        Spec {
            name: "register",
            about: "Register a shape model to a target point set",
            keys: with(
                &[
                    key("model", REQUIRED, "model file"),
                    key("target", REQUIRED, "target point set"),
                    key("method", "dld", "dld or gm-icp"),
                    key("out", REQUIRED, "output prefix"),
                ],
                &[&DLD_KEYS, &GM_KEYS],
            ),
            run: register,
        },
        Spec {
            name: "corrupt",
            about: "Apply a corruption to a point set",
            keys: with(
                &[
                    key("input", REQUIRED, "point set"),
                    key("corruption-seed", "0", "seed of the corruption"),
                    key("out", REQUIRED, "output point set"),
                    key("truth-out", "none", "also write the input moved by the rigid stages"),
                ],
                &[&CORRUPT_KEYS],
            ),
            run: corrupt_cmd,
        },
        Spec {
            name: "evaluate",
            about: "Score registrations of corrupted copies of a ground truth",
            keys: with(
                &[
                    key("model", REQUIRED, "model file"),
                    key("truth", REQUIRED, "ground-truth point set in landmark order"),
                    key("trials", "20", "corruption seeds per value"),
                    key("corruption-seed", "0", "seed of the first trial"),
                    key("sweep", "none", "values of the corruption's main parameter"),
                    key("threshold", "0.05", "success distance"),
                    key("baseline", "none", "none or gm-icp"),
                    key("out", REQUIRED, "CSV of trial records"),
                ],
                &[&CORRUPT_KEYS, &DLD_KEYS, &GM_KEYS],
            ),
            run: evaluate,
        },
        Spec {
            name: "grid",
            about: "Success counts over rotation and translation combinations",
            keys: with(
                &[
                    key("model", REQUIRED, "model file"),
                    key("truth", REQUIRED, "ground-truth point set in landmark order"),
                    key("angles", "-1.0471975511965976:1.0471975511965976:11", "angles, list or lo:hi:count"),
                    key("translations", "-0.5:0.5:11", "translation distances, list or lo:hi:count"),
                    key("direction", "none", "translation direction, none for the first axis"),
                    key("axis", "none", "rotation axis x,y,z for 3D sets"),
                    key("threshold", "0.05", "success distance"),
                    key("grid-seed", "0", "seed of the cell seeds"),
                    key("method", "dld", "dld or gm-icp"),
                    key("out", REQUIRED, "CSV of cells"),
                ],
                &[&DLD_KEYS, &GM_KEYS],
            ),
            run: grid,
        },
        Spec {
            name: "bench",
            about: "Time registrations over growing subsample sizes",
            keys: with(
                &[
                    key("model", REQUIRED, "model file"),
                    key("target", "none", "target point set, none for the mean shape"),
                    key("sizes", "1250,2500,5000,10000", "subsample sizes"),
                    key("modes", "dense,nystrom", "E-step policies to time"),
                    key("repetitions", "1", "repetitions per size"),
                    key("bench-seed", "0", "seed of the subsampling"),
                    key("out", REQUIRED, "CSV of timings"),
                ],
                &[&DLD_KEYS],
            ),
            run: bench,
        },
    ]
}

fn path(p: &Params, name: &str) -> PathBuf {
    PathBuf::from(p.str(name))
}

/// `<out>.config`, the echo written beside a file output.
fn echo_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config");
    PathBuf::from(s)
}

fn format_for(p: &Params, file: &Path) -> Result<PointFormat, CliError> {
    match p.str("format") {
        "auto" => Ok(PointFormat::from_path(file)),
        other => other.parse().map_err(|e: dld_core::Error| CliError::Usage(e.to_string())),
    }
}

fn read_points(file: &Path) -> Result<PointSet, CliError> {
    load_point_set(file, PointFormat::from_path(file)).map_err(|e| CliError::Context(file.display().to_string(), e))
}

fn read_model(file: &Path) -> Result<ShapeModel, CliError> {
    load_model(file).map_err(|e| CliError::Context(file.display().to_string(), e))
}

pub fn dld_config(p: &Params) -> Result<DldConfig, CliError> {
    let gamma_scaling = match p.str("gamma-scaling").to_ascii_lowercase().as_str() {
        "literal" => GammaScaling::Literal,
        "variance" => GammaScaling::Variance,
        other => return Err(CliError::Usage(format!("--gamma-scaling: unknown value '{other}'"))),
    };
    let mode: ModePolicy = p.str("mode").parse().map_err(|e: dld_core::Error| CliError::Usage(e.to_string()))?;
    let config = DldConfig {
        omega: p.get("omega")?,
        gamma: p.get("gamma")?,
        gamma_final: p.get("gamma-final")?,
        gamma_trigger: p.get("gamma-trigger")?,
        gamma_scaling,
        k_used: p.opt("k")?,
        nystrom_samples: p.get("nystrom-samples")?,
        tol: p.get("tol")?,
        max_iters: p.get("max-iters")?,
        sigma2_floor: p.opt("sigma2-floor")?,
        cutoff_mult: p.get("cutoff-mult")?,
        mode,
        seed: p.get("seed")?,
        resample_each_step: p.get("resample")?,
        ..DldConfig::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

pub fn gm_config(p: &Params) -> Result<GmConfig, CliError> {
    let config = GmConfig {
        mu: p.get("mu")?,
        k_used: p.opt("k")?,
        gamma: p.get("gm-gamma")?,
        tol: p.get("gm-tol")?,
        max_iters: p.get("gm-max-iters")?,
        ..GmConfig::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn method(p: &Params, name: &str) -> Result<Method, CliError> {
    match name {
        "dld" => Ok(Method::Dld(dld_config(p)?)),
        "gm-icp" => Ok(Method::GmIcp(gm_config(p)?)),
        other => Err(CliError::Usage(format!("unknown method '{other}', expected dld or gm-icp"))),
    }
}

/// The corruption from [`CORRUPT_KEYS`]; `value` overrides the main
/// parameter of the kind.
pub fn corruption(p: &Params, value: Option<f64>) -> Result<Corruption, CliError> {
    let c = match p.str("kind") {
        "none" => {
            if value.is_some() {
                return Err(CliError::Usage("kind none has no parameter to sweep".into()));
            }
            Corruption::Compose { stages: vec![] }
        }
        "replicate" => {
            Corruption::Replicate { copies: p.get("copies")?, noise: value.map_or_else(|| p.get("noise"), Ok)? }
        }
        "delete" => Corruption::Delete { rate: value.map_or_else(|| p.get("rate"), Ok)? },
        "outliers" => {
            let bbox = match p.opt::<String>("bbox")? {
                None => None,
                Some(_) => {
                    let v: Vec<f64> = p.list("bbox")?;
                    if v.len() % 2 != 0 || v.is_empty() {
                        return Err(CliError::Usage("--bbox needs 2D numbers lo..., hi...".into()));
                    }
                    let d = v.len() / 2;
                    Some(dld_core::BoundingBox { lo: v[..d].to_vec(), hi: v[d..].to_vec() })
                }
            };
            Corruption::Outliers { snr: value.map_or_else(|| p.get("snr"), Ok)?, bbox, inverted: p.get("inverted")? }
        }
        "rotate" => Corruption::Rotate { angle: value.map_or_else(|| p.get("angle"), Ok)?, axis: axis(p)? },
        "translate" => {
            if value.is_some() {
                return Err(CliError::Usage("translate has no scalar parameter to sweep".into()));
            }
            if p.opt::<String>("offset")?.is_none() {
                return Err(CliError::Usage("translate needs --offset".into()));
            }
            Corruption::Translate { offset: p.list("offset")? }
        }
        other => return Err(CliError::Usage(format!("unknown corruption kind '{other}'"))),
    };
    c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(c)
}

fn axis(p: &Params) -> Result<Option<[f64; 3]>, CliError> {
    if p.opt::<String>("axis")?.is_none() {
        return Ok(None);
    }
    let v: Vec<f64> = p.list("axis")?;
    let a: [f64; 3] = v.try_into().map_err(|_| CliError::Usage("--axis needs three numbers".into()))?;
    Ok(Some(a))
}

fn write_csv(file: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Core(std::io::Error::other(e).into());
    let mut w = csv::Writer::from_path(file).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Core(e.into()))
}

fn opt_num(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn synth(p: &Params) -> Result<(), CliError> {
    let (count, landmarks, seed): (usize, usize, u64) = (p.get("count")?, p.get("landmarks")?, p.get("seed")?);
    let shapes = match p.str("kind") {
        "contour" => contour_shapes(count, landmarks, seed),
        "cloud" => cloud_shapes(count, landmarks, seed),
        "surface" => surface_shapes(count, landmarks, seed),
        other => return Err(CliError::Usage(format!("unknown corpus kind '{other}'"))),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let out = path(p, "out");
    std::fs::create_dir_all(&out).map_err(|e| CliError::Core(e.into()))?;
    for (i, s) in shapes.iter().enumerate() {
        save_point_set(&out.join(format!("shape_{i:03}.txt")), s, PointFormat::Text)?;
    }
    p.write_echo(&out.join("synth.config"))?;
    println!("wrote {} shapes of {} landmarks to {}", shapes.len(), landmarks, out.display());
    Ok(())
}

/// Corpus files: a directory's point files in name order, or the lines of
/// a manifest relative to its directory.
fn corpus_files(corpus: &Path) -> Result<Vec<PathBuf>, CliError> {
    let io = |e: std::io::Error| CliError::Context(corpus.display().to_string(), e.into());
    if corpus.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(corpus)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|f| {
                f.is_file()
                    && matches!(
                        f.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                        Some("txt" | "csv" | "ply" | "xyz" | "pts")
                    )
            })
            .collect();
        files.sort();
        Ok(files)
    } else {
        let text = std::fs::read_to_string(corpus).map_err(io)?;
        let base = corpus.parent().unwrap_or(Path::new("."));
        Ok(text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| base.join(l))
            .collect())
    }
}

fn train(p: &Params) -> Result<(), CliError> {
    let mut files = corpus_files(&path(p, "corpus"))?;
    if let Some(i) = p.opt::<usize>("exclude")? {
        if i >= files.len() {
            return Err(CliError::Usage(format!("--exclude {i} but the corpus has {} shapes", files.len())));
        }
        files.remove(i);
    }
    let shapes = files
        .iter()
        .map(|f| {
            let format = format_for(p, f)?;
            load_point_set(f, format).map_err(|e| CliError::Context(f.display().to_string(), e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (model, report) = train_model(&shapes, p.get("k")?, p.get("sweeps")?)?;
    if report.clamped {
        eprintln!("warning: K clamped from {} to {} by the rank of the corpus", report.requested, report.achieved);
    }
    let out = path(p, "out");
    save_model(&model, &out)?;
    p.write_echo(&echo_path(&out))?;
    let l = model.eigenvalues();
    let total: f64 = l.iter().sum::<f64>() + report.discarded_energy;
    println!(
        "trained K = {} from {} shapes, M = {}, D = {}",
        model.modes(),
        shapes.len(),
        model.landmarks(),
        model.dim()
    );
    println!("eigenvalues: {}", l.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(" "));
    if total > 0.0 {
        println!("explained variance fraction: {}", fmt_num(l.iter().sum::<f64>() / total));
    }
    Ok(())
}

fn sample(p: &Params) -> Result<(), CliError> {
    use rand::SeedableRng;
    let model = read_model(&path(p, "model"))?;
    let ranges = TargetRanges {
        sd_bound: p.get("sd-bound")?,
        max_angle: p.get("max-angle")?,
        max_offset: p.get("max-offset")?,
        max_scale: p.get("max-scale")?,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(p.get("seed")?);
    let g = sample_ground_truth(&model, &ranges, &mut rng)?;
    let out = path(p, "out");
    save_point_set(&out, &g.points, PointFormat::from_path(&out))?;
    let t = &g.transform;
    let nums = |v: &mut dyn Iterator<Item = f64>| v.map(fmt_num).collect::<Vec<_>>().join(" ");
    let mut truth = String::new();
    truth.push_str(&format!("scale = {}\n", fmt_num(t.scale)));
    truth.push_str(&format!("rotation = {}\n", nums(&mut t.rotation.transpose().iter().copied())));
    truth.push_str(&format!("translation = {}\n", nums(&mut t.translation.iter().copied())));
    truth.push_str(&format!("z = {}\n", nums(&mut g.z.iter().copied())));
    let mut truth_path = out.as_os_str().to_owned();
    truth_path.push(".truth.txt");
    std::fs::write(truth_path, truth).map_err(|e| CliError::Core(e.into()))?;
    p.write_echo(&echo_path(&out))?;
    println!("mean-shape diameter {}", fmt_num(model.mean_shape().diameter()));
    Ok(())
}

fn register(p: &Params) -> Result<(), CliError> {
    let model = read_model(&path(p, "model"))?;
    let target_path = path(p, "target");
    let x = read_points(&target_path)?;
    let m = method(p, p.str("method"))?;
    let r = m.register(&model, &x)?;
    let out = p.str("out");
    let ext = target_path.extension().and_then(|e| e.to_str()).unwrap_or("txt");
    let deformed_path = PathBuf::from(format!("{out}.deformed.{ext}"));
    save_point_set(&deformed_path, &r.deformed, PointFormat::from_path(&target_path))?;

    let mut corr = String::new();
    for (n, c) in r.correspondence.iter().enumerate() {
        corr.push_str(&format!("{n} {} {}\n", c.source, fmt_num(c.probability)));
    }
    std::fs::write(format!("{out}.corr.txt"), corr).map_err(|e| CliError::Core(e.into()))?;

    let nums = |v: &mut dyn Iterator<Item = f64>| v.map(fmt_num).collect::<Vec<_>>().join(" ");
    let t = &r.transform;
    let mut report = String::new();
    report.push_str(&format!("method = {}\n", m.name()));
    report.push_str(&format!("iterations = {}\nconverged = {}\n", r.iterations, r.converged));
    report.push_str(&format!("sigma2 = {}\n", fmt_num(r.sigma2)));
    report.push_str(&format!("scale = {}\n", fmt_num(t.scale)));
    report.push_str(&format!("rotation = {}\n", nums(&mut t.rotation.transpose().iter().copied())));
    report.push_str(&format!("translation = {}\n", nums(&mut t.translation.iter().copied())));
    report.push_str(&format!("z = {}\n", nums(&mut r.z.iter().copied())));
    report.push_str(&format!("final_objective = {}\n", opt_num(r.nll_trace.last().copied())));
    report.push_str(&format!(
        "estep_modes = dense {} nystrom {} truncated {}\n",
        r.modes.dense, r.modes.nystrom, r.modes.truncated
    ));
    std::fs::write(format!("{out}.report.txt"), report).map_err(|e| CliError::Core(e.into()))?;

    let rows: Vec<Vec<String>> = r
        .nll_trace
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let g = i.checked_sub(1).and_then(|j| r.gamma_trace.get(j)).copied();
            vec![i.to_string(), fmt_num(*v), opt_num(g)]
        })
        .collect();
    write_csv(Path::new(&format!("{out}.trace.csv")), &["iteration", "objective", "gamma"], &rows)?;
    p.write_echo(Path::new(&format!("{out}.config")))?;
    println!("{}: {} iterations, converged {}, sigma2 {}", m.name(), r.iterations, r.converged, fmt_num(r.sigma2));
    Ok(())
}

fn corrupt_cmd(p: &Params) -> Result<(), CliError> {
    let input = path(p, "input");
    let x = read_points(&input)?;
    let spec = CorruptionSpec { corruption: corruption(p, None)?, seed: p.get("corruption-seed")? };
    let (y, truth) = corrupt_with_truth(&x, &spec)?;
    let out = path(p, "out");
    save_point_set(&out, &y, PointFormat::from_path(&out))?;
    if let Some(t) = p.opt::<PathBuf>("truth-out")? {
        save_point_set(&t, &truth, PointFormat::from_path(&t))?;
    }
    p.write_echo(&echo_path(&out))?;
    println!("{} points in, {} points out", x.len(), y.len());
    Ok(())
}

fn evaluate(p: &Params) -> Result<(), CliError> {
    let model = read_model(&path(p, "model"))?;
    let truth = read_points(&path(p, "truth"))?;
    let trials: u64 = p.get("trials")?;
    let base: u64 = p.get("corruption-seed")?;
    let threshold: f64 = p.get("threshold")?;
    let values: Vec<Option<f64>> = match p.opt::<String>("sweep")? {
        None => vec![None],
        Some(_) => p.list::<f64>("sweep")?.into_iter().map(Some).collect(),
    };
    let mut methods = vec![Method::Dld(dld_config(p)?)];
    match p.str("baseline") {
        "none" => {}
        "gm-icp" => methods.push(Method::GmIcp(gm_config(p)?)),
        other => return Err(CliError::Usage(format!("unknown baseline '{other}'"))),
    }
    let mut rows = Vec::new();
    for v in &values {
        let c = corruption(p, *v)?;
        let jobs: Vec<(PointSet, CorruptionSpec)> =
            (0..trials).map(|i| (truth.clone(), CorruptionSpec { corruption: c.clone(), seed: base + i })).collect();
        for m in &methods {
            let records = run_trials(&model, &jobs, m, threshold)?;
            let wins = records.iter().filter(|r| r.success).count();
            let acc = dld_core::harness::mean_accuracy(&records);
            println!(
                "{} value {}: mean accuracy {}, {wins}/{} successes",
                m.name(),
                opt_num(*v),
                fmt_num(acc),
                records.len()
            );
            for (i, r) in records.iter().enumerate() {
                rows.push(vec![
                    m.name().to_string(),
                    opt_num(*v),
                    i.to_string(),
                    r.spec.seed.to_string(),
                    fmt_num(r.accuracy),
                    r.success.to_string(),
                    fmt_num(r.max_error),
                    r.iterations.to_string(),
                    r.converged.to_string(),
                    r.error.clone().unwrap_or_default(),
                ]);
            }
        }
    }
    let out = path(p, "out");
    let header =
        ["method", "value", "trial", "seed", "accuracy", "success", "max_error", "iterations", "converged", "error"];
    write_csv(&out, &header, &rows)?;
    p.write_echo(&echo_path(&out))
}

fn grid(p: &Params) -> Result<(), CliError> {
    let model = read_model(&path(p, "model"))?;
    let truth = read_points(&path(p, "truth"))?;
    let spec = GridSpec {
        angles: p.range("angles")?,
        translations: p.range("translations")?,
        direction: match p.opt::<String>("direction")? {
            None => None,
            Some(_) => Some(p.list("direction")?),
        },
        axis: axis(p)?,
        threshold: p.get("threshold")?,
        seed: p.get("grid-seed")?,
    };
    let m = method(p, p.str("method"))?;
    let g = success_grid(&model, &truth, &spec, &m)?;
    let rows: Vec<Vec<String>> = g
        .cells
        .iter()
        .map(|c| {
            vec![
                c.row.to_string(),
                c.col.to_string(),
                fmt_num(c.angle),
                fmt_num(c.translation),
                c.success.to_string(),
                fmt_num(c.accuracy),
                fmt_num(c.max_error),
                c.iterations.to_string(),
                c.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let out = path(p, "out");
    let header = ["row", "col", "angle", "translation", "success", "accuracy", "max_error", "iterations", "error"];
    write_csv(&out, &header, &rows)?;
    p.write_echo(&echo_path(&out))?;
    let wins = g.cells.iter().filter(|c| c.success).count();
    println!("{}: {wins}/{} cells succeeded", m.name(), g.cells.len());
    Ok(())
}

fn bench(p: &Params) -> Result<(), CliError> {
    let model = read_model(&path(p, "model"))?;
    let x = match p.opt::<PathBuf>("target")? {
        None => model.mean_shape(),
        Some(t) => read_points(&t)?,
    };
    let modes = p
        .list::<String>("modes")?
        .iter()
        .map(|s| s.parse::<ModePolicy>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = BenchSpec {
        sizes: p.list("sizes")?,
        modes: modes.clone(),
        repetitions: p.get("repetitions")?,
        seed: p.get("bench-seed")?,
    };
    let rows = bench_scaling(&model, &x, &spec, &dld_config(p)?)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.size.to_string(),
                r.mode.to_string(),
                r.repetition.to_string(),
                fmt_num(r.total_secs),
                fmt_num(r.per_iter_secs),
                opt_num(r.nystrom_iter_secs),
                r.iterations.to_string(),
                r.converged.to_string(),
            ]
        })
        .collect();
    let out = path(p, "out");
    let header =
        ["size", "mode", "repetition", "total_secs", "per_iter_secs", "nystrom_iter_secs", "iterations", "converged"];
    write_csv(&out, &header, &table)?;
    p.write_echo(&echo_path(&out))?;
    for mode in modes {
        let sel: Vec<_> = rows.iter().filter(|r| r.mode == mode).collect();
        let xs: Vec<f64> = sel.iter().map(|r| r.size as f64).collect();
        let ys: Vec<f64> = sel.iter().map(|r| r.per_iter_secs).collect();
        match loglog_slope(&xs, &ys) {
            Ok(s) => println!("{mode}: per-iteration log-log slope {s:.3}"),
            Err(e) => println!("{mode}: no slope ({e})"),
        }
    }
    Ok(())
}
