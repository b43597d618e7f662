use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use l3unet::accel::{folding_comparison, folding_comparison_text, graph_cost_report, AcceleratorSpec};
use l3unet::arch::{build_l3unet, randomize_weights, report_architecture, ArchConfig};
use l3unet::eval::crop::{aisegment_crops, overlap_crop, AISEGMENT_OFFSETS, CROP_SIZE};
use l3unet::eval::{read_image, ClassMap, ConfusionMatrix, Raster};
use l3unet::nn::{run_graph, ExecMode, LayerKind, ModelGraph, QuantSpec, WeightFile};
use l3unet::tensor::TENSOR_MAGIC;
use l3unet::verify::{run_verification, VerifyOptions};
use l3unet::{fold, unfold, Error, FoldSpec, Shape, Tensor};

#[derive(Parser)]
#[command(name = "l3unet", version, about = "Folded tiny U-net toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Space-to-depth fold of an L3UT tensor or PPM image.
    Fold(FoldArgs),
    /// Inverse of `fold`.
    Unfold(FoldArgs),
    /// Write a seeded random float weight file for a model config.
    InitWeights {
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Segment images; a directory input processes every image in it.
    Infer(InferArgs),
    /// Randomized checks of folding, transposed conv and batchnorm fusion.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        cases: usize,
        /// Where the first counterexample is written.
        #[arg(long, default_value = "verify-counterexample")]
        dump_dir: PathBuf,
        #[arg(long, hide = true)]
        corrupt_kernel_order: bool,
    },
    /// Per-layer MAC distribution over a channel-parallel accelerator.
    Cost {
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        processors: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Layer table with shapes, parameters and MACs.
    Report {
        #[arg(long)]
        model_config: Option<PathBuf>,
    },
    /// Confusion-matrix metrics over prediction/ground-truth label images.
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Cut dataset images and label masks into 352x352 crops.
    Crop(CropArgs),
}

#[derive(clap::Args)]
struct FoldArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 4)]
    alpha: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Float,
    Quant,
}

#[derive(clap::Args)]
struct InferArgs {
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Class-map PGM, or a directory when `--input` is one.
    #[arg(long)]
    output: PathBuf,
    /// Raw model output as L3UT (directory input: one file per image).
    #[arg(long)]
    logits: Option<PathBuf>,
    /// Per-class pixel counts.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Quant)]
    mode: Mode,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Dataset {
    Camvid,
    Aisegment,
}

#[derive(clap::Args)]
struct CropArgs {
    #[arg(long, value_enum)]
    dataset: Dataset,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Overlap fraction between neighbouring crops (camvid only).
    #[arg(long, default_value_t = 0.4)]
    overlap: f64,
    /// Also fold each image crop by this factor and write it as L3UT.
    #[arg(long)]
    fold: Option<usize>,
}

/// Failure with a fixed exit status that is not tied to a library error.
#[derive(Debug)]
struct Exit {
    code: u8,
    message: String,
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Exit>() {
        return e.code;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_divisibility() => 2,
        Some(Error::WeightBinding(_) | Error::Graph(_)) => 3,
        Some(
            Error::InvalidShape(_)
            | Error::ChannelMismatch { .. }
            | Error::SpatialMismatch { .. }
            | Error::NonIntegralOutput { .. }
            | Error::NonPositiveOutput { .. }
            | Error::ImageTooSmall { .. },
        ) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("L3U_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<u8> {
    match cmd {
        Command::Fold(a) => cmd_fold(&a, true),
        Command::Unfold(a) => cmd_fold(&a, false),
        Command::InitWeights { model_config, seed, output } => {
            let cfg = load_config(model_config.as_deref())?;
            require_parent(&output)?;
            let mut g = build_l3unet(&cfg)?;
            randomize_weights(&mut g, seed)?;
            WeightFile::from_graph(&g).save(&output)?;
            Ok(0)
        }
        Command::Infer(a) => cmd_infer(&a),
        Command::Verify { seed, cases, dump_dir, corrupt_kernel_order } => {
            cmd_verify(VerifyOptions { seed, cases, corrupt_kernel_order }, &dump_dir)
        }
        Command::Cost { model_config, processors, csv } => {
            let cfg = load_config(model_config.as_deref())?;
            if let Some(p) = &csv {
                require_parent(p)?;
            }
            cmd_cost(&cfg, processors, csv.as_deref())
        }
        Command::Report { model_config } => {
            let g = build_l3unet(&load_config(model_config.as_deref())?)?;
            print!("{}", report_architecture(&g)?);
            Ok(0)
        }
        Command::Eval { pred_dir, gt_dir, classes, csv } => cmd_eval(&pred_dir, &gt_dir, classes, csv.as_deref()),
        Command::Crop(a) => cmd_crop(&a),
    }
}

fn require_file(p: &Path) -> anyhow::Result<()> {
    if !p.is_file() {
        bail!("input file {} does not exist", p.display());
    }
    Ok(())
}

fn require_dir(p: &Path) -> anyhow::Result<()> {
    if !p.is_dir() {
        bail!("directory {} does not exist", p.display());
    }
    Ok(())
}

fn require_parent(p: &Path) -> anyhow::Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => bail!("output directory {} does not exist", d.display()),
        _ => Ok(()),
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ArchConfig> {
    match path {
        Some(p) => {
            require_file(p)?;
            Ok(ArchConfig::load(p).with_context(|| format!("reading {}", p.display()))?)
        }
        None => Ok(ArchConfig::default()),
    }
}

/// Regular files in `dir`, sorted by name.
fn list_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write_tensor(t: &Tensor, path: &Path) -> anyhow::Result<()> {
    fs::write(path, t.to_bytes()).with_context(|| format!("writing {}", path.display()))
}

/// L3UT tensors load as stored; images become int8 via `v - 128`.
fn read_tensor_or_image(path: &Path) -> anyhow::Result<Tensor> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(TENSOR_MAGIC) {
        return Ok(Tensor::from_bytes(&bytes)?);
    }
    Ok(l3unet::eval::image::decode_image(&bytes)?.to_tensor_i8())
}

fn cmd_fold(a: &FoldArgs, forward: bool) -> anyhow::Result<u8> {
    require_file(&a.input)?;
    require_parent(&a.output)?;
    let x = read_tensor_or_image(&a.input)?;
    let spec = FoldSpec::new(a.alpha)?;
    let y = if forward { fold(&x, spec)? } else { unfold(&x, spec)? };
    write_tensor(&y, &a.output)?;
    println!("{} -> {}", x.shape(), y.shape());
    Ok(0)
}

fn load_model(a: &InferArgs) -> anyhow::Result<(ArchConfig, ModelGraph, ExecMode)> {
    let cfg = load_config(a.model_config.as_deref())?;
    require_file(&a.weights)?;
    let mut g = build_l3unet(&cfg)?;
    WeightFile::load(&a.weights)?.bind(&mut g)?;
    let q = QuantSpec::default();
    Ok(match a.mode {
        Mode::Float => (cfg, g.dequantized(&q), ExecMode::Float),
        Mode::Quant => (cfg, g.quantized(&q), ExecMode::Quantized),
    })
}

/// Runs one image and returns the per-pixel class map and raw output.
fn segment(g: &ModelGraph, cfg: &ArchConfig, mode: ExecMode, image: &Raster) -> anyhow::Result<(ClassMap, Tensor)> {
    let want = Shape::new(cfg.input_channels, cfg.input_hw, cfg.input_hw);
    if (image.channels, image.height, image.width) != (want.channels, want.height, want.width) {
        return Err(Error::InvalidShape(format!(
            "model expects a {}x{} image with {} channels, got {}x{} with {}",
            want.width, want.height, want.channels, image.width, image.height, image.channels
        ))
        .into());
    }
    let x = image.to_tensor_i8();
    let x = match mode {
        ExecMode::Quantized => x,
        ExecMode::Float => {
            let v: Vec<f32> = x.as_i8().expect("int8 image").iter().map(|&b| b as f32 / 128.0).collect();
            Tensor::new(x.shape(), v)?
        }
    };
    let y = run_graph(g, &x, mode)?;
    let s = y.shape();
    let labels = (0..s.height)
        .flat_map(|r| (0..s.width).map(move |c| (r, c)))
        .map(|(r, c)| {
            // First maximum wins on ties.
            let mut best = 0;
            for k in 1..s.channels {
                if y.get_f64(k, r, c) > y.get_f64(best, r, c) {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    Ok((ClassMap::new(s.height, s.width, labels)?, y))
}

fn cmd_infer(a: &InferArgs) -> anyhow::Result<u8> {
    let batch = a.input.is_dir();
    if batch {
        require_dir(&a.output)?;
        if let Some(d) = &a.logits {
            require_dir(d)?;
        }
    } else {
        require_file(&a.input)?;
        require_parent(&a.output)?;
        if let Some(p) = &a.logits {
            require_parent(p)?;
        }
    }
    if let Some(p) = &a.csv {
        require_parent(p)?;
    }
    let (cfg, g, mode) = load_model(a)?;

    let jobs: Vec<(PathBuf, PathBuf, Option<PathBuf>)> = if batch {
        list_files(&a.input)?
            .into_iter()
            .map(|p| {
                let s = stem(&p);
                let logits = a.logits.as_ref().map(|d| d.join(format!("{s}.l3ut")));
                (p, a.output.join(format!("{s}.pgm")), logits)
            })
            .collect()
    } else {
        vec![(a.input.clone(), a.output.clone(), a.logits.clone())]
    };

    let counts: Vec<anyhow::Result<Vec<u64>>> = jobs
        .par_iter()
        .map(|(input, output, logits)| {
            let image = read_image(input).with_context(|| format!("reading {}", input.display()))?;
            let (map, y) = segment(&g, &cfg, mode, &image).with_context(|| input.display().to_string())?;
            Raster::from_class_map(&map).save_pnm(output)?;
            if let Some(p) = logits {
                write_tensor(&y, p)?;
            }
            let mut hist = vec![0u64; cfg.num_classes];
            map.labels.iter().for_each(|&l| hist[l as usize] += 1);
            Ok(hist)
        })
        .collect();

    let mut csv = String::from("file,class,pixels\n");
    for ((input, _, _), hist) in jobs.iter().zip(counts) {
        let name = input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (c, n) in hist?.iter().enumerate() {
            writeln!(csv, "{name},{c},{n}").expect("write to String");
        }
    }
    match &a.csv {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(0)
}

fn cmd_verify(opts: VerifyOptions, dump_dir: &Path) -> anyhow::Result<u8> {
    let report = run_verification(&opts);
    for p in &report.properties {
        let status = if p.passed() { "PASS" } else { "FAIL" };
        println!("{status} {} ({}/{} cases)", p.name, p.cases - p.failures, p.cases);
    }
    let Some((name, cx)) = report.first_failure() else { return Ok(0) };
    fs::create_dir_all(dump_dir).with_context(|| format!("creating {}", dump_dir.display()))?;
    println!("counterexample: {name} case {}: {}", cx.case, cx.description);
    for (tensor_name, t) in &cx.tensors {
        let path = dump_dir.join(format!("{name}_case{}_{tensor_name}.l3ut", cx.case));
        write_tensor(t, &path)?;
        println!("  wrote {}", path.display());
    }
    Ok(1)
}

fn cmd_cost(cfg: &ArchConfig, processors: usize, csv: Option<&Path>) -> anyhow::Result<u8> {
    let spec = AcceleratorSpec::with_processors(processors)?;
    let g = build_l3unet(cfg)?;
    let report = graph_cost_report(&g, &spec)?;
    print!("{report}");
    if let Some(first) = g.layers().iter().find(|l| l.kind == LayerKind::Conv2d) {
        let base = Shape::new(cfg.input_channels, cfg.input_hw, cfg.input_hw);
        // Keep the first conv's kernel size, but give it the input channel
        // count each folding factor produces.
        let rows = folding_comparison(first, base, &[1, 2, 4], &spec)?;
        println!("\nfirst conv ({}) under folding:", first.name);
        print!("{}", folding_comparison_text(&rows));
    }
    if let Some(p) = csv {
        fs::write(p, report.to_csv())?;
    }
    Ok(0)
}

fn read_class_map(path: &Path) -> anyhow::Result<ClassMap> {
    read_image(path).and_then(|r| r.to_class_map()).with_context(|| format!("reading {}", path.display()))
}

fn cmd_eval(pred_dir: &Path, gt_dir: &Path, classes: usize, csv: Option<&Path>) -> anyhow::Result<u8> {
    require_dir(pred_dir)?;
    require_dir(gt_dir)?;
    if let Some(p) = csv {
        require_parent(p)?;
    }
    let pred = list_files(pred_dir)?;
    let gt = list_files(gt_dir)?;
    let gt_by_stem: std::collections::BTreeMap<String, &PathBuf> = gt.iter().map(|p| (stem(p), p)).collect();
    let pred_stems: std::collections::BTreeSet<String> = pred.iter().map(|p| stem(p)).collect();

    let mut unmatched: Vec<String> = pred
        .iter()
        .filter(|p| !gt_by_stem.contains_key(&stem(p)))
        .chain(gt.iter().filter(|p| !pred_stems.contains(&stem(p))))
        .map(|p| p.display().to_string())
        .collect();
    unmatched.sort();
    if !unmatched.is_empty() {
        for u in &unmatched {
            eprintln!("unmatched: {u}");
        }
        return Err(Exit { code: 5, message: format!("{} unmatched file(s)", unmatched.len()) }.into());
    }

    let pairs: Vec<(&PathBuf, &PathBuf)> = pred.iter().map(|p| (gt_by_stem[&stem(p)], p)).collect();
    let matrices: Vec<anyhow::Result<ConfusionMatrix>> = pairs
        .par_iter()
        .map(|(g, p)| {
            let mut cm = ConfusionMatrix::new(classes);
            cm.accumulate(&read_class_map(g)?, &read_class_map(p)?)
                .with_context(|| format!("{} vs {}", g.display(), p.display()))?;
            Ok(cm)
        })
        .collect();
    let mut total = ConfusionMatrix::new(classes);
    for m in matrices {
        total.merge(&m?)?;
    }
    let text = total.metrics_csv()?;
    match csv {
        Some(p) => fs::write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_crop(a: &CropArgs) -> anyhow::Result<u8> {
    require_dir(&a.images)?;
    if let Some(d) = &a.labels {
        require_dir(d)?;
    }
    let fold_spec = a.fold.map(FoldSpec::new).transpose()?;
    let image_out = a.output.join("images");
    let label_out = a.output.join("labels");
    fs::create_dir_all(&image_out)?;
    if a.labels.is_some() {
        fs::create_dir_all(&label_out)?;
    }
    let cut = |r: &Raster| -> anyhow::Result<Vec<(String, Raster)>> {
        Ok(match a.dataset {
            Dataset::Camvid => overlap_crop(r, CROP_SIZE, a.overlap)?
                .into_iter()
                .map(|(w, c)| (format!("{},{}", w.x, w.y), c))
                .collect(),
            Dataset::Aisegment => {
                aisegment_crops(r)?.into_iter().zip(AISEGMENT_OFFSETS).map(|(c, y)| (format!("0,{y}"), c)).collect()
            }
        })
    };

    let images = list_files(&a.images)?;
    let results: Vec<anyhow::Result<Vec<String>>> = images
        .par_iter()
        .map(|path| {
            let s = stem(path);
            let crops = cut(&read_image(path).with_context(|| format!("reading {}", path.display()))?)?;
            let labels = match &a.labels {
                Some(dir) => {
                    let lp = list_files(dir)?
                        .into_iter()
                        .find(|p| stem(p) == s)
                        .ok_or_else(|| Exit { code: 5, message: format!("no label image for {}", path.display()) })?;
                    cut(&Raster::from_class_map(&read_class_map(&lp)?))?
                }
                None => Vec::new(),
            };
            let mut rows = Vec::new();
            for (i, (origin, crop)) in crops.iter().enumerate() {
                let name = format!("{s}_{i:02}");
                crop.save_pnm(&image_out.join(format!("{name}.{}", if crop.channels == 1 { "pgm" } else { "ppm" })))?;
                if let Some(spec) = fold_spec {
                    write_tensor(&fold(&crop.to_tensor_i8(), spec)?, &image_out.join(format!("{name}.l3ut")))?;
                }
                if let Some((_, l)) = labels.get(i) {
                    l.save_pnm(&label_out.join(format!("{name}.pgm")))?;
                }
                rows.push(format!("{name},{origin}"));
            }
            Ok(rows)
        })
        .collect();
    // Origins are in source-image pixels, before any resize.
    let mut manifest = String::from("crop,x,y\n");
    for r in results {
        for row in r? {
            manifest.push_str(&row);
            manifest.push('\n');
        }
    }
    fs::write(a.output.join("crops.csv"), &manifest)?;
    print!("{manifest}");
    Ok(0)
}
