use std::path::{Path, PathBuf};

use afflow_core::data::{
    calibrate_noise, dequantize, labels_to_pgm, nearest_labels, pgm_to_labels, read_dataset, wrong_percentage,
    write_dataset, Image, LabelMap, LabeledImage, Manifest, Netpbm, Scenario, ScenarioKind, MANIFEST_FILE,
};
use afflow_core::flow::distance_field;
use afflow_core::gradient::check::{check_instance, run_check, AGREEMENT_COSINE};
use afflow_core::graph::{GridGraph, WeightField};
use afflow_core::predictor::{
    init_predictor, patch_features, predict_weights, train_predictor, PredictorParams, PredictorSample,
};
use afflow_core::training::{label_with, train_from, StopReason, TrainSample, TrainTrace};
use afflow_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{GenerateArgs, GradCheckArgs, ImageArgs, LabelArgs, PredictArgs, PredictTrainArgs, TrainArgs};

fn required(value: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    value.ok_or_else(|| Error::Config(format!("missing {what} (flag or config file)")))
}

fn base_scenario(kind: ScenarioKind, seed: u64) -> Scenario {
    match kind {
        ScenarioKind::Lines => Scenario::lines(seed),
        ScenarioKind::Colors => Scenario::colors(seed),
    }
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let mut s = match (args.scenario, cfg.scenario) {
        (Some(kind), _) => base_scenario(kind, 0),
        (None, Some(s)) => s,
        (None, None) => return Err(Error::Config("missing --scenario".into())),
    };
    if let Some(seed) = args.seed {
        s = s.with_seed(seed);
    }
    if let Some(size) = args.size {
        s = s.with_size(size, size);
    }
    if let Some(cells) = args.cells {
        s = s.with_cells(cells);
    }
    if let Some(noise) = args.noise {
        s = s.with_noise(noise);
    }
    s.validate()?;
    if args.count == 0 {
        return Err(Error::Config("--count must be positive".into()));
    }
    if let Some(target) = args.calibrate {
        if !(0.0..100.0).contains(&target) {
            return Err(Error::Config(format!("calibration target {target} is not a percentage")));
        }
        let noise = calibrate_noise(&s, args.count, target, 40)?;
        println!("calibrated noise {noise:.6}");
        s = s.with_noise(noise);
    }
    let out = required(args.out.clone().or(cfg.out), "--out")?;
    let images = s.generate_set(args.count)?;
    let manifest = write_dataset(&out, &s, &images)?;
    for (entry, img) in manifest.images.iter().zip(&images) {
        let err = wrong_percentage(&nearest_labels(&img.noisy, &img.palette), &img.truth.labels);
        println!("{} seed {} nearest-label error {err:.2}%", entry.noisy, entry.seed);
    }
    println!("wrote {} images to {}", images.len(), out.display());
    Ok(())
}

fn load_dataset(dir: &Path, limit: Option<usize>) -> Result<(Manifest, Vec<LabeledImage>)> {
    let (manifest, mut images) = read_dataset(dir)?;
    if let Some(k) = limit {
        images.truncate(k);
    }
    if images.is_empty() {
        return Err(Error::Config(format!("{} holds no images", dir.display())));
    }
    let (h, w) = (images[0].noisy.height(), images[0].noisy.width());
    if images.iter().any(|i| i.noisy.height() != h || i.noisy.width() != w) {
        return Err(Error::Config("dataset images differ in size".into()));
    }
    Ok((manifest, images))
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointInfo {
    iteration: usize,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(k) = args.max_iters {
        cfg.train.max_iters = k;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    let data = required(args.data.clone().or(cfg.data.clone()), "--data")?;
    let out = required(args.out.clone().or(cfg.out.clone()), "--out")?;
    let trace_path = args.trace.clone().unwrap_or_else(|| out.with_extension("csv"));
    let checkpoint_path = out.with_extension("ckpt.omega");

    let (_, images) = load_dataset(&data, cfg.images)?;
    let graph = GridGraph::new(images[0].noisy.height(), images[0].noisy.width(), cfg.radius())?;
    let samples = images
        .iter()
        .map(|img| TrainSample::from_labeled(img, cfg.train.rho))
        .collect::<Result<Vec<_>>>()?;

    let (init, offset) = match &args.resume {
        Some(path) => {
            let (g, omega) = WeightField::load(path)?;
            if (g.height(), g.width(), g.radius()) != (graph.height(), graph.width(), graph.radius()) {
                return Err(Error::Config(format!("{} does not match the dataset grid", path.display())));
            }
            let offset = match std::fs::read_to_string(sidecar(path)) {
                Ok(text) => serde_json::from_str::<CheckpointInfo>(&text)?.iteration,
                Err(_) => 0,
            };
            (omega, offset)
        }
        None => (WeightField::uniform(&graph), 0),
    };
    let mut run = cfg.train;
    run.max_iters = cfg.train.max_iters.saturating_sub(offset).max(1);

    let outcome = train_from(&graph, &samples, &run, init, |k, omega| {
        omega.save(&graph, &checkpoint_path)?;
        let info = CheckpointInfo { iteration: offset + k };
        std::fs::write(sidecar(&checkpoint_path), serde_json::to_string(&info)?)?;
        log::info!("checkpoint at iteration {}", offset + k);
        Ok(())
    })?;

    let mut trace = TrainTrace::default();
    if offset > 0 {
        if let Ok(previous) = TrainTrace::read_csv(&trace_path) {
            trace.rows.extend(previous.rows.into_iter().filter(|r| r.iteration < offset));
        }
    }
    trace.rows.extend(outcome.trace.rows.iter().map(|r| {
        let mut r = *r;
        r.iteration += offset;
        r
    }));
    trace.save_csv(&trace_path)?;
    if outcome.stop == StopReason::NonFinite {
        return Err(Error::NonFinite("training loss or gradient"));
    }
    outcome.omega.save(&graph, &out)?;
    let last = trace.last().expect("trace holds the initial row");
    println!(
        "stopped after iteration {} ({:?}): loss {:.6}, wrong pixels {:.2}%",
        last.iteration, outcome.stop, last.loss, last.wrong_pct
    );
    println!("weights {} trace {}", out.display(), trace_path.display());
    Ok(())
}

/// Image, palette and optional ground truth for labeling commands.
struct Input {
    image: Image,
    palette: Vec<Vec<f64>>,
    truth: Option<LabelMap>,
}

fn load_input(args: &ImageArgs) -> Result<Input> {
    let pnm = Netpbm::load(&args.image)?;
    let dir = args.image.parent().unwrap_or(Path::new("."));
    let name = args.image.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let manifest: Option<Manifest> = match std::fs::read_to_string(dir.join(MANIFEST_FILE)) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(_) => None,
    };
    let entry = manifest.as_ref().and_then(|m| m.images.iter().find(|e| e.noisy == name || e.clean == name));
    let range = match (&args.range, entry) {
        (Some(r), _) => [r[0], r[1]],
        (None, Some(e)) if e.noisy == name => e.noisy_range,
        _ => [0.0, 1.0],
    };
    let image = dequantize(&pnm, range[0], range[1])?;
    let palette = match (args.scenario, &manifest) {
        (Some(kind), _) => base_scenario(kind, 0).palette(),
        (None, Some(m)) => m.palette.clone(),
        (None, None) => return Err(Error::Config("no manifest next to the image; pass --scenario".into())),
    };
    if palette.iter().any(|c| c.len() != image.channels()) {
        return Err(Error::Config("palette and image channel counts differ".into()));
    }
    let truth_path = match (&args.truth, entry) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(e)) => Some(dir.join(&e.truth)),
        _ => None,
    };
    let truth = truth_path.map(|p| pgm_to_labels(&Netpbm::load(p)?)).transpose()?;
    if let Some(t) = &truth {
        if (t.height, t.width) != (image.height(), image.width()) {
            return Err(Error::Config("ground truth and image differ in size".into()));
        }
    }
    Ok(Input { image, palette, truth })
}

fn finish_labels(input: &Input, labels: Vec<usize>, out: &Path) -> Result<()> {
    let map = LabelMap::new(input.image.height(), input.image.width(), labels)?;
    labels_to_pgm(&map)?.save(out)?;
    if let Some(truth) = &input.truth {
        let nearest = wrong_percentage(&nearest_labels(&input.image, &input.palette), &truth.labels);
        println!("nearest-label error {nearest:.2}%");
        println!("wrong pixels {:.2}%", wrong_percentage(&map.labels, &truth.labels));
    }
    println!("labels {}", out.display());
    Ok(())
}

pub fn label(args: &LabelArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(args.image.config.as_deref())?;
    let input = load_input(&args.image)?;
    let (h, w) = (input.image.height(), input.image.width());
    let (graph, omega) = match &args.weights {
        Some(path) => {
            let (g, omega) = WeightField::load(path)?;
            if (g.height(), g.width()) != (h, w) {
                return Err(Error::Config(format!("{} was trained on a {}x{} grid", path.display(), g.height(), g.width())));
            }
            (g, omega)
        }
        None => {
            let g = GridGraph::new(h, w, cfg.radius())?;
            let omega = WeightField::uniform(&g);
            (g, omega)
        }
    };
    let dist = distance_field(&input.image, &input.palette, cfg.train.rho)?;
    let labels = label_with(&graph, &omega, &dist, cfg.train.t, cfg.train.m)?;
    finish_labels(&input, labels, &args.image.out)
}

pub fn grad_check(args: &GradCheckArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let inst = check_instance(args.size, args.labels, args.seed, args.noise, args.cells)?;
    let mut gcfg = cfg.train.gradient_config(inst.graph.n_pixels());
    gcfg.include_second_summand = !args.no_second_summand;
    let report = run_check(&inst, &gcfg, args.reference())?;
    let n = report.cosines.len();
    let good = (report.fraction * n as f64).round() as usize;
    let min = report.cosines.iter().map(|c| c.unwrap_or(f64::NAN)).fold(f64::INFINITY, f64::min);
    println!("reference {} size {} labels {} seed {}", args.mode, args.size, args.labels, args.seed);
    println!("minimum cosine {min:.6}");
    println!("pixels with cosine >= {AGREEMENT_COSINE}: {good}/{n} ({:.2}%)", 100.0 * report.fraction);
    println!("fraction {:.6}", report.fraction);
    println!("seconds {:.2}", report.seconds);
    Ok(())
}

fn predictor_samples(images: &[LabeledImage], graph: &GridGraph, rho: f64) -> Result<Vec<PredictorSample>> {
    images
        .iter()
        .map(|img| PredictorSample::new(&img.noisy, graph, TrainSample::from_labeled(img, rho)?))
        .collect()
}

pub fn predict_train(args: &PredictTrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(k) = args.steps {
        cfg.predictor.steps = k;
    }
    if let Some(k) = args.prototypes {
        cfg.predictor.n_protos = k;
    }
    if let Some(seed) = args.seed {
        cfg.predictor.seed = seed;
    }
    let data = required(args.data.clone().or(cfg.data.clone()), "--data")?;
    let out = required(args.out.clone().or(cfg.out.clone()), "--out")?;
    let trace_path = args.trace.clone().unwrap_or_else(|| out.with_extension("csv"));
    let (_, train_images) = load_dataset(&data, cfg.images)?;
    let graph = GridGraph::new(train_images[0].noisy.height(), train_images[0].noisy.width(), cfg.radius())?;
    let val_images = match args.val.clone().or(cfg.validation.clone()) {
        Some(dir) => load_dataset(&dir, None)?.1,
        None => Vec::new(),
    };
    if val_images.iter().any(|i| (i.noisy.height(), i.noisy.width()) != (graph.height(), graph.width())) {
        return Err(Error::Config("validation images differ in size from the training images".into()));
    }
    let train = predictor_samples(&train_images, &graph, cfg.train.rho)?;
    let validation = predictor_samples(&val_images, &graph, cfg.train.rho)?;
    let clean: Vec<Image> = train_images.iter().map(|i| i.clean.clone()).collect();
    let init = init_predictor(&clean, &graph, cfg.predictor.n_protos, cfg.predictor.seed)?;
    let outcome = train_predictor(&graph, init, &train, &validation, &cfg.train, &cfg.predictor)?;
    outcome.trace.save_csv(&trace_path)?;
    if outcome.non_finite {
        return Err(Error::NonFinite("predictor training"));
    }
    outcome.params.save(&out)?;
    if let Some(last) = outcome.trace.rows.last() {
        println!(
            "step {}: train loss {:.6}, train wrong {:.2}%, validation wrong {:.2}%",
            last.step, last.train_loss, last.train_wrong_pct, last.val_wrong_pct
        );
    }
    if !validation.is_empty() {
        let uniform = WeightField::uniform(&graph);
        let mut total = 0.0;
        for s in &validation {
            let labels = label_with(&graph, &uniform, &s.sample.dist, cfg.train.t, cfg.train.m)?;
            total += wrong_percentage(&labels, &s.sample.truth);
        }
        println!("validation wrong with uniform weights {:.2}%", total / validation.len() as f64);
    }
    println!("predictor {} trace {}", out.display(), trace_path.display());
    Ok(())
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let cfg = RunConfig::load_or_default(args.image.config.as_deref())?;
    let params = PredictorParams::load(&args.model)?;
    let input = load_input(&args.image)?;
    let graph = GridGraph::new(input.image.height(), input.image.width(), cfg.radius())?;
    if params.patch_len() != graph.patch_len() || params.feat_dim() != input.image.channels() * graph.patch_len() {
        return Err(Error::Config("predictor does not fit this image and neighborhood".into()));
    }
    let omega = predict_weights(&patch_features(&input.image, &graph)?, &params)?;
    if let Some(path) = &args.weights_out {
        omega.save(&graph, path)?;
    }
    let dist = distance_field(&input.image, &input.palette, cfg.train.rho)?;
    let labels = label_with(&graph, &omega, &dist, cfg.train.t, cfg.train.m)?;
    finish_labels(&input, labels, &args.image.out)
}
