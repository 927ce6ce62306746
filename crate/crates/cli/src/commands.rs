use std::fs;
use std::path::{Path, PathBuf};

use fakeguard_core::dataset::{
    crop_face, decode_ppm, frame_file_name, generate_synthetic, load_dataset, load_video_dir, SyntheticConfig,
};
use fakeguard_core::inspect::{dump_feature_maps, export_curves, overfit_report, DEFAULT_OVERFIT_MARGIN};
use fakeguard_core::metrics::MetricsRecord;
use fakeguard_core::model::{
    decode_weights, ensemble_predict, predict_video, save_weights, Family, ModelError, ModelSpec, Network, Preset,
};
use fakeguard_core::train::{kfold_split, run_kfold, train_with_progress, ClipSource, InMemoryClips, TrainOutcome};

use crate::config::{resolve, ModelChoice, Resolved};
use crate::{Failure, GendataArgs, InspectArgs, KfoldArgs, PredictArgs, TrainArgs};

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}

pub fn gendata(a: &GendataArgs) -> Result<(), Failure> {
    let cfg = SyntheticConfig {
        n_videos: a.videos,
        frames_per_video: a.frames,
        image_size: (a.size, a.size),
        blend_rect_fraction: a.blend_fraction,
        seed: a.seed,
    };
    let out = generate_synthetic(&cfg, &a.out)?;
    let fake = out.manifest.entries.iter().filter(|e| e.label == 1.0).count();
    println!(
        "{} videos ({} real, {fake} fake), {} frames of {}x{} each, in {}",
        out.manifest.len(),
        out.manifest.len() - fake,
        a.frames,
        a.size,
        a.size,
        a.out.display()
    );
    if out.files_written == 0 {
        println!("unchanged: all {} files already up to date", out.files_unchanged);
    } else {
        println!("wrote {} files, {} unchanged", out.files_written, out.files_unchanged);
    }
    Ok(())
}

fn specs(r: &Resolved) -> Vec<ModelSpec> {
    r.model
        .families()
        .into_iter()
        .map(|f| ModelSpec::preset(f, r.preset))
        .collect()
}

/// Untrained members; each family gets its own offset of `seed`.
fn build_models(specs: &[ModelSpec], seed: u64) -> Result<Vec<Network<f32>>, ModelError> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| Network::build(s, seed.wrapping_add(i as u64)))
        .collect()
}

fn load_clips(r: &Resolved, specs: &[ModelSpec]) -> Result<InMemoryClips, Failure> {
    let manifest = load_dataset(&r.data)?;
    eprintln!("loading {} videos from {}", manifest.len(), r.data.display());
    Ok(InMemoryClips::load(&manifest, r.train.n_frames, specs[0].input_size)?)
}

fn progress(prefix: String, epochs: usize) -> impl FnMut(&MetricsRecord, &MetricsRecord) {
    move |t, v| {
        eprintln!(
            "{prefix}epoch {}/{epochs}  train loss {:.4} log loss {:.4} acc {:.3}  val loss {:.4} log loss {:.4} acc {:.3} f1 {:.3}",
            t.epoch, t.loss, t.log_loss, t.accuracy, v.loss, v.log_loss, v.accuracy, v.f1
        );
    }
}

fn run_name(r: &Resolved) -> String {
    let model = match r.model {
        ModelChoice::Resnet => "resnet",
        ModelChoice::Xception => "xception",
        ModelChoice::Both => "both",
    };
    format!("{}-{model}", r.preset)
}

fn report_text(r: &Resolved, outcome: &TrainOutcome, validation: usize, training: usize) -> Result<String, Failure> {
    let t = &r.train;
    let log = &outcome.log;
    let (_, best) = log.best();
    let (_, last) = log.last();
    let overfit = overfit_report(log, DEFAULT_OVERFIT_MARGIN)?;
    let optimizer = serde_json::to_string(&t.optimizer).expect("optimizer serializes");
    Ok(format!(
        "model: {}\n\
         train videos: {training}\nvalidation videos: {validation}\n\
         epochs: {}\nbatch_size: {}\nn_frames: {}\nlearning_rate: {}\noptimizer: {optimizer}\n\
         gamma: {}\nalpha: {}\nseed: {}\n\n\
         best epoch {}: val accuracy {:.6} f1 {:.6} log loss {:.6} loss {:.6}\n\
         final epoch {}: val accuracy {:.6} f1 {:.6} log loss {:.6} loss {:.6}\n\n\
         {overfit}\n",
        run_name(r),
        t.epochs,
        t.batch_size,
        t.n_frames,
        t.learning_rate,
        t.focal.gamma,
        t.focal.alpha,
        t.seed,
        best.epoch,
        best.accuracy,
        best.f1,
        best.log_loss,
        best.loss,
        last.epoch,
        last.accuracy,
        last.f1,
        last.log_loss,
        last.loss,
    ))
}

/// Best weights as `<family>.fgwt`, `curves.csv` and `report.txt`.
fn write_run(
    dir: &Path,
    r: &Resolved,
    specs: &[ModelSpec],
    outcome: &TrainOutcome,
    validation: usize,
    training: usize,
) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    for (spec, weights) in specs.iter().zip(&outcome.best_weights) {
        save_weights(weights, &dir.join(format!("{}.fgwt", spec.family)))?;
    }
    export_curves(&outcome.log, &dir.join("curves.csv"))?;
    let report = dir.join("report.txt");
    fs::write(&report, report_text(r, outcome, validation, training)?).map_err(|e| io_failure(&report, e))
}

fn print_config(r: &Resolved) {
    println!("{}", serde_json::to_string_pretty(r).expect("config serializes"));
}

pub fn train(a: &TrainArgs) -> Result<(), Failure> {
    let (file, flags) = a.layers()?;
    let r = resolve(&file, &flags)?;
    if a.print_config {
        print_config(&r);
        return Ok(());
    }
    let specs = specs(&r);
    let clips = load_clips(&r, &specs)?;
    let labels: Vec<f64> = (0..clips.len()).map(|i| clips.label(i)).collect();
    let folds = kfold_split(&labels, r.train.k_folds, r.train.seed)?;
    let (train_set, val_set) = (clips.subset(&folds.training(0)), clips.subset(&folds.validation(0)));
    let mut models = build_models(&specs, r.train.seed)?;
    let outcome = train_with_progress(
        &mut models,
        &r.ensemble,
        &train_set,
        &val_set,
        &r.train,
        &mut progress(String::new(), r.train.epochs),
    )?;
    write_run(&r.out, &r, &specs, &outcome, val_set.len(), train_set.len())?;
    let (_, best) = outcome.log.best();
    println!(
        "best epoch {}: val accuracy {:.6} f1 {:.6} log loss {:.6}; outputs in {}",
        best.epoch,
        best.accuracy,
        best.f1,
        best.log_loss,
        r.out.display()
    );
    Ok(())
}

pub fn kfold(a: &KfoldArgs) -> Result<(), Failure> {
    let (file, flags) = a.train.layers()?;
    let r = resolve(&file, &flags)?;
    if a.train.print_config {
        print_config(&r);
        return Ok(());
    }
    let specs = specs(&r);
    let clips = load_clips(&r, &specs)?;
    let only = (!a.fold.is_empty()).then_some(a.fold.as_slice());
    let epochs = r.train.epochs;
    let report = run_kfold(
        &clips,
        &r.ensemble,
        &r.train,
        only,
        |fold| Ok(build_models(&specs, r.train.seed ^ fold as u64)?),
        |fold, t, v| progress(format!("fold {fold}  "), epochs)(t, v),
    )?;
    let mut summary = String::from("fold,best_epoch,val_acc,val_f1\n");
    for f in &report.folds {
        let val = f.validation_ids.len();
        write_run(
            &r.out.join(format!("fold_{}", f.fold)),
            &r,
            &specs,
            &f.outcome,
            val,
            clips.len() - val,
        )?;
        let (_, best) = f.outcome.log.best();
        summary.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            f.fold, best.epoch, best.accuracy, best.f1
        ));
    }
    let path = r.out.join("summary.csv");
    fs::write(&path, summary).map_err(|e| io_failure(&path, e))?;
    let s = report.summary;
    println!(
        "{} folds: val accuracy {:.6} ± {:.6}, f1 {:.6} ± {:.6}; outputs in {}",
        report.folds.len(),
        s.accuracy_mean,
        s.accuracy_std,
        s.f1_mean,
        s.f1_std,
        r.out.display()
    );
    Ok(())
}

/// Loads a weight file into the preset whose fingerprint it carries.
fn load_model(path: &Path, family: Option<Family>, preset: Option<Preset>) -> Result<Network<f32>, Failure> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let weights = decode_weights(&bytes).map_err(|e| Failure::from(e).prefixed(path))?;
    let families = family.map_or(vec![Family::Resnet, Family::Xception], |f| vec![f]);
    let presets = preset.map_or(vec![Preset::Mini, Preset::Full], |p| vec![p]);
    let spec = families
        .iter()
        .flat_map(|&f| presets.iter().map(move |&p| ModelSpec::preset(f, p)))
        .find(|s| s.fingerprint() == weights.fingerprint)
        .ok_or_else(|| {
            let wanted: Vec<String> = families
                .iter()
                .flat_map(|f| presets.iter().map(move |p| format!("{f}-{p}")))
                .collect();
            Failure::new(
                crate::EXIT_WEIGHTS,
                format!(
                    "{}: weights were saved for a different model (expected {})",
                    path.display(),
                    wanted.join(" or ")
                ),
            )
        })?;
    Ok(Network::from_weights(&spec, weights)?)
}

impl Failure {
    fn prefixed(self, path: &Path) -> Self {
        Failure::new(self.code, format!("{}: {}", path.display(), self.message))
    }
}

fn video_dirs(root: &Path) -> Result<Vec<PathBuf>, Failure> {
    if root.join(frame_file_name(0)).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| io_failure(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(frame_file_name(0)).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Failure::data(format!("{}: no video frames found", root.display())));
    }
    Ok(dirs)
}

pub fn predict(a: &PredictArgs) -> Result<(), Failure> {
    let preset = a.preset.map(|p| p.preset);
    let mut models = Vec::new();
    for (family, path) in [
        (Family::Resnet, &a.weights_resnet),
        (Family::Xception, &a.weights_xception),
    ] {
        if let Some(path) = path {
            models.push(load_model(path, Some(family), preset)?);
        }
    }
    if models.is_empty() {
        return Err(Failure::config("give --weights-resnet, --weights-xception, or both"));
    }
    let size = models[0].spec().input_size;
    if models.iter().any(|m| m.spec().input_size != size) {
        return Err(Failure::config("the two weight files expect different input sizes"));
    }
    let ensemble = a.ensemble_weights.unwrap_or_default();
    if models.len() == 2 {
        ensemble.validate()?;
    }
    if a.frames == 0 {
        return Err(Failure::config("--frames must be at least 1"));
    }
    for dir in video_dirs(&a.video_dir)? {
        let seq = load_video_dir(&dir)?;
        let clip = seq.face_clip(a.frames, size)?;
        let probs = models
            .iter()
            .map(|m| predict_video(m, &clip, a.frames))
            .collect::<Result<Vec<_>, _>>()?;
        let p = match probs[..] {
            [p] => p,
            [p_resnet, p_xception] => ensemble_predict(p_resnet, p_xception, &ensemble)?,
            _ => unreachable!("one or two models"),
        };
        println!("{},{p:.6},{}", seq.video_id, if p >= 0.5 { "fake" } else { "real" });
    }
    Ok(())
}

pub fn inspect(a: &InspectArgs) -> Result<(), Failure> {
    let family = match a.model {
        None => None,
        Some(ModelChoice::Resnet) => Some(Family::Resnet),
        Some(ModelChoice::Xception) => Some(Family::Xception),
        Some(ModelChoice::Both) => return Err(Failure::config("inspect takes one backbone: resnet or xception")),
    };
    let preset = a.preset.map(|p| p.preset);
    let net = match &a.weights {
        Some(path) => load_model(path, family, preset)?,
        None => Network::build(
            &ModelSpec::preset(family.unwrap_or(Family::Resnet), preset.unwrap_or(Preset::Mini)),
            a.seed,
        )?,
    };
    let bytes = fs::read(&a.frame).map_err(|e| io_failure(&a.frame, e))?;
    let mut frame = decode_ppm(&bytes).map_err(|e| Failure::data(format!("{}: {e}", a.frame.display())))?;
    let size = net.spec().input_size;
    if (frame.height(), frame.width()) != size {
        frame = crop_face(&frame, None, size).map_err(|e| Failure::data(format!("{}: {e}", a.frame.display())))?;
    }
    let grid = dump_feature_maps(&net, &frame, a.layer)?;
    grid.save(&a.out)?;
    println!(
        "layer {} of {}: {} maps in a {}x{} grid ({}x{} px) written to {}",
        a.layer,
        net.conv_count(),
        grid.maps.len(),
        grid.columns(),
        grid.rows(),
        grid.grid.width(),
        grid.grid.height(),
        a.out.display()
    );
    Ok(())
}
