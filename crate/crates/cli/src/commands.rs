use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use segcrf::densecrf::FilterBackend;
use segcrf::io::{
    colors_to_labels, labels_to_colors, load_raster, load_tile, read_manifest, stack_inputs, LabelColorMap,
    RgbImage, Split, TileRecord,
};
use segcrf::labels::argmax;
use segcrf::metrics::{confusion, erode_boundaries, normalized_table, Report};
use segcrf::nn::{checkpoint, Variant};
use segcrf::pipeline::{predict_image, refine, run_demo};
use segcrf::tiling::extract_training_patches;
use segcrf::train::{train_loop, write_history_csv, Sample};
use segcrf::{Error, LabelMap, LandCover, Tensor, NUM_CLASSES};

use crate::args::{CommonArgs, Command};
use crate::run_dir::RunDir;
use crate::settings::Settings;
use crate::CliError;

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train {
            manifest,
            common,
            model,
            train,
        } => {
            let settings = resolve(Settings::standard(), &common, |s| {
                s.apply_model(&model);
                s.apply_train(&train);
                Ok(())
            })?;
            in_run_dir(&common, "train", &settings, |run| {
                run.input("manifest", manifest.display().to_string());
                train_command(&manifest, &settings, run)
            })
        }
        Command::Predict {
            checkpoint,
            input,
            ndsm,
            manifest,
            common,
            tiles,
        } => {
            let settings = resolve(Settings::standard(), &common, |s| s.apply_tiles(&tiles))?;
            let records = match (&input, &manifest) {
                (Some(image), _) => vec![TileRecord {
                    image: image.clone(),
                    ndsm: ndsm.clone(),
                    labels: None,
                    split: Split::Test,
                }],
                (None, Some(m)) => tiles_of(m, Split::Test)?,
                (None, None) => return Err(CliError::Usage("give --input or --manifest".into())),
            };
            in_run_dir(&common, "predict", &settings, |run| {
                run.input("checkpoint", checkpoint.display().to_string());
                predict_command(&checkpoint, &records, &settings, run)
            })
        }
        Command::Refine {
            probs,
            image,
            ndsm,
            common,
            crf,
        } => {
            let settings = resolve(Settings::standard(), &common, |s| {
                s.apply_crf(&crf);
                Ok(())
            })?;
            if settings.crf_bands() == 4 && ndsm.is_none() {
                return Err(CliError::Usage("--crf-ndsm needs --ndsm".into()));
            }
            in_run_dir(&common, "refine", &settings, |run| {
                run.input("probs", probs.display().to_string());
                run.input("image", image.display().to_string());
                refine_command(&probs, &image, ndsm.as_deref(), &settings, run)
            })
        }
        Command::Evaluate {
            reference,
            pred,
            ignore_class,
            erode,
            common,
        } => {
            let settings = resolve(Settings::standard(), &common, |_| Ok(()))?;
            if let Some(&c) = ignore_class.iter().find(|&&c| c >= NUM_CLASSES) {
                return Err(CliError::Usage(format!("--ignore-class {c} is not a class index below {NUM_CLASSES}")));
            }
            let preds = pred.iter().map(|p| named_path(p)).collect::<Vec<_>>();
            log::info!("evaluate: ignore_class {ignore_class:?}, erode {erode:?}");
            in_run_dir(&common, "evaluate", &settings, |run| {
                run.input("reference", reference.display().to_string());
                run.input("ignore_class", ignore_class.iter().map(|&c| c as i64).collect::<Vec<_>>());
                run.input("erode", erode.unwrap_or(0) as i64);
                evaluate_command(&reference, &preds, &ignore_class, erode, run)
            })
        }
        Command::Demo {
            common,
            model,
            train,
            tiles,
            crf,
            scene_size,
            train_scenes,
            test_scenes,
        } => {
            let settings = resolve(Settings::demo(), &common, |s| {
                s.apply_model(&model);
                s.apply_train(&train);
                s.apply_tiles(&tiles)?;
                s.apply_crf(&crf);
                for (field, value) in [
                    (&mut s.demo.scene_size, scene_size),
                    (&mut s.demo.train_scenes, train_scenes),
                    (&mut s.demo.test_scenes, test_scenes),
                ] {
                    if let Some(v) = value {
                        *field = v;
                    }
                }
                Ok(())
            })?;
            in_run_dir(&common, "demo", &settings, |run| demo_command(&settings, run))
        }
    }
}

/// Defaults, then the config file, then flags; logs the result.
fn resolve(
    defaults: Settings,
    common: &CommonArgs,
    flags: impl FnOnce(&mut Settings) -> Result<(), CliError>,
) -> Result<Settings, CliError> {
    let mut s = match &common.config {
        Some(path) => defaults.merge_file(path)?,
        None => defaults,
    };
    s.apply_common(common);
    flags(&mut s)?;
    s.validate()?;
    log::info!("resolved settings:\n{}", s.to_toml());
    Ok(s)
}

fn in_run_dir(
    common: &CommonArgs,
    command: &'static str,
    settings: &Settings,
    body: impl FnOnce(&mut RunDir) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let mut run = RunDir::create(common.out.as_deref(), command)?;
    let result = body(&mut run);
    run.finish(settings, &result)?;
    result
}

fn tiles_of(manifest: &Path, split: Split) -> Result<Vec<TileRecord>, CliError> {
    let records: Vec<TileRecord> = read_manifest(manifest)?
        .into_iter()
        .filter(|r| r.split == split)
        .collect();
    if records.is_empty() {
        return Err(Error::Config(format!("{} lists no {split:?} tiles", manifest.display())).into());
    }
    Ok(records)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "tile".to_string(), |s| s.to_string_lossy().into_owned())
}

fn named_path(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            (stem(&path), path)
        }
    }
}

fn class_names() -> Vec<&'static str> {
    LandCover::ALL.iter().map(|c| c.name()).collect()
}

fn variant_label(v: Variant) -> &'static str {
    match v {
        Variant::Atrous => "AC",
        Variant::Standard => "SC",
        Variant::Custom => "Custom",
    }
}

fn save_labels(labels: &LabelMap, path: &Path) -> Result<(), CliError> {
    labels_to_colors(labels, &LabelColorMap::isprs())?.save(path)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(Error::from)?))
}

fn train_command(manifest: &Path, settings: &Settings, run: &mut RunDir) -> Result<(), CliError> {
    let spec = settings.network_spec()?;
    let palette = LabelColorMap::isprs();
    let mut dataset: Vec<Sample> = Vec::new();
    for record in tiles_of(manifest, Split::Train)? {
        let (input, labels) = load_tile(&record, &palette, settings.use_ndsm)?;
        let labels = labels.ok_or_else(|| {
            Error::Config(format!("training tile {} has no label file", record.image.display()))
        })?;
        let patches = extract_training_patches(&input, &labels, settings.patches.size, settings.patches.stride)?;
        log::info!("{}: {} patches", record.image.display(), patches.len());
        dataset.extend(patches.into_iter().map(|p| p.sample));
    }
    let ckpt = run.artifact("checkpoint", "checkpoint");
    let outcome = train_loop(&settings.train, &spec, dataset, Some(&ckpt))?;
    write_history_csv(&outcome.history, create(&run.artifact("history", "history.csv"))?)?;
    println!(
        "trained {} steps; best epoch {} of {}; checkpoint {}",
        outcome.steps,
        outcome.best_epoch,
        outcome.history.len(),
        ckpt.display()
    );
    Ok(())
}

fn predict_command(
    checkpoint_dir: &Path,
    records: &[TileRecord],
    settings: &Settings,
    run: &mut RunDir,
) -> Result<(), CliError> {
    let net = checkpoint::load(checkpoint_dir)?;
    let want = net.spec().in_channels;
    if want != settings.input_channels() {
        return Err(CliError::Usage(format!(
            "checkpoint expects {want} input channels but the settings provide {}{}",
            settings.input_channels(),
            if want == 3 { "; pass --no-ndsm" } else { "" }
        )));
    }
    let palette = LabelColorMap::isprs();
    for record in records {
        let (input, _) = load_tile(record, &palette, settings.use_ndsm)?;
        let probs = predict_image(&net, &input, settings.tiling)?;
        let name = stem(&record.image);
        probs.save(run.artifact("probs", &format!("{name}_probs.rt")))?;
        let labels = argmax(&probs).pop().expect("one image");
        save_labels(&labels, &run.artifact("labels", &format!("{name}_labels.png")))?;
        println!("{}: wrote {name}_probs.rt and {name}_labels.png", record.image.display());
    }
    Ok(())
}

fn refine_command(
    probs_path: &Path,
    image_path: &Path,
    ndsm_path: Option<&Path>,
    settings: &Settings,
    run: &mut RunDir,
) -> Result<(), CliError> {
    let probs = Tensor::load(probs_path)?;
    let mut image = load_raster(image_path)?;
    if image.shape().c() < 3 {
        return Err(Error::InvalidShape(format!(
            "{} has {} bands, the CRF needs 3",
            image_path.display(),
            image.shape().c()
        ))
        .into());
    }
    let bands = settings.crf_bands();
    if bands == 4 {
        let ndsm = load_raster(ndsm_path.expect("checked by caller"))?;
        image = stack_inputs(&image.slice_channels(0..3)?, Some(&ndsm))?;
    }
    let (q, labels) = refine(&probs, &image, bands, &settings.crf, FilterBackend::Permutohedral)?;
    let name = stem(probs_path);
    let name = name.strip_suffix("_probs").unwrap_or(&name);
    q.save(run.artifact("probs", &format!("{name}_refined.rt")))?;
    save_labels(&labels, &run.artifact("labels", &format!("{name}_refined_labels.png")))?;
    println!("wrote {name}_refined.rt and {name}_refined_labels.png");
    Ok(())
}

fn evaluate_command(
    reference_path: &Path,
    preds: &[(String, PathBuf)],
    ignore: &[usize],
    erode: Option<usize>,
    run: &mut RunDir,
) -> Result<(), CliError> {
    let palette = LabelColorMap::isprs();
    let reference = colors_to_labels(&RgbImage::load(reference_path)?, &palette)?;
    let mask = erode.map(|r| erode_boundaries(&reference, r));
    let names = class_names();
    let mut reports = Vec::new();
    let mut matrices = String::new();
    for (name, path) in preds {
        let pred = colors_to_labels(&RgbImage::load(path)?, &palette)?;
        let cm = confusion(&reference, &pred, NUM_CLASSES, mask.as_deref())?;
        let report = Report::new(&cm, &names, ignore)?;
        report.write_csv(create(&run.artifact("report", &format!("{name}_report.csv")))?)?;
        matrices.push_str(&format!("{name}\n{}\n", normalized_table(&cm, &names, ignore)));
        reports.push((name.as_str(), report));
    }
    let rows: Vec<(&str, &Report)> = reports.iter().map(|(n, r)| (*n, r)).collect();
    let table = Report::f1_table(&rows);
    let text = format!("{table}\n{matrices}");
    std::fs::write(run.artifact("tables", "tables.txt"), &text).map_err(Error::from)?;
    print!("{text}");
    Ok(())
}

fn demo_command(settings: &Settings, run: &mut RunDir) -> Result<(), CliError> {
    let config = settings.demo_config()?;
    let outcome = run_demo(&config)?;
    checkpoint::save(&outcome.network, run.artifact("checkpoint", "checkpoint"))?;
    write_history_csv(&outcome.history, create(&run.artifact("history", "history.csv"))?)?;
    let names = class_names();
    let label = variant_label(config.spec.variant);
    let raw = Report::new(&outcome.raw, &names, &[])?;
    let refined = Report::new(&outcome.refined, &names, &[])?;
    raw.write_csv(create(&run.artifact("report", "raw_report.csv"))?)?;
    refined.write_csv(create(&run.artifact("report", "refined_report.csv"))?)?;
    let crf_label = format!("{label}-FCRF");
    let mut text = Report::f1_table(&[(label, &raw), (crf_label.as_str(), &refined)]);
    text.push('\n');
    text.push_str(&normalized_table(&outcome.refined, &names, &[]));
    std::fs::write(run.artifact("tables", "tables.txt"), &text).map_err(Error::from)?;
    print!("{text}");
    for (stage, t) in &outcome.timings {
        println!("{stage:>8}: {:.1} s", t.as_secs_f64());
    }
    println!(
        "overall accuracy: raw {:.4}, refined {:.4}",
        outcome.raw.overall_accuracy(),
        outcome.refined.overall_accuracy()
    );
    run.input("raw_overall_accuracy", outcome.raw.overall_accuracy());
    run.input("refined_overall_accuracy", outcome.refined.overall_accuracy());
    Ok(())
}
