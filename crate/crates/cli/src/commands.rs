//! Thin deterministic bindings of the library operations.

use std::path::Path;

use anyhow::{bail, Context};
use serde_json::json;

use fouriernet::autodiff::{read_checkpoint, write_checkpoint};
use fouriernet::eval::{
    postprocess_columns, sector_metrics, threshold_posteriors, volume_and_thickness, EtdrsGrid,
    EvalReport, EyeSide,
};
use fouriernet::io::{
    read_gray_pgm, read_mask_pgm, write_fdm, write_gray_pgm, write_mask_pgm, GrayImage,
};
use fouriernet::mask::{connected_components, trace_contour, Connectivity};
use fouriernet::model::{
    build_samples, parse_config, run_sweep, train as train_model, write_history_csv,
    write_sweep_csv, CascadedModel, LabeledSet,
};
use fouriernet::synth::{generate_dataset, load_dataset, save_dataset, SyntheticDataset};
use fouriernet::{descriptor_set, generate_descriptor_maps};

use crate::manifest::{ManifestHome, RunRecord};

pub fn descriptors(mask_path: &Path, order: usize, out: &Path) -> anyhow::Result<RunRecord> {
    let mask = read_mask_pgm(mask_path).context("reading mask")?;
    let set = connected_components(&mask, Connectivity::Eight);
    let mut rows = Vec::new();
    for component in &set.components {
        let contour = trace_contour(component).context("tracing contour")?;
        let descriptors = descriptor_set(&contour, order).context("computing descriptors")?;
        rows.push((component.label, descriptors));
    }
    let mut buf = Vec::new();
    fouriernet::fourier::write_descriptor_csv(&mut buf, &rows)?;
    std::fs::write(out, buf).with_context(|| format!("writing {}", out.display()))?;
    Ok(RunRecord::new(
        "descriptors",
        ManifestHome::Beside(out.to_path_buf()),
        json!({ "order": order }),
        &[mask_path],
        &[out],
        None,
    ))
}

pub fn maps(
    mask_path: &Path,
    order: usize,
    out: &Path,
    pgm_dir: Option<&Path>,
) -> anyhow::Result<RunRecord> {
    let mask = read_mask_pgm(mask_path).context("reading mask")?;
    let map = generate_descriptor_maps(&mask, order).context("generating maps")?;
    write_fdm(&map, out).with_context(|| format!("writing {}", out.display()))?;
    let mut outputs = vec![out.to_path_buf()];
    if let Some(dir) = pgm_dir {
        std::fs::create_dir_all(dir)?;
        for n in 0..order {
            let plane = map.channel_plane(n);
            let (lo, hi) = plane
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let scale = if hi > lo { hi - lo } else { 1.0 };
            let image = GrayImage {
                height: map.height,
                width: map.width,
                pixels: plane.iter().map(|&v| (v - lo) / scale).collect(),
            };
            let path = dir.join(format!("channel_{n}.pgm"));
            write_gray_pgm(&image, &path)?;
            outputs.push(path);
        }
    }
    let output_refs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    Ok(RunRecord::new(
        "maps",
        ManifestHome::Beside(out.to_path_buf()),
        json!({ "order": order }),
        &[mask_path],
        &output_refs,
        None,
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn synth(
    seed: u64,
    groups: usize,
    per_group: usize,
    height: usize,
    width: usize,
    noise: f64,
    out: &Path,
) -> anyhow::Result<RunRecord> {
    let dataset = generate_dataset(seed, groups, per_group, height, width, noise)
        .context("generating dataset")?;
    save_dataset(&dataset, out).context("saving dataset")?;
    println!(
        "wrote {} train / {} val / {} test samples to {}",
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        out.display()
    );
    Ok(RunRecord::new(
        "synth",
        ManifestHome::Dir(out.to_path_buf()),
        json!({
            "seed": seed, "groups": groups, "per_group": per_group,
            "height": height, "width": width, "noise": noise,
        }),
        &[],
        &[out],
        Some(seed),
    ))
}

fn labeled_sets(dataset: &SyntheticDataset) -> (LabeledSet, LabeledSet, LabeledSet) {
    let mut sets = [LabeledSet::default(), LabeledSet::default(), LabeledSet::default()];
    for (i, (_, samples)) in dataset.splits().iter().enumerate() {
        for s in *samples {
            sets[i].push(s.image.clone(), s.mask.clone());
        }
    }
    let [train, val, test] = sets;
    (train, val, test)
}

pub fn train(config_path: &Path, data: &Path, out: &Path) -> anyhow::Result<RunRecord> {
    let config_text = std::fs::read_to_string(config_path).context("reading config")?;
    let (net, tc) = parse_config(&config_text).context("parsing config")?;
    let dataset = load_dataset(data).context("loading dataset")?;
    if dataset.height != net.input_height || dataset.width != net.input_width {
        bail!(
            "dataset is {}x{} but config wants {}x{}",
            dataset.height,
            dataset.width,
            net.input_height,
            net.input_width
        );
    }
    let (train_ls, val_ls, _) = labeled_sets(&dataset);
    let train_samples =
        build_samples::<f32>(&train_ls, net.descriptor_order, net.num_classes)?;
    let val_samples = build_samples::<f32>(&val_ls, net.descriptor_order, net.num_classes)?;

    let mut model = CascadedModel::<f32>::build(&net, tc.seed)?;
    let history = train_model(&mut model, &train_samples, &val_samples, &tc)?;

    std::fs::create_dir_all(out)?;
    let checkpoint = out.join("checkpoint.fnck");
    write_checkpoint(&checkpoint, &model.named_parameters())?;
    let history_path = out.join("loss_history.csv");
    let mut buf = Vec::new();
    write_history_csv(&mut buf, &history)?;
    std::fs::write(&history_path, buf)?;
    let config_snapshot = out.join("config.cfg");
    std::fs::write(&config_snapshot, fouriernet::model::format_config(&net, &tc))?;
    println!(
        "trained {} epochs, best epoch {} (val loss {:.6}); checkpoint at {}",
        history.epochs.len(),
        history.best_epoch,
        history.best_val_loss(),
        checkpoint.display()
    );
    Ok(RunRecord::new(
        "train",
        ManifestHome::Dir(out.to_path_buf()),
        json!({
            "config": config_text,
            "epochs_run": history.epochs.len(),
            "best_epoch": history.best_epoch,
        }),
        &[config_path, data],
        &[&checkpoint, &history_path, &config_snapshot],
        Some(tc.seed),
    ))
}

pub fn predict(
    config_path: &Path,
    checkpoint: &Path,
    image_path: &Path,
    out: &Path,
) -> anyhow::Result<RunRecord> {
    let config_text = std::fs::read_to_string(config_path).context("reading config")?;
    let (net, _) = parse_config(&config_text).context("parsing config")?;
    let mut model = CascadedModel::<f32>::build(&net, 0)?;
    model.load_parameters(read_checkpoint(checkpoint).context("reading checkpoint")?)?;
    let image = read_gray_pgm(image_path).context("reading image")?;
    let (maps, posteriors) = model.predict(&image)?;

    std::fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    if net.descriptor_order > 0 {
        let fdm = out.join("descriptor_maps.fdm");
        write_fdm(&maps, &fdm)?;
        outputs.push(fdm);
    }
    let posterior_path = out.join("posterior.pgm");
    let posterior_image = GrayImage {
        height: posteriors.height,
        width: posteriors.width,
        pixels: posteriors.class_plane(1).to_vec(),
    };
    write_gray_pgm(&posterior_image, &posterior_path)?;
    outputs.push(posterior_path);
    let mask_path = out.join("mask.pgm");
    write_mask_pgm(&threshold_posteriors(&posteriors, 0.5), &mask_path)?;
    outputs.push(mask_path);

    let output_refs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    Ok(RunRecord::new(
        "predict",
        ManifestHome::Dir(out.to_path_buf()),
        json!({ "config": config_text }),
        &[config_path, checkpoint, image_path],
        &output_refs,
        None,
    ))
}

fn parse_grid_config(text: &str, slices: usize, columns: usize) -> anyhow::Result<EtdrsGrid> {
    let mut grid = EtdrsGrid::for_volume(slices, columns, EyeSide::Right);
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("grid config line {}: expected key = value", lineno + 1);
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "center_bscan" => grid.center.0 = value.parse()?,
            "center_ascan" => grid.center.1 = value.parse()?,
            "lateral_mm_per_ascan" => grid.lateral_mm_per_ascan = value.parse()?,
            "slice_spacing_mm" => grid.slice_spacing_mm = value.parse()?,
            "axial_mm_per_pixel" => grid.axial_mm_per_pixel = value.parse()?,
            "eye" => {
                grid.eye = match value {
                    "left" => EyeSide::Left,
                    "right" => EyeSide::Right,
                    other => bail!("grid config line {}: unknown eye '{other}'", lineno + 1),
                }
            }
            other => bail!("grid config line {}: unknown key '{other}'", lineno + 1),
        }
    }
    Ok(grid)
}

fn read_mask_stack(dir: &Path) -> anyhow::Result<Vec<fouriernet::BinaryMask>> {
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    names.sort();
    if names.is_empty() {
        bail!("no .pgm masks in {}", dir.display());
    }
    names.iter().map(|p| Ok(read_mask_pgm(p)?)).collect()
}

pub fn eval(
    pred_dir: &Path,
    ref_dir: &Path,
    grid_path: Option<&Path>,
    out: &Path,
) -> anyhow::Result<RunRecord> {
    let predicted_raw = read_mask_stack(pred_dir)?;
    let reference = read_mask_stack(ref_dir)?;
    if predicted_raw.len() != reference.len() {
        bail!("{} predicted slices vs {} reference slices", predicted_raw.len(), reference.len());
    }
    let predicted: Vec<_> = predicted_raw.iter().map(postprocess_columns).collect();
    let (slices, columns) = (predicted.len(), predicted[0].width());
    let grid = match grid_path {
        Some(p) => parse_grid_config(&std::fs::read_to_string(p)?, slices, columns)?,
        None => EtdrsGrid::for_volume(slices, columns, EyeSide::Right),
    };

    let per_image = fouriernet::eval::stack_pixel_metrics(&predicted, &reference)?;
    let report = EvalReport {
        aggregate: fouriernet::eval::aggregate_metrics(&per_image),
        per_image,
        sectors: sector_metrics(&predicted, &reference, &grid)?,
        volume_thickness: volume_and_thickness(&predicted, &grid)?,
    };
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    std::fs::write(out, buf)?;
    print!("{}", report.format_table());
    Ok(RunRecord::new(
        "eval",
        ManifestHome::Beside(out.to_path_buf()),
        json!({ "grid": grid_path.map(|p| p.display().to_string()) }),
        &[pred_dir, ref_dir],
        &[out],
        None,
    ))
}

pub fn sweep_n(
    config_path: &Path,
    data: &Path,
    n_list: &str,
    seeds: usize,
    out: &Path,
) -> anyhow::Result<RunRecord> {
    let config_text = std::fs::read_to_string(config_path).context("reading config")?;
    let (net, tc) = parse_config(&config_text).context("parsing config")?;
    let orders: Vec<usize> = n_list
        .split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad n '{s}'")))
        .collect::<anyhow::Result<_>>()?;
    if orders.is_empty() {
        bail!("empty n list");
    }
    let dataset = load_dataset(data).context("loading dataset")?;
    let (train_ls, val_ls, test_ls) = labeled_sets(&dataset);
    let rows = run_sweep::<f32>(&net, &tc, &train_ls, &val_ls, &test_ls, &orders, seeds)?;
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows)?;
    std::fs::write(out, buf)?;
    for row in &rows {
        println!(
            "n={}: f-score {:.4} +- {:.4} (precision {:.4} +- {:.4}, recall {:.4} +- {:.4})",
            row.order,
            row.f_score_mean,
            row.f_score_std,
            row.precision_mean,
            row.precision_std,
            row.recall_mean,
            row.recall_std
        );
    }
    Ok(RunRecord::new(
        "sweep-n",
        ManifestHome::Beside(out.to_path_buf()),
        json!({ "config": config_text, "n_list": orders, "seeds": seeds }),
        &[config_path, data],
        &[out],
        Some(tc.seed),
    ))
}
