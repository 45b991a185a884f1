use std::io::Write;
use std::path::Path;

use vts_core::data::{apply_protocol, load_cifar10, read_dataset, synth_dataset, write_dataset, Dataset, ProtocolSpec, Split, SynthConfig};
use vts_core::model::{sidecar_path, HashModel};
use vts_core::retrieval::{map_at_k, pr_curve as compute_pr, read_code_set, write_code_set, MapOptions, CODES_MAGIC};
use vts_core::train::{Trainer, METRICS_HEADER};
use vts_core::weights::{read_weights, WEIGHTS_MAGIC};
use vts_core::data::DATASET_MAGIC;

use crate::config::{resolve_train, FileConfig, RunConfig, TrainFlags, DEFAULT_PROTOCOL};
use crate::error::{AsConfig, AsData, CliError, CliResult};

fn check_parent(path: &Path, what: &str) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(CliError::config(format!(
            "{what} directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

/// Loads the dataset for `protocol`. Splits stored in a dataset file are kept
/// when they were drawn under the same protocol.
pub fn load_data(data: Option<&Path>, protocol: &ProtocolSpec, seed: u64) -> CliResult<Dataset> {
    let dataset = match data {
        None if protocol.name == DEFAULT_PROTOCOL => synth_dataset(&SynthConfig::default())?,
        None => return Err(CliError::data(format!("protocol '{}' needs --data", protocol.name))),
        Some(p) if !p.exists() => return Err(CliError::data(format!("data path {} does not exist", p.display()))),
        Some(p) if p.is_dir() => load_cifar10(p).as_data()?,
        Some(p) => read_dataset(p).as_data()?,
    };
    if dataset.splits.is_some() && dataset.protocol.as_deref() == Some(protocol.name.as_str()) {
        return Ok(dataset);
    }
    apply_protocol(dataset, protocol, seed).as_data()
}

fn open_metrics(path: &Path, run: &RunConfig, rows: &[String]) -> CliResult<std::fs::File> {
    let mut f = std::fs::File::create(path).map_err(|e| CliError::config(format!("cannot create {}: {e}", path.display())))?;
    let json = serde_json::to_string(run).map_err(|e| CliError::config(e.to_string()))?;
    let mut text = format!("# config: {json}\n{METRICS_HEADER}\n");
    rows.iter().for_each(|r| text.push_str(&format!("{r}\n")));
    f.write_all(text.as_bytes()).map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))?;
    Ok(f)
}

pub fn train(flags: TrainFlags, config: Option<&Path>, checkpoint: Option<&Path>, resume: Option<&Path>) -> CliResult<()> {
    let mut run = resolve_train(flags, FileConfig::load(config)?)?;
    check_parent(&run.out, "output")?;
    check_parent(&run.metrics, "metrics")?;
    if let Some(c) = checkpoint {
        check_parent(c, "checkpoint")?;
    }
    if let Some(r) = resume {
        if !r.is_file() {
            return Err(CliError::config(format!("checkpoint {} does not exist", r.display())));
        }
    }
    let dataset = load_data(run.data.as_deref(), &run.protocol, run.train.seed)?;
    let mut trainer = match resume {
        Some(r) => Trainer::resume(r, &dataset).as_config()?,
        None => Trainer::new(run.train.clone(), &dataset)?,
    };
    run.train = trainer.config.clone();
    let mut metrics = open_metrics(&run.metrics, &run, &trainer.state.rows)?;
    eprintln!(
        "training {} on {} ({} train / {} query / {} database), {} bits",
        run.train.loss.objective,
        run.protocol.name,
        dataset.split(Split::Train)?.len(),
        dataset.split(Split::Query)?.len(),
        dataset.split(Split::Database)?.len(),
        run.train.head.bits
    );
    while !trainer.is_finished() {
        let rows = trainer.run_epoch()?;
        for row in &rows {
            writeln!(metrics, "{row}").map_err(|e| CliError::data(format!("writing {}: {e}", run.metrics.display())))?;
            eprintln!("{row}");
        }
        if let Some(c) = checkpoint {
            trainer.save_checkpoint(c)?;
        }
    }
    trainer.save_best(&run.out)?;
    match (trainer.state.best_map, trainer.state.best_epoch) {
        (Some(map), Some(epoch)) => println!("best mAP@{} = {map:.6} (epoch {epoch})", run.protocol.cutoff),
        _ => println!("no evaluation ran"),
    }
    println!("wrote {} and {}", run.out.display(), run.metrics.display());
    Ok(())
}

pub fn encode(weights: &Path, split: Split, data: Option<&Path>, protocol: Option<&str>, seed: u64, out: &Path) -> CliResult<()> {
    check_parent(out, "output")?;
    let (model, meta) = HashModel::<f32>::load(weights).as_config()?;
    let spec = ProtocolSpec::resolve(protocol.unwrap_or(DEFAULT_PROTOCOL)).as_config()?;
    let dataset = load_data(data, &spec, seed)?;
    if dataset.items.first().is_some_and(|i| i.image.channels() != meta.vit.channels) {
        return Err(CliError::config(format!("model expects {}-channel images", meta.vit.channels)));
    }
    let codes = model.encode_items(&dataset, dataset.split(split)?, &meta.normalization)?;
    write_code_set(out, &codes)?;
    println!("wrote {} codes of {} bits to {}", codes.len(), codes.bits(), out.display());
    Ok(())
}

pub fn eval(query: &Path, database: &Path, cutoff: Option<usize>, exclude_self: bool, pr_out: Option<&Path>) -> CliResult<()> {
    let q = read_code_set(query)?;
    let db = read_code_set(database)?;
    let cutoff = cutoff.unwrap_or(db.len());
    if cutoff == 0 {
        return Err(CliError::config("cutoff must be positive"));
    }
    let report = map_at_k(&q, &db, MapOptions { exclude_self, ..MapOptions::at(cutoff) })?;
    println!("mAP@{} = {:.6}", report.cutoff, report.map);
    if let Some(path) = pr_out {
        write_pr(&q, &db, exclude_self, Some(path))?;
    }
    Ok(())
}

fn write_pr(q: &vts_core::retrieval::BinaryCodeSet, db: &vts_core::retrieval::BinaryCodeSet, exclude_self: bool, out: Option<&Path>) -> CliResult<()> {
    let curve = compute_pr(q, db, exclude_self)?;
    let csv = curve.to_csv();
    match out {
        Some(path) => {
            check_parent(path, "output")?;
            std::fs::write(path, csv).map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))?;
            eprintln!(
                "wrote {} ({} queries, {} without relevant items skipped)",
                path.display(),
                curve.evaluated_queries,
                curve.skipped_queries
            );
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn pr_curve(query: &Path, database: &Path, exclude_self: bool, out: Option<&Path>) -> CliResult<()> {
    write_pr(&read_code_set(query)?, &read_code_set(database)?, exclude_self, out)
}

pub fn make_synth(cfg: &SynthConfig, protocol: Option<&str>, split_seed: u64, out: &Path) -> CliResult<()> {
    check_parent(out, "output")?;
    let mut dataset = synth_dataset(cfg)?;
    if let Some(p) = protocol {
        let spec = ProtocolSpec::resolve(p).as_config()?;
        dataset = apply_protocol(dataset, &spec, split_seed)?;
    }
    write_dataset(out, &dataset)?;
    println!("wrote {} items ({} classes) to {}", dataset.len(), dataset.num_classes, out.display());
    Ok(())
}

pub fn inspect(path: &Path) -> CliResult<()> {
    let mut magic = [0u8; 4];
    let head = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let n = head.len().min(4);
    magic[..n].copy_from_slice(&head[..n]);
    drop(head);
    if &magic == WEIGHTS_MAGIC {
        let tensors = read_weights(path)?;
        let mut total = 0;
        for t in &tensors {
            total += t.data.len();
            println!("{:<28} {:>14} {:>9}", t.name, format!("{:?}", t.shape), t.data.len());
        }
        println!("{} tensors, {total} values", tensors.len());
        let side = sidecar_path(path);
        if let Ok(text) = std::fs::read_to_string(&side) {
            println!("sidecar {}:\n{}", side.display(), text.trim_end());
        }
    } else if &magic == CODES_MAGIC {
        let codes = read_code_set(path)?;
        println!("code set: {} items, {} bits", codes.len(), codes.bits());
        for i in 0..codes.len().min(5) {
            println!("{:>8} {:?} {}", codes.id(i), codes.labels(i), codes.code(i).to_bit_string());
        }
    } else if &magic == DATASET_MAGIC {
        let d = read_dataset(path)?;
        let size = d.image_size().unwrap_or(0);
        let channels = d.items.first().map_or(0, |i| i.image.channels());
        println!("dataset: {} items, {} classes, {size}x{size}x{channels} images", d.len(), d.num_classes);
        if let (Some(s), Some(p)) = (&d.splits, &d.protocol) {
            println!("splits ({p}): {} train, {} query, {} database", s.train.len(), s.query.len(), s.database.len());
        }
    } else {
        return Err(CliError::data(format!("{}: not a VTSW, VTSC or VTSD file", path.display())));
    }
    Ok(())
}
