//! Subcommand implementations.

use crate::{Cli, Command};
use msquid_core::byteclass::histogram;
use msquid_core::cnn::{
    classify, encode_input, load_model, save_model, train, CnnModel, Tensor, TrainConfig,
    TrainError,
};
use msquid_core::dataset::{
    append_manifest, find_profile, load_manifest, synth_chunks, SampleRecord,
};
use msquid_core::hilbert::{capacity, emit_png, layout};
use msquid_core::label::{Family, Label};
use msquid_core::metrics::{confusion, per_family_accuracy, report_csv};
use msquid_core::pcap::{
    build_schedule, chunk_bytes, chunk_stream, extract_payload, parse_pcap, replay, ChannelSink,
    ChannelSource, PayloadChunk,
};
use msquid_core::pipeline::{run_pipeline, PipelineConfig};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug)]
pub enum CliError {
    /// Unusable input or flags: exit 2.
    Input(String),
    /// A training guard refused to proceed: exit 3.
    Guard(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Guard(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Guard(m) => m,
        }
    }
}

fn input_err(message: impl Into<String>) -> CliError {
    CliError::Input(message.into())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Visualize { input, out_dir, scale, hex_dump } => {
            cmd_visualize(cli, input, out_dir, *scale, *hex_dump)
        }
        Command::Synth { profile, count, label, out_dir, manifest, chunk_len } => {
            cmd_synth(cli, profile, *count, label.as_deref(), out_dir, manifest.as_deref(), *chunk_len)
        }
        Command::Train { manifest, iterations, batch_size, learning_rate, momentum, out, loss_trace } => {
            cmd_train(cli, manifest, *iterations, *batch_size, *learning_rate, *momentum, out, loss_trace.as_deref())
        }
        Command::Evaluate { manifest, model, report, pretty } => {
            cmd_evaluate(cli, manifest, model, report.as_deref(), *pretty)
        }
        Command::Detect { input, model, speed, out, queue_capacity, workers, reject_dir } => {
            cmd_detect(cli, input, model, *speed, out.as_deref(), *queue_capacity, *workers, reject_dir.clone())
        }
    }
}

fn source_id_for(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".to_string())
}

/// Load a sample file as payload chunks: `.pcap` goes through parsing and
/// payload extraction, anything else is chunked as raw bytes. Packets whose
/// payload cannot be extracted (unsupported protocols) are skipped and
/// counted, not fatal.
fn load_sample_chunks(
    path: &Path,
    chunk_capacity: usize,
    quiet: bool,
) -> Result<Vec<PayloadChunk>, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
    let source_id = source_id_for(path);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pcap")) {
        let packets = parse_pcap(&bytes)
            .map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        let mut skipped = 0usize;
        let payloads: Vec<(f64, Vec<u8>)> = packets
            .iter()
            .filter_map(|pkt| match extract_payload(pkt) {
                Ok(payload) => Some((pkt.timestamp(), payload)),
                Err(_) => {
                    skipped += 1;
                    None
                }
            })
            .collect();
        if skipped > 0 && !quiet {
            eprintln!("{}: skipped {skipped} packet(s) without extractable payload", path.display());
        }
        Ok(chunk_stream(payloads, chunk_capacity, &source_id))
    } else {
        Ok(chunk_bytes(&bytes, chunk_capacity, &source_id))
    }
}

fn cmd_visualize(
    cli: &Cli,
    input: &Path,
    out_dir: &Path,
    scale: u32,
    hex_dump: bool,
) -> Result<(), CliError> {
    if scale < 1 {
        return Err(input_err("--scale must be >= 1"));
    }
    let chunk_capacity = capacity(cli.order) as usize;
    let chunks = load_sample_chunks(input, chunk_capacity, cli.quiet)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| input_err(format!("cannot create {}: {e}", out_dir.display())))?;

    let mut hist_csv = String::from("null,printable,control,extended,full,total\n");
    for chunk in &chunks {
        let img = layout(chunk, cli.order)
            .map_err(|e| input_err(format!("{}: chunk {}: {e}", input.display(), chunk.seq_no)))?;
        let png = emit_png(&img, scale);
        let png_path = out_dir.join(format!("{}_{}.png", chunk.source_id, chunk.seq_no));
        fs::write(&png_path, png)
            .map_err(|e| input_err(format!("cannot write {}: {e}", png_path.display())))?;
        let h = histogram(&chunk.bytes).expect("chunks are non-empty");
        hist_csv.push_str(&h.to_csv_row());
        hist_csv.push('\n');
        if hex_dump {
            let mut text = String::with_capacity(chunk.bytes.len() * 3);
            for row in chunk.bytes.chunks(32) {
                for (i, b) in row.iter().enumerate() {
                    if i > 0 {
                        text.push(' ');
                    }
                    let _ = write!(text, "{b:02x}");
                }
                text.push('\n');
            }
            let hex_path = out_dir.join(format!("{}_{}.hex", chunk.source_id, chunk.seq_no));
            fs::write(&hex_path, text)
                .map_err(|e| input_err(format!("cannot write {}: {e}", hex_path.display())))?;
        }
    }
    let csv_path = out_dir.join(format!("{}_hist.csv", source_id_for(input)));
    fs::write(&csv_path, hist_csv)
        .map_err(|e| input_err(format!("cannot write {}: {e}", csv_path.display())))?;
    if !cli.quiet {
        eprintln!("wrote {} image(s) to {}", chunks.len(), out_dir.display());
    }
    Ok(())
}

fn cmd_synth(
    cli: &Cli,
    profile_name: &str,
    count: usize,
    label: Option<&str>,
    out_dir: &Path,
    manifest: Option<&Path>,
    chunk_len: usize,
) -> Result<(), CliError> {
    let profile = find_profile(profile_name)
        .ok_or_else(|| input_err(format!("unknown profile {profile_name:?} (see `benign`, `nullheavy`, `ddos`, `whiteheavy`)")))?;
    if let Some(label) = label {
        let parsed: Label = label.parse().map_err(|e: String| input_err(e))?;
        if parsed != profile.label() {
            return Err(input_err(format!(
                "--label {parsed} conflicts with profile {} (family {})",
                profile.name, profile.family
            )));
        }
    }
    let chunks = synth_chunks(&profile, count, chunk_len, cli.seed)
        .map_err(|e| input_err(e.to_string()))?;
    fs::create_dir_all(out_dir)
        .map_err(|e| input_err(format!("cannot create {}: {e}", out_dir.display())))?;

    let mut records = Vec::with_capacity(chunks.len());
    for chunk in &chunks {
        let path = out_dir.join(format!("{}_{}.bin", profile.name, chunk.seq_no));
        fs::write(&path, &chunk.bytes)
            .map_err(|e| input_err(format!("cannot write {}: {e}", path.display())))?;
        records.push(SampleRecord {
            path: path.to_string_lossy().into_owned(),
            label: profile.label(),
            family: profile.family,
            source: format!("synth:{}:seed={}", profile.name, cli.seed),
        });
    }
    if let Some(manifest) = manifest {
        append_manifest(&records, manifest).map_err(|e| input_err(e.to_string()))?;
    }
    if !cli.quiet {
        eprintln!("wrote {count} chunk(s) of profile {} to {}", profile.name, out_dir.display());
    }
    Ok(())
}

/// Read every manifest sample into per-chunk labeled tensors.
fn load_labeled_tensors(
    cli: &Cli,
    manifest: &Path,
) -> Result<Vec<(Tensor, Label, Family)>, CliError> {
    if cli.order != 6 {
        return Err(input_err("the classifier input is fixed at order 6 (64x64 cells)"));
    }
    let records = load_manifest(manifest).map_err(|e| input_err(e.to_string()))?;
    let chunk_capacity = capacity(cli.order) as usize;
    let mut samples = Vec::new();
    for record in &records {
        let chunks = load_sample_chunks(Path::new(&record.path), chunk_capacity, cli.quiet)?;
        for chunk in &chunks {
            let img = layout(chunk, cli.order)
                .map_err(|e| input_err(format!("{}: {e}", record.path)))?;
            let x = encode_input(&img).map_err(|e| input_err(format!("{}: {e}", record.path)))?;
            samples.push((x, record.label, record.family));
        }
    }
    Ok(samples)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cli: &Cli,
    manifest: &Path,
    iterations: usize,
    batch_size: usize,
    learning_rate: f64,
    momentum: f64,
    out: &Path,
    loss_trace: Option<&Path>,
) -> Result<(), CliError> {
    if iterations < 1 {
        return Err(input_err("--iterations must be >= 1"));
    }
    if learning_rate.is_nan() || learning_rate <= 0.0 {
        return Err(input_err("--learning-rate must be positive"));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(input_err("--momentum must lie in [0, 1)"));
    }
    let samples = load_labeled_tensors(cli, manifest)?;
    let data: Vec<(Tensor, Label)> = samples.iter().map(|(x, l, _)| (x.clone(), *l)).collect();
    let cfg = TrainConfig {
        iterations,
        batch_size,
        learning_rate,
        momentum,
        seed: cli.seed,
    };
    let model = CnnModel::new(cli.seed);
    let (model, trace) = train(model, &data, &cfg).map_err(|e| match e {
        TrainError::TooFewSamples { label, found, .. } => CliError::Guard(format!(
            "training requires at least 30 images for each class; got {found} {label} image(s)"
        )),
        other => input_err(other.to_string()),
    })?;

    fs::write(out, save_model(&model))
        .map_err(|e| input_err(format!("cannot write {}: {e}", out.display())))?;
    let trace_path = loss_trace
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", out.display())));
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l:.9}");
    }
    fs::write(&trace_path, csv)
        .map_err(|e| input_err(format!("cannot write {}: {e}", trace_path.display())))?;

    // Final accuracy over the training images themselves.
    let mut correct = 0usize;
    for (x, label, _) in &samples {
        let (_, p_malicious) = msquid_core::cnn::forward(&model, x)
            .expect("training tensors match the model input");
        let predicted = if p_malicious >= cli.threshold { Label::Malicious } else { Label::Benign };
        if predicted == *label {
            correct += 1;
        }
    }
    println!(
        "trained {} iterations on {} images; final train accuracy {:.4}",
        trace.len(),
        samples.len(),
        correct as f64 / samples.len() as f64
    );
    Ok(())
}

fn load_model_file(path: &Path) -> Result<CnnModel, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
    load_model(&bytes).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn cmd_evaluate(
    cli: &Cli,
    manifest: &Path,
    model_path: &Path,
    report: Option<&Path>,
    pretty: bool,
) -> Result<(), CliError> {
    if cli.order != 6 {
        return Err(input_err("the classifier input is fixed at order 6 (64x64 cells)"));
    }
    let model = load_model_file(model_path)?;
    let records = load_manifest(manifest).map_err(|e| input_err(e.to_string()))?;
    let chunk_capacity = capacity(cli.order) as usize;

    let mut truth = Vec::new();
    let mut predicted = Vec::new();
    let mut family_rows = Vec::new();
    for record in &records {
        let chunks = load_sample_chunks(Path::new(&record.path), chunk_capacity, cli.quiet)?;
        for chunk in &chunks {
            let img = layout(chunk, cli.order)
                .map_err(|e| input_err(format!("{}: {e}", record.path)))?;
            let (label, _p) = classify(&model, &img, cli.threshold)
                .map_err(|e| input_err(format!("{}: {e}", record.path)))?;
            truth.push(record.label);
            predicted.push(label);
            family_rows.push((record.family, record.label, label));
        }
    }

    let cm = confusion(&truth, &predicted, Label::Malicious)
        .map_err(|e| input_err(e.to_string()))?;
    let families = per_family_accuracy(&family_rows).map_err(|e| input_err(e.to_string()))?;
    let csv = report_csv(&cm, &families).map_err(|e| input_err(e.to_string()))?;

    if pretty {
        print_pretty(&cm, &families);
    } else {
        print!("{csv}");
    }
    if let Some(report) = report {
        fs::write(report, &csv)
            .map_err(|e| input_err(format!("cannot write {}: {e}", report.display())))?;
    }
    Ok(())
}

fn print_pretty(cm: &msquid_core::metrics::ConfusionMatrix, families: &BTreeMap<Family, f64>) {
    println!("  accuracy   precision  recall     f1");
    println!(
        "  {:<10.4} {:<10.4} {:<10.4} {:<10.4}",
        cm.accuracy().unwrap_or(f64::NAN),
        cm.precision().unwrap_or(f64::NAN),
        cm.recall().unwrap_or(f64::NAN),
        cm.f1().unwrap_or(f64::NAN),
    );
    println!("  counts: tp={} tn={} fp={} fn={}", cm.tp, cm.tn, cm.fp, cm.fn_);
    for (family, acc) in families {
        println!("  {family:<10} accuracy {acc:.4}");
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_detect(
    cli: &Cli,
    input: &Path,
    model_path: &Path,
    speed: f64,
    out: Option<&Path>,
    queue_capacity: usize,
    workers: Option<usize>,
    reject_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    if cli.order != 6 {
        return Err(input_err("the classifier input is fixed at order 6 (64x64 cells)"));
    }
    if !input.extension().is_some_and(|e| e.eq_ignore_ascii_case("pcap")) {
        return Err(input_err(format!("{}: detect expects a .pcap capture", input.display())));
    }
    let model = Arc::new(load_model_file(model_path)?);
    let chunk_capacity = capacity(cli.order) as usize;
    let chunks = load_sample_chunks(input, chunk_capacity, cli.quiet)?;
    let schedule = build_schedule(chunks, speed).map_err(|e| input_err(e.to_string()))?;

    let (tx, rx) = crossbeam_channel::bounded(queue_capacity);
    let replay_thread = std::thread::spawn(move || {
        let mut sink = ChannelSink(tx);
        replay(schedule, &mut sink)
    });

    let mut cfg = PipelineConfig {
        order: cli.order,
        threshold: cli.threshold,
        queue_capacity,
        reject_dir,
        ..PipelineConfig::default()
    };
    if let Some(workers) = workers {
        cfg.workers = workers.max(1);
    }
    let mut stream = run_pipeline(ChannelSource(rx), model, cfg);

    let mut sink: Box<dyn std::io::Write> = match out {
        Some(path) => Box::new(
            fs::File::create(path)
                .map_err(|e| input_err(format!("cannot write {}: {e}", path.display())))?,
        ),
        None => Box::new(std::io::stdout()),
    };
    let mut benign = 0u64;
    let mut malicious = 0u64;
    for verdict in stream.by_ref() {
        match verdict.label {
            Label::Benign => benign += 1,
            Label::Malicious => malicious += 1,
        }
        writeln!(sink, "{}", verdict.to_jsonl()).map_err(|e| input_err(e.to_string()))?;
    }
    sink.flush().map_err(|e| input_err(e.to_string()))?;

    let summary = stream.finish().map_err(|e| input_err(e.to_string()))?;
    let _ = replay_thread.join();
    eprintln!(
        "{} chunks: {benign} benign, {malicious} malicious, {} rejected",
        summary.verdicts + summary.rejected,
        summary.rejected
    );
    Ok(())
}
