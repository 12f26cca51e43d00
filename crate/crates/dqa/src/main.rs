use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use dqa_core::agreement_stats::{kappa_batch, ContingencyTable, KappaDenominator, KappaOptions, KappaResult};
use dqa_core::analysis_report::{analyze, check_key_released, render_report, AnalysisOptions, ArmFilter};
use dqa_core::beat_model::{fit_beats, reconstruct, time_grid, BasisConfig, BeatJob, BeatModelFit, FitOptions, NonlinearParams};
use dqa_core::distortion_metrics::{distortion, WaveletConfig, WaveletFilter};
use dqa_core::session::{export_csv, export_jsonl, ResponseLog, ResponseRecord, SessionService};
use dqa_core::signal_io::{extract_strip, load_record, write_csv, Record, RecordFormat};
use dqa_core::study_builder::{build_study, validate_study, BlindingKey, StudyConfig, StudyManifest};
use dqa_core::synth::{synthetic_record, RecordRecipe};
use dqa_core::Execution;

#[derive(Parser)]
#[command(name = "dqa", version, about = "Diagnostic quality assessment for low-dimensional ECG representations")]
struct Cli {
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a recording to the record JSON used by the other commands.
    Ingest {
        path: PathBuf,
        /// csv, or binary (path is then the JSON header).
        #[arg(long, default_value = "csv")]
        format: RecordFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the beat model to beat windows of a record.
    Fit {
        record: PathBuf,
        /// JSON with optional `basis` and `options` objects.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON list of windows: {lead, t_start, duration, init?}.
        #[arg(long)]
        beats: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PRD, WWPRD and WEDD between an original and a reconstruction.
    Metrics {
        x: PathBuf,
        y: PathBuf,
        /// JSON array of WWPRD subband weights in the order d1 (finest) .. dL, aL.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Lead to compare when the inputs are records.
        #[arg(long)]
        lead: Option<String>,
        #[arg(long, default_value_t = 5)]
        levels: usize,
        #[arg(long, default_value = "db4")]
        wavelet: WaveletFilter,
        /// Use the raw signal energy in the PRD denominator.
        #[arg(long)]
        keep_mean: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cohen's kappa for one contingency table or a JSON list of tables.
    Kappa {
        table: PathBuf,
        #[arg(long, value_enum, default_value_t = Denominator::Classical)]
        denominator: Denominator,
    },
    /// Build, check and unseal blinded studies.
    Study {
        #[command(subcommand)]
        command: StudyCommand,
    },
    /// Serve a study to raters over HTTP.
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
    /// Write the live responses of a study store.
    Export {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum, default_value_t = ExportFormat::Jsonl)]
        format: ExportFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unblinded agreement analysis of collected responses.
    Analyze {
        /// Response log or export (JSON lines).
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Presentations that enter the inter-rater comparison.
        #[arg(long, value_enum, default_value_t = Arms::Both)]
        inter_rater_arms: Arms,
        #[arg(long, value_enum, default_value_t = Denominator::Classical)]
        denominator: Denominator,
    },
    /// Generate synthetic originals and reconstructions plus a study config.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 26)]
        records: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum StudyCommand {
    Build {
        /// Study config plus `originals` and `reconstructions` record directories.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        key: PathBuf,
    },
    /// Check a manifest against its key.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        key: PathBuf,
    },
    /// Mark the key as released once data collection is over.
    Unseal {
        #[arg(long)]
        key: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Denominator {
    Classical,
    Printed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arms {
    Both,
    Original,
    Reconstructed,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn kappa_options(d: Denominator) -> KappaOptions {
    KappaOptions {
        denominator: match d {
            Denominator::Classical => KappaDenominator::Classical,
            Denominator::Printed => KappaDenominator::Printed,
        },
        ..KappaOptions::default()
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FitConfig {
    basis: BasisConfig,
    options: FitOptions,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BeatWindow {
    lead: String,
    t_start: f64,
    duration: f64,
    /// Times relative to the window start; defaults to a sinus-beat guess.
    #[serde(default)]
    init: Option<NonlinearParams>,
}

#[derive(Debug, Serialize)]
struct WindowFit {
    lead: String,
    t_start: f64,
    duration: f64,
    fit: Option<BeatModelFit>,
    /// Reconstruction on the window's sample grid.
    samples: Option<Vec<f64>>,
    error: Option<String>,
}

fn fit(record: &Path, config: Option<&Path>, beats: &Path, out: &Path, exec: Execution) -> Result<()> {
    let record = Record::read_json(record)?;
    let config: FitConfig = config.map(read_json).transpose()?.unwrap_or_default();
    let windows: Vec<BeatWindow> = read_json(beats)?;
    let jobs = windows
        .iter()
        .map(|w| {
            let beat = extract_strip(&record, &w.lead, w.t_start, w.duration)?;
            let init = w
                .init
                .clone()
                .unwrap_or_else(|| NonlinearParams::default_for_window(w.duration, config.basis.n_sigmoid));
            Ok(BeatJob { beat, init })
        })
        .collect::<Result<Vec<_>>>()?;
    let fits = fit_beats(&jobs, &config.basis, &config.options, exec);
    let mut failed = 0;
    let rows: Vec<WindowFit> = windows
        .into_iter()
        .zip(jobs)
        .zip(fits)
        .map(|((w, job), fit)| {
            let (fit, samples, error) = match fit {
                Ok(f) => {
                    let s = reconstruct(&f, &time_grid(job.beat.samples.len(), job.beat.fs));
                    (Some(f), Some(s), None)
                }
                Err(e) => {
                    failed += 1;
                    (None, None, Some(e.to_string()))
                }
            };
            WindowFit {
                lead: w.lead,
                t_start: w.t_start,
                duration: w.duration,
                fit,
                samples,
                error,
            }
        })
        .collect();
    write_json(out, &rows)?;
    eprintln!("fitted {} of {} windows", rows.len() - failed, rows.len());
    Ok(())
}

/// A bare array, an object with `samples`, or a record JSON.
fn load_signal(path: &Path, lead: Option<&str>) -> Result<Vec<f64>> {
    let value: Value = read_json(path)?;
    if value.is_array() {
        return Ok(serde_json::from_value(value)?);
    }
    if value.get("leads").is_some() {
        let record: Record = serde_json::from_value(value)?;
        let lead = match (lead, record.leads.as_slice()) {
            (Some(name), _) => record
                .lead(name)
                .with_context(|| format!("{} has no lead {name}", path.display()))?,
            (None, [only]) => only,
            (None, _) => bail!("{} has several leads; pick one with --lead", path.display()),
        };
        return Ok(lead.samples.clone());
    }
    if let Some(samples) = value.get("samples") {
        return Ok(serde_json::from_value(samples.clone())?);
    }
    bail!("{}: expected a sample array, an object with samples, or a record", path.display())
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TableInput {
    One(ContingencyTable),
    Many(Vec<ContingencyTable>),
}

#[derive(Debug, Serialize)]
struct KappaOutput {
    #[serde(flatten)]
    result: KappaResult,
    cell: String,
    ci_cell: String,
}

fn kappa_output(result: KappaResult) -> KappaOutput {
    KappaOutput {
        cell: result.cell(),
        ci_cell: result.ci_cell(),
        result,
    }
}

/// `dqa study build` input: the study config plus where the records live.
#[derive(Debug, Deserialize)]
struct StudyInput {
    #[serde(flatten)]
    study: StudyConfig,
    /// Directory of `<record id>.json` (or `.csv`) files, relative to the config.
    originals: PathBuf,
    reconstructions: PathBuf,
}

fn load_records(dir: &Path, ids: &[String]) -> Result<Vec<Record>> {
    ids.iter()
        .map(|id| {
            let json = dir.join(format!("{id}.json"));
            let csv = dir.join(format!("{id}.csv"));
            let record = if json.exists() {
                Record::read_json(&json)?
            } else if csv.exists() {
                load_record(&csv, RecordFormat::ColumnarCsv)?
            } else {
                bail!("no {id}.json or {id}.csv in {}", dir.display())
            };
            Ok(record)
        })
        .collect()
}

fn study_build(config: &Path, out: &Path, key_path: &Path) -> Result<()> {
    let input: StudyInput = read_json(config)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let ids: Vec<String> = input.study.records.iter().map(|r| r.id.clone()).collect();
    let originals = load_records(&base.join(&input.originals), &ids)?;
    let reconstructions = load_records(&base.join(&input.reconstructions), &ids)?;
    let (manifest, key) = build_study(&input.study, &originals, &reconstructions)?;
    manifest.write_json(out)?;
    key.write_json(key_path)?;
    let strips: usize = manifest.presentations.iter().map(|p| p.n_leads()).sum();
    println!(
        "{} presentations ({} strips) in {} subsets of sizes {:?}",
        manifest.presentations.len(),
        strips,
        manifest.n_subsets,
        manifest.subset_sizes()
    );
    Ok(())
}

fn synth(out_dir: &Path, n: usize, seed: u64) -> Result<()> {
    let originals = out_dir.join("originals");
    let reconstructions = out_dir.join("reconstructions");
    fs::create_dir_all(&originals)?;
    fs::create_dir_all(&reconstructions)?;
    let mut specs = Vec::new();
    for i in 0..n {
        let id = format!("rec{:03}", i + 1);
        let recipe = RecordRecipe {
            id: id.clone(),
            rr: 0.75 + 0.05 * (i % 5) as f64,
            seed: seed.wrapping_add(i as u64),
            ..RecordRecipe::default()
        };
        // the original carries drift and noise; the stand-in reconstruction is the clean model signal
        let noisy = RecordRecipe {
            drift_mv: 0.15,
            noise_mv: 0.02,
            ..recipe.clone()
        };
        let mut f = fs::File::create(originals.join(format!("{id}.csv")))?;
        write_csv(&synthetic_record(&noisy), &mut f)?;
        let mut f = fs::File::create(reconstructions.join(format!("{id}.csv")))?;
        write_csv(&synthetic_record(&recipe), &mut f)?;
        specs.push(serde_json::json!({
            "id": id, "leads": ["I", "II", "V1"], "t_start": 0.0, "duration": 8.0
        }));
    }
    let config = serde_json::json!({
        "study_id": "synthetic",
        "records": specs,
        "n_duplicates": 6.min(n),
        "n_subsets": 4,
        "seed": seed,
        "raters": [
            {"id": "C1", "token": "c1-token"},
            {"id": "C2", "token": "c2-token"},
            {"id": "C3", "token": "c3-token"}
        ],
        "admin_token": "admin-token",
        "originals": "originals",
        "reconstructions": "reconstructions"
    });
    write_json(&out_dir.join("study.json"), &config)?;
    println!("wrote {n} record pairs and study.json to {}", out_dir.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Ingest { path, format, out } => {
            let record = load_record(&path, format)?;
            record.write_json(&out)?;
            println!(
                "{}: {} leads, {} samples at {} Hz",
                record.id,
                record.leads.len(),
                record.len(),
                record.fs
            );
        }
        Command::Fit {
            record,
            config,
            beats,
            out,
        } => fit(&record, config.as_deref(), &beats, &out, exec)?,
        Command::Metrics {
            x,
            y,
            weights,
            lead,
            levels,
            wavelet,
            keep_mean,
            out,
        } => {
            let xs = load_signal(&x, lead.as_deref())?;
            let ys = load_signal(&y, lead.as_deref())?;
            let weights: Option<Vec<f64>> = weights.as_deref().map(read_json).transpose()?;
            let cfg = WaveletConfig {
                levels,
                filter: wavelet,
                ..WaveletConfig::default()
            };
            let result = distortion(&xs, &ys, weights.as_deref(), &cfg, !keep_mean)?;
            match out {
                Some(out) => write_json(&out, &result)?,
                None => println!("{}", serde_json::to_string_pretty(&result)?),
            }
        }
        Command::Kappa { table, denominator } => {
            let opts = kappa_options(denominator);
            let text = match read_json::<TableInput>(&table)? {
                TableInput::One(t) => {
                    let r = kappa_batch(std::slice::from_ref(&t), &opts, exec).remove(0);
                    serde_json::to_string_pretty(&kappa_output(r))?
                }
                TableInput::Many(ts) => {
                    let rs: Vec<KappaOutput> = kappa_batch(&ts, &opts, exec).into_iter().map(kappa_output).collect();
                    serde_json::to_string_pretty(&rs)?
                }
            };
            println!("{text}");
        }
        Command::Study { command } => match command {
            StudyCommand::Build { config, out, key } => study_build(&config, &out, &key)?,
            StudyCommand::Validate { manifest, key } => {
                let manifest = StudyManifest::read_json(&manifest)?;
                let key = BlindingKey::read_json(&key)?;
                let violations = validate_study(&manifest, &key)?;
                for v in &violations {
                    println!("{v}");
                }
                if !violations.is_empty() {
                    bail!("{} violations", violations.len());
                }
                println!("ok: {} presentations", manifest.presentations.len());
            }
            StudyCommand::Unseal { key } => {
                let mut k = BlindingKey::read_json(&key)?;
                k.unseal(chrono::Utc::now());
                k.write_json(&key)?;
                println!("unsealed at {}", k.unsealed_at.expect("just set").to_rfc3339());
            }
        },
        Command::Serve {
            manifest,
            store,
            port,
            host,
        } => {
            let manifest = StudyManifest::read_json(&manifest)?;
            let service = Arc::new(SessionService::open(manifest, &store)?);
            let addr = SocketAddr::new(host, port);
            let runtime = tokio::runtime::Runtime::new()?;
            eprintln!("serving on http://{addr}");
            runtime
                .block_on(dqa_server::serve(service, addr))
                .with_context(|| format!("serving on {addr}"))?;
        }
        Command::Export {
            manifest,
            store,
            format,
            out,
        } => {
            let manifest = StudyManifest::read_json(&manifest)?;
            let rows = SessionService::with_log(manifest, ResponseLog::open(&store)?).export();
            let text = match format {
                ExportFormat::Jsonl => export_jsonl(&rows)?,
                ExportFormat::Csv => export_csv(&rows)?,
            };
            fs::write(&out, text)?;
            println!("{} rows", rows.len());
        }
        Command::Analyze {
            responses,
            key,
            out,
            inter_rater_arms,
            denominator,
        } => {
            let responses = ResponseRecord::read_jsonl(&responses)?;
            let key = BlindingKey::read_json(&key)?;
            check_key_released(&key, &responses)?;
            let opts = AnalysisOptions {
                inter_rater_arms: match inter_rater_arms {
                    Arms::Both => ArmFilter::Both,
                    Arms::Original => ArmFilter::Original,
                    Arms::Reconstructed => ArmFilter::Reconstructed,
                },
                kappa: kappa_options(denominator),
            };
            let report = analyze(&responses, &key, &opts)?;
            for r in [&report.between_method, &report.inter_rater, &report.within_observer] {
                for w in &r.warnings {
                    eprintln!("{}: {w}", r.analysis.name());
                }
            }
            let files = render_report(&report, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Command::Synth { out_dir, records, seed } => synth(&out_dir, records, seed)?,
    }
    Ok(())
}
