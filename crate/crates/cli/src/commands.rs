use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use r1lab_core::eval::{self, compare_models, evaluate_policy, EvalOptions, MetricsReport};
use r1lab_core::grpo::{train_rlvr, train_sft, RlvrLogRow, TrainingContext};
use r1lab_core::io::{read_json, read_jsonl, write_json, write_jsonl, Checkpoint, RunManifest};
use r1lab_core::pipeline::{build_demonstrations, StudyConfig};
use r1lab_core::policy::{PolicyParams, TokenPolicy};
use r1lab_core::task::{generate_dataset, Demonstration, Sample, SampleRecord, Split};
use r1lab_core::transcript::{normalize_label, parse_transcript, total_reward, AliasTable, Transcript};
use r1lab_core::{Error, Result};

use crate::{Cli, Command, Mode};

const CONFIG_FILE: &str = "config.json";
const REASONING_DEMOS: &str = "demos_reasoning.jsonl";
const ANSWER_ONLY_DEMOS: &str = "demos_answer_only.jsonl";

pub fn run(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out)?;
    let started = Instant::now();
    match &cli.command {
        Command::GenData => gen_data(cli, started),
        Command::Train {
            mode,
            data,
            init,
            from_scratch,
            name,
        } => train(cli, *mode, data, init.as_deref(), *from_scratch, name.as_deref(), started),
        Command::Eval {
            checkpoints,
            data,
            with_base,
        } => evaluate(cli, checkpoints, data, *with_base, started),
        Command::Score { transcripts, aliases } => score(cli, transcripts, aliases.as_deref(), started),
        Command::Report { eval_dirs } => report(cli, eval_dirs, started),
    }
}

fn say(cli: &Cli, line: impl AsRef<str>) {
    if !cli.quiet {
        println!("{}", line.as_ref());
    }
}

/// `--config` (or the defaults) with `--seed` applied.
fn study_config(cli: &Cli) -> Result<StudyConfig> {
    let config: StudyConfig = match &cli.config {
        Some(path) => read_json(path)?,
        None => StudyConfig::default(),
    };
    let config = match cli.seed {
        Some(seed) => config.with_seed(seed),
        None => config,
    };
    config.validate()?;
    Ok(config)
}

fn config_hash(config: &StudyConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(config)?)))
}

fn finish(
    cli: &Cli,
    command: &str,
    config: &StudyConfig,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    manifest_name: &str,
    started: Instant,
) -> Result<()> {
    let manifest = RunManifest::build(
        command,
        &config_hash(config)?,
        config.trainer.seed,
        inputs,
        outputs,
        &cli.out,
        started.elapsed().as_secs_f64(),
    )?;
    manifest.write_atomic(&cli.out.join(manifest_name))
}

fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

fn gen_data(cli: &Cli, started: Instant) -> Result<()> {
    let config = study_config(cli)?;
    let dataset = generate_dataset(&config.data)?;
    let (reasoning, answer_only) = build_demonstrations(&config.data, &dataset)?;

    let mut outputs = vec![cli.out.join(CONFIG_FILE)];
    write_json(&outputs[0], &config)?;
    for split in Split::ALL {
        let path = split_path(&cli.out, split);
        let records: Vec<SampleRecord> = dataset.split(split).iter().map(SampleRecord::from).collect();
        write_jsonl(&path, &records)?;
        say(cli, format!("{split}: {} samples", records.len()));
        outputs.push(path);
    }
    for (file, demos) in [(REASONING_DEMOS, &reasoning), (ANSWER_ONLY_DEMOS, &answer_only)] {
        let path = cli.out.join(file);
        write_jsonl(&path, demos)?;
        say(cli, format!("{file}: {} demonstrations", demos.len()));
        outputs.push(path);
    }
    let inputs: Vec<PathBuf> = cli.config.iter().cloned().collect();
    finish(cli, "gen-data", &config, &inputs, &outputs, "gen-data.manifest.json", started)
}

/// A directory written by `gen-data`.
struct DataDir {
    config: StudyConfig,
    policy: TokenPolicy,
    aliases: AliasTable,
}

impl DataDir {
    fn open(dir: &Path) -> Result<Self> {
        let config: StudyConfig = read_json(&dir.join(CONFIG_FILE))?;
        config.validate()?;
        let policy = TokenPolicy::new(config.data.vocab()?);
        let aliases = AliasTable::standard(&config.data.taxonomy()?);
        Ok(Self { config, policy, aliases })
    }

    fn samples(&self, dir: &Path, split: Split) -> Result<Vec<Sample>> {
        let path = split_path(dir, split);
        if !path.is_file() {
            return Err(Error::Data(format!("missing split file {}", path.display())));
        }
        let taxonomy = self.aliases.taxonomy();
        read_jsonl::<SampleRecord>(&path)?
            .into_iter()
            .map(|r| {
                if r.split != split {
                    return Err(Error::Data(format!("sample {} in {} is tagged {}", r.id, path.display(), r.split)));
                }
                r.into_sample(&self.config.data, taxonomy)
            })
            .collect()
    }
}

fn load_checkpoint(path: &Path, policy: &TokenPolicy) -> Result<PolicyParams> {
    Checkpoint::load(path)?.into_params(policy)
}

#[allow(clippy::too_many_arguments)]
fn train(
    cli: &Cli,
    mode: Mode,
    data: &Path,
    init: Option<&Path>,
    from_scratch: bool,
    name: Option<&str>,
    started: Instant,
) -> Result<()> {
    if mode == Mode::Rlvr && init.is_none() && !from_scratch {
        return Err(Error::Argument(
            "rlvr needs --init <cold-start checkpoint>; pass --from-scratch to start from the uniform policy".into(),
        ));
    }
    let dir = DataDir::open(data)?;
    // trainer settings come from --config when given, else from the data dir
    let mut config = dir.config.clone();
    if cli.config.is_some() {
        config.trainer = study_config(cli)?.trainer;
    }
    if let Some(seed) = cli.seed {
        config.trainer.seed = seed;
    }
    config.trainer.validate()?;

    let policy = &dir.policy;
    let start = match init {
        Some(path) => load_checkpoint(path, policy)?,
        None => PolicyParams::zeros(policy),
    };
    let ctx = TrainingContext {
        policy,
        aliases: &dir.aliases,
        config: &config.trainer,
    };
    let train = dir.samples(data, Split::IdTrain)?;
    let name = name.unwrap_or(mode.default_name());
    let ckpt_path = cli.out.join(format!("{name}.ckpt.json"));
    let log_path = cli.out.join(format!("{name}.log.csv"));
    let mut inputs = vec![data.join(CONFIG_FILE), split_path(data, Split::IdTrain)];
    inputs.extend(init.map(Path::to_path_buf));

    let (params, log) = match mode {
        Mode::SftReasoning | Mode::SftAnswerOnly => {
            let file = if mode == Mode::SftReasoning { REASONING_DEMOS } else { ANSWER_ONLY_DEMOS };
            let demos: Vec<Demonstration> = read_jsonl(&data.join(file))?;
            inputs.push(data.join(file));
            let out = train_sft(&start, ctx, &demos, &train)?;
            let mut log = String::from("epoch,mean_loglik\n");
            for (i, ll) in out.epoch_loglik.iter().enumerate() {
                log.push_str(&format!("{},{ll:.12}\n", i + 1));
            }
            if let Some(ll) = out.epoch_loglik.last() {
                say(cli, format!("{name}: {} demonstrations, final mean log-likelihood {ll:.4}", demos.len()));
            }
            (out.params, log)
        }
        Mode::Rlvr => {
            let out = train_rlvr(&start, ctx, &train)?;
            let mut log = format!("{}\n", RlvrLogRow::CSV_HEADER);
            for row in &out.log {
                log.push_str(&row.to_csv());
                log.push('\n');
            }
            if let Some(row) = out.log.last() {
                say(
                    cli,
                    format!(
                        "{name}: {} steps, final mean reward {:.3}, format {:.3}, kl {:.4}",
                        config.trainer.rlvr_steps, row.mean_reward, row.mean_format_reward, row.mean_kl
                    ),
                );
            }
            (out.params, log)
        }
    };
    Checkpoint::new(policy, &params).save(&ckpt_path)?;
    fs::write(&log_path, log)?;
    say(cli, format!("wrote {}", ckpt_path.display()));
    finish(
        cli,
        "train",
        &config,
        &inputs,
        &[ckpt_path, log_path],
        &format!("{name}.manifest.json"),
        started,
    )
}

fn model_name(path: &Path) -> String {
    let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    file.strip_suffix(".ckpt.json")
        .or_else(|| file.strip_suffix(".json"))
        .unwrap_or(&file)
        .to_string()
}

fn evaluate(cli: &Cli, checkpoints: &[PathBuf], data: &Path, with_base: bool, started: Instant) -> Result<()> {
    let dir = DataDir::open(data)?;
    let splits = [Split::IdTest, Split::OodTest];
    let samples: Vec<Vec<Sample>> = splits.iter().map(|&s| dir.samples(data, s)).collect::<Result<_>>()?;

    let mut models: Vec<(String, PolicyParams)> = Vec::new();
    if with_base {
        models.push(("base".into(), PolicyParams::zeros(&dir.policy)));
    }
    for path in checkpoints {
        models.push((model_name(path), load_checkpoint(path, &dir.policy)?));
    }
    let options = EvalOptions {
        max_len: dir.config.trainer.max_len,
        ..EvalOptions::default()
    };
    let reports_dir = cli.out.join("reports");
    let records_dir = cli.out.join("records");
    fs::create_dir_all(&reports_dir)?;
    fs::create_dir_all(&records_dir)?;
    let mut outputs = Vec::new();
    let mut reports = Vec::new();
    for (name, params) in &models {
        for (split, samples) in splits.iter().zip(&samples) {
            let eval = evaluate_policy(&dir.policy, params, samples, &dir.aliases, options, name)?;
            let report_path = reports_dir.join(format!("{name}.{split}.json"));
            let records_path = records_dir.join(format!("{name}.{split}.jsonl"));
            write_json(&report_path, &eval.report)?;
            write_jsonl(&records_path, &eval.records)?;
            outputs.extend([report_path, records_path]);
            reports.push(eval.report);
        }
    }
    let table = compare_models(&reports)?;
    let csv_path = cli.out.join("comparison.csv");
    let text_path = cli.out.join("comparison.txt");
    fs::write(&csv_path, table.to_csv())?;
    fs::write(&text_path, table.to_text())?;
    say(cli, table.to_text());
    outputs.extend([csv_path, text_path]);

    let mut inputs = vec![data.join(CONFIG_FILE)];
    inputs.extend(splits.iter().map(|&s| split_path(data, s)));
    inputs.extend(checkpoints.iter().cloned());
    finish(cli, "eval", &dir.config, &inputs, &outputs, "eval.manifest.json", started)
}

#[derive(Debug, Deserialize)]
struct ScoreInput {
    id: String,
    transcript: String,
    label: String,
}

#[derive(Debug, Serialize)]
struct ScoreLine {
    id: String,
    r_acc: u8,
    r_format: u8,
    r_total: u8,
    kl_penalty: f64,
    parsed_answer: String,
    matched_label: Option<String>,
}

/// Aggregate over the scored file; the metrics are absent for empty input.
#[derive(Debug, Serialize)]
struct ScoreReport {
    n: usize,
    mean_r_acc: Option<f64>,
    mean_r_format: Option<f64>,
    metrics: Option<MetricsReport>,
}

fn score(cli: &Cli, transcripts: &Path, aliases: Option<&Path>, started: Instant) -> Result<()> {
    let config = study_config(cli)?;
    let taxonomy = config.data.taxonomy()?;
    let vocab = config.data.vocab()?;
    let table = match aliases {
        Some(path) => AliasTable::with_aliases(&taxonomy, &read_json::<BTreeMap<String, String>>(path)?)?,
        None => AliasTable::standard(&taxonomy),
    };
    let inputs: Vec<ScoreInput> = read_jsonl(transcripts)?;

    let mut lines = Vec::with_capacity(inputs.len());
    let mut records = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.into_iter().enumerate() {
        let gt = taxonomy.by_name(&input.label).ok_or_else(|| {
            Error::Data(format!("record {} (id {}): unknown label `{}`", i + 1, input.id, input.label))
        })?;
        let transcript = Transcript::Text(input.transcript);
        let parsed = parse_transcript(&transcript, &vocab);
        let breakdown = total_reward(&transcript, gt, &vocab, &table);
        let matched = if parsed.well_formed {
            normalize_label(&parsed.answer_content, &table).map(|l| l.name.clone())
        } else {
            None
        };
        let Transcript::Text(text) = transcript else { unreachable!() };
        lines.push(ScoreLine {
            id: input.id.clone(),
            r_acc: breakdown.r_acc,
            r_format: breakdown.r_format,
            r_total: breakdown.r_total,
            kl_penalty: breakdown.kl_penalty,
            parsed_answer: parsed.answer_content.clone(),
            matched_label: matched.clone(),
        });
        records.push(eval::SampleRecord {
            id: input.id,
            transcript: text,
            parsed_answer: parsed.answer_content,
            matched_label: matched,
            gt_label: gt.name.clone(),
            r_acc: breakdown.r_acc,
            r_format: breakdown.r_format,
        });
    }
    let n = lines.len();
    let mean = |f: fn(&ScoreLine) -> u8| (n > 0).then(|| lines.iter().map(|l| f64::from(f(l))).sum::<f64>() / n as f64);
    let mean_r_format = mean(|l| l.r_format);
    let metrics = match mean_r_format {
        Some(format_rate) => {
            let cm = eval::tally(&records, &table)?;
            Some(MetricsReport::from_confusion("external", "scored", cm, format_rate)?)
        }
        None => None,
    };
    let summary = ScoreReport {
        n,
        mean_r_acc: mean(|l| l.r_acc),
        mean_r_format,
        metrics,
    };
    let lines_path = cli.out.join("scores.jsonl");
    let report_path = cli.out.join("score_report.json");
    write_jsonl(&lines_path, &lines)?;
    write_json(&report_path, &summary)?;
    match &summary.metrics {
        Some(m) => say(cli, format!("scored {n} transcripts: WAR {:.4} UAR {:.4} format {:.4}", m.war, m.uar, m.format_rate)),
        None => say(cli, "scored 0 transcripts"),
    }
    let mut inputs = vec![transcripts.to_path_buf()];
    inputs.extend(aliases.map(Path::to_path_buf));
    finish(cli, "score", &config, &inputs, &[lines_path, report_path], "score.manifest.json", started)
}

fn report(cli: &Cli, eval_dirs: &[PathBuf], started: Instant) -> Result<()> {
    let mut inputs = Vec::new();
    let mut reports: Vec<MetricsReport> = Vec::new();
    for dir in eval_dirs {
        let reports_dir = dir.join("reports");
        let mut paths: Vec<PathBuf> = fs::read_dir(&reports_dir)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", reports_dir.display())))?
            .map(|entry| entry.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
        paths.sort();
        for path in paths {
            reports.push(read_json(&path)?);
            inputs.push(path);
        }
    }
    // keep the pipeline's model order where the names are known
    let rank = |m: &str| {
        r1lab_core::pipeline::MODEL_NAMES
            .iter()
            .position(|n| *n == m)
            .unwrap_or(usize::MAX)
    };
    reports.sort_by(|a, b| rank(&a.model).cmp(&rank(&b.model)).then(a.model.cmp(&b.model)));
    let table = compare_models(&reports)?;
    let csv_path = cli.out.join("report.csv");
    let text_path = cli.out.join("report.txt");
    fs::write(&csv_path, table.to_csv())?;
    fs::write(&text_path, table.to_text())?;
    say(cli, table.to_text());
    let config = study_config(cli)?;
    finish(cli, "report", &config, &inputs, &[csv_path, text_path], "report.manifest.json", started)
}
