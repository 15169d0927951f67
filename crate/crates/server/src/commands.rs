//! Offline subcommands: simulate, train, report, demo.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use bigthick_core::ml::{Family, MlError};
use bigthick_core::monitoring::{compare, delay_series, summarize, SeriesMetric};
use bigthick_core::plan::ExperimentPlan;
use bigthick_core::service::{Service, ServiceConfig, TrainRequest, TrainingResult};
use bigthick_core::sim::{demo_plan, generate_cohort, run_experiment, CohortConfig, ExperimentResult, Policy, SimConfig};
use bigthick_core::store::SyncPolicy;
use bigthick_core::time::Timestamp;
use chrono::{Duration, NaiveDate};
use serde::Serialize;
use serde_json::json;

use crate::config::ServerConfig;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub struct SimulateArgs {
    pub cohort: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub policy: Policy,
    pub days: Option<u32>,
    pub seed: Option<u64>,
    pub size: Option<usize>,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct SimulationSummary {
    pub policy: Policy,
    pub seed: u64,
    pub participants: usize,
    pub start: NaiveDate,
    pub days: u32,
    pub question_notifications: usize,
    pub answered_rate: f64,
    pub in_class_notifications: usize,
    pub window_coverage: Option<f64>,
    pub trainings: usize,
}

/// Run a cohort through a fresh data directory under `out/data` and write the event log,
/// ground truth and a summary next to it.
pub fn simulate(args: &SimulateArgs) -> anyhow::Result<SimulationSummary> {
    let mut cohort: CohortConfig = match &args.cohort {
        Some(p) => read_json(p)?,
        None => CohortConfig::default(),
    };
    if let Some(d) = args.days {
        cohort.days = d;
    }
    if let Some(s) = args.seed {
        cohort.seed = s;
    }
    if let Some(n) = args.size {
        cohort.size = n;
    }
    let plan: ExperimentPlan = match &args.plan {
        Some(p) => read_json(p)?,
        None => demo_plan(cohort.start, cohort.days.max(1)),
    };
    plan.validate()?;

    let data = args.out.join("data");
    if data.join("stm.log").exists() {
        bail!("{} already holds an experiment; choose an empty --out", data.display());
    }
    std::fs::create_dir_all(&data)?;
    let service_cfg = ServiceConfig { sync: SyncPolicy::OsBuffered, ..ServiceConfig::default() };
    let service = Service::open(&data, service_cfg.clone())?;
    let profiles = generate_cohort(&cohort);
    let sim = SimConfig::with_policy(args.policy);
    log::info!("simulating {} participants for {} days ({:?})", cohort.size, cohort.days, args.policy);
    let mut result = run_experiment(&cohort, &profiles, &plan, &sim, service).map_err(|e| anyhow::anyhow!("{e:?}"))?;
    result.service.flush()?;

    write_json(&args.out.join("cohort.json"), &cohort)?;
    write_json(&args.out.join("plan.json"), &plan)?;
    write_json(&args.out.join("profiles.json"), &profiles)?;
    write_events(&args.out.join("events.jsonl"), &result)?;
    write_ground_truth(&args.out.join("ground_truth.csv"), &result)?;
    write_server_config(&args.out, &service_cfg, &result)?;

    let summary = SimulationSummary {
        policy: args.policy,
        seed: cohort.seed,
        participants: cohort.size,
        start: cohort.start,
        days: cohort.days,
        question_notifications: result.question_notifications().count(),
        answered_rate: result.answered_rate(),
        in_class_notifications: result.in_class_notifications(),
        window_coverage: result.window_coverage(sim.warmup_days),
        trainings: result.trainings.len(),
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn write_events(path: &Path, result: &ExperimentResult) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in &result.events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_ground_truth(path: &Path, result: &ExperimentResult) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in result.export() {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// A `serve` config for the simulated data plus the participant tokens. The simulated
/// calendar is in the past, so the config keeps client clocks on.
fn write_server_config(out: &Path, service: &ServiceConfig, result: &ExperimentResult) -> anyhow::Result<()> {
    let cfg = ServerConfig {
        data_dir: PathBuf::from("data"),
        service: ServiceConfig { client_clock: true, sync: SyncPolicy::EveryAppend, ..service.clone() },
        ..ServerConfig::default()
    };
    write_json(&out.join("server.json"), &cfg)?;
    let tokens: serde_json::Map<String, serde_json::Value> = result
        .profiles
        .iter()
        .map(|p| (p.id.clone(), json!(service.participant_token(&p.id))))
        .collect();
    write_json(&out.join("tokens.json"), &json!({ "researcher": service.researcher_token, "participants": tokens }))
}

pub struct TrainArgs {
    pub config: ServerConfig,
    pub families: Vec<Family>,
    pub install: Option<Family>,
    pub seed: Option<u64>,
    pub now: Option<Timestamp>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct MetricsRow<'a> {
    classifier: &'a str,
    examples: usize,
    test_examples: usize,
    accuracy: f64,
    kappa: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    auc: f64,
}

fn latest_record(service: &Service) -> Option<Timestamp> {
    service.ltm().records().iter().map(|r| r.recorded_at).max()
}

/// Train one or more families on the data directory, print the metrics table and install
/// one model.
pub fn train(args: &TrainArgs) -> anyhow::Result<Vec<TrainingResult>> {
    let mut service = Service::open(&args.config.data_dir, args.config.service.clone())?;
    let now = match args.now.or_else(|| latest_record(&service)) {
        Some(t) => t,
        None => bail!("no records in {}; nothing to train on", args.config.data_dir.display()),
    };
    let install = args.install.unwrap_or(args.families[0]);
    let mut results = Vec::new();
    for family in &args.families {
        let req = TrainRequest { family: Some(*family), seed: args.seed, ..TrainRequest::default() };
        let job = service.prepare_training(&req, now)?;
        let mut result = job.run()?;
        if *family == install {
            let model = result.model.take().ok_or(MlError::EmptyData)?;
            service.install_model(model, now)?;
        }
        results.push(result);
    }
    if !args.families.contains(&install) {
        bail!("--install {} is not among the trained families", install.as_str());
    }
    service.flush()?;

    println!("{:<22} {:>8} {:>8} {:>9} {:>8} {:>8} {:>8}", "Classifier", "Accuracy", "Kappa", "Precision", "Recall", "F1", "AUC");
    let mut csv_out = args.report.as_ref().map(csv::Writer::from_path).transpose()?;
    for r in &results {
        let Some(m) = &r.metrics else {
            println!("{:<22} (not enough data for a held-out split)", r.family.display_name());
            continue;
        };
        println!(
            "{:<22} {:>8.4} {:>8.4} {:>9.4} {:>8.4} {:>8.4} {:>8.4}",
            r.family.display_name(),
            m.accuracy,
            m.kappa,
            m.precision,
            m.recall,
            m.f1,
            m.auc
        );
        if let Some(w) = csv_out.as_mut() {
            w.serialize(MetricsRow {
                classifier: r.family.as_str(),
                examples: r.examples,
                test_examples: r.test_examples,
                accuracy: m.accuracy,
                kappa: m.kappa,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                auc: m.auc,
            })?;
        }
    }
    if let Some(mut w) = csv_out {
        w.flush()?;
    }
    println!("installed {} model in {}", install.as_str(), args.config.data_dir.display());
    Ok(results)
}

pub struct ReportArgs {
    pub config: ServerConfig,
    pub out: PathBuf,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    participant: &'a str,
    from: NaiveDate,
    to: NaiveDate,
    sent: u32,
    answered: u32,
    expired: u32,
    skipped: u32,
    completion_rate: f64,
    mean_delay_minutes: f64,
    sensor_tasks: u32,
    sensor_records: u32,
}

#[derive(Serialize)]
struct DayRow<'a> {
    participant: &'a str,
    date: NaiveDate,
    sent: u32,
    answered: u32,
    expired: u32,
    skipped: u32,
    sensor_records: u32,
}

/// Write `summary.csv`, `daily.csv`, `compare.csv` and `delays.csv` under `out`. Returns the
/// written paths.
pub fn report(args: &ReportArgs) -> anyhow::Result<Vec<PathBuf>> {
    let service = Service::open(&args.config.data_dir, args.config.service.clone())?;
    let schedule = service.stm().schedule();
    let from = args.from.or_else(|| schedule.plans.values().map(|p| p.start).min());
    let to = args.to.or_else(|| schedule.plans.values().map(|p| p.end).max());
    let (Some(from), Some(to)) = (from, to) else {
        bail!("no plans in {}; pass --from and --to", args.config.data_dir.display());
    };
    if to < from {
        bail!("--to precedes --from");
    }
    std::fs::create_dir_all(&args.out)?;
    let participants = service.participants();
    let ltm = service.ltm();

    let summary_path = args.out.join("summary.csv");
    let daily_path = args.out.join("daily.csv");
    let mut summary = csv::Writer::from_path(&summary_path)?;
    let mut daily = csv::Writer::from_path(&daily_path)?;
    for p in &participants {
        let s = summarize(p, schedule, ltm, from, to);
        summary.serialize(SummaryRow {
            participant: p,
            from,
            to,
            sent: s.sent,
            answered: s.answered,
            expired: s.expired,
            skipped: s.skipped,
            completion_rate: s.completion_rate,
            mean_delay_minutes: s.mean_delay_minutes,
            sensor_tasks: s.sensor_tasks,
            sensor_records: s.total_sensor_records(),
        })?;
        for d in &s.days {
            daily.serialize(DayRow {
                participant: p,
                date: d.date,
                sent: d.sent,
                answered: d.answered,
                expired: d.expired,
                skipped: d.skipped,
                sensor_records: d.sensor_records.values().sum(),
            })?;
        }
    }
    summary.flush()?;
    daily.flush()?;

    // comparison series in wide form: one row per day, one column per participant
    let compare_path = args.out.join("compare.csv");
    let mut w = csv::Writer::from_path(&compare_path)?;
    let mut header = vec!["metric".to_string(), "date".to_string()];
    header.extend(participants.iter().cloned());
    w.write_record(&header)?;
    for metric in [SeriesMetric::Sent, SeriesMetric::Answered, SeriesMetric::Expired, SeriesMetric::SensorRecords] {
        let c = compare(&participants, metric, schedule, ltm, from, to);
        let name = serde_json::to_value(metric)?.as_str().unwrap_or_default().to_string();
        for day in 0..c.days {
            let mut row = vec![name.clone(), (c.from + Duration::days(day as i64)).to_string()];
            row.extend(c.series.iter().map(|s| s.values[day].to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let delays_path = args.out.join("delays.csv");
    let mut w = csv::Writer::from_path(&delays_path)?;
    w.write_record(["participant", "action_id", "notified_at", "delay_minutes", "activity", "location", "mood"])?;
    for p in &participants {
        for d in delay_series(p, schedule, ltm) {
            w.write_record([
                p.as_str(),
                &d.action_id,
                &d.notified_at.to_rfc3339(),
                &d.delay_minutes.to_string(),
                d.activity.as_deref().unwrap_or(""),
                d.location.as_deref().unwrap_or(""),
                d.mood.as_deref().unwrap_or(""),
            ])?;
        }
    }
    w.flush()?;
    Ok(vec![summary_path, daily_path, compare_path, delays_path])
}
