use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use sardino::advtrain::{train, train_surrogate, write_log_csv, SurrogateConfig};
use sardino::attacks::{
    auc_from_scores, baseline_thresholds, default_thresholds, defense_curve, defense_votes, ensemble_ood_scores, roc_auc,
    roc_points, softmax_ood_scores, surrogate_attack_batch, write_defense_csv, write_roc_csv, DefenseCurvePoint, Defender,
    Renewal, RocPoint,
};
use sardino::ensemble::{accuracy, majority_accuracy};
use sardino::hypernet::{generate_ensemble, load_model, mean_weight_variance, save_model, AuditLog, ModelFile};
use sardino::pipeline::{collect_profile, inject_stream, run_pipeline, split_profile, RunMetrics, SardinoConfig};
use sardino::planner::{read_profile_csv, write_profile_csv, ModelKind, PredictorModel};
use sardino::plot::{Chart, Series};
use sardino::Result;

#[derive(Parser)]
#[command(name = "sardino", version, about = "Per-frame ensemble renewal with deadline-aware sizing")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; every section optional.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<SardinoConfig> {
        match &self.config {
            Some(p) => SardinoConfig::load(p),
            None => Ok(SardinoConfig::default()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Dt,
    Lr,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Defense,
    Roc,
    Metrics,
}

#[derive(Subcommand)]
enum Cmd {
    /// Adversarially train the HyperNet and attack network.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "model.srdn")]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Override the diversity-loss weight (0 disables it).
        #[arg(long)]
        j2_weight: Option<f64>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Collect a simulated latency profile (N, U0..U9, P0..P9, latency_ms).
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "profile.csv")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a latency predictor on the training split of a profile.
    FitPredictor {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "dt")]
        model: Model,
        #[arg(long)]
        with_power: bool,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "predictor.json")]
        out: PathBuf,
    },
    /// Surrogate-ensemble attack against static and per-input-renewed ensembles.
    EvalAttack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        eps: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value = "defense")]
        out_prefix: PathBuf,
    },
    /// Consistency-based OOD detection against the softmax baseline.
    EvalOod {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, num_args = 1.., default_values_t = [20usize, 100])]
        n: Vec<usize>,
        #[arg(long, default_value = "roc")]
        out_prefix: PathBuf,
    },
    /// Accuracy of individual generated DNNs and of the majority vote.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0.95)]
        min_accuracy: f64,
    },
    /// Simulated end-to-end run; writes metrics CSV, audit log and trace SVGs.
    Run {
        #[command(flatten)]
        common: Common,
        /// Trained model; without it the run is timing-only.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Predictor JSON; fitted from a fresh profile when absent.
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
    },
    /// Render a curve or metrics CSV as SVG.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long = "in", num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train { common, out, steps, j2_weight, log } => {
            let mut cfg = common.load()?;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(w) = j2_weight {
                cfg.train.j2_weight = w;
            }
            cfg.train.validate()?;
            let (train_set, val) = cfg.dataset.load_train()?;
            info!("training {} steps on {} images", cfg.train.steps, train_set.len());
            let outcome = train(&cfg.hypernet, &cfg.train, &train_set, &val)?;
            if let Some(last) = outcome.log.iter().rev().find(|r| r.val_acc.is_some()) {
                info!("step {}: J1 {:.4} J2 {:.6} val {:.4}", last.step, last.j1, last.j2, last.val_acc.unwrap_or(0.0));
            }
            if let Some(p) = log {
                write_log_csv(&outcome.log, p)?;
            }
            save_model(&out, &ModelFile { hypernet: outcome.hypernet, attack: Some(outcome.attack) })?;
            info!("wrote {}", out.display());
        }
        Cmd::Profile { common, out, seed } => {
            let cfg = common.load()?;
            let samples = collect_profile(&cfg.simulator, &cfg.planner.grid, seed.unwrap_or(cfg.planner.profile_seed))?;
            write_profile_csv(&samples, &out)?;
            info!("wrote {} samples to {}", samples.len(), out.display());
        }
        Cmd::FitPredictor { common, model, with_power, input, out } => {
            let cfg = common.load()?;
            let samples = read_profile_csv(&input)?;
            let (train_s, test_s) = split_profile(&samples, 4, cfg.planner.split_seed);
            let kind = match model {
                Model::Dt => ModelKind::Dt,
                Model::Lr => ModelKind::Lr,
            };
            let p = PredictorModel::fit(kind, &train_s, with_power, cfg.planner.tree)?;
            println!("train {} / test {}: test RMSE {:.4} ms", train_s.len(), test_s.len(), p.rmse(&test_s)?);
            p.save(&out)?;
        }
        Cmd::EvalAttack { common, model, eps, steps, samples, n, out_prefix } => {
            let cfg = common.load()?;
            let h = load_model(&model)?.hypernet;
            let spec = &h.spec.target;
            let test = cfg.dataset.load_test()?;
            let clean = test.slice(0, samples.min(test.len()));
            let labels: Vec<usize> = clean.labels.iter().map(|&y| y as usize).collect();
            let thr = default_thresholds();
            let stat = Defender { hypernet: &h, n, thresholds: thr.clone(), renewal: Renewal::Static, base_seed: cfg.pipeline.run.base_seed };
            let attack = |members| -> Result<Vec<f32>> {
                Ok(surrogate_attack_batch(spec, members, &clean.images, &labels, eps, steps, eps / 4.0)?.into_iter().flat_map(|r| r.x_adv).collect())
            };
            // Static: the attacker holds the deployed ensemble. MTD: the attacker holds
            // an ensemble from the same HyperNet, but the defender renews per input.
            let known = stat.static_members()?;
            let static_curve = defense_curve(&defense_votes(&stat, &clean, &attack(&known)?)?, spec.classes, &thr)?;
            let (own, _) = generate_ensemble(&h, 0, cfg.pipeline.run.base_seed ^ 0xD1CE, n)?;
            let mtd = Defender { renewal: Renewal::Mtd, ..stat };
            let mtd_curve = defense_curve(&defense_votes(&mtd, &clean, &attack(&own)?)?, spec.classes, &thr)?;
            println!("T_s    static SDR/FPR     MTD SDR/FPR");
            for (s, m) in static_curve.iter().zip(&mtd_curve) {
                println!("{:.2}   {:.3} / {:.3}      {:.3} / {:.3}", s.t_s, s.sdr, s.fpr, m.sdr, m.fpr);
            }
            let p_static = with_suffix(&out_prefix, "_static.csv");
            let p_mtd = with_suffix(&out_prefix, "_mtd.csv");
            write_defense_csv(&static_curve, &p_static)?;
            write_defense_csv(&mtd_curve, &p_mtd)?;
            defense_chart(&[("static".into(), static_curve), ("MTD".into(), mtd_curve)]).save(with_suffix(&out_prefix, ".svg"))?;
        }
        Cmd::EvalOod { common, model, samples, n, out_prefix } => {
            let cfg = common.load()?;
            let h = load_model(&model)?.hypernet;
            let spec = &h.spec.target;
            let test = cfg.dataset.load_test()?;
            let ood = cfg.dataset.load_ood()?;
            let (inn, out) = (test.slice(0, samples.min(test.len())), ood.slice(0, samples.min(ood.len())));
            let mut curves = Vec::new();
            for &size in &n {
                let (members, _) = generate_ensemble(&h, 0, cfg.pipeline.run.base_seed, size)?;
                let scores = ensemble_ood_scores(spec, &members, &inn, &out)?;
                let roc = roc_points(&scores, &default_thresholds(), true);
                println!("ensemble N={size}: AUC {:.4} (swept ROC {:.4})", auc_from_scores(&scores), roc_auc(&roc));
                write_roc_csv(&roc, with_suffix(&out_prefix, &format!("_n{size}.csv")))?;
                curves.push((format!("ensemble N={size}"), roc));
            }
            let (single, _) = generate_ensemble(&h, 0, cfg.pipeline.run.base_seed, 1)?;
            let s = softmax_ood_scores(spec, &single[0], &inn, &out)?;
            let roc = roc_points(&s, &baseline_thresholds(), false);
            println!("softmax baseline: AUC {:.4} (swept ROC {:.4})", auc_from_scores(&s), roc_auc(&roc));
            write_roc_csv(&roc, with_suffix(&out_prefix, "_softmax.csv"))?;
            curves.push(("softmax".into(), roc));
            roc_chart(&curves).save(with_suffix(&out_prefix, ".svg"))?;
        }
        Cmd::Validate { common, model, n, min_accuracy } => {
            let cfg = common.load()?;
            let h = load_model(&model)?.hypernet;
            let test = cfg.dataset.load_test()?;
            let (members, _) = generate_ensemble(&h, 0, cfg.pipeline.run.base_seed, n)?;
            let accs = members.iter().map(|m| accuracy(&h.spec.target, m, &test)).collect::<Result<Vec<_>>>()?;
            let lo = accs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = accs.iter().cloned().fold(0.0, f64::max);
            println!("{n} generated DNNs: min {lo:.4} max {hi:.4} spread {:.2} pp", 100.0 * (hi - lo));
            println!("majority vote: {:.4}", majority_accuracy(&h.spec.target, &members, &test)?);
            println!("weight variance: {:.4e}", mean_weight_variance(&members));
            if lo < min_accuracy {
                return Err(sardino::Error::BadArgument(format!("lowest member accuracy {lo:.4} < {min_accuracy}")));
            }
        }
        Cmd::Run { common, model, predictor, frames, out_dir } => run(common.load()?, model, predictor, frames, &out_dir)?,
        Cmd::Plot { kind, input, out } => {
            let chart = match kind {
                PlotKind::Defense => defense_chart(&input.iter().map(|p| Ok((stem(p), read_csv(p)?))).collect::<Result<Vec<_>>>()?),
                PlotKind::Roc => roc_chart(&input.iter().map(|p| Ok((stem(p), read_csv(p)?))).collect::<Result<Vec<_>>>()?),
                PlotKind::Metrics => {
                    let path = input.first().ok_or_else(|| sardino::Error::BadArgument("no input".into()))?;
                    frame_time_chart(&read_csv::<MetricsRow>(path)?, None)
                }
            };
            chart.save(&out)?;
        }
    }
    Ok(())
}

fn run(cfg: SardinoConfig, model: Option<PathBuf>, predictor: Option<PathBuf>, frames: Option<usize>, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let predictor = match predictor {
        Some(p) => PredictorModel::load(p)?,
        None => {
            let samples = collect_profile(&cfg.simulator, &cfg.planner.grid, cfg.planner.profile_seed)?;
            let (train_s, test_s) = split_profile(&samples, 4, cfg.planner.split_seed);
            let p = PredictorModel::fit(cfg.planner.model, &train_s, cfg.planner.with_power, cfg.planner.tree)?;
            info!("fitted predictor, test RMSE {:.3} ms", p.rmse(&test_s)?);
            p
        }
    };
    let mut stream_cfg = cfg.pipeline.stream.clone();
    if let Some(f) = frames {
        stream_cfg.frames = f;
    }
    let mut run_cfg = cfg.pipeline.run.clone();
    let hypernet = model.map(|p| load_model(p)).transpose()?.map(|m| m.hypernet);
    run_cfg.execute = hypernet.is_some();
    let test = cfg.dataset.load_test()?;
    let ood = if stream_cfg.mix.ood > 0.0 { Some(cfg.dataset.load_ood()?) } else { None };
    let surrogate = if stream_cfg.mix.adversarial > 0.0 {
        info!("training softmax surrogate for adversarial crops");
        let (train_set, _) = cfg.dataset.load_train()?;
        Some(train_surrogate(&cfg.hypernet.target, &SurrogateConfig::default(), &train_set)?)
    } else {
        None
    };
    let spec = cfg.hypernet.target.clone();
    let stream = inject_stream(
        &test,
        ood.as_ref(),
        |x, y| {
            let w = surrogate.as_ref().expect("surrogate exists when adversarial crops are requested");
            Ok(surrogate_attack_batch(&spec, std::slice::from_ref(w), x, &[y], 0.3, 10, 0.075)?.remove(0).x_adv)
        },
        &stream_cfg,
    )?;
    let mut audit = AuditLog::create(out_dir.join("audit.bin"))?;
    let metrics = run_pipeline(&run_cfg, &stream, &cfg.simulator, &predictor, hypernet.as_ref(), Some(&mut audit))?;
    audit.flush()?;
    metrics.write_csv(out_dir.join("metrics.csv"))?;
    println!(
        "{} frames: mean {:.2} ms (period {:.2}), max {:.2} ms, deadline hit {:.1}%, mean N {:.1}",
        metrics.frames.len(),
        metrics.mean_time_ms(),
        metrics.period_ms,
        metrics.max_time_ms(),
        100.0 * metrics.hit_rate(),
        metrics.mean_n()
    );
    let rows: Vec<MetricsRow> = metrics.frames.iter().map(|f| MetricsRow { frame: f.frame as f64, latency_ms: f.latency_ms, planned_n: f.planned_n as f64 }).collect();
    frame_time_chart(&rows, Some(metrics.period_ms)).save(out_dir.join("frame_time.svg"))?;
    ensemble_size_chart(&rows).save(out_dir.join("ensemble_size.svg"))?;
    flagged_summary(&metrics);
    Ok(())
}

fn flagged_summary(m: &RunMetrics) {
    let crops: usize = m.frames.iter().map(|f| f.crops.len()).sum();
    let flagged: usize = m.frames.iter().map(|f| f.n_flagged).sum();
    if crops > 0 {
        println!("{flagged} of {crops} crops flagged to the operator");
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn defense_chart(curves: &[(String, Vec<DefenseCurvePoint>)]) -> Chart {
    let mut series = Vec::new();
    for (name, c) in curves {
        series.push(Series::line(format!("{name} SDR"), c.iter().map(|p| (p.t_s, p.sdr)).collect()));
        series.push(Series::line(format!("{name} FPR"), c.iter().map(|p| (p.t_s, p.fpr)).collect()));
    }
    Chart {
        title: "Defense vs consistency threshold".into(),
        x_label: "T_s".into(),
        y_label: "rate".into(),
        series,
        y_range: Some((0.0, 1.0)),
        ..Default::default()
    }
}

fn roc_chart(curves: &[(String, Vec<RocPoint>)]) -> Chart {
    let series = curves
        .iter()
        .map(|(name, c)| {
            let mut pts: Vec<(f64, f64)> = c.iter().map(|p| (p.fpr, p.tpr)).collect();
            pts.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
            Series::line(name.clone(), pts)
        })
        .collect();
    Chart {
        title: "OOD detection ROC".into(),
        x_label: "false positive rate".into(),
        y_label: "true positive rate".into(),
        series,
        x_range: Some((0.0, 1.0)),
        y_range: Some((0.0, 1.0)),
        ..Default::default()
    }
}

#[derive(serde::Deserialize)]
struct MetricsRow {
    frame: f64,
    latency_ms: f64,
    #[serde(rename = "planned_N")]
    planned_n: f64,
}

fn frame_time_chart(rows: &[MetricsRow], period_ms: Option<f64>) -> Chart {
    Chart {
        title: "Per-frame processing time".into(),
        x_label: "frame".into(),
        y_label: "time (ms)".into(),
        series: vec![Series::line("frame time", rows.iter().map(|r| (r.frame, r.latency_ms)).collect())],
        hlines: period_ms.map(|p| vec![(p, format!("period {p:.1} ms"))]).unwrap_or_default(),
        ..Default::default()
    }
}

fn ensemble_size_chart(rows: &[MetricsRow]) -> Chart {
    Chart {
        title: "Planned ensemble size".into(),
        x_label: "frame".into(),
        y_label: "N".into(),
        series: vec![Series::scatter("planned N", rows.iter().map(|r| (r.frame, r.planned_n)).collect())],
        ..Default::default()
    }
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}
