mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sardino::ensemble::{decide_with_classes, ensemble_classify};
use sardino::hypernet::{read_records, replay_ensemble, AuditLog, HyperNetParams, HyperNetSpec};
use sardino::nncore::{ImageShape, TargetNetSpec};
use sardino::pipeline::{
    inject_stream, run_pipeline, BackgroundLoadModel, CountLaw, CropTag, Dataset, DetectorLaw, FrameEvent, LoadLaw,
    MixRatios, OraclePredictor, PipelineConfig, StreamConfig,
};
use sardino::Error;

fn tiny_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ImageShape { channels: 1, height: 10, width: 10 };
    let images = (0..n * shape.len()).map(|_| rng.random::<f32>()).collect();
    let labels = (0..n).map(|_| rng.random_range(0..3u8)).collect();
    Dataset::new(shape, images, labels).unwrap()
}

fn tiny_hypernet() -> HyperNetParams<f32> {
    let spec = HyperNetSpec {
        target: TargetNetSpec::new(ImageShape { channels: 1, height: 10, width: 10 }, [2, 2], 3, 3).unwrap(),
        latent_dim: 8,
        code_dim: 4,
        encoder_hidden: vec![8],
        generator_hidden: vec![8],
    };
    HyperNetParams::init(&spec, 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
}

fn stream(frames: usize, fps: f64, crops: CountLaw, detector: DetectorLaw) -> Vec<FrameEvent> {
    let cfg = StreamConfig { frames, fps, detector, crops, mix: MixRatios::default(), seed: 3 };
    inject_stream(&tiny_data(20, 0), None, |x, _| Ok(x.to_vec()), &cfg).unwrap()
}

fn timing_only(fps: f64) -> PipelineConfig {
    PipelineConfig { fps, execute: false, plan_overhead_ms: 0.0, decide_overhead_ms: 0.0, ..Default::default() }
}

#[test]
fn oracle_predictor_with_noiseless_simulator_hits_every_deadline_at_max_n() {
    let model = BackgroundLoadModel::default().noiseless();
    let oracle = OraclePredictor { model: model.clone() };
    let frames = stream(300, 25.0, CountLaw::Uniform { min: 1, max: 3 }, DetectorLaw::Uniform { min_ms: 5.0, max_ms: 25.0 });
    let cfg = timing_only(25.0);
    let m = run_pipeline(&cfg, &frames, &model, &oracle, None, None).unwrap();
    assert_eq!(m.hit_rate(), 1.0);
    for f in &m.frames {
        let d = f.deadline_ms.unwrap();
        let best = (cfg.n_min..=cfg.n_max).rev().find(|&n| model.mean_latency(n, f.load) <= d).unwrap_or(cfg.n_min);
        assert_eq!(f.planned_n, best, "frame {}", f.frame);
    }
}

#[test]
fn empty_frames_cost_only_detection_and_overloaded_frames_have_no_budget() {
    let model = BackgroundLoadModel::default();
    let oracle = OraclePredictor { model: model.clone() };
    let frames = stream(5, 25.0, CountLaw::Constant { k: 0 }, DetectorLaw::Constant { ms: 12.0 });
    let m = run_pipeline(&timing_only(25.0), &frames, &model, &oracle, None, None).unwrap();
    assert!(m.frames.iter().all(|f| f.latency_ms == 12.0 && f.planned_n == 0 && f.met_deadline && f.crops.is_empty()));

    let frames = stream(5, 25.0, CountLaw::Constant { k: 2 }, DetectorLaw::Constant { ms: 45.0 });
    let m = run_pipeline(&timing_only(25.0), &frames, &model, &oracle, None, None).unwrap();
    assert!(m.frames.iter().all(|f| f.no_budget && f.planned_n == 0 && f.n_flagged == 2 && !f.met_deadline));
}

#[test]
fn frame_time_is_detection_plus_crop_costs_and_runs_are_deterministic() {
    let model = BackgroundLoadModel::default();
    let oracle = OraclePredictor { model: model.clone() };
    let frames = stream(200, 25.0, CountLaw::Poisson { mean: 2.0, max: 9 }, DetectorLaw::Uniform { min_ms: 8.0, max_ms: 20.0 });
    let cfg = PipelineConfig { execute: false, ..Default::default() };
    let a = run_pipeline(&cfg, &frames, &model, &oracle, None, None).unwrap();
    let b = run_pipeline(&cfg, &frames, &model, &oracle, None, None).unwrap();
    assert_eq!(a, b);
    for f in &a.frames {
        let sum: f64 = f.crops.iter().map(|c| c.latency_ms).sum();
        assert!((f.latency_ms - (f.t_d_ms + sum)).abs() < 1e-9);
        assert!(f.crops.iter().all(|c| c.latency_ms >= cfg.plan_overhead_ms + cfg.decide_overhead_ms));
    }
}

#[test]
fn hit_rate_does_not_rise_with_frame_rate_in_noiseless_mode() {
    let model = BackgroundLoadModel::default().noiseless();
    let oracle = OraclePredictor { model: model.clone() };
    let mut prev = f64::INFINITY;
    for fps in [10.0, 20.0, 30.0, 45.0, 60.0, 90.0] {
        let frames = stream(200, fps, CountLaw::Uniform { min: 1, max: 4 }, DetectorLaw::Uniform { min_ms: 2.0, max_ms: 20.0 });
        let rate = run_pipeline(&timing_only(fps), &frames, &model, &oracle, None, None).unwrap().hit_rate();
        assert!(rate <= prev, "fps {fps}: {rate} > {prev}");
        prev = rate;
    }
}

#[test]
fn stream_mixes_and_stress_mode() {
    let clean = tiny_data(30, 1);
    let ood = tiny_data(30, 2);
    let all_clean = StreamConfig { frames: 50, crops: CountLaw::Constant { k: 9 }, ..Default::default() };
    let s = inject_stream(&clean, None, |_, _| unreachable!(), &all_clean).unwrap();
    assert!(s.iter().all(|f| f.k == 9 && f.crops.len() == 9));
    assert!(s.iter().flat_map(|f| &f.crops).all(|c| c.tag == CropTag::Clean && c.label.is_some()));

    let mixed = StreamConfig { mix: MixRatios { clean: 0.4, adversarial: 0.3, ood: 0.3 }, ..all_clean.clone() };
    let flip = |x: &[f32], _| Ok(x.iter().map(|v| 1.0 - v).collect());
    let a = inject_stream(&clean, Some(&ood), flip, &mixed).unwrap();
    assert_eq!(a, inject_stream(&clean, Some(&ood), flip, &mixed).unwrap());
    let count = |t| a.iter().flat_map(|f| &f.crops).filter(|c| c.tag == t).count();
    assert!(count(CropTag::Clean) > 100 && count(CropTag::Adversarial) > 80 && count(CropTag::Ood) > 80);
    assert!(a.iter().flat_map(|f| &f.crops).filter(|c| c.tag == CropTag::Ood).all(|c| c.label.is_none()));

    let bad = StreamConfig { mix: MixRatios { clean: 0.5, adversarial: 0.2, ood: 0.2 }, ..all_clean.clone() };
    assert!(matches!(inject_stream(&clean, None, flip, &bad), Err(Error::BadConfig(_))));
    assert!(matches!(inject_stream(&clean, None, flip, &mixed), Err(Error::BadConfig(_))));
}

#[test]
fn executed_run_logs_replayable_seeds() {
    let h = tiny_hypernet();
    let model = BackgroundLoadModel::default();
    let oracle = OraclePredictor { model: model.clone() };
    let clean = tiny_data(20, 5);
    let cfg = StreamConfig { frames: 12, crops: CountLaw::Uniform { min: 0, max: 3 }, ..Default::default() };
    let frames = inject_stream(&clean, None, |x, _| Ok(x.to_vec()), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.bin");
    let run = PipelineConfig { n_max: 12, load: LoadLaw::Constant { level: 0.3 }, ..Default::default() };
    let metrics = {
        let mut log = AuditLog::create(&path).unwrap();
        run_pipeline(&run, &frames, &model, &oracle, Some(&h), Some(&mut log)).unwrap()
    };
    let records = read_records(&path).unwrap();
    let executed: Vec<_> = metrics.frames.iter().filter(|f| f.planned_n > 0).collect();
    assert_eq!(records.len(), executed.len());
    for (f, r) in executed.iter().zip(&records) {
        assert_eq!(f.seed.as_ref(), Some(r));
        assert_eq!(r.n as usize, f.planned_n);
        let members = replay_ensemble(&h, r).unwrap();
        for (crop, outcome) in frames[f.frame as usize].crops.iter().zip(&f.crops) {
            let labels = ensemble_classify(&h.spec.target, &members, &crop.image).unwrap();
            let v = decide_with_classes(&labels, h.spec.target.classes, run.t_s).unwrap();
            assert_eq!(outcome.verdict.as_ref(), Some(&v));
        }
    }
    let csv_path = dir.path().join("metrics.csv");
    metrics.write_csv(&csv_path).unwrap();
    let text = std::fs::read_to_string(csv_path).unwrap();
    assert!(text.starts_with("frame,t_d_ms,k,deadline_ms,planned_N,latency_ms,met_deadline,n_flagged\n"));
    assert_eq!(text.lines().count(), 13);
}

#[test]
fn bad_pipeline_configs_are_rejected() {
    let model = BackgroundLoadModel::default();
    let oracle = OraclePredictor { model: model.clone() };
    let frames = stream(2, 25.0, CountLaw::Constant { k: 1 }, DetectorLaw::Constant { ms: 1.0 });
    for cfg in [
        PipelineConfig { n_min: 0, ..timing_only(25.0) },
        PipelineConfig { n_min: 10, n_max: 5, ..timing_only(25.0) },
        PipelineConfig { fps: 0.0, ..timing_only(25.0) },
        PipelineConfig { execute: true, ..timing_only(25.0) },
    ] {
        assert!(matches!(run_pipeline(&cfg, &frames, &model, &oracle, None, None), Err(Error::BadConfig(_))));
    }
}
