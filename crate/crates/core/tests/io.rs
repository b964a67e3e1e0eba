use lsr_core::apm::{aab_annotate, ApnInput, ApnModel};
use lsr_core::eval::{AblationRow, ScoreReport, SeedOutcome};
use lsr_core::io::*;
use lsr_core::mapping::{EncoderMode, EncoderModel, LatentTuple, LossConfig};
use lsr_core::roadmap::{build_lsr, Clustering};
use lsr_core::task::{generate_dataset, NoiseModel, TaskKind};
use lsr_core::{LsrError, MetricKind};
use tempfile::tempdir;

fn quantized(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| quantize(x)).collect()
}

fn small_latent() -> (EncoderModel, Vec<LatentTuple>) {
    let task = TaskKind::NormalStacking;
    let data = generate_dataset(task, 60, 0.5, 3).unwrap();
    let model = EncoderModel::for_task(task, EncoderMode::Stochastic, 8, 3, 4);
    let latent: Vec<LatentTuple> = model
        .encode_dataset(&data)
        .unwrap()
        .into_iter()
        .map(|mut t| {
            t.z1 = quantized(&t.z1);
            t.z2 = quantized(&t.z2);
            t
        })
        .collect();
    (model, latent)
}

#[test]
fn dataset_round_trip() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("d.lsr");
    let task = TaskKind::RopeBox;
    let mut tuples = generate_dataset(task, 40, 0.6, 9).unwrap();
    for t in &mut tuples {
        t.obs1.features = quantized(&t.obs1.features);
        t.obs2.features = quantized(&t.obs2.features);
    }
    let d = DatasetFile {
        task,
        noise: NoiseModel::for_task(task),
        seed: 9,
        action_fraction: 0.6,
        tuples,
    };
    write_dataset(&path, &d).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), d);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains(&format!("states={}", task.space().len())));
}

#[test]
fn model_round_trip_is_quantized() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("m.lsr");
    let mut m = EncoderModel::for_task(TaskKind::HardStacking, EncoderMode::Deterministic, 7, 5, 11);
    m.loss = Some(LossConfig::default());
    m.final_dm = 2.5;
    write_model(&path, &m).unwrap();
    let back = read_model(&path).unwrap();
    m.params = quantized(&m.params);
    assert_eq!(back, m);
}

#[test]
fn latent_and_roadmap_round_trip() {
    let dir = tempdir().unwrap();
    let (_, latent) = small_latent();
    let lpath = dir.path().join("z.lsr");
    let lf = LatentFile {
        task: Some(TaskKind::NormalStacking),
        dataset_sha256: Some("ab".repeat(32)),
        model_sha256: None,
        tuples: latent.clone(),
    };
    write_latent(&lpath, &lf).unwrap();
    assert_eq!(read_latent(&lpath).unwrap(), lf);

    let mut map = build_lsr(&latent, MetricKind::L1, 0.3, Clustering::AVERAGE).unwrap();
    map.tau = 0.3;
    for r in &mut map.regions {
        r.mu = quantize(r.mu);
        r.sigma = quantize(r.sigma);
        r.epsilon = quantize(r.epsilon);
        r.mean = quantized(&r.mean);
    }
    let annotations = aab_annotate(&map).unwrap();
    let f = RoadmapFile {
        roadmap: map,
        latent_sha256: Some(sha256_file(&lpath).unwrap()),
        annotations: Some(annotations),
    };
    let rpath = dir.path().join("r.lsr");
    write_roadmap(&rpath, &f).unwrap();
    let back = read_roadmap(&rpath).unwrap();
    assert_eq!(back, f);
    assert_eq!(back.roadmap.successors(0), f.roadmap.successors(0));
}

#[test]
fn corrupt_roadmap_names_file() {
    let dir = tempdir().unwrap();
    let (_, latent) = small_latent();
    let map = build_lsr(&latent, MetricKind::L1, 0.3, Clustering::AVERAGE).unwrap();
    let path = dir.path().join("bad.lsr");
    write_roadmap(&path, &RoadmapFile { roadmap: map, latent_sha256: None, annotations: None }).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    // Truncate mid-way through the points section.
    let cut: String = text.lines().take(12).map(|l| format!("{l}\n")).collect();
    std::fs::write(&path, cut).unwrap();
    let err = read_roadmap(&path).unwrap_err();
    assert!(matches!(err, LsrError::Format { .. }));
    assert!(err.to_string().contains("bad.lsr"), "{err}");
    // Region pointing outside the point set.
    let swapped = text.replacen("\t0\t", "\t99999\t", 1);
    std::fs::write(&path, swapped).unwrap();
    assert!(read_roadmap(&path).is_err());
    std::fs::write(&path, "garbage").unwrap();
    assert!(read_roadmap(&path).unwrap_err().to_string().contains("bad.lsr"));
}

#[test]
fn apn_round_trip() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("apn.lsr");
    let mut m = ApnModel::new(TaskKind::NormalStacking, ApnInput::Decoded, 6, 5, 0.3, 2);
    write_apn(&path, &m, 2).unwrap();
    m.params = quantized(&m.params);
    assert_eq!(read_apn(&path).unwrap(), m);
}

#[test]
fn metrics_csv_sorted_and_summarized() {
    let dir = tempdir().unwrap();
    let outcome = |seed: u64, any: f64| SeedOutcome {
        seed,
        final_dm: 1.0,
        min_action_dist: Some(2.0),
        max_no_action_dist: None,
        tau: 0.5,
        regions: 10,
        edges: 20,
        components: 1,
        score: ScoreReport {
            pct_all: any - 1.0,
            pct_any: any,
            pct_trans: 99.0,
            n_queries: 10,
            unreachable: 0,
            truncated: 0,
        },
    };
    let row = |c: &str, seed: u64, any: Option<f64>| AblationRow {
        config: c.into(),
        seed,
        outcome: any.map(|a| outcome(seed, a)),
        error: any.is_none().then(|| "failed".to_string()),
    };
    let rows = vec![row("b", 2, Some(90.0)), row("a", 1, None), row("b", 1, Some(80.0)), row("a", 2, Some(50.0))];
    let s = summarize(&rows);
    assert_eq!(s.iter().map(|r| r.config.as_str()).collect::<Vec<_>>(), ["b", "a"]);
    assert_eq!((s[0].pct_any_mean, s[0].seeds, s[0].failed), (85.0, 2, 0));
    assert!((s[0].pct_any_std - 50f64.sqrt()).abs() < 1e-12);
    assert_eq!((s[1].pct_any_mean, s[1].pct_any_std, s[1].failed), (50.0, 0.0, 1));
    let path = dir.path().join("m.csv");
    write_metrics(&path, &rows).unwrap();
    let mut rd = csv::Reader::from_path(&path).unwrap();
    let back: Vec<MetricRow> = rd.deserialize().collect::<Result<_, _>>().unwrap();
    assert_eq!(back.iter().map(|r| (r.config.as_str(), r.seed)).collect::<Vec<_>>(), [("b", 1), ("b", 2), ("a", 1), ("a", 2)]);
    assert_eq!(back[0].pct_any, Some(80.0));
    assert_eq!(back[2].pct_any, None);
    assert_eq!(back[2].error, "failed");
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("8.00000000e1"));
}

#[test]
fn manifest_hashes_files() {
    let dir = tempdir().unwrap();
    let f = dir.path().join("x.txt");
    std::fs::write(&f, "abc").unwrap();
    let mut m = Manifest::new("t", vec!["t".into()]);
    m.output(&f).unwrap();
    assert_eq!(m.outputs[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    let p = dir.path().join("m.json");
    m.write(&p).unwrap();
    let back: Manifest = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(back, m);
}
