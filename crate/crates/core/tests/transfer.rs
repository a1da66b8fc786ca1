use std::sync::OnceLock;

use gnn_lab::arch::{ArchKind, ModelState, NetworkSpec};
use gnn_lab::molgraph::{generate_downstream_mix, generate_synthetic_mix, DatasetMix, GeneratorSettings, Split};
use gnn_lab::nn::encode_checkpoint;
use gnn_lab::train::{pretrain, TrainConfig, TrainError};
use gnn_lab::transfer::{
    concat_fingerprints, extract_fingerprints, finetune, molecule_id, noise_task, planted_linear_task, probe,
    probe_seeds, read_cache, read_cache_dir, trim_for_finetune, with_tasks, write_cache, write_cache_dir,
    FinetuneConfig, FingerprintSet, ProbeConfig, TransferError,
};

fn pretrained() -> &'static ModelState {
    static MODEL: OnceLock<ModelState> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mix =
            generate_synthetic_mix(&GeneratorSettings { n_molecules: 150, ..GeneratorSettings::with_seed(0) }).unwrap();
        let spec = NetworkSpec::new(ArchKind::Mpnn, 32, 4).with_heads_for(&mix);
        let cfg = TrainConfig { batch_size: 32, ..TrainConfig::for_arch(ArchKind::Mpnn, 8, 0) };
        pretrain(&spec, &mix, &cfg).unwrap().0
    })
}

fn downstream(n: usize) -> DatasetMix {
    generate_downstream_mix(&GeneratorSettings { n_molecules: n, ..GeneratorSettings::with_seed(7) }).unwrap()
}

fn fingerprints(mix: &DatasetMix, tap: &str) -> FingerprintSet {
    extract_fingerprints(pretrained(), mix, &[tap], "mpnn32").unwrap().remove(0)
}

#[test]
fn extraction_is_deterministic_and_cacheable() {
    let mix = downstream(60);
    let sets =
        extract_fingerprints(pretrained(), &mix, &["graph_output_nn", "task_heads.pcba_1328.layer1"], "m").unwrap();
    assert_eq!(sets.len(), 2);
    assert!(sets.iter().all(|s| s.dim == 32 && s.vectors.len() == 60));
    assert_eq!(
        sets,
        extract_fingerprints(pretrained(), &mix, &["graph_output_nn", "task_heads.pcba_1328.layer1"], "m").unwrap()
    );

    let mut twin = mix.clone();
    twin.molecules[1] = twin.molecules[0].clone();
    let t = fingerprints(&twin, "graph_output_nn");
    assert_eq!(t.vectors[&molecule_id(0)], t.vectors[&molecule_id(1)]);

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("one.mfpc");
    write_cache(&sets[0], &file).unwrap();
    let back = read_cache(&file).unwrap();
    assert_eq!(back.vectors, sets[0].vectors);
    write_cache_dir(&sets, dir.path()).unwrap();
    assert_eq!(read_cache_dir(dir.path()).unwrap(), sets);

    for node_tap in ["core.1", "task_heads.pcqm4m_n4.layer1"] {
        assert!(matches!(
            extract_fingerprints(pretrained(), &mix, &[node_tap], "m"),
            Err(TransferError::NodeLevelTap(_))
        ));
    }
    assert!(matches!(extract_fingerprints(pretrained(), &mix, &["nowhere"], "m"), Err(TransferError::Arch(_))));
}

fn planted(n: usize) -> (DatasetMix, FingerprintSet) {
    let mix = downstream(n);
    let fps = fingerprints(&mix, "graph_output_nn");
    let task = planted_linear_task("planted", &fps, n, 1).unwrap();
    let noise = noise_task("noise", n, 2);
    (with_tasks(&mix, vec![task, noise]).unwrap(), fps)
}

#[test]
fn probe_solves_planted_task_and_ignores_noise() {
    let (mix, fps) = planted(4000);
    let before = encode_checkpoint(&pretrained().params);
    let r = probe(&fps, &mix, "planted", &ProbeConfig::default()).unwrap();
    assert!(r.test_metrics["pearson"].unwrap() > 0.99, "{:?}", r.test_metrics);
    assert!((1..=30).contains(&r.best_epoch));
    assert_eq!(r.epochs.len(), 30);
    assert_eq!(encode_checkpoint(&pretrained().params), before);

    let noise = probe_seeds(&fps, &mix, "noise", &ProbeConfig::default(), &[0, 1, 2]).unwrap();
    for (seed, run) in &noise.runs {
        let a = run.test_metrics["auroc"].unwrap();
        assert!((0.35..=0.65).contains(&a), "seed {seed}: {a}");
        assert_eq!(run.best_epoch, noise.best_epoch);
    }
}

#[test]
fn best_epoch_depends_on_validation_only() {
    let (mut mix, fps) = planted(600);
    let cfg = ProbeConfig { epochs: 12, ..ProbeConfig::default() };
    let a = probe(&fps, &mix, "noise", &cfg).unwrap();
    let test = mix.splits.get(Split::Test).to_vec();
    let noise = mix.tasks.iter_mut().find(|t| t.name == "noise").unwrap();
    let labels: Vec<_> = test.iter().map(|&i| noise.blocks[i].clone()).collect();
    for (k, &i) in test.iter().enumerate() {
        noise.blocks[i] = labels[(k + 1) % labels.len()].clone();
    }
    let b = probe(&fps, &mix, "noise", &cfg).unwrap();
    assert_eq!(a.best_epoch, b.best_epoch);
    assert_eq!(a.head, b.head);
    assert_ne!(a.test_metrics, b.test_metrics);
}

#[test]
fn concat_order_is_a_permutation_of_probe_inputs() {
    let mix = downstream(300);
    let ga = fingerprints(&mix, "graph_output_nn");
    let gb = fingerprints(&mix, "task_heads.pcba_1328.layer1");
    let task = planted_linear_task("planted", &ga, 300, 4).unwrap();
    let mix = with_tasks(&mix, vec![task]).unwrap();
    let ab = concat_fingerprints(&[&ga, &gb]).unwrap();
    let ba = concat_fingerprints(&[&gb, &ga]).unwrap();
    assert_ne!(ab.vectors, ba.vectors);
    assert_eq!(ab.dim, 64);

    let r = probe(&ab, &mix, "planted", &ProbeConfig { epochs: 5, ..ProbeConfig::default() }).unwrap();
    // Coordinate j of BA is coordinate perm[j] of AB.
    let perm: Vec<usize> = (32..64).chain(0..32).collect();
    let head = r.head.permute_inputs(&perm).unwrap();
    let ids: Vec<String> = (0..300).map(molecule_id).collect();
    let pa = r.head.predict(&ab, &ids).unwrap();
    let pb = head.predict(&ba, &ids).unwrap();
    assert!(pa.max_abs_diff(&pb) < 1e-12);
    assert!(r.head.predict(&ba, &ids).unwrap().max_abs_diff(&pa) > 1e-6);
}

#[test]
fn probe_rejects_missing_fingerprints_and_node_tasks() {
    let (mix, mut fps) = planted(50);
    fps.vectors.remove(&molecule_id(3));
    assert!(matches!(
        probe(&fps, &mix, "planted", &ProbeConfig::default()),
        Err(TransferError::MissingMolecule { id, .. }) if id == "3"
    ));
    assert!(matches!(probe(&fps, &mix, "absent", &ProbeConfig::default()), Err(TransferError::UnknownTask(_))));
    let bad = ProbeConfig { lr: 0.0, ..ProbeConfig::default() };
    assert!(matches!(probe(&fps, &mix, "planted", &bad), Err(TransferError::Config(_))));
}

#[test]
fn trimming_keeps_only_the_path_to_the_module() {
    let model = pretrained();
    let cfg = FinetuneConfig::default();
    let t = trim_for_finetune(model, &cfg, "y", 1).unwrap();
    assert!(t.params.names().all(|p| !p.starts_with("node_output_nn") && !p.starts_with("task_heads")));
    assert_eq!(t.spec.dropout_p, 0.0);
    for p in t.params.iter().filter(|p| !p.name.starts_with("finetune_head")) {
        assert_eq!(p.value, model.params.get(&p.name).unwrap().value, "{}", p.name);
    }
    let via_head = FinetuneConfig { finetune_module: "task_heads.l1000_vcap.layer1".into(), ..cfg.clone() };
    let t = trim_for_finetune(model, &via_head, "y", 1).unwrap();
    assert!(t.params.contains("task_heads.l1000_vcap.layer1.weight"));
    assert!(!t.params.contains("task_heads.l1000_vcap.layer2.weight"));
    assert!(t.params.names().all(|p| !p.starts_with("node_output_nn")));

    for bad in ["node_output_nn", "task_heads.pcqm4m_n4.layer1", "core.0.norm"] {
        let c = FinetuneConfig { finetune_module: bad.into(), ..cfg.clone() };
        assert!(matches!(trim_for_finetune(model, &c, "y", 1), Err(TransferError::InvalidModule { .. })), "{bad}");
    }
}

#[test]
fn finetune_freezes_base_then_beats_or_matches_probing() {
    let (mix, fps) = planted(1500);
    let cfg = FinetuneConfig::default();
    let r = finetune(pretrained(), &mix, "planted", &cfg).unwrap();
    assert_eq!(r.base_checksums.len(), 40);
    let start = trim_for_finetune(pretrained(), &cfg, "planted", 1).unwrap();
    let initial = start.params.checksum(|p| !p.starts_with("finetune_head."));
    assert!(r.base_checksums[..10].iter().all(|&c| c == initial));
    assert_ne!(r.base_checksums[10], initial);
    assert!(r.model.params.names().all(|p| !p.starts_with("node_output_nn")));

    let p = probe(&fps, &mix, "planted", &ProbeConfig::default()).unwrap();
    let (ft, pr) = (r.test_metrics["pearson"].unwrap(), p.test_metrics["pearson"].unwrap());
    assert!(ft >= pr - 0.05, "finetune {ft} probe {pr}");

    let bad = FinetuneConfig { freeze_epochs: 40, ..cfg };
    assert!(matches!(finetune(pretrained(), &mix, "planted", &bad), Err(TransferError::Config(_))));
    let mut empty = mix.clone();
    empty.splits.val.clear();
    assert!(matches!(
        finetune(pretrained(), &empty, "planted", &FinetuneConfig::default()),
        Err(TransferError::Train(TrainError::EmptySplit(_)))
    ));
}
