use asemm::datasynth::{
    ase_catalog, build_dataset, sample_points, summarize, ClassSpec, Dataset, Provenance, RingEdges, Split,
    SynthConfig, TextPlan,
};
use asemm::textbridge::{SurrogateSource, Vocabulary};
use asemm::RngStream;

fn small_config() -> SynthConfig {
    SynthConfig {
        canvas: 64,
        dots_per_image: 200,
        ..SynthConfig::default()
    }
}

fn build(catalog: &[ClassSpec], seed: u64, cfg: &SynthConfig) -> Dataset {
    let source = SurrogateSource { seed };
    build_dataset(catalog, seed, cfg, &TextPlan::new(&source)).unwrap()
}

#[test]
fn type0_sample_mean_in_band() {
    let spec = &ase_catalog()[0];
    let pts = sample_points(&mut RngStream::labeled(3, "t", 0), spec, 500).unwrap();
    let r = summarize(&pts, &RingEdges::uniform(16, 16.0).unwrap()).unwrap();
    let band = spec.std().map(|s| 4.0 * s / 500f64.sqrt());
    assert!(band[0] < 0.35 + 1e-3 && band[1] < 0.35 + 1e-3);
    for a in 0..2 {
        assert!((r.mean[a] - spec.mu[a]).abs() <= band[a], "axis {a}: {:?}", r.mean);
    }
}

#[test]
fn type2_summary_band() {
    let spec = &ase_catalog()[2];
    let pts = sample_points(&mut RngStream::labeled(11, "t", 0), spec, 500).unwrap();
    let r = summarize(&pts, &RingEdges::uniform(16, 16.0).unwrap()).unwrap();
    assert!((r.mean[0] - 6.43).abs() <= 0.52 && (r.mean[1] + 3.21).abs() <= 0.53, "{:?}", r.mean);
    assert_eq!(r.ring_counts.iter().sum::<u32>() + r.out_of_range, 500);
}

#[test]
fn zero_covariance_and_determinism() {
    let spec = ClassSpec::new(0, "point", [1.5, -2.0], [0.0, 0.0], 1);
    let pts = sample_points(&mut RngStream::new(1, 1), &spec, 20).unwrap();
    assert!(pts.iter().all(|p| *p == [1.5, -2.0]));
    let spec = &ase_catalog()[1];
    let a = sample_points(&mut RngStream::new(9, 4), spec, 50).unwrap();
    let b = sample_points(&mut RngStream::new(9, 4), spec, 50).unwrap();
    assert_eq!(a, b);
}

#[test]
fn non_psd_spec_is_rejected() {
    let mut spec = ase_catalog()[0].clone();
    spec.sigma = [[1.0, 2.0], [2.0, 1.0]];
    assert!(sample_points(&mut RngStream::new(0, 0), &spec, 5).is_err());
}

#[test]
fn mean_of_means_over_regenerations() {
    let n = 500usize;
    for spec in ase_catalog() {
        let mut means = Vec::new();
        for rep in 0..100u64 {
            let pts = sample_points(&mut RngStream::labeled(77, &spec.name, rep), &spec, n).unwrap();
            let m = pts.iter().fold([0.0; 2], |a, p| [a[0] + p[0], a[1] + p[1]]);
            means.push([m[0] / n as f64, m[1] / n as f64]);
        }
        let sd = spec.std();
        for a in 0..2 {
            let grand = means.iter().map(|m| m[a]).sum::<f64>() / 100.0;
            assert!((grand - spec.mu[a]).abs() <= 4.0 * sd[a] / (100.0 * n as f64).sqrt(), "{} axis {a}", spec.name);
            let inside = means.iter().filter(|m| (m[a] - spec.mu[a]).abs() <= 4.0 * sd[a] / (n as f64).sqrt()).count();
            assert!(inside >= 99, "{} axis {a}: {inside}", spec.name);
        }
    }
}

#[test]
fn full_scale_split_and_augmentation() {
    let ds = build(&ase_catalog(), 5, &small_config());
    let train: Vec<_> = ds.split(Split::Train).collect();
    let test: Vec<_> = ds.split(Split::Test).collect();
    assert_eq!((train.len(), test.len()), (650, 130));
    assert!(test.iter().all(|s| s.provenance == Provenance::Original));
    let originals = train.iter().filter(|s| s.provenance == Provenance::Original).count();
    assert_eq!(originals, 325);
    for spec in ase_catalog() {
        let c = spec.class_id;
        let tr = train.iter().filter(|s| s.label == c).count() as f64;
        let te = test.iter().filter(|s| s.label == c).count() as f64;
        let share = spec.nominal_count as f64 / 455.0;
        assert!((tr / 650.0 - share).abs() < 0.01, "class {c} train share");
        assert!((te / 130.0 - share).abs() < 0.01, "class {c} test share");
    }
    let mut ids: Vec<u32> = ds.samples.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 780);
}

#[test]
fn single_class_exact_split() {
    let catalog = vec![ClassSpec::new(0, "only", [0.0, 0.0], [3.0, 3.0], 4)];
    let cfg = SynthConfig {
        test_fraction: 0.5,
        augment: false,
        ..small_config()
    };
    let ds = build(&catalog, 1, &cfg);
    assert_eq!(ds.split(Split::Train).count(), 2);
    assert_eq!(ds.split(Split::Test).count(), 2);
}

#[test]
fn augmented_labels_follow_their_generator() {
    // Widely separated classes make the generating spec identifiable from the record.
    let catalog = vec![
        ClassSpec::new(0, "left", [-8.0, 0.0], [1.0, 1.0], 10),
        ClassSpec::new(1, "right", [8.0, 0.0], [1.0, 1.0], 10),
    ];
    let ds = build(&catalog, 2, &small_config());
    let augmented: Vec<_> = ds.samples.iter().filter(|s| s.provenance == Provenance::Augmented).collect();
    assert!(!augmented.is_empty());
    for s in ds.samples.iter() {
        assert_eq!(s.record.mean[0] > 0.0, s.label == 1, "sample {}", s.id);
    }
}

#[test]
fn build_is_byte_identical_and_reloads() {
    let catalog: Vec<ClassSpec> = ase_catalog()
        .into_iter()
        .map(|mut s| {
            s.nominal_count = 6;
            s
        })
        .collect();
    let cfg = SynthConfig {
        dots_jitter: 100,
        correlation: vec![0.0, 0.2, -0.3, 0.0, 0.1],
        ..small_config()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ds = build(&catalog, 42, &cfg);
    ds.write(a.path()).unwrap();
    build(&catalog, 42, &cfg).write(b.path()).unwrap();
    for rel in ["manifest.jsonl", "catalog.json", "images/00000.pgm", "images/00029.pgm"] {
        assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
    let back = Dataset::load(a.path()).unwrap();
    assert_eq!(back, ds);
    let other = build(&catalog, 43, &cfg);
    assert_ne!(other.samples[0].record, ds.samples[0].record);
}

#[test]
fn inconsistent_config_is_rejected() {
    let source = SurrogateSource { seed: 0 };
    let cfg = SynthConfig {
        ring_outer: 40.0,
        ..small_config()
    };
    assert!(build_dataset(&ase_catalog(), 0, &cfg, &TextPlan::new(&source)).is_err());
    let cfg = SynthConfig {
        correlation: vec![0.1],
        ..small_config()
    };
    assert!(build_dataset(&ase_catalog(), 0, &cfg, &TextPlan::new(&source)).is_err());
}

#[test]
fn corpus_has_no_label_leakage_and_no_unknown_tokens() {
    let ds = build(&ase_catalog(), 8, &small_config());
    let vocab = Vocabulary::standard();
    for s in &ds.samples {
        for text in [&s.vlm_text, &s.llm_text] {
            let lower = text.to_lowercase();
            for banned in ["type", "normal", "defective", "class", "label"] {
                assert!(!lower.contains(banned), "{text}");
            }
            assert_eq!(vocab.unk_count(text), 0, "{text}");
            assert!(Vocabulary::pieces(text).len() <= 32, "{text}");
        }
    }
}
