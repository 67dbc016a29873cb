use super::*;

fn small() -> CorpusConfig {
    CorpusConfig {
        per_language: 20,
        ..CorpusConfig::default()
    }
}

#[test]
fn profiles_are_deterministic_and_stochastic() {
    let cfg = CorpusConfig::default();
    let a = make_language_profile(&cfg, 3);
    assert_eq!(a, make_language_profile(&cfg, 3));
    for row in a.transition_matrix.iter().chain(std::iter::once(&a.initial)) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let all = make_language_profiles(&cfg).unwrap();
    for i in 0..all.len() {
        for j in 0..i {
            assert!(all[i].total_variation(&all[j]) > MIN_LANGUAGE_DISTANCE);
        }
    }
}

#[test]
fn identical_weights_cannot_separate_languages() {
    let cfg = CorpusConfig {
        language_weight: 0.0,
        ..CorpusConfig::default()
    };
    assert!(matches!(make_language_profiles(&cfg), Err(Error::Config(_))));
}

#[test]
fn three_seconds_is_thirty_tokens() {
    let p = make_language_profile(&CorpusConfig::default(), 0);
    let u = synthesize_utterance(&p, 3.0, 11).unwrap();
    assert_eq!(u.transcript.len(), 30);
    assert_eq!(u.features.num_frames(), 300);
    assert_eq!(u.duration_s, 3.0);
    assert_eq!(u, synthesize_utterance(&p, 3.0, 11).unwrap());
    assert_ne!(u.transcript, synthesize_utterance(&p, 3.0, 12).unwrap().transcript);
    assert!(matches!(synthesize_utterance(&p, 0.05, 1), Err(Error::TooShort(_))));
}

#[test]
fn zero_jitter_tiles_templates_exactly() {
    let cfg = CorpusConfig {
        jitter: 0.0,
        ..CorpusConfig::default()
    };
    let p = make_language_profile(&cfg, 2);
    let u = synthesize_utterance(&p, 2.0, 5).unwrap();
    for (k, &t) in u.transcript.iter().enumerate() {
        for r in k * FRAMES_PER_TOKEN..(k + 1) * FRAMES_PER_TOKEN {
            assert_eq!(u.features.frames().row(r), p.token_templates[t].as_slice());
        }
    }
}

#[test]
fn splits_are_balanced_and_disjoint() {
    let c = build_corpus(&small()).unwrap();
    assert_eq!((c.train.len(), c.valid.len(), c.test.len()), (128, 16, 16));
    for split in [&c.train, &c.valid, &c.test] {
        let mut counts = vec![0usize; 8];
        split.iter().for_each(|u| counts[u.language] += 1);
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }
    let mut ids: Vec<&str> = c
        .train
        .iter()
        .chain(&c.valid)
        .chain(&c.test)
        .map(|u| u.id.as_str())
        .collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 160);

    let buckets = c.buckets();
    assert_eq!(buckets.iter().map(|b| b.0).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
    for (secs, utts) in &buckets {
        assert_eq!(utts.len(), c.test.len());
        for (u, full) in utts.iter().zip(&c.test) {
            assert_eq!(u.id, full.id);
            assert_eq!(u.features.num_frames(), (secs * 100.0) as usize);
            assert_eq!(u.features.frames().row(0), full.features.frames().row(0));
        }
    }
}

#[test]
fn regeneration_is_bit_identical() {
    assert_eq!(build_corpus(&small()).unwrap(), build_corpus(&small()).unwrap());
    let other = CorpusConfig { seed: 8, ..small() };
    assert_ne!(
        build_corpus(&small()).unwrap().train[0],
        build_corpus(&other).unwrap().train[0]
    );
}

#[test]
fn invalid_counts_are_rejected() {
    let cfg = CorpusConfig {
        per_language: 9,
        ..CorpusConfig::default()
    };
    assert!(matches!(build_corpus(&cfg), Err(Error::Config(_))));
}

#[test]
fn write_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = build_corpus(&small()).unwrap();
    let path = c.write(dir.path()).unwrap();
    let loaded = Corpus::load(&path).unwrap();
    assert_eq!(loaded, c);
    let m = Manifest::read(&path).unwrap();
    assert_eq!(m.schema_version, SCHEMA_VERSION);
    assert_eq!(m.seed, 7);
    assert_eq!(m.duration_buckets, vec![1.0, 2.0, 3.0]);

    // the same corpus written twice is byte-identical
    let dir2 = tempfile::tempdir().unwrap();
    let path2 = c.write(dir2.path()).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());

    let feat = dir.path().join(&m.train[0].feature_path);
    let mut bytes = std::fs::read(&feat).unwrap();
    assert_eq!(&bytes[..8], FEATURE_MAGIC);
    bytes.truncate(100);
    std::fs::write(&feat, bytes).unwrap();
    assert!(matches!(Corpus::load(&path), Err(Error::Format { .. })));
}

#[test]
fn waveform_mode_renders_through_frontend() {
    let cfg = CorpusConfig {
        mode: FeatureMode::Waveform,
        ..CorpusConfig::default()
    };
    let p = make_language_profile(&cfg, 1);
    let u = synthesize_with_mode(&p, 1.0, 3, FeatureMode::Waveform).unwrap();
    assert_eq!(u.features.num_frames(), 100);
    assert_eq!(u.transcript.len(), 10);
}

#[test]
fn default_corpus_carries_lid_and_asr_signal() {
    let c = build_corpus(&CorpusConfig::default()).unwrap();
    assert_eq!(c.train.len() + c.valid.len() + c.test.len(), 2000);
    assert_eq!((c.train.len(), c.valid.len(), c.test.len()), (1600, 200, 200));

    let oracle = BigramOracle::fit(&c.train, 8, 64);
    let acc = oracle.accuracy(&c.test);
    assert!(acc > 95.0, "bigram oracle {acc}");
    // shorter prefixes are harder
    let acc1 = oracle.accuracy(&c.bucket(1.0));
    assert!(acc1 <= acc, "1 s {acc1} vs 3 s {acc}");

    let profiles = c.profiles().unwrap();
    let (mut hits, mut total) = (0, 0);
    for u in &c.test {
        let decoded = nearest_template_decode(&u.features, &profiles[u.language].token_templates);
        hits += decoded.iter().zip(&u.transcript).filter(|(a, b)| a == b).count();
        total += u.transcript.len();
    }
    let token_acc = 100.0 * hits as f64 / total as f64;
    assert!(token_acc > 90.0, "nearest-template {token_acc}");
}

#[test]
fn config_text_round_trip() {
    let mut cfg = CorpusConfig::default();
    cfg.apply_text("per_language = 40 # small\nmode = waveform\nbuckets = 1, 2.5\njitter = 2")
        .unwrap();
    assert_eq!(cfg.per_language, 40);
    assert_eq!(cfg.mode, FeatureMode::Waveform);
    assert_eq!(cfg.buckets, vec![1.0, 2.5]);
    assert_eq!(cfg.jitter, 2.0);
    let mut again = CorpusConfig::default();
    again.apply_text(&cfg.to_text()).unwrap();
    assert_eq!(again, cfg);
    let err = cfg.set("per_lang", "3").unwrap_err();
    assert!(err.to_string().contains("`per_lang`"));
    assert!(cfg.set("seed", "seven").is_err());
    assert!(cfg.set("mode", "spectral").is_err());
}
