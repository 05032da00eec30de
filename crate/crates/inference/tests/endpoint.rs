use serde_json::json;
use ucerf_core::corpus::{find_occupation_mentions, find_pronouns, Group, Registry, Sample, TaskType};
use ucerf_core::tasks::{candidate_set, Candidate, Provenance, TaskKind};
use ucerf_inference::mock::{default_vocab, BiasRule, ChatRule, MockFixture, MockServer};
use ucerf_inference::runner::score_dataset;
use ucerf_inference::scoring::{mcq_letter_scores, score_candidates, score_echo, score_next_token, score_stepwise};
use ucerf_inference::{Client, EndpointConfig, InferenceError, ResponseCache, ScoringMode};

fn config(server: &MockServer, model: &str) -> EndpointConfig {
    let mut c = EndpointConfig::new(server.base_url(), model);
    c.retry_base_ms = 1;
    c.top_n = default_vocab().len();
    c
}

fn cand(label: &str) -> Candidate {
    Candidate {
        label: label.into(),
        surface: format!(" {label}"),
    }
}

fn sample(id: &str, text: &str, occs: [&str; 2], gold: Option<&str>) -> Sample {
    let m = find_occupation_mentions(text, occs);
    Sample {
        id: id.into(),
        text: text.into(),
        pronoun: find_pronouns(text).pop().unwrap(),
        occupations: [m[0].clone(), m[1].clone()],
        gold: gold.map(str::to_string),
        task_type: if gold.is_some() {
            TaskType::Type2Unambiguous
        } else {
            TaskType::Type1Ambiguous
        },
        pair_id: format!("p-{}", &id[..id.len() - 1]),
        group: Group::Unlabeled,
        attribute: "gender-occupation".into(),
        source: None,
    }
}

#[test]
fn echo_and_stepwise_agree() {
    let server = MockServer::start(MockFixture::default()).unwrap();
    let client = Client::new(config(&server, "mock-a"), None).unwrap();
    let prompt = "The carpenter helped the nurse because she was tired. The pronoun she refers to the";
    let cands = vec![cand("carpenter"), cand("nurse"), cand("construction worker")];
    let (echo, _) = score_echo(&client, prompt, &cands).unwrap();
    let (step, _) = score_stepwise(&client, prompt, &cands).unwrap();
    for (e, s) in echo.iter().zip(&step) {
        assert!((e - s).abs() < 1e-6, "echo {e} vs stepwise {s}");
    }
}

#[test]
fn two_token_echo_is_sum_of_echoed_logprobs() {
    let server = MockServer::start(MockFixture::default()).unwrap();
    let client = Client::new(config(&server, "mock-a"), None).unwrap();
    let prompt = "The nurse met the CEO. The pronoun he refers to the";
    let (echo, _) = score_echo(&client, prompt, &[cand("construction worker")]).unwrap();
    let raw = client
        .post(
            "completions",
            &json!({"model": "mock-a", "prompt": format!("{prompt} construction worker"), "max_tokens": 0, "echo": true, "logprobs": 1}),
        )
        .unwrap()
        .body;
    let lps = raw
        .pointer("/choices/0/logprobs/token_logprobs")
        .unwrap()
        .as_array()
        .unwrap();
    let n = lps.len();
    let expected = lps[n - 2].as_f64().unwrap() + lps[n - 1].as_f64().unwrap();
    assert_eq!(echo[0], expected);
}

#[test]
fn next_token_scores_are_verbatim() {
    let server = MockServer::start(MockFixture::default()).unwrap();
    let client = Client::new(config(&server, "mock-b"), None).unwrap();
    let prompt = "The nurse met the carpenter. The pronoun she refers to the";
    let (scores, _) = score_next_token(&client, prompt, &[cand("nurse"), cand("carpenter")]).unwrap();
    let raw = client
        .post("completions", &json!({"model": "mock-b", "prompt": prompt, "max_tokens": 1, "logprobs": client.config().top_n, "temperature": 0}))
        .unwrap()
        .body;
    let top = raw.pointer("/choices/0/logprobs/top_logprobs/0").unwrap();
    assert_eq!(scores[0], top[" nurse"].as_f64().unwrap());
    assert_eq!(scores[1], top[" carpenter"].as_f64().unwrap());
}

#[test]
fn stepwise_reports_missing_token() {
    let server = MockServer::start(MockFixture::default()).unwrap();
    let mut cfg = config(&server, "mock-a");
    cfg.top_n = 3;
    let client = Client::new(cfg, None).unwrap();
    let err = score_stepwise(&client, "Hello", &[cand("zyzzyva")]).unwrap_err();
    match err {
        InferenceError::NotInTopN { remaining, n, step } => {
            assert_eq!((remaining.as_str(), n, step), (" zyzzyva", 3, 0));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn mcq_letters_from_mock() {
    let fixture = MockFixture {
        bias: vec![BiasRule {
            context_contains: "Answer:".into(),
            token: " B".into(),
            delta: 20.0,
        }],
        ..MockFixture::default()
    };
    let server = MockServer::start(fixture).unwrap();
    let client = Client::new(config(&server, "mock-a"), None).unwrap();
    let (scores, _) = mcq_letter_scores(&client, "Question\nAnswer: ").unwrap();
    assert_eq!(scores.len(), 3);
    assert!(scores[1].log_score > scores[0].log_score && scores[1].log_score > scores[2].log_score);
    // "A" and " A" are both in the vocabulary: their probabilities add up
    let raw = client
        .post("completions", &json!({"model": "mock-a", "prompt": "Question\nAnswer: ", "max_tokens": 1, "logprobs": client.config().top_n, "temperature": 0}))
        .unwrap()
        .body;
    let top = raw.pointer("/choices/0/logprobs/top_logprobs/0").unwrap();
    let pa = top["A"].as_f64().unwrap().exp() + top[" A"].as_f64().unwrap().exp();
    assert!((scores[0].log_score - pa.ln()).abs() < 1e-12);

    let letterless = MockServer::start(MockFixture {
        vocab: vec![" x".into(), " y".into(), ".".into()],
        ..MockFixture::default()
    })
    .unwrap();
    let mut cfg = config(&letterless, "mock-a");
    cfg.top_n = 3;
    let client = Client::new(cfg, None).unwrap();
    assert!(matches!(
        mcq_letter_scores(&client, "Question\nAnswer: "),
        Err(InferenceError::LettersMissing(3))
    ));
}

#[test]
fn cache_avoids_network_and_detects_corruption() {
    let server = MockServer::start(MockFixture::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::new(dir.path()).unwrap();
    let client = Client::new(config(&server, "mock-a"), Some(cache.clone())).unwrap();
    let prompt = "The nurse met the carpenter. The pronoun she refers to the";
    let cands = [cand("nurse"), cand("carpenter")];
    let first = score_echo(&client, prompt, &cands).unwrap();
    let calls = server.calls();
    assert_eq!(calls, 2);
    let second = score_echo(&client, prompt, &cands).unwrap();
    assert_eq!(first.0, second.0);
    assert_eq!(first.1, second.1);
    assert_eq!(server.calls(), calls);

    // a different model id is a distinct key
    let other = Client::new(config(&server, "mock-b"), Some(cache.clone())).unwrap();
    score_echo(&other, prompt, &cands).unwrap();
    assert_eq!(server.calls(), calls + 2);

    // corrupt one entry: it is refetched, the other stays a hit
    let body = json!({"model": "mock-a", "prompt": format!("{prompt} nurse"), "max_tokens": 0, "echo": true, "logprobs": 1, "temperature": 0});
    let key = ResponseCache::key(
        &client.config().base_url,
        "mock-a",
        "completions",
        &serde_json::to_string(&body).unwrap(),
    );
    cache.corrupt(&key).unwrap();
    let third = score_echo(&client, prompt, &cands).unwrap();
    assert_eq!(third.0, first.0);
    assert_eq!(server.calls(), calls + 3);
}

#[test]
fn retries_transient_failures() {
    let server = MockServer::start(MockFixture {
        fail_first: 2,
        ..MockFixture::default()
    })
    .unwrap();
    let client = Client::new(config(&server, "mock-a"), None).unwrap();
    let (s, _) = score_next_token(&client, "The nurse", &[cand("nurse"), cand("carpenter")]).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(server.calls(), 3);

    let server = MockServer::start(MockFixture {
        fail_first: 10,
        ..MockFixture::default()
    })
    .unwrap();
    let mut cfg = config(&server, "mock-a");
    cfg.max_retries = 1;
    let client = Client::new(cfg, None).unwrap();
    let err = score_next_token(&client, "The nurse", &[cand("nurse")]).unwrap_err();
    assert!(matches!(err, InferenceError::Http { status: 503, .. }));
    assert_eq!(server.calls(), 2);
}

#[test]
fn echo_rejection_falls_back_to_stepwise() {
    let server = MockServer::start(MockFixture {
        reject_echo: true,
        ..MockFixture::default()
    })
    .unwrap();
    let client = Client::new(config(&server, "mock-a"), None).unwrap();
    let prompt = "The nurse met the carpenter. The pronoun she refers to the";
    let scored = score_candidates(
        &client,
        "s1",
        prompt,
        &[cand("nurse"), cand("carpenter")],
        TaskKind::Intrinsic,
    )
    .unwrap();
    assert_eq!(scored.candidates.provenance, Provenance::StepwiseFallback);

    let plain = MockServer::start(MockFixture::default()).unwrap();
    let c2 = Client::new(config(&plain, "mock-a"), None).unwrap();
    let direct = score_candidates(
        &c2,
        "s1",
        prompt,
        &[cand("nurse"), cand("carpenter")],
        TaskKind::Intrinsic,
    )
    .unwrap();
    assert_eq!(direct.candidates.provenance, Provenance::EchoScoring);
    for (a, b) in scored.candidates.candidates.iter().zip(&direct.candidates.candidates) {
        assert!((a.log_score - b.log_score).abs() < 1e-6);
    }
}

#[test]
fn dataset_order_is_stable_under_concurrency() {
    let server = MockServer::start(MockFixture::default()).unwrap();
    let samples: Vec<Sample> = (0..12)
        .flat_map(|i| {
            [
                sample(
                    &format!("s{i}a"),
                    &format!("The carpenter saw the nurse {i} times and she waved."),
                    ["carpenter", "nurse"],
                    Some("nurse"),
                ),
                sample(
                    &format!("s{i}b"),
                    &format!("The carpenter saw the nurse {i} times and he waved."),
                    ["carpenter", "nurse"],
                    Some("nurse"),
                ),
            ]
        })
        .collect();
    let mut serial_cfg = config(&server, "mock-a");
    serial_cfg.concurrency = 1;
    let serial = score_dataset(
        &Client::new(serial_cfg, None).unwrap(),
        &samples,
        TaskKind::Mcq,
        None,
        &[0, 1],
    )
    .unwrap();
    let mut par_cfg = config(&server, "mock-a");
    par_cfg.concurrency = 8;
    let parallel = score_dataset(
        &Client::new(par_cfg, None).unwrap(),
        &samples,
        TaskKind::Mcq,
        None,
        &[0, 1],
    )
    .unwrap();
    let key = |r: &ucerf_core::predlog::PredictionLogRecord| {
        (r.sample_id.clone(), r.seed, r.candidates.clone(), r.options.clone())
    };
    assert_eq!(
        serial.iter().map(key).collect::<Vec<_>>(),
        parallel.iter().map(key).collect::<Vec<_>>()
    );
    assert_eq!(serial.len(), 48);
    assert_eq!(serial[0].sample_id, "s0a");
    assert_eq!(serial[24].seed, 1);
    // both variants of a pair share an option order
    assert_eq!(serial[0].options, serial[1].options);
    let labels: Vec<_> = candidate_set(&samples[0], TaskKind::Mcq)
        .into_iter()
        .map(|c| c.label)
        .collect();
    assert_eq!(
        serial[0].candidates.iter().map(|c| c.label.clone()).collect::<Vec<_>>(),
        labels
    );
}

#[test]
fn mock_is_deterministic_and_model_sensitive() {
    let server = MockServer::start(MockFixture::default()).unwrap();
    let prompt = "The nurse met the carpenter. The pronoun she refers to the";
    let cands = [cand("nurse"), cand("carpenter")];
    let a = Client::new(config(&server, "mock-a"), None).unwrap();
    let b = Client::new(config(&server, "mock-b"), None).unwrap();
    let s1 = score_candidates(&a, "x", prompt, &cands, TaskKind::Intrinsic).unwrap();
    let s2 = score_candidates(&a, "x", prompt, &cands, TaskKind::Intrinsic).unwrap();
    assert_eq!(s1.candidates, s2.candidates);
    let s3 = score_candidates(&b, "x", prompt, &cands, TaskKind::Intrinsic).unwrap();
    assert_ne!(s1.candidates, s3.candidates);
}

#[test]
fn chat_rules_and_generation() {
    let fixture = MockFixture {
        chat: vec![ChatRule {
            contains: "use carpenter as the target".into(),
            response: "1. The [carpenter] called the nurse because [he] was late.\n2. The nurse hugged [the carpenter] and [he] smiled.".into(),
        }],
        ..MockFixture::default()
    };
    let server = MockServer::start(fixture).unwrap();
    let client = Client::new(config(&server, "chat-model"), None).unwrap();
    let reg = Registry::bls_default();
    let c = ucerf_core::pipeline::generate_candidates(&client, &reg, "carpenter", "nurse", TaskType::Type2Unambiguous)
        .unwrap();
    assert_eq!(c.len(), 2);
    let none =
        ucerf_core::pipeline::generate_candidates(&client, &reg, "nurse", "carpenter", TaskType::Type2Unambiguous);
    assert!(none.is_err());
}

#[test]
fn api_key_must_exist() {
    let mut cfg = EndpointConfig::new("http://127.0.0.1:1/v1", "m");
    cfg.api_key_env = Some("UCERF_TEST_SURELY_UNSET_KEY".into());
    assert!(matches!(Client::new(cfg, None), Err(InferenceError::MissingApiKey(_))));
    let mut cfg = EndpointConfig::new("http://127.0.0.1:1/v1", "m");
    cfg.concurrency = 0;
    assert!(matches!(Client::new(cfg, None), Err(InferenceError::Config(_))));
    assert_eq!(
        "next_token_only".parse::<ScoringMode>().unwrap(),
        ScoringMode::NextToken
    );
}
