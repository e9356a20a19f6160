//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use hilrag_core::corpus::{
    write_corpus, CorpusError, FaultPoint, FaultStage, IngestCheckpoint, Ingestor,
};
use hilrag_core::embed::{hash_embed, Embedder, HashEmbedder};
use hilrag_core::eval::{
    attribution_accuracy, select_grounded_queries, top1_accuracy, triplet_accuracy, EvalQuery,
};
use hilrag_core::fixtures::{eval_queries, random_corpus, random_triplets, separable_triplets};
use hilrag_core::index::{IndexEntry, MetadataFilter, RetrievalHit};
use hilrag_core::rag::{
    pack_context, transcript_digest, ChatMessage, ContextCandidate, EchoClient, RagError,
    RagPipeline, RetrievalConfig, Role, ScriptFile, ScriptedClient, MIN_TRUNCATED_TOKENS,
};
use hilrag_core::train::{finite_difference_check, train_adapter, LossKind, TrainingConfig};
use hilrag_core::{
    AdapterModel, Embedding, Encoder, KnowledgeDocument, SharedIndex, TripletRecord, VectorIndex,
};
use hilrag_service::{AppState, RecordStore, ServiceConfig};
use proptest::test_runner::TestRunner;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion {
            name: "metric oracle equivalence",
            limit: Some(Duration::from_secs(10)),
            run: metric_oracle,
        },
        Criterion {
            name: "retrieval oracle",
            limit: Some(Duration::from_secs(30)),
            run: retrieval_oracle,
        },
        Criterion {
            name: "gradient check",
            limit: Some(Duration::from_secs(60)),
            run: gradient_check,
        },
        Criterion {
            name: "fine-tuning gain",
            limit: Some(Duration::from_secs(60)),
            run: fine_tuning_gain,
        },
        Criterion {
            name: "negative ablation",
            limit: Some(Duration::from_secs(120)),
            run: negative_ablation,
        },
        Criterion {
            name: "grounding closure",
            limit: None,
            run: grounding_closure,
        },
        Criterion {
            name: "budget safety",
            limit: None,
            run: budget_safety,
        },
        Criterion {
            name: "crash-consistent ingestion",
            limit: None,
            run: crash_consistent_ingestion,
        },
        Criterion {
            name: "audit integrity",
            limit: None,
            run: audit_integrity,
        },
        Criterion {
            name: "index lifecycle",
            limit: None,
            run: index_lifecycle,
        },
    ];

    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!(
                "took {:.2}s, limit {}s",
                elapsed.as_secs_f64(),
                limit.as_secs()
            )),
            (o, _) => o,
        };
        let limit = c
            .limit
            .map(|l| format!(" / {}s", l.as_secs()))
            .unwrap_or_default();
        match outcome {
            Ok(detail) => println!(
                "PASS  {:<28} {:>7.2}s{limit}  {detail}",
                c.name,
                elapsed.as_secs_f64()
            ),
            Err(detail) => {
                failures += 1;
                println!(
                    "FAIL  {:<28} {:>7.2}s{limit}  {detail}",
                    c.name,
                    elapsed.as_secs_f64()
                );
            }
        }
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Brute-force helpers, independent of the library's metric and search code
// ---------------------------------------------------------------------------

fn dot_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `W · hash(text)` by explicit loops.
fn oracle_embed(model: &AdapterModel, text: &str) -> Vec<f64> {
    let x = hash_embed(text, model.dimension());
    let d = model.dimension();
    (0..d)
        .map(|r| (0..d).map(|c| model.weight(r, c) * x.values()[c]).sum())
        .collect()
}

fn brute_rank(scored: &mut [(f64, String)]) {
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
}

fn perturbed_adapter(dim: usize, base_id: String, seed: u64, spread: f64) -> AdapterModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..dim * dim)
        .map(|k| f64::from(u8::from(k / dim == k % dim)) + rng.random_range(-spread..spread))
        .collect();
    AdapterModel::from_weights(dim, w, base_id).expect("square weights")
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

fn metric_oracle() -> Check {
    let dim = 64;
    let docs = random_corpus(200, 101);
    let triplets = random_triplets(100, 102);
    let queries = eval_queries(&docs, 100, 103);
    let base = HashEmbedder::new(dim).map_err(err)?;
    let model = perturbed_adapter(dim, base.id(), 104, 0.2);
    let enc = Encoder::new(Arc::new(base))
        .with_adapter(model.clone())
        .map_err(err)?;

    let lib = triplet_accuracy(&enc, &triplets).map_err(err)?;
    let brute_correct = triplets
        .iter()
        .filter(|t| {
            let a = oracle_embed(&model, &t.anchor);
            let p = oracle_embed(&model, &t.positive);
            let n = oracle_embed(&model, t.negative.as_deref().unwrap());
            dot_cosine(&a, &p) > dot_cosine(&a, &n)
        })
        .count();
    ensure(lib.correct == brute_correct && lib.n == 100, || {
        format!(
            "triplet: library {}/{} vs brute force {brute_correct}/100",
            lib.correct, lib.n
        )
    })?;

    let index = VectorIndex::build(&docs, &enc).map_err(err)?;
    let lib_top1 = top1_accuracy(&index, &enc, &queries).map_err(err)?;
    let doc_vecs: Vec<(String, Vec<f64>)> = docs
        .iter()
        .map(|d| (d.id.clone(), oracle_embed(&model, &d.passage_text())))
        .collect();
    let brute_top1 = queries
        .iter()
        .filter(|q| {
            let qv = oracle_embed(&model, &q.query);
            let mut scored: Vec<(f64, String)> = doc_vecs
                .iter()
                .map(|(id, v)| (dot_cosine(&qv, v), id.clone()))
                .collect();
            brute_rank(&mut scored);
            scored[0].1 == q.true_doc_id
        })
        .count();
    ensure(lib_top1.top1_correct == brute_top1, || {
        format!(
            "top-1: library {} vs brute force {brute_top1}",
            lib_top1.top1_correct
        )
    })?;
    Ok(format!(
        "triplet {}/100 and top-1 {}/100 match brute force",
        lib.correct, lib_top1.top1_correct
    ))
}

type Keep = Box<dyn Fn(&BTreeMap<String, String>) -> bool>;

fn retrieval_oracle() -> Check {
    let dim = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let signals = ["VehSpd", "WiperStat", "EngSpd", "BattVolt", "DoorLockSt"];
    let mut index = VectorIndex::new(dim, "none");
    let mut entries: Vec<(String, Vec<f64>, BTreeMap<String, String>)> = Vec::new();
    for i in 0..1000 {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut meta = BTreeMap::new();
        meta.insert(
            "module_id".to_string(),
            format!("M{}", rng.random_range(0..8)),
        );
        let sig: Vec<&str> = signals
            .iter()
            .copied()
            .filter(|_| rng.random_bool(0.4))
            .collect();
        meta.insert("signals".to_string(), sig.join(", "));
        // Duplicated vectors exercise the doc_id tie-break.
        let v = match entries.last() {
            Some((_, prev, _)) if i % 97 == 1 => Vec::clone(prev),
            _ => v,
        };
        let id = format!("E{:04}", (i * 7919) % 1000);
        index
            .upsert(IndexEntry::new(
                id.clone(),
                Embedding::normalized(v.clone()),
                meta.clone(),
            ))
            .map_err(err)?;
        entries.push((id, v, meta));
    }

    let mut worst = 0.0f64;
    for qi in 0..100 {
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = [1, 5, 10, 50][qi % 4];
        let (filter, keep): (Option<MetadataFilter>, Keep) = match qi % 3 {
            0 => (None, Box::new(|_| true)),
            1 => {
                let m = format!("M{}", qi % 8);
                (
                    Some(MetadataFilter::new().equals("module_id", m.clone())),
                    Box::new(move |meta| meta["module_id"] == m),
                )
            }
            _ => {
                let s = signals[qi % signals.len()];
                (
                    Some(MetadataFilter::new().contains_token("signals", s.to_lowercase())),
                    Box::new(move |meta| meta["signals"].split(", ").any(|t| t == s)),
                )
            }
        };
        let hits = index
            .search_topk(&Embedding::raw(q.clone()), k, filter.as_ref())
            .map_err(err)?;
        let mut scored: Vec<(f64, String)> = entries
            .iter()
            .filter(|(_, _, meta)| keep(meta))
            .map(|(id, v, _)| (dot_cosine(&q, v), id.clone()))
            .collect();
        brute_rank(&mut scored);
        scored.truncate(k);
        let ids: Vec<&str> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        let expect: Vec<&str> = scored.iter().map(|(_, id)| id.as_str()).collect();
        ensure(ids == expect, || {
            format!("query {qi}: ids {ids:?} vs {expect:?}")
        })?;
        for (h, (s, _)) in hits.iter().zip(&scored) {
            worst = worst.max((h.score - s).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("score deviation {worst:e}"))?;
    Ok(format!(
        "100 queries identical, max score deviation {worst:.1e}"
    ))
}

fn gradient_check() -> Check {
    let dim = 24;
    let base = HashEmbedder::new(dim).map_err(err)?;
    let triplets = random_triplets(400, 301);
    let mut summary = Vec::new();
    for (loss, margin) in [(LossKind::Triplet, 1.5), (LossKind::Pairwise, 0.2)] {
        let cfg = TrainingConfig {
            loss,
            margin,
            ..Default::default()
        };
        let mut checked = 0;
        let mut kinks = 0;
        let mut worst = 0.0f64;
        for (i, t) in triplets.iter().enumerate() {
            if checked == 50 {
                break;
            }
            let model = perturbed_adapter(dim, base.id(), 310 + i as u64, 0.3);
            let r = finite_difference_check(&model, t, &base, &cfg, 1e-4).map_err(err)?;
            if r.near_kink {
                kinks += 1;
                continue;
            }
            checked += 1;
            worst = worst.max(r.max_relative_error);
        }
        ensure(checked == 50, || {
            format!("{loss:?}: only {checked} usable instances")
        })?;
        ensure(worst < 1e-4, || {
            format!("{loss:?}: max relative error {worst:e}")
        })?;
        summary.push(format!(
            "{loss:?} max rel err {worst:.3e} ({kinks} near-kink skipped)"
        ));
    }
    Ok(summary.join(", "))
}

fn separable_config(use_negatives: bool) -> TrainingConfig {
    TrainingConfig {
        loss: LossKind::Triplet,
        margin: 0.5,
        learning_rate: 0.1,
        epochs: 20,
        batch_size: 32,
        seed: 7,
        use_negatives,
    }
}

fn accuracy_with(
    base: &Arc<dyn Embedder>,
    model: Option<AdapterModel>,
    bench: &[TripletRecord],
) -> Result<f64, String> {
    let enc = Encoder::new(base.clone());
    let enc = match model {
        Some(m) => enc.with_adapter(m).map_err(err)?,
        None => enc,
    };
    Ok(triplet_accuracy(&enc, bench).map_err(err)?.accuracy)
}

fn fine_tuning_gain() -> Check {
    let f = separable_triplets(128, 200, 200, 7);
    let base: Arc<dyn Embedder> = Arc::new(HashEmbedder::new(f.dimension).map_err(err)?);
    let before = accuracy_with(&base, None, &f.benchmark)?;
    let trained =
        train_adapter(base.clone(), &f.train, &separable_config(true), None).map_err(err)?;
    let after = accuracy_with(&base, Some(trained.model), &f.benchmark)?;
    let detail = format!("untrained {before:.4} -> trained {after:.4}");
    ensure(after >= 0.95 && after >= before + 0.15, || detail.clone())?;
    Ok(detail)
}

fn negative_ablation() -> Check {
    let f = separable_triplets(128, 200, 200, 7);
    let base: Arc<dyn Embedder> = Arc::new(HashEmbedder::new(f.dimension).map_err(err)?);
    let untrained = accuracy_with(&base, None, &f.benchmark)?;
    let with = train_adapter(base.clone(), &f.train, &separable_config(true), None).map_err(err)?;
    let without =
        train_adapter(base.clone(), &f.train, &separable_config(false), None).map_err(err)?;
    let with = accuracy_with(&base, Some(with.model), &f.benchmark)?;
    let without = accuracy_with(&base, Some(without.model), &f.benchmark)?;
    let detail = format!(
        "with {with:.4}, without {without:.4}, untrained {untrained:.4}; gaps {:+.4} and {:+.4}",
        with - without,
        without - untrained
    );
    ensure(with >= without && without >= untrained, || detail.clone())?;
    Ok(detail)
}

fn grounding_closure() -> Check {
    let docs = random_corpus(200, 601);
    let enc = Encoder::hash(256).map_err(err)?;
    let index = VectorIndex::build(&docs, &enc).map_err(err)?;
    let config = RetrievalConfig {
        k: 5,
        ..RetrievalConfig::default()
    };
    let mut seen = HashSet::new();
    let queries: Vec<EvalQuery> = eval_queries(&docs, 300, 602)
        .into_iter()
        .filter(|q| seen.insert(q.query.clone()))
        .collect();
    let grounded = select_grounded_queries(&index, &enc, &queries, 5).map_err(err)?;
    ensure(!grounded.is_empty(), || "no grounded queries".into())?;
    let pipeline = RagPipeline::new(SharedIndex::new(index), enc, docs, config).map_err(err)?;

    // Echo: cite the true document when the rendered prompt carries it,
    // otherwise the first block.
    let mut script = ScriptFile::default();
    for q in &grounded {
        let (_, _, _, bundle, prompt) = pipeline.prepare(&q.query, None).map_err(err)?;
        let cited = if bundle.entries.iter().any(|e| e.doc_id == q.true_doc_id) {
            q.true_doc_id.clone()
        } else {
            bundle
                .entries
                .first()
                .map(|e| e.doc_id.clone())
                .unwrap_or_default()
        };
        let digest = transcript_digest(&[ChatMessage::new(Role::User, prompt)]);
        script
            .responses
            .insert(digest, format!("Answer from {cited}.\nSOURCE: {cited}"));
    }
    let echo =
        attribution_accuracy(&pipeline, &ScriptedClient::new(script), &grounded).map_err(err)?;
    let silent = attribution_accuracy(
        &pipeline,
        &ScriptedClient::constant("The documents describe the procedure."),
        &grounded,
    )
    .map_err(err)?;
    let top_doc_echo =
        attribution_accuracy(&pipeline, &EchoClient { with_source: true }, &grounded)
            .map_err(err)?;
    let detail = format!(
        "{} grounded of {} queries: echo {:.4}, SOURCE-less {:.4} (top-block echo {:.4})",
        grounded.len(),
        queries.len(),
        echo.accuracy,
        silent.accuracy,
        top_doc_echo.accuracy
    );
    ensure(
        echo.valid && echo.accuracy == 1.0 && silent.accuracy == 0.0,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn budget_safety() -> Check {
    use proptest::prelude::*;
    let strategy = (
        proptest::collection::vec(("[a-zé ü🚗\\n]{0,4000}", -1.0f64..1.0), 0..12),
        0usize..3000,
    );
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 1000,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    let result = runner.run(&strategy, |(docs, available)| {
        let mut cands: Vec<ContextCandidate> = docs
            .iter()
            .enumerate()
            .map(|(i, (text, score))| ContextCandidate {
                doc_id: format!("d{i:02}"),
                title: format!("title {i}"),
                text: text.clone(),
                score: *score,
            })
            .collect();
        cands.sort_by(|a, b| b.score.total_cmp(&a.score));
        match pack_context(&cands, available) {
            Ok(b) => {
                let sum: usize = b.entries.iter().map(|e| e.est_tokens).sum();
                prop_assert_eq!(sum, b.total_est_tokens);
                prop_assert!(b.total_est_tokens <= available);
                let truncated: Vec<usize> = b
                    .entries
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.truncated)
                    .map(|(i, _)| i)
                    .collect();
                prop_assert!(truncated.len() <= 1);
                if let Some(&i) = truncated.first() {
                    prop_assert_eq!(i + 1, b.entries.len());
                }
                for (e, c) in b.entries.iter().zip(&cands) {
                    prop_assert_eq!(&e.doc_id, &c.doc_id);
                    prop_assert!(c.text.starts_with(&e.included_text));
                }
                Ok(())
            }
            Err(RagError::BudgetTooSmall { .. }) => {
                prop_assert!(available < MIN_TRUNCATED_TOKENS);
                Ok(())
            }
            Err(e) => Err(TestCaseError::fail(format!("unexpected error {e}"))),
        }
    });
    result.map_err(err)?;
    Ok("1000 cases within budget, truncation only on the last entry".into())
}

fn write_source_corpus(root: &Path) -> Result<(), String> {
    let docs = random_corpus(22, 801);
    let sizes = [3, 5, 4, 6, 4];
    let mut offset = 0;
    for (i, n) in sizes.iter().enumerate() {
        let path = root.join(format!("part{i}.jsonl"));
        write_corpus(&path, &docs[offset..offset + n]).map_err(err)?;
        offset += n;
    }
    // One malformed record so rejections are part of the replayed output.
    let mut f = std::fs::read_to_string(root.join("part2.jsonl")).map_err(err)?;
    f.push_str("{\"id\": 7}\n");
    std::fs::write(root.join("part2.jsonl"), f).map_err(err)
}

fn crash_consistent_ingestion() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let src = dir.path().join("src");
    std::fs::create_dir_all(&src).map_err(err)?;
    write_source_corpus(&src)?;

    let reference = dir.path().join("reference.jsonl");
    let ref_ckpt = dir.path().join("reference.ckpt");
    let ref_report = Ingestor::new(&src, &ref_ckpt, &reference)
        .run()
        .map_err(err)?;
    let expected = std::fs::read(&reference).map_err(err)?;
    let processed = |path: &Path| -> Result<BTreeSet<String>, String> {
        Ok(IngestCheckpoint::load(path)
            .map_err(err)?
            .ok_or("checkpoint missing")?
            .processed_ids)
    };
    let expected_ids = processed(&ref_ckpt)?;

    let mut points = 0;
    for file_index in 0..5 {
        for stage in [
            FaultStage::MidAppend,
            FaultStage::AfterAppend,
            FaultStage::AfterCheckpoint,
        ] {
            let out = dir.path().join(format!("out-{file_index}-{stage:?}.jsonl"));
            let ckpt = dir.path().join(format!("out-{file_index}-{stage:?}.ckpt"));
            let fault = FaultPoint { file_index, stage };
            match Ingestor::new(&src, &ckpt, &out)
                .inject_fault(Some(fault))
                .run()
            {
                Err(CorpusError::Interrupted(_)) => {}
                other => return Err(format!("{fault:?}: expected interruption, got {other:?}")),
            }
            Ingestor::new(&src, &ckpt, &out).run().map_err(err)?;
            let got = std::fs::read(&out).map_err(err)?;
            ensure(got == expected, || {
                format!("{fault:?}: resumed output differs")
            })?;
            ensure(processed(&ckpt)? == expected_ids, || {
                format!("{fault:?}: checkpoint ids differ")
            })?;
            points += 1;
        }
    }
    Ok(format!(
        "{points} fault points, output byte-identical ({} accepted, {} rejected)",
        ref_report.accepted,
        ref_report.rejected.len()
    ))
}

fn service_state(docs: &[KnowledgeDocument], config: &ServiceConfig) -> Result<AppState, String> {
    let enc = Encoder::hash(128).map_err(err)?;
    let index = VectorIndex::build(docs, &enc).map_err(err)?;
    let pipeline = RagPipeline::new(
        SharedIndex::new(index),
        enc,
        docs.to_vec(),
        RetrievalConfig::default(),
    )
    .map_err(err)?;
    AppState::new(pipeline, Arc::new(EchoClient { with_source: true }), config).map_err(err)
}

fn audit_integrity() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let docs = random_corpus(80, 901);
    let config = ServiceConfig::in_dir(dir.path());
    let state = service_state(&docs, &config)?;
    let queries = eval_queries(&docs, 100, 902);

    let runtime = tokio::runtime::Runtime::new().map_err(err)?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .map_err(err)?;
    let addr = listener.local_addr().map_err(err)?;
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = runtime.spawn(hilrag_service::serve(listener, state.clone(), async {
        let _ = stopped.await;
    }));

    let barrier = Arc::new(Barrier::new(queries.len()));
    let handles: Vec<_> = queries
        .iter()
        .map(|q| {
            let barrier = barrier.clone();
            let text = q.query.clone();
            std::thread::spawn(move || -> Result<String, String> {
                barrier.wait();
                let mut resp = ureq::post(&format!("http://{addr}/v1/query"))
                    .send_json(serde_json::json!({ "text": text }))
                    .map_err(err)?;
                let body: serde_json::Value = resp.body_mut().read_json().map_err(err)?;
                body["inference_id"]
                    .as_str()
                    .map(str::to_string)
                    .ok_or_else(|| format!("no inference_id in {body}"))
            })
        })
        .collect();
    let mut ids = Vec::new();
    for h in handles {
        ids.push(
            h.join()
                .map_err(|_| "client thread panicked".to_string())??,
        );
    }
    let unique: BTreeSet<&String> = ids.iter().collect();
    ensure(unique.len() == 100, || {
        format!("{} unique ids", unique.len())
    })?;

    for (i, id) in ids.iter().enumerate() {
        let mut resp = ureq::get(&format!("http://{addr}/v1/audit/{id}"))
            .call()
            .map_err(err)?;
        let record: serde_json::Value = resp.body_mut().read_json().map_err(err)?;
        ensure(record["inference_id"] == id.as_str(), || {
            format!("audit {id} mismatched")
        })?;
        ensure(
            record["retrieved"]
                .as_array()
                .is_some_and(|r| !r.is_empty()),
            || format!("audit {id} has no retrieval scores"),
        )?;
        let status = ureq::post(&format!("http://{addr}/v1/feedback"))
            .send_json(serde_json::json!({
                "inference_id": id,
                "helpful": i % 3 != 0,
                "ratings": { "satisfaction": 1 + (i % 5) },
            }))
            .map_err(err)?
            .status();
        ensure(status == 201, || format!("feedback for {id}: {status}"))?;
    }
    let orphan = ureq::post(&format!("http://{addr}/v1/feedback"))
        .send_json(serde_json::json!({ "inference_id": "0".repeat(32) }));
    ensure(orphan.is_err(), || {
        "feedback for unknown inference accepted".into()
    })?;

    let _ = stop.send(());
    runtime.block_on(server).map_err(err)?.map_err(err)?;

    let audit_before: Vec<_> = state.audit().all().iter().map(|r| (**r).clone()).collect();
    let feedback_before: Vec<_> = state
        .feedback()
        .all()
        .iter()
        .map(|r| (**r).clone())
        .collect();
    ensure(audit_before.len() == 100, || {
        format!("{} audit records", audit_before.len())
    })?;
    ensure(feedback_before.len() == 100, || {
        format!("{} feedback records", feedback_before.len())
    })?;
    for f in &feedback_before {
        ensure(state.audit().get(&f.inference_id).is_some(), || {
            format!("feedback {} does not resolve", f.feedback_id)
        })?;
    }
    drop(state);

    let reloaded = service_state(&docs, &config)?;
    let audit_after: Vec<_> = reloaded
        .audit()
        .all()
        .iter()
        .map(|r| (**r).clone())
        .collect();
    let feedback_after: Vec<_> = reloaded
        .feedback()
        .all()
        .iter()
        .map(|r| (**r).clone())
        .collect();
    let key = |v: &mut Vec<serde_json::Value>| v.sort_by_key(|x| x.to_string());
    let mut a: Vec<serde_json::Value> = audit_before
        .iter()
        .map(|r| serde_json::to_value(r).unwrap())
        .collect();
    let mut b: Vec<serde_json::Value> = audit_after
        .iter()
        .map(|r| serde_json::to_value(r).unwrap())
        .collect();
    key(&mut a);
    key(&mut b);
    ensure(a == b, || "audit journal changed across restart".into())?;
    let mut a: Vec<serde_json::Value> = feedback_before
        .iter()
        .map(|r| serde_json::to_value(r).unwrap())
        .collect();
    let mut b: Vec<serde_json::Value> = feedback_after
        .iter()
        .map(|r| serde_json::to_value(r).unwrap())
        .collect();
    key(&mut a);
    key(&mut b);
    ensure(a == b, || "feedback journal changed across restart".into())?;
    Ok(
        "100 unique resolvable audit records, 100 resolving feedback records, lossless reload"
            .into(),
    )
}

fn hits_equal(a: &[RetrievalHit], b: &[RetrievalHit]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.doc_id == y.doc_id && x.score.to_bits() == y.score.to_bits())
}

fn index_lifecycle() -> Check {
    let enc = Encoder::hash(128).map_err(err)?;
    let docs = random_corpus(200, 1001);
    let mut incremental = VectorIndex::build(&docs, &enc).map_err(err)?;

    let replacements = random_corpus(240, 1002);
    let mut updated = docs.clone();
    let mut changed = Vec::new();
    for i in (0..200).step_by(7) {
        updated[i].requirements = replacements[i].requirements.clone();
        updated[i].title = replacements[i].title.clone();
        changed.push(updated[i].clone());
    }
    for doc in &replacements[200..] {
        updated.push(doc.clone());
        changed.push(doc.clone());
    }
    incremental
        .reembed_incremental(&changed, &enc)
        .map_err(err)?;
    let full = VectorIndex::build(&updated, &enc).map_err(err)?;
    ensure(incremental.len() == full.len(), || {
        format!("{} vs {} entries", incremental.len(), full.len())
    })?;

    let probes = eval_queries(&updated, 50, 1003);
    for q in &probes {
        let v = enc.embed(&q.query).map_err(err)?;
        let a = incremental.search_topk(&v, 10, None).map_err(err)?;
        let b = full.search_topk(&v, 10, None).map_err(err)?;
        ensure(hits_equal(&a, &b), || {
            format!("probe {:?}: incremental differs from rebuild", q.query)
        })?;
    }

    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("index.snap");
    incremental.save_snapshot(&path).map_err(err)?;
    let loaded = VectorIndex::load_snapshot(&path, Some(&enc.adapter_digest())).map_err(err)?;
    ensure(loaded.warning.is_none(), || {
        "unexpected digest warning".into()
    })?;
    for q in &probes {
        let v = enc.embed(&q.query).map_err(err)?;
        let a = incremental.search_topk(&v, 10, None).map_err(err)?;
        let b = loaded.index.search_topk(&v, 10, None).map_err(err)?;
        ensure(hits_equal(&a, &b), || {
            format!("probe {:?}: snapshot differs", q.query)
        })?;
    }
    Ok(format!(
        "{} re-embedded, 50 probes identical to rebuild and after snapshot round trip",
        changed.len()
    ))
}
