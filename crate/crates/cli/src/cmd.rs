use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use waterfall_core::attacks::{
    delete_attack, insert_attack, overlap_attack, substitute_attack, AttackOutcome, SubstitutionTable,
};
use waterfall_core::corpus::{synthetic_corpus, CorpusRecord, LineError, RecordContent};
use waterfall_core::eval::{par_map, run_experiment, sub_seed, training_streams, ExperimentConfig};
use waterfall_core::extract::guess_baseline;
use waterfall_core::keying::Permuter;
use waterfall_core::providers::{markov_train, CacheParaphraser, ModelBundle, NoEos, RemoteProvider};
use waterfall_core::verify::{calibrate_threshold, scan_corpus, NullStats, ScanEntry, Verifier};
use waterfall_core::watermark::{watermark_stream_with, watermark_text_with};
use waterfall_core::{
    combine_counts, extract_kp, Backend, Error, Family, LogitProvider, SamplingConfig, Strategy, TokenId,
    VocabModel, WatermarkId, WatermarkManifest, WatermarkParams, WatermarkRequest,
};

use crate::util::{
    check_distinct, check_vocab, display, is_infrastructure, jsonl, load_model, read_input, read_manifest,
    read_records, warn, write_output, CliResult, Failure, ThresholdArg, EXIT_OK, EXIT_PARTIAL,
};
use crate::{
    AttackArg, AttackArgs, BackendArg, CalibrateArgs, CheckArgs, EmbedArgs, EmitArg, EvalArgs, ExtractArgs,
    FamilyArg, ProviderArgs, ScanArgs, StrategyArg, TrainArgs, VerifyArgs, WatermarkArgs,
};

type Records = Vec<Result<CorpusRecord, LineError>>;

fn family(f: FamilyArg) -> Family {
    match f {
        FamilyArg::Fourier => Family::Fourier,
        FamilyArg::Square => Family::Square,
    }
}

fn backend(b: BackendArg) -> Backend {
    match b {
        BackendArg::FisherYates => Backend::FisherYates,
        BackendArg::FeistelPrp => Backend::FeistelPrp,
    }
}

fn strategy(s: StrategyArg) -> Strategy {
    match s {
        StrategyArg::Multinomial => Strategy::Multinomial,
        StrategyArg::Greedy => Strategy::Greedy,
        StrategyArg::Beam => Strategy::Beam,
    }
}

fn partial_if(failed: bool) -> u8 {
    if failed {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

#[derive(Serialize)]
struct RecordError<'a> {
    record_id: &'a str,
    error: String,
}

fn record_label(r: &Result<CorpusRecord, LineError>) -> String {
    match r {
        Ok(rec) => rec.id.clone(),
        Err(e) => format!("line:{}", e.line),
    }
}

/// Reports a failed record on stderr. Unparsed lines report the parse
/// error rather than `error`.
fn report_failure(r: &Result<CorpusRecord, LineError>, error: &Error) {
    match r {
        Ok(rec) => report_record_error(&rec.id, error),
        Err(e) => report_record_error(&record_label(r), &e.message),
    }
}

fn report_record_error(record_id: &str, error: impl ToString) {
    let line = serde_json::to_string(&RecordError {
        record_id,
        error: error.to_string(),
    })
    .expect("error serializes");
    eprintln!("{line}");
}

fn emit_record(id: &str, ids: Vec<TokenId>, vocab: &VocabModel, emit: EmitArg) -> Result<CorpusRecord, Error> {
    Ok(match emit {
        EmitArg::Text => CorpusRecord::text(id, vocab.decode_text(&ids)?),
        EmitArg::Tokens => CorpusRecord::tokens(id, ids),
    })
}

fn record_lines(records: &[CorpusRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(r.to_json().as_bytes());
        out.push(b'\n');
    }
    out
}

pub fn train(a: &TrainArgs) -> CliResult<u8> {
    if let Some(corpus) = &a.corpus {
        check_distinct(&a.output, &[corpus])?;
    }
    let texts: Vec<String> = match &a.corpus {
        None => synthetic_corpus(a.corpus_seed, a.corpus_tokens),
        Some(path) => read_records(path)?
            .into_iter()
            .map(|r| match r {
                Ok(CorpusRecord {
                    content: RecordContent::Text(t),
                    ..
                }) => Ok(t),
                Ok(r) => Err(Failure::data(format!("record {:?}: training needs text records", r.id))),
                Err(e) => Err(Failure::data(format!("{} line {}: {}", display(path), e.line, e.message))),
            })
            .collect::<CliResult<_>>()?,
    };
    let vocab = VocabModel::build_word_level(texts.iter().map(String::as_str), a.vocab_size)?;
    let docs = texts
        .iter()
        .map(|t| vocab.encode_text(t))
        .collect::<Result<Vec<_>, _>>()?;
    let lm = markov_train(&training_streams(&docs, &vocab), &vocab, a.order, a.alpha)?;
    let bundle = ModelBundle::new(&lm, &vocab)?;
    write_output(&a.output, bundle.to_json().as_bytes())?;
    Ok(EXIT_OK)
}

fn params_from(embed: &EmbedArgs, mu: WatermarkId, seed: u64) -> CliResult<WatermarkParams> {
    let mut p = WatermarkParams::new(mu, embed.k_p, embed.kappa);
    if let Some(z) = &embed.metadata {
        let bytes = WatermarkId::from_hex(z).map_err(|e| Failure::usage(format!("--metadata: {e}")))?;
        p.metadata_z = Some(bytes.as_bytes().to_vec());
    }
    p.n = embed.n;
    p.family = family(embed.family);
    p.backend = backend(embed.backend);
    p.sampling = SamplingConfig {
        strategy: strategy(embed.strategy),
        temperature: embed.temperature,
        top_p: embed.top_p,
        beam_width: embed.beam_width,
        beam_lambda: embed.beam_lambda,
    };
    p.max_tokens = embed.max_tokens.unwrap_or(1024);
    p.rng_seed = seed;
    Ok(p)
}

fn check_cache_weight(w: f64) -> CliResult<()> {
    if !(0.0..1.0).contains(&w) {
        return Err(Failure::usage(format!("cache weight {w} outside [0, 1)")));
    }
    Ok(())
}

fn provider(args: &ProviderArgs) -> CliResult<(VocabModel, Box<dyn LogitProvider>)> {
    check_cache_weight(args.cache_weight)?;
    let (vocab, lm) = load_model(&args.model)?;
    let lm = Arc::new(lm);
    let p: Box<dyn LogitProvider> = match &args.remote {
        Some(url) => Box::new(
            RemoteProvider::new(url.clone(), vocab.size(), vocab.fingerprint())
                .with_eos(vocab.eos_id())
                .with_max_attempts(args.remote_attempts)
                .with_timeout(Duration::from_secs(30)),
        ),
        None if args.cache_weight > 0.0 => Box::new(CacheParaphraser::new(lm, args.cache_weight)),
        None => Box::new(lm),
    };
    Ok((vocab, if args.ignore_eos { Box::new(NoEos::new(p)) } else { p }))
}

/// Watermarks one record; the generation length defaults to the record's.
fn watermark_record(
    record: &CorpusRecord,
    params: &WatermarkParams,
    max_tokens: Option<usize>,
    provider: &dyn LogitProvider,
    vocab: &VocabModel,
    permuter: &Permuter,
) -> Result<Vec<TokenId>, Error> {
    let source = record.token_ids(vocab)?;
    let mut params = params.clone();
    params.max_tokens = max_tokens.unwrap_or(source.len()).max(1);
    match &record.content {
        RecordContent::Text(t) => Ok(watermark_text_with(t, &params, provider, vocab, permuter)?.ids),
        RecordContent::Tokens(t) => {
            if t.is_empty() {
                return Err(Error::EmptyInput("token record"));
            }
            let request = WatermarkRequest {
                params,
                context: vocab.bos_id().into_iter().chain(t.iter().copied()).collect(),
                provider,
            };
            Ok(watermark_stream_with(&request, permuter)?.ids)
        }
    }
}

pub fn watermark(a: &WatermarkArgs) -> CliResult<u8> {
    check_distinct(&a.output, &[&a.input, &a.provider.model])?;
    check_distinct(&a.manifest, &[&a.input, &a.provider.model, &a.output])?;
    let params = params_from(&a.embed, a.mu.0.clone(), a.seed)?;
    let (vocab, provider) = provider(&a.provider)?;
    params.validate(vocab.size())?;
    let manifest = WatermarkManifest::from_params(&params, &vocab)?;
    let records = read_records(&a.input)?;
    let permuter = Permuter::new(params.backend, vocab.size());
    let results: Vec<Result<CorpusRecord, Error>> = par_map(records.len(), a.jobs as usize, |i| {
        let Ok(record) = &records[i] else {
            return Err(Error::EmptyInput("unparsed line"));
        };
        let mut p = params.clone();
        p.rng_seed = sub_seed(a.seed, "record", i as u64);
        let ids = watermark_record(record, &p, a.embed.max_tokens, &*provider, &vocab, &permuter)?;
        emit_record(&record.id, ids, &vocab, a.emit)
    });
    if let Some(e) = results.iter().filter_map(|r| r.as_ref().err()).find(|e| is_infrastructure(e)) {
        return Err(Failure::from(clone_error(e)));
    }
    let mut out = Vec::new();
    let mut failed = false;
    for (r, result) in records.iter().zip(results) {
        match result {
            Ok(rec) => out.push(rec),
            Err(e) => {
                failed = true;
                report_failure(r, &e);
            }
        }
    }
    write_output(&a.output, &record_lines(&out))?;
    write_output(&a.manifest, format!("{}\n", manifest.to_canonical_json()).as_bytes())?;
    Ok(partial_if(failed))
}

/// Rebuilds an error for reporting from behind a shared reference.
fn clone_error(e: &Error) -> Error {
    match e {
        Error::Provider(p) => Error::Provider(p.clone()),
        Error::PartialOutput { generated, source } => Error::PartialOutput {
            generated: generated.clone(),
            source: source.clone(),
        },
        other => Error::Config(other.to_string()),
    }
}

/// Everything needed to score records against one setting.
struct Check {
    vocab: Option<VocabModel>,
    verifier: Verifier,
    mu: WatermarkId,
    k_p: u64,
}

impl Check {
    fn load(args: &CheckArgs) -> CliResult<Self> {
        let manifest = read_manifest(&args.manifest)?;
        let vocab = match &args.model {
            Some(path) => {
                let (vocab, _) = load_model(path)?;
                check_vocab(&vocab, &manifest)?;
                Some(vocab)
            }
            None => None,
        };
        let verifier = Verifier::from_manifest(&manifest)?;
        let mu = args.mu.as_ref().map_or_else(|| manifest.mu.clone(), |m| m.0.clone());
        let k_p = args.k_p.unwrap_or(manifest.k_p);
        verifier.basis().check_key(k_p)?;
        Ok(Self {
            vocab,
            verifier,
            mu,
            k_p,
        })
    }

    fn tokens(&self, record: &CorpusRecord) -> Result<Vec<TokenId>, Error> {
        match (&self.vocab, &record.content) {
            (Some(v), _) => record.token_ids(v),
            (None, RecordContent::Tokens(t)) => Ok(t.clone()),
            (None, RecordContent::Text(_)) => {
                Err(Error::Config("text record needs --model to tokenize it".into()))
            }
        }
    }

    /// Null scores for every id in `ids`, pooled. Unusable null records
    /// are an error: a threshold must not silently rest on fewer samples.
    fn null_scores(&self, path: &Path, ids: &[(WatermarkId, u64)]) -> CliResult<Vec<f64>> {
        let records = read_records(path)?;
        let mut scores = Vec::with_capacity(records.len() * ids.len());
        for r in &records {
            let record = r
                .as_ref()
                .map_err(|e| Failure::data(format!("{} line {}: {}", display(path), e.line, e.message)))?;
            let tokens = self
                .tokens(record)
                .map_err(|e| Failure::data(format!("{} record {:?}: {e}", display(path), record.id)))?;
            for (mu, k_p) in ids {
                let (q, _) = self
                    .verifier
                    .score(&tokens, mu, *k_p)
                    .map_err(|e| Failure::data(format!("{} record {:?}: {e}", display(path), record.id)))?;
                scores.push(q);
            }
        }
        Ok(scores)
    }

    fn threshold(&self, arg: &ThresholdArg, ids: &[(WatermarkId, u64)]) -> CliResult<(f64, Option<NullStats>)> {
        match arg {
            ThresholdArg::Fixed(t) => Ok((*t, None)),
            ThresholdArg::Fpr { rate, null } => {
                let scores = self.null_scores(null, ids)?;
                let t = calibrate_threshold(&scores, *rate)?;
                Ok((t, Some(NullStats::from_scores(&scores, display(null)))))
            }
        }
    }
}

#[derive(Serialize)]
struct ThresholdNote<'a> {
    threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    null_stats: Option<&'a NullStats>,
}

fn note_threshold(threshold: f64, stats: Option<&NullStats>) {
    let note = ThresholdNote {
        threshold,
        null_stats: stats,
    };
    eprintln!("{}", serde_json::to_string(&note).expect("note serializes"));
}

fn run_scan(
    check: &Check,
    records: &Records,
    ids: &[(WatermarkId, u64)],
    threshold: f64,
    jobs: usize,
) -> CliResult<(Vec<ScanEntry>, waterfall_core::verify::ScanSummary)> {
    let mut entries = Vec::new();
    let summary = scan_corpus(
        records,
        ids,
        &check.verifier,
        check.vocab.as_ref(),
        threshold,
        jobs,
        |e| entries.push(e.clone()),
    )?;
    Ok((entries, summary))
}

pub fn verify(a: &VerifyArgs) -> CliResult<u8> {
    check_distinct(&a.output, &[&a.input, &a.check.manifest])?;
    let check = Check::load(&a.check)?;
    let ids = [(check.mu.clone(), check.k_p)];
    let (threshold, stats) = check.threshold(&a.threshold, &ids)?;
    note_threshold(threshold, stats.as_ref());
    let records = read_records(&a.input)?;
    let (entries, summary) = run_scan(&check, &records, &ids, threshold, a.jobs as usize)?;
    write_output(&a.output, &jsonl(&entries))?;
    Ok(partial_if(summary.errors > 0))
}

#[derive(Serialize)]
struct ExtractLine {
    record_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    records: Option<usize>,
    k_p_hat: u64,
    score: f64,
    margin: f64,
    guess_baseline: f64,
}

pub fn extract(a: &ExtractArgs) -> CliResult<u8> {
    check_distinct(&a.output, &[&a.input, &a.check.manifest])?;
    let check = Check::load(&a.check)?;
    let basis = check.verifier.basis();
    let baseline = guess_baseline(basis)?;
    let records = read_records(&a.input)?;
    let mut counts = Vec::new();
    let mut failed = false;
    for r in &records {
        let rec = match r {
            Ok(rec) => rec,
            Err(e) => {
                failed = true;
                report_record_error(&record_label(r), &e.message);
                continue;
            }
        };
        match check.tokens(rec).and_then(|t| check.verifier.counts(&t, &check.mu)) {
            Ok(c) => counts.push((rec.id.clone(), c)),
            Err(e) => {
                failed = true;
                report_record_error(&rec.id, e);
            }
        }
    }
    let line = |record_id: String, records: Option<usize>, c| -> CliResult<ExtractLine> {
        let res = extract_kp(c, basis)?;
        Ok(ExtractLine {
            record_id,
            records,
            k_p_hat: res.k_p_hat,
            score: res.score_at_hat,
            margin: res.runner_up_margin,
            guess_baseline: baseline,
        })
    };
    let lines = if a.combine {
        if counts.is_empty() {
            return Err(Failure::data("no usable records to combine"));
        }
        let vectors: Vec<_> = counts.iter().map(|(_, c)| c.clone()).collect();
        vec![line("combined".into(), Some(vectors.len()), &combine_counts(&vectors)?)?]
    } else {
        counts
            .iter()
            .map(|(id, c)| line(id.clone(), None, c))
            .collect::<CliResult<_>>()?
    };
    write_output(&a.output, &jsonl(&lines))?;
    Ok(partial_if(failed))
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct IdLine {
    mu: String,
    k_p: u64,
}

fn read_ids(path: &Path) -> CliResult<Vec<(WatermarkId, u64)>> {
    let bytes = read_input(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Failure::data(format!("{}: not UTF-8", display(path))))?;
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Failure::data(format!("{} line {}: {m}", display(path), i + 1));
        let raw: IdLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        ids.push((WatermarkId::from_hex(&raw.mu).map_err(|e| bad(e.to_string()))?, raw.k_p));
    }
    if ids.is_empty() {
        return Err(Failure::data(format!("{}: no ids", display(path))));
    }
    Ok(ids)
}

#[derive(Serialize)]
struct ScanNote {
    records: usize,
    entries: usize,
    errors: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    elapsed_ms: Option<f64>,
}

pub fn scan(a: &ScanArgs) -> CliResult<u8> {
    let mut inputs: Vec<&Path> = vec![&a.input, &a.manifest];
    inputs.extend(a.ids.as_deref());
    check_distinct(&a.output, &inputs)?;
    let check = Check::load(&CheckArgs {
        manifest: a.manifest.clone(),
        model: a.model.clone(),
        mu: None,
        k_p: None,
    })?;
    let ids = match &a.ids {
        Some(path) => read_ids(path)?,
        None => vec![(check.mu.clone(), check.k_p)],
    };
    let (threshold, stats) = check.threshold(&a.threshold, &ids)?;
    note_threshold(threshold, stats.as_ref());
    let records = read_records(&a.input)?;
    let (entries, summary) = run_scan(&check, &records, &ids, threshold, a.jobs as usize)?;
    write_output(&a.output, &jsonl(&entries))?;
    let note = ScanNote {
        records: summary.records,
        entries: summary.entries,
        errors: summary.errors,
        elapsed_ms: a.timing.then(|| summary.elapsed.as_secs_f64() * 1e3),
    };
    eprintln!("{}", serde_json::to_string(&note).expect("note serializes"));
    Ok(partial_if(summary.errors > 0))
}

#[derive(Serialize)]
struct AttackLine<'a> {
    record_id: &'a str,
    requested: usize,
    applied: usize,
    skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<&'a str>,
}

/// Tokens of the bundled corpus under `vocab`, for building substitution
/// tables.
fn bundled_streams(vocab: &VocabModel) -> CliResult<Vec<Vec<TokenId>>> {
    Ok(waterfall_core::corpus::bundled_corpus()
        .iter()
        .map(|t| vocab.encode_text(t))
        .collect::<Result<_, _>>()?)
}

pub fn attack(a: &AttackArgs) -> CliResult<u8> {
    let mut inputs: Vec<&Path> = vec![&a.input];
    inputs.extend(a.model.as_deref());
    inputs.extend(a.table.as_deref());
    check_distinct(&a.output, &inputs)?;
    if let Some(report) = &a.report {
        inputs.push(&a.output);
        check_distinct(report, &inputs)?;
    }
    if !(0.0..=1.0).contains(&a.rate) {
        return Err(Failure::usage(format!("--rate {} outside [0, 1]", a.rate)));
    }
    let model = a.model.as_deref().map(load_model).transpose()?;
    let vocab = model.as_ref().map(|(v, _)| v);
    let vocab_size = match (vocab, a.vocab_size) {
        (Some(v), Some(s)) if v.size() != s => {
            return Err(Failure::usage(format!(
                "--vocab-size {s} conflicts with the model's {}",
                v.size()
            )))
        }
        (Some(v), _) => v.size(),
        (None, Some(s)) => s,
        (None, None) => return Err(Failure::usage("attack needs --model or --vocab-size")),
    };
    if a.emit == EmitArg::Text && vocab.is_none() {
        return Err(Failure::usage("--emit text needs --model"));
    }
    let table = match a.kind {
        AttackArg::Substitute => Some(match (&a.table, vocab) {
            (Some(path), _) => SubstitutionTable::from_json(&read_input(path)?, vocab_size)
                .map_err(|e| Failure::data(format!("{}: {e}", display(path))))?,
            (None, Some(v)) => {
                let specials: Vec<TokenId> = [v.unk_id(), v.bos_id(), v.eos_id()].into_iter().flatten().collect();
                SubstitutionTable::from_corpus(&bundled_streams(v)?, vocab_size, a.neighbours, 5, &specials)?
            }
            (None, None) => return Err(Failure::usage("substitution needs --table or --model")),
        }),
        _ => None,
    };
    let overlap = match a.kind {
        AttackArg::Overlap => {
            let mu = a
                .mu
                .as_ref()
                .ok_or_else(|| Failure::usage("overlap needs --mu for the second watermark"))?;
            let (v, lm) = model.as_ref().ok_or_else(|| Failure::usage("overlap needs --model"))?;
            check_cache_weight(a.cache_weight)?;
            let params = params_from(&a.embed, mu.0.clone(), a.seed)?;
            params.validate(v.size())?;
            let paraphraser = CacheParaphraser::new(Arc::new(lm.clone()), a.cache_weight);
            let provider: Box<dyn LogitProvider> = if a.ignore_eos {
                Box::new(NoEos::new(paraphraser))
            } else {
                Box::new(paraphraser)
            };
            Some((params, provider))
        }
        _ => None,
    };
    let records = read_records(&a.input)?;
    let results: Vec<Result<(CorpusRecord, AttackOutcome), Error>> = par_map(records.len(), a.jobs as usize, |i| {
        let Ok(record) = &records[i] else {
            return Err(Error::EmptyInput("unparsed line"));
        };
        let tokens = match (vocab, &record.content) {
            (Some(v), _) => record.token_ids(v)?,
            (None, RecordContent::Tokens(t)) => {
                waterfall_core::types::check_ids(t, vocab_size)?;
                t.clone()
            }
            (None, RecordContent::Text(_)) => {
                return Err(Error::Config("text record needs --model to tokenize it".into()))
            }
        };
        let seed = sub_seed(a.seed, "attack", i as u64);
        let outcome = match a.kind {
            AttackArg::Insert => insert_attack(&tokens, a.rate, vocab_size, seed)?,
            AttackArg::Delete => delete_attack(&tokens, a.rate, a.min_len, seed)?,
            AttackArg::Substitute => substitute_attack(&tokens, a.rate, table.as_ref().expect("table built"), seed)?,
            AttackArg::Overlap => {
                let (params, paraphraser) = overlap.as_ref().expect("overlap set up");
                let mut p = params.clone();
                p.rng_seed = seed;
                p.max_tokens = a.embed.max_tokens.unwrap_or(tokens.len()).max(1);
                overlap_attack(&tokens, &p, &**paraphraser, vocab.expect("model loaded"))?
            }
        };
        let out = match (a.emit, vocab) {
            (EmitArg::Text, Some(v)) => CorpusRecord::text(&record.id, v.decode_text(&outcome.tokens)?),
            _ => CorpusRecord::tokens(&record.id, outcome.tokens.clone()),
        };
        Ok((out, outcome))
    });
    let mut out = Vec::new();
    let mut report = Vec::new();
    let mut failed = false;
    for (r, result) in records.iter().zip(&results) {
        match result {
            Ok((rec, outcome)) => {
                if let Some(w) = &outcome.warning {
                    warn(format!("record {:?}: {w}", rec.id));
                }
                report.push(AttackLine {
                    record_id: &rec.id,
                    requested: outcome.requested,
                    applied: outcome.applied,
                    skipped: outcome.skipped,
                    warning: outcome.warning.as_deref(),
                });
                out.push(rec.clone());
            }
            Err(e) => {
                failed = true;
                report_failure(r, &e);
            }
        }
    }
    write_output(&a.output, &record_lines(&out))?;
    if let Some(path) = &a.report {
        write_output(path, &jsonl(&report))?;
    }
    Ok(partial_if(failed))
}

fn csv_path(json: &Path) -> PathBuf {
    json.with_extension("csv")
}

pub fn eval(a: &EvalArgs) -> CliResult<u8> {
    let bytes = read_input(&a.config)?;
    let mut config = ExperimentConfig::from_json(&bytes).map_err(|e| match e {
        Error::Json(j) => Failure::usage(format!("{}: {j}", display(&a.config))),
        other => Failure::from(other),
    })?;
    if let Some(jobs) = a.jobs {
        config.jobs = Some(jobs as usize);
    }
    if let waterfall_core::eval::ProviderSpec::Model { path, .. } = &mut config.provider {
        if path.is_relative() {
            if let Some(dir) = a.config.parent() {
                *path = dir.join(&*path);
            }
        }
    }
    let output = a.output.clone().or_else(|| config.output.clone());
    if let Some(out) = &output {
        check_distinct(out, &[&a.config])?;
        check_distinct(&csv_path(out), &[&a.config])?;
    }
    let report = run_experiment(&config)?;
    match output {
        Some(path) => {
            write_output(&path, format!("{}\n", report.to_json()).as_bytes())?;
            write_output(&csv_path(&path), report.to_csv().as_bytes())?;
        }
        None => write_output(Path::new("-"), format!("{}\n", report.to_json()).as_bytes())?,
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct Calibration {
    threshold: f64,
    target_fpr: f64,
    null_count: usize,
    null_mean: f64,
    null_std: f64,
    mu: String,
    k_p: u64,
}

pub fn calibrate(a: &CalibrateArgs) -> CliResult<u8> {
    check_distinct(&a.output, &[&a.null, &a.check.manifest])?;
    if !(a.fpr > 0.0 && a.fpr < 1.0) {
        return Err(Failure::usage(format!("--fpr {} outside (0, 1)", a.fpr)));
    }
    let check = Check::load(&a.check)?;
    let ids = [(check.mu.clone(), check.k_p)];
    let scores = check.null_scores(&a.null, &ids)?;
    let threshold = calibrate_threshold(&scores, a.fpr)?;
    let stats = NullStats::from_scores(&scores, display(&a.null));
    let c = Calibration {
        threshold,
        target_fpr: a.fpr,
        null_count: scores.len(),
        null_mean: stats.mean,
        null_std: stats.std,
        mu: check.mu.to_hex(),
        k_p: check.k_p,
    };
    write_output(&a.output, &jsonl([c]))?;
    Ok(EXIT_OK)
}
