use std::fs::File;
use std::io::{self, BufReader, BufWriter};
use std::net::TcpListener;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::Context;
use serde::Serialize;

use encode_core::clustering::ClusteringMethod;
use encode_core::datagen::{
    generate_catalog, generate_dataset, ingest_event_log, read_dataset, write_dataset, Dataset, DatasetConfig,
    SampleConfig,
};
use encode_core::evalmetrics::{triplet_agreement, write_csv_file};
use encode_core::experiment::{
    bench as run_bench, evaluate_auc, evaluate_ri, AucConfig, BenchConfig, Models, Strategy, StrategyParams,
};
use encode_core::inference::{HeadTrainConfig, ScoringHead};
use encode_core::interest::{batch_extract, ExtractConfig};
use encode_core::numerics::{Relevance, Rng};
use encode_core::projection::{init_projection, train_projection, LossSpec, ProjectionModel, SamplePool, SamplingStrategy, TrainConfig};
use encode_core::serve::Scorer;
use encode_core::store::{open_snapshot, write_atomic, write_store};

use crate::args::*;
use crate::{usage, CmdResult, Failure};

const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const HEAD_STREAM: u64 = 3;

fn positive(name: &str, v: usize) -> Result<(), Failure> {
    if v == 0 {
        usage!("--{name} must be at least 1");
    }
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    read_dataset(path)
        .with_context(|| format!("reading dataset {}", path.display()))
        .map_err(Failure::Runtime)
}

fn load_projection(path: &Path) -> Result<ProjectionModel, Failure> {
    ProjectionModel::read(path)
        .with_context(|| format!("reading projection {}", path.display()))
        .map_err(Failure::Runtime)
}

fn parse_list<T: FromStr>(flag: &str, s: &str) -> Result<Vec<T>, Failure> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect();
    if items.is_empty() {
        usage!("--{flag} needs at least one value");
    }
    items
        .iter()
        .map(|x| x.parse().map_err(|_| Failure::Usage(format!("--{flag}: cannot parse {x:?}"))))
        .collect()
}

fn parse_strategies(s: &str) -> Result<Vec<Strategy>, Failure> {
    if s.trim() == "all" {
        return Ok(Strategy::ALL.to_vec());
    }
    let names: Vec<String> = parse_list("strategies", s)?;
    names
        .iter()
        .map(|n| Strategy::parse(n).ok_or_else(|| Failure::Usage(format!("unknown strategy {n:?}"))))
        .collect()
}

/// Expands `a..b` (step `a`) and `a..b:step` ranges; other entries pass
/// through unchanged.
fn expand_values(s: &str) -> Result<Vec<String>, Failure> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        let Some((lo, rest)) = item.split_once("..") else {
            out.push(item.to_string());
            continue;
        };
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, Some(step)),
            None => (rest, None),
        };
        let parse = |x: &str| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| Failure::Usage(format!("bad range {item:?}")))
        };
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        let step = match step {
            Some(s) => parse(s)?,
            None => lo,
        };
        if step == 0 || lo > hi {
            usage!("bad range {item:?}");
        }
        out.extend((lo..=hi).step_by(step).map(|v| v.to_string()));
    }
    if out.is_empty() {
        usage!("--values needs at least one value");
    }
    Ok(out)
}

fn relevance(name: &str, beta: f64) -> Result<Relevance, Failure> {
    match name {
        "unified" | "unified-sim" => {
            if !(beta > 0.0 && beta.is_finite()) {
                usage!("--beta must be positive");
            }
            Ok(Relevance::UnifiedSim { beta })
        }
        "scaled-dot" | "scaled_dot" => Ok(Relevance::ScaledDot),
        other => usage!("unknown relevance {other:?}"),
    }
}

fn strategy_params(m: &ModelArgs) -> Result<StrategyParams, Failure> {
    positive("K", m.k)?;
    positive("T", m.t)?;
    positive("k", m.k_retrieve)?;
    positive("n-bits", m.n_bits)?;
    positive("M", m.short_len)?;
    if m.slice_width == 0 || m.n_bits % m.slice_width != 0 {
        usage!("--n-bits must be a multiple of --slice-width");
    }
    let clustering = ClusteringMethod::parse(&m.clustering)
        .ok_or_else(|| Failure::Usage(format!("unknown clustering {:?}", m.clustering)))?;
    Ok(StrategyParams {
        k_retrieve: m.k_retrieve,
        n_bits: m.n_bits,
        slice_width: m.slice_width,
        short_len: m.short_len,
        extract: ExtractConfig {
            k: m.k,
            t: m.t,
            relevance: relevance(&m.relevance, m.beta)?,
            clustering,
        },
    })
}

fn train_config(t: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut loss = LossSpec::parse(&t.loss).ok_or_else(|| Failure::Usage(format!("unknown loss {:?}", t.loss)))?;
    match &mut loss {
        LossSpec::TripletsFixed { alpha } => *alpha = t.alpha,
        LossSpec::NPairMc { n_negatives } => {
            positive("negatives", t.negatives)?;
            *n_negatives = t.negatives;
        }
        _ => {}
    }
    let sampling = SamplingStrategy::parse(&t.sampling)
        .ok_or_else(|| Failure::Usage(format!("unknown sampling {:?}", t.sampling)))?;
    positive("batch", t.batch)?;
    if !(t.lr > 0.0) {
        usage!("--lr must be positive");
    }
    Ok(TrainConfig {
        loss,
        sampling,
        steps: t.steps,
        lr: t.lr,
        batch_size: t.batch,
        aux_weight: t.aux_weight,
    })
}

fn head_config(h: &HeadArgs) -> Result<AucConfig, Failure> {
    positive("head-batch", h.head_batch)?;
    if !(h.head_lr > 0.0) {
        usage!("--head-lr must be positive");
    }
    Ok(AucConfig {
        head: HeadTrainConfig {
            lr: h.head_lr,
            batch_size: h.head_batch,
            epochs: h.epochs,
        },
        realtime: h.realtime,
    })
}

fn fit_projection(ds: &Dataset, m: usize, cfg: &TrainConfig, seed: u64) -> Result<ProjectionModel, Failure> {
    if m == 0 || m > ds.dim() {
        usage!("--m must be in 1..={}", ds.dim());
    }
    let root = Rng::new(seed);
    let init = init_projection(ds.dim(), m, &mut root.split(INIT_STREAM))?;
    let pool = SamplePool::from_dataset(ds)?;
    Ok(train_projection(init, &pool, cfg, &mut root.split(TRAIN_STREAM))?)
}

pub fn gen_data(a: GenDataArgs, seed: u64) -> CmdResult {
    positive("users", a.users)?;
    positive("L", a.l)?;
    positive("items", a.items)?;
    positive("d", a.d)?;
    positive("categories", a.categories)?;
    positive("interests", a.interests)?;
    if !(a.kappa > 0.0) {
        usage!("--kappa must be positive");
    }
    if !(0.0..=1.0).contains(&a.test_fraction) {
        usage!("--test-fraction must be in [0, 1]");
    }
    let cfg = DatasetConfig {
        n_users: a.users,
        n_items: a.items,
        d: a.d,
        n_categories: a.categories,
        seq_len: a.l,
        n_interests: a.interests,
        min_separation_deg: a.separation,
        noise_kappa: a.kappa,
        samples: SampleConfig {
            n_pos: a.n_pos,
            n_neg: a.n_neg,
            noise_kappa: a.kappa,
            test_fraction: a.test_fraction,
            ..SampleConfig::default()
        },
    };
    let data = generate_dataset(&cfg, seed)?;
    write_dataset(&a.out, &data.dataset)?;
    eprintln!(
        "wrote {} users, {} items, {} samples to {}",
        data.dataset.sequences.len(),
        data.dataset.catalog.len(),
        data.dataset.samples.len(),
        a.out.display()
    );
    Ok(())
}

pub fn ingest(a: IngestArgs, seed: u64) -> CmdResult {
    positive("d", a.d)?;
    positive("max-len", a.max_len)?;
    let log = ingest_event_log(&a.log, a.d, a.max_len, seed)?;
    let ds = Dataset {
        catalog: log.catalog,
        sequences: log.sequences,
        samples: Vec::new(),
    };
    write_dataset(&a.out, &ds)?;
    eprintln!("wrote {} users, {} items to {}", ds.sequences.len(), ds.catalog.len(), a.out.display());
    Ok(())
}

pub fn train_proj(a: TrainProjArgs, seed: u64) -> CmdResult {
    let cfg = train_config(&a.train)?;
    let ds = load_dataset(&a.data)?;
    let model = fit_projection(&ds, a.train.m, &cfg, seed)?;
    model.write(&a.out)?;
    match model.training_log().last() {
        Some((step, loss)) => eprintln!("step {step}: loss {loss:.6}; wrote {}", a.out.display()),
        None => eprintln!("untrained projection written to {}", a.out.display()),
    }
    Ok(())
}

pub fn extract(a: ExtractArgs, seed: u64) -> CmdResult {
    let params = strategy_params(&a.model)?;
    positive("parallel", a.parallel)?;
    let ds = load_dataset(&a.data)?;
    let projection = load_projection(&a.projection)?;
    if projection.d() != ds.dim() {
        usage!(
            "projection expects d={} but the dataset has d={}",
            projection.d(),
            ds.dim()
        );
    }
    let out = batch_extract(&ds, &projection, &params.extract, a.parallel, seed)?;
    for (user, e) in &out.failures {
        eprintln!("user {user}: {e}");
    }
    if out.sets.is_empty() {
        return Err(Failure::Runtime(anyhow::anyhow!("no user could be extracted")));
    }
    write_store(&a.out, &out.sets, &out.config_hash)?;
    eprintln!(
        "wrote {} records ({} failures) to {}",
        out.sets.len(),
        out.failures.len(),
        a.out.display()
    );
    Ok(())
}

fn models_for(ds: &Dataset, projection: ProjectionModel, params: StrategyParams, seed: u64) -> Result<Models, Failure> {
    if projection.d() != ds.dim() {
        usage!(
            "projection expects d={} but the dataset has d={}",
            projection.d(),
            ds.dim()
        );
    }
    Ok(Models::new(projection, params, seed)?)
}

pub fn train_head(a: TrainHeadArgs, seed: u64) -> CmdResult {
    let strategy = Strategy::parse(&a.strategy).ok_or_else(|| Failure::Usage(format!("unknown strategy {:?}", a.strategy)))?;
    let params = strategy_params(&a.model)?;
    let cfg = head_config(&a.head)?;
    let ds = load_dataset(&a.data)?;
    let models = models_for(&ds, load_projection(&a.projection)?, params, seed)?;
    let examples = encode_core::experiment::sample_features(&ds, &models, strategy, cfg.realtime)?;
    let train: Vec<_> = examples
        .into_iter()
        .zip(&ds.samples)
        .filter(|(_, s)| s.split == encode_core::datagen::Split::Train)
        .map(|(e, _)| e)
        .collect();
    if train.is_empty() {
        usage!("dataset has no training samples");
    }
    let (head, losses) = encode_core::inference::train_head(
        ScoringHead::zeros(ds.dim(), cfg.realtime),
        &train,
        &cfg.head,
        &mut Rng::new(seed).split(HEAD_STREAM),
    )?;
    write_atomic(&a.out, &head.to_bytes())?;
    eprintln!(
        "{} steps, final batch loss {:.5}; wrote {}",
        losses.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

fn load_scorer(s: &ServingArgs) -> Result<Scorer, Failure> {
    let rel = relevance(&s.relevance, s.beta)?;
    let snapshot = open_snapshot(&s.store).with_context(|| format!("opening store {}", s.store.display()))?;
    let head_bytes = std::fs::read(&s.head).with_context(|| format!("reading head {}", s.head.display()))?;
    let head = ScoringHead::from_bytes(&head_bytes)?;
    let ds = load_dataset(&s.data)?;
    Ok(Scorer::new(snapshot, head, ds.catalog, rel)?)
}

pub fn score(a: ScoreArgs) -> CmdResult {
    let scorer = load_scorer(&a.serving)?;
    let input = BufReader::new(File::open(&a.requests).with_context(|| format!("opening {}", a.requests.display()))?);
    match &a.out {
        Some(path) => {
            let mut buf = Vec::new();
            scorer.serve_stream(input, &mut buf, None)?;
            write_atomic(path, &buf)?;
        }
        None => scorer.serve_stream(input, io::stdout().lock(), None)?,
    }
    Ok(())
}

/// Reloads the store whenever SIGHUP arrives.
fn watch_reload(scorer: Arc<Scorer>) -> Result<(), Failure> {
    let flag = Arc::new(AtomicBool::new(false));
    signal_hook::flag::register(signal_hook::consts::SIGHUP, Arc::clone(&flag))?;
    thread::spawn(move || loop {
        thread::sleep(Duration::from_millis(50));
        if flag.swap(false, Ordering::SeqCst) {
            match scorer.reload() {
                Ok(g) => eprintln!("store reloaded (generation {g})"),
                Err(e) => eprintln!("reload rejected, keeping current store: {e}"),
            }
        }
    });
    Ok(())
}

pub fn serve(a: ServeArgs) -> CmdResult {
    let scorer = Arc::new(load_scorer(&a.serving)?);
    watch_reload(Arc::clone(&scorer))?;
    let Some(port) = a.port else {
        let stdin = io::stdin();
        scorer.serve_stream(stdin.lock(), io::stdout().lock(), None)?;
        return Ok(());
    };
    let listener = TcpListener::bind(("127.0.0.1", port)).with_context(|| format!("binding port {port}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    for conn in listener.incoming() {
        let conn = match conn {
            Ok(c) => c,
            Err(e) => {
                eprintln!("accept failed: {e}");
                continue;
            }
        };
        let scorer = Arc::clone(&scorer);
        thread::spawn(move || {
            let reader = match conn.try_clone() {
                Ok(c) => BufReader::new(c),
                Err(e) => return eprintln!("connection setup failed: {e}"),
            };
            if let Err(e) = scorer.serve_stream(reader, BufWriter::new(conn), None) {
                eprintln!("connection closed: {e}");
            }
        });
    }
    Ok(())
}

pub fn bench(a: BenchArgs, seed: u64) -> CmdResult {
    let strategies = parse_strategies(&a.strategies)?;
    let lengths: Vec<usize> = parse_list("L", &a.lengths)?;
    if lengths.contains(&0) {
        usage!("--L values must be at least 1");
    }
    positive("targets", a.targets)?;
    let params = strategy_params(&a.model)?;
    let catalog = match &a.data {
        Some(p) => load_dataset(p)?.catalog,
        None => {
            positive("items", a.items)?;
            positive("d", a.d)?;
            generate_catalog(a.items, a.d, 16, &mut Rng::new(seed).split(u64::MAX))?
        }
    };
    let projection = match &a.projection {
        Some(p) => load_projection(p)?,
        None => {
            if a.m == 0 || a.m > catalog.dim() {
                usage!("--m must be in 1..={}", catalog.dim());
            }
            init_projection(catalog.dim(), a.m, &mut Rng::new(seed).split(INIT_STREAM))?
        }
    };
    if projection.d() != catalog.dim() {
        usage!("projection expects d={} but the catalog has d={}", projection.d(), catalog.dim());
    }
    let models = Models::new(projection, params, seed)?;
    let cfg = BenchConfig {
        targets: a.targets,
        warmup: a.warmup,
    };
    let records = run_bench(&catalog, &models, &strategies, &lengths, &cfg, seed)?;
    write_csv_file(&a.out, &records)?;
    for r in &records {
        eprintln!(
            "{:>12} L={:<6} p50={:>9.2}us evals/target={}",
            r.strategy, r.l, r.p50_us, r.metric_evals_per_target
        );
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs, seed: u64) -> CmdResult {
    let strategies = parse_strategies(&a.strategies)?;
    let params = strategy_params(&a.model)?;
    let cfg = head_config(&a.head)?;
    positive("pairs", a.pairs)?;
    let ds = load_dataset(&a.data)?;
    if ds.samples.is_empty() {
        usage!("dataset has no labeled samples");
    }
    let models = models_for(&ds, load_projection(&a.projection)?, params, seed)?;
    let ri = evaluate_ri(&ds, &models, &strategies, a.pairs, seed)?;
    write_csv_file(&a.ri_out, &ri)?;
    let auc = evaluate_auc(&ds, &models, &strategies, &cfg, seed)?;
    write_csv_file(&a.auc_out, &auc)?;
    for (r, u) in ri.iter().zip(&auc) {
        eprintln!("{:>12}  RI {:.4}  AUC {:.4}  GAUC {:.4}", r.strategy, r.mean_ri, u.auc, u.gauc);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow {
    sweep: String,
    value: String,
    mean_ri: f64,
    auc: f64,
    gauc: f64,
    triplet_agreement: f64,
}

const AGREEMENT_TRIALS: usize = 2000;

fn mean_agreement(ds: &Dataset, projection: &ProjectionModel, seed: u64) -> Result<f64, Failure> {
    let mut total = 0.0;
    let mut n = 0usize;
    for seq in ds.sequences.iter().filter(|s| s.len() >= 3) {
        let b = seq.embeddings(&ds.catalog)?;
        total += triplet_agreement(projection, &b, AGREEMENT_TRIALS, &mut Rng::new(seed).split(seq.user_id))?;
        n += 1;
    }
    if n == 0 {
        usage!("no sequence has at least 3 behaviors");
    }
    Ok(total / n as f64)
}

pub fn ablate(a: AblateArgs, seed: u64) -> CmdResult {
    let values = expand_values(&a.values)?;
    let base_train = train_config(&a.train)?;
    let base_params = strategy_params(&a.model)?;
    let cfg = head_config(&a.head)?;
    positive("pairs", a.pairs)?;
    let sweep = a.sweep.as_str();
    if !matches!(sweep, "K" | "m" | "beta" | "loss" | "sampling" | "clustering") {
        usage!("unknown sweep {sweep:?}; expected K, m, beta, loss, sampling or clustering");
    }
    let ds = load_dataset(&a.data)?;
    if ds.samples.is_empty() {
        usage!("dataset has no labeled samples");
    }
    let projection_sweep = matches!(sweep, "m" | "loss" | "sampling");
    let shared = if projection_sweep {
        None
    } else {
        Some(fit_projection(&ds, a.train.m, &base_train, seed)?)
    };
    let mut rows = Vec::with_capacity(values.len());
    for value in &values {
        let mut params = base_params;
        let mut train = base_train;
        let mut m = a.train.m;
        let bad = || Failure::Usage(format!("bad {sweep} value {value:?}"));
        match sweep {
            "K" => params.extract.k = value.parse().ok().filter(|&k| k > 0).ok_or_else(bad)?,
            "beta" => params.extract.relevance = relevance("unified", value.parse().map_err(|_| bad())?)?,
            "clustering" => params.extract.clustering = ClusteringMethod::parse(value).ok_or_else(bad)?,
            "m" => m = value.parse().map_err(|_| bad())?,
            "loss" => {
                let mut t = TrainArgs { loss: value.clone(), ..a.train.clone() };
                t.m = m;
                train = train_config(&t)?;
            }
            "sampling" => train.sampling = SamplingStrategy::parse(value).ok_or_else(bad)?,
            _ => unreachable!(),
        }
        let projection = match &shared {
            Some(p) => p.clone(),
            None => fit_projection(&ds, m, &train, seed)?,
        };
        let agreement = mean_agreement(&ds, &projection, seed)?;
        let models = Models::new(projection, params, seed)?;
        let ri = evaluate_ri(&ds, &models, &[Strategy::Encode], a.pairs, seed)?;
        let auc = evaluate_auc(&ds, &models, &[Strategy::Encode], &cfg, seed)?;
        eprintln!(
            "{sweep}={value}: RI {:.4} AUC {:.4} GAUC {:.4} agreement {:.4}",
            ri[0].mean_ri, auc[0].auc, auc[0].gauc, agreement
        );
        rows.push(AblationRow {
            sweep: sweep.to_string(),
            value: value.clone(),
            mean_ri: ri[0].mean_ri,
            auc: auc[0].auc,
            gauc: auc[0].gauc,
            triplet_agreement: agreement,
        });
    }
    write_csv_file(&a.out, &rows)?;
    Ok(())
}
