//! Synthetic catalogs and users with planted multi-interest structure, the
//! JSONL dataset format, and CSV event-log ingestion.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, normalized, sigmoid, Rng};

pub type ItemId = u64;
pub type UserId = u64;

pub const DATASET_FORMAT: &str = "encode-ds";
pub const DATASET_VERSION: u32 = 1;

/// Per-coordinate spread of item embeddings around their category bump
/// before normalization.
pub const CATEGORY_SPREAD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub embedding: Vec<f64>,
    pub category: u32,
}

/// Items keyed by id. Iteration order is ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCatalog {
    d: usize,
    ids: Vec<ItemId>,
    items: Vec<Item>,
    index: HashMap<ItemId, usize>,
}

impl ItemCatalog {
    pub fn new(d: usize) -> Self {
        ItemCatalog {
            d,
            ids: Vec::new(),
            items: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_items(d: usize, items: impl IntoIterator<Item = (ItemId, Item)>) -> Result<Self> {
        let sorted: BTreeMap<ItemId, Item> = {
            let mut map = BTreeMap::new();
            for (id, item) in items {
                if map.insert(id, item).is_some() {
                    return Err(Error::DuplicateKey(id));
                }
            }
            map
        };
        let mut catalog = ItemCatalog::new(d);
        for (id, item) in sorted {
            catalog.push_sorted(id, item)?;
        }
        Ok(catalog)
    }

    fn push_sorted(&mut self, id: ItemId, item: Item) -> Result<()> {
        if item.embedding.len() != self.d {
            return Err(Error::dim(self.d, item.embedding.len()));
        }
        if norm(&item.embedding) == 0.0 {
            return Err(Error::ZeroNorm("catalog item"));
        }
        self.index.insert(id, self.items.len());
        self.ids.push(id);
        self.items.push(item);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: ItemId) -> Option<&Item> {
        self.index.get(&id).map(|&i| &self.items[i])
    }

    pub fn embedding(&self, id: ItemId) -> Result<&[f64]> {
        self.get(id)
            .map(|it| it.embedding.as_slice())
            .ok_or_else(|| Error::NotFound(format!("item {id}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ItemId, &Item)> {
        self.ids.iter().copied().zip(self.items.iter())
    }

    pub fn id_at(&self, pos: usize) -> ItemId {
        self.ids[pos]
    }

    pub fn item_at(&self, pos: usize) -> &Item {
        &self.items[pos]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user_id: UserId,
    pub centers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub item: ItemId,
    #[serde(rename = "ts")]
    pub timestamp: u64,
    pub category: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorSequence {
    pub user_id: UserId,
    pub events: Vec<Event>,
}

impl BehaviorSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Original-space embeddings of every event, in sequence order.
    pub fn embeddings<'c>(&self, catalog: &'c ItemCatalog) -> Result<Vec<&'c [f64]>> {
        self.events.iter().map(|e| catalog.embedding(e.item)).collect()
    }

    /// The real-time window: the last `m` events.
    pub fn recent(&self, m: usize) -> &[Event] {
        &self.events[self.events.len().saturating_sub(m)..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledSample {
    pub user_id: UserId,
    pub target: ItemId,
    pub label: u8,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub catalog: ItemCatalog,
    pub sequences: Vec<BehaviorSequence>,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.catalog.dim()
    }
}

fn random_unit(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        if let Ok(u) = normalized(&v) {
            return u;
        }
    }
}

/// Items scattered around `n_categories` random unit bumps, then normalized.
pub fn generate_catalog(
    n_items: usize,
    d: usize,
    n_categories: usize,
    rng: &mut Rng,
) -> Result<ItemCatalog> {
    if n_items == 0 || d == 0 || n_categories == 0 {
        return Err(Error::Config("catalog sizes must be positive".into()));
    }
    let bumps: Vec<Vec<f64>> = (0..n_categories).map(|_| random_unit(d, rng)).collect();
    let mut catalog = ItemCatalog::new(d);
    for id in 0..n_items as ItemId {
        let category = rng.below(n_categories);
        let embedding = loop {
            let raw: Vec<f64> = bumps[category]
                .iter()
                .map(|b| b + CATEGORY_SPREAD * rng.normal())
                .collect();
            if let Ok(e) = normalized(&raw) {
                break e;
            }
        };
        catalog.push_sorted(
            id,
            Item {
                embedding,
                category: category as u32,
            },
        )?;
    }
    Ok(catalog)
}

/// `g` random unit centers with pairwise angle at least `min_separation_deg`
/// (rejection sampled) and mixing weights drawn from `1 + U(0, 1)`.
pub fn generate_profile(
    user_id: UserId,
    d: usize,
    g: usize,
    min_separation_deg: f64,
    rng: &mut Rng,
) -> Result<UserProfile> {
    if g == 0 || d == 0 {
        return Err(Error::Config("profile needs at least one center".into()));
    }
    let max_cos = min_separation_deg.to_radians().cos();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(g);
    let mut attempts = 0usize;
    while centers.len() < g {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Config(format!(
                "cannot place {g} centers {min_separation_deg}° apart in {d} dimensions"
            )));
        }
        let c = random_unit(d, rng);
        if centers.iter().all(|o| dot(o, &c) <= max_cos) {
            centers.push(c);
        }
    }
    let raw: Vec<f64> = (0..g).map(|_| 1.0 + rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    Ok(UserProfile {
        user_id,
        centers,
        weights: raw.into_iter().map(|w| w / total).collect(),
    })
}

/// Catalog positions sorted by alignment with one center, for exact pruned
/// argmax queries around that center.
struct CenterIndex<'a> {
    center: &'a [f64],
    by_alignment: Vec<(f64, usize)>,
}

impl<'a> CenterIndex<'a> {
    fn new(center: &'a [f64], catalog: &ItemCatalog) -> Self {
        let mut by_alignment: Vec<(f64, usize)> = catalog
            .items
            .iter()
            .enumerate()
            .map(|(pos, it)| (dot(center, &it.embedding), pos))
            .collect();
        by_alignment.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        CenterIndex {
            center,
            by_alignment,
        }
    }

    /// Catalog position maximizing `(center + noise)·e`. Items are unit norm,
    /// so `(center + noise)·e ≤ center·e + ‖noise‖` and the scan over items
    /// sorted by `center·e` stops once that bound falls below the best score.
    fn noisy_argmax(&self, catalog: &ItemCatalog, noise_scale: f64, rng: &mut Rng) -> usize {
        let noise: Vec<f64> = if noise_scale > 0.0 {
            (0..self.center.len()).map(|_| noise_scale * rng.normal()).collect()
        } else {
            vec![0.0; self.center.len()]
        };
        let noise_norm = norm(&noise);
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for &(align, pos) in &self.by_alignment {
            if align + noise_norm + 1e-12 < best.0 {
                break;
            }
            let score = align + dot(&noise, &catalog.items[pos].embedding);
            if score > best.0 || (score == best.0 && pos < best.1) {
                best = (score, pos);
            }
        }
        best.1
    }
}

fn check_profile(profile: &UserProfile, catalog: &ItemCatalog) -> Result<()> {
    if profile.centers.is_empty() {
        return Err(Error::Config("profile has no centers".into()));
    }
    if let Some(c) = profile.centers.iter().find(|c| c.len() != catalog.dim()) {
        return Err(Error::dim(catalog.dim(), c.len()));
    }
    if catalog.is_empty() {
        return Err(Error::EmptyInput("catalog"));
    }
    Ok(())
}

/// Like [`generate_user_sequence`] but also returns, per event, the index of
/// the latent center that produced it.
pub fn generate_user_sequence_planted(
    profile: &UserProfile,
    catalog: &ItemCatalog,
    len: usize,
    noise_kappa: f64,
    rng: &mut Rng,
) -> Result<(BehaviorSequence, Vec<usize>)> {
    if len == 0 {
        return Err(Error::Config("sequence length must be at least 1".into()));
    }
    check_profile(profile, catalog)?;
    let noise_scale = 1.0 / noise_kappa;
    let indices: Vec<CenterIndex> = profile
        .centers
        .iter()
        .map(|c| CenterIndex::new(c, catalog))
        .collect();
    let mut timestamp = 1_600_000_000 + rng.below(86_400) as u64;
    let mut events = Vec::with_capacity(len);
    let mut planted = Vec::with_capacity(len);
    for _ in 0..len {
        let g = rng.weighted_index(&profile.weights).unwrap_or(0);
        let pos = indices[g].noisy_argmax(catalog, noise_scale, rng);
        timestamp += 1 + rng.below(3600) as u64;
        events.push(Event {
            item: catalog.id_at(pos),
            timestamp,
            category: catalog.item_at(pos).category,
        });
        planted.push(g);
    }
    Ok((
        BehaviorSequence {
            user_id: profile.user_id,
            events,
        },
        planted,
    ))
}

/// Each event: pick a latent center by weight, then take the catalog item
/// best aligned with the center plus N(0, 1/noise_kappa²) noise.
pub fn generate_user_sequence(
    profile: &UserProfile,
    catalog: &ItemCatalog,
    len: usize,
    noise_kappa: f64,
    rng: &mut Rng,
) -> Result<BehaviorSequence> {
    generate_user_sequence_planted(profile, catalog, len, noise_kappa, rng).map(|(s, _)| s)
}

/// Click model: `P(click) = σ(gamma · maxᵢ cos(target, centerᵢ) + bias)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelModel {
    pub gamma: f64,
    pub bias: f64,
}

impl Default for LabelModel {
    fn default() -> Self {
        LabelModel {
            gamma: 8.0,
            bias: -4.0,
        }
    }
}

impl LabelModel {
    pub fn click_probability(&self, profile: &UserProfile, target: &[f64]) -> f64 {
        let best = profile
            .centers
            .iter()
            .map(|c| dot(c, target) / (norm(c) * norm(target)))
            .fold(f64::NEG_INFINITY, f64::max);
        let logit = self.gamma * best + self.bias;
        if logit.is_nan() {
            // gamma = ∞ with zero alignment
            return sigmoid(self.bias);
        }
        sigmoid(logit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub n_pos: usize,
    pub n_neg: usize,
    pub labels: LabelModel,
    pub noise_kappa: f64,
    pub test_fraction: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            n_pos: 20,
            n_neg: 20,
            labels: LabelModel::default(),
            noise_kappa: 50.0,
            test_fraction: 0.2,
        }
    }
}

/// `n_pos` impressions near the user's centers and `n_neg` uniform over the
/// catalog, each labeled by a Bernoulli draw from the click model.
pub fn generate_labeled_samples(
    profile: &UserProfile,
    catalog: &ItemCatalog,
    cfg: &SampleConfig,
    rng: &mut Rng,
) -> Result<Vec<LabeledSample>> {
    if cfg.n_pos + cfg.n_neg == 0 {
        return Ok(Vec::new());
    }
    check_profile(profile, catalog)?;
    let indices: Vec<CenterIndex> = profile
        .centers
        .iter()
        .map(|c| CenterIndex::new(c, catalog))
        .collect();
    let noise_scale = 1.0 / cfg.noise_kappa;
    let mut out = Vec::with_capacity(cfg.n_pos + cfg.n_neg);
    for i in 0..cfg.n_pos + cfg.n_neg {
        let pos = if i < cfg.n_pos {
            let g = rng.weighted_index(&profile.weights).unwrap_or(0);
            indices[g].noisy_argmax(catalog, noise_scale, rng)
        } else {
            rng.below(catalog.len())
        };
        let p = cfg
            .labels
            .click_probability(profile, &catalog.item_at(pos).embedding);
        let label = u8::from(rng.uniform() < p);
        let split = if rng.uniform() < cfg.test_fraction {
            Split::Test
        } else {
            Split::Train
        };
        out.push(LabeledSample {
            user_id: profile.user_id,
            target: catalog.id_at(pos),
            label,
            split,
        });
    }
    Ok(out)
}

/// Parameters of a full synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub d: usize,
    pub n_categories: usize,
    pub seq_len: usize,
    pub n_interests: usize,
    pub min_separation_deg: f64,
    pub noise_kappa: f64,
    pub samples: SampleConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_users: 100,
            n_items: 50_000,
            d: 32,
            n_categories: 16,
            seq_len: 1000,
            n_interests: 3,
            min_separation_deg: 60.0,
            noise_kappa: 50.0,
            samples: SampleConfig::default(),
        }
    }
}

/// A dataset together with the latent profiles that generated it.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub profiles: Vec<UserProfile>,
}

const CATALOG_STREAM: u64 = u64::MAX;

/// Users get ids `0..n_users`; each user's draws come from its own split
/// stream so the result does not depend on generation order.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<SyntheticData> {
    if cfg.seq_len == 0 {
        return Err(Error::Config("sequence length must be at least 1".into()));
    }
    let root = Rng::new(seed);
    let catalog = generate_catalog(
        cfg.n_items,
        cfg.d,
        cfg.n_categories,
        &mut root.split(CATALOG_STREAM),
    )?;
    let mut profiles = Vec::with_capacity(cfg.n_users);
    let mut sequences = Vec::with_capacity(cfg.n_users);
    let mut samples = Vec::new();
    for user in 0..cfg.n_users as UserId {
        let rng = root.split(user);
        let profile = generate_profile(
            user,
            cfg.d,
            cfg.n_interests,
            cfg.min_separation_deg,
            &mut rng.split(0),
        )?;
        sequences.push(generate_user_sequence(
            &profile,
            &catalog,
            cfg.seq_len,
            cfg.noise_kappa,
            &mut rng.split(1),
        )?);
        samples.extend(generate_labeled_samples(
            &profile,
            &catalog,
            &cfg.samples,
            &mut rng.split(2),
        )?);
        profiles.push(profile);
    }
    Ok(SyntheticData {
        dataset: Dataset {
            catalog,
            sequences,
            samples,
        },
        profiles,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    d: usize,
    items: usize,
    sequences: usize,
    samples: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Item {
        id: ItemId,
        category: u32,
        embedding: Vec<f64>,
    },
    Sequence {
        user: UserId,
        events: Vec<Event>,
    },
    Sample {
        user: UserId,
        item: ItemId,
        label: u8,
        split: Split,
    },
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        d: ds.dim(),
        items: ds.catalog.len(),
        sequences: ds.sequences.len(),
        samples: ds.samples.len(),
    };
    let emit = |w: &mut BufWriter<File>, line: String| -> Result<()> {
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    };
    emit(&mut w, to_json(&header))?;
    for (id, item) in ds.catalog.iter() {
        emit(
            &mut w,
            to_json(&Record::Item {
                id,
                category: item.category,
                embedding: item.embedding.clone(),
            }),
        )?;
    }
    for seq in &ds.sequences {
        emit(
            &mut w,
            to_json(&Record::Sequence {
                user: seq.user_id,
                events: seq.events.clone(),
            }),
        )?;
    }
    for s in &ds.samples {
        emit(
            &mut w,
            to_json(&Record::Sample {
                user: s.user_id,
                item: s.target,
                label: s.label,
                split: s.split,
            }),
        )?;
    }
    w.flush()?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("dataset records always serialize")
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header: Header = match lines.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| Error::Parse {
            line: 1,
            msg: format!("bad header: {e}"),
        })?,
    };
    if header.format != DATASET_FORMAT {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unknown format {:?}", header.format),
        });
    }
    if header.version != DATASET_VERSION {
        return Err(Error::Version {
            expected: DATASET_VERSION,
            found: header.version,
        });
    }
    let d = header.d;
    let mut items = Vec::with_capacity(header.items);
    let mut sequences = Vec::with_capacity(header.sequences);
    let mut samples = Vec::with_capacity(header.samples);
    let mut last_line = 1;
    for (idx, line) in lines {
        let lineno = idx + 1;
        last_line = lineno;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: lineno, msg };
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        match record {
            Record::Item {
                id,
                category,
                embedding,
            } => {
                if embedding.len() != d {
                    return Err(parse_err(format!(
                        "item {id} has dimension {}, header says {d}",
                        embedding.len()
                    )));
                }
                items.push((
                    id,
                    Item {
                        embedding,
                        category,
                    },
                ));
            }
            Record::Sequence { user, events } => {
                if events.is_empty() {
                    return Err(parse_err(format!("sequence for user {user} is empty")));
                }
                if events.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
                    return Err(parse_err(format!(
                        "sequence for user {user} has decreasing timestamps"
                    )));
                }
                sequences.push(BehaviorSequence {
                    user_id: user,
                    events,
                });
            }
            Record::Sample {
                user,
                item,
                label,
                split,
            } => {
                if label > 1 {
                    return Err(parse_err(format!("label must be 0 or 1, got {label}")));
                }
                samples.push(LabeledSample {
                    user_id: user,
                    target: item,
                    label,
                    split,
                });
            }
        }
    }
    if items.len() != header.items
        || sequences.len() != header.sequences
        || samples.len() != header.samples
    {
        return Err(Error::Parse {
            line: last_line + 1,
            msg: format!(
                "truncated: header promises {}/{}/{} items/sequences/samples, found {}/{}/{}",
                header.items,
                header.sequences,
                header.samples,
                items.len(),
                sequences.len(),
                samples.len()
            ),
        });
    }
    let catalog = ItemCatalog::from_items(d, items).map_err(|e| Error::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    for seq in &sequences {
        if let Some(ev) = seq.events.iter().find(|e| catalog.get(e.item).is_none()) {
            return Err(Error::Parse {
                line: 0,
                msg: format!("user {} references unknown item {}", seq.user_id, ev.item),
            });
        }
    }
    if let Some(s) = samples.iter().find(|s| catalog.get(s.target).is_none()) {
        return Err(Error::Parse {
            line: 0,
            msg: format!("sample references unknown item {}", s.target),
        });
    }
    Ok(Dataset {
        catalog,
        sequences,
        samples,
    })
}

/// Output of [`ingest_event_log`]: a catalog of stub embeddings plus
/// per-user sequences ordered by user id.
#[derive(Debug, Clone)]
pub struct IngestedLog {
    pub catalog: ItemCatalog,
    pub sequences: Vec<BehaviorSequence>,
}

const REQUIRED_COLUMNS: [&str; 4] = ["user_id", "item_id", "timestamp", "category"];

/// Reads a `user_id,item_id,timestamp,category` CSV. Events are grouped per
/// user, stably sorted by timestamp and truncated to the most recent
/// `max_len`. Duplicate rows stay as distinct events. Each item gets a random
/// unit embedding seeded by `(seed, item_id)`.
pub fn ingest_event_log(
    path: &Path,
    embedding_dim: usize,
    max_len: usize,
    seed: u64,
) -> Result<IngestedLog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name}")))?;
    }
    let mut per_user: BTreeMap<UserId, Vec<Event>> = BTreeMap::new();
    let mut categories: BTreeMap<ItemId, u32> = BTreeMap::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = row + 2;
        let field = |i: usize| -> Result<u64> {
            let raw = rec.get(cols[i]).unwrap_or("").trim();
            raw.parse::<u64>().map_err(|_| Error::Parse {
                line,
                msg: format!("column {} is not an unsigned integer: {raw:?}", REQUIRED_COLUMNS[i]),
            })
        };
        let (user, item, ts, cat) = (field(0)?, field(1)?, field(2)?, field(3)?);
        let category = u32::try_from(cat).map_err(|_| Error::Parse {
            line,
            msg: format!("category {cat} out of range"),
        })?;
        categories.entry(item).or_insert(category);
        per_user.entry(user).or_default().push(Event {
            item,
            timestamp: ts,
            category,
        });
    }
    let root = Rng::new(seed);
    let catalog = ItemCatalog::from_items(
        embedding_dim,
        categories.into_iter().map(|(id, category)| {
            (
                id,
                Item {
                    embedding: random_unit(embedding_dim, &mut root.split(id)),
                    category,
                },
            )
        }),
    )?;
    let sequences = per_user
        .into_iter()
        .map(|(user_id, mut events)| {
            events.sort_by_key(|e| e.timestamp);
            let start = events.len().saturating_sub(max_len);
            BehaviorSequence {
                user_id,
                events: events.split_off(start),
            }
        })
        .collect();
    Ok(IngestedLog { catalog, sequences })
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_catalog(seed: u64) -> ItemCatalog {
        generate_catalog(500, 8, 4, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn single_item_catalog_is_unit_norm() {
        let c = generate_catalog(1, 2, 1, &mut Rng::new(0)).unwrap();
        assert_eq!(c.len(), 1);
        assert!((norm(&c.item_at(0).embedding) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn catalog_is_deterministic() {
        assert_eq!(small_catalog(5), small_catalog(5));
        assert_ne!(small_catalog(5), small_catalog(6));
    }

    #[test]
    fn every_category_is_populated() {
        // P(some category empty) ≤ 8·(7/8)^10000, far below 1e-9.
        let bound = 8.0 * (7.0f64 / 8.0).powi(10_000);
        assert!(bound < 1e-9);
        for seed in 0..3 {
            let c = generate_catalog(10_000, 4, 8, &mut Rng::new(seed)).unwrap();
            let mut seen = [false; 8];
            for (_, it) in c.iter() {
                seen[it.category as usize] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn profile_centers_are_unit_and_separated() {
        let p = generate_profile(9, 16, 5, 60.0, &mut Rng::new(1)).unwrap();
        assert_eq!(p.centers.len(), 5);
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (i, a) in p.centers.iter().enumerate() {
            assert!((norm(a) - 1.0).abs() < 1e-9);
            for b in &p.centers[i + 1..] {
                assert!(dot(a, b) <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_single_center_repeats_argmax_item() {
        let catalog = small_catalog(2);
        let profile = generate_profile(0, 8, 1, 0.0, &mut Rng::new(3)).unwrap();
        let seq =
            generate_user_sequence(&profile, &catalog, 50, f64::INFINITY, &mut Rng::new(4)).unwrap();
        let best = catalog
            .iter()
            .max_by(|a, b| {
                dot(&profile.centers[0], &a.1.embedding)
                    .total_cmp(&dot(&profile.centers[0], &b.1.embedding))
            })
            .unwrap()
            .0;
        assert!(seq.events.iter().all(|e| e.item == best));
        assert!(seq.events.windows(2).all(|w| w[1].timestamp > w[0].timestamp));
    }

    #[test]
    fn pruned_argmax_matches_full_scan() {
        let catalog = small_catalog(3);
        let mut rng = Rng::new(8);
        let center = random_unit(8, &mut rng);
        let idx = CenterIndex::new(&center, &catalog);
        for trial in 0..200 {
            let mut a = Rng::new(trial);
            let mut b = Rng::new(trial);
            let got = idx.noisy_argmax(&catalog, 0.3, &mut a);
            let query: Vec<f64> = center.iter().map(|c| c + 0.3 * b.normal()).collect();
            let want = (0..catalog.len())
                .max_by(|&x, &y| {
                    dot(&query, &catalog.item_at(x).embedding)
                        .total_cmp(&dot(&query, &catalog.item_at(y).embedding))
                        .then(y.cmp(&x))
                })
                .unwrap();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn zero_length_sequence_is_rejected() {
        let catalog = small_catalog(2);
        let profile = generate_profile(0, 8, 1, 0.0, &mut Rng::new(3)).unwrap();
        assert!(generate_user_sequence(&profile, &catalog, 0, 50.0, &mut Rng::new(4)).is_err());
    }

    #[test]
    fn no_samples_requested_gives_empty_list() {
        let catalog = small_catalog(2);
        let profile = generate_profile(0, 8, 2, 30.0, &mut Rng::new(3)).unwrap();
        let cfg = SampleConfig {
            n_pos: 0,
            n_neg: 0,
            ..SampleConfig::default()
        };
        assert!(generate_labeled_samples(&profile, &catalog, &cfg, &mut Rng::new(1))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn infinite_gamma_labels_by_alignment_sign() {
        let catalog = small_catalog(4);
        let profile = generate_profile(0, 8, 2, 30.0, &mut Rng::new(3)).unwrap();
        let cfg = SampleConfig {
            n_pos: 100,
            n_neg: 300,
            labels: LabelModel {
                gamma: f64::INFINITY,
                bias: -4.0,
            },
            ..SampleConfig::default()
        };
        let samples = generate_labeled_samples(&profile, &catalog, &cfg, &mut Rng::new(1)).unwrap();
        for s in samples {
            let e = catalog.embedding(s.target).unwrap();
            let best = profile
                .centers
                .iter()
                .map(|c| dot(c, e))
                .fold(f64::NEG_INFINITY, f64::max);
            if best != 0.0 {
                assert_eq!(s.label, u8::from(best > 0.0));
            }
        }
    }
}
