//! Dataset ingestion and assembly.
//!
//! Samples are sets of (feature-id, value) pairs with a binary label; each
//! sample is one hypergraph node set. Ingestion reads delimited ratings and
//! feature files under a declared schema, converts explicit ratings to
//! implicit feedback, draws per-user negatives, and splits. Batches carry
//! ragged node sets; there is no padding anywhere.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::DataError;

pub const DATA_MAGIC: &str = "HIRSDATA1";

// ── vocabulary ───────────────────────────────────────────────────────

/// Bijective name <-> dense-id map over the feature universe.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl FeatureVocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Look up or insert; ids are dense in insertion order.
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

// ── samples and batches ──────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    pub user_id: u32,
    /// Retained so ranking can tie-break deterministically by item.
    pub item_id: u32,
    /// Distinct feature ids with their values (1.0 for categorical).
    pub features: Vec<(u32, f64)>,
    pub label: u8,
}

impl DataSample {
    pub fn m(&self) -> usize {
        self.features.len()
    }

    pub fn feature_ids(&self) -> Vec<u32> {
        self.features.iter().map(|&(id, _)| id).collect()
    }

    pub fn feature_values(&self) -> Vec<f64> {
        self.features.iter().map(|&(_, w)| w).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub samples: Vec<DataSample>,
    pub pos_idx: Vec<usize>,
    pub neg_idx: Vec<usize>,
    /// Set when the batch holds only one label; infomax terms are skipped
    /// downstream and the trainer counts the occurrence.
    pub single_label: bool,
}

impl Batch {
    pub fn from_samples(samples: Vec<DataSample>) -> Self {
        let pos_idx: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == 1)
            .map(|(i, _)| i)
            .collect();
        let neg_idx: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == 0)
            .map(|(i, _)| i)
            .collect();
        let single_label = pos_idx.is_empty() || neg_idx.is_empty();
        Batch {
            samples,
            pos_idx,
            neg_idx,
            single_label,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// An assembled dataset: frozen vocabulary plus samples. Unseen feature ids
/// downstream of this point are pipeline bugs, not UNK tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: FeatureVocab,
    pub samples: Vec<DataSample>,
}

/// Train/val/test view over one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub vocab: FeatureVocab,
    pub train: Vec<DataSample>,
    pub val: Vec<DataSample>,
    pub test: Vec<DataSample>,
}

impl SplitDataset {
    pub fn from_dataset(
        dataset: &Dataset,
        ratios: (f64, f64, f64),
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, DataError> {
        let (train, val, test) = split(&dataset.samples, ratios, rng)?;
        Ok(SplitDataset {
            vocab: dataset.vocab.clone(),
            train,
            val,
            test,
        })
    }
}

// ── schema ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImplicitMode {
    /// Ratings strictly above the threshold are positive.
    Threshold,
    /// Every rated row is positive (sparse-data mode).
    AllRated,
}

#[derive(Debug, Clone)]
pub struct DataSchema {
    pub separator: String,
    pub user_col: usize,
    pub item_col: usize,
    pub rating_col: usize,
    pub rating_threshold: f64,
    pub implicit_mode: ImplicitMode,
    /// Separator between features inside a feature-file list column.
    pub feature_sep: String,
}

impl Default for DataSchema {
    fn default() -> Self {
        DataSchema {
            separator: "::".to_string(),
            user_col: 0,
            item_col: 1,
            rating_col: 2,
            rating_threshold: 3.0,
            implicit_mode: ImplicitMode::Threshold,
            feature_sep: "|".to_string(),
        }
    }
}

// ── ingestion ────────────────────────────────────────────────────────

/// Raw joined records before implicit conversion. User and item ids are
/// internalized to dense u32s; the original id strings become id features
/// (`user:<id>`, `item:<id>`) so they participate in interactions.
#[derive(Debug, Clone)]
pub struct RawData {
    pub vocab: FeatureVocab,
    pub records: Vec<RawRecord>,
    /// Per internal user id: feature list (id feature first).
    pub user_features: Vec<Vec<(u32, f64)>>,
    /// Per internal item id: feature list (id feature first).
    pub item_features: Vec<Vec<(u32, f64)>>,
    pub stats: IngestStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IngestStats {
    /// Ratings rows dropped because a declared feature file had no entry
    /// for the user or item.
    pub dropped_missing_join: usize,
    /// Duplicate feature ids collapsed within one entity's list.
    pub deduped_features: usize,
    /// Users whose unrated pool was too small; negatives were drawn with
    /// replacement.
    pub replacement_fallbacks: usize,
}

struct Interner {
    map: HashMap<String, u32>,
    next: u32,
}

impl Interner {
    fn new() -> Self {
        Interner {
            map: HashMap::new(),
            next: 0,
        }
    }

    fn intern(&mut self, key: &str) -> u32 {
        if let Some(&id) = self.map.get(key) {
            return id;
        }
        let id = self.next;
        self.map.insert(key.to_string(), id);
        self.next += 1;
        id
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    BufReader::new(file)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Parse one `name` or `name:value` feature token.
fn parse_feature_token(tok: &str) -> (String, f64) {
    match tok.rsplit_once(':') {
        Some((name, val)) => match val.parse::<f64>() {
            Ok(w) => (name.to_string(), w),
            Err(_) => (tok.to_string(), 1.0),
        },
        None => (tok.to_string(), 1.0),
    }
}

/// Read a feature file mapping `entity-id <sep> feat|feat:value|...`.
fn load_feature_file(
    path: &Path,
    schema: &DataSchema,
    vocab: &mut FeatureVocab,
    stats: &mut IngestStats,
) -> Result<HashMap<String, Vec<(u32, f64)>>, DataError> {
    let mut out = HashMap::new();
    for (lineno, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(schema.separator.as_str());
        let entity = cols.next().unwrap_or("").trim();
        if entity.is_empty() {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "missing entity id".to_string(),
            });
        }
        let mut feats: Vec<(u32, f64)> = Vec::new();
        let mut seen = HashSet::new();
        for col in cols {
            for tok in col.split(schema.feature_sep.as_str()) {
                let tok = tok.trim();
                if tok.is_empty() {
                    continue;
                }
                let (name, w) = parse_feature_token(tok);
                let id = vocab.intern(&name);
                if seen.insert(id) {
                    feats.push((id, w));
                } else {
                    stats.deduped_features += 1;
                }
            }
        }
        out.insert(entity.to_string(), feats);
    }
    Ok(out)
}

/// Load ratings plus optional user/item feature files into joined records.
///
/// Every user gets a `user:<id>` feature and every item an `item:<id>`
/// feature in addition to whatever the feature files declare. When a
/// feature file is declared but lacks an entry for a record's user or
/// item, the record is dropped and counted.
pub fn load_interactions(
    ratings_path: &Path,
    user_features_path: Option<&Path>,
    item_features_path: Option<&Path>,
    schema: &DataSchema,
) -> Result<RawData, DataError> {
    let mut vocab = FeatureVocab::new();
    let mut stats = IngestStats::default();

    let user_file = user_features_path
        .map(|p| load_feature_file(p, schema, &mut vocab, &mut stats))
        .transpose()?;
    let item_file = item_features_path
        .map(|p| load_feature_file(p, schema, &mut vocab, &mut stats))
        .transpose()?;

    let mut users = Interner::new();
    let mut items = Interner::new();
    let mut user_features: Vec<Vec<(u32, f64)>> = Vec::new();
    let mut item_features: Vec<Vec<(u32, f64)>> = Vec::new();
    let mut records = Vec::new();

    let needed = schema
        .user_col
        .max(schema.item_col)
        .max(schema.rating_col);
    for (lineno, line) in read_lines(ratings_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(schema.separator.as_str()).collect();
        if cols.len() <= needed {
            return Err(DataError::Parse {
                path: ratings_path.display().to_string(),
                line: lineno + 1,
                msg: format!(
                    "expected at least {} columns, got {}",
                    needed + 1,
                    cols.len()
                ),
            });
        }
        let user_key = cols[schema.user_col].trim();
        let item_key = cols[schema.item_col].trim();
        let rating: f64 =
            cols[schema.rating_col]
                .trim()
                .parse()
                .map_err(|_| DataError::Parse {
                    path: ratings_path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("bad rating value {:?}", cols[schema.rating_col]),
                })?;

        if let Some(f) = &user_file {
            if !f.contains_key(user_key) {
                stats.dropped_missing_join += 1;
                continue;
            }
        }
        if let Some(f) = &item_file {
            if !f.contains_key(item_key) {
                stats.dropped_missing_join += 1;
                continue;
            }
        }

        let user = users.intern(user_key);
        if user as usize == user_features.len() {
            let mut feats = vec![(vocab.intern(&format!("user:{user_key}")), 1.0)];
            if let Some(f) = &user_file {
                feats.extend(f[user_key].iter().copied());
            }
            user_features.push(feats);
        }
        let item = items.intern(item_key);
        if item as usize == item_features.len() {
            let mut feats = vec![(vocab.intern(&format!("item:{item_key}")), 1.0)];
            if let Some(f) = &item_file {
                feats.extend(f[item_key].iter().copied());
            }
            item_features.push(feats);
        }
        records.push(RawRecord { user, item, rating });
    }

    Ok(RawData {
        vocab,
        records,
        user_features,
        item_features,
        stats,
    })
}

// ── implicit conversion and negative sampling ────────────────────────

fn merge_features(
    user: &[(u32, f64)],
    item: &[(u32, f64)],
    deduped: &mut usize,
) -> Vec<(u32, f64)> {
    let mut out = Vec::with_capacity(user.len() + item.len());
    let mut seen = HashSet::new();
    for &(id, w) in user.iter().chain(item) {
        if seen.insert(id) {
            out.push((id, w));
        } else {
            *deduped += 1;
        }
    }
    out
}

/// Keep positive interactions only: rating strictly above the threshold,
/// or every rated row in `AllRated` mode. Each positive carries the union
/// of its user-side and item-side features.
pub fn to_implicit(raw: &mut RawData, schema: &DataSchema) -> Vec<DataSample> {
    let mut out = Vec::new();
    let mut deduped = 0;
    for rec in &raw.records {
        let positive = match schema.implicit_mode {
            ImplicitMode::Threshold => rec.rating > schema.rating_threshold,
            ImplicitMode::AllRated => true,
        };
        if !positive {
            continue;
        }
        let features = merge_features(
            &raw.user_features[rec.user as usize],
            &raw.item_features[rec.item as usize],
            &mut deduped,
        );
        out.push(DataSample {
            user_id: rec.user,
            item_id: rec.item,
            features,
            label: 1,
        });
    }
    raw.stats.deduped_features += deduped;
    out
}

/// Draw, per user, as many negatives as that user has positives, uniformly
/// without replacement from items the user never rated. A user whose
/// unrated pool is too small falls back to replacement draws (counted);
/// a user who rated everything draws from the full item pool.
pub fn sample_negatives(
    positives: &[DataSample],
    raw: &mut RawData,
    rng: &mut ChaCha8Rng,
) -> Vec<DataSample> {
    let n_items = raw.item_features.len() as u32;
    let mut rated: BTreeMap<u32, HashSet<u32>> = BTreeMap::new();
    for rec in &raw.records {
        rated.entry(rec.user).or_default().insert(rec.item);
    }
    let mut pos_count: BTreeMap<u32, usize> = BTreeMap::new();
    for s in positives {
        *pos_count.entry(s.user_id).or_default() += 1;
    }

    let mut deduped = 0;
    let mut out = Vec::new();
    for (&user, &count) in &pos_count {
        let user_rated = &rated[&user];
        let mut pool: Vec<u32> = (0..n_items).filter(|i| !user_rated.contains(i)).collect();
        let with_replacement = pool.len() < count;
        if pool.is_empty() {
            pool = (0..n_items).collect();
        }
        if with_replacement {
            raw.stats.replacement_fallbacks += 1;
        }
        let picks: Vec<u32> = if with_replacement {
            (0..count)
                .map(|_| pool[rng.gen_range(0..pool.len())])
                .collect()
        } else {
            pool.partial_shuffle(rng, count).0.to_vec()
        };
        for item in picks {
            let features = merge_features(
                &raw.user_features[user as usize],
                &raw.item_features[item as usize],
                &mut deduped,
            );
            out.push(DataSample {
                user_id: user,
                item_id: item,
                features,
                label: 0,
            });
        }
    }
    raw.stats.deduped_features += deduped;
    out
}

// ── splits and batches ───────────────────────────────────────────────

/// Uniform random split at sample granularity; set sizes land within one
/// sample of the exact proportions.
pub fn split(
    samples: &[DataSample],
    ratios: (f64, f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<DataSample>, Vec<DataSample>, Vec<DataSample>), DataError> {
    let total = ratios.0 + ratios.1 + ratios.2;
    if (total - 1.0).abs() > 1e-9 {
        return Err(DataError::BadSplit(total));
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let c1 = ((n as f64 * ratios.0).round() as usize).min(n);
    let c2 = ((n as f64 * (ratios.0 + ratios.1)).round() as usize).clamp(c1, n);
    let take = |range: &[usize]| range.iter().map(|&i| samples[i].clone()).collect();
    Ok((take(&order[..c1]), take(&order[c1..c2]), take(&order[c2..])))
}

/// Shuffle and chunk into batches. With `stratify` on, every batch gets at
/// least one sample of each label while both labels still have undealt
/// samples; batches that end up single-label are flagged. The last batch
/// may be short.
pub fn make_batches(
    set: &[DataSample],
    batch_size: usize,
    stratify: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be positive");
    if set.is_empty() {
        return Vec::new();
    }
    if !stratify {
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(rng);
        return order
            .chunks(batch_size)
            .map(|chunk| Batch::from_samples(chunk.iter().map(|&i| set[i].clone()).collect()))
            .collect();
    }
    assert!(batch_size >= 2, "stratified batches need batch_size >= 2");

    let mut pos: Vec<usize> = (0..set.len()).filter(|&i| set[i].label == 1).collect();
    let mut neg: Vec<usize> = (0..set.len()).filter(|&i| set[i].label == 0).collect();
    pos.shuffle(rng);
    neg.shuffle(rng);

    let mut batches = Vec::new();
    let (mut pi, mut ni) = (0, 0);
    while pi < pos.len() || ni < neg.len() {
        let p_rem = pos.len() - pi;
        let n_rem = neg.len() - ni;
        let cap = batch_size.min(p_rem + n_rem);
        // Proportional allocation, forced to at least one of each label
        // while both pools still have samples.
        let mut take_pos = ((cap as f64 * p_rem as f64) / (p_rem + n_rem) as f64).round()
            as usize;
        take_pos = take_pos.min(p_rem).max(cap.saturating_sub(n_rem));
        if p_rem > 0 && n_rem > 0 && cap >= 2 {
            take_pos = take_pos.clamp(1, cap - 1);
        }
        let take_neg = cap - take_pos;
        let mut chosen: Vec<usize> = pos[pi..pi + take_pos]
            .iter()
            .chain(&neg[ni..ni + take_neg])
            .copied()
            .collect();
        pi += take_pos;
        ni += take_neg;
        chosen.shuffle(rng);
        batches.push(Batch::from_samples(
            chosen.into_iter().map(|i| set[i].clone()).collect(),
        ));
    }
    batches
}

// ── dataset cache ────────────────────────────────────────────────────

/// Write a dataset as the line-oriented `HIRSDATA1` format. The optional
/// header line records the producing subcommand and config hash.
pub fn save_dataset(
    dataset: &Dataset,
    path: &Path,
    header: Option<&str>,
) -> Result<(), DataError> {
    let mut out = String::new();
    out.push_str(DATA_MAGIC);
    out.push('\n');
    if let Some(h) = header {
        let _ = writeln!(out, "# {h}");
    }
    let _ = writeln!(out, "vocab {}", dataset.vocab.len());
    for (id, name) in dataset.vocab.names().iter().enumerate() {
        let _ = writeln!(out, "{id} {name}");
    }
    let _ = writeln!(out, "samples {}", dataset.samples.len());
    for s in &dataset.samples {
        let _ = write!(out, "{} {} {}", s.user_id, s.item_id, s.label);
        for &(id, w) in &s.features {
            let _ = write!(out, " {id}:{w}");
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(out.as_bytes())
        .map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let bad = |msg: &str| DataError::BadCache {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    let lines = read_lines(path)?;
    let mut it = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#'));
    let (_, magic) = it.next().ok_or_else(|| bad("empty file"))?;
    if magic != DATA_MAGIC {
        return Err(bad(&format!("bad magic {magic:?}")));
    }
    let (_, vline) = it.next().ok_or_else(|| bad("missing vocab header"))?;
    let vcount: usize = vline
        .strip_prefix("vocab ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("bad vocab header"))?;
    let mut vocab = FeatureVocab::new();
    for _ in 0..vcount {
        let (ln, line) = it.next().ok_or_else(|| bad("truncated vocab"))?;
        let (id, name) = line.split_once(' ').ok_or_else(|| DataError::Parse {
            path: path.display().to_string(),
            line: ln + 1,
            msg: "bad vocab line".to_string(),
        })?;
        let expect: u32 = id.parse().map_err(|_| bad("bad vocab id"))?;
        let got = vocab.intern(name);
        if got != expect {
            return Err(bad("vocab ids not dense"));
        }
    }
    let (_, sline) = it.next().ok_or_else(|| bad("missing samples header"))?;
    let scount: usize = sline
        .strip_prefix("samples ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("bad samples header"))?;
    let mut samples = Vec::with_capacity(scount);
    for _ in 0..scount {
        let (ln, line) = it.next().ok_or_else(|| bad("truncated samples"))?;
        let parse_err = |msg: String| DataError::Parse {
            path: path.display().to_string(),
            line: ln + 1,
            msg,
        };
        let mut toks = line.split(' ');
        let user_id: u32 = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err("bad user id".into()))?;
        let item_id: u32 = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err("bad item id".into()))?;
        let label: u8 = toks
            .next()
            .and_then(|t| t.parse().ok())
            .filter(|l| *l <= 1)
            .ok_or_else(|| parse_err("bad label".into()))?;
        let mut features = Vec::new();
        for tok in toks {
            let (id, w) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(format!("bad feature token {tok:?}")))?;
            let id: u32 = id.parse().map_err(|_| parse_err("bad feature id".into()))?;
            if id as usize >= vocab.len() {
                return Err(DataError::UnknownFeature(id, vocab.len()));
            }
            let w: f64 = w
                .parse()
                .map_err(|_| parse_err("bad feature value".into()))?;
            features.push((id, w));
        }
        samples.push(DataSample {
            user_id,
            item_id,
            features,
            label,
        });
    }
    Ok(Dataset { vocab, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn write_file(dir: &std::path::Path, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn parses_movielens_style_row() {
        let dir = tempfile::tempdir().unwrap();
        let ratings = write_file(dir.path(), "ratings.dat", "1::1193::5::978300760\n");
        let raw = load_interactions(&ratings, None, None, &DataSchema::default()).unwrap();
        assert_eq!(raw.records.len(), 1);
        assert_eq!(raw.records[0].rating, 5.0);
        assert_eq!(raw.vocab.get("user:1"), Some(0));
        assert_eq!(raw.vocab.get("item:1193"), Some(1));
    }

    #[test]
    fn empty_file_is_empty_record_set() {
        let dir = tempfile::tempdir().unwrap();
        let ratings = write_file(dir.path(), "ratings.dat", "");
        let raw = load_interactions(&ratings, None, None, &DataSchema::default()).unwrap();
        assert!(raw.records.is_empty());
    }

    #[test]
    fn missing_rating_column_errors_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let ratings = write_file(dir.path(), "ratings.dat", "1::1193::5\n2::77\n");
        let err = load_interactions(&ratings, None, None, &DataSchema::default()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn missing_join_key_drops_record_with_count() {
        let dir = tempfile::tempdir().unwrap();
        let ratings = write_file(dir.path(), "r.dat", "1::10::5\n1::11::4\n");
        let items = write_file(dir.path(), "i.dat", "10::Comedy|Drama\n");
        let raw =
            load_interactions(&ratings, None, Some(&items), &DataSchema::default()).unwrap();
        assert_eq!(raw.records.len(), 1);
        assert_eq!(raw.stats.dropped_missing_join, 1);
        // item 10 carries its id feature plus two genres
        assert_eq!(raw.item_features[0].len(), 3);
    }

    #[test]
    fn feature_value_suffix_parses() {
        assert_eq!(parse_feature_token("year:0.5"), ("year".to_string(), 0.5));
        assert_eq!(parse_feature_token("Comedy"), ("Comedy".to_string(), 1.0));
    }

    fn tiny_raw(n_users: u32, n_items: u32, ratings: &[(u32, u32, f64)]) -> RawData {
        let mut vocab = FeatureVocab::new();
        let user_features = (0..n_users)
            .map(|u| vec![(vocab.intern(&format!("user:{u}")), 1.0)])
            .collect();
        let item_features = (0..n_items)
            .map(|i| vec![(vocab.intern(&format!("item:{i}")), 1.0)])
            .collect();
        RawData {
            vocab,
            records: ratings
                .iter()
                .map(|&(user, item, rating)| RawRecord { user, item, rating })
                .collect(),
            user_features,
            item_features,
            stats: IngestStats::default(),
        }
    }

    #[test]
    fn threshold_is_strict() {
        let mut raw = tiny_raw(1, 3, &[(0, 0, 5.0), (0, 1, 3.0), (0, 2, 2.0)]);
        let pos = to_implicit(&mut raw, &DataSchema::default());
        assert_eq!(pos.len(), 1);
        assert_eq!(pos[0].item_id, 0);
    }

    #[test]
    fn all_rated_mode_keeps_everything() {
        let mut raw = tiny_raw(1, 3, &[(0, 0, 1.0), (0, 1, 0.0)]);
        let schema = DataSchema {
            implicit_mode: ImplicitMode::AllRated,
            ..DataSchema::default()
        };
        assert_eq!(to_implicit(&mut raw, &schema).len(), 2);
    }

    #[test]
    fn negatives_match_positive_counts_per_user() {
        let ratings: Vec<(u32, u32, f64)> = (0..7).map(|i| (0, i, 5.0)).collect();
        let mut raw = tiny_raw(1, 20, &ratings);
        let pos = to_implicit(&mut raw, &DataSchema::default());
        assert_eq!(pos.len(), 7);
        let negs = sample_negatives(&pos, &mut raw, &mut rng(3));
        assert_eq!(negs.len(), 7);
        assert!(negs.iter().all(|s| s.label == 0));
        // without replacement means distinct, unrated items
        let items: HashSet<u32> = negs.iter().map(|s| s.item_id).collect();
        assert_eq!(items.len(), 7);
        assert!(items.iter().all(|&i| i >= 7));
        assert_eq!(raw.stats.replacement_fallbacks, 0);
    }

    #[test]
    fn exhausted_pool_falls_back_with_warning() {
        let ratings: Vec<(u32, u32, f64)> = (0..3).map(|i| (0, i, 5.0)).collect();
        let mut raw = tiny_raw(1, 3, &ratings);
        let pos = to_implicit(&mut raw, &DataSchema::default());
        let negs = sample_negatives(&pos, &mut raw, &mut rng(3));
        assert_eq!(negs.len(), 3);
        assert_eq!(raw.stats.replacement_fallbacks, 1);
    }

    #[test]
    fn negatives_are_deterministic_under_seed() {
        let ratings: Vec<(u32, u32, f64)> = (0..5).map(|i| (i % 2, i, 5.0)).collect();
        let mut raw1 = tiny_raw(2, 30, &ratings);
        let pos1 = to_implicit(&mut raw1, &DataSchema::default());
        let a = sample_negatives(&pos1, &mut raw1, &mut rng(11));
        let mut raw2 = tiny_raw(2, 30, &ratings);
        let pos2 = to_implicit(&mut raw2, &DataSchema::default());
        let b = sample_negatives(&pos2, &mut raw2, &mut rng(11));
        assert_eq!(a, b);
    }

    fn synthetic_samples(n_pos: usize, n_neg: usize) -> Vec<DataSample> {
        (0..n_pos + n_neg)
            .map(|i| DataSample {
                user_id: i as u32 % 3,
                item_id: i as u32,
                features: vec![(i as u32 % 5, 1.0)],
                label: u8::from(i < n_pos),
            })
            .collect()
    }

    #[test]
    fn split_100_at_70_15_15() {
        let samples = synthetic_samples(50, 50);
        let (train, val, test) = split(&samples, (0.7, 0.15, 0.15), &mut rng(5)).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (70, 15, 15));
    }

    #[test]
    fn degenerate_split_puts_all_in_train() {
        let samples = synthetic_samples(3, 3);
        let (train, val, test) = split(&samples, (1.0, 0.0, 0.0), &mut rng(5)).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (6, 0, 0));
    }

    #[test]
    fn split_is_deterministic_and_preserves_multiset() {
        let samples = synthetic_samples(20, 10);
        let a = split(&samples, (0.7, 0.15, 0.15), &mut rng(9)).unwrap();
        let b = split(&samples, (0.7, 0.15, 0.15), &mut rng(9)).unwrap();
        assert_eq!(a, b);
        let mut combined: Vec<_> = a.0.iter().chain(&a.1).chain(&a.2).cloned().collect();
        combined.sort_by_key(|s| s.item_id);
        assert_eq!(combined, samples);
    }

    #[test]
    fn stratified_batches_hold_both_labels() {
        let samples = synthetic_samples(5, 5);
        let batches = make_batches(&samples, 4, true, &mut rng(2));
        assert_eq!(batches.iter().map(Batch::len).sum::<usize>(), 10);
        for b in &batches {
            assert!(!b.single_label, "batch missing a label");
            assert!(!b.pos_idx.is_empty() && !b.neg_idx.is_empty());
        }
    }

    #[test]
    fn one_big_batch_when_batch_size_exceeds_set() {
        let samples = synthetic_samples(3, 2);
        let batches = make_batches(&samples, 100, true, &mut rng(2));
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 5);
    }

    #[test]
    fn all_positive_set_is_flagged_single_label() {
        let samples = synthetic_samples(6, 0);
        let batches = make_batches(&samples, 4, true, &mut rng(2));
        assert!(!batches.is_empty());
        assert!(batches.iter().all(|b| b.single_label));
    }

    #[test]
    fn batching_preserves_sample_multiset() {
        let samples = synthetic_samples(13, 8);
        let batches = make_batches(&samples, 4, true, &mut rng(6));
        let mut seen: Vec<_> = batches.iter().flat_map(|b| b.samples.clone()).collect();
        seen.sort_by_key(|s| s.item_id);
        assert_eq!(seen, samples);
    }

    #[test]
    fn cache_round_trips() {
        let dataset = Dataset {
            vocab: {
                let mut v = FeatureVocab::new();
                v.intern("user:1");
                v.intern("item:2");
                v.intern("genre:Comedy");
                v
            },
            samples: vec![DataSample {
                user_id: 0,
                item_id: 1,
                features: vec![(0, 1.0), (1, 1.0), (2, 0.25)],
                label: 1,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.hirsdata");
        save_dataset(&dataset, &path, Some("synth-gen config=deadbeef")).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded, dataset);
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.starts_with("HIRSDATA1\n"));
    }

    #[test]
    fn cache_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "bad.hirsdata", "NOTMAGIC\nvocab 0\nsamples 0\n");
        assert!(load_dataset(&path).is_err());
    }
}
