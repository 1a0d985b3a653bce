//! Interaction ingestion: parsing raw logs, binarizing and filtering them into
//! a dense, de-duplicated [`InteractionSet`], per-user k-fold splits and a
//! compressed user → positive-items index.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("dataset is degenerate after filtering ({users} users, {items} items)")]
    Degenerate { users: usize, items: usize },
    #[error("invalid filter rules: {0}")]
    InvalidRules(String),
    #[error("invalid fold count {0}, need at least 2")]
    InvalidFoldCount(usize),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawInteraction {
    pub user_key: String,
    pub item_key: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Tab,
    Comma,
}

impl Delimiter {
    fn byte(self) -> u8 {
        match self {
            Delimiter::Tab => b'\t',
            Delimiter::Comma => b',',
        }
    }
}

impl FromStr for Delimiter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tab" | "tsv" | "\t" => Ok(Delimiter::Tab),
            "comma" | "csv" | "," => Ok(Delimiter::Comma),
            other => Err(format!(
                "unknown delimiter '{other}' (expected tab or comma)"
            )),
        }
    }
}

/// Column layout of a raw interaction file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub delimiter: Delimiter,
    pub has_header: bool,
    pub user_col: usize,
    pub item_col: usize,
    pub value_col: usize,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            delimiter: Delimiter::Tab,
            has_header: false,
            user_col: 0,
            item_col: 1,
            value_col: 2,
        }
    }
}

impl Schema {
    fn arity(&self) -> usize {
        self.user_col.max(self.item_col).max(self.value_col) + 1
    }
}

/// Reads one interaction per line. Blank lines are skipped; anything else that
/// does not yield (user, item, finite value) is an error carrying its line
/// number.
pub fn parse_interactions<R: Read>(
    reader: R,
    schema: &Schema,
) -> Result<Vec<RawInteraction>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter.byte())
        .has_headers(schema.has_header)
        .flexible(true)
        .quoting(schema.delimiter == Delimiter::Comma)
        .from_reader(reader);
    let arity = schema.arity();
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Err(DataError::Parse {
                    line,
                    message: e.to_string(),
                });
            }
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() < arity {
            return Err(DataError::Parse {
                line,
                message: format!("expected at least {arity} fields, found {}", record.len()),
            });
        }
        let user_key = record[schema.user_col].trim();
        let item_key = record[schema.item_col].trim();
        if user_key.is_empty() || item_key.is_empty() {
            return Err(DataError::Parse {
                line,
                message: "empty user or item key".into(),
            });
        }
        let raw_value = record[schema.value_col].trim();
        let value: f64 = raw_value.parse().map_err(|_| DataError::Parse {
            line,
            message: format!("non-numeric value '{raw_value}'"),
        })?;
        if !value.is_finite() {
            return Err(DataError::Parse {
                line,
                message: format!("non-finite value '{raw_value}'"),
            });
        }
        out.push(RawInteraction {
            user_key: user_key.to_string(),
            item_key: item_key.to_string(),
            value,
        });
    }
    Ok(out)
}

pub fn parse_interactions_file(
    path: &Path,
    schema: &Schema,
) -> Result<Vec<RawInteraction>, DataError> {
    let file = File::open(path)?;
    parse_interactions(BufReader::new(file), schema)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    AtLeast,
    GreaterThan,
}

impl Comparison {
    fn passes<T: PartialOrd>(self, value: T, bound: T) -> bool {
        match self {
            Comparison::AtLeast => value >= bound,
            Comparison::GreaterThan => value > bound,
        }
    }
}

impl FromStr for Comparison {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ge" | ">=" => Ok(Comparison::AtLeast),
            "gt" | ">" => Ok(Comparison::GreaterThan),
            other => Err(format!("unknown comparison '{other}' (expected ge or gt)")),
        }
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparison::AtLeast => "ge",
            Comparison::GreaterThan => "gt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold<T> {
    pub bound: T,
    pub mode: Comparison,
}

impl<T: PartialOrd + Copy> Threshold<T> {
    pub fn new(bound: T, mode: Comparison) -> Self {
        Self { bound, mode }
    }

    pub fn passes(&self, value: T) -> bool {
        self.mode.passes(value, self.bound)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRules {
    pub binarize: Threshold<f64>,
    pub min_user_interactions: Threshold<usize>,
    /// A bound of 0 with `AtLeast` disables the item filter.
    pub min_item_users: Threshold<usize>,
}

impl FilterRules {
    /// Keep ratings strictly above 4; drop users with fewer than 20 positives.
    pub fn amazon_movies() -> Self {
        Self {
            binarize: Threshold::new(4.0, Comparison::GreaterThan),
            min_user_interactions: Threshold::new(20, Comparison::AtLeast),
            min_item_users: Threshold::new(0, Comparison::AtLeast),
        }
    }

    /// Keep ratings of 5 or more; keep users with more than 10 positives.
    pub fn book_crossing() -> Self {
        Self {
            binarize: Threshold::new(5.0, Comparison::AtLeast),
            min_user_interactions: Threshold::new(10, Comparison::GreaterThan),
            min_item_users: Threshold::new(0, Comparison::AtLeast),
        }
    }

    /// Keep playcounts of 5 or more; items need at least 5 users, users more
    /// than 20 interactions.
    pub fn echonest() -> Self {
        Self {
            binarize: Threshold::new(5.0, Comparison::AtLeast),
            min_user_interactions: Threshold::new(20, Comparison::GreaterThan),
            min_item_users: Threshold::new(5, Comparison::AtLeast),
        }
    }

    /// Binarize at `value > 0` with no count filters.
    pub fn permissive() -> Self {
        Self {
            binarize: Threshold::new(0.0, Comparison::GreaterThan),
            min_user_interactions: Threshold::new(0, Comparison::AtLeast),
            min_item_users: Threshold::new(0, Comparison::AtLeast),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !self.binarize.bound.is_finite() {
            return Err(DataError::InvalidRules(format!(
                "binarize threshold must be finite, got {}",
                self.binarize.bound
            )));
        }
        Ok(())
    }
}

/// De-duplicated implicit-feedback pairs over dense user/item indices.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    num_users: usize,
    num_items: usize,
    /// Sorted by (user, item), no duplicates.
    pairs: Vec<(usize, usize)>,
    user_keys: Vec<String>,
    item_keys: Vec<String>,
    user_lookup: HashMap<String, usize>,
    item_lookup: HashMap<String, usize>,
    item_freq: Vec<usize>,
}

impl InteractionSet {
    /// Builds a set from index pairs, generating keys from the indices.
    pub fn from_pairs(
        num_users: usize,
        num_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let user_keys = (0..num_users).map(|u| u.to_string()).collect();
        let item_keys = (0..num_items).map(|i| i.to_string()).collect();
        Self::with_keys(user_keys, item_keys, pairs.into_iter().collect())
    }

    /// Panics if a pair references an index outside the key tables.
    pub fn with_keys(
        user_keys: Vec<String>,
        item_keys: Vec<String>,
        mut pairs: Vec<(usize, usize)>,
    ) -> Self {
        let num_users = user_keys.len();
        let num_items = item_keys.len();
        pairs.sort_unstable();
        pairs.dedup();
        assert!(
            pairs.iter().all(|&(u, i)| u < num_users && i < num_items),
            "pair index out of range"
        );
        let item_freq = item_frequencies(num_items, &pairs);
        let user_lookup = user_keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        let item_lookup = item_keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        Self {
            num_users,
            num_items,
            pairs,
            user_keys,
            item_keys,
            user_lookup,
            item_lookup,
            item_freq,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Per-item interaction counts `f(j)` over all pairs.
    pub fn item_freq(&self) -> &[usize] {
        &self.item_freq
    }

    pub fn user_key(&self, user: usize) -> &str {
        &self.user_keys[user]
    }

    pub fn item_key(&self, item: usize) -> &str {
        &self.item_keys[item]
    }

    pub fn user_index(&self, key: &str) -> Option<usize> {
        self.user_lookup.get(key).copied()
    }

    pub fn item_index(&self, key: &str) -> Option<usize> {
        self.item_lookup.get(key).copied()
    }

    pub fn density(&self) -> f64 {
        self.pairs.len() as f64 / (self.num_users as f64 * self.num_items as f64)
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            users: self.num_users,
            items: self.num_items,
            interactions: self.pairs.len(),
            density: self.density(),
        }
    }

    /// Writes `interactions.tsv`, `users.tsv` and `items.tsv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(INTERACTIONS_FILE))?);
        for &(u, i) in &self.pairs {
            writeln!(w, "{u}\t{i}")?;
        }
        w.flush()?;
        write_key_table(&dir.join(USERS_FILE), &self.user_keys)?;
        write_key_table(&dir.join(ITEMS_FILE), &self.item_keys)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, DataError> {
        let user_keys = read_key_table(&dir.join(USERS_FILE))?;
        let item_keys = read_key_table(&dir.join(ITEMS_FILE))?;
        let path = dir.join(INTERACTIONS_FILE);
        let mut pairs = Vec::new();
        for (n, line) in open_lines(&path)?.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (u, i) = line
                .split_once('\t')
                .and_then(|(u, i)| {
                    Some((
                        u.trim().parse::<usize>().ok()?,
                        i.trim().parse::<usize>().ok()?,
                    ))
                })
                .ok_or_else(|| {
                    format_error(
                        &path,
                        format!("line {}: expected user_idx<TAB>item_idx", n + 1),
                    )
                })?;
            if u >= user_keys.len() || i >= item_keys.len() {
                return Err(format_error(
                    &path,
                    format!("line {}: index out of range", n + 1),
                ));
            }
            pairs.push((u, i));
        }
        let set = Self::with_keys(user_keys, item_keys, pairs);
        if set.user_lookup.len() != set.num_users || set.item_lookup.len() != set.num_items {
            return Err(format_error(
                &dir.join(USERS_FILE),
                "duplicate keys in index tables".into(),
            ));
        }
        Ok(set)
    }
}

pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const USERS_FILE: &str = "users.tsv";
pub const ITEMS_FILE: &str = "items.tsv";
pub const FOLDS_FILE: &str = "folds.tsv";

fn format_error(path: &Path, message: String) -> DataError {
    DataError::Format {
        path: path.display().to_string(),
        message,
    }
}

fn open_lines(path: &Path) -> Result<std::io::Lines<BufReader<File>>, DataError> {
    let file = File::open(path).map_err(|e| format_error(path, e.to_string()))?;
    Ok(BufReader::new(file).lines())
}

fn write_key_table(path: &Path, keys: &[String]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (idx, key) in keys.iter().enumerate() {
        writeln!(w, "{idx}\t{key}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_key_table(path: &Path) -> Result<Vec<String>, DataError> {
    let mut keys = Vec::new();
    for (n, line) in open_lines(path)?.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (idx, key) = line
            .split_once('\t')
            .ok_or_else(|| format_error(path, format!("line {}: expected idx<TAB>key", n + 1)))?;
        if idx.trim().parse::<usize>().ok() != Some(keys.len()) {
            return Err(format_error(
                path,
                format!("line {}: indices must be dense and ordered", n + 1),
            ));
        }
        keys.push(key.to_string());
    }
    Ok(keys)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "users\t{}", self.users)?;
        writeln!(f, "items\t{}", self.items)?;
        writeln!(f, "interactions\t{}", self.interactions)?;
        writeln!(f, "density\t{:.8}", self.density)?;
        writeln!(f, "density_pct\t{:.3}%", self.density * 100.0)
    }
}

/// `f(j)`: number of pairs that contain item `j`.
pub fn item_frequencies(num_items: usize, pairs: &[(usize, usize)]) -> Vec<usize> {
    let mut freq = vec![0; num_items];
    for &(_, i) in pairs {
        freq[i] += 1;
    }
    freq
}

/// Binarizes, de-duplicates, then filters items and users (one pass each, in
/// that order) and re-indexes survivors by first appearance.
pub fn binarize_filter(
    raw: &[RawInteraction],
    rules: &FilterRules,
) -> Result<InteractionSet, DataError> {
    rules.validate()?;

    // Intern keys in first-appearance order over the passing rows.
    let mut user_ids: HashMap<&str, usize> = HashMap::new();
    let mut item_ids: HashMap<&str, usize> = HashMap::new();
    let mut user_keys: Vec<&str> = Vec::new();
    let mut item_keys: Vec<&str> = Vec::new();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for r in raw.iter().filter(|r| rules.binarize.passes(r.value)) {
        let u = *user_ids.entry(&r.user_key).or_insert_with(|| {
            user_keys.push(&r.user_key);
            user_keys.len() - 1
        });
        let i = *item_ids.entry(&r.item_key).or_insert_with(|| {
            item_keys.push(&r.item_key);
            item_keys.len() - 1
        });
        pairs.push((u, i));
    }
    pairs.sort_unstable();
    pairs.dedup();

    let item_users = item_frequencies(item_keys.len(), &pairs);
    let keep_item: Vec<bool> = item_users
        .iter()
        .map(|&c| rules.min_item_users.passes(c))
        .collect();
    pairs.retain(|&(_, i)| keep_item[i]);

    let mut user_deg = vec![0usize; user_keys.len()];
    for &(u, _) in &pairs {
        user_deg[u] += 1;
    }
    let keep_user: Vec<bool> = user_deg
        .iter()
        .map(|&c| c > 0 && rules.min_user_interactions.passes(c))
        .collect();
    pairs.retain(|&(u, _)| keep_user[u]);

    // Dense re-index; survivors keep their relative first-appearance order.
    let mut user_used = vec![false; user_keys.len()];
    let mut item_used = vec![false; item_keys.len()];
    for &(u, i) in &pairs {
        user_used[u] = true;
        item_used[i] = true;
    }
    let (user_remap, new_user_keys) = compact(&user_used, &user_keys);
    let (item_remap, new_item_keys) = compact(&item_used, &item_keys);
    if new_user_keys.is_empty() || new_item_keys.is_empty() {
        return Err(DataError::Degenerate {
            users: new_user_keys.len(),
            items: new_item_keys.len(),
        });
    }
    let pairs = pairs
        .into_iter()
        .map(|(u, i)| (user_remap[u], item_remap[i]))
        .collect();
    Ok(InteractionSet::with_keys(
        new_user_keys,
        new_item_keys,
        pairs,
    ))
}

fn compact(used: &[bool], keys: &[&str]) -> (Vec<usize>, Vec<String>) {
    let mut remap = vec![usize::MAX; used.len()];
    let mut out = Vec::new();
    for (old, (&flag, key)) in used.iter().zip(keys).enumerate() {
        if flag {
            remap[old] = out.len();
            out.push(key.to_string());
        }
    }
    (remap, out)
}

/// Fold id for every pair of an [`InteractionSet`], aligned with `pairs()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn new(k: usize, fold_of: Vec<usize>) -> Result<Self, DataError> {
        if k < 2 {
            return Err(DataError::InvalidFoldCount(k));
        }
        if let Some(bad) = fold_of.iter().find(|&&f| f >= k) {
            return Err(DataError::InvalidRules(format!(
                "fold id {bad} out of range for k={k}"
            )));
        }
        Ok(Self { k, fold_of })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Pairs outside `test_fold`.
    pub fn train_pairs(&self, set: &InteractionSet, test_fold: usize) -> Vec<(usize, usize)> {
        set.pairs()
            .iter()
            .zip(&self.fold_of)
            .filter(|&(_, &f)| f != test_fold)
            .map(|(&p, _)| p)
            .collect()
    }

    pub fn test_pairs(&self, set: &InteractionSet, test_fold: usize) -> Vec<(usize, usize)> {
        set.pairs()
            .iter()
            .zip(&self.fold_of)
            .filter(|&(_, &f)| f == test_fold)
            .map(|(&p, _)| p)
            .collect()
    }

    /// `folds.tsv`: pair row index TAB fold id.
    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut w = BufWriter::new(File::create(path)?);
        for (row, fold) in self.fold_of.iter().enumerate() {
            writeln!(w, "{row}\t{fold}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `folds.tsv`; `k` is taken as one more than the largest fold id,
    /// unless `k` is given.
    pub fn read(path: &Path, num_pairs: usize, k: Option<usize>) -> Result<Self, DataError> {
        let mut fold_of = vec![usize::MAX; num_pairs];
        for (n, line) in open_lines(path)?.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (row, fold) = line
                .split_once('\t')
                .and_then(|(r, f)| {
                    Some((
                        r.trim().parse::<usize>().ok()?,
                        f.trim().parse::<usize>().ok()?,
                    ))
                })
                .ok_or_else(|| {
                    format_error(path, format!("line {}: expected row<TAB>fold", n + 1))
                })?;
            if row >= num_pairs {
                return Err(format_error(
                    path,
                    format!("line {}: row {row} beyond {num_pairs} pairs", n + 1),
                ));
            }
            fold_of[row] = fold;
        }
        if fold_of.contains(&usize::MAX) {
            return Err(format_error(path, "not every pair has a fold".into()));
        }
        let k = k.unwrap_or_else(|| fold_of.iter().max().map_or(0, |m| m + 1));
        Self::new(k, fold_of)
    }
}

/// Per user, shuffles that user's pairs and deals them round-robin into `k`
/// folds. Users with fewer than `k` pairs leave some folds empty.
pub fn kfold_split(set: &InteractionSet, k: usize, seed: u64) -> Result<FoldAssignment, DataError> {
    if k < 2 {
        return Err(DataError::InvalidFoldCount(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; set.len()];
    let index = UserItemIndex::from_set(set);
    let mut rows: Vec<usize> = Vec::new();
    for user in 0..set.num_users() {
        let range = index.offsets[user]..index.offsets[user + 1];
        rows.clear();
        rows.extend(range);
        rows.shuffle(&mut rng);
        for (pos, &row) in rows.iter().enumerate() {
            fold_of[row] = pos % k;
        }
    }
    FoldAssignment::new(k, fold_of)
}

/// Compressed rows of sorted positive items per user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserItemIndex {
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl UserItemIndex {
    pub fn from_set(set: &InteractionSet) -> Self {
        Self::from_pairs(set.num_users(), set.pairs())
    }

    /// `pairs` need not be sorted; duplicates are dropped.
    pub fn from_pairs(num_users: usize, pairs: &[(usize, usize)]) -> Self {
        let mut sorted = pairs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut offsets = vec![0; num_users + 1];
        for &(u, _) in &sorted {
            offsets[u + 1] += 1;
        }
        for u in 0..num_users {
            offsets[u + 1] += offsets[u];
        }
        let items = sorted.into_iter().map(|(_, i)| i).collect();
        Self { offsets, items }
    }

    pub fn num_users(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn positives(&self, user: usize) -> &[usize] {
        &self.items[self.offsets[user]..self.offsets[user + 1]]
    }

    pub fn degree(&self, user: usize) -> usize {
        self.offsets[user + 1] - self.offsets[user]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.positives(user).binary_search(&item).is_ok()
    }
}
