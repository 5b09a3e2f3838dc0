use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CatalogError, InteractionRecord, ItemMeta, UNKNOWN_CATEGORY};

/// Column layout of an interaction log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    /// `user_id,item_id,rating,timestamp[,title,categories]`
    Ratings,
    /// `user_id,item_id,playtime_hours,timestamp[,title,categories]`; ratings
    /// are derived from playtime by [`transform_steam_ratings`].
    Steam,
}

/// A malformed input row, identified by its 1-based data line number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    pub row: usize,
    pub reason: String,
}

/// Rows that parsed plus the rows that did not.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested<T> {
    pub records: Vec<T>,
    pub malformed: Vec<RowError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedLog {
    pub records: Vec<InteractionRecord>,
    /// First-seen title/categories per item.
    pub items: BTreeMap<String, ItemMeta>,
    pub malformed: Vec<RowError>,
}

/// A Steam-style row carrying playtime instead of a rating.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaytimeRecord {
    pub row: usize,
    pub user_id: String,
    pub item_id: String,
    pub playtime_hours: f64,
    pub timestamp: i64,
}

/// Playtime above this many hours maps to the top rating.
const STEAM_PLAYTIME_CUTOFF_HOURS: f64 = 3.0;

/// Rating 5 for playtime strictly above three hours, 2 otherwise.
/// Negative playtime is a row-level error.
pub fn transform_steam_ratings(records: &[PlaytimeRecord]) -> Ingested<InteractionRecord> {
    let mut out = Ingested { records: Vec::with_capacity(records.len()), malformed: Vec::new() };
    for r in records {
        if !(r.playtime_hours >= 0.0) {
            out.malformed.push(RowError {
                row: r.row,
                reason: format!("negative or invalid playtime {}", r.playtime_hours),
            });
            continue;
        }
        let rating = if r.playtime_hours > STEAM_PLAYTIME_CUTOFF_HOURS { 5.0 } else { 2.0 };
        out.records.push(InteractionRecord {
            user_id: r.user_id.clone(),
            item_id: r.item_id.clone(),
            rating,
            timestamp: r.timestamp,
        });
    }
    out
}

struct Columns {
    user: usize,
    item: usize,
    value: usize,
    timestamp: usize,
    title: Option<usize>,
    categories: Option<usize>,
}

fn find(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

fn require(headers: &csv::StringRecord, names: &[&str]) -> Result<usize, CatalogError> {
    find(headers, names).ok_or_else(|| CatalogError::MissingColumn(names[0].to_string()))
}

/// Reads a CSV log with a header row. Rows that fail to parse are reported in
/// `malformed` and skipped; file-level problems are errors.
pub fn load_log(path: &Path, schema: Schema) -> Result<LoadedLog, CatalogError> {
    let file = File::open(path).map_err(|source| CatalogError::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let value_names: &[&str] = match schema {
        Schema::Ratings => &["rating"],
        Schema::Steam => &["playtime_hours", "playtime"],
    };
    let cols = Columns {
        user: require(&headers, &["user_id"])?,
        item: require(&headers, &["item_id"])?,
        value: require(&headers, value_names)?,
        timestamp: require(&headers, &["timestamp"])?,
        title: find(&headers, &["title"]),
        categories: find(&headers, &["categories", "genres"]),
    };

    let mut items = BTreeMap::new();
    let mut malformed = Vec::new();
    let mut rated = Vec::new();
    let mut playtime = Vec::new();

    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                malformed.push(RowError { row: row_no, reason: e.to_string() });
                continue;
            }
        };
        match parse_row(&row, &cols, schema) {
            Ok((user_id, item_id, value, timestamp)) => {
                if !items.contains_key(&item_id) {
                    items.insert(item_id.clone(), item_meta(&row, &cols, &item_id));
                }
                match schema {
                    Schema::Ratings => rated.push(InteractionRecord { user_id, item_id, rating: value, timestamp }),
                    Schema::Steam => playtime.push(PlaytimeRecord {
                        row: row_no,
                        user_id,
                        item_id,
                        playtime_hours: value,
                        timestamp,
                    }),
                }
            }
            Err(reason) => malformed.push(RowError { row: row_no, reason }),
        }
    }

    let records = match schema {
        Schema::Ratings => rated,
        Schema::Steam => {
            let t = transform_steam_ratings(&playtime);
            malformed.extend(t.malformed);
            malformed.sort_by_key(|e| e.row);
            t.records
        }
    };
    Ok(LoadedLog { records, items, malformed })
}

fn parse_row(
    row: &csv::StringRecord,
    cols: &Columns,
    schema: Schema,
) -> Result<(String, String, f64, i64), String> {
    let field = |idx: usize, name: &str| -> Result<&str, String> {
        match row.get(idx) {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(format!("missing {name}")),
        }
    };
    let user = field(cols.user, "user_id")?.to_string();
    let item = field(cols.item, "item_id")?.to_string();
    let raw_value = field(cols.value, "value")?;
    let value: f64 = raw_value.parse().map_err(|_| format!("unparsable value `{raw_value}`"))?;
    let raw_ts = field(cols.timestamp, "timestamp")?;
    let timestamp: i64 = raw_ts.parse().map_err(|_| format!("unparsable timestamp `{raw_ts}`"))?;
    if timestamp <= 0 {
        return Err(format!("timestamp {timestamp} is not positive"));
    }
    if schema == Schema::Ratings && !(1.0..=5.0).contains(&value) {
        return Err(format!("rating {value} outside [1, 5]"));
    }
    if !value.is_finite() {
        return Err(format!("non-finite value `{raw_value}`"));
    }
    Ok((user, item, value, timestamp))
}

fn item_meta(row: &csv::StringRecord, cols: &Columns, item_id: &str) -> ItemMeta {
    let title = cols
        .title
        .and_then(|i| row.get(i))
        .filter(|s| !s.is_empty())
        .unwrap_or(item_id)
        .to_string();
    let mut categories: Vec<String> = cols
        .categories
        .and_then(|i| row.get(i))
        .map(|s| s.split(['|', ';']).map(str::trim).filter(|c| !c.is_empty()).map(String::from).collect())
        .unwrap_or_default();
    if categories.is_empty() {
        categories.push(UNKNOWN_CATEGORY.to_string());
    }
    ItemMeta { title, categories }
}

/// Iterated k-core filter: drops users with fewer than `min_user` and items
/// with fewer than `min_item` interactions until nothing changes. Input order
/// is preserved.
pub fn filter_min_interactions(
    records: &[InteractionRecord],
    min_user: usize,
    min_item: usize,
) -> Result<Vec<InteractionRecord>, CatalogError> {
    if min_user == 0 || min_item == 0 {
        return Err(CatalogError::InvalidParameter("interaction thresholds must be >= 1".into()));
    }
    let mut keep = vec![true; records.len()];
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for (r, _) in records.iter().zip(&keep).filter(|(_, k)| **k) {
            *users.entry(&r.user_id).or_default() += 1;
            *items.entry(&r.item_id).or_default() += 1;
        }
        let mut changed = false;
        for (r, k) in records.iter().zip(keep.iter_mut()) {
            if *k && (users[r.user_id.as_str()] < min_user || items[r.item_id.as_str()] < min_item) {
                *k = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(records.iter().zip(&keep).filter(|(_, k)| **k).map(|(r, _)| r.clone()).collect())
}
