//! Multi-behavior interaction data.
//!
//! Each behavior is one tab-separated file of `user_id<TAB>item_id[<TAB>timestamp]`
//! lines. Raw IDs are arbitrary strings, remapped to dense indices shared by
//! every behavior of a dataset. The last behavior of the chain is the target.

mod split;
mod synthetic;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub use split::{leave_one_out_split, SplitDataset};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Bidirectional raw-ID to dense-index table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    index: HashMap<String, u32>,
    raw: Vec<String>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_insert(&mut self, raw: &str) -> u32 {
        if let Some(&idx) = self.index.get(raw) {
            return idx;
        }
        let idx = self.raw.len() as u32;
        self.raw.push(raw.to_owned());
        self.index.insert(raw.to_owned(), idx);
        idx
    }

    pub fn get(&self, raw: &str) -> Option<u32> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, idx: u32) -> Option<&str> {
        self.raw.get(idx as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Writes `raw_id<TAB>dense_index` lines in index order.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (idx, raw) in self.raw.iter().enumerate() {
            writeln!(w, "{raw}\t{idx}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut map = IdMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let (raw, idx) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                field: "id map row",
                message: "expected raw_id<TAB>dense_index".into(),
            })?;
            let idx: u32 = idx.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                field: "dense_index",
                message: format!("{idx:?} is not an index"),
            })?;
            if idx as usize != map.len() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    field: "dense_index",
                    message: format!("expected {}, found {idx}", map.len()),
                });
            }
            map.get_or_insert(raw);
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub timestamp: Option<i64>,
    /// Position in the source stream; breaks timestamp ties and stands in
    /// for missing timestamps.
    pub seq: u64,
}

impl Interaction {
    /// Chronological sort key.
    #[inline]
    pub fn order_key(&self) -> (i64, u64) {
        (self.timestamp.unwrap_or(self.seq as i64), self.seq)
    }
}

/// Binary interaction records of one behavior, in insertion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSet {
    pub behavior: usize,
    records: Vec<Interaction>,
}

impl InteractionSet {
    pub fn new(behavior: usize) -> Self {
        InteractionSet {
            behavior,
            records: Vec::new(),
        }
    }

    /// Appends a record; its `seq` is the current record count.
    pub fn push(&mut self, user: u32, item: u32, timestamp: Option<i64>) {
        let seq = self.records.len() as u64;
        self.records.push(Interaction {
            user,
            item,
            timestamp,
            seq,
        });
    }

    pub(crate) fn from_records(behavior: usize, records: Vec<Interaction>) -> Self {
        InteractionSet { behavior, records }
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.records.iter().map(|r| (r.user, r.item))
    }

    /// Sorted, deduplicated item lists per user.
    pub fn items_by_user(&self, num_users: usize) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); num_users];
        for r in &self.records {
            out[r.user as usize].push(r.item);
        }
        for items in &mut out {
            items.sort_unstable();
            items.dedup();
        }
        out
    }
}

/// Parses one behavior's interaction log, growing the ID tables as new raw
/// IDs appear.
pub fn parse_interactions<R: BufRead>(
    reader: R,
    behavior: usize,
    users: &mut IdMap,
    items: &mut IdMap,
) -> Result<InteractionSet> {
    let mut set = InteractionSet::new(behavior);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let line_no = lineno + 1;
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse {
                line: line_no,
                field: "line",
                message: format!("expected 2 or 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let (user, item) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                field: "user_id",
                message: "empty".into(),
            });
        }
        if item.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                field: "item_id",
                message: "empty".into(),
            });
        }
        let timestamp = match fields.get(2).map(|s| s.trim()) {
            None | Some("") => None,
            Some(ts) => Some(ts.parse::<i64>().map_err(|_| Error::Parse {
                line: line_no,
                field: "timestamp",
                message: format!("{ts:?} is not an integer"),
            })?),
        };
        let u = users.get_or_insert(user);
        let i = items.get_or_insert(item);
        set.push(u, i, timestamp);
    }
    Ok(set)
}

/// Keeps the earliest record of every `(user, item)` pair.
///
/// Survivors keep their original `seq` and insertion order.
pub fn dedup_earliest(set: InteractionSet) -> InteractionSet {
    let mut best: HashMap<(u32, u32), usize> = HashMap::with_capacity(set.records.len());
    for (pos, r) in set.records.iter().enumerate() {
        best.entry((r.user, r.item))
            .and_modify(|kept| {
                if r.order_key() < set.records[*kept].order_key() {
                    *kept = pos;
                }
            })
            .or_insert(pos);
    }
    let mut keep: Vec<usize> = best.into_values().collect();
    keep.sort_unstable();
    let records = keep.into_iter().map(|p| set.records[p]).collect();
    InteractionSet::from_records(set.behavior, records)
}

/// All behaviors of one dataset over shared user and item index spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBehaviorDataset {
    pub num_users: usize,
    pub num_items: usize,
    /// Behavior names in chain order; the last one is the target.
    pub chain: Vec<String>,
    pub sets: Vec<InteractionSet>,
    pub users: IdMap,
    pub items: IdMap,
}

impl MultiBehaviorDataset {
    pub fn new(chain: Vec<String>, sets: Vec<InteractionSet>, users: IdMap, items: IdMap) -> Result<Self> {
        let ds = MultiBehaviorDataset {
            num_users: users.len(),
            num_items: items.len(),
            chain,
            sets,
            users,
            items,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.chain.is_empty() {
            return Err(Error::Config("behavior chain is empty".into()));
        }
        if self.sets.len() != self.chain.len() {
            return Err(Error::Config(format!(
                "{} interaction sets for a chain of {} behaviors",
                self.sets.len(),
                self.chain.len()
            )));
        }
        for (b, set) in self.sets.iter().enumerate() {
            if set.behavior != b {
                return Err(Error::Config(format!(
                    "interaction set at position {b} is tagged behavior {}",
                    set.behavior
                )));
            }
            for r in set.records() {
                if r.user as usize >= self.num_users || r.item as usize >= self.num_items {
                    return Err(Error::Contract(format!(
                        "interaction ({}, {}) outside {}x{}",
                        r.user, r.item, self.num_users, self.num_items
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reads one file per behavior, in chain order, and deduplicates each.
    pub fn load<P: AsRef<Path>>(chain: &[String], paths: &[P]) -> Result<Self> {
        if chain.len() != paths.len() {
            return Err(Error::Config(format!(
                "{} behaviors but {} input files",
                chain.len(),
                paths.len()
            )));
        }
        let mut users = IdMap::new();
        let mut items = IdMap::new();
        let mut sets = Vec::with_capacity(chain.len());
        for (b, path) in paths.iter().enumerate() {
            let path = path.as_ref();
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let set = parse_interactions(BufReader::new(file), b, &mut users, &mut items).map_err(|e| match e {
                Error::Stream(source) => Error::io(path, source),
                Error::Parse { line, field, message } => Error::Parse {
                    line,
                    field,
                    message: format!("{message} (in {})", path.display()),
                },
                other => other,
            })?;
            sets.push(dedup_earliest(set));
        }
        Self::new(chain.to_vec(), sets, users, items)
    }

    pub fn num_behaviors(&self) -> usize {
        self.chain.len()
    }

    pub fn target(&self) -> &InteractionSet {
        self.sets.last().expect("chain is non-empty")
    }

    pub fn behavior_index(&self, name: &str) -> Option<usize> {
        self.chain.iter().position(|b| b == name)
    }

    /// Re-orders or sub-selects behaviors by name, keeping the index spaces.
    pub fn select_chain<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("behavior chain is empty".into()));
        }
        let mut sets = Vec::with_capacity(names.len());
        let mut chain = Vec::with_capacity(names.len());
        for (pos, name) in names.iter().enumerate() {
            let name = name.as_ref();
            let b = self
                .behavior_index(name)
                .ok_or_else(|| Error::Config(format!("unknown behavior {name:?}")))?;
            if chain.iter().any(|c: &String| c == name) {
                return Err(Error::Config(format!("behavior {name:?} repeated in chain")));
            }
            let mut set = self.sets[b].clone();
            set.behavior = pos;
            sets.push(set);
            chain.push(name.to_owned());
        }
        Ok(MultiBehaviorDataset {
            num_users: self.num_users,
            num_items: self.num_items,
            chain,
            sets,
            users: self.users.clone(),
            items: self.items.clone(),
        })
    }
}
