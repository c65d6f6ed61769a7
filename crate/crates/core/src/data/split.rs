use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Query,
    Database,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Query => "query",
            Role::Database => "database",
        }
    }

    fn parse(s: &str) -> Option<Role> {
        match s {
            "train" => Some(Role::Train),
            "query" => Some(Role::Query),
            "database" => Some(Role::Database),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitItem {
    pub id: u64,
    pub path: String,
    pub labels: Vec<u32>,
}

/// Per-class sample counts drawn for the query and training sets; every
/// remaining item goes to the database.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quota {
    pub query_per_class: usize,
    pub train_per_class: usize,
}

/// Disjoint train / query / database partition of a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub dataset: String,
    pub seed: u64,
    pub num_classes: usize,
    pub items: Vec<SplitItem>,
    pub train: Vec<u64>,
    pub query: Vec<u64>,
    pub database: Vec<u64>,
}

/// Draws `quota` items per class for the query set, then for the training
/// set; the remainder is the database.
///
/// Classes are served rarest first. An item with several labels is charged
/// to exactly one of them: the class whose draw picked it.
pub fn quota_split(
    labels: &[Vec<u32>],
    num_classes: usize,
    quota: Quota,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for &i in &order {
        for &l in &labels[i] {
            let l = l as usize;
            if l >= num_classes {
                return Err(Error::Dataset(format!("item {i} has label {l} outside {num_classes} classes")));
            }
            members[l].push(i);
        }
    }
    if let Some(c) = members.iter().position(|m| m.is_empty()) {
        return Err(Error::Dataset(format!("category {c} has no items")));
    }
    let mut by_rarity: Vec<usize> = (0..num_classes).collect();
    by_rarity.sort_by_key(|&c| (members[c].len(), c));

    let mut taken = vec![false; labels.len()];
    let mut draw = |per_class: usize, what: &str| -> Result<Vec<usize>> {
        let mut picked = Vec::with_capacity(per_class * num_classes);
        for &c in &by_rarity {
            let got: Vec<usize> = members[c]
                .iter()
                .copied()
                .filter(|&i| !taken[i])
                .take(per_class)
                .collect();
            if got.len() < per_class {
                return Err(Error::Dataset(format!(
                    "category {c} has only {} unassigned items for a {what} quota of {per_class}",
                    got.len()
                )));
            }
            for &i in &got {
                taken[i] = true;
            }
            picked.extend(got);
        }
        picked.sort_unstable();
        Ok(picked)
    };
    let query = draw(quota.query_per_class, "query")?;
    let train = draw(quota.train_per_class, "train")?;
    let database = (0..labels.len()).filter(|&i| !taken[i]).collect();
    Ok((train, query, database))
}

impl DatasetSplit {
    /// Builds a split over `items` whose ids are their positions.
    pub fn from_items(dataset: &str, items: Vec<SplitItem>, num_classes: usize, quota: Quota, seed: u64) -> Result<Self> {
        let labels: Vec<Vec<u32>> = items.iter().map(|i| i.labels.clone()).collect();
        let (train, query, database) = quota_split(&labels, num_classes, quota, seed)?;
        let id = |v: Vec<usize>| v.into_iter().map(|i| items[i].id).collect::<Vec<u64>>();
        let split = DatasetSplit {
            dataset: dataset.into(),
            seed,
            num_classes,
            train: id(train),
            query: id(query),
            database: id(database),
            items,
        };
        split.check_disjoint()?;
        Ok(split)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.items.len());
        for id in self.train.iter().chain(&self.query).chain(&self.database) {
            if !seen.insert(*id) {
                return Err(Error::Dataset(format!("id {id} appears in more than one role")));
            }
        }
        Ok(())
    }

    pub fn role_of(&self) -> std::collections::HashMap<u64, Role> {
        let mut m = std::collections::HashMap::with_capacity(self.items.len());
        m.extend(self.train.iter().map(|&i| (i, Role::Train)));
        m.extend(self.query.iter().map(|&i| (i, Role::Query)));
        m.extend(self.database.iter().map(|&i| (i, Role::Database)));
        m
    }

    /// Versioned, line-oriented manifest: a small header, then
    /// `id<TAB>role<TAB>path<TAB>labels` per item.
    pub fn to_manifest(&self) -> String {
        let roles = self.role_of();
        let mut out = String::new();
        let _ = writeln!(out, "# hashdistill split manifest");
        let _ = writeln!(out, "version\t{MANIFEST_VERSION}");
        let _ = writeln!(out, "dataset\t{}", self.dataset);
        let _ = writeln!(out, "seed\t{}", self.seed);
        let _ = writeln!(out, "classes\t{}", self.num_classes);
        let _ = writeln!(out, "items\t{}", self.items.len());
        for item in &self.items {
            let role = roles.get(&item.id).map_or("unused", |r| r.as_str());
            let labels: Vec<String> = item.labels.iter().map(u32::to_string).collect();
            let _ = writeln!(out, "{}\t{}\t{}\t{}", item.id, role, item.path, labels.join(","));
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            what: "split manifest",
            detail,
        };
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{key}` line")))?;
            let (k, v) = line.split_once('\t').ok_or_else(|| bad(format!("malformed header `{line}`")))?;
            if k != key {
                return Err(bad(format!("expected `{key}`, found `{k}`")));
            }
            Ok(v.to_string())
        };
        let version: u32 = header("version")?.parse().map_err(|_| bad("version".into()))?;
        if version != MANIFEST_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let dataset = header("dataset")?;
        let seed = header("seed")?.parse().map_err(|_| bad("seed".into()))?;
        let num_classes = header("classes")?.parse().map_err(|_| bad("classes".into()))?;
        let count: usize = header("items")?.parse().map_err(|_| bad("items".into()))?;
        let mut split = DatasetSplit {
            dataset,
            seed,
            num_classes,
            items: Vec::with_capacity(count),
            train: Vec::new(),
            query: Vec::new(),
            database: Vec::new(),
        };
        for line in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields in `{line}`")));
            }
            let id: u64 = fields[0].parse().map_err(|_| bad(format!("id `{}`", fields[0])))?;
            let labels = if fields[3].is_empty() {
                Vec::new()
            } else {
                fields[3]
                    .split(',')
                    .map(|l| l.parse().map_err(|_| bad(format!("label `{l}`"))))
                    .collect::<Result<Vec<u32>>>()?
            };
            match Role::parse(fields[1]) {
                Some(Role::Train) => split.train.push(id),
                Some(Role::Query) => split.query.push(id),
                Some(Role::Database) => split.database.push(id),
                None if fields[1] == "unused" => {}
                None => return Err(bad(format!("role `{}`", fields[1]))),
            }
            split.items.push(SplitItem {
                id,
                path: fields[2].to_string(),
                labels,
            });
        }
        if split.items.len() != count {
            return Err(bad(format!("header declares {count} items, found {}", split.items.len())));
        }
        split.check_disjoint()?;
        Ok(split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_manifest())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::from_manifest(&std::fs::read_to_string(path)?)
    }
}
