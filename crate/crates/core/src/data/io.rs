//! Canonical on-disk layout of a dataset directory:
//!
//! | file                | line format                     |
//! |---------------------|---------------------------------|
//! | `meta.json`         | `{"n_users", "n_items", "n_groups"}` |
//! | `users.tsv`         | `user<TAB>item`                 |
//! | `groups_items.tsv`  | `group<TAB>item` (optional)     |
//! | `group_members.txt` | `group<SPACE>u1,u2,...`         |
//! | `split.tsv`         | `kind<TAB>anchor<TAB>item<TAB>split` (written by `prepare`) |
//!
//! Ids are 0-based. Interaction files may carry extra trailing columns
//! (ratings, timestamps), which are ignored.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AnchorKind, Dataset, LabeledEdges, Split};
use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const USER_ITEMS_FILE: &str = "users.tsv";
pub const GROUP_ITEMS_FILE: &str = "groups_items.tsv";
pub const GROUP_MEMBERS_FILE: &str = "group_members.txt";
pub const SPLIT_FILE: &str = "split.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub n_users: usize,
    pub n_items: usize,
    pub n_groups: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn parse_id(path: &Path, line: usize, tok: &str, what: &str) -> Result<usize> {
    tok.trim().parse::<usize>().map_err(|_| parse_err(path, line, format!("bad {what} id {tok:?}")))
}

pub fn load_meta(dir: &Path) -> Result<Meta> {
    let path = dir.join(META_FILE);
    serde_json::from_str(&read(&path)?).map_err(|e| parse_err(&path, e.line(), e.to_string()))
}

/// Parses `anchor<TAB>item` lines into a deduplicated, sorted edge list,
/// checking ids against the declared counts.
pub fn load_interactions(path: &Path, n_anchors: usize, n_items: usize) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split(['\t', ' ']).filter(|t| !t.is_empty());
        let (Some(a), Some(i)) = (toks.next(), toks.next()) else {
            return Err(parse_err(path, ln, "expected `id<TAB>item_id`"));
        };
        let a = parse_id(path, ln, a, "anchor")?;
        let i = parse_id(path, ln, i, "item")?;
        if a >= n_anchors {
            return Err(parse_err(path, ln, format!("anchor id {a} >= declared count {n_anchors}")));
        }
        if i >= n_items {
            return Err(parse_err(path, ln, format!("item id {i} >= declared count {n_items}")));
        }
        edges.push((a, i));
    }
    edges.sort_unstable();
    edges.dedup();
    Ok(edges)
}

/// Parses `gid u1,u2,...` lines into membership sets `U(g)`.
pub fn load_group_members(path: &Path, n_groups: usize, n_users: usize) -> Result<Vec<Vec<usize>>> {
    let text = read(path)?;
    let mut members = vec![Vec::new(); n_groups];
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (gid, rest) = line.split_once([' ', '\t']).unwrap_or((line, ""));
        let g = parse_id(path, ln, gid, "group")?;
        if g >= n_groups {
            return Err(parse_err(path, ln, format!("group id {g} >= declared count {n_groups}")));
        }
        let users: Vec<&str> = rest.split([',', ' ', '\t']).filter(|t| !t.is_empty()).collect();
        if users.is_empty() {
            return Err(parse_err(path, ln, format!("group {g} has an empty member list")));
        }
        for tok in users {
            let u = parse_id(path, ln, tok, "user")?;
            if u >= n_users {
                return Err(parse_err(path, ln, format!("user id {u} >= declared count {n_users}")));
            }
            members[g].push(u);
        }
    }
    for m in &mut members {
        m.sort_unstable();
        m.dedup();
    }
    if let Some(g) = members.iter().position(Vec::is_empty) {
        return Err(Error::Dataset(format!("{}: group {g} has no members", path.display())));
    }
    Ok(members)
}

/// Loads a dataset directory. Without `groups_items.tsv` the group–item
/// matrix is empty; without `split.tsv` every edge is labelled train.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut ds = load_unsplit_dataset(dir)?;
    let split_path = dir.join(SPLIT_FILE);
    if split_path.exists() {
        apply_splits(&mut ds, &split_path)?;
    }
    Ok(ds)
}

/// Loads a dataset directory ignoring any `split.tsv`.
pub fn load_unsplit_dataset(dir: &Path) -> Result<Dataset> {
    let meta = load_meta(dir)?;
    let ui = load_interactions(&dir.join(USER_ITEMS_FILE), meta.n_users, meta.n_items)?;
    let gi_path = dir.join(GROUP_ITEMS_FILE);
    let gi = if gi_path.exists() { load_interactions(&gi_path, meta.n_groups, meta.n_items)? } else { Vec::new() };
    let members = load_group_members(&dir.join(GROUP_MEMBERS_FILE), meta.n_groups, meta.n_users)?;
    let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    Dataset::new(
        name,
        meta.n_users,
        meta.n_items,
        LabeledEdges::new(meta.n_users, meta.n_items, ui)?,
        LabeledEdges::new(meta.n_groups, meta.n_items, gi)?,
        members,
    )
}

/// Reads `split.tsv` rows.
pub fn load_splits(path: &Path) -> Result<Vec<(AnchorKind, usize, usize, Split)>> {
    let text = read(path)?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split('\t').collect();
        if toks.len() != 4 {
            return Err(parse_err(path, ln, "expected `kind<TAB>anchor<TAB>item<TAB>split`"));
        }
        let kind: AnchorKind = toks[0].parse().map_err(|e: Error| parse_err(path, ln, e.to_string()))?;
        let a = parse_id(path, ln, toks[1], "anchor")?;
        let i = parse_id(path, ln, toks[2], "item")?;
        let s: Split = toks[3].trim().parse().map_err(|e: Error| parse_err(path, ln, e.to_string()))?;
        rows.push((kind, a, i, s));
    }
    Ok(rows)
}

fn apply_splits(ds: &mut Dataset, path: &Path) -> Result<()> {
    let rows = load_splits(path)?;
    for kind in [AnchorKind::User, AnchorKind::Group] {
        let edges = match kind {
            AnchorKind::User => &mut ds.user_items,
            AnchorKind::Group => &mut ds.group_items,
        };
        let mut labels = vec![None; edges.len()];
        for &(k, a, i, s) in rows.iter().filter(|r| r.0 == kind) {
            let Ok(pos) = edges.edges().binary_search(&(a, i)) else {
                return Err(Error::Dataset(format!("{}: {k} edge ({a}, {i}) not in interactions", path.display())));
            };
            labels[pos] = Some(s);
        }
        if let Some(pos) = labels.iter().position(Option::is_none) {
            let (a, i) = edges.edges()[pos];
            return Err(Error::Dataset(format!("{}: {kind} edge ({a}, {i}) has no split label", path.display())));
        }
        edges.set_labels(labels.into_iter().map(Option::unwrap).collect())?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_edges(path: &Path, edges: &LabeledEdges) -> Result<()> {
    let mut w = create(path)?;
    for &(a, i) in edges.edges() {
        writeln!(w, "{a}\t{i}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the canonical files (not the split) for `ds` into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(&ds.meta())? + "\n").map_err(|e| Error::io(&meta_path, e))?;
    write_edges(&dir.join(USER_ITEMS_FILE), &ds.user_items)?;
    write_edges(&dir.join(GROUP_ITEMS_FILE), &ds.group_items)?;
    let path: PathBuf = dir.join(GROUP_MEMBERS_FILE);
    let mut w = create(&path)?;
    for (g, m) in ds.members().iter().enumerate() {
        let list: Vec<String> = m.iter().map(usize::to_string).collect();
        writeln!(w, "{g} {}", list.join(",")).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn write_splits(dir: &Path, ds: &Dataset) -> Result<()> {
    let path = dir.join(SPLIT_FILE);
    let mut w = create(&path)?;
    for kind in [AnchorKind::User, AnchorKind::Group] {
        for (a, i, s) in ds.interactions(kind).iter() {
            writeln!(w, "{kind}\t{a}\t{i}\t{s}").map_err(|e| Error::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn interactions_dedup_empty_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(dir.path(), "a.tsv", "0\t5\n0\t5\n");
        assert_eq!(load_interactions(&p, 1, 6).unwrap(), vec![(0, 5)]);
        let p = file(dir.path(), "b.tsv", "");
        assert!(load_interactions(&p, 1, 6).unwrap().is_empty());
        let p = file(dir.path(), "c.tsv", "0\tx\n");
        match load_interactions(&p, 1, 6) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        let p = file(dir.path(), "d.tsv", "0\t1\n3\t1\n");
        assert!(matches!(load_interactions(&p, 2, 6), Err(Error::Parse { line: 2, .. })));
        let p = file(dir.path(), "e.tsv", "0\t9\n");
        assert!(load_interactions(&p, 1, 6).is_err());
        let p = file(dir.path(), "f.tsv", "0\t1\t5\t123456\n");
        assert_eq!(load_interactions(&p, 1, 6).unwrap(), vec![(0, 1)]);
    }

    #[test]
    fn group_members_examples() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(dir.path(), "m.txt", "0 1,2,3\n");
        assert_eq!(load_group_members(&p, 1, 5).unwrap(), vec![vec![1, 2, 3]]);
        let p = file(dir.path(), "m2.txt", "0 1,1\n");
        assert_eq!(load_group_members(&p, 1, 5).unwrap(), vec![vec![1]]);
        let p = file(dir.path(), "m3.txt", "0 9\n");
        assert!(matches!(load_group_members(&p, 1, 5), Err(Error::Parse { line: 1, .. })));
        let p = file(dir.path(), "m4.txt", "0\n");
        assert!(load_group_members(&p, 1, 5).is_err());
        let p = file(dir.path(), "m5.txt", "1 0\n");
        assert!(load_group_members(&p, 2, 5).is_err(), "group 0 missing");
    }

    #[test]
    fn dataset_round_trip_with_splits() {
        let w = crate::data::generate_synthetic(&crate::data::SyntheticSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &w.dataset).unwrap();
        write_splits(dir.path(), &w.dataset).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.fingerprint(), w.dataset.fingerprint());
    }
}
