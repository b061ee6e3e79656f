use std::collections::BTreeMap;
use std::path::Path;

use crate::{ClassId, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    pub name: String,
    pub layer: u8,
}

/// Class id -> (name, layer) with one reserved terrain class that collects
/// every point no other node claims.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticClassTable {
    entries: BTreeMap<ClassId, ClassInfo>,
    other: ClassId,
}

impl SemanticClassTable {
    pub fn new(entries: BTreeMap<ClassId, ClassInfo>, other: ClassId) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("class table is empty"));
        }
        if let Some((id, info)) = entries.iter().find(|(_, c)| !(1..=4).contains(&c.layer)) {
            return Err(Error::invalid(format!(
                "class {id} ({}) has layer {} outside 1..=4",
                info.name, info.layer
            )));
        }
        match entries.get(&other) {
            Some(info) if info.layer == 1 => {}
            Some(_) => return Err(Error::invalid(format!("reserved class {other} is not a terrain class"))),
            None => return Err(Error::invalid(format!("reserved class {other} missing from table"))),
        }
        Ok(Self { entries, other })
    }

    /// The eight-class table used by the synthetic generator.
    pub fn bundled() -> Self {
        let rows: [(ClassId, &str, u8); 8] = [
            (0, "road", 1),
            (1, "sidewalk", 1),
            (2, "other-terrain", 1),
            (3, "building", 2),
            (4, "fence", 2),
            (5, "pole", 3),
            (6, "vegetation-trunk", 3),
            (7, "vehicle", 4),
        ];
        let entries = rows
            .iter()
            .map(|&(id, name, layer)| {
                (
                    id,
                    ClassInfo {
                        name: name.into(),
                        layer,
                    },
                )
            })
            .collect();
        Self::new(entries, 2).expect("bundled table is valid")
    }

    pub fn other_class(&self) -> ClassId {
        self.other
    }

    pub fn layer_of(&self, class: ClassId) -> Option<u8> {
        self.entries.get(&class).map(|c| c.layer)
    }

    pub fn get(&self, class: ClassId) -> Option<&ClassInfo> {
        self.entries.get(&class)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &ClassInfo)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rows needed by a class-embedding table indexed by raw class id.
    pub fn embedding_rows(&self) -> usize {
        self.entries.keys().next_back().map_or(0, |&k| k as usize + 1)
    }

    /// Parses `id name layer` lines plus one `other <id>` line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut other = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::invalid(format!("class table line {}: `{line}`", n + 1));
            match f.as_slice() {
                ["other", id] => other = Some(id.parse().map_err(|_| bad())?),
                [id, name, layer] => {
                    let id: ClassId = id.parse().map_err(|_| bad())?;
                    let layer: u8 = layer.parse().map_err(|_| bad())?;
                    if entries
                        .insert(
                            id,
                            ClassInfo {
                                name: name.to_string(),
                                layer,
                            },
                        )
                        .is_some()
                    {
                        return Err(Error::invalid(format!("duplicate class id {id}")));
                    }
                }
                _ => return Err(bad()),
            }
        }
        let other = other.ok_or_else(|| Error::invalid("class table lacks an `other <id>` line"))?;
        Self::new(entries, other)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (id, c) in &self.entries {
            s.push_str(&format!("{id} {} {}\n", c.name, c.layer));
        }
        s.push_str(&format!("other {}\n", self.other));
        s
    }
}
