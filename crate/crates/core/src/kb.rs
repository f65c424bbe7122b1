//! Knowledge base: interned entities, relations and entity types, plus the
//! fact list and per-entity incidence lists.
//!
//! Relation names carrying the inverse marker (a leading `_`) are folded into
//! their canonical relation; facts stated with an inverse relation are stored
//! with source and target swapped.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prefix marking an inverse relation name.
pub const INVERSE_MARKER: char = '_';

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        pub struct $name(pub usize);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0
            }
        }
    };
}

id_type!(EntityId);
id_type!(RelationId);
id_type!(TypeId);
id_type!(FactId);

/// Strips the inverse marker, returning the canonical name and whether it was present.
pub fn strip_inverse(name: &str) -> (&str, bool) {
    match name.strip_prefix(INVERSE_MARKER) {
        Some(rest) if !rest.is_empty() => (rest, true),
        _ => (name, false),
    }
}

/// Name interner assigning dense ids in first-sighting order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
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

/// A directed fact in canonical orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub id: FactId,
    pub source: EntityId,
    pub relation: RelationId,
    pub target: EntityId,
}

/// Single-writer constructor for a [`KnowledgeBase`].
#[derive(Debug, Default)]
pub struct KbBuilder {
    kb: KnowledgeBase,
}

impl KbBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern_entity(&mut self, name: &str) -> Result<EntityId> {
        if name.is_empty() {
            return Err(Error::EmptyName("entity"));
        }
        let id = self.kb.entities.intern(name);
        if id == self.kb.as_source.len() {
            self.kb.as_source.push(Vec::new());
            self.kb.as_target.push(Vec::new());
            self.kb.entity_types.push(Vec::new());
        }
        Ok(EntityId(id))
    }

    /// Interns a relation name, folding an inverse-marked name onto its canonical form.
    pub fn intern_relation(&mut self, name: &str) -> Result<(RelationId, bool)> {
        if name.is_empty() {
            return Err(Error::EmptyName("relation"));
        }
        let (canonical, inverted) = strip_inverse(name);
        Ok((RelationId(self.kb.relations.intern(canonical)), inverted))
    }

    pub fn intern_type(&mut self, name: &str) -> Result<TypeId> {
        if name.is_empty() {
            return Err(Error::EmptyName("type"));
        }
        Ok(TypeId(self.kb.types.intern(name)))
    }

    /// Adds a fact; inverse-marked relations are stored read backwards.
    pub fn add_fact(&mut self, source: &str, relation: &str, target: &str) -> Result<FactId> {
        let (relation, inverted) = self.intern_relation(relation)?;
        let (source, target) = if inverted {
            (target, source)
        } else {
            (source, target)
        };
        let source = self.intern_entity(source)?;
        let target = self.intern_entity(target)?;
        Ok(self.push_fact(source, relation, target))
    }

    pub fn add_fact_ids(
        &mut self,
        source: EntityId,
        relation: RelationId,
        target: EntityId,
    ) -> Result<FactId> {
        self.kb.check_entity(source)?;
        self.kb.check_entity(target)?;
        if relation.0 >= self.kb.relations.len() {
            return Err(Error::InvalidId {
                kind: "relation",
                id: relation.0,
                size: self.kb.relations.len(),
            });
        }
        Ok(self.push_fact(source, relation, target))
    }

    fn push_fact(&mut self, source: EntityId, relation: RelationId, target: EntityId) -> FactId {
        let id = FactId(self.kb.facts.len());
        self.kb.facts.push(Fact {
            id,
            source,
            relation,
            target,
        });
        self.kb.as_source[source.0].push(id);
        self.kb.as_target[target.0].push(id);
        id
    }

    /// Assigns types to an entity. Repeated assignments are dropped.
    pub fn add_types<'a>(
        &mut self,
        entity: &str,
        types: impl IntoIterator<Item = &'a str>,
    ) -> Result<EntityId> {
        let e = self.intern_entity(entity)?;
        let mut any = false;
        for t in types {
            let t = self.intern_type(t)?;
            any = true;
            if !self.kb.entity_types[e.0].contains(&t) {
                self.kb.entity_types[e.0].push(t);
                self.kb.type_log.push((e, Some(t)));
            }
        }
        if !any {
            self.kb.type_log.push((e, None));
        }
        Ok(e)
    }

    pub fn build(self) -> KnowledgeBase {
        self.kb
    }
}

/// Immutable knowledge base. Shareable across threads once built.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entities: Vocab,
    relations: Vocab,
    types: Vocab,
    facts: Vec<Fact>,
    as_source: Vec<Vec<FactId>>,
    as_target: Vec<Vec<FactId>>,
    entity_types: Vec<Vec<TypeId>>,
    // order in which type assignments were first seen; replayed on serialization
    type_log: Vec<(EntityId, Option<TypeId>)>,
}

impl KnowledgeBase {
    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn types(&self) -> &Vocab {
        &self.types
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn fact(&self, id: FactId) -> Option<&Fact> {
        self.facts.get(id.0)
    }

    pub fn entity(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation(&self, name: &str) -> Option<RelationId> {
        self.relations.get(strip_inverse(name).0).map(RelationId)
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        self.entities.name(e.0).unwrap_or("")
    }

    fn check_entity(&self, e: EntityId) -> Result<()> {
        if e.0 >= self.entities.len() {
            return Err(Error::InvalidId {
                kind: "entity",
                id: e.0,
                size: self.entities.len(),
            });
        }
        Ok(())
    }

    /// Facts having `e` as source.
    pub fn outgoing(&self, e: EntityId) -> &[FactId] {
        self.as_source.get(e.0).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Facts having `e` as target.
    pub fn incoming(&self, e: EntityId) -> &[FactId] {
        self.as_target.get(e.0).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn entity_types(&self, e: EntityId) -> Result<&[TypeId]> {
        self.check_entity(e)?;
        Ok(&self.entity_types[e.0])
    }

    /// Maximum number of types attached to a single entity.
    pub fn max_types(&self) -> usize {
        self.entity_types.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Writes the facts in canonical orientation, one per line.
    pub fn write_facts<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for f in &self.facts {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entities.names[f.source.0],
                self.relations.names[f.relation.0],
                self.entities.names[f.target.0]
            )?;
        }
        Ok(())
    }

    /// Writes type assignments in their original sighting order, so that a
    /// reload reproduces the same type ids.
    pub fn write_types<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut i = 0;
        while i < self.type_log.len() {
            let entity = self.type_log[i].0;
            let mut names = Vec::new();
            while i < self.type_log.len() && self.type_log[i].0 == entity {
                if let Some(t) = self.type_log[i].1 {
                    names.push(self.types.names[t.0].as_str());
                }
                i += 1;
            }
            writeln!(w, "{}\t{}", self.entities.names[entity.0], names.join(","))?;
        }
        Ok(())
    }

    pub fn save(&self, facts_path: &Path, types_path: &Path) -> Result<()> {
        let write = |path: &Path, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| {
            let mut buf = Vec::new();
            f(&mut buf).map_err(|e| Error::io(path, e))?;
            std::fs::write(path, buf).map_err(|e| Error::io(path, e))
        };
        write(facts_path, &|b| self.write_facts(b))?;
        write(types_path, &|b| self.write_types(b))
    }
}

/// Splits a data line, skipping blanks and `#` comments.
pub(crate) fn data_line(raw: &str) -> Option<&str> {
    let line = raw.trim_end_matches(['\r', '\n']);
    if line.trim().is_empty() || line.starts_with('#') {
        None
    } else {
        Some(line)
    }
}

/// Loads a knowledge base from a facts stream and an optional types stream.
pub fn load_kb<F: BufRead, T: BufRead>(facts: F, types: Option<T>) -> Result<KnowledgeBase> {
    let mut builder = KbBuilder::new();
    for (n, raw) in facts.lines().enumerate() {
        let raw = raw.map_err(|e| Error::Parse {
            line: n + 1,
            msg: e.to_string(),
        })?;
        let Some(line) = data_line(&raw) else {
            continue;
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |msg: String| Error::Parse { line: n + 1, msg };
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        builder
            .add_fact(fields[0], fields[1], fields[2])
            .map_err(|e| parse_err(e.to_string()))?;
    }
    if let Some(types) = types {
        for (n, raw) in types.lines().enumerate() {
            let raw = raw.map_err(|e| Error::Parse {
                line: n + 1,
                msg: e.to_string(),
            })?;
            let Some(line) = data_line(&raw) else {
                continue;
            };
            let mut fields = line.split('\t');
            let entity = fields.next().unwrap_or_default();
            let list = fields.next().unwrap_or_default();
            if fields.next().is_some() {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: "expected `entity<TAB>type1,type2,...`".into(),
                });
            }
            let names = list.split(',').map(str::trim).filter(|t| !t.is_empty());
            builder
                .add_types(entity, names)
                .map_err(|e| Error::Parse {
                    line: n + 1,
                    msg: e.to_string(),
                })?;
        }
    }
    Ok(builder.build())
}

/// Loads a knowledge base from files on disk.
pub fn load_kb_files(facts: &Path, types: Option<&Path>) -> Result<KnowledgeBase> {
    let open = |p: &Path| File::open(p).map(BufReader::new).map_err(|e| Error::io(p, e));
    let facts_reader = open(facts)?;
    let types_reader = types.map(open).transpose()?;
    load_kb(facts_reader, types_reader).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{msg} (while reading {})", facts.display()),
        },
        other => other,
    })
}
