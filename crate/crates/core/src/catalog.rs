//! Schema statistics and cardinality estimation.
//!
//! A [`Catalog`] is an ordered list of tables, each with an ordered list of
//! columns. The flattened column order (tables in declaration order, columns in
//! declaration order within each table) defines the feature positions used by
//! the environment's observation encoding.
//!
//! Catalog files are JSON documents:
//!
//! ```json
//! { "tables": [
//!     { "name": "orders", "row_count": 1500000,
//!       "columns": [ { "name": "id", "distinct_count": 1500000, "indexed": true },
//!                    { "name": "customer_id", "distinct_count": 150000, "indexed": false } ] }
//! ] }
//! ```
//!
//! Cardinality lookup files are tab-separated, one sub-query per line:
//! `<relations>\t<predicate ids>\t<cardinality>`, where relations and predicate
//! ids are each comma-separated and sorted ascending. Lines starting with `#`
//! are comments. A sub-query without predicates leaves the middle field empty.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::plancost::PlanNode;

/// Maximum number of tables a catalog may hold; relation sets are 64-bit masks.
pub const MAX_TABLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub distinct_count: u64,
    #[serde(default)]
    pub indexed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableStats {
    pub name: String,
    pub row_count: u64,
    pub columns: Vec<ColumnStats>,
    /// Position of this table's first column in the flattened column vector.
    #[serde(skip)]
    pub global_column_offset: usize,
}

impl TableStats {
    pub fn column(&self, name: &str) -> Option<&ColumnStats> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Half-open range of this table's columns in the flattened column vector.
    pub fn column_span(&self) -> std::ops::Range<usize> {
        self.global_column_offset..self.global_column_offset + self.columns.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogFile {
    tables: Vec<TableStats>,
}

/// Database schema plus statistics. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    tables: Vec<TableStats>,
    total_column_count: usize,
    positions: HashMap<String, usize>,
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Catalog {
    /// Validates the tables and computes column offsets in declaration order.
    pub fn new(mut tables: Vec<TableStats>) -> Result<Self> {
        if tables.len() > MAX_TABLES {
            return Err(Error::InvalidStatistic(format!(
                "{} tables exceed the supported maximum of {MAX_TABLES}",
                tables.len()
            )));
        }
        let mut positions = HashMap::with_capacity(tables.len());
        let mut offset = 0;
        for (i, table) in tables.iter_mut().enumerate() {
            if !is_identifier(&table.name) {
                return Err(Error::InvalidStatistic(format!(
                    "tables[{i}].name `{}` is not an identifier",
                    table.name
                )));
            }
            if positions.insert(table.name.clone(), i).is_some() {
                return Err(Error::DuplicateName {
                    kind: "table",
                    name: table.name.clone(),
                });
            }
            let mut seen = std::collections::HashSet::new();
            for (j, col) in table.columns.iter().enumerate() {
                if !is_identifier(&col.name) {
                    return Err(Error::InvalidStatistic(format!(
                        "tables[{i}].columns[{j}].name `{}` is not an identifier",
                        col.name
                    )));
                }
                if !seen.insert(col.name.as_str()) {
                    return Err(Error::DuplicateName {
                        kind: "column",
                        name: format!("{}.{}", table.name, col.name),
                    });
                }
                if col.distinct_count < 1 {
                    return Err(Error::InvalidStatistic(format!(
                        "tables[{i}].columns[{j}] `{}.{}`: distinct_count must be at least 1",
                        table.name, col.name
                    )));
                }
            }
            table.global_column_offset = offset;
            offset += table.columns.len();
        }
        Ok(Self {
            tables,
            total_column_count: offset,
            positions,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: CatalogFile =
            serde_json::from_str(text).map_err(|e| Error::parse("catalog", e))?;
        Self::new(file.tables)
    }

    pub fn to_json_string(&self) -> String {
        let file = CatalogFile {
            tables: self.tables.clone(),
        };
        serde_json::to_string_pretty(&file).expect("catalog serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn tables(&self) -> &[TableStats] {
        &self.tables
    }

    pub fn table_count(&self) -> usize {
        self.tables.len()
    }

    pub fn total_column_count(&self) -> usize {
        self.total_column_count
    }

    pub fn position(&self, table: &str) -> Option<usize> {
        self.positions.get(table).copied()
    }

    pub fn table(&self, name: &str) -> Option<&TableStats> {
        self.position(name).map(|i| &self.tables[i])
    }

    pub(crate) fn require_position(&self, table: &str) -> Result<usize> {
        self.position(table)
            .ok_or_else(|| Error::UnknownTable(table.to_string()))
    }

    pub fn column(&self, column: &ColumnRef) -> Result<&ColumnStats> {
        let table = self
            .table(&column.table)
            .ok_or_else(|| Error::UnknownTable(column.table.clone()))?;
        table.column(&column.column).ok_or_else(|| Error::UnknownColumn {
            table: column.table.clone(),
            column: column.column.clone(),
        })
    }

    /// Independence/uniformity selectivity of an equi-join predicate.
    pub fn selectivity(&self, predicate: &JoinPredicate) -> Result<f64> {
        let left = self.column(&predicate.left)?.distinct_count;
        let right = self.column(&predicate.right)?.distinct_count;
        Ok(1.0 / left.max(right) as f64)
    }

    /// Hex SHA-256 of the canonical JSON form; used to pin policies to a schema.
    pub fn digest(&self) -> String {
        hex_digest(self.to_json_string().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Catalog::from_json_str(&text).map_err(|e| e.context(path.display().to_string()))
}

/// A `table.column` reference.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Self {
            table: table.into(),
            column: column.into(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

impl std::str::FromStr for ColumnRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (table, column) = s
            .split_once('.')
            .ok_or_else(|| Error::parse("column reference", format!("`{s}` is not table.column")))?;
        if !is_identifier(table) || !is_identifier(column) {
            return Err(Error::parse(
                "column reference",
                format!("`{s}` is not table.column"),
            ));
        }
        Ok(ColumnRef::new(table, column))
    }
}

/// Equi-join predicate `left = right`. Endpoints are stored in lexicographic
/// order so that `A.x = B.y` and `B.y = A.x` are the same predicate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JoinPredicate {
    pub left: ColumnRef,
    pub right: ColumnRef,
}

impl JoinPredicate {
    pub fn new(a: ColumnRef, b: ColumnRef) -> Result<Self> {
        if a.table == b.table {
            return Err(Error::parse(
                "join predicate",
                format!("`{a} = {b}` joins a table with itself"),
            ));
        }
        let (left, right) = if a <= b { (a, b) } else { (b, a) };
        Ok(Self { left, right })
    }

    /// Stable identifier, e.g. `A.x=B.y`.
    pub fn id(&self) -> String {
        format!("{}={}", self.left, self.right)
    }

    pub fn touches(&self, table: &str) -> bool {
        self.left.table == table || self.right.table == table
    }

    /// The column of this predicate that belongs to `table`, if any.
    pub fn column_of(&self, table: &str) -> Option<&ColumnRef> {
        if self.left.table == table {
            Some(&self.left)
        } else if self.right.table == table {
            Some(&self.right)
        } else {
            None
        }
    }
}

impl fmt::Display for JoinPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.left, self.right)
    }
}

impl std::str::FromStr for JoinPredicate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('=')
            .ok_or_else(|| Error::parse("join predicate", format!("`{s}` has no `=`")))?;
        JoinPredicate::new(a.parse()?, b.parse()?)
    }
}

/// Canonical key of a sub-query: sorted relation names and sorted predicate ids.
pub fn lookup_key<R, P>(relations: R, predicate_ids: P) -> String
where
    R: IntoIterator,
    R::Item: AsRef<str>,
    P: IntoIterator,
    P::Item: AsRef<str>,
{
    let mut rels: Vec<String> = relations.into_iter().map(|r| r.as_ref().to_string()).collect();
    rels.sort();
    let mut preds: Vec<String> = predicate_ids
        .into_iter()
        .map(|p| p.as_ref().to_string())
        .collect();
    preds.sort();
    format!("{}|{}", rels.join(","), preds.join(","))
}

/// Exact cardinalities keyed by [`lookup_key`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LookupTable {
    entries: HashMap<String, f64>,
}

impl LookupTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: String, cardinality: f64) -> Result<()> {
        if !(cardinality >= 0.0 && cardinality.is_finite()) {
            return Err(Error::InvalidStatistic(format!(
                "cardinality {cardinality} for `{key}` must be finite and non-negative"
            )));
        }
        self.entries.insert(key, cardinality);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = LookupTable::new();
        for (lineno, line) in text.lines().enumerate() {
            let context = || format!("lookup line {}", lineno + 1);
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    context(),
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            }
            let rels: Vec<&str> = fields[0].split(',').filter(|s| !s.is_empty()).collect();
            if rels.is_empty() {
                return Err(Error::parse(context(), "relation list is empty"));
            }
            let preds: Vec<&str> = fields[1].split(',').filter(|s| !s.is_empty()).collect();
            let card: f64 = fields[2]
                .trim()
                .parse()
                .map_err(|e| Error::parse(context(), format!("cardinality: {e}")))?;
            table
                .insert(lookup_key(rels, preds), card)
                .map_err(|e| e.context(context()))?;
        }
        Ok(table)
    }

    /// Serializes in sorted key order so that output is stable.
    pub fn to_text(&self) -> String {
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let mut out = String::from("# relations\tpredicates\tcardinality\n");
        for key in keys {
            let (rels, preds) = key.split_once('|').expect("keys are canonical");
            out.push_str(&format!("{rels}\t{preds}\t{:?}\n", self.entries[key]));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CardinalityMode {
    Estimated,
    Lookup,
}

/// Source of sub-plan cardinalities.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum CardinalityProvider {
    /// Product of row counts times `1 / max(ndv, ndv)` per equi-join predicate.
    #[default]
    Estimated,
    /// Exact values; a missing key is an error.
    Lookup(LookupTable),
}

impl CardinalityProvider {
    pub fn mode(&self) -> CardinalityMode {
        match self {
            CardinalityProvider::Estimated => CardinalityMode::Estimated,
            CardinalityProvider::Lookup(_) => CardinalityMode::Lookup,
        }
    }
}

/// Orders relations by catalog position and predicates by id, so that every
/// caller multiplies factors in the same order.
fn estimated_product(
    catalog: &Catalog,
    positions: &mut [usize],
    predicates: &mut [&JoinPredicate],
) -> Result<f64> {
    positions.sort_unstable();
    predicates.sort_by_cached_key(|p| p.id());
    let mut card = 1.0;
    for &pos in positions.iter() {
        card *= catalog.tables[pos].row_count as f64;
    }
    for pred in predicates.iter() {
        card *= catalog.selectivity(pred)?;
    }
    Ok(card)
}

/// Cardinality of the join of `relations` under `predicates`.
pub fn estimate_cardinality<S: AsRef<str>>(
    relations: &[S],
    predicates: &[JoinPredicate],
    provider: &CardinalityProvider,
    catalog: &Catalog,
) -> Result<f64> {
    let mut positions = Vec::with_capacity(relations.len());
    for rel in relations {
        positions.push(catalog.require_position(rel.as_ref())?);
    }
    for pred in predicates {
        for end in [&pred.left, &pred.right] {
            catalog.column(end)?;
            if !relations.iter().any(|r| r.as_ref() == end.table) {
                return Err(Error::InvalidQuery {
                    query: lookup_key(relations.iter().map(|r| r.as_ref()), [pred.id()]),
                    reason: format!("predicate {pred} references a relation outside the sub-query"),
                });
            }
        }
    }
    match provider {
        CardinalityProvider::Estimated => {
            let mut preds: Vec<&JoinPredicate> = predicates.iter().collect();
            estimated_product(catalog, &mut positions, &mut preds)
        }
        CardinalityProvider::Lookup(table) => {
            let key = lookup_key(
                relations.iter().map(|r| r.as_ref()),
                predicates.iter().map(|p| p.id()),
            );
            table.get(&key).ok_or(Error::LookupMiss(key))
        }
    }
}

/// Cardinality of a plan's output. Only the plan's relation set and the
/// predicates applicable to it matter; tree shape does not.
pub fn cardinality_of_plan(
    plan: &PlanNode,
    predicates: &[JoinPredicate],
    provider: &CardinalityProvider,
    catalog: &Catalog,
) -> Result<f64> {
    let relations = plan.relations();
    let applicable: Vec<JoinPredicate> = predicates
        .iter()
        .filter(|p| {
            relations.contains(&p.left.table.as_str()) && relations.contains(&p.right.table.as_str())
        })
        .cloned()
        .collect();
    estimate_cardinality(&relations, &applicable, provider, catalog)
}

/// Builds a random catalog whose foreign-key columns follow the `<table>_id`
/// naming convention, so that [`crate::workload::SchemaGraph::from_naming`]
/// recovers a connected schema graph.
///
/// Tables are named `t00`, `t01`, ... Every table has an indexed primary key
/// `id`; table `i > 0` references a random earlier table (a spanning tree),
/// and `n / 2` extra foreign keys add cycles.
pub fn generate_synthetic_catalog(n_tables: usize, seed: u64) -> Result<Catalog> {
    if n_tables == 0 || n_tables > MAX_TABLES {
        return Err(Error::Infeasible(format!(
            "table count {n_tables} outside 1..={MAX_TABLES}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..n_tables).map(|i| format!("t{i:02}")).collect();
    let rows: Vec<u64> = (0..n_tables)
        .map(|_| 10f64.powf(rng.gen_range(2.0..7.0)).round() as u64)
        .collect();

    let mut fks: Vec<Vec<usize>> = vec![Vec::new(); n_tables];
    for child in 1..n_tables {
        let parent = rng.gen_range(0..child);
        fks[child].push(parent);
    }
    for _ in 0..n_tables / 2 {
        let a = rng.gen_range(0..n_tables);
        let b = rng.gen_range(0..n_tables);
        if a != b && !fks[a].contains(&b) && !fks[b].contains(&a) {
            fks[a].push(b);
        }
    }

    let mut tables = Vec::with_capacity(n_tables);
    for i in 0..n_tables {
        let mut columns = vec![ColumnStats {
            name: "id".into(),
            distinct_count: rows[i].max(1),
            indexed: true,
        }];
        fks[i].sort_unstable();
        for &parent in &fks[i] {
            let cap = rows[i].min(rows[parent]).max(1);
            let ndv = ((cap as f64) * rng.gen_range(0.2..1.0)).round().max(1.0) as u64;
            columns.push(ColumnStats {
                name: format!("{}_id", names[parent]),
                distinct_count: ndv,
                indexed: rng.gen_bool(0.5),
            });
        }
        if rng.gen_bool(0.5) {
            columns.push(ColumnStats {
                name: "attr".into(),
                distinct_count: rng.gen_range(1..=rows[i].clamp(1, 1000)),
                indexed: false,
            });
        }
        tables.push(TableStats {
            name: names[i].clone(),
            row_count: rows[i],
            columns,
            global_column_offset: 0,
        });
    }
    Catalog::new(tables)
}
