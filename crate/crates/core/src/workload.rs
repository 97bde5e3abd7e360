//! Join queries, workloads, synthetic generation and cross-validation splits.
//!
//! Workload files are JSON:
//!
//! ```json
//! { "name": "job-like",
//!   "reward_upper_bound": 1e13,
//!   "queries": [
//!     { "id": "q1", "relations": ["P", "OI", "O", "C"],
//!       "predicates": ["P.id = OI.p_id", "OI.o_id = O.id", "O.c_id = C.id"] },
//!     { "id": "q2", "relations": ["A", "B"], "predicates": [], "cross_product": true }
//!   ] }
//! ```
//!
//! `reward_upper_bound` is optional; when present it overrides the default
//! clipping bound of the reward mapping for experiments on this workload.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{
    lookup_key, CardinalityProvider, Catalog, ColumnRef, JoinPredicate,
};
use crate::error::{Error, Result};

/// Set of catalog tables as a bitmask over catalog positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelSet(pub u64);

impl RelSet {
    pub const EMPTY: RelSet = RelSet(0);

    pub fn single(pos: usize) -> Self {
        RelSet(1 << pos)
    }

    pub fn contains(self, pos: usize) -> bool {
        self.0 >> pos & 1 == 1
    }

    pub fn union(self, other: RelSet) -> RelSet {
        RelSet(self.0 | other.0)
    }

    pub fn intersects(self, other: RelSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_subset(self, other: RelSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Positions in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let pos = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(pos)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinQuery {
    pub id: String,
    pub relations: Vec<String>,
    pub predicates: Vec<JoinPredicate>,
    /// The join graph may be disconnected (the query contains cross products).
    pub cross_product: bool,
}

impl JoinQuery {
    /// Builds and validates a query against `catalog`.
    pub fn new(
        id: impl Into<String>,
        relations: Vec<String>,
        predicates: Vec<JoinPredicate>,
        cross_product: bool,
        catalog: &Catalog,
    ) -> Result<Self> {
        let mut predicates = predicates;
        predicates.sort();
        predicates.dedup();
        let query = Self {
            id: id.into(),
            relations,
            predicates,
            cross_product,
        };
        query.validate(catalog)?;
        Ok(query)
    }

    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidQuery {
            query: self.id.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        if self.relations.len() < 2 {
            return Err(self.invalid("a join query needs at least two relations"));
        }
        let mut seen = BTreeSet::new();
        for rel in &self.relations {
            catalog.require_position(rel)?;
            if !seen.insert(rel.as_str()) {
                return Err(self.invalid(format!("relation `{rel}` listed twice")));
            }
        }
        for pred in &self.predicates {
            for end in [&pred.left, &pred.right] {
                if !seen.contains(end.table.as_str()) {
                    return Err(self.invalid(format!(
                        "predicate {pred} references `{}` which is not in the relation list",
                        end.table
                    )));
                }
                catalog.column(end)?;
            }
        }
        if !self.cross_product && !self.is_connected() {
            return Err(self.invalid(
                "join graph is disconnected; set cross_product to allow cartesian products",
            ));
        }
        Ok(())
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn is_connected(&self) -> bool {
        let index: HashMap<&str, usize> = self
            .relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        let mut reached = vec![false; self.relations.len()];
        let mut stack = vec![0];
        reached[0] = true;
        while let Some(i) = stack.pop() {
            for pred in &self.predicates {
                let (a, b) = (index[pred.left.table.as_str()], index[pred.right.table.as_str()]);
                for (from, to) in [(a, b), (b, a)] {
                    if from == i && !reached[to] {
                        reached[to] = true;
                        stack.push(to);
                    }
                }
            }
        }
        reached.into_iter().all(|r| r)
    }

    pub fn predicate_ids(&self) -> Vec<String> {
        self.predicates.iter().map(JoinPredicate::id).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryRecord {
    id: String,
    relations: Vec<String>,
    #[serde(default)]
    predicates: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    cross_product: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct WorkloadFile {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward_upper_bound: Option<f64>,
    queries: Vec<QueryRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub name: String,
    pub queries: Vec<JoinQuery>,
    /// Clipping bound for the reward mapping calibrated for this workload.
    pub reward_upper_bound: Option<f64>,
}

impl Workload {
    pub fn new(name: impl Into<String>, queries: Vec<JoinQuery>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for q in &queries {
            if !ids.insert(q.id.as_str()) {
                return Err(Error::DuplicateName {
                    kind: "query",
                    name: q.id.clone(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            queries,
            reward_upper_bound: None,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn query(&self, id: &str) -> Option<&JoinQuery> {
        self.queries.iter().find(|q| q.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.queries.iter().map(|q| q.id.clone()).collect()
    }

    /// Queries for `ids`, in the given order.
    pub fn select(&self, ids: &[String]) -> Result<Vec<JoinQuery>> {
        let index: HashMap<&str, &JoinQuery> =
            self.queries.iter().map(|q| (q.id.as_str(), q)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|q| (*q).clone())
                    .ok_or_else(|| Error::InvalidQuery {
                        query: id.clone(),
                        reason: "not in workload".into(),
                    })
            })
            .collect()
    }

    pub fn from_json_str(text: &str, catalog: &Catalog) -> Result<Self> {
        let file: WorkloadFile =
            serde_json::from_str(text).map_err(|e| Error::parse("workload", e))?;
        let mut queries = Vec::with_capacity(file.queries.len());
        for (i, rec) in file.queries.into_iter().enumerate() {
            let ctx = format!("queries[{i}] `{}`", rec.id);
            let preds = rec
                .predicates
                .iter()
                .map(|p| p.parse::<JoinPredicate>())
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.context(ctx.clone()))?;
            let q = JoinQuery::new(rec.id, rec.relations, preds, rec.cross_product, catalog)
                .map_err(|e| e.context(ctx))?;
            queries.push(q);
        }
        let mut workload = Workload::new(file.name, queries)?;
        if let Some(bound) = file.reward_upper_bound {
            if !(bound > 0.0 && bound.is_finite()) {
                return Err(Error::Config(format!(
                    "reward_upper_bound must be positive, got {bound}"
                )));
            }
        }
        workload.reward_upper_bound = file.reward_upper_bound;
        Ok(workload)
    }

    pub fn to_json_string(&self) -> String {
        let file = WorkloadFile {
            name: self.name.clone(),
            reward_upper_bound: self.reward_upper_bound,
            queries: self
                .queries
                .iter()
                .map(|q| QueryRecord {
                    id: q.id.clone(),
                    relations: q.relations.clone(),
                    predicates: q.predicates.iter().map(|p| p.to_string()).collect(),
                    cross_product: q.cross_product,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("workload serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string() + "\n").map_err(|e| Error::io(path, e))
    }

    /// Every table referenced by any query.
    pub fn tables(&self) -> BTreeSet<String> {
        self.queries
            .iter()
            .flat_map(|q| q.relations.iter().cloned())
            .collect()
    }

    pub fn predicate_ids(&self) -> BTreeSet<String> {
        self.queries.iter().flat_map(|q| q.predicate_ids()).collect()
    }
}

pub fn load_workload(path: impl AsRef<Path>, catalog: &Catalog) -> Result<Workload> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Workload::from_json_str(&text, catalog).map_err(|e| e.context(path.display().to_string()))
}

/// Joinable column pairs of a schema; the edges the generator draws predicates from.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaGraph {
    pub edges: Vec<JoinPredicate>,
}

impl SchemaGraph {
    pub fn from_pairs(catalog: &Catalog, edges: Vec<JoinPredicate>) -> Result<Self> {
        for e in &edges {
            catalog.column(&e.left)?;
            catalog.column(&e.right)?;
        }
        let mut edges = edges;
        edges.sort();
        edges.dedup();
        Ok(Self { edges })
    }

    /// Pairs every column named `<table>_id` with `<table>.id`.
    pub fn from_naming(catalog: &Catalog) -> Self {
        let mut edges = Vec::new();
        for t in catalog.tables() {
            for c in &t.columns {
                let Some(target) = c.name.strip_suffix("_id") else {
                    continue;
                };
                if target == t.name {
                    continue;
                }
                if let Some(parent) = catalog.table(target) {
                    if parent.column("id").is_some() {
                        edges.push(
                            JoinPredicate::new(
                                ColumnRef::new(&t.name, &c.name),
                                ColumnRef::new(target, "id"),
                            )
                            .expect("distinct tables"),
                        );
                    }
                }
            }
        }
        edges.sort();
        Self { edges }
    }

    fn adjacency(&self, catalog: &Catalog) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); catalog.table_count()];
        for e in &self.edges {
            let a = catalog.position(&e.left.table).expect("validated");
            let b = catalog.position(&e.right.table).expect("validated");
            adj[a].push(b);
            adj[b].push(a);
        }
        for n in &mut adj {
            n.sort_unstable();
            n.dedup();
        }
        adj
    }
}

/// Generates `count` connected join queries with relation counts uniform in
/// `[min_relations, max_relations]`. Each query is a random connected subgraph
/// of the schema graph; spanning edges are always included and other induced
/// edges with probability one half.
pub fn generate_synthetic_workload(
    catalog: &Catalog,
    graph: &SchemaGraph,
    count: usize,
    min_relations: usize,
    max_relations: usize,
    seed: u64,
) -> Result<Workload> {
    if min_relations < 2 || min_relations > max_relations || max_relations > catalog.table_count()
    {
        return Err(Error::Infeasible(format!(
            "relation range [{min_relations}, {max_relations}] invalid for a {}-table catalog \
             (need 2 <= min <= max <= tables)",
            catalog.table_count()
        )));
    }
    let adj = graph.adjacency(catalog);
    let mut largest = 0;
    let mut seen = vec![false; adj.len()];
    for start in 0..adj.len() {
        if seen[start] {
            continue;
        }
        let mut size = 0;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            size += 1;
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        largest = largest.max(size);
    }
    if largest < max_relations {
        return Err(Error::Infeasible(format!(
            "largest connected schema component has {largest} tables, fewer than max_relations {max_relations}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = count.to_string().len().max(3);
    let mut queries = Vec::with_capacity(count);
    for qi in 0..count {
        let k = rng.gen_range(min_relations..=max_relations);
        // Rejection-sample a start vertex whose component is large enough.
        let (chosen, tree_edges) = loop {
            let start = rng.gen_range(0..adj.len());
            let mut chosen = vec![start];
            let mut tree_edges: Vec<(usize, usize)> = Vec::new();
            while chosen.len() < k {
                let frontier: Vec<(usize, usize)> = chosen
                    .iter()
                    .flat_map(|&v| adj[v].iter().map(move |&w| (v, w)))
                    .filter(|(_, w)| !chosen.contains(w))
                    .collect();
                if frontier.is_empty() {
                    break;
                }
                let (from, to) = frontier[rng.gen_range(0..frontier.len())];
                chosen.push(to);
                tree_edges.push((from, to));
            }
            if chosen.len() == k {
                break (chosen, tree_edges);
            }
        };
        let in_query: BTreeSet<usize> = chosen.iter().copied().collect();
        let mut predicates = Vec::new();
        for e in &graph.edges {
            let a = catalog.position(&e.left.table).expect("validated");
            let b = catalog.position(&e.right.table).expect("validated");
            if !(in_query.contains(&a) && in_query.contains(&b)) {
                continue;
            }
            let spanning = tree_edges
                .iter()
                .any(|&(x, y)| (x == a && y == b) || (x == b && y == a));
            // Only the first edge between a spanning pair is forced.
            let forced = spanning
                && !predicates.iter().any(|p: &JoinPredicate| {
                    (p.left.table == e.left.table && p.right.table == e.right.table)
                        || (p.left.table == e.right.table && p.right.table == e.left.table)
                });
            if forced || rng.gen_bool(0.5) {
                predicates.push(e.clone());
            }
        }
        let relations = chosen
            .iter()
            .map(|&p| catalog.tables()[p].name.clone())
            .collect();
        let id = format!("q{:0width$}", qi + 1, width = width);
        queries.push(JoinQuery::new(id, relations, predicates, false, catalog)?);
    }
    Workload::new(format!("synthetic-{seed}"), queries)
}

/// Precomputes everything needed to cost sub-plans of one query quickly:
/// catalog positions, predicate endpoints and selectivities.
#[derive(Debug, Clone)]
pub struct BoundQuery<'a> {
    pub query: &'a JoinQuery,
    pub catalog: &'a Catalog,
    pub provider: &'a CardinalityProvider,
    mask: RelSet,
    predicates: Vec<BoundPredicate>,
}

#[derive(Debug, Clone)]
struct BoundPredicate {
    id: String,
    left: usize,
    right: usize,
    left_indexed: bool,
    right_indexed: bool,
    selectivity: f64,
}

impl<'a> BoundQuery<'a> {
    pub fn new(
        query: &'a JoinQuery,
        catalog: &'a Catalog,
        provider: &'a CardinalityProvider,
    ) -> Result<Self> {
        let mut mask = RelSet::EMPTY;
        for rel in &query.relations {
            mask = mask.union(RelSet::single(catalog.require_position(rel)?));
        }
        let mut predicates = query
            .predicates
            .iter()
            .map(|p| {
                Ok(BoundPredicate {
                    id: p.id(),
                    left: catalog.require_position(&p.left.table)?,
                    right: catalog.require_position(&p.right.table)?,
                    left_indexed: catalog.column(&p.left)?.indexed,
                    right_indexed: catalog.column(&p.right)?.indexed,
                    selectivity: catalog.selectivity(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        predicates.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self {
            query,
            catalog,
            provider,
            mask,
            predicates,
        })
    }

    pub fn relations(&self) -> RelSet {
        self.mask
    }

    pub fn position(&self, table: &str) -> Result<usize> {
        let pos = self.catalog.require_position(table)?;
        if !self.mask.contains(pos) {
            return Err(Error::InvalidPlan(format!(
                "relation `{table}` is not part of query `{}`",
                self.query.id
            )));
        }
        Ok(pos)
    }

    pub fn name(&self, pos: usize) -> &str {
        &self.catalog.tables()[pos].name
    }

    /// Cardinality of the sub-query over `set` with every applicable predicate.
    pub fn cardinality(&self, set: RelSet) -> Result<f64> {
        debug_assert!(set.is_subset(self.mask));
        match self.provider {
            CardinalityProvider::Estimated => {
                let mut card = 1.0;
                for pos in set.iter() {
                    card *= self.catalog.tables()[pos].row_count as f64;
                }
                for p in &self.predicates {
                    if set.contains(p.left) && set.contains(p.right) {
                        card *= p.selectivity;
                    }
                }
                Ok(card)
            }
            CardinalityProvider::Lookup(table) => {
                let key = self.lookup_key(set);
                table.get(&key).ok_or(Error::LookupMiss(key))
            }
        }
    }

    pub fn lookup_key(&self, set: RelSet) -> String {
        lookup_key(
            set.iter().map(|p| self.name(p)),
            self.predicates
                .iter()
                .filter(|p| set.contains(p.left) && set.contains(p.right))
                .map(|p| p.id.as_str()),
        )
    }

    /// Whether some predicate has one endpoint in `a` and the other in `b`.
    pub fn connected(&self, a: RelSet, b: RelSet) -> bool {
        self.predicates.iter().any(|p| {
            (a.contains(p.left) && b.contains(p.right)) || (a.contains(p.right) && b.contains(p.left))
        })
    }

    /// Whether an index nested-loop join of `outer` with base table `inner`
    /// can probe an index on `inner`'s side of a connecting predicate.
    pub fn index_probe_available(&self, outer: RelSet, inner: usize) -> bool {
        self.predicates.iter().any(|p| {
            (p.right == inner && p.right_indexed && outer.contains(p.left))
                || (p.left == inner && p.left_indexed && outer.contains(p.right))
        })
    }
}

/// Train/test query ids of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub folds: Vec<Fold>,
}

impl Split {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("split", e))
    }

    /// Checks per-fold disjointness, membership, and (when `full_coverage`)
    /// that every workload query is tested at least once.
    pub fn validate(&self, workload: &Workload, full_coverage: bool) -> Result<()> {
        let ids: BTreeSet<&str> = workload.queries.iter().map(|q| q.id.as_str()).collect();
        let mut tested = BTreeSet::new();
        for (f, fold) in self.folds.iter().enumerate() {
            let train: BTreeSet<&str> = fold.train.iter().map(String::as_str).collect();
            for id in fold.train.iter().chain(&fold.test) {
                if !ids.contains(id.as_str()) {
                    return Err(Error::Config(format!("fold {f}: unknown query `{id}`")));
                }
            }
            for id in &fold.test {
                if train.contains(id.as_str()) {
                    return Err(Error::Config(format!(
                        "fold {f}: query `{id}` in both train and test"
                    )));
                }
                tested.insert(id.as_str());
            }
        }
        if full_coverage {
            if let Some(missing) = ids.iter().find(|id| !tested.contains(*id)) {
                return Err(Error::Config(format!("query `{missing}` is never tested")));
            }
        }
        Ok(())
    }
}

fn partition_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|f| n / k + usize::from(f < n % k)).collect()
}

fn fold_from_test(all: &[String], test: Vec<String>) -> Fold {
    let test_set: BTreeSet<&String> = test.iter().collect();
    let train = all.iter().filter(|id| !test_set.contains(id)).cloned().collect();
    Fold { train, test }
}

/// `k`-fold split whose test sets partition the workload.
pub fn make_random_folds(workload: &Workload, k: usize, seed: u64) -> Result<Split> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if workload.len() < k {
        return Err(Error::Infeasible(format!(
            "{k} folds exceed the workload size {}",
            workload.len()
        )));
    }
    let all = workload.ids();
    let mut order = all.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for size in partition_sizes(order.len(), k) {
        let test = order[start..start + size].to_vec();
        start += size;
        folds.push(fold_from_test(&all, test));
    }
    Ok(Split { folds })
}

/// Random folds whose test sets all have exactly `test_size` queries. Queries
/// are first partitioned as in [`make_random_folds`]; short test sets are then
/// padded with queries drawn from other folds, so some queries are tested twice.
/// With 113 queries, `k = 4` and `test_size = 33` this yields 80/33 splits.
pub fn make_overlapping_folds(
    workload: &Workload,
    k: usize,
    test_size: usize,
    seed: u64,
) -> Result<Split> {
    let base = make_random_folds(workload, k, seed)?;
    let largest = base.folds.iter().map(|f| f.test.len()).max().unwrap_or(0);
    if test_size < largest || test_size >= workload.len() {
        return Err(Error::Infeasible(format!(
            "test size {test_size} must lie in [{largest}, {})",
            workload.len()
        )));
    }
    let all = workload.ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut folds = Vec::with_capacity(k);
    for fold in base.folds {
        let mut test = fold.test;
        let mut pool = fold.train;
        pool.shuffle(&mut rng);
        let need = test_size - test.len();
        test.extend(pool.into_iter().take(need));
        folds.push(fold_from_test(&all, test));
    }
    Ok(Split { folds })
}

/// Coverage-aware split: every fold's training set contains every table and
/// every predicate id used anywhere in the workload, and each test set is
/// chosen greedily to maximize the number of distinct relation counts.
///
/// Queries that are the sole user of some table or predicate can never be
/// tested; they stay in every training set and are absent from all test sets.
/// The remaining queries are partitioned across the folds' test sets.
pub fn make_curated_split(
    workload: &Workload,
    catalog: &Catalog,
    k: usize,
    seed: u64,
) -> Result<Split> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    curated_folds(workload, catalog, seed, |testable| {
        if testable < k {
            return Err(Error::Infeasible(format!(
                "only {testable} queries can be tested without losing training coverage; {k} folds requested"
            )));
        }
        Ok(partition_sizes(testable, k))
    })
}

/// A single curated fold with exactly `test_size` test queries, chosen by the
/// same coverage-preserving rule as [`make_curated_split`].
pub fn make_curated_holdout(
    workload: &Workload,
    catalog: &Catalog,
    test_size: usize,
    seed: u64,
) -> Result<Split> {
    if test_size == 0 || test_size >= workload.len() {
        return Err(Error::Config(format!(
            "test size must lie in 1..{}, got {test_size}",
            workload.len()
        )));
    }
    curated_folds(workload, catalog, seed, |testable| {
        if testable < test_size {
            return Err(Error::Infeasible(format!(
                "only {testable} queries can be tested without losing training coverage; {test_size} requested"
            )));
        }
        Ok(vec![test_size])
    })
}

fn curated_folds(
    workload: &Workload,
    catalog: &Catalog,
    seed: u64,
    fold_sizes: impl FnOnce(usize) -> Result<Vec<usize>>,
) -> Result<Split> {
    const RETRIES: u64 = 32;
    for q in &workload.queries {
        q.validate(catalog)?;
    }
    // Coverage items: "t:<table>" and "p:<predicate id>".
    let items: Vec<Vec<String>> = workload
        .queries
        .iter()
        .map(|q| {
            q.relations
                .iter()
                .map(|r| format!("t:{r}"))
                .chain(q.predicate_ids().into_iter().map(|p| format!("p:{p}")))
                .collect()
        })
        .collect();
    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    for its in &items {
        for it in its {
            *totals.entry(it.as_str()).or_default() += 1;
        }
    }
    let testable: Vec<usize> = (0..workload.len())
        .filter(|&i| items[i].iter().all(|it| totals[it.as_str()] > 1))
        .collect();
    let sizes = fold_sizes(testable.len())?;
    let all = workload.ids();

    let mut last_uncovered = String::new();
    'attempt: for attempt in 0..RETRIES {
        let mut order = testable.clone();
        if attempt > 0 {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt)));
        } else {
            order.sort_by(|&a, &b| workload.queries[a].id.cmp(&workload.queries[b].id));
        }
        let mut assigned = vec![false; workload.len()];
        let mut folds = Vec::with_capacity(sizes.len());
        for &size in &sizes {
            let mut in_test: BTreeMap<&str, usize> = BTreeMap::new();
            let mut test_sizes = BTreeSet::new();
            let mut test = Vec::with_capacity(size);
            while test.len() < size {
                let mut best: Option<(usize, usize)> = None;
                for &qi in &order {
                    if assigned[qi] {
                        continue;
                    }
                    let keeps_coverage = items[qi].iter().all(|it| {
                        in_test.get(it.as_str()).copied().unwrap_or(0) + 1 < totals[it.as_str()]
                    });
                    if !keeps_coverage {
                        continue;
                    }
                    let gain =
                        usize::from(!test_sizes.contains(&workload.queries[qi].relation_count()));
                    if best.is_none_or(|(g, _)| gain > g) {
                        best = Some((gain, qi));
                    }
                }
                let Some((_, qi)) = best else {
                    // Name an item that blocks the remaining candidates.
                    last_uncovered = order
                        .iter()
                        .filter(|&&qi| !assigned[qi])
                        .flat_map(|&qi| items[qi].iter())
                        .find(|it| {
                            in_test.get(it.as_str()).copied().unwrap_or(0) + 1
                                >= totals[it.as_str()]
                        })
                        .cloned()
                        .unwrap_or_default();
                    continue 'attempt;
                };
                assigned[qi] = true;
                for it in &items[qi] {
                    *in_test.entry(it.as_str()).or_default() += 1;
                }
                test_sizes.insert(workload.queries[qi].relation_count());
                test.push(workload.queries[qi].id.clone());
            }
            test.sort();
            folds.push(fold_from_test(&all, test));
        }
        return Ok(Split { folds });
    }
    let what = match last_uncovered.split_once(':') {
        Some(("t", t)) => format!("table `{t}`"),
        Some((_, p)) => format!("predicate `{p}`"),
        None => "an unknown item".to_string(),
    };
    Err(Error::Infeasible(format!(
        "could not build {} curated folds after {RETRIES} attempts; {what} would be missing from a training set",
        sizes.len()
    )))
}

/// Tables and predicate ids covered by a set of queries.
pub fn coverage(workload: &Workload, ids: &[String]) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut tables = BTreeSet::new();
    let mut preds = BTreeSet::new();
    for id in ids {
        if let Some(q) = workload.query(id) {
            tables.extend(q.relations.iter().cloned());
            preds.extend(q.predicate_ids());
        }
    }
    (tables, preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::generate_synthetic_catalog;
    use crate::fixtures::running_example_catalog;

    const RUNNING: &str = r#"{"name":"ex","queries":[
        {"id":"q1","relations":["P","OI","O","C"],
         "predicates":["P.id = OI.p_id","OI.o_id = O.id","O.c_id = C.id"]}]}"#;

    #[test]
    fn loads_running_example() {
        let cat = running_example_catalog();
        let w = Workload::from_json_str(RUNNING, &cat).unwrap();
        let q = &w.queries[0];
        assert_eq!(q.relation_count(), 4);
        assert!(q.is_connected());
        let again = Workload::from_json_str(&w.to_json_string(), &cat).unwrap();
        assert_eq!(w, again);
    }

    #[test]
    fn rejects_predicate_outside_relations() {
        let cat = running_example_catalog();
        let text = r#"{"name":"x","queries":[{"id":"q","relations":["P","OI"],
            "predicates":["P.id = OI.p_id","OI.o_id = O.id"]}]}"#;
        let err = Workload::from_json_str(text, &cat).unwrap_err();
        assert!(err.to_string().contains("not in the relation list"), "{err}");
    }

    #[test]
    fn rejects_disconnected_without_flag() {
        let cat = running_example_catalog();
        let text = r#"{"name":"x","queries":[{"id":"q","relations":["P","C"]}]}"#;
        assert!(Workload::from_json_str(text, &cat).is_err());
        let text = r#"{"name":"x","queries":[{"id":"q","relations":["P","C"],"cross_product":true}]}"#;
        assert!(Workload::from_json_str(text, &cat).is_ok());
    }

    #[test]
    fn rejects_duplicate_query_ids() {
        let cat = running_example_catalog();
        let text = r#"{"name":"x","queries":[
            {"id":"q","relations":["P","OI"],"predicates":["P.id = OI.p_id"]},
            {"id":"q","relations":["P","OI"],"predicates":["P.id = OI.p_id"]}]}"#;
        assert!(matches!(
            Workload::from_json_str(text, &cat),
            Err(Error::DuplicateName { kind: "query", .. })
        ));
    }

    fn synthetic(count: usize, min: usize, max: usize, seed: u64) -> (Catalog, Workload) {
        let cat = generate_synthetic_catalog(10, 11).unwrap();
        let graph = SchemaGraph::from_naming(&cat);
        let w = generate_synthetic_workload(&cat, &graph, count, min, max, seed).unwrap();
        (cat, w)
    }

    #[test]
    fn generator_is_deterministic() {
        let (_, a) = synthetic(30, 2, 6, 5);
        let (_, b) = synthetic(30, 2, 6, 5);
        assert_eq!(a.to_json_string(), b.to_json_string());
        let (_, empty) = synthetic(0, 2, 6, 5);
        assert!(empty.is_empty());
    }

    #[test]
    fn generator_respects_bounds_and_connectivity() {
        let (cat, w) = synthetic(50, 3, 10, 9);
        assert_eq!(w.len(), 50);
        for q in &w.queries {
            assert!((3..=10).contains(&q.relation_count()));
            assert!(q.is_connected());
            q.validate(&cat).unwrap();
        }
    }

    #[test]
    fn generator_rejects_infeasible_ranges() {
        let cat = generate_synthetic_catalog(4, 1).unwrap();
        let g = SchemaGraph::from_naming(&cat);
        assert!(generate_synthetic_workload(&cat, &g, 5, 1, 3, 0).is_err());
        assert!(generate_synthetic_workload(&cat, &g, 5, 3, 2, 0).is_err());
        assert!(generate_synthetic_workload(&cat, &g, 5, 2, 5, 0).is_err());
    }

    #[test]
    fn random_folds_partition() {
        let (_, w) = synthetic(113, 2, 6, 1);
        let split = make_random_folds(&w, 4, 3).unwrap();
        let sizes: Vec<usize> = split.folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![29, 28, 28, 28]);
        split.validate(&w, true).unwrap();
        let total: usize = sizes.iter().sum();
        assert_eq!(total, 113);
        for f in &split.folds {
            assert_eq!(f.train.len() + f.test.len(), 113);
        }

        let (_, w8) = synthetic(8, 2, 6, 1);
        let split = make_random_folds(&w8, 4, 0).unwrap();
        assert!(split.folds.iter().all(|f| f.test.len() == 2));
        assert!(make_random_folds(&w8, 9, 0).is_err());
    }

    #[test]
    fn overlapping_folds_match_eighty_thirty_three() {
        let (_, w) = synthetic(113, 2, 6, 1);
        let split = make_overlapping_folds(&w, 4, 33, 3).unwrap();
        split.validate(&w, true).unwrap();
        for f in &split.folds {
            assert_eq!((f.train.len(), f.test.len()), (80, 33));
        }
    }

    #[test]
    fn curated_split_covers_everything() {
        let (cat, w) = synthetic(50, 3, 8, 4);
        let split = make_curated_split(&w, &cat, 4, 0).unwrap();
        split.validate(&w, false).unwrap();
        let all_tables = w.tables();
        let all_preds = w.predicate_ids();
        for f in &split.folds {
            let (t, p) = coverage(&w, &f.train);
            assert_eq!(t, all_tables);
            assert_eq!(p, all_preds);
        }
    }

    #[test]
    fn curated_holdout_has_exact_size() {
        let (cat, w) = synthetic(60, 3, 8, 8);
        let split = make_curated_holdout(&w, &cat, 20, 1).unwrap();
        assert_eq!(split.folds.len(), 1);
        assert_eq!((split.folds[0].train.len(), split.folds[0].test.len()), (40, 20));
        let (t, p) = coverage(&w, &split.folds[0].train);
        assert_eq!((t, p), (w.tables(), w.predicate_ids()));
        assert!(make_curated_holdout(&w, &cat, 60, 1).is_err());
    }

    #[test]
    fn curated_split_pins_sole_users() {
        let cat = running_example_catalog();
        let q = |id: &str, rels: &[&str], preds: &[&str]| {
            JoinQuery::new(
                id,
                rels.iter().map(|s| s.to_string()).collect(),
                preds.iter().map(|p| p.parse().unwrap()).collect(),
                false,
                &cat,
            )
            .unwrap()
        };
        let mut queries = Vec::new();
        for i in 0..6 {
            queries.push(q(&format!("a{i}"), &["P", "OI"], &["P.id = OI.p_id"]));
        }
        queries.push(q("only_c", &["O", "C"], &["O.c_id = C.id"]));
        let w = Workload::new("pins", queries).unwrap();
        let split = make_curated_split(&w, &cat, 3, 1).unwrap();
        for f in &split.folds {
            assert!(f.train.contains(&"only_c".to_string()));
            assert!(!f.test.contains(&"only_c".to_string()));
        }
    }

    #[test]
    fn relset_iteration() {
        let s = RelSet(0b1011);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 1, 3]);
        assert_eq!(s.len(), 3);
        assert!(RelSet(0b0011).is_subset(s));
    }
}
