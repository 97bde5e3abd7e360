//! Small ready-made schemas used by the guide, doc examples and tests.

use crate::catalog::{Catalog, ColumnStats, TableStats};
use crate::workload::JoinQuery;

fn table(name: &str, rows: u64, cols: &[(&str, u64, bool)]) -> TableStats {
    TableStats {
        name: name.into(),
        row_count: rows,
        columns: cols
            .iter()
            .map(|&(n, d, i)| ColumnStats {
                name: n.into(),
                distinct_count: d,
                indexed: i,
            })
            .collect(),
        global_column_offset: 0,
    }
}

/// Product / order-item / order / customer schema with column counts `[3, 3, 3, 2]`.
pub fn running_example_catalog() -> Catalog {
    Catalog::new(vec![
        table("P", 1000, &[("id", 1000, true), ("name", 900, false), ("price", 100, false)]),
        table(
            "OI",
            50000,
            &[("id", 50000, true), ("p_id", 1000, true), ("o_id", 10000, false)],
        ),
        table(
            "O",
            10000,
            &[("id", 10000, true), ("c_id", 2000, false), ("date", 365, false)],
        ),
        table("C", 2000, &[("id", 2000, true), ("name", 1990, false)]),
    ])
    .expect("fixture catalog is valid")
}

/// The chain query `P ⋈ OI ⋈ O ⋈ C` over [`running_example_catalog`].
pub fn running_example_query(catalog: &Catalog) -> JoinQuery {
    JoinQuery::new(
        "running",
        ["P", "OI", "O", "C"].iter().map(|s| s.to_string()).collect(),
        ["P.id = OI.p_id", "OI.o_id = O.id", "O.c_id = C.id"]
            .iter()
            .map(|p| p.parse().expect("fixture predicate"))
            .collect(),
        false,
        catalog,
    )
    .expect("fixture query is valid")
}
