use std::path::Path;

use ndarray::{Array2, Array3};

use super::{TrafficGraph, TrafficSeries};
use crate::error::{Error, Result};

/// Result of [`load_csv`]: the data plus how many blank cells were filled.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub graph: TrafficGraph,
    pub series: TrafficSeries,
    pub imputed: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NaN" | "nan" | "NA" | "null")
}

fn parse_cell(cell: &str, location: impl FnOnce() -> String) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse { location: location(), message: format!("{cell:?}: {e}") })
}

fn reader(path: &Path, has_headers: bool) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(has_headers).flexible(true).comment(Some(b'#')).from_reader(file))
}

/// Loads a single-channel series CSV (header = node ids, one row per timestep)
/// and an adjacency CSV, either a dense `n x n` grid (optionally headed by node
/// ids) or an edge list `src,dst,weight`.
///
/// Missing cells are forward-filled per node; leading gaps take the node mean.
/// Series columns are reordered to match the adjacency node order.
pub fn load_csv(series_path: &Path, adjacency_path: &Path) -> Result<LoadedData> {
    let mut rdr = reader(series_path, true)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() {
        return Err(Error::Schema(format!("{}: empty header", series_path.display())));
    }
    let n = header.len();
    let mut raw: Vec<Vec<Option<f64>>> = Vec::new();
    for (row_idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != n {
            return Err(Error::Schema(format!(
                "{} row {}: {} cells, header has {n}",
                series_path.display(),
                row_idx + 2,
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if is_missing(cell) {
                    Ok(None)
                } else {
                    parse_cell(cell, || format!("{} row {} column {}", series_path.display(), row_idx + 2, header[c])).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        raw.push(row);
    }
    let (filled, imputed) = impute(&raw, &header)?;

    let (adjacency, order) = load_adjacency(adjacency_path, &header)?;
    let timesteps = filled.len();
    let values = Array3::from_shape_fn((timesteps, n, 1), |(t, i, _)| filled[t][order[i]]);
    let node_ids: Vec<String> = order.iter().map(|&c| header[c].clone()).collect();
    let graph = TrafficGraph::new(adjacency, node_ids)?;
    if !graph.is_connected() {
        log::warn!("adjacency in {} is not connected ({} components)", adjacency_path.display(), graph.components().len());
    }
    let series = TrafficSeries { values, interval_minutes: 5, channel_names: vec!["traffic".into()] };
    Ok(LoadedData { graph, series, imputed })
}

fn impute(raw: &[Vec<Option<f64>>], header: &[String]) -> Result<(Vec<Vec<f64>>, usize)> {
    let n = header.len();
    let mut out = vec![vec![0.0; n]; raw.len()];
    let mut imputed = 0;
    for c in 0..n {
        let observed: Vec<f64> = raw.iter().filter_map(|r| r[c]).collect();
        if observed.is_empty() && !raw.is_empty() {
            return Err(Error::Parse { location: format!("column {}", header[c]), message: "no observed values to impute from".into() });
        }
        let mean = observed.iter().sum::<f64>() / observed.len().max(1) as f64;
        let mut last: Option<f64> = None;
        for (t, row) in raw.iter().enumerate() {
            out[t][c] = match row[c] {
                Some(v) => {
                    last = Some(v);
                    v
                }
                None => {
                    imputed += 1;
                    last.unwrap_or(mean)
                }
            };
        }
    }
    Ok((out, imputed))
}

/// Returns the adjacency and, for each adjacency node, its series column.
fn load_adjacency(path: &Path, header: &[String]) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut rdr = reader(path, false)?;
    let rows: Vec<Vec<String>> = rdr
        .records()
        .map(|r| r.map(|rec| rec.iter().map(|s| s.trim().to_string()).collect()))
        .collect::<std::result::Result<_, _>>()?;
    let n = header.len();
    let col_of = |id: &str| header.iter().position(|h| h == id);
    let numeric = |s: &str| s.parse::<f64>().is_ok();

    let edge_header = rows
        .first()
        .is_some_and(|r| r.len() == 3 && r[0].eq_ignore_ascii_case("src") && r[1].eq_ignore_ascii_case("dst"));
    let all_triples = !rows.is_empty() && rows.iter().all(|r| r.len() == 3);
    // A 3-node dense grid is also all triples; it is an edge list only if some
    // body row starts with a non-numeric node id.
    let looks_like_edges = edge_header || (all_triples && (n != 3 || rows.iter().skip(1).any(|r| !numeric(&r[0]))));

    if looks_like_edges {
        let mut adj = Array2::zeros((n, n));
        for (k, r) in rows.iter().enumerate() {
            if k == 0 && edge_header {
                continue;
            }
            let src = col_of(&r[0]).ok_or_else(|| Error::Schema(format!("edge list row {}: unknown node id {:?}", k + 1, r[0])))?;
            let dst = col_of(&r[1]).ok_or_else(|| Error::Schema(format!("edge list row {}: unknown node id {:?}", k + 1, r[1])))?;
            let w = parse_cell(&r[2], || format!("{} row {}", path.display(), k + 1))?;
            if w < 0.0 {
                return Err(Error::Schema(format!("edge {}->{} has negative weight {w}", r[0], r[1])));
            }
            if src != dst {
                adj[[src, dst]] = w;
            }
        }
        return Ok((adj, (0..n).collect()));
    }

    let (order, body) = if rows.first().is_some_and(|r| r.iter().any(|c| !numeric(c))) {
        let ids = &rows[0];
        if ids.len() != n {
            return Err(Error::Schema(format!("adjacency header has {} ids, series has {n}", ids.len())));
        }
        let order = ids
            .iter()
            .map(|id| col_of(id).ok_or_else(|| Error::Schema(format!("adjacency node {id:?} missing from series header"))))
            .collect::<Result<Vec<_>>>()?;
        (order, &rows[1..])
    } else {
        ((0..n).collect(), &rows[..])
    };
    if body.len() != n || body.iter().any(|r| r.len() != n) {
        return Err(Error::Schema(format!("dense adjacency must be {n}x{n} to match the series header")));
    }
    let mut adj = Array2::zeros((n, n));
    for (i, r) in body.iter().enumerate() {
        for (j, cell) in r.iter().enumerate() {
            let w = parse_cell(cell, || format!("{} row {} col {}", path.display(), i + 1, j + 1))?;
            if w < 0.0 {
                return Err(Error::Schema(format!("adjacency[{i},{j}] = {w} is negative")));
            }
            adj[[i, j]] = w;
        }
    }
    Ok((adj, order))
}

/// Writes channel 0 of `series` and a dense, id-headed adjacency.
pub fn write_csv(graph: &TrafficGraph, series: &TrafficSeries, series_path: &Path, adjacency_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(series_path)?;
    w.write_record(&graph.node_ids)?;
    for t in 0..series.timesteps() {
        w.write_record((0..series.nodes()).map(|i| format_float(series.values[[t, i, 0]])))?;
    }
    w.flush().map_err(|e| Error::io(series_path, e))?;

    let mut w = csv::Writer::from_path(adjacency_path)?;
    w.write_record(&graph.node_ids)?;
    for row in graph.adjacency.rows() {
        w.write_record(row.iter().map(|&x| format_float(x)))?;
    }
    w.flush().map_err(|e| Error::io(adjacency_path, e))?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
fn format_float(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::synth_traffic;
    use std::fs;

    #[test]
    fn forward_fill_counts_imputations() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s.csv");
        let a = dir.path().join("a.csv");
        fs::write(&s, "a,b,c\n1,2,3\n4,,6\n7,8,9\n").unwrap();
        fs::write(&a, "0,1,0\n1,0,1\n0,1,0\n").unwrap();
        let d = load_csv(&s, &a).unwrap();
        assert_eq!(d.imputed, 1);
        assert_eq!(d.series.values[[1, 1, 0]], 2.0);
    }

    #[test]
    fn leading_gap_uses_node_mean() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s.csv");
        let a = dir.path().join("a.csv");
        fs::write(&s, "a,b\n,2\n4,2\n6,2\n").unwrap();
        fs::write(&a, "0,1\n1,0\n").unwrap();
        let d = load_csv(&s, &a).unwrap();
        assert_eq!(d.series.values[[0, 0, 0]], 5.0);
    }

    #[test]
    fn negative_weight_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s.csv");
        let a = dir.path().join("a.csv");
        fs::write(&s, "a,b,c\n1,2,3\n").unwrap();
        fs::write(&a, "0,-1,0\n1,0,1\n0,1,0\n").unwrap();
        assert!(matches!(load_csv(&s, &a), Err(Error::Schema(_))));
    }

    #[test]
    fn edge_list_and_unknown_ids() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s.csv");
        let a = dir.path().join("a.csv");
        fs::write(&s, "x,y,z\n1,2,3\n2,3,4\n").unwrap();
        fs::write(&a, "src,dst,weight\nx,y,0.5\ny,x,0.5\ny,z,2\nz,y,2\n").unwrap();
        let d = load_csv(&s, &a).unwrap();
        assert_eq!(d.graph.adjacency[[1, 2]], 2.0);
        assert_eq!(d.graph.adjacency[[0, 2]], 0.0);
        fs::write(&a, "src,dst,weight\nx,q,0.5\n").unwrap();
        assert!(matches!(load_csv(&s, &a), Err(Error::Schema(_))));
    }

    #[test]
    fn dense_header_reorders_series() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s.csv");
        let a = dir.path().join("a.csv");
        fs::write(&s, "a,b\n1,2\n").unwrap();
        fs::write(&a, "b,a\n0,3\n3,0\n").unwrap();
        let d = load_csv(&s, &a).unwrap();
        assert_eq!(d.graph.node_ids, vec!["b", "a"]);
        assert_eq!(d.series.values[[0, 0, 0]], 2.0);
        fs::write(&a, "b,q\n0,3\n3,0\n").unwrap();
        assert!(matches!(load_csv(&s, &a), Err(Error::Schema(_))));
    }

    #[test]
    fn garbage_cell_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s.csv");
        let a = dir.path().join("a.csv");
        fs::write(&s, "a,b\n1,abc\n").unwrap();
        fs::write(&a, "0,1\n1,0\n").unwrap();
        assert!(matches!(load_csv(&s, &a), Err(Error::Parse { .. })));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (g, series) = synth_traffic(7, 250, 5).unwrap();
        let s = dir.path().join("s.csv");
        let a = dir.path().join("a.csv");
        write_csv(&g, &series, &s, &a).unwrap();
        let d = load_csv(&s, &a).unwrap();
        assert_eq!(d.imputed, 0);
        assert_eq!(d.graph.node_ids, g.node_ids);
        let max_err = d.series.values.iter().zip(series.values.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_err <= 1e-9);
        let adj_err = d.graph.adjacency.iter().zip(g.adjacency.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(adj_err <= 1e-9);
    }
}
