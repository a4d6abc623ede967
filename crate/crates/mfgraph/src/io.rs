//! Text formats: edge lists, semimetric tables, state snapshots and the
//! content hash used in run summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mfgraph_core::graph::{FamilyTag, InteractionGraph};
use mfgraph_core::semimetric::SemimetricTable;
use mfgraph_core::simulate::CoupledEnsemble;
use sha1::{Digest, Sha1};

use crate::error::{HarnessError, Result};

/// Header `N alpha family`, then one `i j` line per edge.
pub fn format_edge_list(g: &InteractionGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", g.n_vertices(), g.alpha(), g.family());
    for (i, j) in g.edges() {
        let _ = writeln!(out, "{i} {j}");
    }
    out
}

pub fn parse_edge_list(text: &str, path: &Path) -> Result<InteractionGraph> {
    let err = |line: usize, msg: String| HarnessError::Parse { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(err(1, format!("expected `N alpha family`, got `{header}`")));
    }
    let n: usize = fields[0].parse().map_err(|_| err(1, format!("bad vertex count `{}`", fields[0])))?;
    let alpha: f64 = fields[1].parse().map_err(|_| err(1, format!("bad alpha `{}`", fields[1])))?;
    let family: FamilyTag = fields[2].parse().map_err(|e| err(1, format!("{e}")))?;
    let mut edges = Vec::new();
    for (k, line) in lines {
        let mut it = line.split_whitespace().map(str::parse::<usize>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(i)), Some(Ok(j)), None) => edges.push((i, j)),
            _ => return Err(err(k + 1, format!("expected `i j`, got `{line}`"))),
        }
    }
    Ok(InteractionGraph::from_edges(n, edges, alpha, family)?)
}

pub fn read_edge_list(path: &Path) -> Result<InteractionGraph> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_edge_list(&text, path)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

/// `r,f,f_prime` rows after a comment line carrying the constants.
pub fn format_semimetric(t: &SemimetricTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# r0={} r1={} c={} sigma={} c_f={}", t.r0, t.r1, t.c, t.sigma, t.c_f);
    out.push_str("r,f,f_prime\n");
    for ((r, f), fp) in t.grid.iter().zip(&t.f_vals).zip(&t.f_prime_vals) {
        let _ = writeln!(out, "{r},{f},{fp}");
    }
    out
}

/// `i, x…, x_bar…, w…` per particle.
pub fn format_snapshot(ens: &CoupledEnsemble<'_>) -> String {
    let (d, dw) = (ens.dim_x, ens.dim_w);
    let mut out = String::from("i");
    for k in 0..d {
        let _ = write!(out, ",x{k}");
    }
    for k in 0..d {
        let _ = write!(out, ",x_bar{k}");
    }
    for k in 0..dw {
        let _ = write!(out, ",w{k}");
    }
    out.push('\n');
    for i in 0..ens.n {
        let _ = write!(out, "{i}");
        for v in ens.x[i * d..(i + 1) * d].iter().chain(&ens.x_bar[i * d..(i + 1) * d]).chain(&ens.w[i * dw..(i + 1) * dw]) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Hex SHA-1 of `blob <len>\0<bytes>`, as git computes object ids.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
