//! Artifacts: `partition.json`, DOT graphs of `A` and `S`, the adjacency
//! of `S` as JSON and per-disc SVG pictures of the cells.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mtv_core::refinement::MarkovGraph;
use mtv_core::region_algebra::ChartRectangle;
use mtv_core::symbolic_cover::SymbolTable;
use serde::Serialize;

use crate::pipeline::{Built, Partition};
use crate::PipelineError;

#[derive(Serialize)]
struct EdgeJson {
    from: usize,
    to: usize,
    label: usize,
    offset_u: f64,
    offset_s: f64,
}

#[derive(Serialize)]
struct AdjacencyJson {
    size: usize,
    matrix: Vec<Vec<u8>>,
    edges: Vec<EdgeJson>,
}

/// `S` in DOT; parallel edges carry their transition labels.
pub fn matrix_s_dot(g: &MarkovGraph) -> String {
    let mut s = String::from("digraph S {\n  node [shape=circle];\n");
    for k in 0..g.cells.len() {
        let _ = writeln!(s, "  c{k} [label=\"{k}\"];");
    }
    for e in &g.edges {
        let _ = writeln!(s, "  c{} -> c{} [label=\"r{}\"];", e.from, e.to, e.label);
    }
    s.push_str("}\n");
    s
}

pub fn matrix_s_json(g: &MarkovGraph) -> String {
    let adj = AdjacencyJson {
        size: g.cells.len(),
        matrix: g.matrix(),
        edges: g
            .edges
            .iter()
            .map(|e| EdgeJson { from: e.from, to: e.to, label: e.label, offset_u: e.offset_u, offset_s: e.offset_s })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&adj).expect("plain data");
    s.push('\n');
    s
}

/// `A` at class level: a row of `A` depends on the piece and the target
/// disc only through the transition class, so the graph joins pieces to
/// the classes in their future sets.
pub fn matrix_a_dot(table: &SymbolTable) -> String {
    let mut s = String::from("digraph A {\n  rankdir=LR;\n  node [shape=point];\n");
    for (r, c) in table.classes.iter().enumerate() {
        let _ = writeln!(
            s,
            "  r{r} [shape=box, label=\"r{r} {:?} ({:.3e}, {:.3e})\"];",
            c.shift, c.offset_u, c.offset_s
        );
    }
    for (a, fut) in table.futures.iter().enumerate() {
        for r in fut {
            let _ = writeln!(s, "  p{a} -> r{r};");
        }
    }
    s.push_str("}\n");
    s
}

/// Square graph of the classical partition, edges labelled by the lattice
/// correction.
fn squares_dot(g: &MarkovGraph) -> String {
    let mut s = String::from("digraph A {\n  node [shape=box];\n");
    for k in 0..g.cells.len() {
        let _ = writeln!(s, "  q{k} [label=\"square {k}\"];");
    }
    for e in &g.edges {
        let _ = writeln!(s, "  q{} -> q{} [label=\"({:.4}, {:.4})\"];", e.from, e.to, e.offset_u, e.offset_s);
    }
    s.push_str("}\n");
    s
}

const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7"];

/// Cells drawn in chart coordinates, `u` to the right and `s` up.
pub fn cells_svg(title: &str, cells: &[ChartRectangle], frame: Option<[f64; 4]>) -> String {
    let hull = |r: &ChartRectangle| {
        let (hu, hs) = (r.u.hull().expect("cell"), r.s.hull().expect("cell"));
        [hu.lo, hu.hi, hs.lo, hs.hi]
    };
    let mut b = frame.unwrap_or([f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY]);
    for r in cells {
        let h = hull(r);
        b = [b[0].min(h[0]), b[1].max(h[1]), b[2].min(h[2]), b[3].max(h[3])];
    }
    let size = 600.0;
    let pad = 20.0;
    let scale = (size - 2.0 * pad) / (b[1] - b[0]).max(b[3] - b[2]);
    let x = |u: f64| pad + (u - b[0]) * scale;
    let y = |s: f64| size - pad - (s - b[2]) * scale;
    let mut out = String::new();
    let _ = writeln!(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">");
    let _ = writeln!(out, "  <title>{title}</title>");
    if let Some(f) = frame {
        let _ = writeln!(
            out,
            "  <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
            x(f[0]),
            y(f[3]),
            (f[1] - f[0]) * scale,
            (f[3] - f[2]) * scale
        );
    }
    for (k, r) in cells.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for pu in r.u.parts() {
            for ps in r.s.parts() {
                let _ = writeln!(
                    out,
                    "  <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.45\" stroke=\"#222\" stroke-width=\"0.8\"/>",
                    x(pu.lo),
                    y(ps.hi),
                    pu.length() * scale,
                    ps.length() * scale
                );
            }
        }
        let h = hull(r);
        let _ = writeln!(
            out,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{k}</text>",
            x(0.5 * (h[0] + h[1])),
            y(0.5 * (h[2] + h[3])) + 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    written.push(path);
    Ok(())
}

/// Writes every artifact of a build; returns the paths written.
pub fn write_all(dir: &Path, built: &Built, partition: &Partition, svg_discs: &[usize]) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Input(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    write(dir, "partition.json", &partition.to_json(), &mut written)?;
    match (built, partition) {
        (Built::Center(c), Partition::Center(m)) => {
            let g = m.graph();
            write(dir, "matrix_a.dot", &matrix_a_dot(&c.table), &mut written)?;
            write(dir, "matrix_s.dot", &matrix_s_dot(&g), &mut written)?;
            write(dir, "matrix_s.json", &matrix_s_json(&g), &mut written)?;
            let d = m.delta;
            for &i in svg_discs {
                if i >= c.family.num_discs() {
                    return Err(PipelineError::Input(format!("svg disc {i} out of range ({} discs)", c.family.num_discs())));
                }
                let cells: Vec<ChartRectangle> = (0..m.len()).map(|mu| m.rectangle(i, mu)).collect();
                let title = format!("cells on disc {i} (site {:?}); dashed: B", c.family.site(i));
                write(dir, &format!("cells_disc_{i}.svg"), &cells_svg(&title, &cells, Some([-d, d, -d, d])), &mut written)?;
            }
        }
        (Built::ZeroCenter(_), Partition::ZeroCenter(p)) => {
            let g = p.graph();
            write(dir, "matrix_a.dot", &squares_dot(&p.square_graph()), &mut written)?;
            write(dir, "matrix_s.dot", &matrix_s_dot(&g), &mut written)?;
            write(dir, "matrix_s.json", &matrix_s_json(&g), &mut written)?;
            let cells: Vec<ChartRectangle> = p.cylinders.iter().map(|c| c.rect.clone()).collect();
            write(dir, "cells_disc_0.svg", &cells_svg("cylinders of the two-square partition", &cells, None), &mut written)?;
        }
        _ => return Err(PipelineError::Input("partition kind does not match the config".into())),
    }
    Ok(written)
}
