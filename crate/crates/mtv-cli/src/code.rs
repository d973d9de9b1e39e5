//! Evaluates `h`, `hˢ` and `hᵘ` on a periodic word of rectangle indices.

use mtv_core::coding::{CodingError, CodingSystem, SymbolString};
use mtv_core::refinement::MarkovFamily;
use mtv_core::torus_model::AffinePHSystem;
use mtv_core::transversal::{AdaptedFamily, ChartPoint};
use serde::Serialize;

use crate::PipelineError;

#[derive(Clone, Debug, Serialize)]
pub struct Fiber {
    pub rectangle: usize,
    pub coordinate: f64,
    pub diameters: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CodeOutput {
    pub word: Vec<usize>,
    pub horizon: usize,
    pub rectangle: usize,
    pub disc: usize,
    pub chart: [f64; 2],
    pub torus: Vec<f64>,
    /// `hˢ(a)`: rectangle and unstable coordinate of the stable fiber.
    pub stable: Fiber,
    /// `hᵘ(a)`: rectangle and stable coordinate of the unstable fiber.
    pub unstable: Fiber,
    pub converged: bool,
}

fn fixed(x: f64) -> String {
    let s = format!("{x:.6}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

impl CodeOutput {
    pub fn text(&self) -> String {
        // Coordinates just below 1 would round to 1.000000.
        let torus: Vec<String> = self.torus.iter().map(|&x| fixed(if x > 1.0 - 5e-7 { x - 1.0 } else { x })).collect();
        let mut out = format!(
            "h(a) = rectangle {} on disc {}, chart ({}, {}), torus ({})\n",
            self.rectangle,
            self.disc,
            fixed(self.chart[0]),
            fixed(self.chart[1]),
            torus.join(", ")
        );
        out.push_str(&format!("h_s(a) = (rectangle {}, u = {})\n", self.stable.rectangle, fixed(self.stable.coordinate)));
        out.push_str(&format!("h_u(a) = (rectangle {}, s = {})\n", self.unstable.rectangle, fixed(self.unstable.coordinate)));
        out
    }

    /// Per-step widths of the nested intersections; not part of [`text`]
    /// because they depend on the horizon.
    pub fn trace(&self) -> String {
        let fmt = |v: &[f64]| v.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(" ");
        format!(
            "stable widths: {}\nunstable widths: {}\nconverged: {}\n",
            fmt(&self.stable.diameters),
            fmt(&self.unstable.diameters),
            self.converged
        )
    }
}

pub fn parse_word(text: &str) -> Result<Vec<usize>, PipelineError> {
    let word: Result<Vec<usize>, _> = text.split(',').map(|t| t.trim().parse::<usize>()).collect();
    match word {
        Ok(w) if !w.is_empty() => Ok(w),
        _ => Err(PipelineError::Input(format!("expected a comma-separated list of indices, got {text:?}"))),
    }
}

fn not_admissible(position: usize, from: usize, to: usize) -> PipelineError {
    PipelineError::Input(CodingError::NotAdmissible { position, from, to }.to_string())
}

/// Repeats one period over `[-horizon, horizon]`; `edges[k]` leads from
/// `word[k]` to the next letter.
fn periodic(cells: &[usize], edges: &[usize], horizon: usize) -> SymbolString {
    let k = cells.len();
    let len = 2 * horizon + 1;
    let at = |n: usize| (n + k * horizon.div_ceil(k) - horizon) % k;
    SymbolString {
        cells: (0..len).map(|n| cells[at(n)]).collect(),
        edges: (0..len - 1).map(|n| edges[at(n)]).collect(),
        zero: horizon,
    }
}

fn finish(cs: &CodingSystem, a: &SymbolString, word: Vec<usize>, horizon: usize, tol: f64, index: impl Fn(usize) -> usize) -> Result<(CodeOutput, [f64; 2]), PipelineError> {
    let c = cs.h(a, tol).map_err(|e| PipelineError::Input(e.to_string()))?;
    let rect = index(c.cell);
    let out = CodeOutput {
        word,
        horizon,
        rectangle: rect,
        disc: 0,
        chart: [c.u, c.s],
        torus: Vec::new(),
        stable: Fiber { rectangle: rect, coordinate: c.u, diameters: c.stable.diameters },
        unstable: Fiber { rectangle: rect, coordinate: c.s, diameters: c.unstable.diameters },
        converged: c.converged,
    };
    Ok((out, [c.u, c.s]))
}

/// Word of concrete rectangle indices `disc · cells + μ`.
pub fn code_center(family: &AdaptedFamily, m: &MarkovFamily, word: &[usize], horizon: usize, tol: f64) -> Result<CodeOutput, PipelineError> {
    let cs = CodingSystem::new(m.graph());
    let total = m.num_rectangles(family);
    if let Some(&w) = word.iter().find(|&&w| w >= total) {
        return Err(PipelineError::Input(format!("rectangle index {w} out of range ({total} rectangles)")));
    }
    let k = word.len();
    let mut cells = Vec::with_capacity(k);
    let mut edges = Vec::with_capacity(k);
    for n in 0..k {
        let (disc, mu) = m.split_index(word[n]);
        let (next_disc, nu) = m.split_index(word[(n + 1) % k]);
        let edge = cs.out_edges(mu).iter().copied().find(|&e| {
            let e = &cs.graph.edges[e];
            e.to == nu && family.targets(disc, &m.classes[e.label], family.delta()).iter().any(|t| t.0 == next_disc)
        });
        let Some(edge) = edge else {
            return Err(not_admissible(n, word[n], word[(n + 1) % k]));
        };
        cells.push(mu);
        edges.push(edge);
    }
    let a = periodic(&cells, &edges, horizon);
    let (disc, _) = m.split_index(word[0]);
    let (mut out, [u, s]) = finish(&cs, &a, word.to_vec(), horizon, tol, |mu| m.join_index(disc, mu))?;
    out.disc = disc;
    out.torus = family.point(ChartPoint { disc, u, s }).coords().to_vec();
    Ok(out)
}

/// Word of cylinder indices of the classical partition.
pub fn code_zero(
    system: &AffinePHSystem,
    p: &mtv_core::zero_center::ClassicalPartition,
    word: &[usize],
    horizon: usize,
    tol: f64,
) -> Result<CodeOutput, PipelineError> {
    let cs = CodingSystem::new(p.graph());
    if let Some(&w) = word.iter().find(|&&w| w >= p.len()) {
        return Err(PipelineError::Input(format!("rectangle index {w} out of range ({} rectangles)", p.len())));
    }
    let k = word.len();
    let mut edges = Vec::with_capacity(k);
    for n in 0..k {
        let (a, b) = (word[n], word[(n + 1) % k]);
        let e = cs.out_edges(a).iter().copied().find(|&e| cs.graph.edges[e].to == b).ok_or_else(|| not_admissible(n, a, b))?;
        edges.push(e);
    }
    let a = periodic(word, &edges, horizon);
    let (mut out, [u, s]) = finish(&cs, &a, word.to_vec(), horizon, tol, |mu| mu)?;
    out.torus = p.torus_point(system, u, s).coords().to_vec();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_parse() {
        assert_eq!(parse_word("3, 1,4").unwrap(), vec![3, 1, 4]);
        assert!(parse_word("").is_err());
        assert!(parse_word("1,,2").is_err());
        assert!(parse_word("a").is_err());
    }

    #[test]
    fn periodic_window_starts_at_the_first_letter() {
        let a = periodic(&[7, 8, 9], &[0, 1, 2], 4);
        assert_eq!(a.cells[a.zero], 7);
        assert_eq!(a.cells, vec![9, 7, 8, 9, 7, 8, 9, 7, 8]);
        assert_eq!(a.edges, vec![2, 0, 1, 2, 0, 1, 2, 0]);
    }

    proptest::proptest! {
        #[test]
        fn periodic_windows_repeat_the_word(word in proptest::collection::vec(0usize..50, 1..7), horizon in 0usize..30) {
            let edges: Vec<usize> = word.iter().map(|w| w + 100).collect();
            let a = periodic(&word, &edges, horizon);
            let k = word.len();
            proptest::prop_assert_eq!(a.cells.len(), 2 * horizon + 1);
            for n in 0..a.cells.len() {
                let letter = (n as i64 - horizon as i64).rem_euclid(k as i64) as usize;
                proptest::prop_assert_eq!(a.cells[n], word[letter]);
                if n + 1 < a.cells.len() {
                    proptest::prop_assert_eq!(a.edges[n], edges[letter]);
                }
            }
            let text = word.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
            proptest::prop_assert_eq!(parse_word(&text).unwrap(), word);
        }
    }

    #[test]
    fn negative_zero_prints_as_zero() {
        assert_eq!(fixed(-1e-9), "0.000000");
        assert_eq!(fixed(-0.25), "-0.250000");
    }

    #[test]
    fn torus_coordinates_wrap_before_rounding() {
        let out = CodeOutput {
            word: vec![0],
            horizon: 1,
            rectangle: 0,
            disc: 0,
            chart: [0.0, 0.0],
            torus: vec![1.0 - 1e-12, 0.5, 0.0],
            stable: Fiber { rectangle: 0, coordinate: 0.0, diameters: vec![] },
            unstable: Fiber { rectangle: 0, coordinate: 0.0, diameters: vec![] },
            converged: true,
        };
        assert!(out.text().contains("torus (0.000000, 0.500000, 0.000000)"));
    }
}
