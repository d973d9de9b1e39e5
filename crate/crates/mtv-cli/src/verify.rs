//! Verification suites run against a loaded partition.

use mtv_core::coding::CodingSystem;
use mtv_core::refinement::{Edge, MarkovFamily, MarkovGraph};
use mtv_core::shadowing::{shadow, PseudoOrbit, OrbitKind};
use mtv_core::symbolic_cover::SymbolSequence;
use mtv_core::torus_model::{AffinePHSystem, TorusPoint};
use mtv_core::transversal::{AdaptedFamily, ChartPoint};
use mtv_core::zero_center::ClassicalPartition;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{PipelineConfig, Resolved};
use crate::pipeline::{build, Built, CenterBuild, Partition};
use crate::PipelineError;

#[derive(Clone, Debug, Serialize)]
pub struct Suite {
    pub name: &'static str,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub kind: &'static str,
    pub seed: u64,
    pub suites: Vec<Suite>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            out.push_str(&format!("{} {}: {}\n", if s.passed { "PASS" } else { "FAIL" }, s.name, s.detail));
        }
        out
    }
}

fn suite(name: &'static str, passed: bool, detail: Value) -> Suite {
    if !passed {
        log::warn!("suite {name} failed: {detail}");
    }
    Suite { name, passed, detail }
}

fn error_suite(name: &'static str, e: impl std::fmt::Display) -> Suite {
    suite(name, false, json!({ "error": e.to_string() }))
}

/// Rebuilds the construction from the config and runs every suite on
/// the loaded partition.
pub fn verify(config: &PipelineConfig, partition: &Partition) -> Result<VerifyReport, PipelineError> {
    let system = config.system()?;
    let resolved = config.resolve(&system)?;
    let built = build(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    match (&built, partition) {
        (Built::Center(c), Partition::Center(m)) => {
            let suites = center_suites(config, &resolved, c, m, &mut rng);
            Ok(VerifyReport { kind: "center", seed: config.seed, suites })
        }
        (Built::ZeroCenter(z), Partition::ZeroCenter(p)) => {
            let suites = zero_suites(config, &z.system, &z.partition, p, &mut rng);
            Ok(VerifyReport { kind: "zero-center", seed: config.seed, suites })
        }
        _ => Err(PipelineError::Input("partition kind does not match the config".into())),
    }
}

pub fn center_suites(config: &PipelineConfig, resolved: &Resolved, c: &CenterBuild, m: &MarkovFamily, rng: &mut ChaCha8Rng) -> Vec<Suite> {
    let g = m.graph();
    vec![
        timed(|| markov_suite(config, &g, rng)),
        timed(|| covering_suite(config, &c.family, m)),
        timed(|| disjointness_suite(m)),
        timed(|| diameter_suite(&c.family, m, resolved.rho)),
        timed(|| shadowing_suite(config, c.family.system(), resolved, rng)),
        timed(|| theta_suite(config, c, rng)),
        timed(|| bracket_suite(config, c, rng)),
        timed(|| semiconjugacy_suite(config, c, m, rng)),
        timed(|| decay_suite(config, c.family.system(), &g, rng)),
    ]
}

fn timed(f: impl FnOnce() -> Suite) -> Suite {
    let t = std::time::Instant::now();
    let s = f();
    log::info!("suite {} ({:.2?})", s.name, t.elapsed());
    s
}

pub fn markov_suite(config: &PipelineConfig, g: &MarkovGraph, rng: &mut ChaCha8Rng) -> Suite {
    let rep = g.verify_markov(config.samples.markov, config.tolerances.margin, rng);
    suite("markov", rep.passed(), serde_json::to_value(&rep).expect("plain data"))
}

pub fn covering_suite(config: &PipelineConfig, family: &AdaptedFamily, m: &MarkovFamily) -> Suite {
    let pitch = config.samples.covering_pitch * family.delta();
    let extent = m
        .cells
        .iter()
        .flat_map(|c| [c.rect.u.hull(), c.rect.s.hull()])
        .flatten()
        .map(|h| h.lo.abs().max(h.hi.abs()))
        .fold(0.0, f64::max);
    let rep = family.covering_check(pitch, extent, |u, s| m.covers(u, s));
    suite("covering", rep.uncovered == 0, serde_json::to_value(&rep).expect("plain data"))
}

pub fn disjointness_suite(m: &MarkovFamily) -> Suite {
    let pairs = m.overlapping_pairs();
    let regular = m.regular_closed();
    suite("disjointness", pairs.is_empty() && regular, json!({ "cells": m.len(), "overlapping_pairs": pairs, "regular_closed": regular }))
}

pub fn diameter_suite(family: &AdaptedFamily, m: &MarkovFamily, rho: f64) -> Suite {
    let worst = m.diameters(family).into_iter().fold(0.0, f64::max);
    suite("diameter", worst < rho, json!({ "max_diameter": worst, "rho": rho }))
}

/// Random pseudo-orbit with jumps of norm at most `eta`.
pub fn pseudo_orbit(system: &AffinePHSystem, rng: &mut impl Rng, len: usize, eta: f64) -> PseudoOrbit {
    let d = system.dim();
    let mut x = TorusPoint::new((0..d).map(|_| rng.gen::<f64>()).collect());
    let mut points = vec![x.clone()];
    for _ in 1..len {
        let v: DVector<f64> = DVector::from_iterator(d, (0..d).map(|_| rng.gen_range(-1.0..1.0)));
        let n = v.norm().max(f64::MIN_POSITIVE);
        let jump = v * (eta * rng.gen::<f64>() / n);
        x = system.apply(&x).translate(&jump);
        points.push(x.clone());
    }
    PseudoOrbit::new(points, OrbitKind::Forward)
}

pub fn shadowing_suite(config: &PipelineConfig, system: &AffinePHSystem, resolved: &Resolved, rng: &mut ChaCha8Rng) -> Suite {
    let eta = resolved.delta0 / 10.0;
    let mut worst_ratio: f64 = 0.0;
    let mut worst_residual: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..config.samples.shadowing {
        let orbit = pseudo_orbit(system, rng, config.samples.shadowing_length, eta);
        match shadow(system, &orbit, eta) {
            Ok(sh) => {
                let cert = sh.certificate;
                worst_ratio = worst_ratio.max(cert.max_distance / (resolved.constant * eta));
                worst_residual = worst_residual.max(cert.plaque_residual);
                if !cert.holds() {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let passed = failures == 0 && worst_ratio <= 1.0 && worst_residual < 1e-10;
    suite(
        "shadowing",
        passed,
        json!({ "orbits": config.samples.shadowing, "defect": eta, "constant": resolved.constant, "max_distance_over_bound": worst_ratio, "max_residual": worst_residual, "failures": failures }),
    )
}

pub fn theta_suite(config: &PipelineConfig, c: &CenterBuild, rng: &mut ChaCha8Rng) -> Suite {
    let (fam, table) = (&c.family, &c.table);
    let d = fam.delta();
    let tol = config.tolerances.coding;
    let mut worst: f64 = 0.0;
    for _ in 0..config.samples.theta {
        let x = ChartPoint { disc: rng.gen_range(0..fam.num_discs()), u: rng.gen_range(-d..d), s: rng.gen_range(-d..d) };
        let res = table.encode_point(fam, x, config.horizon).and_then(|seq| table.theta(fam, &seq, tol));
        match res {
            Ok(t) if t.point.disc == x.disc => worst = worst.max((t.point.u - x.u).abs().max((t.point.s - x.s).abs())),
            Ok(_) => worst = f64::INFINITY,
            Err(e) => return error_suite("theta", e),
        }
    }
    suite("theta", worst < tol, json!({ "samples": config.samples.theta, "max_error": worst, "tolerance": tol }))
}

fn random_sequence(c: &CenterBuild, rng: &mut ChaCha8Rng, first: usize, disc: usize, horizon: usize) -> Option<SymbolSequence> {
    let w = c.table.random_word(rng, first, horizon, horizon);
    c.table.realize(&c.family, &w, disc)
}

pub fn bracket_suite(config: &PipelineConfig, c: &CenterBuild, rng: &mut ChaCha8Rng) -> Suite {
    let n = config.samples.bracket;
    let h = config.horizon;
    let mut pairs = Vec::with_capacity(n);
    let mut seqs = Vec::with_capacity(n);
    for _ in 0..n {
        let first = rng.gen_range(0..c.table.len());
        let disc = rng.gen_range(0..c.family.num_discs());
        let (Some(a), Some(b)) = (random_sequence(c, rng, first, disc, h), random_sequence(c, rng, first, disc, h)) else {
            return error_suite("bracket", "could not realize a random word");
        };
        seqs.push(a.clone());
        pairs.push((a, b));
    }
    let tol = config.tolerances.coding;
    let br = match c.table.check_bracket_preserving(&c.family, &pairs, tol) {
        Ok(r) => r,
        Err(e) => return error_suite("bracket", e),
    };
    let sh = match c.table.shift_compatibility(&c.family, &seqs, tol) {
        Ok(r) => r,
        Err(e) => return error_suite("bracket", e),
    };
    suite("bracket", br.passed() && sh.passed(), json!({ "bracket": br, "shift": sh }))
}

/// `h∘σ` against `proj(f x)` on the torus, with discs cycling through the
/// family.
pub fn semiconjugacy_suite(config: &PipelineConfig, c: &CenterBuild, m: &MarkovFamily, rng: &mut ChaCha8Rng) -> Suite {
    let fam = &c.family;
    let mismatched: Vec<usize> = (0..m.len()).filter(|&mu| m.cells[mu].futures != m.expected_futures(mu)).collect();
    let cs = CodingSystem::new(m.graph());
    let sys = fam.system();
    let mut counter = 0usize;
    let n = fam.num_discs();
    let mut generator = |e: &Edge, u: f64, s: f64| -> (f64, f64) {
        counter += 1;
        let disc = (counter * 7919) % n;
        let Some(&(target, _)) = m.classes.get(e.label).and_then(|cl| fam.targets(disc, cl, fam.delta()).first().copied()).as_ref() else {
            return (f64::NAN, f64::NAN);
        };
        let img = sys.apply(&fam.point(ChartPoint { disc, u, s }));
        match fam.proj_disc(target, &img, sys.r0()) {
            Ok(p) => (p.u, p.s),
            Err(_) => (f64::NAN, f64::NAN),
        }
    };
    let t = &config.tolerances;
    match cs.verify_semiconjugacy(rng, config.samples.strings, config.horizon, config.samples.points, t.coding, t.surjectivity, &mut generator) {
        Ok(rep) => {
            let passed = rep.passed() && rep.equivariance_max_error.is_finite() && mismatched.is_empty();
            suite("semiconjugacy", passed, json!({ "report": rep, "af_mismatch": mismatched }))
        }
        Err(e) => suite("semiconjugacy", false, json!({ "error": e.to_string(), "af_mismatch": mismatched })),
    }
}

/// Fitted decay of the `hˢ` widths against `|λ_s|`; for a center isometry
/// this is the Lipschitz-center rate.
pub fn decay_suite(config: &PipelineConfig, system: &AffinePHSystem, g: &MarkovGraph, rng: &mut ChaCha8Rng) -> Suite {
    let r = system.rates();
    let isometric = system.dims().c == 0 || ((r.lambda_c_minus - 1.0).abs() < 1e-12 && (r.lambda_c_plus - 1.0).abs() < 1e-12);
    if !isometric {
        return suite("decay", true, json!({ "applicable": false }));
    }
    let cs = CodingSystem::new(g.clone());
    let predicted = g.lambda_s.abs();
    match cs.stable_decay_rate(rng, config.samples.strings.clamp(1, 200), 30) {
        Some(k) => {
            let rel = (k - predicted).abs() / predicted;
            suite("decay", rel <= config.tolerances.decay, json!({ "fitted": k, "predicted": predicted, "relative_error": rel, "max_n": 30 }))
        }
        None => error_suite("decay", "no admissible strings"),
    }
}

/// Chart coordinates of a torus point in the cylinder `cell`, over lattice
/// translates.
fn chart_in(system: &AffinePHSystem, p: &ClassicalPartition, x: &TorusPoint, cell: usize) -> (f64, f64) {
    let y = system.splitting().coordinates(&x.to_vector());
    let r = &p.cylinders[cell].rect;
    let (hu, hs) = (r.u.hull().expect("cell"), r.s.hull().expect("cell"));
    let dist = |u: f64, s: f64| (hu.lo - u).max(u - hu.hi).max(0.0) + (hs.lo - s).max(s - hs.hi).max(0.0);
    let mut best = (f64::INFINITY, (f64::NAN, f64::NAN));
    for m0 in -3..=3 {
        for m1 in -3..=3 {
            let (a, b) = (m0 as f64, m1 as f64);
            let u = y[0] + a * p.lattice[0][0] + b * p.lattice[1][0];
            let s = y[1] + a * p.lattice[0][1] + b * p.lattice[1][1];
            let d = dist(u, s);
            if d < best.0 {
                best = (d, (u, s));
            }
        }
    }
    best.1
}

pub fn zero_suites(config: &PipelineConfig, system: &AffinePHSystem, reference: &ClassicalPartition, p: &ClassicalPartition, rng: &mut ChaCha8Rng) -> Vec<Suite> {
    let g = p.graph();
    let mut suites = vec![markov_suite(config, &g, rng)];
    // Covering of T² on a square grid.
    let steps = 400;
    let misses = (0..steps * steps)
        .filter(|k| {
            let x = TorusPoint::new(vec![(k / steps) as f64 / steps as f64, (k % steps) as f64 / steps as f64]);
            p.locate(system, &x).is_none()
        })
        .count();
    suites.push(suite("covering", misses == 0, json!({ "grid": steps * steps, "uncovered": misses })));
    let mut overlaps = Vec::new();
    for a in 0..p.len() {
        for b in a..p.len() {
            for m0 in -2i64..=2 {
                for m1 in -2i64..=2 {
                    if a == b && m0 == 0 && m1 == 0 {
                        continue;
                    }
                    let (x, y) = (m0 as f64, m1 as f64);
                    let l = [x * p.lattice[0][0] + y * p.lattice[1][0], x * p.lattice[0][1] + y * p.lattice[1][1]];
                    let r = &p.cylinders[b].rect;
                    let moved = mtv_core::region_algebra::ChartRectangle::new(0, r.u.affine_image(1.0, l[0]), r.s.affine_image(1.0, l[1]));
                    if p.cylinders[a].rect.interiors_meet(&moved) {
                        overlaps.push((a, b, [m0, m1]));
                    }
                }
            }
        }
    }
    suites.push(suite("disjointness", overlaps.is_empty(), json!({ "cells": p.len(), "overlapping_pairs": overlaps })));
    let cs = CodingSystem::new(g.clone());
    let mut generator = |e: &Edge, u: f64, s: f64| chart_in(system, p, &system.apply(&p.torus_point(system, u, s)), e.to);
    let t = &config.tolerances;
    let mut semi = match cs.verify_semiconjugacy(rng, config.samples.strings, config.horizon, config.samples.points, t.coding, t.surjectivity, &mut generator) {
        Ok(rep) => suite("semiconjugacy", rep.passed(), serde_json::to_value(&rep).expect("plain data")),
        Err(e) => error_suite("semiconjugacy", e),
    };
    if p != reference {
        semi.passed = false;
        semi.detail = json!({ "error": "partition differs from the rebuilt classical partition", "report": semi.detail });
    }
    suites.push(semi);
    suites.push(decay_suite(config, system, &g, rng));
    suites
}
