//! Acceptance run: one PASS/FAIL line per criterion; exits nonzero if any
//! criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::oracle::{isomorphism, torus_distance, CatOracle, A};
use mtv_cli::config::{PipelineConfig, Resolved};
use mtv_cli::export::write_all;
use mtv_cli::pipeline::{build, Built, CenterBuild, ZeroBuild};
use mtv_cli::verify::{
    bracket_suite, covering_suite, decay_suite, disjointness_suite, markov_suite, semiconjugacy_suite, shadowing_suite, theta_suite, Suite,
};
use mtv_core::coding::CodingSystem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    name: &'static str,
    config: PipelineConfig,
    resolved: Resolved,
    built: CenterBuild,
}

fn center(name: &'static str, file: &str) -> Case {
    let config = common::config(file);
    let resolved = config.resolve(&config.system().unwrap()).unwrap();
    let Built::Center(built) = build(&config).unwrap() else { panic!("{file} is not a center config") };
    Case { name, config, resolved, built: *built }
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    passed: bool,
    detail: String,
}

/// Runs a suite on every case and joins the details.
fn each(cases: &[Case], mut f: impl FnMut(&Case, &mut ChaCha8Rng) -> Suite) -> Outcome {
    let mut passed = true;
    let mut detail = Vec::new();
    for c in cases {
        let mut rng = ChaCha8Rng::seed_from_u64(c.config.seed);
        let s = f(c, &mut rng);
        passed &= s.passed;
        detail.push(format!("{} {}", c.name, s.detail));
    }
    Outcome { passed, detail: detail.join("; ") }
}

fn markov(cases: &[Case]) -> Outcome {
    let t = Instant::now();
    let mut o = each(cases, |c, rng| markov_suite(&c.config, &c.built.markov.graph(), rng));
    let elapsed = t.elapsed();
    o.passed &= elapsed < Duration::from_secs(300);
    o.detail = format!("{:.2?}; {}", elapsed, o.detail);
    o
}

fn zero_center_oracle() -> Outcome {
    let config = common::config("cat2.json");
    let Built::ZeroCenter(z) = build(&config).unwrap() else { panic!("cat2.json is not zero-center") };
    let ZeroBuild { system, partition } = *z;
    let spec: Vec<Vec<f64>> = A.iter().map(|r| r.to_vec()).collect();
    assert_eq!(system.spec().matrix, spec, "the oracle models [[2,1],[1,1]]");

    let oracle = CatOracle::build(600);
    let g = partition.graph();
    let cs = CodingSystem::new(g.clone());
    let ours = cs.matrix_s();
    if ours.len() > 10 {
        return Outcome { passed: false, detail: format!("{} cells, brute force limited to 10", ours.len()) };
    }
    let Some(_) = isomorphism(&ours, &oracle.matrix) else {
        return Outcome { passed: false, detail: format!("not isomorphic: {ours:?} vs {:?}", oracle.matrix) };
    };
    // Geometric correspondence: the oracle label of each cell's centre.
    let mut sigma = Vec::new();
    for c in &partition.cylinders {
        let (hu, hs) = (c.rect.u.hull().unwrap(), c.rect.s.hull().unwrap());
        let x = partition.torus_point(&system, 0.5 * (hu.lo + hu.hi), 0.5 * (hs.lo + hs.hi));
        let x = [x.coords()[0], x.coords()[1]];
        sigma.push(oracle.index_of(&oracle.label_at(x)).expect("sampled label"));
    }
    let mut sorted = sigma.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != sigma.len() {
        return Outcome { passed: false, detail: format!("correspondence is not injective: {sigma:?}") };
    }
    let n = ours.len();
    let preserved = (0..n).all(|i| (0..n).all(|j| ours[i][j] == oracle.matrix[sigma[i]][sigma[j]]));
    let mut inverse = vec![0; n];
    for (k, &l) in sigma.iter().enumerate() {
        inverse[l] = k;
    }

    let (strings, horizon) = (1000, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..strings {
        let mut word = vec![rng.gen_range(0..n)];
        while word.len() < 2 * horizon + 1 {
            let last = *word.last().unwrap();
            let next: Vec<usize> = (0..n).filter(|&j| oracle.matrix[last][j] == 1).collect();
            word.push(next[rng.gen_range(0..next.len())]);
        }
        let cells: Vec<usize> = word.iter().map(|&l| inverse[l]).collect();
        let a = cs.string_from_cells(&cells, horizon).expect("isomorphic graphs share admissible strings");
        let coded = cs.h(&a, 1e-8).expect("coding converges");
        let x = partition.torus_point(&system, coded.u, coded.s);
        let x = [x.coords()[0], x.coords()[1]];
        worst = worst.max(torus_distance(x, oracle.decode(&word, horizon)));
    }
    Outcome {
        passed: preserved && worst < 1e-6,
        detail: format!("{n} cells, geometric relabelling preserves edges: {preserved}; {strings} strings, max torus error {worst:.3e}"),
    }
}

fn determinism() -> Outcome {
    let mut texts = Vec::new();
    let mut files = Vec::new();
    for run in 0..2 {
        let config = common::config("skew3.json");
        let built = build(&config).unwrap();
        let dir = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance_run{run}"));
        let _ = std::fs::remove_dir_all(&dir);
        write_all(&dir, &built, &built.partition(), &config.svg_discs).unwrap();
        texts.push(built.partition().to_json());
        files.push(std::fs::read(dir.join("partition.json")).unwrap());
    }
    let passed = texts[0] == texts[1] && files[0] == files[1] && files[0] == texts[0].as_bytes();
    Outcome { passed, detail: format!("two builds, {} bytes each, identical: {passed}", files[0].len()) }
}

fn main() -> ExitCode {
    let all = [center("CatId3", "catid3.json"), center("Skew3", "skew3.json")];
    let skew = std::slice::from_ref(&all[1]);
    let criteria: Vec<Criterion> = vec![
        ("Markov property of the family", Box::new(|| markov(&all))),
        ("covering on a δ/4 grid", Box::new(|| each(&all, |c, _| covering_suite(&c.config, &c.built.family, &c.built.markov)))),
        ("disjoint interiors", Box::new(|| each(&all, |c, _| disjointness_suite(&c.built.markov)))),
        ("shadowing of pseudo-orbits", Box::new(|| each(&all, |c, rng| shadowing_suite(&c.config, c.built.family.system(), &c.resolved, rng)))),
        ("θ surjectivity", Box::new(|| each(&all, |c, rng| theta_suite(&c.config, &c.built, rng)))),
        ("bracket and shift compatibility", Box::new(|| each(&all, |c, rng| bracket_suite(&c.config, &c.built, rng)))),
        ("semiconjugacy", Box::new(|| each(&all, |c, rng| semiconjugacy_suite(&c.config, &c.built, &c.built.markov, rng)))),
        ("zero-center against the classical oracle", Box::new(zero_center_oracle)),
        ("decay of stable fibers", Box::new(|| each(skew, |c, rng| decay_suite(&c.config, c.built.family.system(), &c.built.markov.graph(), rng)))),
        ("deterministic partition.json", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run();
        failed += !o.passed as usize;
        println!("criterion {:>2} {} {name} ({:.1?}): {}", k + 1, if o.passed { "PASS" } else { "FAIL" }, t.elapsed(), o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
