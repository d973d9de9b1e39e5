mod common;

use common::oracle::{isomorphism, torus_distance, CatOracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn squares_tile_the_torus_once() {
    let o = CatOracle::build(40);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        let mut hits = 0;
        for m0 in -3..=3 {
            for m1 in -3..=3 {
                let (a, b) = o.eigen([x[0] + m0 as f64, x[1] + m1 as f64]);
                hits += o.square_of(a, b).is_some() as usize;
            }
        }
        assert_eq!(hits, 1);
    }
}

#[test]
fn labels_and_transitions_are_stable_under_refinement() {
    let coarse = CatOracle::build(200);
    let fine = CatOracle::build(500);
    assert_eq!(coarse.labels, fine.labels);
    assert_eq!(coarse.matrix, fine.matrix);
    assert_eq!(fine.labels.len(), 5);
}

#[test]
fn decoded_points_follow_the_map() {
    let o = CatOracle::build(300);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        // Itinerary of x over [-30, 30]; the past comes from the inverse map.
        let inv = |y: [f64; 2]| [(y[0] - y[1]).rem_euclid(1.0), (2.0 * y[1] - y[0]).rem_euclid(1.0)];
        let fwd = |y: [f64; 2]| [(2.0 * y[0] + y[1]).rem_euclid(1.0), (y[0] + y[1]).rem_euclid(1.0)];
        let mut past = vec![x];
        for _ in 0..30 {
            past.push(inv(*past.last().unwrap()));
        }
        past.reverse();
        let mut orbit = past;
        for _ in 0..30 {
            orbit.push(fwd(*orbit.last().unwrap()));
        }
        let word: Vec<usize> = orbit.iter().map(|&y| o.index_of(&o.label_at(y)).unwrap()).collect();
        // Floating orbits drift at the far ends; the middle is exact enough.
        assert!(torus_distance(o.decode(&word, 30), x) < 1e-6);
    }
}

#[test]
fn isomorphism_finds_a_permutation() {
    let a = vec![vec![0, 1, 0], vec![0, 0, 1], vec![1, 1, 1]];
    let sigma = [2, 0, 1];
    let mut b = vec![vec![0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[sigma[i]][sigma[j]] = a[i][j];
        }
    }
    let found = isomorphism(&a, &b).expect("isomorphic");
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(a[i][j], b[found[i]][found[j]]);
        }
    }
    assert!(isomorphism(&a, &vec![vec![0; 3]; 3]).is_none());
}
