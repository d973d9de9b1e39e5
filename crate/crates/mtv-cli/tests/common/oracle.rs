//! Classical Markov partition of the cat map `[[2,1],[1,1]]`, built from
//! scratch in standard coordinates. Rectangles are labelled by
//! `(square, next square, lattice jump)` and transitions are found by
//! sampling; decoding uses the explicit contraction along the orbit.

use std::collections::{BTreeMap, BTreeSet};

pub const A: [[f64; 2]; 2] = [[2.0, 1.0], [1.0, 1.0]];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label {
    pub square: usize,
    pub next: usize,
    /// `A·x̃ - ỹ` for the plane lifts of `x` and of its image.
    pub jump: [i64; 2],
}

pub struct CatOracle {
    pub lambda: f64,
    /// Unit eigenvectors, unstable then stable.
    pub vu: [f64; 2],
    pub vs: [f64; 2],
    p: f64,
    q: f64,
    pub labels: Vec<Label>,
    pub matrix: Vec<Vec<u8>>,
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn apply(x: [f64; 2]) -> [f64; 2] {
    [A[0][0] * x[0] + A[0][1] * x[1], A[1][0] * x[0] + A[1][1] * x[1]]
}

fn wrap(x: [f64; 2]) -> [f64; 2] {
    [x[0].rem_euclid(1.0), x[1].rem_euclid(1.0)]
}

/// Distance on `T²`.
pub fn torus_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = |x: f64, y: f64| {
        let t = (x - y).rem_euclid(1.0);
        t.min(1.0 - t)
    };
    d(a[0], b[0]).hypot(d(a[1], b[1]))
}

impl CatOracle {
    /// Samples a `grid × grid` lattice of torus points (offset so no sample
    /// lies on a rectangle boundary) to collect labels and transitions.
    pub fn build(grid: usize) -> Self {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let n = (1.0 + phi * phi).sqrt();
        let mut o = CatOracle {
            lambda: phi * phi,
            vu: [phi / n, 1.0 / n],
            vs: [-1.0 / n, phi / n],
            p: phi / n,
            q: 1.0 / n,
            labels: Vec::new(),
            matrix: Vec::new(),
        };
        let offset = 0.5 * (2f64.sqrt() - 1.0);
        let mut seen = BTreeSet::new();
        let mut pairs = BTreeSet::new();
        for i in 0..grid {
            for j in 0..grid {
                let x = [(i as f64 + offset) / grid as f64, (j as f64 + offset) / grid as f64];
                let (a, b) = (o.label_at(x), o.label_at(wrap(apply(x))));
                seen.insert(a);
                seen.insert(b);
                pairs.insert((a, b));
            }
        }
        o.labels = seen.into_iter().collect();
        let index: BTreeMap<Label, usize> = o.labels.iter().enumerate().map(|(k, l)| (*l, k)).collect();
        o.matrix = vec![vec![0; o.labels.len()]; o.labels.len()];
        for (a, b) in pairs {
            o.matrix[index[&a]][index[&b]] = 1;
        }
        o
    }

    /// Eigen-coordinates `(a, b)` of a plane point.
    pub fn eigen(&self, x: [f64; 2]) -> (f64, f64) {
        (dot(x, self.vu), dot(x, self.vs))
    }

    /// Square 0 is `[0,p]×[-p,0]`, square 1 is `[p,p+q]×[-q,0]`, in
    /// eigen-coordinates.
    pub fn square_of(&self, a: f64, b: f64) -> Option<usize> {
        let (p, q) = (self.p, self.q);
        if (0.0..p).contains(&a) && (-p..0.0).contains(&b) {
            Some(0)
        } else if (p..p + q).contains(&a) && (-q..0.0).contains(&b) {
            Some(1)
        } else {
            None
        }
    }

    fn square_center(&self, k: usize) -> (f64, f64) {
        let (p, q) = (self.p, self.q);
        if k == 0 {
            (p / 2.0, -p / 2.0)
        } else {
            (p + q / 2.0, -q / 2.0)
        }
    }

    /// Plane lift of a torus point inside the two squares.
    pub fn lift(&self, x: [f64; 2]) -> (usize, [f64; 2]) {
        for m0 in -3..=3 {
            for m1 in -3..=3 {
                let y = [x[0] + m0 as f64, x[1] + m1 as f64];
                let (a, b) = self.eigen(y);
                if let Some(k) = self.square_of(a, b) {
                    return (k, y);
                }
            }
        }
        panic!("no lift of {x:?}");
    }

    pub fn label_at(&self, x: [f64; 2]) -> Label {
        let (square, lx) = self.lift(x);
        let ax = apply(lx);
        let (next, ly) = self.lift(wrap(ax));
        let jump = [(ax[0] - ly[0]).round() as i64, (ax[1] - ly[1]).round() as i64];
        Label { square, next, jump }
    }

    pub fn index_of(&self, l: &Label) -> Option<usize> {
        self.labels.iter().position(|m| m == l)
    }

    /// Torus point coded by labels `word` with time zero at `zero`. The
    /// unstable coordinate comes from the future, contracted by `1/λ` per
    /// step, and the stable one from the past.
    pub fn decode(&self, word: &[usize], zero: usize) -> [f64; 2] {
        let jump = |k: usize| {
            let j = self.labels[word[k]].jump;
            [j[0] as f64, j[1] as f64]
        };
        let last = word.len() - 1;
        let mut a = self.square_center(self.labels[word[last]].square).0;
        for k in (zero..last).rev() {
            a = (a + dot(jump(k), self.vu)) / self.lambda;
        }
        let mut b = self.square_center(self.labels[word[0]].square).1;
        for k in 0..zero {
            b = b / self.lambda - dot(jump(k), self.vs);
        }
        wrap([a * self.vu[0] + b * self.vs[0], a * self.vu[1] + b * self.vs[1]])
    }
}

/// A relabelling `σ` with `a[i][j] == b[σ i][σ j]`, by backtracking.
pub fn isomorphism(a: &[Vec<u8>], b: &[Vec<u8>]) -> Option<Vec<usize>> {
    fn extend(a: &[Vec<u8>], b: &[Vec<u8>], sigma: &mut Vec<usize>, used: &mut [bool]) -> bool {
        let i = sigma.len();
        if i == a.len() {
            return true;
        }
        for c in 0..b.len() {
            if used[c] || a[i][i] != b[c][c] {
                continue;
            }
            if (0..i).all(|k| a[i][k] == b[c][sigma[k]] && a[k][i] == b[sigma[k]][c]) {
                sigma.push(c);
                used[c] = true;
                if extend(a, b, sigma, used) {
                    return true;
                }
                sigma.pop();
                used[c] = false;
            }
        }
        false
    }
    if a.len() != b.len() {
        return None;
    }
    let mut sigma = Vec::new();
    let mut used = vec![false; b.len()];
    extend(a, b, &mut sigma, &mut used).then_some(sigma)
}
