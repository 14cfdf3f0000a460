//! QUBO data model, energy evaluation and the two classical solvers
//! (exhaustive enumeration and simulated annealing).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::seed;

/// Default bound on the dimension accepted by [`brute_force_solve`].
pub const DEFAULT_ENUMERATION_BOUND: usize = 24;

/// A binary assignment `a ∈ {0,1}^D`.
///
/// Ordering is lexicographic over the bits, which is also the numeric order
/// of [`Bitstring::to_index`] (bit 0 is the most significant).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitstring(Vec<u8>);

impl Bitstring {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::invalid(format!("bit value {b} is not 0 or 1")));
        }
        Ok(Bitstring(bits))
    }

    pub fn zeros(len: usize) -> Self {
        Bitstring(vec![0; len])
    }

    pub fn ones(len: usize) -> Self {
        Bitstring(vec![1; len])
    }

    /// Decodes `index` as a `len`-bit big-endian bitstring.
    pub fn from_index(index: u64, len: usize) -> Self {
        Bitstring(
            (0..len)
                .map(|i| ((index >> (len - 1 - i)) & 1) as u8)
                .collect(),
        )
    }

    pub fn to_index(&self) -> u64 {
        self.0.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u8 {
        self.0[i]
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] ^= 1;
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl FromStr for Bitstring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::invalid(format!("invalid bit character `{other}`"))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(Bitstring)
    }
}

impl Serialize for Bitstring {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bitstring {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Square real matrix defining the cost `E = aᵀQa`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuboJson", into = "QuboJson")]
pub struct QuboMatrix {
    dim: usize,
    entries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct QuboJson {
    dim: usize,
    entries: Vec<Vec<f64>>,
}

impl TryFrom<QuboJson> for QuboMatrix {
    type Error = Error;

    fn try_from(j: QuboJson) -> Result<Self> {
        check_dim(j.dim, j.entries.len())?;
        QuboMatrix::from_rows(j.entries)
    }
}

impl From<QuboMatrix> for QuboJson {
    fn from(q: QuboMatrix) -> Self {
        QuboJson {
            dim: q.dim,
            entries: q.rows(),
        }
    }
}

impl QuboMatrix {
    /// Builds a matrix from row-major entries.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("QUBO dimension must be at least 1"));
        }
        check_dim(dim * dim, entries.len())?;
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("QUBO entries must be finite"));
        }
        Ok(QuboMatrix { dim, entries })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        for r in &rows {
            check_dim(dim, r.len())?;
        }
        QuboMatrix::new(dim, rows.into_iter().flatten().collect())
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "QUBO dimension must be at least 1");
        QuboMatrix {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Panics on non-finite values; the matrix never holds NaN or Inf.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(v.is_finite(), "QUBO entries must be finite");
        self.entries[i * self.dim + j] = v;
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.dim).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// `Σᵢⱼ aᵢ Qᵢⱼ aⱼ`.
    pub fn energy(&self, a: &Bitstring) -> Result<f64> {
        check_dim(self.dim, a.len())?;
        Ok(self.energy_unchecked(a.bits()))
    }

    fn energy_unchecked(&self, bits: &[u8]) -> f64 {
        let mut e = 0.0;
        for (i, &ai) in bits.iter().enumerate() {
            if ai == 0 {
                continue;
            }
            let row = &self.entries[i * self.dim..(i + 1) * self.dim];
            for (j, &aj) in bits.iter().enumerate() {
                if aj == 1 {
                    e += row[j];
                }
            }
        }
        e
    }

    /// Replaces each off-diagonal pair by its mean; the quadratic form is
    /// unchanged.
    pub fn symmetrize(&self) -> QuboMatrix {
        let mut out = self.clone();
        for i in 0..self.dim {
            for j in 0..i {
                let m = (self.get(i, j) + self.get(j, i)) / 2.0;
                out.entries[i * self.dim + j] = m;
                out.entries[j * self.dim + i] = m;
            }
        }
        out
    }

    /// Plain-text form: the dimension on the first line, then one
    /// whitespace-separated row per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.dim);
        for row in self.entries.chunks(self.dim) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let dim: usize = lines
            .next()
            .ok_or_else(|| Error::invalid("empty QUBO file"))?
            .trim()
            .parse()
            .map_err(|e| Error::invalid(format!("bad QUBO dimension line: {e}")))?;
        let rows = lines
            .map(|l| {
                l.split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|e| Error::invalid(format!("bad QUBO entry `{t}`: {e}")))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        check_dim(dim, rows.len())?;
        QuboMatrix::from_rows(rows)
    }
}

/// Result of a solver run. `energy` is always re-evaluated on `best`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub best: Bitstring,
    pub energy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranked: Option<Vec<(Bitstring, f64)>>,
}

// Heap entry ordered by (energy, index); the heap keeps the k smallest.
#[derive(Clone, Copy)]
struct Ranked {
    energy: f64,
    index: u64,
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.energy
            .total_cmp(&other.energy)
            .then(self.index.cmp(&other.index))
    }
}

fn push_bounded(heap: &mut BinaryHeap<Ranked>, item: Ranked, k: usize) {
    if heap.len() < k {
        heap.push(item);
    } else if let Some(top) = heap.peek() {
        if item < *top {
            heap.pop();
            heap.push(item);
        }
    }
}

/// Exhaustive enumeration of all `2^D` states.
///
/// Returns the global minimizer and, when `top_k > 0`, the `top_k` lowest
/// states ascending by energy. Equal energies are broken toward the
/// lexicographically smallest bitstring, so output does not depend on the
/// thread schedule.
pub fn brute_force_solve(q: &QuboMatrix, top_k: usize) -> Result<SolveResult> {
    brute_force_solve_bounded(q, top_k, DEFAULT_ENUMERATION_BOUND)
}

pub fn brute_force_solve_bounded(q: &QuboMatrix, top_k: usize, bound: usize) -> Result<SolveResult> {
    let d = q.dim();
    if d > bound || d > 63 {
        return Err(Error::EnumerationBound { dim: d, bound });
    }
    let total = 1u64 << d;
    let keep = top_k.max(1).min(total as usize);
    let chunk = 1u64 << d.saturating_sub(6).min(16);
    let starts: Vec<u64> = (0..total).step_by(chunk as usize).collect();

    let heaps: Vec<BinaryHeap<Ranked>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + chunk).min(total);
            let mut heap = BinaryHeap::with_capacity(keep + 1);
            let mut bits = vec![0u8; d];
            for index in start..end {
                for (i, b) in bits.iter_mut().enumerate() {
                    *b = ((index >> (d - 1 - i)) & 1) as u8;
                }
                let energy = q.energy_unchecked(&bits);
                push_bounded(&mut heap, Ranked { energy, index }, keep);
            }
            heap
        })
        .collect();

    let mut merged = BinaryHeap::with_capacity(keep + 1);
    for h in heaps {
        for item in h {
            push_bounded(&mut merged, item, keep);
        }
    }
    let sorted = merged.into_sorted_vec();
    let best = Bitstring::from_index(sorted[0].index, d);
    let energy = q.energy(&best)?;
    let ranked = (top_k > 0).then(|| {
        sorted
            .iter()
            .map(|r| (Bitstring::from_index(r.index, d), r.energy))
            .collect()
    });
    Ok(SolveResult { best, energy, ranked })
}

/// Temperature schedule for [`simulated_anneal`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TempSchedule {
    /// Geometric decay from `initial` to `final_temp`. `initial = None` uses
    /// `max|Qᵢⱼ|·D`.
    Geometric {
        initial: Option<f64>,
        final_temp: f64,
    },
    /// Linear decay in temperature.
    Linear { initial: f64, final_temp: f64 },
}

impl Default for TempSchedule {
    fn default() -> Self {
        TempSchedule::Geometric {
            initial: None,
            final_temp: 1e-3,
        }
    }
}

impl TempSchedule {
    fn temperatures(&self, q: &QuboMatrix, sweeps: usize) -> Vec<f64> {
        let auto = (q.max_abs() * q.dim() as f64).max(1e-3);
        let steps = sweeps.max(1);
        let frac = |s: usize| if steps == 1 { 1.0 } else { s as f64 / (steps - 1) as f64 };
        match *self {
            TempSchedule::Geometric { initial, final_temp } => {
                let t0 = initial.unwrap_or(auto);
                let t1 = final_temp.min(t0);
                (0..steps).map(|s| t0 * (t1 / t0).powf(frac(s))).collect()
            }
            TempSchedule::Linear { initial, final_temp } => (0..steps)
                .map(|s| initial + (final_temp - initial) * frac(s))
                .collect(),
        }
    }
}

/// Single-bit-flip Metropolis annealing. Deterministic for a fixed seed;
/// returns the best state visited, which need not be optimal.
pub fn simulated_anneal(
    q: &QuboMatrix,
    sweeps: usize,
    schedule: &TempSchedule,
    seed: u64,
) -> Result<SolveResult> {
    if sweeps == 0 {
        return Err(Error::invalid("simulated annealing needs at least one sweep"));
    }
    let (best, _) = anneal_chain(q, sweeps, schedule, seed);
    let energy = q.energy(&best)?;
    Ok(SolveResult {
        best,
        energy,
        ranked: None,
    })
}

/// Runs one annealing chain; returns (best visited, final state).
pub(crate) fn anneal_chain(
    q: &QuboMatrix,
    sweeps: usize,
    schedule: &TempSchedule,
    seed: u64,
) -> (Bitstring, Bitstring) {
    let d = q.dim();
    let mut rng = seed::rng(seed);
    let mut state: Vec<u8> = (0..d).map(|_| rng.random_range(0..2u8)).collect();
    let mut energy = q.energy_unchecked(&state);
    let mut best = state.clone();
    let mut best_energy = energy;

    for temp in schedule.temperatures(q, sweeps) {
        for i in 0..d {
            let mut field = q.get(i, i);
            for (j, &aj) in state.iter().enumerate() {
                if j != i && aj == 1 {
                    field += q.get(i, j) + q.get(j, i);
                }
            }
            let delta = if state[i] == 0 { field } else { -field };
            let accept = delta <= 0.0 || rng.random::<f64>() < (-delta / temp.max(1e-300)).exp();
            if accept {
                state[i] ^= 1;
                energy += delta;
                if energy < best_energy {
                    best_energy = energy;
                    best.clone_from(&state);
                }
            }
        }
    }
    (Bitstring(best), Bitstring(state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    fn random_qubo(d: usize, seed: u64) -> QuboMatrix {
        let mut rng = seed::rng(seed);
        QuboMatrix::new(d, (0..d * d).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap()
    }

    #[test]
    fn energy_examples() {
        let q = QuboMatrix::from_rows(vec![vec![1.0, -2.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(q.energy(&Bitstring::zeros(2)).unwrap(), 0.0);
        assert_eq!(q.energy(&"11".parse().unwrap()).unwrap(), 2.0);
        let one = QuboMatrix::from_rows(vec![vec![5.0]]).unwrap();
        assert_eq!(one.energy(&"1".parse().unwrap()).unwrap(), 5.0);
        assert!(matches!(
            q.energy(&Bitstring::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_malformed_matrices() {
        assert!(QuboMatrix::new(0, vec![]).is_err());
        assert!(QuboMatrix::new(2, vec![1.0; 3]).is_err());
        assert!(QuboMatrix::new(1, vec![f64::NAN]).is_err());
        assert!(QuboMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn symmetrize_examples() {
        let q = QuboMatrix::from_rows(vec![vec![1.0, 4.0], vec![0.0, 3.0]]).unwrap();
        let s = q.symmetrize();
        assert_eq!(s.rows(), vec![vec![1.0, 2.0], vec![2.0, 3.0]]);
        assert_eq!(s.symmetrize(), s);
        assert!(s.is_symmetric());

        let r = random_qubo(4, 3);
        let rs = r.symmetrize();
        for idx in 0..16 {
            let a = Bitstring::from_index(idx, 4);
            assert!((r.energy(&a).unwrap() - rs.energy(&a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn bitstring_index_roundtrip_and_order() {
        for idx in 0..32 {
            assert_eq!(Bitstring::from_index(idx, 5).to_index(), idx);
        }
        assert!(Bitstring::from_index(3, 4) < Bitstring::from_index(4, 4));
        assert_eq!(Bitstring::from_index(5, 4).to_string(), "0101");
        assert!("012".parse::<Bitstring>().is_err());
    }

    #[test]
    fn brute_force_examples() {
        let neg = QuboMatrix::from_rows(vec![vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let r = brute_force_solve(&neg, 0).unwrap();
        assert_eq!(r.best.to_string(), "11");
        assert_eq!(r.energy, -2.0);
        assert!(r.ranked.is_none());

        let pos = QuboMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = brute_force_solve(&pos, 0).unwrap();
        assert_eq!(r.best.to_string(), "00");
        assert_eq!(r.energy, 0.0);
    }

    #[test]
    fn brute_force_tie_breaks_lexicographically() {
        // Both single-excitation states reach -1.
        let q = QuboMatrix::from_rows(vec![vec![-1.0, 5.0], vec![5.0, -1.0]]).unwrap();
        let r = brute_force_solve(&q, 4).unwrap();
        assert_eq!(r.best.to_string(), "01");
        let ranked = r.ranked.unwrap();
        assert_eq!(ranked[1].0.to_string(), "10");
        assert_eq!(ranked[3].1, 8.0);
    }

    #[test]
    fn brute_force_matches_independent_enumeration() {
        let q = random_qubo(10, 11);
        let r = brute_force_solve(&q, 0).unwrap();
        // Second pass: plain nested loops over the integer encoding.
        let mut best = (f64::INFINITY, 0u64);
        for idx in 0..1024u64 {
            let mut e = 0.0;
            for i in 0..10 {
                for j in 0..10 {
                    if (idx >> (9 - i)) & 1 == 1 && (idx >> (9 - j)) & 1 == 1 {
                        e += q.get(i, j);
                    }
                }
            }
            if e < best.0 {
                best = (e, idx);
            }
        }
        assert_eq!(r.best.to_index(), best.1);
        assert!((r.energy - best.0).abs() < 1e-12);
    }

    #[test]
    fn brute_force_full_spectrum_is_permutation() {
        let q = random_qubo(5, 5);
        let ranked = brute_force_solve(&q, 32).unwrap().ranked.unwrap();
        assert_eq!(ranked.len(), 32);
        let mut idx: Vec<u64> = ranked.iter().map(|(b, _)| b.to_index()).collect();
        idx.sort();
        assert_eq!(idx, (0..32).collect::<Vec<_>>());
        assert!(ranked.windows(2).all(|w| w[0].1 <= w[1].1));
        for (b, e) in &ranked {
            assert_eq!(*e, q.energy(b).unwrap());
        }
    }

    #[test]
    fn brute_force_refuses_over_bound() {
        let q = QuboMatrix::zeros(25);
        match brute_force_solve(&q, 1) {
            Err(Error::EnumerationBound { dim: 25, bound: 24 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(brute_force_solve_bounded(&QuboMatrix::zeros(6), 1, 5).is_err());
    }

    #[test]
    fn anneal_examples() {
        let neg = QuboMatrix::from_rows(vec![vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        for seed in 0..5 {
            let r = simulated_anneal(&neg, 10, &TempSchedule::default(), seed).unwrap();
            assert_eq!(r.energy, -2.0);
        }
        let q = random_qubo(12, 42);
        let a = simulated_anneal(&q, 2000, &TempSchedule::default(), 9).unwrap();
        let b = simulated_anneal(&q, 2000, &TempSchedule::default(), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.energy, q.energy(&a.best).unwrap());

        let mut rng = seed::rng(1234);
        let random_best = (0..100)
            .map(|_| {
                let bits = (0..12).map(|_| rng.random_range(0..2u8)).collect();
                q.energy(&Bitstring::new(bits).unwrap()).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(a.energy <= random_best);
        assert!(brute_force_solve(&q, 0).unwrap().energy <= a.energy);
        assert!(simulated_anneal(&q, 0, &TempSchedule::default(), 1).is_err());
    }

    #[test]
    fn text_and_json_formats() {
        let q = QuboMatrix::from_rows(vec![vec![1.5, -2.0], vec![0.25, 3.0]]).unwrap();
        let text = q.to_text();
        assert!(text.starts_with("2\n"));
        assert_eq!(QuboMatrix::from_text(&text).unwrap(), q);
        let json = serde_json::to_string(&q).unwrap();
        assert_eq!(json, r#"{"dim":2,"entries":[[1.5,-2.0],[0.25,3.0]]}"#);
        assert_eq!(serde_json::from_str::<QuboMatrix>(&json).unwrap(), q);
        assert!(serde_json::from_str::<QuboMatrix>(r#"{"dim":3,"entries":[[1.0]]}"#).is_err());
        assert!(QuboMatrix::from_text("2\n1 2\n").is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn qubo_and_bits() -> impl Strategy<Value = (QuboMatrix, Bitstring)> {
        (1usize..=12).prop_flat_map(|d| {
            (
                prop::collection::vec(-100.0f64..100.0, d * d),
                prop::collection::vec(0u8..2, d),
            )
                .prop_map(move |(e, b)| {
                    (QuboMatrix::new(d, e).unwrap(), Bitstring::new(b).unwrap())
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn symmetrization_preserves_energy((q, a) in qubo_and_bits()) {
            let s = q.symmetrize();
            prop_assert!(s.is_symmetric());
            prop_assert!((q.energy(&a).unwrap() - s.energy(&a).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn brute_force_never_worse_than_anneal(
            entries in prop::collection::vec(-3.0f64..3.0, 36),
            seed in 0u64..1000,
        ) {
            let q = QuboMatrix::new(6, entries).unwrap();
            let bf = brute_force_solve(&q, 0).unwrap();
            let sa = simulated_anneal(&q, 50, &TempSchedule::default(), seed).unwrap();
            prop_assert!(bf.energy <= sa.energy);
        }
    }
}
