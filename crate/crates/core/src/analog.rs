//! State-vector simulation of a driven Rydberg register:
//!
//! `H(t) = Ω(t)/2 Σᵢ σᵢˣ − δ(t) Σᵢ n̂ᵢ + Σ_{i<j} Uᵢⱼ n̂ᵢ n̂ⱼ`  (ħ = 1, rad/μs, μs)
//!
//! Atom `i` is bit `i` of a [`Bitstring`], i.e. bit `n−1−i` of the amplitude
//! index, and a Rydberg excitation reads as 1.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{interaction_matrix, validate, HardwareConstraints, Register, DEFAULT_C6};
use crate::error::{check_dim, Error, Result};
use crate::qubo::{Bitstring, QuboMatrix};
use crate::seed;

pub const DEFAULT_OMEGA_CAP: f64 = 15.71;
pub const DEFAULT_MAX_ATOMS: usize = 16;

/// Which entries of Q̃ feed the median that sets the peak Rabi frequency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianRule {
    /// Every entry, as written. A non-positive median is an error.
    AllEntries,
    /// Strictly positive entries only; falls back to the cap when there are none.
    #[default]
    PositiveEntries,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    /// μs
    pub tau: f64,
    /// μs
    pub dt: f64,
    /// rad/μs
    pub omega_cap: f64,
    /// rad/μs
    pub delta_start: f64,
    /// rad/μs
    pub delta_end: f64,
    pub median_rule: MedianRule,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            tau: 10.0,
            dt: 0.01,
            omega_cap: DEFAULT_OMEGA_CAP,
            delta_start: -10.0,
            delta_end: 10.0,
            median_rule: MedianRule::PositiveEntries,
        }
    }
}

impl ScheduleParams {
    /// Shortened schedule used for hardware runs.
    pub fn qpu() -> Self {
        ScheduleParams {
            tau: 4.0,
            ..ScheduleParams::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaShape {
    /// `Ω_peak·(1 − cos(2πt/τ))/2`, zero at both ends.
    #[default]
    RaisedCosine,
    /// `Ω_peak` throughout; used for calibration-style runs.
    Constant,
}

/// Rabi pulse and linear detuning ramp over `[0, τ]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleJson", into = "ScheduleJson")]
pub struct PulseSchedule {
    omega_shape: OmegaShape,
    tau: f64,
    dt: f64,
    omega_peak: f64,
    delta_start: f64,
    delta_end: f64,
}

#[derive(Serialize, Deserialize)]
struct ScheduleJson {
    omega_shape: OmegaShape,
    delta_shape: String,
    tau_us: f64,
    dt_us: f64,
    omega_peak: f64,
    delta_start: f64,
    delta_end: f64,
    /// `(t μs, Ω rad/μs, δ rad/μs)`
    samples: Vec<[f64; 3]>,
}

impl From<PulseSchedule> for ScheduleJson {
    fn from(s: PulseSchedule) -> Self {
        ScheduleJson {
            omega_shape: s.omega_shape,
            delta_shape: "linear".into(),
            tau_us: s.tau,
            dt_us: s.dt,
            omega_peak: s.omega_peak,
            delta_start: s.delta_start,
            delta_end: s.delta_end,
            samples: s.samples(),
        }
    }
}

impl TryFrom<ScheduleJson> for PulseSchedule {
    type Error = Error;
    fn try_from(j: ScheduleJson) -> Result<Self> {
        if j.delta_shape != "linear" {
            return Err(Error::invalid("unsupported detuning shape"));
        }
        let mut s = PulseSchedule::new(j.tau_us, j.dt_us, j.omega_peak, j.delta_start, j.delta_end)?;
        s.omega_shape = j.omega_shape;
        Ok(s)
    }
}

impl PulseSchedule {
    pub fn new(tau: f64, dt: f64, omega_peak: f64, delta_start: f64, delta_end: f64) -> Result<Self> {
        if !(tau > 0.0) || !(dt > 0.0) || dt > tau {
            return Err(Error::invalid("need 0 < dt ≤ tau"));
        }
        let steps = (tau / dt).round();
        if (steps * dt - tau).abs() > 1e-9 * tau {
            return Err(Error::invalid(format!("dt = {dt} does not divide tau = {tau}")));
        }
        if !(omega_peak >= 0.0) || !omega_peak.is_finite() {
            return Err(Error::invalid("omega_peak must be finite and non-negative"));
        }
        if delta_end < delta_start {
            return Err(Error::invalid("detuning ramp must be non-decreasing"));
        }
        Ok(PulseSchedule {
            omega_shape: OmegaShape::RaisedCosine,
            tau,
            dt,
            omega_peak,
            delta_start,
            delta_end,
        })
    }

    /// Constant Ω and δ for `tau`.
    pub fn constant(tau: f64, dt: f64, omega: f64, delta: f64) -> Result<Self> {
        let mut s = PulseSchedule::new(tau, dt, omega, delta, delta)?;
        s.omega_shape = OmegaShape::Constant;
        Ok(s)
    }

    pub fn omega_shape(&self) -> OmegaShape {
        self.omega_shape
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        (self.tau / self.dt).round() as usize
    }

    pub fn omega_peak(&self) -> f64 {
        self.omega_peak
    }

    pub fn delta_start(&self) -> f64 {
        self.delta_start
    }

    pub fn delta_end(&self) -> f64 {
        self.delta_end
    }

    pub fn omega(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.tau);
        if self.omega_shape == OmegaShape::Constant {
            return self.omega_peak;
        }
        self.omega_peak * 0.5 * (1.0 - (2.0 * PI * t / self.tau).cos())
    }

    pub fn delta(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.tau);
        self.delta_start + (self.delta_end - self.delta_start) * t / self.tau
    }

    /// Waveforms sampled on the `dt` grid, endpoints included.
    pub fn samples(&self) -> Vec<[f64; 3]> {
        (0..=self.steps())
            .map(|k| {
                let t = if k == self.steps() { self.tau } else { k as f64 * self.dt };
                [t, self.omega(t), self.delta(t)]
            })
            .collect()
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Peak Rabi frequency `min(median(Q̃), cap)`.
pub fn omega_peak(qtilde: &QuboMatrix, cap: f64, rule: MedianRule) -> Result<f64> {
    let entries = qtilde.entries().iter().copied();
    match rule {
        MedianRule::AllEntries => {
            let m = median(entries.collect()).ok_or_else(|| Error::invalid("empty QUBO"))?;
            if !(m > 0.0) {
                return Err(Error::invalid(format!(
                    "median of Q̃ is {m}; a Rabi frequency must be positive"
                )));
            }
            Ok(m.min(cap))
        }
        MedianRule::PositiveEntries => Ok(median(entries.filter(|&x| x > 0.0).collect())
            .map_or(cap, |m| m.min(cap))),
    }
}

pub fn build_schedule(qtilde: &QuboMatrix, params: &ScheduleParams) -> Result<PulseSchedule> {
    if !(params.omega_cap > 0.0) {
        return Err(Error::invalid("omega_cap must be positive"));
    }
    let peak = omega_peak(qtilde, params.omega_cap, params.median_rule)?;
    PulseSchedule::new(params.tau, params.dt, peak, params.delta_start, params.delta_end)
}

/// QUBO whose energy is twice the final-time diagonal Hamiltonian:
/// `Qᵢⱼ = Uᵢⱼ`, `Qᵢᵢ = −2·δ_end`, so `aᵀQa = 2·(Σ_{i<j} Uᵢⱼaᵢaⱼ − δ_end Σ aᵢ)`.
pub fn register_qubo(reg: &Register, c6: f64, delta_end: f64) -> Result<QuboMatrix> {
    let mut rows = interaction_matrix(reg, c6)?;
    for (i, row) in rows.iter_mut().enumerate() {
        row[i] = -2.0 * delta_end;
    }
    QuboMatrix::from_rows(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    n: usize,
    amplitudes: Vec<Complex64>,
}

impl QuantumState {
    pub fn ground(n: usize) -> Self {
        Self::basis(&Bitstring::zeros(n))
    }

    pub fn basis(b: &Bitstring) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << b.len()];
        amplitudes[b.to_index() as usize] = Complex64::new(1.0, 0.0);
        QuantumState { n: b.len(), amplitudes }
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::invalid("amplitude count must be a power of two"));
        }
        Ok(QuantumState {
            n: len.trailing_zeros() as usize,
            amplitudes,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Rydberg population of atom `i`.
    pub fn excitation(&self, i: usize) -> f64 {
        let mask = 1usize << (self.n - 1 - i);
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(z, _)| z & mask != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    pub fn probability(&self, b: &Bitstring) -> Result<f64> {
        check_dim(self.n, b.len())?;
        Ok(self.amplitudes[b.to_index() as usize].norm_sqr())
    }

    /// `|⟨ψ|φ⟩|²`.
    pub fn fidelity(&self, other: &QuantumState) -> Result<f64> {
        check_dim(self.n, other.n)?;
        let s: Complex64 = self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(s.norm_sqr())
    }
}

/// `|⟨target|ψ⟩|²`.
pub fn ground_state_overlap(state: &QuantumState, target: &Bitstring) -> Result<f64> {
    state.probability(target)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// P(read 0 | atom in 1)
    pub spam_eps: f64,
    /// P(read 1 | atom in 0)
    pub spam_eps_prime: f64,
    /// Relative σ of a global Ω scale factor.
    pub amplitude_jitter_sigma: f64,
    /// σ of a global δ offset, rad/μs.
    pub detuning_offset_sigma: f64,
    pub spam_enabled: bool,
    pub amplitude_jitter_enabled: bool,
    pub detuning_offset_enabled: bool,
    /// Upper bound on independent jitter draws per sampling call; shots are
    /// split evenly across them.
    pub max_realizations: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            spam_eps: 0.03,
            spam_eps_prime: 0.08,
            amplitude_jitter_sigma: 0.02,
            detuning_offset_sigma: 0.2,
            spam_enabled: true,
            amplitude_jitter_enabled: true,
            detuning_offset_enabled: true,
            max_realizations: 16,
        }
    }
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        NoiseConfig {
            spam_enabled: false,
            amplitude_jitter_enabled: false,
            detuning_offset_enabled: false,
            ..NoiseConfig::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        for (name, p) in [("spam_eps", self.spam_eps), ("spam_eps_prime", self.spam_eps_prime)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.amplitude_jitter_sigma >= 0.0) || !(self.detuning_offset_sigma >= 0.0) {
            return Err(Error::invalid("noise sigmas must be non-negative"));
        }
        if self.max_realizations == 0 {
            return Err(Error::invalid("max_realizations must be at least 1"));
        }
        Ok(())
    }

    pub fn coherent(&self) -> bool {
        self.amplitude_jitter_enabled || self.detuning_offset_enabled
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub c6: f64,
    pub max_atoms: usize,
    pub constraints: HardwareConstraints,
    /// Largest phase `h·Λ` accumulated in one split step, with
    /// `Λ = max(Ω, |δ|) + maxᵢ Σⱼ Uᵢⱼ`; `dt` is subdivided until this holds.
    pub max_phase: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            c6: DEFAULT_C6,
            max_atoms: DEFAULT_MAX_ATOMS,
            constraints: HardwareConstraints::default(),
            max_phase: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Drive {
    omega_scale: f64,
    delta_offset: f64,
}

impl Drive {
    const IDEAL: Drive = Drive {
        omega_scale: 1.0,
        delta_offset: 0.0,
    };

    fn draw(noise: Option<&NoiseConfig>, seed: u64) -> Drive {
        let Some(noise) = noise.filter(|n| n.coherent()) else {
            return Drive::IDEAL;
        };
        let mut rng = seed::rng(seed::derive_seed(seed, &[seed::tag("jitter")]));
        let mut d = Drive::IDEAL;
        if noise.amplitude_jitter_enabled {
            let z: f64 = StandardNormal.sample(&mut rng);
            d.omega_scale = (1.0 + noise.amplitude_jitter_sigma * z).max(0.0);
        }
        if noise.detuning_offset_enabled {
            let z: f64 = StandardNormal.sample(&mut rng);
            d.delta_offset = noise.detuning_offset_sigma * z;
        }
        d
    }
}

/// Dense `H` at one instant, for diagnostics and small reference integrations.
pub fn hamiltonian_dense(reg: &Register, c6: f64, omega: f64, delta: f64) -> Result<Vec<Vec<Complex64>>> {
    let n = reg.len();
    let diag = interaction_energies(&interaction_matrix(reg, c6)?);
    let dim = 1usize << n;
    let mut h = vec![vec![Complex64::new(0.0, 0.0); dim]; dim];
    for z in 0..dim {
        h[z][z] = Complex64::new(diag[z] - delta * z.count_ones() as f64, 0.0);
        for q in 0..n {
            h[z][z ^ (1 << q)] += Complex64::new(omega / 2.0, 0.0);
        }
    }
    Ok(h)
}

fn interaction_energies(u: &[Vec<f64>]) -> Vec<f64> {
    let n = u.len();
    (0..1usize << n)
        .map(|z| {
            let mut e = 0.0;
            for i in 0..n {
                if z >> (n - 1 - i) & 1 == 1 {
                    for j in i + 1..n {
                        if z >> (n - 1 - j) & 1 == 1 {
                            e += u[i][j];
                        }
                    }
                }
            }
            e
        })
        .collect()
}

fn check_register(reg: &Register, sim: &SimConfig) -> Result<()> {
    if reg.len() > sim.max_atoms {
        return Err(Error::TooManyAtoms {
            atoms: reg.len(),
            max: sim.max_atoms,
        });
    }
    if reg.is_empty() {
        return Err(Error::invalid("empty register"));
    }
    let violations = validate(reg, &sim.constraints);
    if !violations.is_empty() {
        return Err(Error::UnvalidatedRegister(violations));
    }
    Ok(())
}

/// Evolves the all-ground state under the schedule. With coherent noise
/// enabled one global Ω scale and δ offset are drawn from `seed` first.
pub fn evolve(
    reg: &Register,
    schedule: &PulseSchedule,
    sim: &SimConfig,
    noise: Option<&NoiseConfig>,
    seed: u64,
) -> Result<QuantumState> {
    evolve_observed(reg, schedule, sim, noise, seed, |_, _| {})
}

/// As [`evolve`], calling `observe(t, ψ(t))` at `t = 0` and after every `dt`.
pub fn evolve_observed(
    reg: &Register,
    schedule: &PulseSchedule,
    sim: &SimConfig,
    noise: Option<&NoiseConfig>,
    seed: u64,
    mut observe: impl FnMut(f64, &QuantumState),
) -> Result<QuantumState> {
    check_register(reg, sim)?;
    if let Some(noise) = noise {
        noise.check()?;
    }
    let drive = Drive::draw(noise, seed);
    let n = reg.len();
    let u = interaction_matrix(reg, sim.c6)?;
    let e_int = interaction_energies(&u);

    let row_max = u.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
    let delta_max = (schedule.delta_start + drive.delta_offset)
        .abs()
        .max((schedule.delta_end + drive.delta_offset).abs());
    let lambda = (schedule.omega_peak * drive.omega_scale).max(delta_max) + row_max;
    let steps = schedule.steps();
    let dt = schedule.tau / steps as f64;
    let sub = ((dt * lambda / sim.max_phase).ceil() as usize).max(1);
    let h = dt / sub as f64;

    let stepper = Stepper::new(&e_int, n, h);
    let mut state = QuantumState::ground(n);
    observe(0.0, &state);
    for k in 0..steps {
        // Strang splitting D(h/2)·X(h)·D(h/2) per substep, parameters at the
        // substep midpoint; adjacent diagonal halves inside a window commute
        // and are fused.
        let mid = |s: usize| k as f64 * dt + (s as f64 + 0.5) * h;
        let delta_at = |s: usize| schedule.delta(mid(s)) + drive.delta_offset;
        stepper.diagonal(&mut state.amplitudes, 0.5 * delta_at(0), 0.5);
        for s in 0..sub {
            stepper.mix(&mut state.amplitudes, schedule.omega(mid(s)) * drive.omega_scale);
            if s + 1 < sub {
                stepper.diagonal(&mut state.amplitudes, 0.5 * (delta_at(s) + delta_at(s + 1)), 1.0);
            } else {
                stepper.diagonal(&mut state.amplitudes, 0.5 * delta_at(s), 0.5);
            }
        }
        observe((k + 1) as f64 * dt, &state);
    }
    Ok(state)
}

const PAR_THRESHOLD: usize = 1 << 14;

struct Stepper {
    n: usize,
    h: f64,
    /// `exp(−i·E_int·h/2)` and `exp(−i·E_int·h)`
    half: Vec<Complex64>,
    full: Vec<Complex64>,
    pop: Vec<usize>,
}

impl Stepper {
    fn new(e_int: &[f64], n: usize, h: f64) -> Self {
        Stepper {
            n,
            h,
            half: e_int.iter().map(|&e| Complex64::from_polar(1.0, -e * h / 2.0)).collect(),
            full: e_int.iter().map(|&e| Complex64::from_polar(1.0, -e * h)).collect(),
            pop: (0..e_int.len()).map(|z| z.count_ones() as usize).collect(),
        }
    }

    /// Applies `exp(−i·h·(E_int − δ·k))` scaled to `fraction` of a substep
    /// (0.5 or 1); `delta_h` is δ already multiplied by that fraction.
    fn diagonal(&self, psi: &mut [Complex64], delta_h: f64, fraction: f64) {
        let det: Vec<Complex64> = (0..=self.n)
            .map(|k| Complex64::from_polar(1.0, delta_h * k as f64 * self.h))
            .collect();
        let int = if fraction == 1.0 { &self.full } else { &self.half };
        let apply = |(z, a): (usize, &mut Complex64)| *a *= int[z] * det[self.pop[z]];
        if psi.len() >= PAR_THRESHOLD {
            psi.par_iter_mut().enumerate().for_each(apply);
        } else {
            psi.iter_mut().enumerate().for_each(apply);
        }
    }

    /// Exact `exp(−i·h·Ω/2·Σσˣ)`, one qubit at a time.
    fn mix(&self, psi: &mut [Complex64], omega: f64) {
        if omega == 0.0 {
            return;
        }
        let theta = omega * self.h / 2.0;
        let (c, ms) = (theta.cos(), Complex64::new(0.0, -theta.sin()));
        for q in 0..self.n {
            let bit = 1usize << q;
            let rot = |chunk: &mut [Complex64]| {
                let (lo, hi) = chunk.split_at_mut(bit);
                for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                    let (x, y) = (*a, *b);
                    *a = x * c + ms * y;
                    *b = y * c + ms * x;
                }
            };
            if psi.len() >= PAR_THRESHOLD {
                psi.par_chunks_mut(2 * bit).for_each(rot);
            } else {
                psi.chunks_mut(2 * bit).for_each(rot);
            }
        }
    }
}

/// Measured bitstring counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotHistogram {
    counts: BTreeMap<Bitstring, u64>,
    total_shots: u64,
}

impl ShotHistogram {
    pub fn new(counts: BTreeMap<Bitstring, u64>) -> Self {
        let total_shots = counts.values().sum();
        ShotHistogram { counts, total_shots }
    }

    pub fn empty() -> Self {
        Self::new(BTreeMap::new())
    }

    pub fn record(&mut self, b: Bitstring, count: u64) {
        if count > 0 {
            *self.counts.entry(b).or_insert(0) += count;
            self.total_shots += count;
        }
    }

    pub fn merge(&mut self, other: ShotHistogram) {
        for (b, c) in other.counts {
            self.record(b, c);
        }
    }

    pub fn counts(&self) -> &BTreeMap<Bitstring, u64> {
        &self.counts
    }

    pub fn total_shots(&self) -> u64 {
        self.total_shots
    }

    pub fn count(&self, b: &Bitstring) -> u64 {
        self.counts.get(b).copied().unwrap_or(0)
    }

    pub fn probabilities(&self) -> BTreeMap<Bitstring, f64> {
        let total = self.total_shots as f64;
        self.counts.iter().map(|(b, &c)| (b.clone(), c as f64 / total)).collect()
    }

    /// Bitstrings by count descending, ties in lexicographic order.
    pub fn ranked(&self) -> Vec<(Bitstring, u64)> {
        let mut v: Vec<_> = self.counts.iter().map(|(b, &c)| (b.clone(), c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }
}

/// Modal bitstring; ties go to the lexicographically smallest.
pub fn most_probable_state(hist: &ShotHistogram) -> Result<Bitstring> {
    hist.ranked()
        .into_iter()
        .next()
        .map(|(b, _)| b)
        .ok_or_else(|| Error::invalid("empty histogram"))
}

/// Draws `n_shots` outcomes from `|ψ|²`, then applies readout flips when
/// SPAM noise is enabled.
pub fn sample(state: &QuantumState, n_shots: u64, noise: Option<&NoiseConfig>, seed: u64) -> Result<ShotHistogram> {
    let norm = state.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("state norm {norm} is not 1")));
    }
    let spam = match noise {
        Some(nc) => {
            nc.check()?;
            nc.spam_enabled.then_some((nc.spam_eps, nc.spam_eps_prime))
        }
        None => None,
    };
    let mut cdf = Vec::with_capacity(state.amplitudes.len());
    let mut acc = 0.0;
    for a in &state.amplitudes {
        acc += a.norm_sqr();
        cdf.push(acc);
    }
    let mut rng = seed::rng(seed::derive_seed(seed, &[seed::tag("shots")]));
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    let last = cdf.len() - 1;
    for _ in 0..n_shots {
        let r = rng.random::<f64>() * acc;
        let mut z = cdf.partition_point(|&c| c <= r).min(last);
        // Skip zero-probability outcomes that share a cumulative value.
        while state.amplitudes[z].norm_sqr() == 0.0 && z < last {
            z += 1;
        }
        let mut z = z as u64;
        if let Some((eps, eps_prime)) = spam {
            for q in 0..state.n {
                let bit = 1u64 << q;
                let p = if z & bit != 0 { eps } else { eps_prime };
                if rng.random::<f64>() < p {
                    z ^= bit;
                }
            }
        }
        *counts.entry(z).or_insert(0) += 1;
    }
    Ok(ShotHistogram::new(
        counts
            .into_iter()
            .map(|(z, c)| (Bitstring::from_index(z, state.n), c))
            .collect(),
    ))
}

/// Full evolve-then-measure run. Without coherent noise the state is
/// evolved once; with it, shots are split across up to
/// `max_realizations` independently jittered evolutions.
pub fn run_shots(
    reg: &Register,
    schedule: &PulseSchedule,
    sim: &SimConfig,
    noise: Option<&NoiseConfig>,
    shots: u64,
    seed: u64,
) -> Result<ShotHistogram> {
    let realizations = match noise {
        Some(nc) if nc.coherent() => (nc.max_realizations as u64).min(shots).max(1),
        _ => 1,
    };
    let parts: Vec<Result<ShotHistogram>> = (0..realizations)
        .into_par_iter()
        .map(|r| {
            let share = shots / realizations + u64::from(r < shots % realizations);
            let s = if realizations == 1 { seed } else { seed::derive_seed(seed, &[r]) };
            let state = evolve(reg, schedule, sim, noise, s)?;
            sample(&state, share, noise, s)
        })
        .collect();
    let mut hist = ShotHistogram::empty();
    for p in parts {
        hist.merge(p?);
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sched(omega_peak: f64, tau: f64) -> PulseSchedule {
        PulseSchedule::new(tau, 0.01, omega_peak, -10.0, 10.0).unwrap()
    }

    /// Reference integrator: classical RK4 on the dense Hamiltonian.
    fn rk4_reference(reg: &Register, s: &PulseSchedule, c6: f64, steps: usize) -> QuantumState {
        let n = reg.len();
        let dim = 1 << n;
        let h_at = |t: f64| hamiltonian_dense(reg, c6, s.omega(t), s.delta(t)).unwrap();
        let deriv = |h: &Vec<Vec<Complex64>>, psi: &[Complex64]| -> Vec<Complex64> {
            (0..dim)
                .map(|i| {
                    let acc: Complex64 = (0..dim).map(|j| h[i][j] * psi[j]).sum();
                    Complex64::new(0.0, -1.0) * acc
                })
                .collect()
        };
        let mut psi = vec![Complex64::new(0.0, 0.0); dim];
        psi[0] = Complex64::new(1.0, 0.0);
        let dt = s.tau() / steps as f64;
        for k in 0..steps {
            let t = k as f64 * dt;
            let (h0, hm, h1) = (h_at(t), h_at(t + dt / 2.0), h_at(t + dt));
            let k1 = deriv(&h0, &psi);
            let y: Vec<_> = psi.iter().zip(&k1).map(|(p, k)| p + k * (dt / 2.0)).collect();
            let k2 = deriv(&hm, &y);
            let y: Vec<_> = psi.iter().zip(&k2).map(|(p, k)| p + k * (dt / 2.0)).collect();
            let k3 = deriv(&hm, &y);
            let y: Vec<_> = psi.iter().zip(&k3).map(|(p, k)| p + k * dt).collect();
            let k4 = deriv(&h1, &y);
            for i in 0..dim {
                psi[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
            }
        }
        QuantumState::from_amplitudes(psi).unwrap()
    }

    fn line(n: usize, spacing: f64) -> Register {
        Register::new((0..n).map(|i| [i as f64 * spacing, 0.0]).collect())
    }

    #[test]
    fn schedule_peak_rule() {
        let params = ScheduleParams::default();
        let big = QuboMatrix::from_rows(vec![vec![20.0; 3]; 3]).unwrap();
        assert_eq!(build_schedule(&big, &params).unwrap().omega_peak(), 15.71);
        let q = QuboMatrix::from_rows(vec![vec![7.0, 1.0, 9.0], vec![1.0, 7.0, 8.0], vec![9.0, 8.0, 5.0]]).unwrap();
        assert_eq!(build_schedule(&q, &params).unwrap().omega_peak(), 7.0);

        // Only the positive entries vote under the default rule.
        let mixed = QuboMatrix::from_rows(vec![vec![-3.0, 2.0], vec![2.0, -5.0]]).unwrap();
        assert_eq!(omega_peak(&mixed, 15.71, MedianRule::PositiveEntries).unwrap(), 2.0);
        assert!(omega_peak(&mixed, 15.71, MedianRule::AllEntries).is_err());
        assert_eq!(omega_peak(&QuboMatrix::zeros(2), 15.71, MedianRule::PositiveEntries).unwrap(), 15.71);
    }

    #[test]
    fn schedule_waveforms() {
        let s = sched(7.0, 10.0);
        assert_eq!(s.delta(0.0), -10.0);
        assert_eq!(s.delta(10.0), 10.0);
        assert!(s.delta(5.0).abs() < 1e-12);
        assert_eq!(s.omega(0.0), 0.0);
        assert!(s.omega(10.0).abs() < 1e-12);
        assert!((s.omega(5.0) - 7.0).abs() < 1e-12);
        let samples = s.samples();
        assert_eq!(samples.len(), 1001);
        assert!(samples.windows(2).all(|w| w[1][2] >= w[0][2]));
        let peak = samples.iter().map(|x| x[1]).fold(0.0, f64::max);
        assert!((peak - 7.0).abs() < 1e-9);

        assert_eq!(ScheduleParams::qpu().tau, 4.0);
        assert!(PulseSchedule::new(10.0, 0.03, 1.0, -10.0, 10.0).is_err());

        let json = serde_json::to_string(&s).unwrap();
        let back: PulseSchedule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rabi_oscillation() {
        let omega = 3.0;
        let period = 2.0 * PI / omega;
        let s = PulseSchedule::constant(period, period / 500.0, omega, 0.0).unwrap();
        let mut worst = 0.0f64;
        evolve_observed(&line(1, 0.0), &s, &SimConfig::default(), None, 0, |t, st| {
            worst = worst.max((st.excitation(0) - (omega * t / 2.0).sin().powi(2)).abs());
        })
        .unwrap();
        assert!(worst < 1e-12, "max deviation {worst}");
    }

    #[test]
    fn zero_drive_keeps_basis_populations() {
        let reg = line(3, 8.0);
        let s = sched(0.0, 2.0);
        let st = evolve(&reg, &s, &SimConfig::default(), None, 0).unwrap();
        assert!((st.probability(&Bitstring::zeros(3)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_dense_reference() {
        let reg = Register::new(vec![[0.0, 0.0], [7.5, 0.0], [3.0, 6.5], [10.0, 7.0]]);
        let s = PulseSchedule::new(3.0, 0.01, 12.0, -10.0, 10.0).unwrap();
        let sim = SimConfig::default();
        let ours = evolve(&reg, &s, &sim, None, 0).unwrap();
        let reference = rk4_reference(&reg, &s, sim.c6, 60_000);
        let f = ours.fidelity(&reference).unwrap();
        assert!(1.0 - f < 1e-5, "infidelity {}", 1.0 - f);
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        let mut rng = seed::rng(9);
        for _ in 0..10 {
            let n = rng.random_range(1..=4);
            let reg = Register::new((0..n).map(|i| [i as f64 * 6.0 + rng.random::<f64>(), rng.random::<f64>() * 5.0]).collect());
            let h = hamiltonian_dense(&reg, DEFAULT_C6, rng.random::<f64>() * 15.0, rng.random::<f64>() * 20.0 - 10.0).unwrap();
            for i in 0..h.len() {
                for j in 0..h.len() {
                    assert_eq!(h[i][j], h[j][i].conj());
                }
            }
        }
    }

    #[test]
    fn sampling_examples() {
        let b: Bitstring = "101".parse().unwrap();
        let st = QuantumState::basis(&b);
        let hist = sample(&st, 200, None, 4).unwrap();
        assert_eq!(hist.count(&b), 200);
        assert_eq!(hist.total_shots(), 200);

        let amp = Complex64::new(0.5f64.sqrt(), 0.0);
        let plus = QuantumState::from_amplitudes(vec![amp, amp]).unwrap();
        let shots = 100_000u64;
        let hist = sample(&plus, shots, None, 11).unwrap();
        let p = hist.count(&"1".parse().unwrap()) as f64 / shots as f64;
        let sigma = (0.25 / shots as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * sigma);
        let total: f64 = hist.probabilities().values().sum();
        assert!((total - 1.0).abs() < 1e-12);

        let flip_all = NoiseConfig {
            spam_eps: 1.0,
            spam_eps_prime: 0.0,
            ..NoiseConfig::default()
        };
        let one = QuantumState::basis(&"1".parse().unwrap());
        let hist = sample(&one, 50, Some(&flip_all), 1).unwrap();
        assert_eq!(hist.count(&"0".parse().unwrap()), 50);
    }

    #[test]
    fn modal_state_and_ties() {
        let mk = |pairs: &[(&str, u64)]| ShotHistogram::new(pairs.iter().map(|(b, c)| (b.parse().unwrap(), *c)).collect());
        assert_eq!(most_probable_state(&mk(&[("00", 7), ("11", 3)])).unwrap().to_string(), "00");
        assert_eq!(most_probable_state(&mk(&[("10", 5), ("01", 5)])).unwrap().to_string(), "01");
        assert!(most_probable_state(&ShotHistogram::empty()).is_err());
        let json = serde_json::to_string(&mk(&[("01", 2)])).unwrap();
        assert_eq!(json, r#"{"counts":{"01":2},"total_shots":2}"#);
    }

    #[test]
    fn overlap_examples() {
        let b: Bitstring = "0110".parse().unwrap();
        let st = QuantumState::basis(&b);
        assert_eq!(ground_state_overlap(&st, &b).unwrap(), 1.0);
        assert_eq!(ground_state_overlap(&st, &"0111".parse().unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn disabled_noise_is_bit_identical() {
        let reg = line(3, 7.0);
        let s = sched(8.0, 2.0);
        let sim = SimConfig::default();
        let off = NoiseConfig::disabled();
        let a = run_shots(&reg, &s, &sim, None, 300, 5).unwrap();
        let b = run_shots(&reg, &s, &sim, Some(&off), 300, 5).unwrap();
        assert_eq!(a, b);
        let sa = evolve(&reg, &s, &sim, None, 5).unwrap();
        let sb = evolve(&reg, &s, &sim, Some(&off), 5).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn noisy_runs_are_seeded() {
        let reg = line(3, 7.0);
        let s = sched(8.0, 2.0);
        let sim = SimConfig::default();
        let noise = NoiseConfig::default();
        let a = run_shots(&reg, &s, &sim, Some(&noise), 100, 8).unwrap();
        let b = run_shots(&reg, &s, &sim, Some(&noise), 100, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_shots(), 100);
    }

    #[test]
    fn refuses_invalid_registers() {
        let s = sched(5.0, 1.0);
        let sim = SimConfig::default();
        let close = Register::new(vec![[0.0, 0.0], [3.0, 0.0]]);
        assert!(matches!(evolve(&close, &s, &sim, None, 0), Err(Error::UnvalidatedRegister(_))));
        let small = SimConfig {
            max_atoms: 2,
            ..SimConfig::default()
        };
        assert!(matches!(evolve(&line(3, 6.0), &s, &small, None, 0), Err(Error::TooManyAtoms { .. })));
    }

    #[test]
    fn register_qubo_is_twice_final_hamiltonian() {
        let reg = Register::new(vec![[0.0, 0.0], [8.0, 0.0], [4.0, 7.0]]);
        let q = register_qubo(&reg, DEFAULT_C6, 10.0).unwrap();
        let h = hamiltonian_dense(&reg, DEFAULT_C6, 0.0, 10.0).unwrap();
        for z in 0..8u64 {
            let e = q.energy(&Bitstring::from_index(z, 3)).unwrap();
            assert!((e - 2.0 * h[z as usize][z as usize].re).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn evolution_preserves_norm(
            xs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..=5),
            peak in 0.0f64..15.0,
        ) {
            let reg = Register::new(xs.iter().enumerate().map(|(i, (a, b))| [i as f64 * 6.0 + a, b * 3.0]).collect());
            let s = PulseSchedule::new(1.0, 0.01, peak, -10.0, 10.0).unwrap();
            let st = evolve(&reg, &s, &SimConfig::default(), None, 0).unwrap();
            prop_assert!((st.norm() - 1.0).abs() < 1e-9);
        }
    }
}
