//! Atom placement: finds 2-D coordinates whose van-der-Waals couplings
//! `Uᵢⱼ = C₆ / rᵢⱼ⁶` approximate the off-diagonal QUBO couplings, subject to
//! the device geometry limits.
//!
//! The loss is `Σ_{i<j} (Uᵢⱼ − s·max(Q̃ᵢⱼ, 0))²`. Couplings are strictly
//! positive, so negative targets are clipped to zero. Diagonal terms are not
//! reachable through geometry (the drive is global) and are reported as
//! unmatched.

use std::cell::Cell;
use std::f64::consts::PI;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::qubo::QuboMatrix;
use crate::seed;

/// Van-der-Waals coefficient in rad·μm⁶/μs.
pub const DEFAULT_C6: f64 = 5_420_158.53;

/// Atom coordinates in micrometers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Register {
    #[serde(rename = "coords_um")]
    coords: Vec<[f64; 2]>,
}

impl Register {
    pub fn new(coords: Vec<[f64; 2]>) -> Self {
        Register { coords }
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.coords.len().max(1) as f64;
        let (sx, sy) = self
            .coords
            .iter()
            .fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
        [sx / n, sy / n]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        dist(self.coords[i], self.coords[j])
    }

    pub fn scaled(&self, s: f64) -> Register {
        Register::new(self.coords.iter().map(|p| [p[0] * s, p[1] * s]).collect())
    }

    fn flat(&self) -> Vec<f64> {
        self.coords.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    fn from_flat(x: &[f64]) -> Register {
        Register::new(x.chunks(2).map(|c| [c[0], c[1]]).collect())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lattice {
    #[default]
    None,
    Triangular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardwareConstraints {
    pub max_atoms: usize,
    /// μm
    pub min_distance: f64,
    /// μm, measured from the register centroid
    pub max_radius: f64,
    pub lattice: Lattice,
    /// μm
    pub lattice_pitch: f64,
}

impl Default for HardwareConstraints {
    fn default() -> Self {
        HardwareConstraints {
            max_atoms: 25,
            min_distance: 5.0,
            max_radius: 35.0,
            lattice: Lattice::None,
            lattice_pitch: 5.0,
        }
    }
}

impl HardwareConstraints {
    pub fn check(&self) -> Result<()> {
        if !(self.min_distance > 0.0) {
            return Err(Error::invalid("min_distance must be positive"));
        }
        if !(self.max_radius > self.min_distance) {
            return Err(Error::invalid("max_radius must exceed min_distance"));
        }
        if self.lattice == Lattice::Triangular && self.lattice_pitch < self.min_distance {
            return Err(Error::invalid("lattice_pitch must be at least min_distance"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum Violation {
    TooManyAtoms { count: usize, max: usize },
    MinDistance { atoms: (usize, usize), distance: f64, min: f64 },
    MaxRadius { atom: usize, radius: f64, max: f64 },
    OffLattice { atom: usize },
}

/// Lists every violated constraint; empty iff the register is compliant.
pub fn validate(reg: &Register, constraints: &HardwareConstraints) -> Vec<Violation> {
    let mut out = Vec::new();
    if reg.len() > constraints.max_atoms {
        out.push(Violation::TooManyAtoms {
            count: reg.len(),
            max: constraints.max_atoms,
        });
    }
    for i in 0..reg.len() {
        for j in i + 1..reg.len() {
            let d = reg.distance(i, j);
            if d < constraints.min_distance {
                out.push(Violation::MinDistance {
                    atoms: (i, j),
                    distance: d,
                    min: constraints.min_distance,
                });
            }
        }
    }
    let c = reg.centroid();
    for (i, &p) in reg.coords.iter().enumerate() {
        let r = dist(p, c);
        if r > constraints.max_radius {
            out.push(Violation::MaxRadius {
                atom: i,
                radius: r,
                max: constraints.max_radius,
            });
        }
    }
    if constraints.lattice == Lattice::Triangular {
        for (i, &p) in reg.coords.iter().enumerate() {
            let node = nearest_node(p, constraints.lattice_pitch);
            if dist(node_position(node, constraints.lattice_pitch), p) > 1e-6 {
                out.push(Violation::OffLattice { atom: i });
            }
        }
    }
    out
}

/// `Uᵢⱼ = c6 / rᵢⱼ⁶` for `i ≠ j`, zero diagonal, in rad/μs.
pub fn interaction_matrix(reg: &Register, c6: f64) -> Result<Vec<Vec<f64>>> {
    let n = reg.len();
    let mut u = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let r = reg.distance(i, j);
            if r == 0.0 {
                return Err(Error::CoincidentAtoms(i, j));
            }
            let v = c6 / r.powi(6);
            u[i][j] = v;
            u[j][i] = v;
        }
    }
    Ok(u)
}

/// `Σ_{i<j} (Uᵢⱼ − max(Q̃ᵢⱼ, 0))²`.
pub fn embedding_loss(reg: &Register, target: &QuboMatrix, c6: f64) -> Result<f64> {
    embedding_loss_scaled(reg, target, c6, 1.0)
}

/// Same as [`embedding_loss`] with targets multiplied by `scale`.
pub fn embedding_loss_scaled(reg: &Register, target: &QuboMatrix, c6: f64, scale: f64) -> Result<f64> {
    check_dim(target.dim(), reg.len())?;
    let u = interaction_matrix(reg, c6)?;
    Ok(raw_loss(&u, target, scale))
}

fn raw_loss(u: &[Vec<f64>], target: &QuboMatrix, scale: f64) -> f64 {
    let n = target.dim();
    let mut loss = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let t = scale * target.get(i, j).max(0.0);
            loss += (u[i][j] - t).powi(2);
        }
    }
    loss
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub c6: f64,
    pub restarts: usize,
    /// Objective evaluations per restart.
    pub max_evals: usize,
    /// Global factor applied to the targets before matching.
    pub target_scale: f64,
    /// Initial trust-region radius, μm.
    pub rho_begin: f64,
    /// Weight of the exterior penalties, relative to the squared largest target.
    pub penalty_weight: f64,
    /// Relative slack kept away from the constraint boundaries.
    pub margin: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            c6: DEFAULT_C6,
            restarts: 8,
            max_evals: 4000,
            target_scale: 1.0,
            rho_begin: 2.0,
            penalty_weight: 100.0,
            margin: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub register: Register,
    pub loss: f64,
    pub target: QuboMatrix,
    pub achieved: Vec<Vec<f64>>,
    /// Objective evaluations summed over restarts.
    pub iterations: usize,
    pub restart: usize,
    pub initial_loss: f64,
    /// Diagonal of the target, which geometry cannot encode.
    pub unmatched_diagonal: Vec<f64>,
}

struct Attempt {
    register: Register,
    loss: f64,
    initial_loss: f64,
    evals: usize,
    feasible: bool,
}

/// Places `target.dim()` atoms with a derivative-free constrained local
/// optimizer (COBYLA) from seeded random feasible starts, keeping the
/// lowest-loss feasible register. Deterministic for a fixed seed.
pub fn embed(
    target: &QuboMatrix,
    constraints: &HardwareConstraints,
    cfg: &EmbedConfig,
    seed: u64,
) -> Result<EmbeddingReport> {
    constraints.check()?;
    let n = target.dim();
    if n > constraints.max_atoms {
        return Err(Error::TooManyAtoms {
            atoms: n,
            max: constraints.max_atoms,
        });
    }
    let restarts = cfg.restarts.max(1);
    let attempts: Vec<Result<Attempt>> = (0..restarts)
        .into_par_iter()
        .map(|r| embed_once(target, constraints, cfg, seed::derive_seed(seed, &[r as u64])))
        .collect();

    let mut iterations = 0;
    let mut best: Option<(usize, Attempt)> = None;
    let mut best_infeasible: Option<Attempt> = None;
    for (r, attempt) in attempts.into_iter().enumerate() {
        let a = attempt?;
        iterations += a.evals;
        if a.feasible {
            if best.as_ref().is_none_or(|(_, b)| a.loss < b.loss) {
                best = Some((r, a));
            }
        } else if best_infeasible.as_ref().is_none_or(|b| a.loss < b.loss) {
            best_infeasible = Some(a);
        }
    }
    let Some((restart, best)) = best else {
        let b = best_infeasible.expect("at least one restart");
        return Err(Error::Infeasible {
            restarts,
            best_loss: b.loss,
            best: Box::new(b.register),
        });
    };
    let achieved = interaction_matrix(&best.register, cfg.c6)?;
    Ok(EmbeddingReport {
        loss: embedding_loss_scaled(&best.register, target, cfg.c6, cfg.target_scale)?,
        register: best.register,
        target: target.clone(),
        achieved,
        iterations,
        restart,
        initial_loss: best.initial_loss,
        unmatched_diagonal: (0..n).map(|i| target.get(i, i)).collect(),
    })
}

fn embed_once(
    target: &QuboMatrix,
    constraints: &HardwareConstraints,
    cfg: &EmbedConfig,
    seed: u64,
) -> Result<Attempt> {
    let n = target.dim();
    let start = random_start(n, constraints, seed)?;
    let initial_loss = embedding_loss_scaled(&start, target, cfg.c6, cfg.target_scale)?;
    if n == 1 {
        return Ok(Attempt {
            register: start,
            loss: initial_loss,
            initial_loss,
            evals: 0,
            feasible: true,
        });
    }

    let dmin = constraints.min_distance * (1.0 + cfg.margin);
    let rmax = constraints.max_radius * (1.0 - cfg.margin);
    let max_t = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| cfg.target_scale * target.get(i, j).max(0.0))
        .fold(1.0f64, f64::max);
    let weight = cfg.penalty_weight * max_t * max_t;
    let evals = Cell::new(0usize);

    let objective = |x: &[f64], _: &mut ()| -> f64 {
        evals.set(evals.get() + 1);
        let reg = Register::from_flat(x);
        let mut penalty = 0.0;
        let mut u = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let r = reg.distance(i, j).max(1e-9);
                u[i][j] = cfg.c6 / r.powi(6);
                penalty += (dmin - r).max(0.0).powi(2);
            }
        }
        let c = reg.centroid();
        for &p in reg.coords() {
            penalty += (dist(p, c) - rmax).max(0.0).powi(2);
        }
        raw_loss(&u, target, cfg.target_scale) + weight * penalty
    };

    let bound = constraints.max_radius * 2.0;
    let bounds = vec![(-bound, bound); 2 * n];
    let no_cons: Vec<&dyn cobyla::Func<()>> = Vec::new();
    let x0 = start.flat();
    let x = match cobyla::minimize(
        objective,
        &x0,
        &bounds,
        &no_cons,
        (),
        cfg.max_evals,
        cobyla::RhoBeg::All(cfg.rho_begin),
        Some(cobyla::StopTols {
            ftol_rel: 1e-12,
            xtol_rel: 1e-10,
            ..cobyla::StopTols::default()
        }),
    ) {
        Ok((_, x, _)) => x,
        Err((_, x, _)) => x,
    };

    let candidate = repair(Register::from_flat(&x), constraints, cfg.margin);
    let candidate = match constraints.lattice {
        Lattice::Triangular => snap_to_lattice(&candidate, constraints.lattice_pitch),
        Lattice::None => candidate,
    };
    let feasible = validate(&candidate, constraints).is_empty();
    let loss = if candidate.coords().iter().enumerate().any(|(i, &p)| {
        candidate.coords()[..i].iter().any(|&q| dist(p, q) == 0.0)
    }) {
        f64::INFINITY
    } else {
        embedding_loss_scaled(&candidate, target, cfg.c6, cfg.target_scale)?
    };

    let start_ok = validate(&start, constraints).is_empty();
    let (register, loss, feasible) = if feasible && (loss <= initial_loss || !start_ok) {
        (candidate, loss, true)
    } else if start_ok {
        (start, initial_loss, true)
    } else {
        (candidate, loss, feasible)
    };
    Ok(Attempt {
        register,
        loss,
        initial_loss,
        evals: evals.get(),
        feasible,
    })
}

/// Uniform rejection sampling inside 0.8·max_radius with 1.2·min_distance
/// spacing; on a lattice the points are drawn from lattice nodes instead.
fn random_start(n: usize, constraints: &HardwareConstraints, seed: u64) -> Result<Register> {
    let mut rng = seed::rng(seed);
    let spacing = constraints.min_distance * 1.2;
    let radius = constraints.max_radius * 0.8;
    let mut coords: Vec<[f64; 2]> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..100_000 {
            let r = radius * rng.random::<f64>().sqrt();
            let th = 2.0 * PI * rng.random::<f64>();
            let mut p = [r * th.cos(), r * th.sin()];
            if constraints.lattice == Lattice::Triangular {
                p = node_position(nearest_node(p, constraints.lattice_pitch), constraints.lattice_pitch);
            }
            let min_sep = if constraints.lattice == Lattice::Triangular {
                constraints.lattice_pitch * 0.5
            } else {
                spacing
            };
            if coords.iter().all(|&q| dist(p, q) >= min_sep) {
                coords.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid(format!(
                "cannot place {n} atoms at {spacing} μm spacing within {radius} μm"
            )));
        }
    }
    Ok(Register::new(coords))
}

/// Pulls atoms back inside the radius and pushes close pairs apart until
/// the register is compliant or the iteration budget runs out.
fn repair(mut reg: Register, constraints: &HardwareConstraints, margin: f64) -> Register {
    let dmin = constraints.min_distance * (1.0 + margin);
    let rmax = constraints.max_radius * (1.0 - margin);
    let n = reg.len();
    for _ in 0..2000 {
        let mut changed = false;
        let c = reg.centroid();
        for p in reg.coords.iter_mut() {
            let r = dist(*p, c);
            if r > rmax {
                let f = rmax / r;
                *p = [c[0] + (p[0] - c[0]) * f, c[1] + (p[1] - c[1]) * f];
                changed = true;
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (reg.coords[i], reg.coords[j]);
                let d = dist(a, b);
                if d < dmin {
                    let (ux, uy) = if d > 1e-12 {
                        ((b[0] - a[0]) / d, (b[1] - a[1]) / d)
                    } else {
                        let th = (i * 7 + j * 13) as f64;
                        (th.cos(), th.sin())
                    };
                    let push = (dmin - d) / 2.0 + 1e-9;
                    reg.coords[i] = [a[0] - ux * push, a[1] - uy * push];
                    reg.coords[j] = [b[0] + ux * push, b[1] + uy * push];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    reg
}

type Node = (i64, i64);

fn node_position((i, j): Node, pitch: f64) -> [f64; 2] {
    [
        pitch * (i as f64 + 0.5 * j as f64),
        pitch * (3f64.sqrt() / 2.0) * j as f64,
    ]
}

fn nodes_by_distance(p: [f64; 2], pitch: f64, reach: i64) -> Vec<(f64, Node)> {
    let jf = p[1] / (pitch * 3f64.sqrt() / 2.0);
    let ifl = p[0] / pitch - 0.5 * jf;
    let (ci, cj) = (ifl.round() as i64, jf.round() as i64);
    let mut v: Vec<(f64, Node)> = (ci - reach..=ci + reach)
        .flat_map(|i| (cj - reach..=cj + reach).map(move |j| (i, j)))
        .map(|node| (dist(node_position(node, pitch), p), node))
        .collect();
    // Distances within 1e-9 count as ties, resolved by node index.
    v.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= 1e-9 {
            a.1.cmp(&b.1)
        } else {
            a.0.total_cmp(&b.0)
        }
    });
    v
}

fn nearest_node(p: [f64; 2], pitch: f64) -> Node {
    nodes_by_distance(p, pitch, 2)[0].1
}

/// Moves each atom to its nearest triangular-lattice node (node `(i, j)` sits
/// at `pitch·(i + j/2, j·√3/2)`). Ties go to the smaller `(i, j)`. An atom
/// whose node is taken moves to its nearest free node.
pub fn snap_to_lattice(reg: &Register, pitch: f64) -> Register {
    let mut taken: Vec<Node> = Vec::with_capacity(reg.len());
    let mut out = Vec::with_capacity(reg.len());
    for &p in reg.coords() {
        let mut reach = 2;
        let node = loop {
            if let Some(&(_, node)) = nodes_by_distance(p, pitch, reach)
                .iter()
                .find(|(_, node)| !taken.contains(node))
            {
                break node;
            }
            reach *= 2;
        };
        taken.push(node);
        out.push(node_position(node, pitch));
    }
    Register::new(out)
}
