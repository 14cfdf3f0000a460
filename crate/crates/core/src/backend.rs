//! QUBO solver backends behind one trait, selected by name at runtime.
//!
//! Every backend turns a QUBO into a [`ShotHistogram`]. The analog backends
//! additionally embed the problem into a register and hand the device a
//! [`DevicePayload`], which holds atom coordinates and the pulse schedule and
//! nothing else.

use serde::{Deserialize, Serialize};

use crate::analog::{
    build_schedule, evolve, run_shots, sample, NoiseConfig, PulseSchedule, QuantumState, ScheduleParams,
    ShotHistogram, SimConfig,
};
use crate::embedding::{embed, EmbedConfig, EmbeddingReport, HardwareConstraints, Register};
use crate::error::{Error, Result};
use crate::qubo::{anneal_chain, brute_force_solve_bounded, QuboMatrix, TempSchedule, DEFAULT_ENUMERATION_BOUND};
use crate::seed;

/// Output of one backend call.
#[derive(Clone, Debug)]
pub struct BackendRun {
    pub histogram: ShotHistogram,
    /// Present for analog backends.
    pub embedding: Option<EmbeddingReport>,
    pub payload: Option<DevicePayload>,
    /// Final state of an ideal evolution (absent under coherent noise).
    pub state: Option<QuantumState>,
}

impl BackendRun {
    fn classical(histogram: ShotHistogram) -> Self {
        BackendRun {
            histogram,
            embedding: None,
            payload: None,
            state: None,
        }
    }
}

pub trait QuboBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, q: &QuboMatrix, shots: u64, seed: u64) -> Result<BackendRun>;
}

/// Exhaustive enumeration. The histogram is a rank-weighted stand-in for
/// shot counts: the `r`-th lowest-energy state (0-based) of the top `k` gets
/// `k − r` counts, so count order equals energy order.
#[derive(Clone, Debug)]
pub struct BruteForce {
    pub top_k: usize,
    pub bound: usize,
}

impl QuboBackend for BruteForce {
    fn name(&self) -> &str {
        "brute_force"
    }

    fn solve(&self, q: &QuboMatrix, _shots: u64, _seed: u64) -> Result<BackendRun> {
        let k = self.top_k.max(1);
        let res = brute_force_solve_bounded(q, k, self.bound)?;
        let ranked = res.ranked.unwrap_or_else(|| vec![(res.best, res.energy)]);
        let mut hist = ShotHistogram::empty();
        let len = ranked.len() as u64;
        for (r, (b, _)) in ranked.into_iter().enumerate() {
            hist.record(b, len - r as u64);
        }
        Ok(BackendRun::classical(hist))
    }
}

/// One annealing chain per shot; each chain reports its best visited state.
#[derive(Clone, Debug)]
pub struct Anneal {
    pub sweeps: usize,
    pub schedule: TempSchedule,
}

impl QuboBackend for Anneal {
    fn name(&self) -> &str {
        "simulated_anneal"
    }

    fn solve(&self, q: &QuboMatrix, shots: u64, seed: u64) -> Result<BackendRun> {
        use rayon::prelude::*;
        if self.sweeps == 0 || shots == 0 {
            return Err(Error::invalid("annealing needs at least one sweep and one shot"));
        }
        let states: Vec<_> = (0..shots)
            .into_par_iter()
            .map(|s| anneal_chain(q, self.sweeps, &self.schedule, seed::derive_seed(seed, &[s])).0)
            .collect();
        let mut hist = ShotHistogram::empty();
        for b in states {
            hist.record(b, 1);
        }
        Ok(BackendRun::classical(hist))
    }
}

/// Everything a remote analog device receives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevicePayload {
    pub register: Register,
    pub schedule: PulseSchedule,
}

#[derive(Clone, Debug)]
pub struct DeviceResult {
    pub histogram: ShotHistogram,
    pub state: Option<QuantumState>,
}

pub trait AnalogDevice: Send + Sync {
    fn run(&self, payload: &DevicePayload, shots: u64, seed: u64) -> Result<DeviceResult>;
}

/// Local state-vector emulator, optionally with the surrogate noise model.
#[derive(Clone, Debug, Default)]
pub struct Emulator {
    pub sim: SimConfig,
    pub noise: Option<NoiseConfig>,
}

impl AnalogDevice for Emulator {
    fn run(&self, payload: &DevicePayload, shots: u64, seed: u64) -> Result<DeviceResult> {
        let noise = self.noise.as_ref();
        if noise.is_some_and(NoiseConfig::coherent) {
            let histogram = run_shots(&payload.register, &payload.schedule, &self.sim, noise, shots, seed)?;
            return Ok(DeviceResult { histogram, state: None });
        }
        let state = evolve(&payload.register, &payload.schedule, &self.sim, noise, seed)?;
        let histogram = sample(&state, shots, noise, seed)?;
        Ok(DeviceResult {
            histogram,
            state: Some(state),
        })
    }
}

/// Embed, build the schedule, ship the payload to a device.
pub struct Analog {
    pub name: String,
    pub constraints: HardwareConstraints,
    pub embed: EmbedConfig,
    pub schedule: ScheduleParams,
    pub device: Box<dyn AnalogDevice>,
}

impl Analog {
    /// Prepares the device payload for `q` without running it.
    pub fn prepare(&self, q: &QuboMatrix, seed: u64) -> Result<(DevicePayload, EmbeddingReport)> {
        let report = embed(q, &self.constraints, &self.embed, seed::derive_seed(seed, &[seed::tag("embed")]))?;
        let schedule = build_schedule(q, &self.schedule)?;
        let payload = DevicePayload {
            register: report.register.clone(),
            schedule,
        };
        Ok((payload, report))
    }
}

impl QuboBackend for Analog {
    fn name(&self) -> &str {
        &self.name
    }

    fn solve(&self, q: &QuboMatrix, shots: u64, seed: u64) -> Result<BackendRun> {
        let (payload, report) = self.prepare(q, seed)?;
        let out = self
            .device
            .run(&payload, shots, seed::derive_seed(seed, &[seed::tag("device")]))?;
        Ok(BackendRun {
            histogram: out.histogram,
            embedding: Some(report),
            payload: Some(payload),
            state: out.state,
        })
    }
}

/// Settings shared by the built-in backend factories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub top_k: usize,
    pub enumeration_bound: usize,
    pub sweeps: usize,
    pub temperature: TempSchedule,
    pub constraints: HardwareConstraints,
    pub embed: EmbedConfig,
    pub schedule: ScheduleParams,
    pub sim: SimConfig,
    pub noise: NoiseConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            top_k: 32,
            enumeration_bound: DEFAULT_ENUMERATION_BOUND,
            sweeps: 200,
            temperature: TempSchedule::default(),
            constraints: HardwareConstraints::default(),
            embed: EmbedConfig::default(),
            schedule: ScheduleParams::default(),
            sim: SimConfig::default(),
            noise: NoiseConfig::default(),
        }
    }
}

type Factory = Box<dyn Fn(&BackendConfig) -> Result<Box<dyn QuboBackend>> + Send + Sync>;

struct Entry {
    name: String,
    aliases: Vec<String>,
    factory: Factory,
}

/// Name → backend factory.
pub struct BackendRegistry {
    entries: Vec<Entry>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = BackendRegistry::empty();
        r.register("brute_force", &["bruteforce", "oracle"], |c| {
            Ok(Box::new(BruteForce {
                top_k: c.top_k,
                bound: c.enumeration_bound,
            }))
        });
        r.register("simulated_anneal", &["anneal", "sa"], |c| {
            Ok(Box::new(Anneal {
                sweeps: c.sweeps,
                schedule: c.temperature.clone(),
            }))
        });
        r.register("analog_ideal", &["ideal"], |c| Ok(Box::new(analog("analog_ideal", c, None))));
        r.register("analog_noisy", &["noisy"], |c| {
            c.noise.check()?;
            Ok(Box::new(analog("analog_noisy", c, Some(c.noise.clone()))))
        });
        r
    }
}

fn analog(name: &str, c: &BackendConfig, noise: Option<NoiseConfig>) -> Analog {
    Analog {
        name: name.to_string(),
        constraints: c.constraints.clone(),
        embed: c.embed.clone(),
        schedule: c.schedule.clone(),
        device: Box::new(Emulator {
            sim: c.sim.clone(),
            noise,
        }),
    }
}

impl BackendRegistry {
    pub fn empty() -> Self {
        BackendRegistry { entries: Vec::new() }
    }

    /// Adds or replaces a backend.
    pub fn register(
        &mut self,
        name: &str,
        aliases: &[&str],
        factory: impl Fn(&BackendConfig) -> Result<Box<dyn QuboBackend>> + Send + Sync + 'static,
    ) {
        self.entries.retain(|e| e.name != name);
        self.entries.push(Entry {
            name: name.to_string(),
            aliases: aliases.iter().map(|s| s.to_string()).collect(),
            factory: Box::new(factory),
        });
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    /// Resolves an alias to its canonical name.
    pub fn canonical(&self, name: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|e| e.name == name || e.aliases.iter().any(|a| a == name))
            .map(|e| e.name.as_str())
            .ok_or_else(|| Error::Unknown {
                what: "backend",
                name: name.to_string(),
            })
    }

    pub fn create(&self, name: &str, cfg: &BackendConfig) -> Result<Box<dyn QuboBackend>> {
        let canon = self.canonical(name)?;
        let e = self.entries.iter().find(|e| e.name == canon).expect("canonical name exists");
        (e.factory)(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubo::{brute_force_solve, Bitstring};
    use std::sync::{Arc, Mutex};

    fn q3() -> QuboMatrix {
        QuboMatrix::from_rows(vec![vec![-1.0, 2.0, 0.0], vec![2.0, -1.0, 0.5], vec![0.0, 0.5, -0.3]]).unwrap()
    }

    #[test]
    fn registry_resolves_names_and_aliases() {
        let r = BackendRegistry::default();
        assert_eq!(r.names(), vec!["brute_force", "simulated_anneal", "analog_ideal", "analog_noisy"]);
        assert_eq!(r.canonical("sa").unwrap(), "simulated_anneal");
        assert!(matches!(r.create("qpu", &BackendConfig::default()), Err(Error::Unknown { .. })));
        let b = r.create("oracle", &BackendConfig::default()).unwrap();
        assert_eq!(b.name(), "brute_force");
    }

    #[test]
    fn brute_force_histogram_follows_energy_order() {
        let q = q3();
        let run = BruteForce { top_k: 8, bound: 24 }.solve(&q, 1000, 0).unwrap();
        let ranked = run.histogram.ranked();
        assert_eq!(ranked.len(), 8);
        assert_eq!(ranked[0].0, brute_force_solve(&q, 0).unwrap().best);
        let energies: Vec<f64> = ranked.iter().map(|(b, _)| q.energy(b).unwrap()).collect();
        assert!(energies.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn anneal_backend_finds_the_minimum() {
        let q = q3();
        let run = Anneal {
            sweeps: 100,
            schedule: TempSchedule::default(),
        }
        .solve(&q, 50, 3)
        .unwrap();
        assert_eq!(run.histogram.total_shots(), 50);
        let best = brute_force_solve(&q, 0).unwrap().best;
        assert_eq!(run.histogram.ranked()[0].0, best);
    }

    struct Recorder(Arc<Mutex<Vec<String>>>);

    impl AnalogDevice for Recorder {
        fn run(&self, payload: &DevicePayload, shots: u64, _seed: u64) -> Result<DeviceResult> {
            self.0.lock().unwrap().push(serde_json::to_string(payload)?);
            let mut h = ShotHistogram::empty();
            h.record(Bitstring::zeros(payload.register.len()), shots);
            Ok(DeviceResult { histogram: h, state: None })
        }
    }

    #[test]
    fn device_sees_register_and_schedule_only() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let backend = Analog {
            name: "recorder".into(),
            constraints: HardwareConstraints::default(),
            embed: EmbedConfig {
                restarts: 2,
                ..EmbedConfig::default()
            },
            schedule: ScheduleParams::default(),
            device: Box::new(Recorder(seen.clone())),
        };
        let run = backend.solve(&q3(), 10, 1).unwrap();
        assert_eq!(run.histogram.total_shots(), 10);
        let seen = seen.lock().unwrap();
        let v: serde_json::Value = serde_json::from_str(&seen[0]).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, vec!["register", "schedule"]);
    }

    #[test]
    fn ideal_analog_backend_runs() {
        let q = QuboMatrix::from_rows(vec![vec![-20.0, 5.0], vec![5.0, -20.0]]).unwrap();
        let b = BackendRegistry::default().create("analog_ideal", &BackendConfig::default()).unwrap();
        let run = b.solve(&q, 200, 2).unwrap();
        assert_eq!(run.histogram.total_shots(), 200);
        assert!(run.state.is_some());
        assert_eq!(run.payload.unwrap().register.len(), 2);
    }
}
