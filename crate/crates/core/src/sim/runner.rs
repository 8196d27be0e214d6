//! The 20 Hz closed loop: scan, perception, NMPC solve, zero-order hold.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::log::{LogRecord, RunLog};
use super::scenario::{Scenario, ScenarioEvent};
use super::vehicle::{Plant, SimVehicle};
use super::world::raycast;
use super::SimError;
use crate::config::Config;
use crate::nmpc::{ControlStep, NmpcContext, NmpcController};
use crate::perception::{sector_distances, Beam, HeadingGenerator, LidarScan};
use crate::state::{MeasurementError, ObstacleDistances, ReferenceCommand, StateEstimate};

/// Operator commands accepted between ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SimCommand {
    SetReference { z_r: f64, vx_r: f64, vy_r: f64 },
    Return,
}

/// Everything produced by one tick.
#[derive(Debug, Clone)]
pub struct TickRecord {
    pub tick: u64,
    pub log: LogRecord,
    pub reference: ReferenceCommand,
    pub scan: LidarScan,
    /// Distances fed to the controller (noisy).
    pub measured: ObstacleDistances,
    /// Controller context as it was handed to the solver.
    pub context: NmpcContext,
    pub control: ControlStep,
}

fn gaussian(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated >= 0")
}

pub struct ClosedLoop {
    scenario: Scenario,
    config: Config,
    seed: u64,
    controller: NmpcController,
    heading: HeadingGenerator,
    vehicle: SimVehicle,
    reference: ReferenceCommand,
    rng: ChaCha8Rng,
    tick: u64,
    total_ticks: u64,
    next_schedule: usize,
    next_event: usize,
}

impl ClosedLoop {
    pub fn new(scenario: Scenario, config: &Config, seed: u64) -> Result<Self, SimError> {
        scenario.validate()?;
        config.validate().map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        let first = scenario.schedule[0];
        let reference = ReferenceCommand::new(first.z_r, first.vx_r, first.vy_r, 0.0, config.nmpc.v_ref_max)?;
        let mut ctx = NmpcContext::new(config.nmpc.clone(), config.model.clone(), reference);
        ctx.estimate.z = scenario.altitude;
        let mut vehicle = SimVehicle::hover_at(scenario.world.spawn, scenario.altitude);
        let plant = Plant {
            world: &scenario.world,
            model: config.model.clone(),
            sim: config.sim.clone(),
        };
        let d = plant.true_distances(&vehicle.pose, scenario.altitude)?;
        vehicle.state = crate::state::MavState::new(scenario.altitude, [0.0; 3], 0.0, 0.0, d)?;
        let total_ticks = (scenario.duration / config.nmpc.ts + 1e-9).floor() as u64;
        Ok(Self {
            controller: NmpcController::new(ctx, &config.solver),
            heading: HeadingGenerator::new(&config.heading),
            vehicle,
            reference,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tick: 0,
            total_ticks,
            next_schedule: 1,
            next_event: 0,
            seed,
            config: config.clone(),
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vehicle(&self) -> &SimVehicle {
        &self.vehicle
    }

    pub fn reference(&self) -> ReferenceCommand {
        self.reference
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn total_ticks(&self) -> u64 {
        self.total_ticks
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.nmpc.ts
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.total_ticks
    }

    /// Applies an operator command; it is seen by the next tick.
    pub fn command(&mut self, cmd: SimCommand) -> Result<(), MeasurementError> {
        let t = self.time();
        self.reference = match cmd {
            SimCommand::SetReference { z_r, vx_r, vy_r } => {
                ReferenceCommand::new(z_r, vx_r, vy_r, t, self.config.nmpc.v_ref_max)?
            }
            SimCommand::Return => self.reference.reversed(t),
        };
        Ok(())
    }

    fn apply_schedule(&mut self) -> Result<(), MeasurementError> {
        let t = self.time() + 1e-9;
        while let Some(s) = self.scenario.schedule.get(self.next_schedule).copied() {
            if s.t > t {
                break;
            }
            self.command(SimCommand::SetReference {
                z_r: s.z_r,
                vx_r: s.vx_r,
                vy_r: s.vy_r,
            })?;
            self.next_schedule += 1;
        }
        while let Some(e) = self.scenario.events.get(self.next_event).copied() {
            if e.time() > t {
                break;
            }
            match e {
                ScenarioEvent::Return { .. } => self.command(SimCommand::Return)?,
            }
            self.next_event += 1;
        }
        Ok(())
    }

    fn noisy_scan(&mut self, clean: &LidarScan) -> LidarScan {
        let noise = self.scenario.noise;
        let range_n = gaussian(noise.range);
        let max = clean.max_range();
        let beams = clean
            .beams()
            .iter()
            .map(|b| {
                let dropped = noise.dropout > 0.0 && self.rng.random::<f64>() < noise.dropout;
                let range = match b.range {
                    Some(r) if !dropped => {
                        let r = r + range_n.sample(&mut self.rng);
                        (r <= max).then_some(r.max(1e-3))
                    }
                    _ => None,
                };
                Beam { range, angle: b.angle }
            })
            .collect();
        LidarScan::new(beams, max).expect("noise keeps the scan well-formed")
    }

    /// Runs one control period.
    pub fn step(&mut self) -> Result<TickRecord, SimError> {
        self.apply_schedule()?;
        let ts = self.config.nmpc.ts;
        let t = self.time();
        let v = self.vehicle;

        let clean = raycast(&self.scenario.world, &v.pose, self.config.sim.n_beams, self.config.sim.max_range)?;
        let scan = self.noisy_scan(&clean);
        let noise = self.scenario.noise;
        let ceiling = self.scenario.world.ceiling_height - v.state.z() + gaussian(noise.range).sample(&mut self.rng);
        let measured = sector_distances(&scan, ceiling.max(1e-3));
        let gyro = v.yaw_rate + gaussian(noise.gyro).sample(&mut self.rng);
        let psi_dot_r = self.heading.update(&scan, gyro, self.reference.vx_r() < 0.0, ts);

        let vel_n = gaussian(noise.velocity);
        let [vx, vy, vz] = v.state.velocity();
        let estimate = StateEstimate {
            z: v.state.z() + gaussian(noise.range).sample(&mut self.rng),
            vx: vx + vel_n.sample(&mut self.rng),
            vy: vy + vel_n.sample(&mut self.rng),
            vz: vz + vel_n.sample(&mut self.rng),
            phi: v.state.phi(),
            theta: v.state.theta(),
        };
        self.controller.set_reference(self.reference);
        self.controller.set_measurements(estimate, measured);
        let context = self.controller.context().clone();
        let control = self.controller.step()?;

        let d = v.state.distances();
        let log = LogRecord {
            t,
            x: v.pose.x,
            y: v.pose.y,
            yaw: v.pose.yaw,
            z: v.state.z(),
            vx,
            vy,
            vz,
            phi: v.state.phi(),
            theta: v.state.theta(),
            d_xp: d[0],
            d_xm: d[1],
            d_yp: d[2],
            d_ym: d[3],
            d_zp: d[4],
            psi_dot_r,
            solve_ms: Some(control.solution.solve_time * 1e3),
            status: control.solution.status,
            collision: v.collision,
        };
        let plant = Plant {
            world: &self.scenario.world,
            model: self.config.model.clone(),
            sim: self.config.sim.clone(),
        };
        self.vehicle = plant.step(&v, &control.input, psi_dot_r, ts)?;
        let record = TickRecord {
            tick: self.tick,
            log,
            reference: self.reference,
            scan,
            measured,
            context,
            control,
        };
        self.tick += 1;
        Ok(record)
    }

    /// Steps paced to wall-clock time, calling `between` before each tick so a
    /// caller can inject commands. Stops when the scenario ends or `between`
    /// returns false.
    pub fn run_realtime<F>(&mut self, mut between: F) -> Result<(), SimError>
    where
        F: FnMut(&mut Self) -> bool,
    {
        let period = Duration::from_secs_f64(self.config.nmpc.ts);
        let mut deadline = Instant::now();
        while !self.is_finished() && between(self) {
            self.step()?;
            deadline += period;
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            } else {
                deadline = now;
            }
        }
        Ok(())
    }
}

/// Runs a scenario in batch mode with operator commands applied before the
/// given tick indices.
pub fn run_with_commands(
    scenario: &Scenario,
    config: &Config,
    seed: u64,
    commands: &[(u64, SimCommand)],
) -> Result<RunLog, SimFault> {
    let mut log = RunLog::new(&scenario.name, seed, config.param_hash(), scenario.duration);
    let mut sim = match ClosedLoop::new(scenario.clone(), config, seed) {
        Ok(sim) => sim,
        Err(error) => return Err(SimFault { log, error }),
    };
    let mut pending = commands.iter().peekable();
    while !sim.is_finished() {
        while let Some((_, cmd)) = pending.next_if(|(k, _)| *k <= sim.tick()) {
            if let Err(e) = sim.command(*cmd) {
                return Err(SimFault { log, error: e.into() });
            }
        }
        match sim.step() {
            Ok(r) => log.records.push(r.log),
            Err(error) => {
                log.fault = Some(error.to_string());
                return Err(SimFault { log, error });
            }
        }
    }
    Ok(log)
}

/// Runs a scenario start to finish in batch mode.
pub fn run_scenario(scenario: &Scenario, config: &Config, seed: u64) -> Result<RunLog, SimFault> {
    run_with_commands(scenario, config, seed, &[])
}

/// A run that aborted; `log` holds the ticks completed before the fault.
#[derive(Debug, thiserror::Error)]
#[error("simulation fault after {} ticks: {error}", log.records.len())]
pub struct SimFault {
    pub log: RunLog,
    #[source]
    pub error: SimError,
}
