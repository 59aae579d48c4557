//! Vehicle arrivals and motion along a straight corridor crossed by one RSU
//! coverage disc.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::category::{EdcaParams, ServiceCategory};
use crate::config::SimConfig;

/// Travel direction along the corridor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Enters at position 0 and moves toward `road_length`.
    Eastbound,
    /// Enters at `road_length` and moves toward 0.
    Westbound,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Eastbound => 1.0,
            Direction::Westbound => -1.0,
        }
    }
}

/// Transmission gate phase of a vehicle's decision cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CycleState {
    /// Holding until `wt` has elapsed since `wt_start`; queues never contend.
    Waiting,
    Contending,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arrival {
    pub entry_time: f64,
    pub category: ServiceCategory,
    pub direction: Direction,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum StopPhase {
    Approaching,
    Dwelling { until: f64 },
    Done,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vehicle {
    pub id: u32,
    pub category: ServiceCategory,
    pub direction: Direction,
    pub position: f64,
    pub speed: f64,
    pub entry_time: f64,
    pub wt: f64,
    pub wt_start: f64,
    pub cycle_state: CycleState,
    pub params: EdcaParams,
    pub retired: bool,
    stop: StopPhase,
}

impl Vehicle {
    /// A vehicle at the corridor entrance of its direction, standing still.
    pub fn spawn(id: u32, arrival: &Arrival, road_length: f64, params: EdcaParams) -> Self {
        let position = match arrival.direction {
            Direction::Eastbound => 0.0,
            Direction::Westbound => road_length,
        };
        Vehicle {
            id,
            category: arrival.category,
            direction: arrival.direction,
            position,
            speed: 0.0,
            entry_time: arrival.entry_time,
            wt: 0.0,
            wt_start: arrival.entry_time,
            cycle_state: CycleState::Waiting,
            params,
            retired: false,
            stop: StopPhase::Approaching,
        }
    }

    pub fn in_coverage(&self, rsu_position: f64, radius: f64) -> bool {
        !self.retired && (self.position - rsu_position).abs() <= radius
    }
}

/// Arrivals at `k * arrival_interval` for every instant strictly before
/// `horizon`, each with a uniformly drawn category and direction.
pub fn spawn_schedule<R: Rng + ?Sized>(
    arrival_interval: f64,
    horizon: f64,
    rng: &mut R,
) -> Vec<Arrival> {
    let mut out = Vec::new();
    if arrival_interval.is_nan() || arrival_interval <= 0.0 {
        return out;
    }
    let mut k = 0u64;
    loop {
        let entry_time = k as f64 * arrival_interval;
        if entry_time >= horizon {
            break;
        }
        let category = ServiceCategory::ALL[rng.random_range(0..ServiceCategory::ALL.len())];
        let direction = if rng.random_bool(0.5) {
            Direction::Eastbound
        } else {
            Direction::Westbound
        };
        out.push(Arrival {
            entry_time,
            category,
            direction,
        });
        k += 1;
    }
    out
}

/// Advances `vehicle` by `dt` seconds ending at time `now`. Returns `true` when
/// the vehicle left the corridor during this step (it is then retired).
pub fn step_mobility(vehicle: &mut Vehicle, dt: f64, now: f64, config: &SimConfig) -> bool {
    debug_assert!(dt > 0.0);
    if vehicle.retired {
        return false;
    }
    let sign = vehicle.direction.sign();

    match (config.stop_point, vehicle.stop) {
        (Some(stop), StopPhase::Approaching) => {
            let remaining = (stop - vehicle.position) * sign;
            let braking = vehicle.speed * vehicle.speed / (2.0 * config.decel);
            if remaining <= 0.0 {
                vehicle.stop = StopPhase::Done;
                accelerate(vehicle, dt, config);
            } else if remaining <= braking + vehicle.speed * dt {
                vehicle.speed = (vehicle.speed - config.decel * dt).max(0.0);
                let advance = vehicle.speed * dt;
                if vehicle.speed == 0.0 || advance >= remaining {
                    vehicle.position = stop;
                    vehicle.speed = 0.0;
                    vehicle.stop = StopPhase::Dwelling {
                        until: now + config.stop_dwell,
                    };
                } else {
                    vehicle.position += sign * advance;
                }
            } else {
                accelerate(vehicle, dt, config);
            }
        }
        (Some(_), StopPhase::Dwelling { until }) => {
            if now >= until {
                vehicle.stop = StopPhase::Done;
                accelerate(vehicle, dt, config);
            }
        }
        _ => accelerate(vehicle, dt, config),
    }

    if vehicle.position < 0.0 || vehicle.position > config.road_length {
        vehicle.retired = true;
        return true;
    }
    false
}

fn accelerate(vehicle: &mut Vehicle, dt: f64, config: &SimConfig) {
    vehicle.speed = (vehicle.speed + config.accel * dt).min(config.max_speed);
    vehicle.position += vehicle.direction.sign() * vehicle.speed * dt;
}

#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
#[error("vehicle at {position} m is outside the coverage disc [{low}, {high}]")]
pub struct OutsideCoverage {
    pub position: f64,
    pub low: f64,
    pub high: f64,
}

/// Seconds until `vehicle` leaves the coverage disc, travelling at its current
/// speed (floored at `min_speed`).
pub fn sojourn_time(
    vehicle: &Vehicle,
    rsu_position: f64,
    coverage_radius: f64,
    min_speed: f64,
) -> Result<f64, OutsideCoverage> {
    let low = rsu_position - coverage_radius;
    let high = rsu_position + coverage_radius;
    if vehicle.retired || vehicle.position < low || vehicle.position > high {
        return Err(OutsideCoverage {
            position: vehicle.position,
            low,
            high,
        });
    }
    let distance = match vehicle.direction {
        Direction::Eastbound => high - vehicle.position,
        Direction::Westbound => vehicle.position - low,
    };
    Ok(distance / vehicle.speed.max(min_speed))
}

/// Active population: total in coverage and the per-category split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ActiveCounts {
    pub total: usize,
    pub per_category: [usize; 4],
}

impl ActiveCounts {
    pub fn of(&self, category: ServiceCategory) -> usize {
        self.per_category[category.index()]
    }
}

pub fn active_counts<'a, I>(population: I, rsu_position: f64, coverage_radius: f64) -> ActiveCounts
where
    I: IntoIterator<Item = &'a Vehicle>,
{
    let mut counts = ActiveCounts::default();
    for v in population {
        if v.in_coverage(rsu_position, coverage_radius) {
            counts.total += 1;
            counts.per_category[v.category.index()] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vehicle_at(position: f64, speed: f64, direction: Direction, category: ServiceCategory) -> Vehicle {
        let arrival = Arrival {
            entry_time: 0.0,
            category,
            direction,
        };
        let mut v = Vehicle::spawn(0, &arrival, 600.0, EdcaParams::standard(category));
        v.position = position;
        v.speed = speed;
        v
    }

    #[test]
    fn schedule_uses_fixed_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let times: Vec<f64> = spawn_schedule(0.66, 2.0, &mut rng)
            .iter()
            .map(|a| a.entry_time)
            .collect();
        assert_eq!(times.len(), 4);
        for (t, want) in times.iter().zip([0.0, 0.66, 1.32, 1.98]) {
            assert!((t - want).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_horizon_spawns_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(spawn_schedule(0.66, 0.0, &mut rng).is_empty());
    }

    #[test]
    fn schedule_is_deterministic_per_seed() {
        let a = spawn_schedule(0.66, 60.0, &mut ChaCha8Rng::seed_from_u64(11));
        let b = spawn_schedule(0.66, 60.0, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        let c = spawn_schedule(0.66, 60.0, &mut ChaCha8Rng::seed_from_u64(12));
        assert_ne!(a, c);
    }

    #[test]
    fn schedule_draws_every_category() {
        let arrivals = spawn_schedule(0.66, 250.0, &mut ChaCha8Rng::seed_from_u64(5));
        for c in ServiceCategory::ALL {
            let n = arrivals.iter().filter(|a| a.category == c).count();
            assert!(n > 60, "{c} drawn {n} times out of {}", arrivals.len());
        }
    }

    #[test]
    fn accelerates_from_rest() {
        let cfg = SimConfig::default();
        let mut v = vehicle_at(0.0, 0.0, Direction::Eastbound, ServiceCategory::Voice);
        assert!(!step_mobility(&mut v, 1.0, 1.0, &cfg));
        assert!((v.speed - 2.6).abs() < 1e-12);
        assert!((v.position - 2.6).abs() < 1e-12);
    }

    #[test]
    fn speed_clamps_at_max() {
        let cfg = SimConfig::default();
        let mut v = vehicle_at(100.0, 17.0, Direction::Westbound, ServiceCategory::Voice);
        step_mobility(&mut v, 1.0, 1.0, &cfg);
        assert_eq!(v.speed, 17.0);
        assert_eq!(v.position, 83.0);
    }

    #[test]
    fn leaving_corridor_retires() {
        let cfg = SimConfig::default();
        let mut v = vehicle_at(595.0, 17.0, Direction::Eastbound, ServiceCategory::Video);
        assert!(step_mobility(&mut v, 1.0, 1.0, &cfg));
        assert!(v.retired);
        assert!(!step_mobility(&mut v, 1.0, 2.0, &cfg));
        assert_eq!(active_counts([&v], 300.0, 1000.0).total, 0);
    }

    #[test]
    fn stop_point_brakes_dwells_and_resumes() {
        let cfg = SimConfig {
            stop_point: Some(150.0),
            stop_dwell: 2.0,
            ..SimConfig::default()
        };
        let mut v = vehicle_at(0.0, 0.0, Direction::Eastbound, ServiceCategory::Video);
        let dt = 0.1;
        let mut t = 0.0;
        let mut stopped_at = None;
        for _ in 0..600 {
            t += dt;
            step_mobility(&mut v, dt, t, &cfg);
            assert!(v.speed <= cfg.max_speed);
            if v.speed == 0.0 && stopped_at.is_none() && t > 1.0 {
                stopped_at = Some(t);
                assert_eq!(v.position, 150.0);
            }
        }
        assert!(stopped_at.is_some());
        assert!(v.position > 150.0);
    }

    #[test]
    fn sojourn_examples() {
        let v = vehicle_at(300.0, 17.0, Direction::Eastbound, ServiceCategory::HdMap);
        let s = sojourn_time(&v, 300.0, 200.0, 0.1).unwrap();
        assert!((s - 200.0 / 17.0).abs() < 1e-12);

        let v = vehicle_at(500.0, 17.0, Direction::Eastbound, ServiceCategory::HdMap);
        assert_eq!(sojourn_time(&v, 300.0, 200.0, 0.1).unwrap(), 0.0);

        let v = vehicle_at(250.0, 10.0, Direction::Westbound, ServiceCategory::HdMap);
        assert!((sojourn_time(&v, 300.0, 200.0, 0.1).unwrap() - 15.0).abs() < 1e-12);

        let v = vehicle_at(300.0, 0.0, Direction::Westbound, ServiceCategory::HdMap);
        assert!((sojourn_time(&v, 300.0, 200.0, 0.1).unwrap() - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn sojourn_outside_coverage_is_an_error() {
        let v = vehicle_at(50.0, 17.0, Direction::Eastbound, ServiceCategory::HdMap);
        assert!(sojourn_time(&v, 300.0, 200.0, 0.1).is_err());
    }

    #[test]
    fn counts_examples() {
        let vs = [
            vehicle_at(300.0, 17.0, Direction::Eastbound, ServiceCategory::Voice),
            vehicle_at(310.0, 17.0, Direction::Eastbound, ServiceCategory::Voice),
            vehicle_at(200.0, 17.0, Direction::Westbound, ServiceCategory::HdMap),
            vehicle_at(20.0, 17.0, Direction::Eastbound, ServiceCategory::BestEffort),
        ];
        let c = active_counts(&vs, 300.0, 200.0);
        assert_eq!(c.total, 3);
        assert_eq!(c.per_category, [2, 0, 1, 0]);
        assert_eq!(active_counts(&[], 300.0, 200.0), ActiveCounts::default());
    }

    proptest! {
        #[test]
        fn counts_partition_total(
            spec in proptest::collection::vec((0.0f64..600.0, 0usize..4, any::<bool>()), 0..60)
        ) {
            let vs: Vec<Vehicle> = spec
                .iter()
                .map(|&(p, c, retired)| {
                    let mut v = vehicle_at(p, 10.0, Direction::Eastbound, ServiceCategory::ALL[c]);
                    v.retired = retired;
                    v
                })
                .collect();
            let counts = active_counts(&vs, 300.0, 200.0);
            prop_assert_eq!(counts.per_category.iter().sum::<usize>(), counts.total);
            prop_assert!(counts.total <= vs.iter().filter(|v| !v.retired).count());
        }

        #[test]
        fn sojourn_shrinks_at_constant_speed(start in 100.0f64..500.0, speed in 1.0f64..17.0, dt in 0.01f64..1.0) {
            let cfg = SimConfig::default();
            let mut v = vehicle_at(start, cfg.max_speed, Direction::Eastbound, ServiceCategory::Video);
            v.speed = speed;
            let cfg = SimConfig { max_speed: speed, ..cfg };
            let mut last = sojourn_time(&v, 300.0, 200.0, 0.1).unwrap();
            let mut t = 0.0;
            loop {
                t += dt;
                step_mobility(&mut v, dt, t, &cfg);
                match sojourn_time(&v, 300.0, 200.0, 0.1) {
                    Ok(s) => { prop_assert!(s <= last + 1e-9); last = s; }
                    Err(_) => break,
                }
            }
        }
    }
}
