//! Seeded multi-drone telemetry simulation with critical-situation injection
//! and highlight/question scheduling.
//!
//! A task lasts 300 s and is cut into twenty 15 s intervals. Each interval may
//! carry one critical situation on one safety icon of one drone; the critical
//! indicator is forced past its hazard threshold for exactly that interval and
//! restored afterwards.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::IconKind;
use crate::rng;

pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Hazard thresholds: battery below, wind above.
pub const BATTERY_CRITICAL_PCT: f64 = 10.0;
pub const WIND_CRITICAL_MPS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("degenerate geographic bounds")]
    DegenerateBounds,
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("{0} is not a safety icon")]
    NotSafetyKind(IconKind),
    #[error("trace export: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace encode: {0}")]
    Json(#[from] serde_json::Error),
    #[error("event csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotor {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Free,
    NoFly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weather {
    Clear,
    Cloudy,
    Rain,
}

impl Weather {
    fn index(self) -> usize {
        self as usize
    }

    fn from_index(i: usize) -> Self {
        [Weather::Clear, Weather::Cloudy, Weather::Rain][i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for GeoBounds {
    fn default() -> Self {
        GeoBounds {
            lat_min: 47.3,
            lat_max: 47.5,
            lon_min: 8.4,
            lon_max: 8.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Route {
    pub start: (f64, f64),
    pub end: (f64, f64),
    pub bearing_deg: f64,
    pub initial_distance_m: f64,
}

/// Great-circle distance in meters between `(lat, lon)` points in degrees.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dp = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `a` to `b`, degrees in `[0, 360)`.
pub fn initial_bearing_deg(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dl = (b.1 - a.1).to_radians();
    let y = dl.sin() * p2.cos();
    let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos();
    let deg = y.atan2(x).to_degrees().rem_euclid(360.0);
    if deg >= 360.0 {
        0.0
    } else {
        deg
    }
}

pub fn route_between(start: (f64, f64), end: (f64, f64)) -> Route {
    Route {
        start,
        end,
        bearing_deg: initial_bearing_deg(start, end),
        initial_distance_m: haversine_m(start, end),
    }
}

pub fn plan_route<R: Rng + ?Sized>(rng: &mut R, bounds: &GeoBounds) -> Result<Route, SimError> {
    if !(bounds.lat_max > bounds.lat_min && bounds.lon_max > bounds.lon_min) {
        return Err(SimError::DegenerateBounds);
    }
    let mut point = || {
        (
            rng.random_range(bounds.lat_min..bounds.lat_max),
            rng.random_range(bounds.lon_min..bounds.lon_max),
        )
    };
    let start = point();
    let end = point();
    Ok(route_between(start, end))
}

/// Constants of the nominal flight dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dynamics {
    pub battery_drain_pct_per_s: f64,
    pub battery_floor_pct: f64,
    pub speed_noise_sd: f64,
    pub cruise_speed_mps: (f64, f64),
    pub initial_altitude_m: (f64, f64),
    pub initial_battery_pct: (f64, f64),
    /// Fraction of the initial distance inside which speed ramps down.
    pub slowdown_fraction: f64,
    /// Fraction of the initial distance inside which the drone descends.
    pub descend_fraction: f64,
    pub descent_rate_mps: f64,
    pub rotor_failure_sink_mps: f64,
    pub wind_nominal_max_mps: f64,
    pub wind_walk_sd: f64,
    pub weather_period_s: f64,
    pub weather_stay_prob: f64,
    pub critical_battery_pct: (f64, f64),
    pub critical_wind_mps: (f64, f64),
}

impl Default for Dynamics {
    fn default() -> Self {
        Dynamics {
            battery_drain_pct_per_s: 1.0 / 30.0,
            battery_floor_pct: 10.0,
            speed_noise_sd: 0.3,
            cruise_speed_mps: (8.0, 15.0),
            initial_altitude_m: (60.0, 120.0),
            initial_battery_pct: (60.0, 100.0),
            slowdown_fraction: 0.10,
            descend_fraction: 0.05,
            descent_rate_mps: 2.0,
            rotor_failure_sink_mps: 1.5,
            wind_nominal_max_mps: 8.0,
            wind_walk_sd: 0.2,
            weather_period_s: 30.0,
            weather_stay_prob: 0.7,
            critical_battery_pct: (3.0, 9.0),
            critical_wind_mps: (10.0, 14.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub battery_pct: f64,
    pub wind_mps: f64,
    pub rotor: Rotor,
    pub zone: Zone,
    pub h_speed_mps: f64,
    pub altitude_m: f64,
    pub distance_m: f64,
    pub weather: Weather,
    pub position: (f64, f64),
    pub cruise_speed_mps: f64,
    /// Seconds since the start of the flight; drives weather changes.
    pub clock_s: f64,
    /// Critical situation currently forced on this drone.
    pub critical: Option<IconKind>,
    /// Indicator value saved at injection, restored when the situation ends.
    pub saved_value: f64,
}

impl DroneState {
    pub fn initial<R: Rng + ?Sized>(route: &Route, dynamics: &Dynamics, rng: &mut R) -> Self {
        let cruise = rng.random_range(dynamics.cruise_speed_mps.0..=dynamics.cruise_speed_mps.1);
        DroneState {
            battery_pct: rng
                .random_range(dynamics.initial_battery_pct.0..=dynamics.initial_battery_pct.1),
            wind_mps: rng.random_range(0.0..=dynamics.wind_nominal_max_mps),
            rotor: Rotor::On,
            zone: Zone::Free,
            h_speed_mps: cruise,
            altitude_m: rng
                .random_range(dynamics.initial_altitude_m.0..=dynamics.initial_altitude_m.1),
            distance_m: route.initial_distance_m,
            weather: Weather::from_index(rng.random_range(0..3)),
            position: route.start,
            cruise_speed_mps: cruise,
            clock_s: 0.0,
            critical: None,
            saved_value: 0.0,
        }
    }

    pub fn reading(&self) -> DroneReading {
        DroneReading {
            battery: self.battery_pct,
            wind: self.wind_mps,
            rotor: self.rotor,
            zone: self.zone,
            h_speed: self.h_speed_mps,
            alt: self.altitude_m,
            dist: self.distance_m,
            weather: self.weather,
        }
    }
}

/// The eight displayed indicator values of one drone in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneReading {
    pub battery: f64,
    pub wind: f64,
    pub rotor: Rotor,
    pub zone: Zone,
    pub h_speed: f64,
    pub alt: f64,
    pub dist: f64,
    pub weather: Weather,
}

impl DroneReading {
    /// Indicator value of `kind` min-max scaled over its display range.
    /// Ranges: battery 0–100 %, wind 0–15 m/s, speed 0–20 m/s, altitude
    /// 0–150 m, distance 0–30 km; rotor on = 1, zone no-fly = 1, weather
    /// clear/cloudy/rain = 0/0.5/1.
    pub fn normalized(&self, kind: IconKind) -> f64 {
        let v = match kind {
            IconKind::Battery => self.battery / 100.0,
            IconKind::Wind => self.wind / 15.0,
            IconKind::Rotor => f64::from(self.rotor == Rotor::On),
            IconKind::Zone => f64::from(self.zone == Zone::NoFly),
            IconKind::HSpeed => self.h_speed / 20.0,
            IconKind::Altitude => self.alt / 150.0,
            IconKind::Distance => self.dist / 30_000.0,
            IconKind::Weather => self.weather.index() as f64 / 2.0,
        };
        v.clamp(0.0, 1.0)
    }

    /// Whether the indicator of `kind` is past its hazard threshold.
    pub fn violates(&self, kind: IconKind) -> bool {
        match kind {
            IconKind::Battery => self.battery < BATTERY_CRITICAL_PCT,
            IconKind::Wind => self.wind > WIND_CRITICAL_MPS,
            IconKind::Rotor => self.rotor == Rotor::Off,
            IconKind::Zone => self.zone == Zone::NoFly,
            _ => false,
        }
    }
}

/// Advances one drone by `dt_s` seconds.
pub fn step_state<R: Rng + ?Sized>(
    state: &DroneState,
    route: &Route,
    dt_s: f64,
    dynamics: &Dynamics,
    rng: &mut R,
) -> DroneState {
    if dt_s <= 0.0 {
        return state.clone();
    }
    let mut s = state.clone();
    // Draw every random number up front so the stream position does not
    // depend on which branch is taken.
    let speed_noise = Normal::new(0.0, dynamics.speed_noise_sd.max(1e-12))
        .expect("finite sd")
        .sample(rng);
    let wind_noise = Normal::new(0.0, dynamics.wind_walk_sd.max(1e-12) * dt_s.sqrt())
        .expect("finite sd")
        .sample(rng);
    let weather_u: f64 = rng.random();

    let drain = dynamics.battery_drain_pct_per_s * dt_s;
    if s.critical == Some(IconKind::Battery) {
        s.battery_pct = (s.battery_pct - drain).max(0.0);
        s.saved_value = (s.saved_value - drain).max(dynamics.battery_floor_pct);
    } else if s.battery_pct > dynamics.battery_floor_pct {
        s.battery_pct = (s.battery_pct - drain).max(dynamics.battery_floor_pct);
    }

    let initial = route.initial_distance_m;
    let target = if s.distance_m <= 0.0 || initial <= 0.0 {
        0.0
    } else if s.distance_m < dynamics.slowdown_fraction * initial {
        s.cruise_speed_mps * s.distance_m / (dynamics.slowdown_fraction * initial)
    } else {
        s.cruise_speed_mps
    };
    s.h_speed_mps = if target > 0.0 {
        (target + speed_noise).max(0.0)
    } else {
        0.0
    };
    s.distance_m = (s.distance_m - s.h_speed_mps * dt_s).max(0.0);
    if initial > 0.0 {
        let f = 1.0 - s.distance_m / initial;
        s.position = (
            route.start.0 + f * (route.end.0 - route.start.0),
            route.start.1 + f * (route.end.1 - route.start.1),
        );
    }

    if s.rotor == Rotor::Off {
        s.altitude_m = (s.altitude_m - dynamics.rotor_failure_sink_mps * dt_s).max(0.0);
    } else if initial > 0.0 && s.distance_m < dynamics.descend_fraction * initial {
        s.altitude_m = (s.altitude_m - dynamics.descent_rate_mps * dt_s).max(0.0);
    }

    if s.critical != Some(IconKind::Wind) {
        s.wind_mps = (s.wind_mps + wind_noise).clamp(0.0, dynamics.wind_nominal_max_mps);
    }

    let before = (s.clock_s / dynamics.weather_period_s).floor();
    s.clock_s += dt_s;
    if (s.clock_s / dynamics.weather_period_s).floor() > before {
        s.weather = weather_transition(s.weather, weather_u, dynamics.weather_stay_prob);
    }
    s
}

fn weather_transition(w: Weather, u: f64, stay: f64) -> Weather {
    if u < stay {
        return w;
    }
    let other = if u < stay + (1.0 - stay) / 2.0 { 1 } else { 2 };
    Weather::from_index((w.index() + other) % 3)
}

/// Forces the indicator of `kind` past its hazard threshold.
pub fn inject_critical<R: Rng + ?Sized>(
    state: &DroneState,
    kind: IconKind,
    dynamics: &Dynamics,
    rng: &mut R,
) -> Result<DroneState, SimError> {
    if !kind.is_safety() {
        return Err(SimError::NotSafetyKind(kind));
    }
    let mut s = clear_critical(state);
    let u: f64 = rng.random();
    s.critical = Some(kind);
    match kind {
        IconKind::Battery => {
            s.saved_value = s.battery_pct;
            let (lo, hi) = dynamics.critical_battery_pct;
            s.battery_pct = lo + u * (hi - lo);
        }
        IconKind::Wind => {
            s.saved_value = s.wind_mps;
            // (lo, hi]: 1 - u lies in (0, 1].
            let (lo, hi) = dynamics.critical_wind_mps;
            s.wind_mps = lo + (1.0 - u) * (hi - lo);
        }
        IconKind::Rotor => s.rotor = Rotor::Off,
        IconKind::Zone => s.zone = Zone::NoFly,
        _ => unreachable!(),
    }
    Ok(s)
}

/// Ends any critical situation and restores the nominal indicator.
pub fn clear_critical(state: &DroneState) -> DroneState {
    let mut s = state.clone();
    match s.critical.take() {
        Some(IconKind::Battery) => s.battery_pct = s.saved_value,
        Some(IconKind::Wind) => s.wind_mps = s.saved_value,
        Some(IconKind::Rotor) => s.rotor = Rotor::On,
        Some(IconKind::Zone) => s.zone = Zone::Free,
        _ => {}
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub n_intervals: usize,
    pub interval_s: f64,
    pub p_critical: f64,
    pub p_highlight: f64,
    pub n_drones: usize,
    pub first_question_s: (f64, f64),
    pub question_gap_s: (f64, f64),
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            n_intervals: 20,
            interval_s: 15.0,
            p_critical: 0.8,
            p_highlight: 0.5,
            n_drones: 4,
            first_question_s: (30.0, 60.0),
            question_gap_s: (30.0, 60.0),
        }
    }
}

impl PlanConfig {
    pub fn task_duration_s(&self) -> f64 {
        self.n_intervals as f64 * self.interval_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub index: usize,
    pub is_critical: bool,
    pub kind: IconKind,
    pub drone_index: usize,
    pub highlighted: bool,
    pub onset_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalPlan {
    pub intervals: Vec<IntervalRecord>,
    pub question_times_s: Vec<f64>,
}

pub fn schedule_intervals<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &PlanConfig,
) -> Result<IntervalPlan, SimError> {
    for p in [cfg.p_critical, cfg.p_highlight] {
        if !(0.0..=1.0).contains(&p) {
            return Err(SimError::InvalidProbability(p));
        }
    }
    if cfg.n_drones == 0 {
        return Err(SimError::InvalidConfig("no drones".into()));
    }
    let safety = [
        IconKind::Battery,
        IconKind::Wind,
        IconKind::Rotor,
        IconKind::Zone,
    ];
    let intervals = (0..cfg.n_intervals)
        .map(|index| {
            let u_crit: f64 = rng.random();
            let kind = safety[rng.random_range(0..4)];
            let drone_index = rng.random_range(0..cfg.n_drones);
            let u_hl: f64 = rng.random();
            let is_critical = u_crit < cfg.p_critical;
            IntervalRecord {
                index,
                is_critical,
                kind,
                drone_index,
                highlighted: is_critical && u_hl < cfg.p_highlight,
                onset_s: index as f64 * cfg.interval_s,
            }
        })
        .collect();
    let duration = cfg.task_duration_s();
    let mut question_times_s = Vec::new();
    let mut t = rng.random_range(cfg.first_question_s.0..=cfg.first_question_s.1);
    while t < duration {
        question_times_s.push(t);
        t += rng.random_range(cfg.question_gap_s.0..=cfg.question_gap_s.1);
    }
    Ok(IntervalPlan {
        intervals,
        question_times_s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub frame_rate_hz: u32,
    pub bounds: GeoBounds,
    pub dynamics: Dynamics,
    pub plan: PlanConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            frame_rate_hz: 24,
            bounds: GeoBounds::default(),
            dynamics: Dynamics::default(),
            plan: PlanConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn desk_default() -> Self {
        Self::default()
    }

    pub fn n_frames(&self) -> usize {
        (self.plan.task_duration_s() * self.frame_rate_hz as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalFlag {
    pub drone: usize,
    pub kind: IconKind,
    pub highlighted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub task_id: u32,
    pub interval: usize,
    pub frame: usize,
    pub t_ms: f64,
    pub drones: Vec<DroneReading>,
    pub critical: Option<CriticalFlag>,
    pub question: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub task_id: u32,
    pub onset_ms: f64,
    pub kind: IconKind,
    pub drone: usize,
    pub highlighted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTrace {
    pub task_id: u32,
    pub frame_rate_hz: u32,
    pub interval_s: f64,
    pub frames: Vec<FrameRecord>,
    pub plan: IntervalPlan,
    pub events: Vec<Event>,
}

impl ScenarioTrace {
    pub fn duration_ms(&self) -> f64 {
        self.frames.len() as f64 * 1000.0 / self.frame_rate_hz as f64
    }

    /// Frame shown at `t_ms` (clamped to the trace).
    pub fn frame_at_ms(&self, t_ms: f64) -> &FrameRecord {
        let f = (t_ms.max(0.0) * self.frame_rate_hz as f64 / 1000.0).floor() as usize;
        &self.frames[f.min(self.frames.len() - 1)]
    }

    /// Interval record active at `t_ms`.
    pub fn interval_at_ms(&self, t_ms: f64) -> Option<&IntervalRecord> {
        if t_ms < 0.0 {
            return None;
        }
        let i = (t_ms / 1000.0 / self.interval_s).floor() as usize;
        self.plan.intervals.get(i)
    }

    /// Critical interval records in time order.
    pub fn critical_intervals(&self) -> impl Iterator<Item = &IntervalRecord> {
        self.plan.intervals.iter().filter(|r| r.is_critical)
    }
}

/// Simulates one task. Streams: plan on label `(seed, task, 0)`, drone `d`
/// on `(seed, task, 1 + d)`, critical values on `(seed, task, 99)`.
pub fn simulate_task(cfg: &SimConfig, task_id: u32, seed: u64) -> Result<ScenarioTrace, SimError> {
    if cfg.frame_rate_hz == 0 {
        return Err(SimError::InvalidConfig("frame rate must be positive".into()));
    }
    let mut plan_rng = rng::stream(seed, rng::label(&[task_id as u64, 0]));
    let plan = schedule_intervals(&mut plan_rng, &cfg.plan)?;
    let n_drones = cfg.plan.n_drones;
    let mut drone_rngs: Vec<ChaCha8Rng> = (0..n_drones)
        .map(|d| rng::stream(seed, rng::label(&[task_id as u64, 1 + d as u64])))
        .collect();
    let mut crit_rng = rng::stream(seed, rng::label(&[task_id as u64, 99]));

    let mut routes = Vec::with_capacity(n_drones);
    let mut states = Vec::with_capacity(n_drones);
    for r in drone_rngs.iter_mut() {
        let route = plan_route(r, &cfg.bounds)?;
        states.push(DroneState::initial(&route, &cfg.dynamics, r));
        routes.push(route);
    }

    let n_frames = cfg.n_frames();
    let dt = 1.0 / cfg.frame_rate_hz as f64;
    let frame_ms = 1000.0 / cfg.frame_rate_hz as f64;
    let mut frames = Vec::with_capacity(n_frames);
    let mut current: Option<usize> = None;
    let mut questions = plan.question_times_s.iter().map(|q| q * 1000.0).peekable();

    for f in 0..n_frames {
        let t_ms = f as f64 * frame_ms;
        let interval = ((t_ms / 1000.0) / cfg.plan.interval_s).floor() as usize;
        let interval = interval.min(cfg.plan.n_intervals.saturating_sub(1));
        if current != Some(interval) {
            for s in states.iter_mut() {
                *s = clear_critical(s);
            }
            let rec = &plan.intervals[interval];
            if rec.is_critical {
                let d = rec.drone_index;
                states[d] = inject_critical(&states[d], rec.kind, &cfg.dynamics, &mut crit_rng)?;
            }
            current = Some(interval);
        }
        let rec = &plan.intervals[interval];
        let mut question = false;
        while let Some(&q) = questions.peek() {
            if q < t_ms + frame_ms {
                question |= q >= t_ms;
                questions.next();
            } else {
                break;
            }
        }
        frames.push(FrameRecord {
            task_id,
            interval,
            frame: f,
            t_ms,
            drones: states.iter().map(DroneState::reading).collect(),
            critical: rec.is_critical.then_some(CriticalFlag {
                drone: rec.drone_index,
                kind: rec.kind,
                highlighted: rec.highlighted,
            }),
            question,
        });
        for d in 0..n_drones {
            states[d] = step_state(&states[d], &routes[d], dt, &cfg.dynamics, &mut drone_rngs[d]);
        }
    }

    let events = plan
        .intervals
        .iter()
        .filter(|r| r.is_critical)
        .map(|r| Event {
            task_id,
            onset_ms: r.onset_s * 1000.0,
            kind: r.kind,
            drone: r.drone_index,
            highlighted: r.highlighted,
        })
        .collect();

    Ok(ScenarioTrace {
        task_id,
        frame_rate_hz: cfg.frame_rate_hz,
        interval_s: cfg.plan.interval_s,
        frames,
        plan,
        events,
    })
}

/// One JSON record per frame.
pub fn write_trace_jsonl<W: Write>(trace: &ScenarioTrace, mut out: W) -> Result<(), SimError> {
    for f in &trace.frames {
        serde_json::to_writer(&mut out, f)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace_jsonl(text: &str) -> Result<Vec<FrameRecord>, SimError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(SimError::from))
        .collect()
}

pub fn write_events_csv<W: Write>(trace: &ScenarioTrace, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    for e in &trace.events {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}
