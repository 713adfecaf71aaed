//! Two-server drive-in ("Able and Baker" carhops) discrete-event simulation.
//!
//! Customers arrive one at a time with exponential interarrival gaps. An
//! arriving customer goes to Able if Able is idle, otherwise to Baker if
//! Baker is idle, otherwise joins a single FCFS queue that is served by
//! whichever carhop frees up first (Able on ties). Service times are
//! triangular. A replication starts empty and ends when the last of a fixed
//! number of customers departs.
//!
//! Arrivals are either clustered (blocks of customers with alternating mean
//! gaps) or pooled (one exponential with the pooled mean), which is the
//! comparison of interest: pooling a clustered arrival stream understates
//! congestion.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{exponential, open_unit, stream_rng};

const ARRIVAL_STREAM: u64 = 0x4152_5256;
const SERVICE_STREAM: u64 = 0x5356_4345;
const POOL_STREAM: u64 = 0x504F_4F4C;

pub const ABLE: usize = 0;
pub const BAKER: usize = 1;
const SERVER_NAMES: [&str; 2] = ["able", "baker"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangular {
    pub min: f64,
    pub mode: f64,
    pub max: f64,
}

impl Triangular {
    pub fn new(min: f64, mode: f64, max: f64) -> Result<Self> {
        let t = Self { min, mode, max };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.mode.is_finite() && self.max.is_finite())
            || !(self.min <= self.mode && self.mode <= self.max)
        {
            return Err(Error::validation(format!(
                "triangular parameters must satisfy min <= mode <= max, got ({}, {}, {})",
                self.min, self.mode, self.max
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        (self.min + self.mode + self.max) / 3.0
    }

    /// Inverse CDF at `u`.
    pub fn quantile(&self, u: f64) -> f64 {
        let (a, c, b) = (self.min, self.mode, self.max);
        let width = b - a;
        if width == 0.0 {
            return a;
        }
        let fc = (c - a) / width;
        if u < fc {
            a + (u * width * (c - a)).sqrt()
        } else {
            b - ((1.0 - u) * width * (b - c)).sqrt()
        }
    }
}

/// Triangular variate by inversion of the uniform `u` in (0, 1).
pub fn sample_triangular(min: f64, mode: f64, max: f64, u: f64) -> Result<f64> {
    let t = Triangular::new(min, mode, max)?;
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::validation(format!("u must lie in (0, 1), got {u}")));
    }
    Ok(t.quantile(u))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalMode {
    /// Consecutive blocks of `block_len` customers with the given mean gaps.
    Clustered {
        block_means: Vec<f64>,
        block_len: usize,
    },
    /// A single exponential with this mean gap.
    Pooled { mean: f64 },
    /// Pool a clustered realization drawn from the study seed.
    PooledFromSeed {
        block_means: Vec<f64>,
        block_len: usize,
    },
}

impl ArrivalMode {
    pub fn case_one() -> Self {
        ArrivalMode::Clustered {
            block_means: vec![1.0, 6.0, 1.0, 6.0],
            block_len: 50,
        }
    }

    pub fn case_two() -> Self {
        ArrivalMode::Pooled { mean: 3.329 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarhopConfig {
    pub mode: ArrivalMode,
    pub customers_per_rep: usize,
    pub replications: usize,
    pub able_service: Triangular,
    pub baker_service: Triangular,
    pub seed: u64,
}

impl CarhopConfig {
    pub fn new(mode: ArrivalMode, seed: u64) -> Self {
        Self {
            mode,
            customers_per_rep: 200,
            replications: 100,
            able_service: Triangular {
                min: 5.0,
                mode: 6.0,
                max: 10.0,
            },
            baker_service: Triangular {
                min: 6.0,
                mode: 7.0,
                max: 11.0,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.customers_per_rep == 0 {
            return Err(Error::validation("customers_per_rep must be at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::validation("replications must be at least 1"));
        }
        self.able_service.validate()?;
        self.baker_service.validate()?;
        match &self.mode {
            ArrivalMode::Clustered {
                block_means,
                block_len,
            }
            | ArrivalMode::PooledFromSeed {
                block_means,
                block_len,
            } => {
                if block_means.is_empty() || *block_len == 0 {
                    return Err(Error::validation("clustered arrivals need blocks"));
                }
                if block_means.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                    return Err(Error::validation("block means must be positive"));
                }
            }
            ArrivalMode::Pooled { mean } => {
                if !(mean.is_finite() && *mean > 0.0) {
                    return Err(Error::validation(format!(
                        "pooled mean must be positive, got {mean}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn service(&self, server: usize) -> &Triangular {
        if server == ABLE {
            &self.able_service
        } else {
            &self.baker_service
        }
    }
}

/// Mean gap of one clustered realization, used by [`ArrivalMode::PooledFromSeed`].
pub fn pooled_mean_from_seed(
    block_means: &[f64],
    block_len: usize,
    customers: usize,
    seed: u64,
) -> f64 {
    let mut rng = stream_rng(seed, &[POOL_STREAM]);
    let gaps: Vec<f64> = (0..customers)
        .map(|i| exponential(&mut rng, block_means[(i / block_len) % block_means.len()]))
        .collect();
    gaps.iter().sum::<f64>() / customers as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepMetrics {
    pub able_busy_fraction: f64,
    pub baker_busy_fraction: f64,
    /// Fraction of the run with both carhops busy at once.
    pub both_busy_fraction: f64,
    pub time_avg_in_system: f64,
    pub max_in_system: usize,
    pub able_served: usize,
    pub baker_served: usize,
    pub end_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    ServiceStart,
    Departure,
}

/// One row of the per-event audit trail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub time: f64,
    pub event: EventKind,
    pub customer: usize,
    pub server: Option<usize>,
    pub queue_len: usize,
    pub in_system: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pending {
    // departures sort before arrivals at equal times, then by server
    Departure { server: usize, customer: usize },
    Arrival { customer: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    what: Pending,
}

impl Event {
    fn rank(&self) -> (u8, usize) {
        match self.what {
            Pending::Departure { server, .. } => (0, server),
            Pending::Arrival { customer } => (1, customer),
        }
    }
}

impl Eq for Event {}

impl Ord for Event {
    // BinaryHeap is a max-heap: invert so the earliest event pops first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.rank().cmp(&self.rank()))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn interarrival_means(config: &CarhopConfig, pooled_override: Option<f64>) -> Vec<f64> {
    let n = config.customers_per_rep;
    match (&config.mode, pooled_override) {
        (_, Some(mean)) | (&ArrivalMode::Pooled { mean }, None) => vec![mean; n],
        (
            ArrivalMode::Clustered {
                block_means,
                block_len,
            },
            None,
        )
        | (
            ArrivalMode::PooledFromSeed {
                block_means,
                block_len,
            },
            None,
        ) => (0..n)
            .map(|i| block_means[(i / block_len) % block_means.len()])
            .collect(),
    }
}

fn resolved_pooled_mean(config: &CarhopConfig) -> Option<f64> {
    match &config.mode {
        ArrivalMode::PooledFromSeed {
            block_means,
            block_len,
        } => Some(pooled_mean_from_seed(
            block_means,
            *block_len,
            config.customers_per_rep,
            config.seed,
        )),
        _ => None,
    }
}

/// Simulate replication `rep_index` (0-based).
pub fn run_replication(config: &CarhopConfig, rep_index: usize) -> Result<RepMetrics> {
    config.validate()?;
    let pooled = resolved_pooled_mean(config);
    Ok(simulate(config, rep_index, pooled, None))
}

/// Like [`run_replication`], also returning the per-event audit trail.
pub fn run_replication_audited(
    config: &CarhopConfig,
    rep_index: usize,
) -> Result<(RepMetrics, Vec<AuditRecord>)> {
    config.validate()?;
    let pooled = resolved_pooled_mean(config);
    let mut audit = Vec::new();
    let metrics = simulate(config, rep_index, pooled, Some(&mut audit));
    Ok((metrics, audit))
}

struct Servers<'a> {
    config: &'a CarhopConfig,
    service_u: Vec<f64>,
    busy: [Option<usize>; 2],
    busy_since: [f64; 2],
    busy_time: [f64; 2],
    served: [usize; 2],
}

impl Servers<'_> {
    fn start(&mut self, server: usize, customer: usize, now: f64, fel: &mut BinaryHeap<Event>) {
        self.busy[server] = Some(customer);
        self.busy_since[server] = now;
        let dur = self
            .config
            .service(server)
            .quantile(self.service_u[customer]);
        fel.push(Event {
            time: now + dur,
            what: Pending::Departure { server, customer },
        });
    }

    fn finish(&mut self, server: usize, now: f64) {
        self.busy[server] = None;
        self.busy_time[server] += now - self.busy_since[server];
        self.served[server] += 1;
    }

    fn first_idle(&self) -> Option<usize> {
        [ABLE, BAKER].into_iter().find(|&s| self.busy[s].is_none())
    }
}

fn simulate(
    config: &CarhopConfig,
    rep_index: usize,
    pooled: Option<f64>,
    mut audit: Option<&mut Vec<AuditRecord>>,
) -> RepMetrics {
    let n = config.customers_per_rep;
    let means = interarrival_means(config, pooled);
    let mut arr_rng = stream_rng(config.seed, &[ARRIVAL_STREAM, rep_index as u64]);
    let mut svc_rng = stream_rng(config.seed, &[SERVICE_STREAM, rep_index as u64]);
    // one uniform per customer, mapped through whichever carhop serves them
    let service_u: Vec<f64> = (0..n).map(|_| open_unit(&mut svc_rng)).collect();
    let mut servers = Servers {
        config,
        service_u,
        busy: [None, None],
        busy_since: [0.0; 2],
        busy_time: [0.0; 2],
        served: [0; 2],
    };

    let mut fel = BinaryHeap::new();
    let mut next_arrival = exponential(&mut arr_rng, means[0]);
    fel.push(Event {
        time: next_arrival,
        what: Pending::Arrival { customer: 0 },
    });

    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut in_system = 0usize;
    let mut max_in_system = 0usize;
    let mut area = 0.0;
    let mut both_busy_time = 0.0;
    let mut clock = 0.0;

    let mut log = |time: f64, event, customer: usize, server, queue_len, in_system| {
        if let Some(a) = audit.as_deref_mut() {
            a.push(AuditRecord {
                time,
                event,
                customer: customer + 1,
                server,
                queue_len,
                in_system,
            });
        }
    };

    while let Some(ev) = fel.pop() {
        let dt = ev.time - clock;
        area += in_system as f64 * dt;
        if servers.busy[ABLE].is_some() && servers.busy[BAKER].is_some() {
            both_busy_time += dt;
        }
        clock = ev.time;

        match ev.what {
            Pending::Arrival { customer } => {
                in_system += 1;
                max_in_system = max_in_system.max(in_system);
                if customer + 1 < n {
                    next_arrival += exponential(&mut arr_rng, means[customer + 1]);
                    fel.push(Event {
                        time: next_arrival,
                        what: Pending::Arrival {
                            customer: customer + 1,
                        },
                    });
                }
                match servers.first_idle() {
                    Some(server) => {
                        log(
                            clock,
                            EventKind::Arrival,
                            customer,
                            None,
                            queue.len(),
                            in_system,
                        );
                        servers.start(server, customer, clock, &mut fel);
                        log(
                            clock,
                            EventKind::ServiceStart,
                            customer,
                            Some(server),
                            queue.len(),
                            in_system,
                        );
                    }
                    None => {
                        queue.push_back(customer);
                        log(
                            clock,
                            EventKind::Arrival,
                            customer,
                            None,
                            queue.len(),
                            in_system,
                        );
                    }
                }
            }
            Pending::Departure { server, customer } => {
                in_system -= 1;
                servers.finish(server, clock);
                log(
                    clock,
                    EventKind::Departure,
                    customer,
                    Some(server),
                    queue.len(),
                    in_system,
                );
                if let Some(next) = queue.pop_front() {
                    servers.start(server, next, clock, &mut fel);
                    log(
                        clock,
                        EventKind::ServiceStart,
                        next,
                        Some(server),
                        queue.len(),
                        in_system,
                    );
                }
            }
        }
    }

    let end = clock;
    let frac = |t: f64| if end > 0.0 { t / end } else { 0.0 };
    RepMetrics {
        able_busy_fraction: frac(servers.busy_time[ABLE]),
        baker_busy_fraction: frac(servers.busy_time[BAKER]),
        both_busy_fraction: frac(both_busy_time),
        time_avg_in_system: frac(area),
        max_in_system,
        able_served: servers.served[ABLE],
        baker_served: servers.served[BAKER],
        end_time: end,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySummary {
    pub config: CarhopConfig,
    /// Pooled mean actually used, for pooled modes.
    pub pooled_mean: Option<f64>,
    pub replications: usize,
    pub mean_able_busy_fraction: f64,
    pub mean_baker_busy_fraction: f64,
    /// Average of the two per-carhop busy fractions.
    pub mean_server_busy_fraction: f64,
    pub mean_both_busy_fraction: f64,
    pub mean_time_avg_in_system: f64,
    pub mean_able_served: f64,
    pub mean_baker_served: f64,
    pub max_in_system: usize,
    /// 1-based replication achieving `max_in_system` (first on ties).
    pub max_in_system_replication: usize,
    pub reps: Vec<RepMetrics>,
}

/// Run every replication (in parallel, with per-replication streams) and
/// summarize.
pub fn run_study(config: &CarhopConfig) -> Result<StudySummary> {
    config.validate()?;
    let pooled = match &config.mode {
        ArrivalMode::Pooled { mean } => Some(*mean),
        _ => resolved_pooled_mean(config),
    };
    let override_mean = resolved_pooled_mean(config);
    let reps: Vec<RepMetrics> = (0..config.replications)
        .into_par_iter()
        .map(|r| simulate(config, r, override_mean, None))
        .collect();
    let k = reps.len() as f64;
    let avg = |f: fn(&RepMetrics) -> f64| reps.iter().map(f).sum::<f64>() / k;
    let (max_rep, max_val) = reps.iter().enumerate().fold((0, 0usize), |acc, (i, r)| {
        if r.max_in_system > acc.1 {
            (i, r.max_in_system)
        } else {
            acc
        }
    });
    let able = avg(|r| r.able_busy_fraction);
    let baker = avg(|r| r.baker_busy_fraction);
    Ok(StudySummary {
        config: config.clone(),
        pooled_mean: pooled,
        replications: config.replications,
        mean_able_busy_fraction: able,
        mean_baker_busy_fraction: baker,
        mean_server_busy_fraction: (able + baker) / 2.0,
        mean_both_busy_fraction: avg(|r| r.both_busy_fraction),
        mean_time_avg_in_system: avg(|r| r.time_avg_in_system),
        mean_able_served: avg(|r| r.able_served as f64),
        mean_baker_served: avg(|r| r.baker_served as f64),
        max_in_system: max_val,
        max_in_system_replication: max_rep + 1,
        reps,
    })
}

/// Audit trail as CSV: `time,event,customer,server,queue_len,in_system`.
pub fn audit_csv(records: &[AuditRecord]) -> String {
    let mut out = String::from("time,event,customer,server,queue_len,in_system\n");
    for r in records {
        let event = match r.event {
            EventKind::Arrival => "arrival",
            EventKind::ServiceStart => "service_start",
            EventKind::Departure => "departure",
        };
        let server = r.server.map_or("", |s| SERVER_NAMES[s]);
        let _ = writeln!(
            out,
            "{},{event},{},{server},{},{}",
            r.time, r.customer, r.queue_len, r.in_system
        );
    }
    out
}

/// Draw a triangular variate from `rng`.
pub fn draw_triangular<R: Rng + ?Sized>(t: &Triangular, rng: &mut R) -> f64 {
    t.quantile(open_unit(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_quantiles() {
        assert_eq!(sample_triangular(5.0, 6.0, 10.0, 0.2).unwrap(), 6.0);
        assert!((sample_triangular(5.0, 6.0, 10.0, 1e-12).unwrap() - 5.0).abs() < 1e-4);
        assert!((sample_triangular(5.0, 6.0, 10.0, 1.0 - 1e-12).unwrap() - 10.0).abs() < 1e-4);
        assert!(sample_triangular(5.0, 11.0, 10.0, 0.5).is_err());
        assert!(sample_triangular(5.0, 6.0, 10.0, 0.0).is_err());
        assert!(sample_triangular(5.0, 6.0, 10.0, 1.0).is_err());
    }

    #[test]
    fn default_means() {
        let c = CarhopConfig::new(ArrivalMode::case_one(), 0);
        assert_eq!(c.able_service.mean(), 7.0);
        assert_eq!(c.baker_service.mean(), 8.0);
    }

    #[test]
    fn single_customer_goes_to_able() {
        let c = CarhopConfig {
            customers_per_rep: 1,
            ..CarhopConfig::new(ArrivalMode::case_one(), 3)
        };
        let r = run_replication(&c, 0).unwrap();
        assert_eq!((r.able_served, r.baker_served), (1, 0));
        assert_eq!(r.max_in_system, 1);
        assert_eq!(r.baker_busy_fraction, 0.0);
    }

    #[test]
    fn zero_replications_is_an_error() {
        let c = CarhopConfig {
            replications: 0,
            ..CarhopConfig::new(ArrivalMode::case_two(), 3)
        };
        assert!(matches!(run_study(&c), Err(Error::Validation(_))));
    }

    #[test]
    fn event_ordering() {
        let dep = Event {
            time: 1.0,
            what: Pending::Departure {
                server: BAKER,
                customer: 0,
            },
        };
        let dep_able = Event {
            time: 1.0,
            what: Pending::Departure {
                server: ABLE,
                customer: 1,
            },
        };
        let arr = Event {
            time: 1.0,
            what: Pending::Arrival { customer: 2 },
        };
        let early = Event {
            time: 0.5,
            what: Pending::Arrival { customer: 3 },
        };
        let mut heap = BinaryHeap::from(vec![arr, dep, early, dep_able]);
        assert_eq!(heap.pop().unwrap(), early);
        assert_eq!(heap.pop().unwrap(), dep_able);
        assert_eq!(heap.pop().unwrap(), dep);
        assert_eq!(heap.pop().unwrap(), arr);
    }
}
