//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.
//!
//! Run with `cargo test -p uwbsim --test acceptance`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::{reconcile_energy, rows, run_memory, EnergyAudit};
use uwbsim::channel::Position;
use uwbsim::mac::Protocol;
use uwbsim::phy::{collision_predicate_length1, current_slot, pulses_overlap, FrameTiming, PulseArrival};
use uwbsim::reference::{self, Reference};
use uwbsim::rng::{Purpose, RandomStream};
use uwbsim::sensing::{Phenomenon, SensorDevice};
use uwbsim::trace::{TraceEvent, TraceLayer};
use uwbsim::{run, SimTime, TraceSink};

// Pinned tolerances.
const SIGMAS: f64 = 3.0;
const COLLISION_INSTANCES: usize = 10_000;
const COLLISION_BUDGET: Duration = Duration::from_secs(10);
const SLOT_TRIPLES: usize = 10_000;
const PER_PACKETS: u64 = 10_000;
const PER_BUDGET: Duration = Duration::from_secs(60);
const MAC_PACKETS: u64 = 10_000;
const SPHERE_GEOMETRIES: usize = 1_000;
const FN_SAMPLES: usize = 10_000;
const SCALE_BUDGET: Duration = Duration::from_secs(60);
const SCALE_MIN_PULSES: u64 = 1_000_000;
const SCALE_MAX_RSS_KB: u64 = 1024 * 1024;

const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(measured: f64, expected: f64, n: f64) -> (bool, f64) {
    let sigma = (expected * (1.0 - expected) / n).sqrt();
    ((measured - expected).abs() <= SIGMAS * sigma, sigma)
}

/// Energy reconciliation results from every scenario the other criteria run.
#[derive(Default)]
struct Audits {
    ok: Vec<(String, EnergyAudit)>,
    failed: Vec<String>,
}

impl Audits {
    fn check(&mut self, name: &str, result: Result<EnergyAudit, String>) {
        match result {
            Ok(a) => self.ok.push((name.to_string(), a)),
            Err(e) => self.failed.push(format!("{name}: {e}")),
        }
    }
}

// 1 -------------------------------------------------------------------------

/// Receiver-slot interval of a pulse: the slot boundaries around `a`, widened
/// by the delay spread.
fn occupied(a: u64, slot: u64, spread: u64) -> (u64, u64) {
    let start = a - a % slot;
    (start, start + slot + spread)
}

/// All cross-train pairs whose intervals intersect, by sweeping endpoints.
fn sweep_pairs(trains: &[Vec<u64>; 2], slot: u64, spread: u64) -> BTreeSet<(usize, usize)> {
    // (time, is_start, train, index); ends sort before starts at a tie
    // because intervals are half-open.
    let mut points = Vec::new();
    for (t, train) in trains.iter().enumerate() {
        for (i, &a) in train.iter().enumerate() {
            let (s, e) = occupied(a, slot, spread);
            points.push((s, true, t, i));
            points.push((e, false, t, i));
        }
    }
    points.sort();
    let mut active: [BTreeSet<usize>; 2] = Default::default();
    let mut pairs = BTreeSet::new();
    for (_, is_start, t, i) in points {
        if is_start {
            for &j in &active[1 - t] {
                pairs.insert(if t == 0 { (i, j) } else { (j, i) });
            }
            active[t].insert(i);
        } else {
            active[t].remove(&i);
        }
    }
    pairs
}

fn collision_oracle() -> Outcome {
    const PULSES: u64 = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0_11_1D);
    let started = Instant::now();
    let mut mismatches = 0usize;
    let mut predicate_mismatches = 0usize;
    let mut colliding = 0usize;
    for _ in 0..COLLISION_INSTANCES {
        let slot = rng.random_range(1_000..=100_000u64);
        let n = rng.random_range(2..=64u32);
        let timing = FrameTiming::new(SimTime::from_ticks(slot), n).unwrap();
        let frame = timing.frame().ticks();
        let ths = [rng.random_range(0..n), rng.random_range(0..n)];
        let delay = [rng.random_range(0..=3 * frame), rng.random_range(0..=3 * frame)];
        let spread = if rng.random_bool(0.5) { 0 } else { rng.random_range(0..2 * slot) };
        let trains: [Vec<u64>; 2] = std::array::from_fn(|t| {
            (0..PULSES).map(|k| k * frame + ths[t] as u64 * slot + delay[t]).collect()
        });
        let arrival = |t: usize, k: usize| PulseArrival {
            arrival: SimTime::from_ticks(trains[t][k]),
            power: 1.0,
            source: t as u32,
            packet: t as u64,
            bit_index: k as u32,
        };

        let oracle = sweep_pairs(&trains, slot, spread);
        let mut found = BTreeSet::new();
        for i in 0..PULSES as usize {
            for j in 0..PULSES as usize {
                if pulses_overlap(&arrival(0, i), &arrival(1, j), &timing, SimTime::from_ticks(spread)) {
                    found.insert((i, j));
                }
            }
        }
        mismatches += oracle.symmetric_difference(&found).count();
        colliding += !oracle.is_empty() as usize;

        let any_overlap = !sweep_pairs(&trains, slot, 0).is_empty();
        let predicted = collision_predicate_length1(
            ths[0],
            ths[1],
            SimTime::from_ticks(delay[0]),
            SimTime::from_ticks(delay[1]),
            &timing,
        );
        predicate_mismatches += (predicted != any_overlap) as usize;
    }
    let elapsed = started.elapsed();
    outcome(
        mismatches == 0 && predicate_mismatches == 0 && elapsed < COLLISION_BUDGET,
        format!(
            "{COLLISION_INSTANCES} instances ({colliding} colliding): {mismatches} pair mismatches, \
             {predicate_mismatches} length-1 predicate mismatches, {elapsed:.2?} (< {COLLISION_BUDGET:?})"
        ),
    )
}

// 2 -------------------------------------------------------------------------

fn hopping_pair(audits: &mut Audits) -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for aligned in [false, true] {
        let r = reference::hopping_pair(aligned);
        let (m, out) = run_memory(&r, SEED);
        audits.check(&r.name, reconcile_energy(&m, &out));
        let rx: Vec<_> = rows(&out.records, 0, TraceLayer::Phy, &[TraceEvent::RxOk, TraceEvent::Drop]).collect();
        let pulses: u64 = rx.iter().map(|r| r.fields.pulses.unwrap() as u64).sum();
        let collided: u64 = rx.iter().map(|r| r.fields.collisions.unwrap() as u64).sum();
        let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &rx {
            *reasons.entry(r.fields.reason.as_deref().unwrap_or("ok")).or_default() += 1;
        }
        let expected_packets = 2 * reference::PAIR_PACKETS as usize;
        let expected_pulses = expected_packets as u64 * 64;
        let ok = rx.len() == expected_packets
            && pulses == expected_pulses
            && if aligned { collided == pulses } else { collided == 0 && reasons.get("ok") == Some(&expected_packets) };
        pass &= ok;
        details.push(format!("{}: {collided}/{pulses} pulses collided, outcomes {reasons:?}", r.name));
    }
    outcome(pass, details.join("; "))
}

// 3 -------------------------------------------------------------------------

fn slot_indexing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5107);
    let mut mismatches = 0usize;
    for _ in 0..SLOT_TRIPLES {
        let slot = rng.random_range(1..=100_000u64);
        let n = rng.random_range(1..=64u32);
        let timing = FrameTiming::new(SimTime::from_ticks(slot), n).unwrap();
        let frame = slot * n as u64;
        let t = if rng.random_bool(0.2) {
            rng.random_range(0..1000 * n as u64) * slot
        } else {
            rng.random_range(0..1000 * frame)
        };
        // Walk frame boundaries, then slot boundaries inside the frame.
        let mut frame_start = 0u64;
        while frame_start + frame <= t {
            frame_start += frame;
        }
        let mut index = 0u32;
        let mut boundary = frame_start + slot;
        while boundary <= t {
            index += 1;
            boundary += slot;
        }
        let absolute = (frame_start / slot) + index as u64;
        let got = current_slot(SimTime::from_ticks(t), &timing);
        if got != index || timing.absolute_slot(SimTime::from_ticks(t)) != absolute {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{SLOT_TRIPLES} triples: {mismatches} mismatches"))
}

// 4 -------------------------------------------------------------------------

fn per_closed_form(audits: &mut Audits) -> Outcome {
    let started = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    for (snr, ber) in [(0.0, 1e-1), (5.0, 1e-2), (10.0, 1e-3)] {
        let r = reference::clean_link(snr, PER_PACKETS);
        let (m, out) = run_memory(&r, SEED);
        audits.check(&r.name, reconcile_energy(&m, &out));
        let flow = out.summary.flow(1, 0).expect("flow 1->0");
        let expected = 1.0 - (1.0f64 - ber).powi(reference::CLEAN_LINK_BITS as i32);
        let per = 1.0 - flow.delivered as f64 / flow.offered as f64;
        let (ok, sigma) = within(per, expected, flow.offered as f64);
        pass &= ok && flow.offered == PER_PACKETS;
        details.push(format!("{snr} dB: PER {per:.4} vs {expected:.4} (3σ = {:.4})", SIGMAS * sigma));
    }
    let elapsed = started.elapsed();
    pass &= elapsed < PER_BUDGET;
    details.push(format!("{elapsed:.2?}"));
    outcome(pass, details.join("; "))
}

// 5 -------------------------------------------------------------------------

fn multiuser(audits: &mut Audits) -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for same in [false, true] {
        let r = reference::multiuser(same);
        let (m, out) = run_memory(&r, SEED);
        audits.check(&r.name, reconcile_energy(&m, &out));
        let delivered: Vec<u64> = [1, 2].iter().map(|&s| out.summary.flow(s, 0).unwrap().delivered).collect();
        let collisions = out.summary.global.pulse_collisions;
        let n = reference::MULTIUSER_PACKETS;
        let ok = if same {
            delivered == [0, 0]
                && rows(&out.records, 0, TraceLayer::Phy, &[TraceEvent::RxOk, TraceEvent::Drop])
                    .all(|r| r.fields.collisions == r.fields.pulses)
        } else {
            delivered == [n, n] && collisions == 0
        };
        pass &= ok;
        details.push(format!("{}: delivered {delivered:?} of {n}, {collisions} pulse collisions", r.name));
    }
    outcome(pass, details.join("; "))
}

// 6 -------------------------------------------------------------------------

fn reliable_law(audits: &mut Audits) -> Outcome {
    let mut configs = Vec::new();
    for protocol in [Protocol::ReliableUnslotted, Protocol::ReliableSlotted] {
        for p in [0.3, 0.5, 0.7] {
            for limit in [0u32, 1, 3] {
                configs.push((protocol, p, limit));
            }
        }
    }
    let shared = Mutex::new(std::mem::take(audits));
    let results: Vec<(bool, String)> = configs
        .par_iter()
        .map(|&(protocol, p, limit)| {
            let r = reference::reliable_loss(protocol, p, limit, MAC_PACKETS);
            let (m, out) = run_memory(&r, SEED);
            shared.lock().unwrap().check(&r.name, reconcile_energy(&m, &out));
            let flow = out.summary.flow(1, 0).unwrap();
            let rate = flow.delivered as f64 / flow.offered as f64;
            let expected = 1.0 - p.powi(limit as i32 + 1);
            let (ok, sigma) = within(rate, expected, flow.offered as f64);
            let ok = ok && flow.offered == MAC_PACKETS;
            (ok, format!("{}: {rate:.4} vs {expected:.4}±{:.4}", r.name, SIGMAS * sigma))
        })
        .collect();
    *audits = shared.into_inner().unwrap();
    let failed: Vec<&String> = results.iter().filter(|(ok, _)| !ok).map(|(_, d)| d).collect();
    let worst = results.iter().map(|(_, d)| d.as_str()).collect::<Vec<_>>().join(", ");
    if failed.is_empty() {
        outcome(true, format!("{} configs within 3σ [{worst}]", results.len()))
    } else {
        outcome(false, format!("{} of {} outside 3σ: {failed:?}", failed.len(), results.len()))
    }
}

// 7 -------------------------------------------------------------------------

fn doze_scenarios() -> Vec<Reference> {
    let mut a = reference::hopping_pair(false);
    a.name = "hopping-orthogonal-doze".into();
    a.scenario.mac.doze = true;
    let mut b = reference::sensing_field();
    b.name = "sensing-field-doze".into();
    b.scenario.mac.doze = true;
    b.scenario.simulation.duration = 0.35;
    vec![a, b]
}

fn energy_reconciliation(audits: &mut Audits) -> Outcome {
    for r in doze_scenarios() {
        let (m, out) = run_memory(&r, SEED);
        audits.check(&r.name, reconcile_energy(&m, &out));
    }
    let nodes: usize = audits.ok.iter().map(|(_, a)| a.nodes).sum();
    let sleep: u64 = audits.ok.iter().map(|(_, a)| a.sleep_ticks).sum();
    let tx: u64 = audits.ok.iter().map(|(_, a)| a.tx_pulses).sum();
    let rx: u64 = audits.ok.iter().map(|(_, a)| a.rx_pulses).sum();
    outcome(
        audits.failed.is_empty() && sleep > 0,
        format!(
            "{} scenarios, {nodes} node ledgers exact ({tx} tx / {rx} rx pulses, {:.3} s asleep); failures: {:?}",
            audits.ok.len() + audits.failed.len(),
            sleep as f64 / 1e12,
            audits.failed
        ),
    )
}

// 8 -------------------------------------------------------------------------

fn sensing_sphere(audits: &mut Audits) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e45);
    let mut stream = RandomStream::new(SEED, 0, Purpose::Sensing);
    let mut mismatches = 0usize;
    let mut inside = 0usize;
    for _ in 0..SPHERE_GEOMETRIES {
        let mut point = || Position::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0));
        let (src, pos) = (point(), point());
        let intensity = 10f64.powf(rng.random_range(-3.0..3.0));
        let threshold = 10f64.powf(rng.random_range(-4.0..0.0));
        let n = rng.random_range(1.5..4.0);
        let d0 = rng.random_range(0.5..5.0);
        let ph = Phenomenon {
            position: src,
            source_intensity: intensity,
            sampling_rate: 10.0,
            path_loss_exponent: n,
            reference_distance: d0,
            start: SimTime::ZERO,
            end: SimTime::MAX,
            wave_velocity: None,
        };
        let device = SensorDevice { threshold, ..SensorDevice::default() };
        let d = ((pos.x - src.x).powi(2) + (pos.y - src.y).powi(2) + (pos.z - src.z).powi(2)).sqrt();
        let expected = d <= (intensity / threshold).powf(1.0 / n) * d0;
        inside += expected as usize;
        if device.sense(ph.intensity_at(&pos), &mut stream) != expected {
            mismatches += 1;
        }
    }

    let lossy = SensorDevice { threshold: 1.0, false_negative_rate: 0.1, ..SensorDevice::default() };
    let hits = (0..FN_SAMPLES).filter(|_| lossy.sense(2.0, &mut stream)).count();
    let rate = hits as f64 / FN_SAMPLES as f64;
    let (rate_ok, sigma) = within(rate, 0.9, FN_SAMPLES as f64);

    let r = reference::sensing_field();
    let (m, out) = run_memory(&r, SEED);
    audits.check(&r.name, reconcile_energy(&m, &out));
    let reporters: BTreeSet<u32> = out
        .records
        .iter()
        .filter(|r| r.layer == TraceLayer::Sensor && r.event == TraceEvent::Report)
        .filter_map(|r| r.node)
        .collect();
    let sink = m.sensing.as_ref().unwrap().sink;
    let expected: BTreeSet<u32> = m
        .nodes
        .iter()
        .enumerate()
        .filter(|&(i, n)| i != sink && n.position.distance(&Position::new(0.0, 0.0, 0.0)) <= reference::SENSING_RADIUS)
        .map(|(_, n)| n.id)
        .collect();

    outcome(
        mismatches == 0 && rate_ok && reporters == expected,
        format!(
            "{SPHERE_GEOMETRIES} geometries ({inside} inside): {mismatches} mismatches; p_fn=0.1 detection {rate:.4} \
             vs 0.9±{:.4}; field reporters {reporters:?} vs {expected:?}",
            SIGMAS * sigma
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn trace_bytes(r: &Reference, seed: u64, path: &Path) -> Vec<u8> {
    let m = common::model(r, seed);
    let file = BufWriter::new(fs::File::create(path).unwrap());
    run(&m, &r.ber_table, TraceSink::to_writer(file).unwrap()).unwrap();
    fs::read(path).unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut scenarios = vec![
        reference::hopping_pair(true),
        reference::clean_link(5.0, 500),
        reference::reliable_loss(Protocol::ReliableUnslotted, 0.5, 1, 500),
        reference::reliable_loss(Protocol::ReliableSlotted, 0.5, 1, 200),
        reference::sensing_field(),
    ];
    scenarios.extend(doze_scenarios());
    let mut identical = 0;
    let mut details = Vec::new();
    for (i, r) in scenarios.iter().enumerate() {
        let a = trace_bytes(r, 7, &dir.path().join(format!("{i}a.csv")));
        let b = trace_bytes(r, 7, &dir.path().join(format!("{i}b.csv")));
        if a == b {
            identical += 1;
        } else {
            details.push(format!("{} differs between identical runs", r.name));
        }
    }
    let stochastic = [reference::clean_link(5.0, 500), reference::reliable_loss(Protocol::ReliableUnslotted, 0.5, 1, 500)];
    let mut diverging = 0;
    for (i, r) in stochastic.iter().enumerate() {
        let a = trace_bytes(r, 1, &dir.path().join(format!("s{i}a.csv")));
        let b = trace_bytes(r, 2, &dir.path().join(format!("s{i}b.csv")));
        if a != b {
            diverging += 1;
        } else {
            details.push(format!("{} identical under seeds 1 and 2", r.name));
        }
    }
    outcome(
        identical == scenarios.len() && diverging == stochastic.len(),
        format!(
            "{identical}/{} byte-identical reruns, {diverging}/{} stochastic scenarios diverge across seeds {details:?}",
            scenarios.len(),
            stochastic.len()
        ),
    )
}

// 10 ------------------------------------------------------------------------

fn peak_rss_kb() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn scale_sanity() -> Outcome {
    let r = reference::scale(10, 10.0);
    let m = common::model(&r, SEED);
    let started = Instant::now();
    let out = run(&m, &r.ber_table, TraceSink::Off);
    let elapsed = started.elapsed();
    let rss = peak_rss_kb();
    let Ok(out) = out else { return outcome(false, format!("scale-100 failed: {:?}", out.err())) };
    let pulses = out.stats.pulse_arrivals;
    let mem_ok = rss.is_none_or(|kb| kb < SCALE_MAX_RSS_KB);

    let big = reference::sparse_field(40, 25, 0.02);
    let bm = common::model(&big, SEED);
    let big_started = Instant::now();
    let big_out = run(&bm, &big.ber_table, TraceSink::Off);
    let big_elapsed = big_started.elapsed();
    let big_ok = big_out.as_ref().is_ok_and(|o| o.summary.global.transmissions >= 1000);
    let rss_text = rss.map_or("unavailable".to_string(), |kb| format!("{:.0} MiB", kb as f64 / 1024.0));
    outcome(
        elapsed < SCALE_BUDGET && pulses >= SCALE_MIN_PULSES && mem_ok && big_ok,
        format!(
            "100 nodes x 10 s: {elapsed:.2?}, {pulses} pulse arrivals, {} events, peak RSS {rss_text}; \
             1000 nodes: {} in {big_elapsed:.2?}",
            out.stats.events,
            if big_ok { "completed" } else { "FAILED" },
        ),
    )
}

fn main() -> ExitCode {
    let mut audits = Audits::default();
    // Scale first so its peak-memory reading is not inflated by the others.
    let scale = scale_sanity();
    let mut results = vec![
        ("collision oracle equivalence", collision_oracle()),
        ("time-hopping pair reproduction", hopping_pair(&mut audits)),
        ("slot indexing", slot_indexing()),
        ("PER closed form", per_closed_form(&mut audits)),
        ("orthogonal THS multiuser access", multiuser(&mut audits)),
        ("reliable MAC delivery law", reliable_law(&mut audits)),
    ];
    let sensing = sensing_sphere(&mut audits);
    let determinism = determinism();
    results.push(("energy reconciliation", energy_reconciliation(&mut audits)));
    results.push(("sensing threshold sphere", sensing));
    results.push(("determinism", determinism));
    results.push(("scale sanity", scale));

    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("{} [{:>2}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += !o.pass as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
