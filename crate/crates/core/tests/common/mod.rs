//! Helpers shared by the integration tests: running reference scenarios and
//! an energy oracle rebuilt from the trace alone.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use uwbsim::energy::PowerProfile;
use uwbsim::reference::Reference;
use uwbsim::trace::{TraceEvent, TraceLayer};
use uwbsim::{run, Model, RunOutput, TraceRecord, TraceSink};

pub fn model(r: &Reference, seed: u64) -> Model {
    let mut m = r.scenario.resolve().unwrap_or_else(|e| panic!("{}: {e}", r.name));
    m.seed = seed;
    m
}

pub fn run_memory(r: &Reference, seed: u64) -> (Model, RunOutput) {
    let m = model(r, seed);
    let out = run(&m, &r.ber_table, TraceSink::Memory(Vec::new())).unwrap_or_else(|e| panic!("{}: {e}", r.name));
    (m, out)
}

pub fn rows<'a>(
    records: &'a [TraceRecord],
    node: u32,
    layer: TraceLayer,
    events: &'a [TraceEvent],
) -> impl Iterator<Item = &'a TraceRecord> + 'a {
    records
        .iter()
        .filter(move |r| r.node == Some(node) && r.layer == layer && events.contains(&r.event))
}

/// Ticks of each state in ledger order IDLE, TRANSMIT, SLEEP, SENSE, RECEIVE.
const STATES: [&str; 5] = ["IDLE", "TRANSMIT", "SLEEP", "SENSE", "RECEIVE"];

fn state_power(p: &PowerProfile, state: &str) -> f64 {
    match state {
        "IDLE" => p.p_idle,
        "SENSE" => p.p_sense,
        "SLEEP" => p.p_sleep,
        _ => 0.0,
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct EnergyAudit {
    pub nodes: usize,
    pub tx_pulses: u64,
    pub rx_pulses: u64,
    pub sleep_ticks: u64,
}

/// Rebuilds every node's energy from trace rows and checks it against the
/// ledger's own rows and report with exact equality.
///
/// Pulse counts come from PHY tx-end / rx rows, TRANSMIT time from the
/// emitted pulse slots, SLEEP time from sleep/wake rows. SENSE and RECEIVE
/// durations are taken from the ledger rows, IDLE must be the remainder.
pub fn reconcile_energy(model: &Model, out: &RunOutput) -> Result<EnergyAudit, String> {
    let end = model.duration.ticks();
    let slot = model.timing.slot().ticks();
    let frame = model.timing.frame().ticks();
    let records = &out.records;
    if records.is_empty() {
        return Err("no trace records to reconcile".into());
    }
    let mut first_slot: HashMap<u64, u64> = HashMap::new();
    for r in records.iter().filter(|r| r.event == TraceEvent::TxStart) {
        first_slot.insert(r.fields.packet.unwrap(), r.fields.slot.unwrap());
    }

    let mut audit = EnergyAudit::default();
    for n in &model.nodes {
        let id = n.id;
        let fail = |what: &str| format!("node {id}: {what}");
        let mut tx = 0u64;
        let mut transmit = 0u64;
        for r in rows(records, id, TraceLayer::Phy, &[TraceEvent::TxEnd]) {
            let pulses = r.fields.pulses.unwrap() as u64;
            tx += pulses;
            if r.fields.reason.as_deref() == Some("run-end") {
                let first = first_slot[&r.fields.packet.unwrap()] * slot;
                for k in 0..pulses {
                    let s = first + k * frame;
                    if s < end {
                        transmit += (s + slot).min(end) - s;
                    }
                }
            } else {
                transmit += pulses * slot;
            }
        }
        let rx: u64 = rows(records, id, TraceLayer::Phy, &[TraceEvent::RxOk, TraceEvent::Drop])
            .map(|r| r.fields.pulses.unwrap_or(0) as u64)
            .sum();
        let mut sleep = 0u64;
        let mut asleep_at: Option<u64> = None;
        for r in rows(records, id, TraceLayer::Phy, &[TraceEvent::Sleep, TraceEvent::Wake]) {
            let b = r.fields.slot.unwrap() * slot;
            match (r.event, asleep_at) {
                (TraceEvent::Sleep, None) => asleep_at = Some(b),
                (TraceEvent::Wake, Some(s)) => {
                    sleep += b.min(end).saturating_sub(s.min(end));
                    asleep_at = None;
                }
                _ => return Err(fail("unpaired sleep/wake rows")),
            }
        }
        if let Some(s) = asleep_at {
            sleep += end.saturating_sub(s);
        }

        let mut ledger_tx = None;
        let mut ledger_rx = None;
        let mut ledger_total = None;
        let mut ledger_time: BTreeMap<String, u64> = BTreeMap::new();
        for r in rows(
            records,
            id,
            TraceLayer::Energy,
            &[TraceEvent::PulsesTx, TraceEvent::PulsesRx, TraceEvent::StateTime, TraceEvent::Total],
        ) {
            let v = r.fields.value.unwrap();
            match r.event {
                TraceEvent::PulsesTx => ledger_tx = Some(v as u64),
                TraceEvent::PulsesRx => ledger_rx = Some(v as u64),
                TraceEvent::Total => ledger_total = Some(v),
                _ => {
                    ledger_time.insert(r.fields.reason.clone().unwrap(), v as u64);
                }
            }
        }
        let (Some(ledger_tx), Some(ledger_rx), Some(ledger_total)) = (ledger_tx, ledger_rx, ledger_total) else {
            return Err(fail("missing energy rows"));
        };
        if ledger_tx != tx {
            return Err(fail(&format!("pulses-tx {ledger_tx} != traced {tx}")));
        }
        if ledger_rx != rx {
            return Err(fail(&format!("pulses-rx {ledger_rx} != traced {rx}")));
        }
        let t = |s: &str| ledger_time.get(s).copied().unwrap_or(0);
        if t("TRANSMIT") != transmit {
            return Err(fail(&format!("TRANSMIT {} != traced {transmit}", t("TRANSMIT"))));
        }
        if t("SLEEP") != sleep {
            return Err(fail(&format!("SLEEP {} != traced {sleep}", t("SLEEP"))));
        }
        if t("RECEIVE") > rx * slot {
            return Err(fail("RECEIVE time exceeds one slot per received pulse"));
        }
        let tiled: u64 = STATES.iter().map(|s| t(s)).sum();
        if tiled != end {
            return Err(fail(&format!("states tile {tiled} ticks, run is {end}")));
        }

        let p = &n.profile;
        let mut closed = tx as f64 * p.e_tx_pulse + rx as f64 * p.e_rx_pulse;
        for s in STATES {
            closed += state_power(p, s) * (t(s) as f64 / 1e12);
        }
        if closed != ledger_total {
            return Err(fail(&format!("closed form {closed:e} J != traced total {ledger_total:e} J")));
        }
        let report = out.energy.iter().find(|e| e.node == id).ok_or_else(|| fail("no energy report"))?;
        if report.total_joules != closed || report.pulses_tx != tx || report.pulses_rx != rx {
            return Err(fail("run report disagrees with the trace"));
        }
        audit.nodes += 1;
        audit.tx_pulses += tx;
        audit.rx_pulses += rx;
        audit.sleep_ticks += sleep;
    }
    Ok(audit)
}
