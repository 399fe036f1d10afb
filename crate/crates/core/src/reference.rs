//! Canonical reference scenarios used by the acceptance suite and the
//! `uwbsim reference` command.

use std::collections::BTreeMap;

use crate::channel::{self, ChannelConfig, LinkBudget, SPEED_OF_LIGHT};
use crate::mac::Protocol;
use crate::phy::BerTable;
use crate::scenario::{
    EnergySection, FlowSection, ImpairmentSection, MacSection, NodeSection, PhenomenonSection, RadioSection, Role,
    Scenario, SensingSection, SensorSection, SimulationSection,
};

/// A scenario bundled with the BER table it expects next to it.
#[derive(Debug, Clone)]
pub struct Reference {
    pub name: String,
    pub scenario: Scenario,
    pub ber_table: BerTable,
}

pub const BER_FILE: &str = "ber.csv";

/// Table whose rows hit BER 1e-1, 1e-2 and 1e-3 exactly at 0, 5 and 10 dB.
pub fn test_table() -> BerTable {
    BerTable::from_rows(vec![
        (-30.0, 0.5),
        (0.0, 1e-1),
        (5.0, 1e-2),
        (10.0, 1e-3),
        (20.0, 1e-6),
        (30.0, 1e-12),
        (40.0, 0.0),
    ])
    .expect("static table is valid")
}

/// Error-free at any positive SNR, a coin flip at or below 0 dB.
pub fn noise_free_table() -> BerTable {
    BerTable::from_rows(vec![(-10.0, 0.5), (0.0, 0.5), (1.0, 0.0)]).expect("static table is valid")
}

fn node(id: u32, x: f64, y: f64, ths: u32, role: Role) -> NodeSection {
    NodeSection {
        id,
        x,
        y,
        z: 0.0,
        role,
        ths,
        profile: "default".into(),
        mac_frames: Vec::new(),
        sensitivity_dbm: None,
    }
}

fn cbr(src: u32, dst: u32, payload_bits: u32, period: f64, count: u64) -> FlowSection {
    FlowSection {
        src,
        dst,
        payload_bits,
        period: Some(period),
        rate: None,
        start: 0.0,
        stop: None,
        count: Some(count),
    }
}

fn base(duration: f64, slot: f64, slots_per_frame: u32, header_bits: u32) -> Scenario {
    Scenario {
        simulation: SimulationSection { duration, seed: 1 },
        channel: ChannelConfig::default(),
        radio: RadioSection {
            slot_duration: slot,
            slots_per_frame,
            frame_duration: None,
            sensitivity_dbm: -95.0,
            noise_figure: 1.0,
            tx_power: 1e-3,
            tx_gain: 1.0,
            rx_gain: 1.0,
            max_concurrent_receptions: 0,
            interference_floor_dbm: None,
            ber_table: BER_FILE.into(),
        },
        mac: MacSection { header_bits, ..MacSection::default() },
        energy: EnergySection::default(),
        nodes: Vec::new(),
        flows: Vec::new(),
        sensing: None,
        impairment: ImpairmentSection::default(),
    }
}

/// Distance covered by the pulse in `seconds`.
fn light_distance(seconds: f64) -> f64 {
    seconds * SPEED_OF_LIGHT
}

pub const PAIR_PACKETS: u64 = 50;
pub const PAIR_SLOT: f64 = 10e-9;

/// The two-transmitter layout of the time-hopping illustration: a receiver
/// (id 0) and transmitters 1 and 2 with hopping slots 1 and 2, 4 slots per
/// frame. With `aligned = false` both links have the same delay and the
/// sequences never meet. With `aligned = true` transmitter 1 sits exactly
/// one slot of flight time farther away, so its pulses land in the very slot
/// of transmitter 2's.
pub fn hopping_pair(aligned: bool) -> Reference {
    let l_pdu = 64;
    let frame = 4.0 * PAIR_SLOT;
    let period = 2.0 * l_pdu as f64 * frame;
    let mut s = base(period * (PAIR_PACKETS as f64 + 1.0), PAIR_SLOT, 4, 16);
    let d2 = light_distance(PAIR_SLOT);
    let d1 = if aligned { light_distance(2.0 * PAIR_SLOT) } else { d2 };
    s.nodes = vec![node(0, 0.0, 0.0, 0, Role::Sink), node(1, -d1, 0.0, 1, Role::Sensor), node(2, 0.0, d2, 2, Role::Sensor)];
    s.flows = vec![cbr(1, 0, l_pdu - 16, period, PAIR_PACKETS), cbr(2, 0, l_pdu - 16, period, PAIR_PACKETS)];
    Reference {
        name: if aligned { "hopping-aligned" } else { "hopping-orthogonal" }.into(),
        scenario: s,
        ber_table: test_table(),
    }
}

pub const MULTIUSER_PACKETS: u64 = 100;

/// Two synchronized transmitters at equal distance from the receiver on a
/// noise-free table; `same_ths` gives both the same hopping slot.
pub fn multiuser(same_ths: bool) -> Reference {
    let l_pdu = 64;
    let slot = 2e-9;
    let frame = 8.0 * slot;
    let period = 2.0 * l_pdu as f64 * frame;
    let mut s = base(period * (MULTIUSER_PACKETS as f64 + 1.0), slot, 8, 16);
    let d = 4.0;
    let (a, b) = if same_ths { (3, 3) } else { (1, 5) };
    s.nodes = vec![node(0, 0.0, 0.0, 0, Role::Sink), node(1, d, 0.0, a, Role::Sensor), node(2, -d, 0.0, b, Role::Sensor)];
    s.flows = vec![cbr(1, 0, l_pdu - 16, period, MULTIUSER_PACKETS), cbr(2, 0, l_pdu - 16, period, MULTIUSER_PACKETS)];
    Reference {
        name: if same_ths { "multiuser-same-ths" } else { "multiuser-orthogonal" }.into(),
        scenario: s,
        ber_table: noise_free_table(),
    }
}

/// Transmit power that yields exactly `snr_db` over `d` meters.
pub fn tx_power_for_snr(snr_db: f64, d: f64, channel: &ChannelConfig, noise_figure: f64) -> f64 {
    let unit = LinkBudget { tx_power: 1.0, tx_gain: 1.0, rx_gain: 1.0 };
    let gain = channel::received_power(&unit, d, channel).expect("positive distance");
    10f64.powf(snr_db / 10.0) * noise_figure * channel::noise_power(channel) / gain
}

pub const CLEAN_LINK_BITS: u32 = 100;

/// One transmitter, one receiver, no interference, constant SNR; every PDU
/// is `CLEAN_LINK_BITS` long.
pub fn clean_link(snr_db: f64, packets: u64) -> Reference {
    let slot = 1e-9;
    let frame = 4.0 * slot;
    let period = 1e-6;
    debug_assert!(CLEAN_LINK_BITS as f64 * frame < period);
    let mut s = base(period * (packets as f64 + 1.0), slot, 4, 20);
    let d = 3.0;
    s.radio.tx_power = tx_power_for_snr(snr_db, d, &s.channel, s.radio.noise_figure);
    s.radio.sensitivity_dbm = -200.0;
    s.nodes = vec![node(0, 0.0, 0.0, 0, Role::Sink), node(1, d, 0.0, 2, Role::Sensor)];
    s.flows = vec![cbr(1, 0, CLEAN_LINK_BITS - 20, period, packets)];
    Reference { name: format!("clean-link-{snr_db}db"), scenario: s, ber_table: test_table() }
}

/// A sender and a receiver under forced i.i.d. loss of DATA PDUs with
/// probability `p`; ACKs always survive.
pub fn reliable_loss(protocol: Protocol, p: f64, limit: u32, packets: u64) -> Reference {
    assert!(protocol.is_reliable());
    let slot = 1e-9;
    let mut s = base(0.0, slot, 4, 8);
    s.mac.protocol = protocol;
    s.mac.retransmission_limit = limit;
    let period = match protocol {
        Protocol::ReliableSlotted => {
            // Sender owns frame 0 and the receiver frame 1 of a 3-frame
            // cycle, so an ACK lands before the sender's next frame.
            s.mac.mac_frame_duration = Some(200e-9);
            s.mac.allocation_cycle = Some(3);
            600e-9 * (limit as f64 + 1.0) + 600e-9
        }
        _ => 400e-9 * (limit as f64 + 1.0) + 400e-9,
    };
    s.simulation.duration = period * (packets as f64 + 1.0);
    let mut tx = node(1, 3.0, 0.0, 1, Role::Sensor);
    let mut rx = node(0, 0.0, 0.0, 3, Role::Sink);
    tx.mac_frames = vec![0];
    rx.mac_frames = vec![1];
    s.nodes = vec![rx, tx];
    s.flows = vec![cbr(1, 0, 8, period, packets)];
    s.impairment = ImpairmentSection { data_loss_probability: p, ack_loss_probability: 0.0 };
    Reference {
        name: format!("{}-p{p}-r{limit}", protocol.as_str()),
        scenario: s,
        ber_table: test_table(),
    }
}

pub const SENSING_RADIUS: f64 = 10.0;

/// A phenomenon at the origin with sensing radius `SENSING_RADIUS` for ideal
/// sensors; 3 of the 10 sensors lie inside it. The sink is node 0.
pub fn sensing_field() -> Reference {
    let mut s = base(1.0, 1e-9, 16, 16);
    let threshold = 1e-2;
    let intensity = threshold * SENSING_RADIUS * SENSING_RADIUS;
    let mut nodes = vec![node(0, 0.0, 25.0, 0, Role::Sink)];
    let distances = [3.0, 7.5, 9.9, 10.1, 12.0, 15.0, 18.0, 21.0, 24.0, 28.0];
    for (i, d) in distances.iter().enumerate() {
        let angle = i as f64 * 0.7;
        nodes.push(node(i as u32 + 1, d * angle.cos(), d * angle.sin(), (i as u32 + 1) % 16, Role::Sensor));
    }
    s.nodes = nodes;
    s.sensing = Some(SensingSection {
        sink: 0,
        report_bits: 32,
        suppression_window: 10.0,
        self_sampling: false,
        sensor: SensorSection { threshold, false_positive_rate: 0.0, false_negative_rate: 0.0, sampling_rate: 10.0 },
        phenomena: vec![PhenomenonSection {
            x: 0.0,
            y: 0.0,
            z: 0.0,
            intensity,
            sampling_rate: 10.0,
            path_loss_exponent: 2.0,
            reference_distance: 1.0,
            start: 0.0,
            end: None,
            wave_velocity: None,
        }],
    });
    Reference { name: "sensing-field".into(), scenario: s, ber_table: test_table() }
}

/// `side x side` grid with 5 m spacing; every node but the sink (node 0)
/// sends one 100-bit CBR packet per second, phases staggered by 10 ms.
pub fn scale(side: u32, duration: f64) -> Reference {
    let slot = 1e-9;
    let n_slots = 64;
    let mut s = base(duration, slot, n_slots, 48);
    let mut nodes = Vec::new();
    for i in 0..side * side {
        let role = if i == 0 { Role::Sink } else { Role::Sensor };
        nodes.push(node(i, (i % side) as f64 * 5.0, (i / side) as f64 * 5.0, (i * 7) % n_slots, role));
    }
    s.nodes = nodes;
    s.flows = (1..side * side)
        .map(|i| FlowSection { start: (i % 100) as f64 * 0.01, count: None, ..cbr(i, 0, 100, 1.0, 0) })
        .collect();
    Reference { name: format!("scale-{}", side * side), scenario: s, ber_table: test_table() }
}

/// Large sparse field: `cols x rows` grid with 50 m spacing. Links below
/// -80 dBm are not simulated, leaving each node its four grid neighbours.
/// Every node sends one packet to its right (or left) neighbour.
pub fn sparse_field(cols: u32, rows: u32, duration: f64) -> Reference {
    let slot = 1e-9;
    let n_slots = 32;
    let mut s = base(duration, slot, n_slots, 48);
    s.radio.interference_floor_dbm = Some(-80.0);
    let mut nodes = Vec::new();
    let mut flows = Vec::new();
    for i in 0..cols * rows {
        let (c, r) = (i % cols, i / cols);
        nodes.push(node(i, c as f64 * 50.0, r as f64 * 50.0, (i * 5) % n_slots, Role::Sensor));
        let dst = if c + 1 < cols { i + 1 } else { i - 1 };
        flows.push(FlowSection { start: i as f64 * 1e-5, ..cbr(i, dst, 100, 1.0, 1) });
    }
    s.nodes = nodes;
    s.flows = flows;
    Reference { name: format!("sparse-{}", cols * rows), scenario: s, ber_table: test_table() }
}

/// Reference set regenerated by `uwbsim reference`.
pub fn catalog() -> Vec<Reference> {
    let mut out = vec![hopping_pair(false), hopping_pair(true), multiuser(false), multiuser(true)];
    for snr in [0.0, 5.0, 10.0] {
        out.push(clean_link(snr, 10_000));
    }
    for protocol in [Protocol::ReliableUnslotted, Protocol::ReliableSlotted] {
        for p in [0.3, 0.5, 0.7] {
            for limit in [0, 1, 3] {
                out.push(reliable_loss(protocol, p, limit, 10_000));
            }
        }
    }
    out.push(sensing_field());
    out.push(scale(10, 10.0));
    out
}

/// [`catalog`] keyed by name.
pub fn by_name() -> BTreeMap<String, Reference> {
    catalog().into_iter().map(|r| (r.name.clone(), r)).collect()
}
