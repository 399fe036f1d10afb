//! Time-hopping impulse-radio physical layer.

mod ber;
mod reception;
mod timing;

pub use ber::{BerTable, BerTableError};
pub use reception::{
    sinr, Demodulator, DropReason, PacketId, PhyError, PulseArrival, PulseOutcome, ReceptionContext,
    RxOutcome, RxSummary, SlotState,
};
pub use timing::{
    collision_predicate_length1, current_slot, pulses_overlap, transmission_duration, wait_for_slot,
    FrameTiming, SlotWindow, TimingError,
};
