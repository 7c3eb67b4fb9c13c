//! Model of one slice: systolic array, sequencer, aggregation engine and
//! the timelines of its compute, aggregation and memory resources.

mod aggregation;
mod sequencer;
mod systolic;
mod timing;

pub use aggregation::{AggregateOutcome, AggregationSlot, AggregationTable};
pub use sequencer::{order_tiles, slab_tiles, Sequencer, Tile, TileKey, TileRecord};
pub use systolic::{RowResult, SystolicState};
pub use timing::{bank_waves, result_wave, stream_cycles, wave_done, wave_interval, Channel, MemoryChannel};
