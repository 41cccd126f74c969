//! Distributed data structures for the message-passing many-core simulator.

pub mod central;
pub mod dir_structs;
pub mod directory;
pub mod lists;
pub mod msg;
pub mod net;
pub mod syncprims;
pub mod token;

pub use msg::{Msg, Op, Reply, Req, Tk};
pub use net::{Client, MasterConfig, Recorder};
