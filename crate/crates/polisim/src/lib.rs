//! IO companion to `polisim-core`: the message fabric (framed-JSON broker,
//! client, wire protocol), the JSONL result store, the scenario clerk, the
//! simulation worker, and the command-line interface.

pub mod cli;
pub mod clerk;
pub mod fabric;
pub mod store;
pub mod worker;
