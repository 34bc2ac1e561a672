//! Authenticated extension: signed ledgers, parcels and broadcast.

pub mod board;
pub mod ledger;
pub mod parcel;
pub mod sender;
