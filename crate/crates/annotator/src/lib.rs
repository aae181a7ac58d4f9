//! Blinded human judgment service: Turing-test sessions (real or synthetic)
//! and labeling sessions (present or absent), persisted as append-only event
//! logs and exposed over a small JSON API.

pub mod api;
pub mod store;

pub use api::{router, serve, AppState};
pub use store::{Choice, CreateRequest, NextItem, NotePool, Session, SessionKind, Store, StoreError};
