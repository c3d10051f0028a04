//! Quantum-randomness-seeded identity badges for a moderated event wall.
//!
//! A mention-bearing chat message is stored immediately, then two small
//! circuits run on a [`backend::QuantumBackend`]: a 4-qubit RNG whose most
//! frequent outcome becomes the badge's quantum number, and a Bell-pair
//! circuit whose outcome distribution sets the card colour. [`sig`] turns
//! those into a public-key hash and signature; [`store`] keeps the record
//! and its provenance; [`api`] serves the wall and the admin views.

pub mod api;
pub mod backend;
pub mod ingest;
pub mod pipeline;
pub mod qsim;
pub mod sig;
pub mod statcheck;
pub mod store;

pub use backend::{BellVector, QuantumBackend, QuantumResult};
pub use sig::{Badge, HslColor};
pub use store::{MessageRecord, Store};
