//! Decentralized coordination of opt-out campaigns against spam-advertised
//! websites, and a deterministic simulator to study them.
//!
//! Clients that receive the same spam agree on a start time through a
//! shared DHT, vet each other with hash challenges, and only send opt-out
//! traffic when enough trusted comrades take part.

pub mod coordinator;
pub mod crypto;
pub mod dht;
pub mod sim;
pub mod site;
pub mod target;
pub mod trust;

pub use coordinator::{CampaignStart, Coordinator, CoordinatorConfig};
pub use crypto::ClientIdentity;
pub use dht::{Dht, SimDht};
pub use sim::{run, MetricsReport, Scenario};
pub use target::{canonicalize, CanonicalUrl, EmailDocument};
pub use trust::{TrustConfig, TrustDb};
