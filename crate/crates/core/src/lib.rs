//! Sensor search-engine enabler on a minimal IMS slice.
//!
//! Sensors register through an S-CSCF that evaluates initial filter
//! criteria and forwards a third-party REGISTER to the search engine. The
//! engine watches registration state and presence, writes one XML document
//! per sensor into an XDM store, and keeps group documents classified by
//! type, location, nearby points of interest and news events. Applications
//! subscribe to those groups, query the index, and open sessions to sensors
//! through the S-CSCF.
//!
//! Everything runs on a deterministic simulated network ([`netsim`]); the
//! [`live`] module drives the same nodes over real UDP sockets.

pub mod netsim;
pub mod sip;
pub mod http;
pub mod presence;
pub mod scscf;
pub mod xdms;
pub mod xml;
pub mod engine;
pub mod feed;
pub mod geo;
pub mod live;
pub mod call;
pub mod mashup;
pub mod sensor;
pub mod watcher;
pub mod scenario;
pub mod world;
