//! Beamformer design for the three domains: radiation patterns (`em`),
//! phase-shifter network (`rf`) and baseband precoding (`bb`).

pub mod bb;
pub mod em;
pub mod rf;
