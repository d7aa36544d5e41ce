//! XML metadata over DAB: transmission-frame model, MOT object transfer,
//! PAD sub-framing, the DABml envelope format and behaviour matching.
//!
//! The transmit path is
//! [`dabml::serialize_envelope`] → [`mot::build_mot_object`] →
//! [`mot::segment`] → [`pad::PadPacker`] → [`frame::mux_frame`], and the
//! receive path runs the same chain in reverse. [`broadcast`] drives the
//! transmit path from a scenario description.

pub mod behaviour;
pub mod broadcast;
pub mod dabml;
pub mod frame;
pub mod mot;
pub mod pad;
