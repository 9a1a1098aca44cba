pub mod bits;
pub mod config;
pub mod convert;
pub mod dsp;
pub mod iq;
pub mod qam;
pub mod tx;
pub mod channel;
pub mod rx;
pub mod combine;
pub mod video;
pub mod link;
pub mod experiment;
