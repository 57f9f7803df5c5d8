pub mod audio_io;
pub mod dataset;
pub mod dsp;
pub mod edit;
pub mod introspect;
pub mod nn;
pub mod train;
