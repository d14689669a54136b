//! Simulation and analysis of NbO2 memristive spiking neurons.

pub mod boundary;
pub mod circuit;
pub mod device;
pub mod integrator;
pub mod network;
pub mod spikes;
pub mod sweep;
