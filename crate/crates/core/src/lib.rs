pub mod agents;
pub mod bus;
pub mod control;
pub mod physics;
pub mod plant;
pub mod statedb;
pub mod twin;
