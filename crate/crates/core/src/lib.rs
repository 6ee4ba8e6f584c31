pub mod cli;
pub mod covariance;
pub mod delay;
pub mod error;
pub mod io;
pub mod model;
pub mod numkernel;
pub mod reference;
pub mod sim;
pub mod synthesis;
