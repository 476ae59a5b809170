pub mod config;
pub mod energy;
pub mod error;
pub mod fixed_point;
pub mod grid;
pub mod limits;
pub mod oracle;
pub mod reaction;
pub mod run;
pub mod trajectory;
pub mod wed;
