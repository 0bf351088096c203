pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod data;
pub mod model;
pub mod qnn;
pub mod qsim;
pub mod train;
