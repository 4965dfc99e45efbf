pub mod ablate;
pub mod forecast;
pub mod gen_data;
pub mod train;
pub mod verify;
