pub mod ablate;
pub mod diversity;
pub mod train;
pub mod verify;
