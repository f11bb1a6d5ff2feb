pub mod config;
pub mod output;
pub mod scenarios;
pub mod systems;
pub mod verify;
