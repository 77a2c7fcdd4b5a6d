pub mod consensus;
pub mod dev_loop;
pub mod gateway;
pub mod ingestion;
pub mod phase_engine;
pub mod text;
pub mod transcript;
pub mod world_model;
