pub mod admin;
pub mod assembly;
pub mod desirability;
pub mod inventory;
pub mod irt;
pub mod metrics;
pub mod ordinal;
pub mod persona;
pub mod pipeline;
pub mod sim;
pub mod stats;
