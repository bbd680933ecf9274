pub mod cloud;
pub mod decomp;
pub mod entropy;
pub mod measure;
pub mod prob;
pub mod semigroup;
pub mod sim_group;
pub mod walk;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
