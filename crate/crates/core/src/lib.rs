pub mod eval;
pub mod fixtures;
pub mod fsutil;
pub mod index;
pub mod matcher;
pub mod pipeline;
pub mod provider;
