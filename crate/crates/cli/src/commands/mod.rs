pub mod corpus;
pub mod eval;
pub mod profile;
pub mod train;
pub mod vocab;
