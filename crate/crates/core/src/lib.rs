pub mod frontend;
pub mod nda;
pub mod oracle;
pub mod cucl;
pub mod backend;
pub mod variants;
pub mod corpus;
pub mod tuner;
pub mod graphopt;
pub mod pipeline;
