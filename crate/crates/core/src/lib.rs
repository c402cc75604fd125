pub mod decoding;
pub mod eval;
pub mod grammar;
pub mod json;
pub mod oracle;
pub mod precompute;
pub mod regex;
pub mod runtime;
pub mod vocab;
