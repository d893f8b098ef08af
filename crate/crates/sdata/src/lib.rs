//! Text front end for `sdata-core`: the surface syntax, JSON output
//! formats and the helpers behind the `sdata` binary.

pub mod json;
pub mod syntax;

pub use syntax::{parse_program, print_program};
