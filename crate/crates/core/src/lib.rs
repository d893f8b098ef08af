//! Kernel of a sessional dataflow language.
//!
//! Programs are networks of actors that talk over bounded FIFO channels.
//! Every expression carries a *flowstate*: a symbolic, size-parametric
//! description of the communication events it performs. The checker uses
//! flowstates to reject networks that could deadlock, overflow a buffer or
//! race on a channel; the interpreter and the conformance harness then check
//! at run time that the static description was honest.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod ast;
pub mod conformance;
pub mod diag;
pub mod flowstate;
pub mod kinding;
pub mod name;
pub mod netcheck;
pub mod runtime;
pub mod size;
pub mod typecheck;

pub use diag::{Diagnostic, Diagnostics, Tri};
pub use name::{Name, Span};
pub use size::{SizeExpr, SizeValue};
