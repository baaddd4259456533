//! CUCL: the CUDA/OpenCL intersection language.
//!
//! Templates carry `%(var)` placeholders; instantiation specializes them on
//! concrete ND-Array sizes (or routes sizes through a metadata argument),
//! rendering swaps platform idioms for one dialect, and the parser turns
//! idiom-form source into [`ir::KernelIr`] for the simulated backend.

pub mod idiom;
pub mod ir;
mod lex;
mod parse;
pub mod template;

use thiserror::Error;

use crate::nda::DimsMismatch;

pub use idiom::{dialect_diff, render_dialect, unrender_dialect, Dialect, DialectDiff, IDIOM_TABLE};
pub use parse::{parse_body, parse_kernel};
pub use template::{check_args, instantiate, ArgDecl, ArgDir, CuclTemplate, InstMode, Instantiation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CuclError {
    #[error("{line}:{col}: expected {expected}")]
    Parse { line: usize, col: usize, expected: String },
    #[error("{line}:{col}: unsupported construct {token}")]
    Unsupported { token: String, line: usize, col: usize },
    #[error("unknown idiom `{0}`")]
    UnknownIdiom(String),
    #[error("unknown template variable `{0}`")]
    UnknownTemplateVar(String),
    #[error("template variable `{0}` left unresolved in a static instantiation")]
    UnresolvedInStatic(String),
    #[error("no value supplied for template variable `{0}`")]
    MissingVarValue(String),
    #[error("argument `{0}` is not bound")]
    UnboundArg(String),
    #[error("binding for unknown argument `{0}`")]
    UnexpectedArg(String),
    #[error("argument `{arg}`: {mismatch}")]
    ArgMismatch { arg: String, mismatch: DimsMismatch },
    #[error("bad template: {0}")]
    BadTemplate(String),
}
