//! Frontend: tokenizer, parser, infix desugaring and lowering to the IR.

pub mod ast;
pub mod ir;
pub mod lower;
pub mod parser;
pub mod token;

pub use ast::{desugar_infix, print_program, SourceProgram};
pub use lower::{lower, LowerError};
pub use parser::{parse, ParseError};
pub use token::{tokenize, LexError, Token};

use thiserror::Error;

/// A frontend failure: lexing, parsing or lowering.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrontendError {
    #[error("lex error: {0}")]
    Lex(#[from] LexError),
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("lower error: {0}")]
    Lower(#[from] LowerError),
}

/// Tokenize, parse and lower a source text in one step.
pub fn compile(source: &str) -> Result<ir::ProgramIR, FrontendError> {
    let tokens = tokenize(source)?;
    let program = parse(tokens)?;
    Ok(lower(&program)?)
}

/// Tokenize and parse without lowering.
pub fn parse_source(source: &str) -> Result<SourceProgram, FrontendError> {
    let tokens = tokenize(source)?;
    Ok(parse(tokens)?)
}
