//! Library surface of the command-line tool, split out so the commands can
//! be driven in-process by tests.

pub mod app;
