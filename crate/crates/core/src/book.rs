//! Compiles and runs the snippets of the guide in `book/` as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}
#[doc = include_str!("../../../book/src/mesh-and-kernels.md")]
mod mesh_and_kernels {}
#[doc = include_str!("../../../book/src/scheme.md")]
mod scheme {}
#[doc = include_str!("../../../book/src/time-stepping.md")]
mod time_stepping {}
#[doc = include_str!("../../../book/src/diagnostics.md")]
mod diagnostics {}
#[doc = include_str!("../../../book/src/experiments.md")]
mod experiments {}
#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
