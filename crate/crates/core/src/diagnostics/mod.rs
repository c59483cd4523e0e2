//! Self-checks behind the `gradcheck` and `memcheck` commands.

mod gradcheck;
mod memcheck;

pub use gradcheck::{run_gradcheck, CheckResult, Fault, GradcheckReport, META_TOL, STRICT_TOL};
pub use memcheck::{byte_layout, memcheck_bank, memcheck_bytes, synthetic_bank, MemcheckReport, Violation};
