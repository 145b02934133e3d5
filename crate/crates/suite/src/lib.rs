//! Test-only crate; the criteria live in `tests/acceptance.rs`.
