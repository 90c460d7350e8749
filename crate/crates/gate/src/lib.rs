//! The acceptance harness lives in `tests/acceptance.rs`.
