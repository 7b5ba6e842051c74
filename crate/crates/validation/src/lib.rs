//! Holds the acceptance run in `tests/acceptance.rs`; nothing is exported.
