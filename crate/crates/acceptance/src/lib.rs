//! Acceptance suite for `crystal-surface`. Everything lives in
//! `tests/acceptance.rs`; run it with `cargo test -p crystal-surface-acceptance`.
