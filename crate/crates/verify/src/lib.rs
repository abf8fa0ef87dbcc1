//! Holds the `acceptance` test target (see `tests/acceptance.rs`). It lives in
//! its own package so that it runs after every other test target in the
//! workspace.
