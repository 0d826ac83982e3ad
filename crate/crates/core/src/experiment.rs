//! Placeholder while the harness is under construction.
