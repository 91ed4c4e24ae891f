//! Dataset tooling (placeholder).
