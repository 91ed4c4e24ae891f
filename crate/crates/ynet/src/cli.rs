//! Command-line workflow (placeholder).
