//! Network construction (placeholder).
