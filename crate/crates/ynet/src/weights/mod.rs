//! Checkpoint format (placeholder).
