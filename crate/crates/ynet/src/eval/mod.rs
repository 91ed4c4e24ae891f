//! Scoring suite (placeholder).
