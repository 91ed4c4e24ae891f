//! Loss and optimizer (placeholder).
