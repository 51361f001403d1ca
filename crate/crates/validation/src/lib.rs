//! Holds the acceptance suite under `tests/`; the library itself is empty.
