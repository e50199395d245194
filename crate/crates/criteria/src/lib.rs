//! Holds the `acceptance` test target, which prints one PASS/FAIL line per
//! end-to-end check. Run it with `cargo test -p delta-lab-criteria`.
