//! Re-derives the piecewise kernel constants from their constraint system
//! and prints the table checked in at `data/kernel_constants.txt`:
//!
//! ```text
//! cargo run -p rss-entropy --bin derive_kernel_constants > crates/rss-entropy/data/kernel_constants.txt
//! ```
//!
//! It first solves the system from scratch and verifies the frozen table
//! agrees, then prints the report (which includes quadrature residuals of
//! every constraint, so drift in either the solver or the quadrature shows
//! up as a diff).

use rss_entropy::kernels::{piecewise_joe, solve_piecewise_constants};

fn main() {
    for p in 1..=4 {
        let solved = solve_piecewise_constants(p).expect("constraint solve");
        let frozen = *piecewise_joe(p)
            .expect("frozen constants")
            .joe_constants()
            .expect("piecewise family");
        let drift = (solved.xi1 - frozen.xi1)
            .abs()
            .max((solved.xi2 - frozen.xi2).abs())
            .max((solved.a - frozen.a).abs())
            .max((solved.h - frozen.h).abs());
        assert!(
            drift < 1e-9,
            "fresh solve for p={p} drifted {drift:.3e} from the frozen table"
        );
        eprintln!("p={p}: fresh solve agrees with frozen table (max drift {drift:.3e})");
    }
    print!(
        "{}",
        rss_entropy::kernels::constants_report().expect("quadrature residuals")
    );
}
