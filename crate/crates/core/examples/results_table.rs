//! Formatting seed results as table cells.

use fumi::harness::format_cell;

fn main() {
    for means in [
        vec![0.882, 0.884, 0.883, 0.881, 0.885],
        vec![0.71, 0.73, 0.72, 0.74, 0.70],
        vec![0.789, 0.793, 0.785, 0.790, 0.788],
        vec![0.5],
    ] {
        println!("{means:?} -> {}", format_cell(&means));
    }
}
