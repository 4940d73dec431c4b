//! Prints the mask every scheme draws for one window, then the hidden-token
//! histogram of the random-mask regime.
//!
//! cargo run --release --example masking_schemes [k]

use trajmask::masking::{random_mask, sample_mask, SchemeId, DEFAULT_WAYPOINT_PROB};
use trajmask::rng;

fn bits(v: &[bool]) -> String {
    v.iter().map(|b| if *b { '#' } else { '.' }).collect()
}

fn main() {
    let k: usize = std::env::args().nth(1).map_or(6, |s| s.parse().expect("k"));
    let mut r = rng::seeded(0);
    println!("'#' = visible input / scored target, k = {k}\n");
    for scheme in SchemeId::EVERY {
        if k < scheme.min_k() {
            println!("{scheme:<9} needs k >= {}", scheme.min_k());
            continue;
        }
        let m = sample_mask(scheme, k, &mut r, DEFAULT_WAYPOINT_PROB).unwrap();
        println!(
            "{:<9} states in {}  out {}   actions in {}  out {}   rtg {}",
            scheme.name(),
            bits(&m.state_in),
            bits(&m.state_out),
            bits(&m.action_in),
            bits(&m.action_out),
            if m.rtg_in { "seen" } else { "-" }
        );
    }

    let draws = 20_000;
    let mut counts = vec![0usize; 2 * k + 1];
    for _ in 0..draws {
        counts[random_mask(k, &mut r).unwrap().num_hidden()] += 1;
    }
    println!("\nhidden tokens under random masking ({draws} draws, flat is the goal):");
    for (n, c) in counts.iter().enumerate() {
        println!("{n:>3} {:>6} {}", c, "*".repeat(c * 40 * (2 * k + 1) / draws));
    }
}
