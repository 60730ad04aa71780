//! Quadtree levels, neighbor and interaction lists.
//!
//! `cargo run --release --example tree_lists`

use ifmm::geometry::{auto_depth, build_tree, generate_balanced_points};

fn main() -> ifmm::Result<()> {
    let n = 4000;
    let depth = auto_depth(n, 2);
    let pts = generate_balanced_points(n, 2, depth, 1)?;
    let tree = build_tree(&pts, depth)?;
    println!("N = {n}, depth {depth}");
    for level in 2..=depth {
        let cl = &tree.levels[level];
        let max_il = cl.iter().map(|c| c.interaction_list.len()).max().unwrap_or(0);
        let max_nb = cl.iter().map(|c| c.neighbors.len()).max().unwrap_or(0);
        println!("level {level}: {} boxes, <= {max_nb} neighbors, <= {max_il} well-separated", cl.len());
    }
    let c = &tree.levels[depth][5];
    println!("leaf 5 at {:?}, half width {}", c.center, c.half_width);
    println!("  neighbors        {:?}", c.neighbors);
    println!("  interaction list {:?}", c.interaction_list);
    println!("  points           {:?}", c.point_range);
    Ok(())
}
