//! Greedy max-min permutation codes: how the guaranteed distance falls as
//! the set grows, and the text format used to pin a set for later runs.
//!
//!     cargo run --example permutation_codes

use curriculum_ssl::permutations::{generate_permutation_set, PermutationSet};

fn main() -> curriculum_ssl::Result<()> {
    println!("4 patches (all 24 orders are candidates):");
    for size in [2, 4, 5, 12, 24] {
        let set = generate_permutation_set(4, size, 0)?;
        println!("  {size:>2} permutations -> min Hamming distance {:?}", set.min_pairwise_distance());
    }

    println!("9 patches (10,000 sampled candidates):");
    for size in [10, 50, 100] {
        let set = generate_permutation_set(9, size, 0)?;
        println!("  {size:>3} permutations -> min Hamming distance {:?}", set.min_pairwise_distance());
    }

    let set = generate_permutation_set(4, 12, 0)?;
    let path = std::env::temp_dir().join("cssl-perms-4x12.txt");
    set.save(&path)?;
    let text = set.to_text();
    print!("\n{}:\n{text}", path.display());
    assert_eq!(PermutationSet::load(&path)?, set);

    // labels are positions in the file
    let p = set.get(5).expect("set has 12 entries");
    println!("label 5 is [{p}]; its inverse [{}] undoes the shuffle", p.inverse());
    Ok(())
}
