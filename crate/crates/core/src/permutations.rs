//! Permutation label space for the jigsaw task.
//!
//! A [`PermutationSet`] is a small code in the symmetric group `S_n`: the
//! index of each permutation is its class label, and members are chosen
//! greedily so that the minimum pairwise Hamming distance stays high.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

/// Largest `n` for which candidates are drawn from all of `S_n`.
pub const EXHAUSTIVE_MAX_PATCHES: usize = 5;
/// Size of the seeded candidate pool used above [`EXHAUSTIVE_MAX_PATCHES`].
pub const CANDIDATE_POOL_SIZE: usize = 10_000;

/// A bijection on `{0, …, n−1}`; `order[i]` is the source index placed at position `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n || seen[i] {
                return Err(Error::Validation(format!(
                    "{order:?} is not a permutation of 0..{n}"
                )));
            }
            seen[i] = true;
        }
        Ok(Self { order })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
        }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.order.len()];
        for (pos, &src) in self.order.iter().enumerate() {
            inv[src] = pos;
        }
        Self { order: inv }
    }

    /// Shuffle `items` so that output position `i` holds `items[order[i]]`.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        if items.len() != self.order.len() {
            return Err(Error::LengthMismatch {
                expected: self.order.len(),
                got: items.len(),
            });
        }
        Ok(self.order.iter().map(|&i| items[i].clone()).collect())
    }

    fn random(n: usize, rng: &mut RngStream) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order }
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.order.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Number of positions at which `p` and `q` differ.
pub fn hamming_distance(p: &Permutation, q: &Permutation) -> Result<usize> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(distance_unchecked(&p.order, &q.order))
}

fn distance_unchecked(p: &[usize], q: &[usize]) -> usize {
    p.iter().zip(q).filter(|(a, b)| a != b).count()
}

/// `n!`, saturating at `usize::MAX`.
pub fn factorial(n: usize) -> usize {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k)).unwrap_or(usize::MAX)
}

/// All permutations of `0..n` in lexicographic order.
pub fn all_permutations(n: usize) -> Vec<Permutation> {
    let mut out = Vec::with_capacity(factorial(n));
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(Permutation { order: cur.clone() });
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// Ordered jigsaw label space. The position of a permutation is its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSet {
    perms: Vec<Permutation>,
    n_patches: usize,
    min_pairwise_distance: Option<usize>,
}

impl PermutationSet {
    /// Validates distinctness and equal lengths, and caches the minimum distance.
    pub fn new(perms: Vec<Permutation>) -> Result<Self> {
        let first = perms.first().ok_or(Error::Empty("permutation set"))?;
        let n_patches = first.len();
        let mut seen = HashSet::with_capacity(perms.len());
        for p in &perms {
            if p.len() != n_patches {
                return Err(Error::LengthMismatch {
                    expected: n_patches,
                    got: p.len(),
                });
            }
            if !seen.insert(p) {
                return Err(Error::Validation(format!("duplicate permutation {p}")));
            }
        }
        let min_pairwise_distance = min_pairwise(&perms);
        Ok(Self {
            perms,
            n_patches,
            min_pairwise_distance,
        })
    }

    pub fn perms(&self) -> &[Permutation] {
        &self.perms
    }

    pub fn get(&self, label: usize) -> Option<&Permutation> {
        self.perms.get(label)
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    /// Minimum Hamming distance over unordered pairs; `None` for a singleton set.
    pub fn min_pairwise_distance(&self) -> Option<usize> {
        self.min_pairwise_distance
    }

    pub fn label_of(&self, p: &Permutation) -> Option<usize> {
        self.perms.iter().position(|q| q == p)
    }

    /// Writes the set as a header line `n_patches set_size` followed by one
    /// space-separated permutation per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n_patches, self.perms.len());
        for p in &self.perms {
            s.push_str(&p.to_string());
            s.push('\n');
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let parse_ints = |line: &str, no: usize| -> Result<Vec<usize>> {
            line.split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| err(no, format!("invalid integer {t:?}")))
                })
                .collect()
        };

        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (hno, header) = lines
            .next()
            .ok_or_else(|| err(1, "missing header `n_patches set_size`".into()))?;
        let header = parse_ints(header, hno)?;
        let [n_patches, set_size] = header[..] else {
            return Err(err(hno, "header must be `n_patches set_size`".into()));
        };

        let mut perms = Vec::with_capacity(set_size);
        for (no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let order = parse_ints(line, no)?;
            if order.len() != n_patches {
                return Err(err(
                    no,
                    format!("expected {n_patches} indices, found {}", order.len()),
                ));
            }
            perms.push(Permutation::new(order).map_err(|e| err(no, e.to_string()))?);
        }
        if perms.len() != set_size {
            return Err(err(
                text.lines().count().max(1),
                format!("header declares {set_size} permutations, found {}", perms.len()),
            ));
        }
        Self::new(perms)
    }
}

fn min_pairwise(perms: &[Permutation]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in perms.iter().enumerate() {
        for q in &perms[i + 1..] {
            let d = distance_unchecked(&p.order, &q.order);
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    }
    best
}

/// Greedy max-min selection of `set_size` permutations of `n_patches` items.
///
/// Starts from a seeded random permutation and repeatedly appends the
/// candidate whose minimum distance to the current selection is largest,
/// ties going to the lexicographically smallest order. Candidates are all of
/// `S_n` for `n ≤ 5` and a seeded pool of [`CANDIDATE_POOL_SIZE`] draws above.
pub fn generate_permutation_set(
    n_patches: usize,
    set_size: usize,
    seed: u64,
) -> Result<PermutationSet> {
    if n_patches < 2 {
        return Err(invalid(format!("n_patches must be >= 2, got {n_patches}")));
    }
    let group_order = factorial(n_patches);
    if set_size == 0 || set_size > group_order {
        return Err(invalid(format!(
            "set_size must be in 1..={group_order} for {n_patches} patches, got {set_size}"
        )));
    }

    let mut rng = RngStream::from_seed(seed);
    let start = Permutation::random(n_patches, &mut rng);

    let mut candidates = if n_patches <= EXHAUSTIVE_MAX_PATCHES {
        all_permutations(n_patches)
    } else {
        let mut pool: Vec<Permutation> = (0..CANDIDATE_POOL_SIZE)
            .map(|_| Permutation::random(n_patches, &mut rng))
            .collect();
        pool.sort();
        pool.dedup();
        pool
    };
    candidates.retain(|c| *c != start);
    if candidates.len() + 1 < set_size {
        return Err(invalid(format!(
            "candidate pool holds {} permutations, cannot select {set_size}",
            candidates.len() + 1
        )));
    }

    // min distance from each remaining candidate to the selection so far
    let mut min_dist: Vec<usize> = candidates
        .iter()
        .map(|c| distance_unchecked(&c.order, &start.order))
        .collect();
    let mut selected = vec![start];

    while selected.len() < set_size {
        // candidates are kept in lexicographic order, so the first maximum wins ties
        let (best, _) = min_dist
            .iter()
            .enumerate()
            .fold((0, 0), |(bi, bd), (i, &d)| if d > bd { (i, d) } else { (bi, bd) });
        let pick = candidates.remove(best);
        min_dist.remove(best);
        for (c, d) in candidates.iter().zip(min_dist.iter_mut()) {
            *d = (*d).min(distance_unchecked(&c.order, &pick.order));
        }
        selected.push(pick);
    }

    PermutationSet::new(selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perm(v: &[usize]) -> Permutation {
        Permutation::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hamming_examples() {
        let id = perm(&[0, 1, 2, 3]);
        assert_eq!(hamming_distance(&id, &id).unwrap(), 0);
        assert_eq!(hamming_distance(&id, &perm(&[1, 0, 3, 2])).unwrap(), 4);
        assert_eq!(hamming_distance(&id, &perm(&[1, 0, 2, 3])).unwrap(), 2);
    }

    #[test]
    fn hamming_length_mismatch() {
        assert!(matches!(
            hamming_distance(&perm(&[0, 1]), &perm(&[0, 1, 2])),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_bijection() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
    }

    #[test]
    fn enumerates_symmetric_group() {
        let all = all_permutations(4);
        assert_eq!(all.len(), 24);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(all_permutations(1).len(), 1);
    }

    #[test]
    fn inverse_undoes_apply() {
        let p = perm(&[2, 0, 3, 1]);
        let items = ['a', 'b', 'c', 'd'];
        let shuffled = p.apply(&items).unwrap();
        assert_eq!(shuffled, vec!['c', 'a', 'd', 'b']);
        assert_eq!(p.inverse().apply(&shuffled).unwrap(), items.to_vec());
    }

    #[test]
    fn full_group_has_distance_two() {
        let set = generate_permutation_set(4, 24, 0).unwrap();
        assert_eq!(set.len(), 24);
        assert_eq!(set.min_pairwise_distance(), Some(2));
    }

    #[test]
    fn second_pick_is_a_derangement_of_the_first() {
        for seed in 0..50 {
            let set = generate_permutation_set(4, 2, seed).unwrap();
            assert_eq!(set.min_pairwise_distance(), Some(4), "seed {seed}");
        }
    }

    #[test]
    fn generation_errors() {
        assert!(generate_permutation_set(4, 25, 0).is_err());
        assert!(generate_permutation_set(1, 1, 0).is_err());
        assert!(generate_permutation_set(4, 0, 0).is_err());
    }

    #[test]
    fn large_n_uses_pool() {
        let set = generate_permutation_set(9, 30, 5).unwrap();
        assert_eq!(set.len(), 30);
        assert!(set.min_pairwise_distance().unwrap() >= 7);
        assert_eq!(set, generate_permutation_set(9, 30, 5).unwrap());
    }

    #[test]
    fn parse_reports_offending_line() {
        let p = Path::new("perms.txt");
        let e = PermutationSet::parse("4 2\n0 1 2 3\n0 1 x 3\n", p).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = PermutationSet::parse("", p).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
        let e = PermutationSet::parse("4 2\n0 1 2 3\n0 1 1 3\n", p).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = PermutationSet::parse("4 2\n0 1 2 3\n0 1 2 3\n", p).unwrap_err();
        assert!(matches!(e, Error::Validation(_)), "{e}");
    }
}
