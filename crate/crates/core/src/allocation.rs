//! Subsets of the agent set, encoded as bitmasks.
//!
//! The allocation space is the power set of agents. The canonical total
//! order is ascending mask value (bit `i` = agent `i`), which puts the
//! empty set first and makes `enumerate_allocations(n, Some(i))` an exact
//! subsequence of `enumerate_allocations(n, None)`.

use std::fmt;
use std::str::FromStr;

/// A subset of agents, at most [`MAX_AGENTS`] of them.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Allocation(u32);

/// Hard cap on the number of agents a scenario may declare.
pub const MAX_AGENTS: usize = 20;

impl Allocation {
    /// The empty allocation: nobody is selected.
    pub const EMPTY: Allocation = Allocation(0);

    pub fn from_bits(bits: u32) -> Allocation {
        Allocation(bits)
    }

    pub fn from_members<I: IntoIterator<Item = usize>>(members: I) -> Allocation {
        let mut bits = 0u32;
        for m in members {
            assert!(m < MAX_AGENTS, "agent index {m} out of range");
            bits |= 1 << m;
        }
        Allocation(bits)
    }

    pub fn singleton(agent: usize) -> Allocation {
        Allocation::from_members([agent])
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, agent: usize) -> bool {
        agent < MAX_AGENTS && self.0 & (1 << agent) != 0
    }

    pub fn insert(self, agent: usize) -> Allocation {
        assert!(agent < MAX_AGENTS);
        Allocation(self.0 | (1 << agent))
    }

    pub fn remove(self, agent: usize) -> Allocation {
        Allocation(self.0 & !(1u32 << agent.min(31)))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Number of selected agents.
    pub fn size(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Selected agents in ascending index order.
    pub fn members(self) -> Members {
        Members(self.0)
    }
}

/// Iterator over the members of an [`Allocation`], ascending.
pub struct Members(u32);

impl Iterator for Members {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let idx = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(idx)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Members {}

impl fmt::Display for Allocation {
    /// Formats as `{0 2}`; the empty set as `{}`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, m) in self.members().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Allocation {
    type Err = String;

    /// Parses the `{0 2}` form produced by `Display`.
    fn from_str(s: &str) -> Result<Allocation, String> {
        let inner = s
            .strip_prefix('{')
            .and_then(|t| t.strip_suffix('}'))
            .ok_or_else(|| format!("allocation must be brace-delimited, got `{s}`"))?;
        let mut bits = 0u32;
        for tok in inner.split_whitespace() {
            let m: usize = tok
                .parse()
                .map_err(|_| format!("bad agent index `{tok}` in allocation `{s}`"))?;
            if m >= MAX_AGENTS {
                return Err(format!("agent index {m} exceeds the supported maximum"));
            }
            if bits & (1 << m) != 0 {
                return Err(format!("agent {m} listed twice in allocation `{s}`"));
            }
            bits |= 1 << m;
        }
        Ok(Allocation(bits))
    }
}

/// All subsets of `{0, .., n-1}` in canonical order, the empty set first.
///
/// With `excluded = Some(i)` only subsets that omit agent `i` are produced;
/// the result is exactly the subsequence of the unrestricted enumeration
/// whose members omit `i`.
pub fn enumerate_allocations(n: usize, excluded: Option<usize>) -> Vec<Allocation> {
    assert!((1..=MAX_AGENTS).contains(&n), "agent count {n} out of range");
    if let Some(i) = excluded {
        assert!(i < n, "excluded agent {i} out of range");
    }
    let mut out = Vec::with_capacity(1 << (n - excluded.is_some() as usize));
    for bits in 0..(1u32 << n) {
        if let Some(i) = excluded {
            if bits & (1 << i) != 0 {
                continue;
            }
        }
        out.push(Allocation(bits));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_two_agents() {
        let all = enumerate_allocations(2, None);
        let expect: Vec<Allocation> = [vec![], vec![0], vec![1], vec![0, 1]]
            .into_iter()
            .map(Allocation::from_members)
            .collect();
        assert_eq!(all, expect);
    }

    #[test]
    fn excluding_agent_gives_subsequence() {
        for n in 1..=4 {
            let all = enumerate_allocations(n, None);
            assert_eq!(all.len(), 1 << n);
            for i in 0..n {
                let without: Vec<Allocation> =
                    all.iter().copied().filter(|a| !a.contains(i)).collect();
                assert_eq!(enumerate_allocations(n, Some(i)), without);
            }
        }
    }

    #[test]
    fn three_agents_has_eight_subsets() {
        assert_eq!(enumerate_allocations(3, None).len(), 8);
        assert_eq!(enumerate_allocations(3, Some(0)).len(), 4);
    }

    #[test]
    fn display_round_trips() {
        for a in enumerate_allocations(4, None) {
            let s = a.to_string();
            assert_eq!(s.parse::<Allocation>().unwrap(), a);
        }
        assert_eq!(Allocation::EMPTY.to_string(), "{}");
        assert_eq!(Allocation::from_members([0, 2]).to_string(), "{0 2}");
    }
}
