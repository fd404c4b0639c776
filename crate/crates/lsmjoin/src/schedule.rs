//! Interleaving of the input sources into one event order.
//!
//! Entry `i` names the source that delivers event `i`; each source's rows
//! are consumed in file order. Sources are numbered by the alphabetical
//! order of their plan aliases.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule(pub Vec<usize>);

impl Schedule {
    /// Every row of every source exactly once, shuffled with `seed`.
    pub fn random(counts: &[usize], seed: u64) -> Schedule {
        let mut order: Vec<usize> = counts.iter().enumerate().flat_map(|(s, &c)| std::iter::repeat_n(s, c)).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Schedule(order)
    }

    /// Source 0 to exhaustion, then source 1, and so on.
    pub fn sequential(counts: &[usize]) -> Schedule {
        Schedule(counts.iter().enumerate().flat_map(|(s, &c)| std::iter::repeat_n(s, c)).collect())
    }

    /// One source index per line; blank lines and lines starting with `#`
    /// are skipped.
    pub fn parse(text: &str) -> Result<Schedule> {
        let mut order = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            order.push(line.parse().with_context(|| format!("schedule line {}: {line:?} is not a source index", n + 1))?);
        }
        Ok(Schedule(order))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.0.len() * 2);
        for s in &self.0 {
            writeln!(out, "{s}").expect("writing to a String");
        }
        out
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks that no entry names a missing source or asks for more rows
    /// than the source has.
    pub fn validate(&self, counts: &[usize]) -> Result<()> {
        let mut used = vec![0usize; counts.len()];
        for (i, &s) in self.0.iter().enumerate() {
            if s >= counts.len() {
                bail!("schedule entry {i}: source {s} does not exist ({} sources)", counts.len());
            }
            used[s] += 1;
            if used[s] > counts[s] {
                bail!("schedule entry {i}: source {s} is exhausted after {} rows", counts[s]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_is_a_seeded_permutation() {
        let s = Schedule::random(&[3, 0, 2], 9);
        let mut sorted = s.0.clone();
        sorted.sort();
        assert_eq!(sorted, [0, 0, 0, 2, 2]);
        assert_eq!(s, Schedule::random(&[3, 0, 2], 9));
        s.validate(&[3, 0, 2]).unwrap();
    }

    #[test]
    fn text_round_trip_and_validation() {
        let s = Schedule::parse("# header\n0\n1\n\n 1 \n").unwrap();
        assert_eq!(s.0, [0, 1, 1]);
        assert_eq!(Schedule::parse(&s.to_text()).unwrap(), s);
        assert!(s.validate(&[1, 1]).unwrap_err().to_string().contains("exhausted after 1 rows"));
        assert!(s.validate(&[1]).unwrap_err().to_string().contains("does not exist"));
        assert!(Schedule::parse("x\n").is_err());
        assert_eq!(Schedule::sequential(&[2, 1]).0, [0, 0, 1]);
    }
}
