//! Subshifts of finite type and their admissible words.
//!
//! Symbols are stored 0-based. Parsing and display use 1-based symbols.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite word over the alphabet, stored as 0-based bytes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Word(Vec<u8>);

impl Word {
    pub fn new(symbols: Vec<u8>) -> Self {
        Word(symbols)
    }

    pub fn empty() -> Self {
        Word(Vec::new())
    }

    /// Builds a word from 1-based symbols.
    pub fn from_one_based(symbols: &[usize]) -> Result<Self> {
        symbols
            .iter()
            .map(|&s| {
                if (1..=256).contains(&s) {
                    Ok((s - 1) as u8)
                } else {
                    Err(Error::InvalidInput(format!("symbol {s} out of range")))
                }
            })
            .collect::<Result<Vec<u8>>>()
            .map(Word)
    }

    /// Parses "121" or "1.2.1" (1-based symbols).
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() {
            return Ok(Word::empty());
        }
        let parts: Vec<usize> = if text.contains(['.', ' ', ',']) {
            text.split(['.', ' ', ','])
                .filter(|p| !p.is_empty())
                .map(|p| p.parse::<usize>().map_err(|_| Error::InvalidInput(format!("bad symbol `{p}`"))))
                .collect::<Result<_>>()?
        } else {
            text.chars()
                .map(|c| {
                    c.to_digit(10)
                        .map(|v| v as usize)
                        .ok_or_else(|| Error::InvalidInput(format!("bad symbol `{c}`")))
                })
                .collect::<Result<_>>()?
        };
        Word::from_one_based(&parts)
    }

    pub fn symbols(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<usize> {
        self.0.first().map(|&s| s as usize)
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().map(|&s| s as usize)
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    pub fn push(&mut self, symbol: usize) {
        self.0.push(symbol as u8);
    }

    pub fn prefix(&self, n: usize) -> Word {
        Word(self.0[..n].to_vec())
    }

    pub fn suffix_from(&self, k: usize) -> Word {
        Word(self.0[k..].to_vec())
    }

    /// `n` copies of the word.
    pub fn repeat(&self, n: usize) -> Word {
        Word(self.0.repeat(n))
    }

    /// Cyclic rotation starting at position `k`.
    pub fn rotate(&self, k: usize) -> Word {
        let mut v = self.0.clone();
        if !v.is_empty() {
            v.rotate_left(k % self.0.len());
        }
        Word(v)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wide = self.0.iter().any(|&s| s >= 9);
        for (k, &s) in self.0.iter().enumerate() {
            if wide && k > 0 {
                write!(f, ".")?;
            }
            write!(f, "{}", s as usize + 1)?;
        }
        Ok(())
    }
}

/// A one-sided subshift of finite type with a primitive adjacency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Subshift {
    q: usize,
    adjacency: Vec<Vec<bool>>,
    mixing_gap: usize,
}

fn bool_mul(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let q = a.len();
    let mut out = vec![vec![false; q]; q];
    for i in 0..q {
        for k in 0..q {
            if a[i][k] {
                for j in 0..q {
                    out[i][j] |= b[k][j];
                }
            }
        }
    }
    out
}

impl Subshift {
    pub fn new(q: usize, adjacency: &[Vec<u8>]) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidInput("alphabet size must be at least 1".into()));
        }
        if q > 256 {
            return Err(Error::InvalidInput("alphabet size above 256 is not supported".into()));
        }
        if adjacency.len() != q || adjacency.iter().any(|r| r.len() != q) {
            return Err(Error::InvalidInput(format!("adjacency must be {q}x{q}")));
        }
        if adjacency.iter().flatten().any(|&v| v > 1) {
            return Err(Error::InvalidInput("adjacency entries must be 0 or 1".into()));
        }
        let adj: Vec<Vec<bool>> = adjacency
            .iter()
            .map(|r| r.iter().map(|&v| v == 1).collect())
            .collect();
        for s in 0..q {
            if !adj[s].iter().any(|&b| b) || !(0..q).any(|a| adj[a][s]) {
                return Err(Error::ZeroRowOrColumn { symbol: s + 1 });
            }
        }
        let bound = q * q;
        let mut power = adj.clone();
        for exponent in 1..=bound {
            if power.iter().flatten().all(|&b| b) {
                return Ok(Subshift {
                    q,
                    adjacency: adj,
                    mixing_gap: exponent - 1,
                });
            }
            power = bool_mul(&power, &adj);
        }
        Err(Error::NonPrimitive { bound })
    }

    pub fn full_shift(q: usize) -> Self {
        Subshift::new(q, &vec![vec![1u8; q]; q]).expect("full shift is primitive")
    }

    pub fn golden_mean() -> Self {
        Subshift::new(2, &[vec![1, 1], vec![1, 0]]).expect("golden mean shift is primitive")
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn mixing_gap(&self) -> usize {
        self.mixing_gap
    }

    pub fn allowed(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b]
    }

    pub fn adjacency_rows(&self) -> Vec<Vec<u8>> {
        self.adjacency
            .iter()
            .map(|r| r.iter().map(|&b| b as u8).collect())
            .collect()
    }

    pub fn is_full_shift(&self) -> bool {
        self.adjacency.iter().flatten().all(|&b| b)
    }

    pub fn successors(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.q).filter(move |&b| self.adjacency[a][b])
    }

    pub fn predecessors(&self, b: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.q).filter(move |&a| self.adjacency[a][b])
    }

    pub fn is_admissible(&self, w: &Word) -> bool {
        let s = w.symbols();
        s.iter().all(|&a| (a as usize) < self.q)
            && s.windows(2).all(|p| self.adjacency[p[0] as usize][p[1] as usize])
    }

    /// Admissible and closing up: last symbol may be followed by the first.
    pub fn is_cyclically_admissible(&self, w: &Word) -> bool {
        match (w.first(), w.last()) {
            (Some(f), Some(l)) => self.is_admissible(w) && self.adjacency[l][f],
            _ => false,
        }
    }

    /// Sum of the entries of adjacency^(n-1), saturating at `u128::MAX`.
    pub fn count_words(&self, n: usize) -> u128 {
        assert!(n >= 1, "word length must be at least 1");
        let mut v = vec![1u128; self.q];
        for _ in 1..n {
            let mut next = vec![0u128; self.q];
            for a in 0..self.q {
                for b in self.successors(a) {
                    next[b] = next[b].saturating_add(v[a]);
                }
            }
            v = next;
        }
        v.iter().fold(0u128, |acc, &x| acc.saturating_add(x))
    }

    /// Admissible words of length `n` in lexicographic order.
    pub fn enumerate_words(&self, n: usize) -> WordIter<'_> {
        assert!(n >= 1, "word length must be at least 1");
        WordIter::new(self, n, Vec::new())
    }

    /// Admissible words of length `n` extending `prefix`, in lexicographic order.
    pub fn words_with_prefix(&self, prefix: &Word, n: usize) -> WordIter<'_> {
        WordIter::new(self, n, prefix.symbols().to_vec())
    }

    /// Same sequence as `enumerate_words`, built in parallel chunks split by first symbol.
    pub fn par_enumerate_words(&self, n: usize) -> Vec<Word> {
        let chunks: Vec<Vec<Word>> = (0..self.q)
            .into_par_iter()
            .map(|a| self.words_with_prefix(&Word::new(vec![a as u8]), n).collect())
            .collect();
        chunks.into_iter().flatten().collect()
    }

    /// All words K of length `k` such that iKj is admissible.
    pub fn joining_words(&self, i: usize, j: usize, k: usize) -> Vec<Word> {
        if k == 0 {
            return if self.adjacency[i][j] { vec![Word::empty()] } else { Vec::new() };
        }
        self.enumerate_words(k)
            .filter(|w| {
                self.adjacency[i][w.first().unwrap()] && self.adjacency[w.last().unwrap()][j]
            })
            .collect()
    }

    /// The k-block presentation: symbols are the admissible k-words in lexicographic order.
    pub fn higher_block(&self, k: usize) -> Result<(Subshift, Vec<Word>)> {
        assert!(k >= 1);
        let blocks: Vec<Word> = self.enumerate_words(k).collect();
        let m = blocks.len();
        if m > 256 {
            return Err(Error::InvalidInput(format!("{m} blocks exceed the 256-symbol limit")));
        }
        let mut adj = vec![vec![0u8; m]; m];
        for (u, bu) in blocks.iter().enumerate() {
            for (v, bv) in blocks.iter().enumerate() {
                let ok = bu.symbols()[1..] == bv.symbols()[..k - 1]
                    && self.adjacency[bu.last().unwrap()][bv.last().unwrap()];
                adj[u][v] = ok as u8;
            }
        }
        Ok((Subshift::new(m, &adj)?, blocks))
    }
}

/// Lexicographic odometer over admissible words with a fixed prefix.
pub struct WordIter<'a> {
    s: &'a Subshift,
    n: usize,
    fixed: usize,
    cur: Vec<u8>,
    done: bool,
}

impl<'a> WordIter<'a> {
    fn new(s: &'a Subshift, n: usize, prefix: Vec<u8>) -> Self {
        let fixed = prefix.len();
        let mut it = WordIter {
            s,
            n,
            fixed,
            cur: prefix,
            done: false,
        };
        let valid = fixed <= n && s.is_admissible(&Word(it.cur.clone()));
        if !valid || !it.fill_from(fixed) {
            it.done = true;
        }
        it
    }

    // Completes cur[pos..] with the smallest admissible continuation.
    fn fill_from(&mut self, pos: usize) -> bool {
        self.cur.truncate(pos);
        while self.cur.len() < self.n {
            let next = match self.cur.last() {
                None => Some(0),
                Some(&a) => self.s.successors(a as usize).next(),
            };
            match next {
                Some(b) => self.cur.push(b as u8),
                None => return false,
            }
        }
        true
    }

    fn advance(&mut self) -> bool {
        let mut pos = self.n;
        while pos > self.fixed {
            pos -= 1;
            let current = self.cur[pos] as usize;
            let candidate = (current + 1..self.s.q).find(|&b| {
                pos == 0 || self.s.adjacency[self.cur[pos - 1] as usize][b]
            });
            if let Some(b) = candidate {
                self.cur[pos] = b as u8;
                if self.fill_from(pos + 1) {
                    return true;
                }
                // Every symbol has a successor, so fill_from cannot fail here.
            }
        }
        false
    }
}

impl Iterator for WordIter<'_> {
    type Item = Word;

    fn next(&mut self) -> Option<Word> {
        if self.done {
            return None;
        }
        let out = Word(self.cur.clone());
        if !self.advance() {
            self.done = true;
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &Subshift, n: usize) -> Vec<String> {
        s.enumerate_words(n).map(|w| w.to_string()).collect()
    }

    #[test]
    fn mixing_gap_values() {
        assert_eq!(Subshift::full_shift(3).mixing_gap(), 0);
        assert_eq!(Subshift::golden_mean().mixing_gap(), 1);
    }

    #[test]
    fn periodic_matrix_rejected() {
        let e = Subshift::new(2, &[vec![0, 1], vec![1, 0]]).unwrap_err();
        assert!(matches!(e, Error::NonPrimitive { .. }));
    }

    #[test]
    fn empty_column_rejected() {
        let e = Subshift::new(2, &[vec![1, 0], vec![1, 0]]).unwrap_err();
        assert_eq!(e, Error::ZeroRowOrColumn { symbol: 2 });
    }

    #[test]
    fn counts() {
        assert_eq!(Subshift::full_shift(3).count_words(2), 9);
        assert_eq!(Subshift::golden_mean().count_words(1), 2);
        // words over {1,2} of length 3 avoiding "22"
        let brute = (0..8u32)
            .filter(|m| (0..2).all(|k| (m >> k) & 3 != 3))
            .count() as u128;
        assert_eq!(brute, 5);
        assert_eq!(Subshift::golden_mean().count_words(3), brute);
    }

    #[test]
    fn enumeration_order() {
        assert_eq!(words(&Subshift::golden_mean(), 2), ["11", "12", "21"]);
        assert_eq!(words(&Subshift::full_shift(2), 2), ["11", "12", "21", "22"]);
        assert_eq!(words(&Subshift::full_shift(4), 1), ["1", "2", "3", "4"]);
    }

    #[test]
    fn joining() {
        let g = Subshift::golden_mean();
        assert_eq!(g.joining_words(1, 1, 1), vec![Word::new(vec![0])]);
        assert_eq!(g.joining_words(0, 0, 0), vec![Word::empty()]);
        assert!(g.joining_words(1, 1, 0).is_empty());
        assert_eq!(Subshift::full_shift(3).joining_words(2, 1, 0), vec![Word::empty()]);
    }

    #[test]
    fn parse_and_display_round_trip() {
        let w = Word::parse("1211").unwrap();
        assert_eq!(w.symbols(), &[0, 1, 0, 0]);
        assert_eq!(w.to_string(), "1211");
        let wide = Word::parse("1.12.3").unwrap();
        assert_eq!(wide.to_string(), "1.12.3");
    }

    #[test]
    fn higher_block_counts_match() {
        let g = Subshift::golden_mean();
        let (b, blocks) = g.higher_block(2).unwrap();
        assert_eq!(blocks.len(), 3);
        for n in 1..8 {
            assert_eq!(b.count_words(n), g.count_words(n + 1));
        }
    }
}
