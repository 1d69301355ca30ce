use std::collections::BTreeMap;
use std::fmt;

/// Finite multiset with positive multiplicities.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Multiset<T: Ord> {
    counts: BTreeMap<T, u32>,
}

impl<T: Ord> Default for Multiset<T> {
    fn default() -> Self {
        Multiset { counts: BTreeMap::new() }
    }
}

impl<T: Ord + Clone> Multiset<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, x: T, n: u32) {
        if n > 0 {
            *self.counts.entry(x).or_insert(0) += n;
        }
    }

    /// Removes up to `n` copies of `x`; returns how many were removed.
    pub fn remove(&mut self, x: &T, n: u32) -> u32 {
        match self.counts.get_mut(x) {
            None => 0,
            Some(c) if *c > n => {
                *c -= n;
                n
            }
            Some(c) => {
                let taken = *c;
                self.counts.remove(x);
                taken
            }
        }
    }

    pub fn count(&self, x: &T) -> u32 {
        self.counts.get(x).copied().unwrap_or(0)
    }

    pub fn contains(&self, x: &T) -> bool {
        self.counts.contains_key(x)
    }

    /// Cardinality: sum of multiplicities.
    pub fn len(&self) -> usize {
        self.counts.values().map(|&c| c as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn sum(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (x, &n) in &other.counts {
            out.insert(x.clone(), n);
        }
        out
    }

    /// Truncated difference: (M−M')(x) = max{0, M(x)−M'(x)}.
    pub fn difference(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (x, &n) in &other.counts {
            out.remove(x, n);
        }
        out
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.counts.iter().all(|(x, &n)| other.count(x) >= n)
    }

    /// Distinct elements with their multiplicities, in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = (&T, u32)> {
        self.counts.iter().map(|(x, &n)| (x, n))
    }

    /// Elements repeated by multiplicity, in ascending order.
    pub fn elements(&self) -> impl Iterator<Item = &T> {
        self.counts
            .iter()
            .flat_map(|(x, &n)| std::iter::repeat_n(x, n as usize))
    }

    /// Distinct elements (the alphabet when T is an action).
    pub fn keys(&self) -> impl Iterator<Item = &T> {
        self.counts.keys()
    }

    pub fn map<U: Ord + Clone>(&self, mut f: impl FnMut(&T) -> U) -> Multiset<U> {
        let mut out = Multiset::new();
        for (x, &n) in &self.counts {
            out.insert(f(x), n);
        }
        out
    }
}

impl<T: Ord + Clone> FromIterator<T> for Multiset<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut m = Multiset::new();
        for x in iter {
            m.insert(x, 1);
        }
        m
    }
}

impl<T: Ord + Clone + fmt::Display> fmt::Display for Multiset<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, x) in self.elements().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{x}")?;
        }
        f.write_str("}")
    }
}
