use std::fmt;

/// Set of chip ids allowed for one node, stored as a 64-bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Domain(u64);

impl Domain {
    pub const EMPTY: Domain = Domain(0);

    /// `{0, .., num_chips - 1}`.
    pub fn full(num_chips: usize) -> Self {
        debug_assert!(num_chips <= 64);
        if num_chips >= 64 {
            Domain(u64::MAX)
        } else {
            Domain((1u64 << num_chips) - 1)
        }
    }

    pub fn singleton(chip: u32) -> Self {
        Domain(1u64 << chip)
    }

    pub fn from_bits(bits: u64) -> Self {
        Domain(bits)
    }

    pub fn from_values<I: IntoIterator<Item = u32>>(values: I) -> Self {
        Domain(values.into_iter().fold(0, |m, v| m | (1u64 << v)))
    }

    #[inline]
    pub fn bits(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn contains(self, chip: u32) -> bool {
        chip < 64 && self.0 & (1u64 << chip) != 0
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn is_singleton(self) -> bool {
        self.0 != 0 && self.0 & (self.0 - 1) == 0
    }

    /// The single value, if this is a singleton.
    #[inline]
    pub fn value(self) -> Option<u32> {
        self.is_singleton().then(|| self.0.trailing_zeros())
    }

    #[inline]
    pub fn min(self) -> Option<u32> {
        (self.0 != 0).then(|| self.0.trailing_zeros())
    }

    #[inline]
    pub fn max(self) -> Option<u32> {
        (self.0 != 0).then(|| 63 - self.0.leading_zeros())
    }

    #[inline]
    pub fn intersect(self, other: Domain) -> Domain {
        Domain(self.0 & other.0)
    }

    #[inline]
    pub fn without(self, other: Domain) -> Domain {
        Domain(self.0 & !other.0)
    }

    /// Values `>= lo`.
    #[inline]
    pub fn at_least(self, lo: u32) -> Domain {
        if lo >= 64 {
            Domain::EMPTY
        } else {
            Domain(self.0 & (u64::MAX << lo))
        }
    }

    /// Values `<= hi`.
    #[inline]
    pub fn at_most(self, hi: u32) -> Domain {
        if hi >= 63 {
            self
        } else {
            Domain(self.0 & ((1u64 << (hi + 1)) - 1))
        }
    }

    pub fn iter(self) -> impl Iterator<Item = u32> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let v = bits.trailing_zeros();
            bits &= bits - 1;
            Some(v)
        })
    }

    pub fn nth(self, k: usize) -> Option<u32> {
        self.iter().nth(k)
    }
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}
