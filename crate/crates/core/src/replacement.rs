//! Replacement state: per-set true LRU for set-associative fills and a seeded
//! uniform selector for subcache fills.

/// Per-set recency lists, most recent first.
///
/// A fresh state orders every set by ascending way index, so way 0 is the
/// most recent and way `W - 1` the first victim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LruState {
    ways: usize,
    order: Vec<u16>,
}

impl LruState {
    pub fn new(num_sets: usize, num_ways: usize) -> Self {
        assert!(num_ways <= u16::MAX as usize + 1, "too many ways");
        let order = (0..num_sets)
            .flat_map(|_| (0..num_ways).map(|w| w as u16))
            .collect();
        Self {
            ways: num_ways,
            order,
        }
    }

    pub fn num_sets(&self) -> usize {
        self.order.len() / self.ways.max(1)
    }

    /// Recency list of `set`, most recent first.
    pub fn order(&self, set: usize) -> impl Iterator<Item = usize> + '_ {
        self.set_slice(set).iter().map(|&w| w as usize)
    }

    fn set_slice(&self, set: usize) -> &[u16] {
        &self.order[set * self.ways..(set + 1) * self.ways]
    }

    /// Moves `way` to the most-recent position of `set`.
    pub fn touch(&mut self, set: usize, way: usize) {
        let list = &mut self.order[set * self.ways..(set + 1) * self.ways];
        let pos = list
            .iter()
            .position(|&w| w as usize == way)
            .expect("way out of range");
        list[..=pos].rotate_right(1);
    }

    /// Least recently used way of `set`.
    pub fn victim(&self, set: usize) -> usize {
        *self.set_slice(set).last().expect("set has no ways") as usize
    }

    /// Least recently used way of `set` among those accepted by `eligible`.
    pub fn victim_where(
        &self,
        set: usize,
        mut eligible: impl FnMut(usize) -> bool,
    ) -> Option<usize> {
        self.set_slice(set)
            .iter()
            .rev()
            .map(|&w| w as usize)
            .find(|&w| eligible(w))
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based 64-bit generator (SplitMix64 output function over a Weyl
/// sequence). Not cryptographic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
    counter: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Independent stream for sub-experiment `stream` under the same seed.
    pub fn derive(seed: u64, stream: u64) -> Self {
        Self::new(mix64(seed ^ mix64(stream.wrapping_add(GOLDEN_GAMMA))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(
            self.seed
                .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform integer in `[0, n)`, unbiased (multiply-shift with rejection).
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_bool(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Uniform victim over `n_isolated` subcache entries. Takes no occupancy
/// information, so which entries are in use cannot bias the choice.
pub fn random_victim(rng: &mut SeededRng, n_isolated: usize) -> usize {
    rng.next_below(n_isolated as u64) as usize
}
