/// Binary indexed tree over counts, indices `0..len`.
#[derive(Debug, Clone, Default)]
pub struct Fenwick {
    tree: Vec<u32>,
}

impl Fenwick {
    pub fn new(len: usize) -> Self {
        Self {
            tree: vec![0; len + 1],
        }
    }

    /// Resets to `len` zeroed slots, reusing the allocation.
    pub fn reset(&mut self, len: usize) {
        self.tree.clear();
        self.tree.resize(len + 1, 0);
    }

    pub fn len(&self) -> usize {
        self.tree.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add(&mut self, idx: usize) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted items with index `<= idx`.
    pub fn prefix(&self, idx: usize) -> u32 {
        let mut i = idx + 1;
        let mut acc = 0;
        while i > 0 {
            acc += self.tree[i];
            i &= i - 1;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_counts() {
        let mut f = Fenwick::new(6);
        for &i in &[0, 2, 2, 5] {
            f.add(i);
        }
        let expect = [1, 1, 3, 3, 3, 4];
        for (i, &e) in expect.iter().enumerate() {
            assert_eq!(f.prefix(i), e);
        }
        f.reset(3);
        assert_eq!(f.prefix(2), 0);
        assert_eq!(f.len(), 3);
    }
}
