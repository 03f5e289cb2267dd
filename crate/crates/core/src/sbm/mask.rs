use crate::netgen::Adjacency;

/// Dyads available for fitting. The diagonal is never observed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrainingMask {
    n: usize,
    cells: Vec<bool>,
}

impl TrainingMask {
    /// Every off-diagonal dyad observed.
    pub fn full(n: usize) -> Self {
        Self::from_fn(n, |_, _| true)
    }

    pub fn from_fn(n: usize, mut observed: impl FnMut(usize, usize) -> bool) -> Self {
        let mut cells = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                cells[i * n + j] = i != j && observed(i, j);
            }
        }
        Self { n, cells }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn observed(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j]
    }

    pub fn observed_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    /// Off-diagonal dyads that are held out.
    pub fn held_out(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| {
            (0..n)
                .filter(move |&j| i != j && !self.observed(i, j))
                .map(move |j| (i, j))
        })
    }

    /// Mean of the observed entries of `y`, or 0 when nothing is observed.
    pub fn training_density(&self, y: &Adjacency) -> f64 {
        let (mut ties, mut total) = (0usize, 0usize);
        for i in 0..self.n {
            for j in 0..self.n {
                if self.observed(i, j) {
                    total += 1;
                    ties += usize::from(y.get(i, j));
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            ties as f64 / total as f64
        }
    }
}
