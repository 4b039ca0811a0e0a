//! Serial / parallel dispatch for the crate's data-parallel loops.
//!
//! Every helper here maps items independently and collects results in input
//! order, so the output never depends on how work is partitioned.

/// How data-parallel loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Serial,
    /// Uses rayon when the `parallel` feature is enabled; otherwise the same
    /// as [`Exec::Serial`].
    #[default]
    Parallel,
}

impl Exec {
    /// `true` when this mode will actually fan out to a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `(0..n).map(f).collect()`, possibly in parallel.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Applies `f(row_index, row)` to each `width`-sized chunk of `data`.
    pub fn for_each_row<F>(self, data: &mut [f64], width: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        if width == 0 {
            return;
        }
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            data.par_chunks_mut(width)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
        data.chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_preserves_order() {
        for exec in [Exec::Serial, Exec::Parallel] {
            let v = exec.map_range(1000, |i| i * 3);
            assert_eq!(v, (0..1000).map(|i| i * 3).collect::<Vec<_>>());
        }
    }

    #[test]
    fn rows_match_between_modes() {
        let mut a = vec![0.0; 300];
        let mut b = vec![0.0; 300];
        let f = |i: usize, row: &mut [f64]| {
            for (j, x) in row.iter_mut().enumerate() {
                *x = ((i * 7 + j) as f64).sin();
            }
        };
        Exec::Serial.for_each_row(&mut a, 3, f);
        Exec::Parallel.for_each_row(&mut b, 3, f);
        assert_eq!(a, b);
    }
}
