//! Data-parallel execution over independent work items (bins, trials).
//!
//! With the `parallel` feature (default) [`Exec::Parallel`] maps through
//! rayon; without it every variant runs sequentially. Results are always
//! returned in index order, so output is identical across both modes.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// `Parallel` when the feature is compiled in and `threads != 1`.
    pub fn from_threads(threads: usize) -> Self {
        if threads == 1 || !cfg!(feature = "parallel") {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    pub fn try_map<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let seq = Exec::Sequential.map(1000, |i| i * i);
        let par = Exec::Parallel.map(1000, |i| i * i);
        assert_eq!(seq, par);
    }

    #[test]
    fn try_map_reports_an_error() {
        let r: Result<Vec<usize>, usize> =
            Exec::Parallel.try_map(10, |i| if i == 7 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(7));
    }

    #[test]
    fn single_thread_is_sequential() {
        assert_eq!(Exec::from_threads(1), Exec::Sequential);
    }
}
