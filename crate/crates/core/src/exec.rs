//! Data-parallel execution switch.
//!
//! Batch operations (encoding, search, evaluation, per-triplet loss) take an
//! [`Exec`] and fan out over rayon when the `parallel` feature is enabled.
//! Results are always collected in index order, so both modes produce
//! bit-identical output.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Whether this build can actually run work in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    /// `(0..n).map(f)` collected in order, possibly on the rayon pool.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Fallible variant of [`Exec::map_range`]; the first error by index wins.
    pub fn try_map_range<R, E, F>(self, n: usize, f: F) -> Result<Vec<R>, E>
    where
        R: Send,
        E: Send,
        F: Fn(usize) -> Result<R, E> + Sync + Send,
    {
        self.map_range(n, f).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let seq = Exec::Sequential.map_range(1000, |i| (i * i) as f64 / 7.0);
        let par = Exec::Parallel.map_range(1000, |i| (i * i) as f64 / 7.0);
        assert_eq!(seq, par);
        assert_eq!(seq[10], 100.0 / 7.0);
    }

    #[test]
    fn try_map_reports_first_error() {
        let r: Result<Vec<usize>, usize> =
            Exec::Parallel.try_map_range(100, |i| if i % 30 == 29 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(29));
    }
}
