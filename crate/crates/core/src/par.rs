//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature the work is spread over the rayon pool;
//! without it, [`Parallelism::Parallel`] quietly runs sequentially. Output
//! order always matches input order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    #[default]
    Sequential,
    Parallel,
}

impl Parallelism {
    /// Whether work will actually run on more than one thread.
    pub fn is_effective(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// Maps `f` over `items`; each worker gets its own state from `init`.
pub fn map_with<T, S, R>(
    parallelism: Parallelism,
    items: &[T],
    init: impl Fn() -> S + Sync + Send,
    f: impl Fn(&mut S, &T) -> R + Sync + Send,
) -> Vec<R>
where
    T: Sync,
    R: Send,
{
    #[cfg(feature = "parallel")]
    if parallelism == Parallelism::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map_init(&init, |s, t| f(s, t)).collect();
    }
    let _ = parallelism;
    let mut state = init();
    items.iter().map(|t| f(&mut state, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order_in_both_modes() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = map_with(Parallelism::Sequential, &items, || 0u64, |_, &x| x * x);
        let par = map_with(Parallelism::Parallel, &items, || 0u64, |_, &x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[999], 999 * 999);
    }
}
