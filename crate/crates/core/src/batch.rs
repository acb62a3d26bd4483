//! Decoding many independent inputs, in parallel when the `parallel` feature
//! is enabled. Results always come back in input order.

use crate::beam::{beam_search, BeamConfig, CandidateSet};
use crate::error::Result;
use crate::scoring::Scorer;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Sequential,
    /// Worker threads; 0 uses one per available core.
    Parallel(usize),
}

impl Execution {
    pub fn from_workers(workers: usize) -> Self {
        if workers == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel(workers)
        }
    }
}

/// `f(i, &items[i])` for every item, gathered by index.
pub fn map_indexed<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter().enumerate().map(|(i, x)| f(i, x)).collect(),
        Execution::Parallel(workers) => parallel_map(items, workers, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let run = || items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect();
    if workers == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(items: &[T], _workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Unguided beam search over every source line.
pub fn decode_batch<S: AsRef<str> + Sync>(
    scorer: &dyn Scorer,
    sources: &[S],
    config: &BeamConfig,
    exec: Execution,
) -> Vec<Result<CandidateSet>> {
    map_indexed(sources, exec, |_, s| beam_search(scorer, s.as_ref(), config, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{NGramConfig, NGramModel};
    use crate::text::{GenerationOrder, ModelTextSpec, TokenizationScheme, Vocabulary};

    #[test]
    fn order_is_preserved() {
        let items: Vec<usize> = (0..100).collect();
        let seq = map_indexed(&items, Execution::Sequential, |i, x| i * 1000 + x);
        let par = map_indexed(&items, Execution::Parallel(4), |i, x| i * 1000 + x);
        assert_eq!(seq, par);
        assert_eq!(Execution::from_workers(1), Execution::Sequential);
    }

    #[test]
    fn parallel_decode_matches_sequential() {
        let corpus = ["a b c", "a c b", "b a c a"];
        let scheme = TokenizationScheme::whitespace();
        let vocab = Vocabulary::build(&corpus, &scheme, None).unwrap();
        let spec = ModelTextSpec::new(vocab, scheme, GenerationOrder::LeftToRight);
        let cfg = NGramConfig { copy_bonus: 0.5, ..Default::default() };
        let model = NGramModel::train(&corpus, spec, cfg).unwrap();
        let sources = ["a", "b c", "c", "a b", "b"];
        let config = BeamConfig { beam_size: 3, max_len: 6, ..Default::default() };
        let a = decode_batch(&model, &sources, &config, Execution::Sequential);
        let b = decode_batch(&model, &sources, &config, Execution::Parallel(3));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.as_ref().unwrap(), y.as_ref().unwrap());
        }
    }
}
