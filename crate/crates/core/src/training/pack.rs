use crate::error::{Error, Result};

/// Greedy in-order packing of examples into batches whose summed lengths
/// stay within `budget`. Returns example indices per batch.
pub fn token_batch_pack(lengths: impl IntoIterator<Item = usize>, budget: usize) -> Result<Vec<Vec<usize>>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0usize;
    for (i, len) in lengths.into_iter().enumerate() {
        if len > budget {
            return Err(Error::InvalidArgument(format!(
                "example {i} has {len} tokens, more than the batch budget of {budget}"
            )));
        }
        if used + len > budget && !current.is_empty() {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += len;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Streaming form of [`token_batch_pack`]: pulls items from `source` and
/// yields greedy in-order batches whose summed `len` stays within `budget`.
pub struct TokenBatcher<I: Iterator, F> {
    source: I,
    len: F,
    budget: usize,
    pending: Option<I::Item>,
}

impl<I: Iterator, F: Fn(&I::Item) -> usize> TokenBatcher<I, F> {
    pub fn new(source: I, budget: usize, len: F) -> Self {
        TokenBatcher {
            source,
            len,
            budget,
            pending: None,
        }
    }
}

impl<I: Iterator, F: Fn(&I::Item) -> usize> Iterator for TokenBatcher<I, F> {
    type Item = Result<Vec<I::Item>>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut batch = Vec::new();
        let mut used = 0;
        while let Some(item) = self.pending.take().or_else(|| self.source.next()) {
            let n = (self.len)(&item);
            if used + n > self.budget && !batch.is_empty() {
                self.pending = Some(item);
                break;
            }
            if n > self.budget {
                return Some(Err(Error::InvalidArgument(format!(
                    "example has {n} tokens, more than the batch budget of {}",
                    self.budget
                ))));
            }
            used += n;
            batch.push(item);
        }
        (!batch.is_empty()).then_some(Ok(batch))
    }
}
