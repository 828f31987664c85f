use crate::scalar::streaming_fence;

/// Below this many output elements a kernel runs on the calling thread.
const MIN_PARALLEL_ELEMS: usize = 1 << 14;

/// Split `data` (rows of `row_len` elements) into at most `workers`
/// contiguous row blocks and call `f(first_row, block)` on each, one thread
/// per block. Every output row is written by exactly one worker, so results
/// never depend on the worker count.
pub(crate) fn for_row_blocks<T, F>(data: &mut [T], row_len: usize, workers: usize, streaming: bool, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    let rows = data.len().checked_div(row_len).unwrap_or(0);
    let workers = workers.max(1).min(rows.max(1));
    let run = |first: usize, block: &mut [T]| {
        f(first, block);
        if streaming {
            streaming_fence();
        }
    };
    if workers == 1 || data.len() < MIN_PARALLEL_ELEMS {
        run(0, data);
        return;
    }
    let per = rows.div_ceil(workers);
    std::thread::scope(|s| {
        let mut blocks = data.chunks_mut(per * row_len).enumerate();
        let (_, head) = blocks.next().expect("at least one block");
        for (b, block) in blocks {
            let run = &run;
            s.spawn(move || run(b * per, block));
        }
        run(0, head);
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_row_written_once() {
        for workers in [1, 2, 3, 7, 64] {
            let mut data = vec![0u32; 3 * 20_000];
            for_row_blocks(&mut data, 3, workers, false, |first, block| {
                for (k, row) in block.chunks_mut(3).enumerate() {
                    for v in row {
                        *v += (first + k) as u32;
                    }
                }
            });
            for (r, row) in data.chunks(3).enumerate() {
                assert!(row.iter().all(|&v| v == r as u32));
            }
        }
    }
}
