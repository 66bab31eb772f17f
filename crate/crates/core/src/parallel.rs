//! Order-preserving fan-out over scoped threads.

/// Applies `f` to every item using up to `workers` threads and returns the
/// results in input order. One worker runs inline.
pub fn map_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| s.spawn(move || part.iter().enumerate().map(|(i, x)| f(c * chunk + i, x)).collect::<Vec<R>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::map_ordered;

    #[test]
    fn keeps_order() {
        let xs: Vec<usize> = (0..37).collect();
        for w in [1, 2, 5, 64] {
            let out = map_ordered(&xs, w, |i, x| (i, x * 2));
            assert_eq!(out, xs.iter().map(|&x| (x, x * 2)).collect::<Vec<_>>());
        }
        assert!(map_ordered(&[] as &[u8], 3, |_, x| *x).is_empty());
    }
}
