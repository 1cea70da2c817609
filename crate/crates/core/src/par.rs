use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

/// Runs `f(0..n)` on up to `workers` threads. Stops handing out indices after
/// the first error; returns whatever finished, in index order, plus that
/// error.
pub(crate) fn map_indexed<R, E, F>(n: usize, workers: usize, f: F) -> (Vec<Option<R>>, Option<E>)
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync,
{
    let slots: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let failure: Mutex<Option<E>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                match f(i) {
                    Ok(r) => *slots[i].lock().expect("slot lock poisoned") = Some(r),
                    Err(e) => {
                        stop.store(true, Ordering::SeqCst);
                        failure.lock().expect("failure lock poisoned").get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    let results = slots.into_iter().map(|s| s.into_inner().expect("slot lock poisoned")).collect();
    (results, failure.into_inner().expect("failure lock poisoned"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_are_in_index_order() {
        let (r, e) = map_indexed::<_, (), _>(50, 4, |i| Ok(i * 2));
        assert!(e.is_none());
        assert_eq!(r.into_iter().map(Option::unwrap).collect::<Vec<_>>(), (0..50).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn first_error_stops_single_worker() {
        let (r, e) = map_indexed(10, 1, |i| if i == 3 { Err(i) } else { Ok(i) });
        assert_eq!(e, Some(3));
        assert_eq!(r.iter().filter(|x| x.is_some()).count(), 3);
    }
}
