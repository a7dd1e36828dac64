use std::collections::{BTreeMap, VecDeque};
use std::sync::{mpsc, Mutex};

/// Runs `work` over `tasks` on per-group worker pools and hands results to
/// `sink` in task order on the calling thread.
///
/// Group `g` gets `workers[g]` threads (at least one); tasks of a group are
/// only ever picked up by that group's workers.
pub(crate) fn run_ordered<T, R, G, W, S>(
    tasks: &[T],
    group_of: G,
    workers: &[usize],
    work: W,
    mut sink: S,
) where
    T: Sync,
    R: Send,
    G: Fn(&T) -> usize,
    W: Fn(&T) -> R + Sync,
    S: FnMut(usize, R),
{
    let queues: Vec<Mutex<VecDeque<usize>>> = workers
        .iter()
        .map(|_| Mutex::new(VecDeque::new()))
        .collect();
    for (i, t) in tasks.iter().enumerate() {
        queues[group_of(t)].lock().unwrap().push_back(i);
    }
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, R)>();
        for (g, &n) in workers.iter().enumerate() {
            let pending = queues[g].lock().unwrap().len();
            for _ in 0..n.max(1).min(pending) {
                let tx = tx.clone();
                let queue = &queues[g];
                let work = &work;
                scope.spawn(move || loop {
                    let Some(i) = queue.lock().unwrap().pop_front() else {
                        break;
                    };
                    if tx.send((i, work(&tasks[i]))).is_err() {
                        break;
                    }
                });
            }
        }
        drop(tx);
        let mut buffered = BTreeMap::new();
        let mut next = 0usize;
        for (i, r) in rx {
            buffered.insert(i, r);
            while let Some(r) = buffered.remove(&next) {
                sink(next, r);
                next += 1;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_arrive_in_task_order() {
        let tasks: Vec<(usize, u64)> = (0..40).map(|i| (i % 3, (i * 7 % 5) as u64)).collect();
        let mut seen = Vec::new();
        run_ordered(
            &tasks,
            |t| t.0,
            &[4, 1, 2],
            |t| {
                std::thread::sleep(std::time::Duration::from_millis(t.1));
                t.1 * 10
            },
            |i, r| seen.push((i, r)),
        );
        let expected: Vec<_> = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (i, t.1 * 10))
            .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn empty_groups_are_fine() {
        let tasks: Vec<usize> = vec![0, 0];
        let mut n = 0;
        run_ordered(&tasks, |&g| g, &[1, 3], |_| (), |_, _| n += 1);
        assert_eq!(n, 2);
    }
}
