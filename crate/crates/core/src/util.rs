//! Small shared helpers.

/// Seventeen significant digits in scientific notation; parses back to the
/// same `f64` and does not depend on locale.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Energy distance `2 E|X - Y| - E|X - X'| - E|Y - Y'|` between two point
/// sets (`n x d` and `m x d`, row-major). Within-set means exclude the
/// diagonal.
pub fn energy_distance(x: &[f64], y: &[f64], d: usize) -> f64 {
    assert!(d > 0 && x.len() % d == 0 && y.len() % d == 0);
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
    };
    let within = |v: &[f64]| -> f64 {
        let n = v.len() / d;
        if n < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += dist(&v[i * d..(i + 1) * d], &v[j * d..(j + 1) * d]);
            }
        }
        2.0 * s / (n * (n - 1)) as f64
    };
    let (n, m) = (x.len() / d, y.len() / d);
    let mut cross = 0.0;
    for a in x.chunks(d) {
        for b in y.chunks(d) {
            cross += dist(a, b);
        }
    }
    2.0 * cross / (n * m) as f64 - within(x) - within(y)
}

/// Run `job(index, workspace)` for every index, split across `workers`
/// threads in contiguous blocks, and return results in index order.
pub fn run_indexed<T, W, M, F>(n: usize, workers: usize, make: M, job: F) -> Vec<T>
where
    T: Send,
    M: Fn() -> W + Sync,
    F: Fn(usize, &mut W) -> T + Sync,
{
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        let mut ws = make();
        return (0..n).map(|i| job(i, &mut ws)).collect();
    }
    let chunk = n.div_ceil(workers);
    std::thread::scope(|sc| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (job, make) = (&job, &make);
                sc.spawn(move || {
                    let mut ws = make();
                    (w * chunk..((w + 1) * chunk).min(n))
                        .map(|i| job(i, &mut ws))
                        .collect::<Vec<T>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
