//! Wall-clock timing of solver runs.

use std::time::Instant;

/// Median of `samples`; the mean of the two middle values for even counts.
///
/// # Panics
///
/// If `samples` is empty.
pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "median of no samples");
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Runs `run` `repetitions` times and returns the median wall-clock time in
/// seconds together with the output of the last run. The first failure
/// aborts and is returned.
pub fn time_run<T, E>(
    repetitions: usize,
    mut run: impl FnMut() -> Result<T, E>,
) -> Result<(f64, T), E> {
    assert!(repetitions >= 1, "repetitions >= 1");
    let mut times = Vec::with_capacity(repetitions);
    let mut last = None;
    for _ in 0..repetitions {
        let start = Instant::now();
        let out = run()?;
        times.push(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    Ok((median(&times), last.expect("at least one repetition")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn sleep_stub_is_measured() {
        let d = 0.02;
        let (t, ()) = time_run(3, || {
            std::thread::sleep(Duration::from_secs_f64(d));
            Ok::<_, ()>(())
        })
        .unwrap();
        assert!(t >= d && t <= 1.5 * d, "{t}");
    }

    #[test]
    fn single_repetition_is_the_measurement() {
        let mut calls = 0;
        let (t, out) = time_run(1, || {
            calls += 1;
            std::thread::sleep(Duration::from_millis(5));
            Ok::<_, ()>(calls)
        })
        .unwrap();
        assert_eq!(out, 1);
        assert!(t >= 0.005);
    }

    #[test]
    fn one_outlier_barely_moves_the_median() {
        let d = 0.01;
        let mut k = 0;
        let (t, _) = time_run(5, || {
            k += 1;
            let f = if k == 3 { 10.0 } else { 1.0 };
            std::thread::sleep(Duration::from_secs_f64(f * d));
            Ok::<_, ()>(())
        })
        .unwrap();
        assert!((t - d).abs() <= 0.2 * d, "{t}");
    }

    #[test]
    fn failures_propagate() {
        let mut k = 0;
        let r = time_run(3, || {
            k += 1;
            if k == 2 {
                Err("boom")
            } else {
                Ok(())
            }
        });
        assert_eq!(r.unwrap_err(), "boom");
        assert_eq!(k, 2);
    }
}
