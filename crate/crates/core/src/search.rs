//! Small deterministic optimizers for the low-dimensional advisory search.
//!
//! The advisory objective is cheap, at most three-dimensional, and mildly
//! non-smooth at feasibility boundaries, so a coarse grid scan followed by
//! a bounded Nelder-Mead polish is both robust and fast. Infeasible points
//! evaluate to `f64::INFINITY`.

/// Uniform grid over the box `lo..hi`; returns the best point and value,
/// or `None` when every point is infeasible.
pub fn grid_min<F>(f: &F, lo: &[f64], hi: &[f64], points_per_axis: usize) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(lo.len(), hi.len());
    assert!(points_per_axis >= 2);
    let dims = lo.len();
    let n = points_per_axis;
    let coord = |axis: usize, idx: usize| {
        lo[axis] + (hi[axis] - lo[axis]) * idx as f64 / (n - 1) as f64
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut idx = vec![0usize; dims];
    let mut point = vec![0.0; dims];
    loop {
        for axis in 0..dims {
            point[axis] = coord(axis, idx[axis]);
        }
        let value = f(&point);
        if value.is_finite() && best.as_ref().is_none_or(|(_, b)| value < *b) {
            best = Some((point.clone(), value));
        }
        // Odometer increment.
        let mut axis = 0;
        loop {
            if axis == dims {
                return best;
            }
            idx[axis] += 1;
            if idx[axis] < n {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

/// Bounded Nelder-Mead descent from `start` with initial simplex spread
/// `step`. Points are clamped to the box before evaluation; the iteration
/// count is fixed, so results are bit-reproducible.
pub fn nelder_mead<F>(
    f: &F,
    start: &[f64],
    step: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_iters: usize,
) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let dims = start.len();
    let clamp = |p: &mut Vec<f64>| {
        for i in 0..dims {
            p[i] = p[i].clamp(lo[i], hi[i]);
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dims + 1);
    let mut p0 = start.to_vec();
    clamp(&mut p0);
    let f0 = f(&p0);
    simplex.push((p0, f0));
    for i in 0..dims {
        let mut p = start.to_vec();
        // Step away from the nearer bound so the vertex stays distinct.
        if p[i] + step[i] <= hi[i] {
            p[i] += step[i];
        } else {
            p[i] -= step[i];
        }
        clamp(&mut p);
        let v = f(&p);
        simplex.push((p, v));
    }

    const ALPHA: f64 = 1.0; // reflection
    const GAMMA: f64 = 2.0; // expansion
    const RHO: f64 = 0.5; // contraction
    const SIGMA: f64 = 0.5; // shrink

    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let spread = simplex[dims].1 - simplex[0].1;
        if spread.is_finite() && spread < 1e-12 {
            break;
        }
        let centroid: Vec<f64> = (0..dims)
            .map(|i| simplex[..dims].iter().map(|(p, _)| p[i]).sum::<f64>() / dims as f64)
            .collect();
        let worst = simplex[dims].clone();
        let mut reflected: Vec<f64> = (0..dims)
            .map(|i| centroid[i] + ALPHA * (centroid[i] - worst.0[i]))
            .collect();
        clamp(&mut reflected);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let mut expanded: Vec<f64> = (0..dims)
                .map(|i| centroid[i] + GAMMA * (reflected[i] - centroid[i]))
                .collect();
            clamp(&mut expanded);
            let fe = f(&expanded);
            simplex[dims] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
            continue;
        }
        if fr < simplex[dims - 1].1 {
            simplex[dims] = (reflected, fr);
            continue;
        }
        let mut contracted: Vec<f64> = (0..dims)
            .map(|i| centroid[i] + RHO * (worst.0[i] - centroid[i]))
            .collect();
        clamp(&mut contracted);
        let fc = f(&contracted);
        if fc < worst.1 {
            simplex[dims] = (contracted, fc);
            continue;
        }
        // Shrink toward the best vertex.
        let best = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            for i in 0..dims {
                entry.0[i] = best[i] + SIGMA * (entry.0[i] - best[i]);
            }
            entry.1 = f(&entry.0);
        }
    }
    simplex
        .into_iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap()
}

/// Golden-section search for the minimum of a unimodal `f` on `[a, b]`.
pub fn golden_section<F>(f: &F, mut a: f64, mut b: f64, max_evals: usize) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    const INV_PHI2: f64 = 0.381_966_011_250_105_1; // 2 - phi
    let mut x1 = a + INV_PHI2 * (b - a);
    let mut x2 = b - INV_PHI2 * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut evals = 2;
    while evals < max_evals && (b - a).abs() > 1e-12 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = a + INV_PHI2 * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = b - INV_PHI2 * (b - a);
            f2 = f(x2);
        }
        evals += 1;
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}
