//! Brute-force oracles, numerical checks and alignment metrics.
//!
//! Everything here is deliberately independent of the solver code paths: the
//! GW objective is summed over all four indices, gradients come from central
//! differences, and buffer sizes are observed through a tracking global
//! allocator rather than reported by the code under test.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::RefCell;

use ndarray::{Array1, Array2, ArrayView2};

use crate::costs::PointCloud;
use crate::gw_lr::GradientTriple;
use crate::lr_dykstra::LowRankCoupling;
use crate::{Error, Result};

/// Largest `n * m` accepted by [`gw_quadruple_sum`].
pub const QUADRUPLE_SUM_CAP: usize = 10_000;

/// `Σ_{i,j,i',j'} (A_{ii'} - B_{jj'})^2 P_{ij} P_{i'j'}` by a direct four-index loop.
pub fn gw_quadruple_sum(a_cost: ArrayView2<f64>, b_cost: ArrayView2<f64>, plan: ArrayView2<f64>) -> Result<f64> {
    let (n, m) = plan.dim();
    if n * m > QUADRUPLE_SUM_CAP {
        return Err(Error::Refused(format!(
            "quadruple-sum oracle limited to n*m <= {QUADRUPLE_SUM_CAP}, got {n}x{m}"
        )));
    }
    if a_cost.dim() != (n, n) || b_cost.dim() != (m, m) {
        return Err(Error::dim(
            "gw_quadruple_sum",
            format!("A {n}x{n}, B {m}x{m}"),
            format!("A {:?}, B {:?}", a_cost.dim(), b_cost.dim()),
        ));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let pij = plan[[i, j]];
            if pij == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for i2 in 0..n {
                for j2 in 0..m {
                    let diff = a_cost[[i, i2]] - b_cost[[j, j2]];
                    inner += diff * diff * plan[[i2, j2]];
                }
            }
            total += pij * inner;
        }
    }
    Ok(total)
}

/// `Σ x (log(x/y) - 1)` with `0 log 0 = 0`.
pub fn generalized_kl<'a, I>(x: I, y: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a f64>,
{
    let mut total = 0.0;
    let mut xs = x.into_iter();
    let mut ys = y.into_iter();
    loop {
        match (xs.next(), ys.next()) {
            (None, None) => return Ok(total),
            (Some(&xi), Some(&yi)) => {
                if xi < 0.0 || xi.is_nan() {
                    return Err(Error::Input(format!("generalized_kl: negative entry {xi} in x")));
                }
                if xi == 0.0 {
                    continue;
                }
                if !(yi > 0.0) {
                    return Err(Error::Input(format!("generalized_kl: non-positive entry {yi} in y")));
                }
                total += xi * ((xi / yi).ln() - 1.0);
            }
            _ => return Err(Error::Input("generalized_kl: shapes differ".into())),
        }
    }
}

/// Proper Bregman divergence of the negative entropy,
/// `Σ x log(x/y) - x + y`; zero iff `x == y`.
pub fn bregman_kl<'a, I>(x: I, y: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a f64> + Clone,
{
    let base = generalized_kl(x, y.clone())?;
    Ok(base + y.into_iter().sum::<f64>())
}

/// Central differences of `f` at `point`, one coordinate at a time.
pub fn finite_difference_gradient<F>(f: F, point: &LowRankCoupling, h: f64) -> Result<GradientTriple>
where
    F: Fn(&LowRankCoupling) -> f64,
{
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::Input(format!("finite-difference step must lie in [1e-7, 1e-4], got {h}")));
    }
    if !point.is_interior() {
        return Err(Error::Input("finite differences need an interior point".into()));
    }
    let mut p = point.clone();
    let diff = |p: &mut LowRankCoupling, get: &dyn Fn(&mut LowRankCoupling) -> &mut f64| -> Result<f64> {
        let orig = *get(p);
        *get(p) = orig + h;
        let fp = f(p);
        *get(p) = orig - h;
        let fm = f(p);
        *get(p) = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numerical {
                context: "finite_difference_gradient",
                detail: "objective is not finite near the point".into(),
            });
        }
        Ok((fp - fm) / (2.0 * h))
    };
    let (n, r) = point.q.dim();
    let m = point.r.nrows();
    let mut dq = Array2::zeros((n, r));
    let mut dr = Array2::zeros((m, r));
    let mut dg = Array1::zeros(r);
    for i in 0..n {
        for k in 0..r {
            dq[[i, k]] = diff(&mut p, &|p| &mut p.q[[i, k]])?;
        }
    }
    for j in 0..m {
        for k in 0..r {
            dr[[j, k]] = diff(&mut p, &|p| &mut p.r[[j, k]])?;
        }
    }
    for k in 0..r {
        dg[k] = diff(&mut p, &|p| &mut p.g[k])?;
    }
    Ok(GradientTriple { dq, dr, dg })
}

/// Fraction of samples closer than the true match, averaged over sources.
pub fn foscttm(x_aligned: &PointCloud, y: &PointCloud, true_match: &[usize]) -> Result<f64> {
    let n = x_aligned.len();
    if y.len() != n || true_match.len() != n {
        return Err(Error::dim(
            "foscttm",
            format!("{n} points and matches"),
            format!("{} targets, {} matches", y.len(), true_match.len()),
        ));
    }
    if x_aligned.dim() != y.dim() {
        return Err(Error::dim("foscttm", format!("dimension {}", x_aligned.dim()), format!("dimension {}", y.dim())));
    }
    if n < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, &t) in true_match.iter().enumerate() {
        if t >= n {
            return Err(Error::Input(format!("true_match[{i}] = {t} out of range")));
        }
        let d_true = crate::costs::squared_euclidean(x_aligned.point(i), y.point(t));
        let closer = (0..n)
            .filter(|&j| crate::costs::squared_euclidean(x_aligned.point(i), y.point(j)) < d_true)
            .count();
        total += closer as f64 / (n - 1) as f64;
    }
    Ok(total / n as f64)
}

// ---------------------------------------------------------------------------
// Allocation instrumentation
// ---------------------------------------------------------------------------

const MAX_EVENTS: usize = 32;

/// Buffer requests observed inside an [`allocation_scope`], in units of
/// `f64` elements (bytes / 8).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AllocationStats {
    pub peak_buffer_elements: usize,
    pub allocations: usize,
    /// Requests at or above the scope threshold, capped at 32 entries.
    pub large_buffer_events: Vec<(usize, &'static str)>,
    pub large_buffer_count: usize,
}

#[derive(Clone, Copy)]
struct ScopeState {
    active: bool,
    threshold_elements: usize,
    tag: &'static str,
    peak: usize,
    allocations: usize,
    large_count: usize,
    events: [(usize, &'static str); MAX_EVENTS],
}

const IDLE: ScopeState = ScopeState {
    active: false,
    threshold_elements: usize::MAX,
    tag: "",
    peak: 0,
    allocations: 0,
    large_count: 0,
    events: [(0, ""); MAX_EVENTS],
};

thread_local! {
    static SCOPE: RefCell<ScopeState> = const { RefCell::new(IDLE) };
}

fn record(bytes: usize) {
    let _ = SCOPE.try_with(|s| {
        if let Ok(mut s) = s.try_borrow_mut() {
            if !s.active {
                return;
            }
            let elements = bytes / 8;
            s.allocations += 1;
            s.peak = s.peak.max(elements);
            if elements >= s.threshold_elements {
                let idx = s.large_count;
                if idx < MAX_EVENTS {
                    let tag = s.tag;
                    s.events[idx] = (elements, tag);
                }
                s.large_count += 1;
            }
        }
    });
}

/// Global allocator that forwards to the system allocator and reports each
/// request to the active [`allocation_scope`] on the current thread.
///
/// Binaries and test targets opt in with
/// `#[global_allocator] static ALLOC: TrackingAllocator = TrackingAllocator;`.
pub struct TrackingAllocator;

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        record(layout.size());
        System.alloc(layout)
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        record(layout.size());
        System.alloc_zeroed(layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        record(new_size);
        System.realloc(ptr, layout, new_size)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }
}

/// Runs `run` while recording every buffer request made on this thread.
///
/// Requests of at least `threshold_elements` are listed as large-buffer
/// events under `tag`. Fails if [`TrackingAllocator`] is not installed, since
/// the stats would silently read zero.
pub fn allocation_scope<R>(
    tag: &'static str,
    threshold_elements: usize,
    run: impl FnOnce() -> R,
) -> Result<(R, AllocationStats)> {
    SCOPE.with(|s| {
        let mut s = s.borrow_mut();
        if s.active {
            return Err(Error::Input("allocation_scope does not nest".into()));
        }
        *s = ScopeState {
            active: true,
            threshold_elements,
            tag,
            ..IDLE
        };
        Ok(())
    })?;
    let probe: Vec<u64> = Vec::with_capacity(1);
    drop(std::hint::black_box(probe));
    let installed = SCOPE.with(|s| s.borrow().allocations > 0);
    let out = run();
    let state = SCOPE.with(|s| std::mem::replace(&mut *s.borrow_mut(), IDLE));
    if !installed {
        return Err(Error::Input(
            "allocation_scope needs TrackingAllocator installed as the global allocator".into(),
        ));
    }
    let kept = state.large_count.min(MAX_EVENTS);
    Ok((
        out,
        AllocationStats {
            peak_buffer_elements: state.peak,
            // The probe allocation is not part of the measured code.
            allocations: state.allocations - 1,
            large_buffer_events: state.events[..kept].to_vec(),
            large_buffer_count: state.large_count,
        },
    ))
}
