//! Dense kernels with an optional rayon backend.
//!
//! Every kernel partitions its output into independent pieces and computes
//! each piece with a fixed sequential accumulation order, so the sequential
//! and parallel paths produce bitwise-identical results. Reductions that
//! collapse many values into one are always sequential.
//!
//! Without the `parallel` feature [`Exec::Parallel`] silently runs the
//! sequential path.

use std::sync::atomic::{AtomicU8, Ordering};

/// Execution strategy for the dense kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(if cfg!(feature = "parallel") { 1 } else { 0 });

/// Process-wide strategy used by the autodiff engine and metrics.
pub fn mode() -> Exec {
    match MODE.load(Ordering::Relaxed) {
        0 => Exec::Sequential,
        _ => Exec::Parallel,
    }
}

pub fn set_mode(exec: Exec) {
    MODE.store(
        match exec {
            Exec::Sequential => 0,
            Exec::Parallel => 1,
        },
        Ordering::Relaxed,
    );
}

/// Below this many multiply-adds the parallel path is not worth the dispatch.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 1 << 15;
const COL_BLOCK: usize = 64;

#[cfg(feature = "parallel")]
fn use_parallel(exec: Exec, work: usize) -> bool {
    exec == Exec::Parallel && work >= PAR_THRESHOLD
}

/// Applies `f(index, chunk)` to consecutive `chunk`-sized pieces of `out`.
pub fn for_each_chunk<F>(exec: Exec, work: usize, out: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if use_parallel(exec, work) {
        use rayon::prelude::*;
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = (exec, work);
    out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Maps `0..n` through `f`, preserving order.
pub fn map_range<T, F>(exec: Exec, work: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if use_parallel(exec, work) {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = (exec, work);
    (0..n).map(f).collect()
}

/// `c[m×n] = a[m×k] · b[k×n]`, all row-major.
pub fn matmul(exec: Exec, a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 {
        return c;
    }
    // One task per (row, column block); each accumulates over k in order.
    let blocks = n.div_ceil(COL_BLOCK);
    let mut tiles = vec![0.0; m * blocks * COL_BLOCK];
    for_each_chunk(exec, m * k * n, &mut tiles, COL_BLOCK, |t, tile| {
        let row = t / blocks;
        let j0 = (t % blocks) * COL_BLOCK;
        let j1 = (j0 + COL_BLOCK).min(n);
        let width = j1 - j0;
        let acc = &mut tile[..width];
        let a_row = &a[row * k..(row + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * n + j0..kk * n + j1];
            for (o, &bv) in acc.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    for row in 0..m {
        for blk in 0..blocks {
            let j0 = blk * COL_BLOCK;
            let j1 = (j0 + COL_BLOCK).min(n);
            let src = &tiles[(row * blocks + blk) * COL_BLOCK..][..j1 - j0];
            c[row * n + j0..row * n + j1].copy_from_slice(src);
        }
    }
    c
}

/// `c[m×n] = a[m×k] · bᵀ` where `b` is `n×k`.
pub fn matmul_a_bt(exec: Exec, a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0; m * n];
    if n == 0 {
        return c;
    }
    for_each_chunk(exec, m * k * n, &mut c, n, |row, out| {
        let a_row = &a[row * k..(row + 1) * k];
        for (j, o) in out.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            *o = dot(a_row, b_row);
        }
    });
    c
}

/// `c[k×n] = aᵀ · b` where `a` is `m×k` and `b` is `m×n`.
pub fn matmul_at_b(exec: Exec, a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut c = vec![0.0; k * n];
    if n == 0 {
        return c;
    }
    for_each_chunk(exec, m * k * n, &mut c, n, |i, out| {
        for r in 0..m {
            let av = a[r * k + i];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[r * n..(r + 1) * n];
            for (o, &bv) in out.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    c
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
