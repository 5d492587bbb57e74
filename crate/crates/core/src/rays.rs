//! Boolean algebra of interval lists along a ray `{x + ρu : ρ ≥ 0}`.
//!
//! A [`Spans`] value is a sorted list of disjoint open intervals of `[0, ∞)`;
//! the upper end may be `f64::INFINITY`.

use smallvec::SmallVec;

pub type Spans = SmallVec<[(f64, f64); 4]>;

pub fn empty() -> Spans {
    Spans::new()
}

pub fn full() -> Spans {
    let mut s = Spans::new();
    s.push((0.0, f64::INFINITY));
    s
}

/// `{ρ ≥ 0 : c0 + c1 ρ > 0}`.
pub fn halfline(c0: f64, c1: f64) -> Spans {
    let mut s = Spans::new();
    if c1 == 0.0 {
        if c0 > 0.0 {
            s.push((0.0, f64::INFINITY));
        }
    } else {
        let root = -c0 / c1;
        if c1 > 0.0 {
            s.push((root.max(0.0), f64::INFINITY));
        } else if root > 0.0 {
            s.push((0.0, root));
        }
    }
    s
}

/// `{ρ ≥ 0 : lo < ρ < hi}`.
pub fn between(lo: f64, hi: f64) -> Spans {
    let mut s = Spans::new();
    let lo = lo.max(0.0);
    if hi > lo {
        s.push((lo, hi));
    }
    s
}

pub fn complement(a: &Spans) -> Spans {
    let mut out = Spans::new();
    let mut cursor = 0.0;
    for &(lo, hi) in a {
        if lo > cursor {
            out.push((cursor, lo));
        }
        cursor = hi;
    }
    if cursor < f64::INFINITY {
        out.push((cursor, f64::INFINITY));
    }
    out
}

pub fn intersect(a: &Spans, b: &Spans) -> Spans {
    let mut out = Spans::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            out.push((lo, hi));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

pub fn union(a: &Spans, b: &Spans) -> Spans {
    let mut all: SmallVec<[(f64, f64); 8]> = a.iter().chain(b.iter()).copied().collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out = Spans::new();
    for (lo, hi) in all {
        match out.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

/// Total length of the spans (infinite if any is unbounded).
pub fn length(a: &Spans) -> f64 {
    a.iter().map(|(lo, hi)| hi - lo).sum()
}
