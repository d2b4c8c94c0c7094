//! Small dense-vector helpers over `f64` slices.

pub fn norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |acc, v| acc + v * v).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += s * x`
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// Radial saturation: `x` if `|x| <= r`, otherwise `r x / |x|`.
pub fn sat(x: &[f64], r: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    sat_in_place(&mut out, r);
    out
}

/// In-place radial saturation. Returns `true` when the vector was clipped.
pub fn sat_in_place(x: &mut [f64], r: f64) -> bool {
    let n = norm(x);
    if n <= r {
        return false;
    }
    let k = r / n;
    for v in x.iter_mut() {
        *v *= k;
    }
    true
}

/// Closest point of the closed box `[lo, hi]` to `p`.
pub fn clamp_to_box(p: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    p.iter()
        .zip(lo.iter().zip(hi))
        .map(|(x, (l, h))| x.clamp(*l, *h))
        .collect()
}

/// Euclidean distance from `p` to the closed box `[lo, hi]`.
pub fn box_distance(p: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    p.iter()
        .zip(lo.iter().zip(hi))
        .map(|(x, (l, h))| {
            let d = if x < l {
                l - x
            } else if x > h {
                x - h
            } else {
                0.0
            };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}
