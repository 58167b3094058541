//! Weighted pool-adjacent-violators.
//!
//! Computes the weighted least-squares projection of a sequence onto the cone
//! of nondecreasing sequences. Adjacent entries whose fitted values are equal
//! end up in one pool, which is exactly the coalescence rule of the flow: two
//! neighbours that touch or cross are merged at their weighted mean.

/// A run `start..end` of input entries fitted by one common value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pool {
    pub start: usize,
    pub end: usize,
    pub weight: f64,
    pub value: f64,
}

/// Pools of the nondecreasing fit minimizing `sum w_i (z_i - v_i)^2`.
///
/// Adjacent pools are merged while the left value is `>=` the right one, so
/// the returned values are strictly increasing.
///
/// Panics if the slices differ in length or a weight is not positive.
pub fn isotonic_pools(values: &[f64], weights: &[f64]) -> Vec<Pool> {
    assert_eq!(
        values.len(),
        weights.len(),
        "values and weights differ in length"
    );
    let mut stack: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(values.len());
    for (i, (&v, &w)) in values.iter().zip(weights).enumerate() {
        assert!(w > 0.0, "weights must be positive");
        let mut cur = (i, i + 1, w, w * v);
        while let Some(&(start, _, pw, psum)) = stack.last() {
            if psum / pw < cur.3 / cur.2 {
                break;
            }
            stack.pop();
            cur = (start, cur.1, pw + cur.2, psum + cur.3);
        }
        stack.push(cur);
    }
    stack
        .into_iter()
        .map(|(start, end, weight, sum)| Pool {
            start,
            end,
            weight,
            value: sum / weight,
        })
        .collect()
}

/// Fitted value per input entry.
pub fn isotonic_fit(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for pool in isotonic_pools(values, weights) {
        out[pool.start..pool.end].fill(pool.value);
    }
    out
}
