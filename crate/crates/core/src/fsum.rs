//! Correctly rounded floating-point summation (Shewchuk's partials).
//!
//! Gradient contributions are accumulated through this so the result does not
//! depend on the order consumers are visited in.

/// Sum of `values` rounded once to the nearest `f64`. NaN and infinities
/// follow IEEE semantics (`inf + -inf = NaN`).
pub fn fsum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    let mut special = 0.0f64;
    let mut overflow = false;
    for mut x in values {
        if !x.is_finite() {
            special += x;
            continue;
        }
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            if hi.is_infinite() {
                overflow = true;
                special += hi;
                x = 0.0;
                break;
            }
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    if special != 0.0 || special.is_nan() || overflow {
        return special;
    }
    let Some(mut hi) = partials.pop() else {
        return 0.0;
    };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    // Round-half-even correction when the remaining partials push past a tie.
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cancels_exactly() {
        assert_eq!(fsum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(fsum([0.1, 0.2, -0.1, -0.2]), 0.0);
        assert_eq!(fsum([]), 0.0);
    }

    #[test]
    fn order_independent() {
        let v = [0.1, 1e-17, 3.3, -7.25e10, 1e-3, 7.25e10];
        let mut r = v;
        r.reverse();
        assert_eq!(fsum(v), fsum(r));
        assert_eq!(fsum(v), 3.401);
    }

    #[test]
    fn specials() {
        assert!(fsum([f64::INFINITY, f64::NEG_INFINITY]).is_nan());
        assert_eq!(fsum([f64::INFINITY, 1.0]), f64::INFINITY);
        assert!(fsum([f64::NAN, 1.0]).is_nan());
    }
}
