//! Rounding properties of the scalar quantizer, plus agreement with an
//! exact round-half-even oracle.

mod common;

use common::oracle::Oracle;
use nnaccel::quantizer::{dequantize, to_fixed, FixedPointFormat};
use proptest::prelude::*;

const FORMATS: [(u32, u32); 3] = [(8, 4), (16, 8), (18, 10)];

fn fmt(i: usize) -> FixedPointFormat {
    FixedPointFormat::new(FORMATS[i].0, FORMATS[i].1).unwrap()
}

fn range(f: FixedPointFormat) -> (f64, f64) {
    (f.min_code() as f64 * f.ulp(), f.max_code() as f64 * f.ulp())
}

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 100_000,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// Reals inside the representable range of format `i`, mixing uniform
/// draws with exact grid points and midpoints.
fn inside(i: usize) -> impl Strategy<Value = f64> {
    let f = fmt(i);
    let (lo, hi) = range(f);
    let ulp = f.ulp();
    prop_oneof![
        lo..=hi,
        (f.min_code()..=f.max_code()).prop_map(move |c| c as f64 * ulp),
        (f.min_code()..f.max_code()).prop_map(move |c| (c as f64 + 0.5) * ulp),
    ]
}

fn any_real(i: usize) -> impl Strategy<Value = f64> {
    let (lo, hi) = range(fmt(i));
    prop_oneof![4 => inside(i), 1 => (4.0 * lo)..(4.0 * hi)]
}

macro_rules! suite {
    ($name:ident, $i:expr) => {
        mod $name {
            use super::*;

            proptest! {
                #![proptest_config(config())]

                #[test]
                fn half_ulp_roundtrip(x in inside($i)) {
                    let f = fmt($i);
                    let back = dequantize(to_fixed(x, f).unwrap() as i64, f).unwrap();
                    prop_assert!((x - back).abs() <= f.ulp() / 2.0);
                }

                #[test]
                fn monotone(a in any_real($i), b in any_real($i)) {
                    let f = fmt($i);
                    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                    prop_assert!(to_fixed(lo, f).unwrap() <= to_fixed(hi, f).unwrap());
                }

                #[test]
                fn idempotent(x in any_real($i)) {
                    let f = fmt($i);
                    let c = to_fixed(x, f).unwrap();
                    let again = to_fixed(dequantize(c as i64, f).unwrap(), f).unwrap();
                    prop_assert_eq!(c, again);
                }

                #[test]
                fn matches_exact_rounding(x in any_real($i)) {
                    let f = fmt($i);
                    let o = Oracle::new(f);
                    let want = o.code(&o.round_half_even(&Oracle::from_f64(x)));
                    prop_assert_eq!(to_fixed(x, f).unwrap() as i64, want);
                }
            }
        }
    };
}

suite!(q8_4, 0);
suite!(q16_8, 1);
suite!(q18_10, 2);

#[test]
fn ties_go_to_even() {
    let f = FixedPointFormat::new(16, 8).unwrap();
    assert_eq!(to_fixed(0.5 / 256.0, f).unwrap(), 0);
    assert_eq!(to_fixed(1.5 / 256.0, f).unwrap(), 2);
    assert_eq!(to_fixed(-1.5 / 256.0, f).unwrap(), -2);
    assert_eq!(to_fixed(1000.0, f).unwrap(), f.max_code());
    assert_eq!(to_fixed(-1000.0, f).unwrap(), f.min_code());
}
